// cds_calib: command-line front end for detection, adaptation and the
// end-to-end experiment.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "cds/pipeline.hpp"
#include "cds/theory.hpp"

namespace {

using nlohmann::json;

struct KeyFlag {
  std::string key;
  std::string help;
  bool is_switch = false;
};

const std::vector<KeyFlag>& key_flags() {
  static const std::vector<KeyFlag> flags = {
      {"dataset", "dataset CSV (header row, optional timestamp column)"},
      {"latents", "latent feature file (binary or CSV)"},
      {"lookback", "history length L"},
      {"horizon", "forecast length T"},
      {"split", "train,val,test ratios"},
      {"threshold", "log10 delta threshold for strong CDS"},
      {"grid_preset", "etth1|etth2|ettm1|ettm2|weather|electricity|traffic|illness"},
      {"lambda_t", "comma-separated lambda_T grid"},
      {"lambda_p", "comma-separated lambda_P grid"},
      {"lambda_n", "comma-separated lambda_N grid"},
      {"lr_ratio", "comma-separated lr-ratio grid"},
      {"train_lr", "training learning rate the ratios multiply"},
      {"ridge", "ridge penalty for the baseline fit"},
      {"seed", "recorded seed"},
      {"output_dir", "report directory"},
      {"period", "override the detected period (or 'auto')"},
      {"train_only_pool", "restrict D_ctx candidates to the training split", true},
      {"circular_phase", "measure phase difference circularly", true},
      {"batch_size", "adaptation batch size (0 = full batch)"},
      {"fallback_policy", "base|error"},
      {"segments", "number of temporal segments for delta_T"},
  };
  return flags;
}

std::string dashed(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return "--" + key;
}

// Registers `--key` options on `app` for the named config keys; values are
// applied to a config after parsing.
class ConfigFlags {
 public:
  void add(CLI::App* app, const std::vector<std::string>& keys) {
    for (const auto& flag : key_flags()) {
      if (std::find(keys.begin(), keys.end(), flag.key) == keys.end()) continue;
      if (flag.is_switch) {
        app->add_flag(dashed(flag.key), switches_[flag.key], flag.help);
      } else {
        app->add_option(dashed(flag.key), values_[flag.key], flag.help);
      }
    }
  }
  void add_all(CLI::App* app) {
    std::vector<std::string> keys;
    for (const auto& flag : key_flags()) keys.push_back(flag.key);
    add(app, keys);
  }
  void apply(cds::ExperimentConfig& config) const {
    for (const auto& [key, value] : values_) {
      if (!value.empty()) config.set(key, value);
    }
    for (const auto& [key, on] : switches_) {
      if (on) config.set(key, "true");
    }
  }

 private:
  std::map<std::string, std::string> values_;
  std::map<std::string, bool> switches_;
};

json detector_record(const cds::DetectorReport& r, double threshold) {
  return {{"delta", r.delta},
          {"log10_delta", r.log10_delta},
          {"kind", cds::context_kind_name(r.kind)},
          {"K", r.num_contexts},
          {"dropped_contexts", r.dropped_contexts},
          {"classification", r.strong(threshold) ? "strong" : "weak"}};
}

void print_detector(const cds::DetectorReport& r, double threshold) {
  std::cout << std::setprecision(6);
  std::cout << context_kind_name(r.kind) << ": K=" << r.num_contexts << " delta=" << r.delta
            << " log10=" << r.log10_delta << " ("
            << (r.strong(threshold) ? "strong" : "weak") << " at " << threshold << ")\n";
  std::cout << "  marginal mean=" << r.marginal.mean << " std=" << r.marginal.std
            << " n=" << r.marginal.count << '\n';
  if (!r.dropped_contexts.empty()) {
    std::cout << "  dropped contexts:";
    for (auto c : r.dropped_contexts) std::cout << ' ' << c;
    std::cout << '\n';
  }
}

int detect_period_cmd(const cds::ExperimentConfig& config) {
  if (config.dataset_path.empty()) {
    throw cds::Error(cds::ErrorCode::kInvalidArgument, "--dataset is required");
  }
  const auto raw = cds::read_csv(config.dataset_path);
  const auto prepared =
      cds::prepare_series(raw, cds::SplitSpec(config.split[0], config.split[1], config.split[2]));
  const auto est = cds::dominant_period(prepared.standardized->slice(0, prepared.n_train));
  std::cout << "T*=" << est.period << " k=" << est.dominant_frequency_index
            << " amplitude=" << std::setprecision(10) << est.aggregate_amplitude << '\n';
  return 0;
}

int detect_cmd(const cds::ExperimentConfig& config) {
  const auto wb = cds::build_workbench(config);
  const auto scores = cds::score_cds(wb, config.num_segments);
  std::cout << "period T*=" << wb.period.period << " over " << wb.ranges.train_end
            << " training samples\n";
  print_detector(scores.phase, config.threshold);
  print_detector(scores.segment, config.threshold);
  const json record = {{"period", wb.period.period},
                       {"threshold", config.threshold},
                       {"delta_P", detector_record(scores.phase, config.threshold)},
                       {"delta_T", detector_record(scores.segment, config.threshold)}};
  std::cout << record.dump() << '\n';
  return 0;
}

struct AdaptFlags {
  std::size_t lambda_t = 500;
  double lambda_p = 0.05;
  std::size_t lambda_n = 5;
  double lr_ratio = 10.0;
};

int adapt_cmd(const cds::ExperimentConfig& config, const AdaptFlags& flags) {
  const auto wb = cds::build_workbench(config);
  cds::SolidParams params;
  params.lambda_t = flags.lambda_t;
  params.lambda_p = flags.lambda_p;
  params.lambda_n = flags.lambda_n;
  params.lr = flags.lr_ratio * config.train_lr;
  params.period = wb.period.period;
  params.circular_phase = config.circular_phase;
  params.batch_size = config.batch_size;
  cds::PoolSpec pool;
  if (config.train_only_pool) pool.pool_limit = static_cast<std::int64_t>(wb.n_train);

  const auto run = cds::run_solid(*wb.model, *wb.bank, wb.ranges.test_begin, wb.ranges.test_end,
                                  params, pool, config.fallback);
  cds::ExperimentReport report;
  cds::fill_adaptation_results(report, *wb.bank, run);

  std::filesystem::create_directories(config.output_dir);
  const auto csv_path = (std::filesystem::path(config.output_dir) / "per_sample.csv").string();
  std::ofstream csv(csv_path);
  if (!csv) throw cds::Error(cds::ErrorCode::kIoError, "cannot write '" + csv_path + "'");
  cds::write_per_sample_csv(report, csv);

  const json aggregate = {
      {"period", params.period},
      {"lambda_t", params.lambda_t},
      {"lambda_p", params.lambda_p},
      {"lambda_n", params.lambda_n},
      {"lr_ratio", flags.lr_ratio},
      {"lr", params.lr},
      {"test_samples", report.test_samples},
      {"baseline", {{"mse", report.baseline.mse}, {"mae", report.baseline.mae}}},
      {"adapted", {{"mse", report.adapted.mse}, {"mae", report.adapted.mae}}},
      {"improvement_pct",
       {{"mse", report.mse_improvement_pct}, {"mae", report.mae_improvement_pct}}},
      {"fallback_count", report.fallback_count},
      {"causality_violations", report.causality_violations}};
  const auto json_path = (std::filesystem::path(config.output_dir) / "adapt.json").string();
  std::ofstream out(json_path);
  if (!out) throw cds::Error(cds::ErrorCode::kIoError, "cannot write '" + json_path + "'");
  out << aggregate.dump(2) << '\n';
  std::cout << aggregate.dump() << '\n';
  return 0;
}

struct TheoryFlags {
  std::size_t k = 3;
  std::size_t d = 4;
  std::size_t n_per_group = 50;
  double sigma = 0.5;
  std::size_t trials = 10000;
  std::uint64_t seed = 7;
  double theta_scale = 1.0;
  bool uniform = false;
};

int verify_theory_cmd(const TheoryFlags& f) {
  namespace th = cds::theory;
  auto problem = th::FixedDesignProblem::random(f.k, f.d, f.n_per_group, f.sigma, f.theta_scale,
                                                f.seed);
  if (f.uniform) problem.noise = th::NoiseKind::kUniform;
  const auto glr = th::analytic_excess_risk_glr(problem);
  const auto clr = th::analytic_excess_risk_clr(problem);
  const auto mc_glr = th::monte_carlo_excess_risk(problem, th::Estimator::kGlr, f.trials, f.seed + 1);
  const auto mc_clr = th::monte_carlo_excess_risk(problem, th::Estimator::kClr, f.trials, f.seed + 2);

  bool ok = true;
  auto row = [&](const char* name, double analytic, const th::MonteCarloEstimate& mc) {
    const bool pass = std::abs(mc.estimate - analytic) <= 3.0 * mc.standard_error;
    ok = ok && pass;
    std::printf("%-4s %12.6f %12.6f %10.6f %12.6f %6s\n", name, analytic, mc.estimate,
                mc.standard_error, mc.holdout_estimate, pass ? "PASS" : "FAIL");
  };
  std::printf("K=%zu d=%zu n=%zu sigma=%g trials=%zu noise=%s\n", f.k, f.d, f.n_per_group, f.sigma,
              f.trials, f.uniform ? "uniform" : "gaussian");
  std::printf("%-4s %12s %12s %10s %12s %6s\n", "", "analytic", "monte-carlo", "se", "holdout",
              "3se");
  row("GLR", glr.total, mc_glr);
  row("CLR", clr.total, mc_clr);
  std::printf("GLR bias %.6f (mc %.6f), variance %.6f (mc %.6f)\n", glr.bias, mc_glr.bias_part,
              glr.variance, mc_glr.variance_part);
  return ok ? 0 : 1;
}

int run_cmd(cds::ExperimentConfig config) {
  try {
    const auto report = cds::run_experiment(config);
    cds::emit_report(report, config.output_dir);
    std::cout << std::setprecision(6) << report.dataset << " T=" << report.horizon
              << " T*=" << report.period.period << " log10 dP=" << report.phase.log10_delta
              << " (" << (report.strong_cds ? "strong" : "weak") << ")"
              << " mse " << report.baseline.mse << " -> " << report.adapted.mse << " ("
              << report.mse_improvement_pct << "%)"
              << " mae " << report.baseline.mae << " -> " << report.adapted.mae << " ("
              << report.mae_improvement_pct << "%)\n";
    std::cout << "report written to " << config.output_dir << '\n';
    return 0;
  } catch (const cds::ExperimentFailure& e) {
    cds::emit_report(e.partial(), config.output_dir);
    std::cerr << e.what() << "\npartial report written to " << config.output_dir << '\n';
    return 3;
  }
}

struct TemplateFlags {
  std::string out = "latents_template.bin";
  bool csv = false;
  std::size_t d = 8;
  std::size_t count = 4;
};

int export_template_cmd(const cds::ExperimentConfig& config, const TemplateFlags& f) {
  cds::LatentDataset data;
  if (!config.dataset_path.empty()) {
    // Flattened histories as features: a drop-in stand-in for a real encoder.
    const auto raw = cds::read_csv(config.dataset_path);
    const auto prepared = cds::prepare_series(
        raw, cds::SplitSpec(config.split[0], config.split[1], config.split[2]));
    const cds::FlattenExtractor extractor(config.lookback, prepared.standardized->channels());
    data.model_name = "flatten";
    data.d = extractor.dim();
    data.horizon = config.horizon;
    data.channels = prepared.standardized->channels();
    for (const auto& w : cds::make_windows(*prepared.standardized, config.lookback, config.horizon)) {
      data.records.push_back({w.anchor_t, extractor.extract(w.history), w.future});
    }
  } else {
    data.model_name = "template";
    data.d = f.d;
    data.horizon = config.horizon;
    data.channels = 1;
    for (std::size_t i = 0; i < f.count; ++i) {
      data.records.push_back({static_cast<std::int64_t>(config.lookback + i),
                              cds::Vector::Zero(static_cast<Eigen::Index>(f.d)),
                              cds::Matrix::Zero(static_cast<Eigen::Index>(config.horizon), 1)});
    }
  }
  cds::write_latents(data, f.out, !f.csv);
  std::cout << "wrote " << data.records.size() << " records (d=" << data.d
            << ", T=" << data.horizon << ", M=" << data.channels << ") to " << f.out << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Detect and calibrate conditional distribution shift in forecasters"};
  app.require_subcommand(1);

  cds::ExperimentConfig config;
  const std::vector<std::string> data_keys = {"dataset", "latents", "lookback", "horizon", "split",
                                              "ridge",   "period",  "segments", "threshold"};

  ConfigFlags period_flags;
  auto* period_app = app.add_subcommand("detect-period", "print the dominant period of the training split");
  period_flags.add(period_app, {"dataset", "split"});

  ConfigFlags detect_flags;
  auto* detect_app = app.add_subcommand("detect", "score CDS on training residuals");
  detect_flags.add(detect_app, data_keys);

  ConfigFlags adapt_config;
  AdaptFlags adapt_flags;
  auto* adapt_app = app.add_subcommand("adapt", "run SOLID on the test split with fixed settings");
  {
    auto keys = data_keys;
    for (const char* k : {"train_lr", "train_only_pool", "circular_phase", "batch_size",
                          "fallback_policy", "output_dir"}) {
      keys.emplace_back(k);
    }
    // --lambda-* and --lr-ratio are scalars here, not grids.
    adapt_config.add(adapt_app, keys);
    adapt_app->add_option("--lambda-t", adapt_flags.lambda_t, "time window lambda_T");
    adapt_app->add_option("--lambda-p", adapt_flags.lambda_p, "phase tolerance lambda_P");
    adapt_app->add_option("--lambda-n", adapt_flags.lambda_n, "selected samples lambda_N");
    adapt_app->add_option("--lr-ratio", adapt_flags.lr_ratio, "adaptation lr / training lr");
  }

  TheoryFlags theory_flags;
  auto* theory_app = app.add_subcommand("verify-theory", "check analytic GLR/CLR risks by simulation");
  theory_app->add_option("--k", theory_flags.k, "contexts");
  theory_app->add_option("--d", theory_flags.d, "dimension");
  theory_app->add_option("--n-per-group", theory_flags.n_per_group, "samples per context");
  theory_app->add_option("--sigma", theory_flags.sigma, "noise standard deviation");
  theory_app->add_option("--trials", theory_flags.trials, "Monte-Carlo trials");
  theory_app->add_option("--seed", theory_flags.seed, "seed");
  theory_app->add_option("--theta-scale", theory_flags.theta_scale, "spread of the true parameters");
  theory_app->add_flag("--uniform", theory_flags.uniform, "uniform noise of matched variance");

  std::string config_path;
  ConfigFlags run_flags;
  auto* run_app = app.add_subcommand("run", "full pipeline: detect, grid search, adapt, report");
  run_app->add_option("--config", config_path, "key = value config file");
  run_flags.add_all(run_app);

  ConfigFlags template_config;
  TemplateFlags template_flags;
  auto* template_app =
      app.add_subcommand("export-latents-template", "write a latent-feature file in the import format");
  template_config.add(template_app, {"dataset", "lookback", "horizon", "split"});
  template_app->add_option("--out", template_flags.out, "output path");
  template_app->add_flag("--csv", template_flags.csv, "write the CSV form");
  template_app->add_option("--d", template_flags.d, "feature dimension without a dataset");
  template_app->add_option("--count", template_flags.count, "records without a dataset");

  CLI11_PARSE(app, argc, argv);

  try {
    if (period_app->parsed()) {
      period_flags.apply(config);
      return detect_period_cmd(config);
    }
    if (detect_app->parsed()) {
      detect_flags.apply(config);
      return detect_cmd(config);
    }
    if (adapt_app->parsed()) {
      adapt_config.apply(config);
      return adapt_cmd(config, adapt_flags);
    }
    if (theory_app->parsed()) return verify_theory_cmd(theory_flags);
    if (run_app->parsed()) {
      if (!config_path.empty()) config = cds::load_config(config_path);
      cds::apply_env_overrides(config);
      run_flags.apply(config);
      return run_cmd(config);
    }
    if (template_app->parsed()) {
      template_config.apply(config);
      return export_template_cmd(config, template_flags);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
