#include "cds/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <tuple>

namespace cds {
namespace {

std::string trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_real(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    if (pos != v.size() || !std::isfinite(x)) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw Error(ErrorCode::kInvalidArgument, "config key '" + key + "': bad number '" + v + "'");
  }
}

std::size_t to_count(const std::string& key, const std::string& v) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    throw Error(ErrorCode::kInvalidArgument,
                "config key '" + key + "': expected a nonnegative integer, got '" + v + "'");
  }
  return static_cast<std::size_t>(std::stoull(v));
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw Error(ErrorCode::kInvalidArgument, "config key '" + key + "': expected a boolean");
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

template <typename F>
auto stage(const char* name, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Error& e) {
    throw Error(e.code(), std::string("[") + name + "] " + e.detail());
  }
}

}  // namespace

void SolidGrid::validate() const {
  if (lambda_t.empty() || lambda_p.empty() || lambda_n.empty() || lr_ratio.empty()) {
    throw Error(ErrorCode::kEmptyGrid, "every grid axis needs at least one value");
  }
  for (double r : lr_ratio) {
    if (!(r >= 0.0) || !std::isfinite(r)) {
      throw Error(ErrorCode::kInvalidArgument, "lr ratios must be finite and >= 0");
    }
  }
}

SolidGrid SolidGrid::preset(const std::string& dataset) {
  SolidGrid g;
  if (dataset == "etth1" || dataset == "etth2" || dataset == "ettm1" || dataset == "ettm2" ||
      dataset == "weather") {
    return g;
  }
  if (dataset == "electricity") {
    g.lr_ratio = {500, 1000, 1500, 2000};
    return g;
  }
  if (dataset == "traffic") {
    g.lr_ratio = {1000, 1500, 2000, 3000};
    return g;
  }
  if (dataset == "illness") {
    g.lambda_t = {100, 200, 300};
    g.lambda_n = {2, 3, 5};
    g.lr_ratio = {10, 20, 50, 100};
    return g;
  }
  throw Error(ErrorCode::kInvalidArgument, "unknown grid preset '" + dataset + "'");
}

void ExperimentConfig::validate() const {
  if (dataset_path.empty() && latents_path.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "config needs a dataset or latents path");
  }
  if (lookback < 1 || horizon < 1) throw Error(ErrorCode::kInvalidArgument, "L and T must be >= 1");
  SplitSpec(split[0], split[1], split[2]);
  if (!std::isfinite(threshold)) throw Error(ErrorCode::kInvalidArgument, "threshold must be finite");
  grid.validate();
  if (!(train_lr > 0.0)) throw Error(ErrorCode::kInvalidArgument, "train_lr must be > 0");
  if (!(ridge >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "ridge must be >= 0");
  if (num_segments < 1) throw Error(ErrorCode::kInvalidArgument, "segments must be >= 1");
}

std::vector<std::string> ExperimentConfig::keys() {
  return {"dataset",        "latents",   "lookback",   "horizon",        "split",
          "threshold",      "grid_preset", "lambda_t", "lambda_p",       "lambda_n",
          "lr_ratio",       "train_lr",  "ridge",      "seed",           "output_dir",
          "period",         "train_only_pool", "circular_phase", "batch_size",
          "fallback_policy", "segments"};
}

void ExperimentConfig::set(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (key == "dataset") {
    dataset_path = v;
  } else if (key == "latents") {
    latents_path = v;
  } else if (key == "lookback") {
    lookback = to_count(key, v);
  } else if (key == "horizon") {
    horizon = to_count(key, v);
  } else if (key == "split") {
    const auto parts = split_list(v);
    if (parts.size() != 3) throw Error(ErrorCode::kInvalidArgument, "split needs three ratios");
    for (std::size_t i = 0; i < 3; ++i) split[i] = to_real(key, parts[i]);
  } else if (key == "threshold") {
    threshold = to_real(key, v);
  } else if (key == "grid_preset") {
    grid = SolidGrid::preset(v);
  } else if (key == "lambda_t") {
    grid.lambda_t.clear();
    for (const auto& p : split_list(v)) grid.lambda_t.push_back(to_count(key, p));
  } else if (key == "lambda_p") {
    grid.lambda_p.clear();
    for (const auto& p : split_list(v)) grid.lambda_p.push_back(to_real(key, p));
  } else if (key == "lambda_n") {
    grid.lambda_n.clear();
    for (const auto& p : split_list(v)) grid.lambda_n.push_back(to_count(key, p));
  } else if (key == "lr_ratio") {
    grid.lr_ratio.clear();
    for (const auto& p : split_list(v)) grid.lr_ratio.push_back(to_real(key, p));
  } else if (key == "train_lr") {
    train_lr = to_real(key, v);
  } else if (key == "ridge") {
    ridge = to_real(key, v);
  } else if (key == "seed") {
    seed = to_count(key, v);
  } else if (key == "output_dir") {
    output_dir = v;
  } else if (key == "period") {
    if (v.empty() || v == "auto") {
      period.reset();
    } else {
      period = to_count(key, v);
    }
  } else if (key == "train_only_pool") {
    train_only_pool = to_bool(key, v);
  } else if (key == "circular_phase") {
    circular_phase = to_bool(key, v);
  } else if (key == "batch_size") {
    batch_size = to_count(key, v);
  } else if (key == "fallback_policy") {
    if (v == "base") {
      fallback = FallbackPolicy::kBase;
    } else if (v == "error") {
      fallback = FallbackPolicy::kError;
    } else {
      throw Error(ErrorCode::kInvalidArgument, "fallback_policy must be base or error");
    }
  } else if (key == "segments") {
    num_segments = to_count(key, v);
  } else {
    throw Error(ErrorCode::kInvalidArgument, "unknown config key '" + key + "'");
  }
}

ExperimentConfig parse_config(std::istream& in, const std::string& source_name) {
  ExperimentConfig config;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kFormatError,
                  source_name + ":" + std::to_string(line_no) + ": expected key = value");
    }
    try {
      config.set(trim(line.substr(0, eq)), line.substr(eq + 1));
    } catch (const Error& e) {
      throw Error(e.code(), source_name + ":" + std::to_string(line_no) + ": " + e.detail());
    }
  }
  return config;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open config '" + path + "'");
  return parse_config(in, path);
}

void apply_env_overrides(ExperimentConfig& config) {
  if (const char* env = std::getenv("CDS_CALIB_SEED"); env != nullptr && *env != '\0') {
    config.set("seed", env);
  }
}

// ---------------------------------------------------------------------------
// Grid search.

namespace {

struct ComboKey {
  std::size_t lambda_t;
  double lambda_p;
  std::size_t lambda_n;
};

std::vector<ComboKey> selection_combos(const SolidGrid& grid) {
  std::vector<ComboKey> combos;
  for (auto lt : grid.lambda_t) {
    for (auto lp : grid.lambda_p) {
      for (auto ln : grid.lambda_n) combos.push_back({lt, lp, ln});
    }
  }
  return combos;
}

SolidParams point_params(const SolidParams& base, const ComboKey& c, double lr) {
  SolidParams p = base;
  p.lambda_t = c.lambda_t;
  p.lambda_p = c.lambda_p;
  p.lambda_n = c.lambda_n;
  p.lr = lr;
  return p;
}

// True when a should win over b.
bool better(const GridPoint& a, const GridPoint& b) {
  if (a.val_mse != b.val_mse) return a.val_mse < b.val_mse;
  return std::make_tuple(a.lr_ratio, a.params.lambda_n, -a.params.lambda_p,
                         -static_cast<double>(a.params.lambda_t)) <
         std::make_tuple(b.lr_ratio, b.params.lambda_n, -b.params.lambda_p,
                         -static_cast<double>(b.params.lambda_t));
}

GridSearchResult pick_best(std::vector<GridPoint> points) {
  GridSearchResult result;
  result.best = points.front();
  for (const auto& p : points) {
    if (better(p, result.best)) result.best = p;
  }
  result.evaluated = std::move(points);
  return result;
}

void check_grid_args(const Forecaster& model, const SampleBank& bank, std::size_t val_begin,
                     std::size_t val_end, const SolidGrid& grid, const SolidParams& base) {
  grid.validate();
  model.check_compatible(bank);
  if (val_begin >= val_end || val_end > bank.size()) {
    throw Error(ErrorCode::kEmptyInput, "grid search needs a nonempty validation range");
  }
  for (auto lt : grid.lambda_t) {
    for (auto lp : grid.lambda_p) {
      for (auto ln : grid.lambda_n) point_params(base, {lt, lp, ln}, 0.0).validate(bank.horizon());
    }
  }
}

}  // namespace

GridSearchResult grid_search_reference(const Forecaster& model, const SampleBank& bank,
                                       std::size_t val_begin, std::size_t val_end,
                                       const SolidGrid& grid, double train_lr,
                                       const SolidParams& base, const PoolSpec& pool) {
  check_grid_args(model, bank, val_begin, val_end, grid, base);
  std::vector<GridPoint> points;
  for (const auto& c : selection_combos(grid)) {
    for (auto ratio : grid.lr_ratio) {
      GridPoint p;
      p.params = point_params(base, c, ratio * train_lr);
      p.lr_ratio = ratio;
      p.val_mse = run_solid(model, bank, val_begin, val_end, p.params, pool).adapted.mse;
      points.push_back(p);
    }
  }
  return pick_best(std::move(points));
}

GridSearchResult grid_search(const Forecaster& model, const SampleBank& bank,
                             std::size_t val_begin, std::size_t val_end, const SolidGrid& grid,
                             double train_lr, const SolidParams& base, const PoolSpec& pool) {
  check_grid_args(model, bank, val_begin, val_end, grid, base);
  const std::size_t max_n = *std::max_element(grid.lambda_n.begin(), grid.lambda_n.end());
  if (base.batch_size != 0 && base.batch_size < max_n) {
    // Several steps per epoch: the forecast is no longer affine in lr.
    return grid_search_reference(model, bank, val_begin, val_end, grid, train_lr, base, pool);
  }

  const auto combos = selection_combos(grid);
  const std::size_t R = grid.lr_ratio.size();
  const std::size_t P = combos.size() * R;
  const std::size_t n_val = val_end - val_begin;

  // Base residuals for every sample that can enter a D_ctx.
  std::vector<Matrix> residuals(val_end);
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < val_end; ++i) residuals[i] = model.predict(bank, i) - bank.truth(i);

  SolidParams widest = base;
  widest.lambda_t = *std::max_element(grid.lambda_t.begin(), grid.lambda_t.end());
  widest.lambda_p = *std::max_element(grid.lambda_p.begin(), grid.lambda_p.end());

  std::vector<double> sse(n_val * P, 0.0);
#pragma omp parallel for schedule(dynamic, 8)
  for (std::size_t v = 0; v < n_val; ++v) {
    const std::size_t i = val_begin + v;
    const std::int64_t t = bank.anchor(i);
    const auto pool_idx = candidate_indices(bank, i, widest, pool);
    struct Cand {
      std::size_t index;
      std::int64_t anchor;
      double distance;
      double phase;
    };
    std::vector<Cand> cands;
    cands.reserve(pool_idx.size());
    for (auto j : pool_idx) {
      cands.push_back({j, bank.anchor(j), bank.squared_distance(j, i),
                       phase_difference(t, bank.anchor(j), base.period, base.circular_phase)});
    }
    // Most similar first, recency on ties: the same order select_contextualized uses.
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.distance != b.distance) return a.distance < b.distance;
      return a.anchor > b.anchor;
    });
    const Matrix base_pred = model.predict(bank, i);
    const Matrix truth = bank.truth(i);
    for (std::size_t c = 0; c < combos.size(); ++c) {
      const auto& key = combos[c];
      ContextualizedDataset dctx;
      for (const auto& cand : cands) {
        if (dctx.size() == key.lambda_n) break;
        if (cand.anchor < t - static_cast<std::int64_t>(key.lambda_t)) continue;
        if (!(cand.phase < key.lambda_p)) continue;
        dctx.indices.push_back(cand.index);
        dctx.source_anchors.push_back(cand.anchor);
        dctx.similarity_scores.push_back(-std::sqrt(cand.distance));
      }
      const Matrix direction = one_step_direction(model, bank, i, dctx, residuals);
      for (std::size_t r = 0; r < R; ++r) {
        const double lr = grid.lr_ratio[r] * train_lr;
        Matrix pred = base_pred - lr * direction;
        if (!pred.allFinite()) pred = base_pred;
        sse[v * P + c * R + r] = (pred - truth).array().square().sum();
      }
    }
  }

  const double denom =
      static_cast<double>(n_val) * static_cast<double>(bank.horizon() * bank.channels());
  std::vector<GridPoint> points;
  points.reserve(P);
  for (std::size_t c = 0; c < combos.size(); ++c) {
    for (std::size_t r = 0; r < R; ++r) {
      double total = 0.0;
      for (std::size_t v = 0; v < n_val; ++v) total += sse[v * P + c * R + r];
      GridPoint p;
      p.params = point_params(base, combos[c], grid.lr_ratio[r] * train_lr);
      p.lr_ratio = grid.lr_ratio[r];
      p.val_mse = total / denom;
      points.push_back(p);
    }
  }
  return pick_best(std::move(points));
}

// ---------------------------------------------------------------------------
// Experiment.

DetectorSummary summarize_detector(const DetectorReport& report) {
  return {report.delta, report.log10_delta, report.num_contexts, report.dropped_contexts};
}

PreparedData prepare_series(const TimeSeries& raw, const SplitSpec& split) {
  const auto parts = chronological_split(raw, split);
  if (parts.train.length() == 0) {
    throw Error(ErrorCode::kSeriesTooShort, "training split is empty");
  }
  const auto standardizer = Standardizer::fit(parts.train);
  PreparedData out;
  out.standardized = std::make_shared<const TimeSeries>(standardizer.transform(raw));
  out.n_train = parts.train.length();
  out.n_val = parts.val.length();
  out.n_test = parts.test.length();
  return out;
}

SampleRanges sample_ranges(const SampleBank& bank, std::size_t n_train, std::size_t n_val) {
  const auto T = static_cast<std::int64_t>(bank.horizon());
  const auto tr = static_cast<std::int64_t>(n_train);
  const auto va = static_cast<std::int64_t>(n_val);
  SampleRanges r;
  r.train_begin = 0;
  r.train_end = bank.lower_bound(tr - T + 1);
  r.val_begin = bank.lower_bound(tr);
  r.val_end = std::max(r.val_begin, bank.lower_bound(tr + va - T + 1));
  r.test_begin = bank.lower_bound(tr + va);
  r.test_end = bank.size();
  return r;
}

void fill_adaptation_results(ExperimentReport& report, const SampleBank& bank,
                             const SolidRun& run) {
  report.per_sample.clear();
  for (const auto& s : run.samples) {
    report.per_sample.push_back({bank.anchor(s.index), s.base_mse, s.adapted_mse,
                                 s.trace.selected_anchors.size(), s.trace.fallback,
                                 s.trace.steps});
  }
  report.test_samples = run.samples.size();
  report.baseline = run.baseline;
  report.adapted = run.adapted;
  report.mse_improvement_pct = improvement_percent(run.baseline.mse, run.adapted.mse);
  report.mae_improvement_pct = improvement_percent(run.baseline.mae, run.adapted.mae);
  report.fallback_count = run.fallback_count;
  report.causality_violations = count_causality_violations(run, bank.horizon());
}

Workbench build_workbench(const ExperimentConfig& config) {
  stage("config", [&] { config.validate(); return 0; });
  const SplitSpec split(config.split[0], config.split[1], config.split[2]);

  Workbench wb;
  if (!config.dataset_path.empty()) {
    const auto raw = stage("load", [&] { return read_csv(config.dataset_path); });
    const auto prepared = stage("standardize", [&] { return prepare_series(raw, split); });
    wb.series = prepared.standardized;
    wb.n_train = prepared.n_train;
    wb.n_val = prepared.n_val;
    wb.dataset = std::filesystem::path(config.dataset_path).filename().string();
  }

  if (config.latents_path.empty()) {
    wb.lookback = config.lookback;
    wb.model_name = "linear";
    wb.bank = stage("windows", [&] {
      return std::make_unique<WindowBank>(wb.series, config.lookback, config.horizon);
    });
    const auto train = wb.series->slice(0, wb.n_train);
    wb.model = stage("fit", [&] {
      return LinearForecaster::fit(train, config.lookback, config.horizon, config.ridge).model();
    });
  } else {
    auto latents = stage("load", [&] { return import_latents(config.latents_path); });
    if (latents.horizon != config.horizon) {
      throw Error(ErrorCode::kShapeMismatch, "[load] latent T does not match configured horizon");
    }
    wb.model_name = latents.model_name;
    if (wb.dataset.empty()) {
      wb.dataset = std::filesystem::path(config.latents_path).filename().string();
    }
    if (!wb.series) {
      // Timeline length implied by the last record.
      const auto n = static_cast<std::size_t>(latents.records.back().anchor_t) + latents.horizon;
      const auto lengths = split.lengths(n);
      wb.n_train = lengths[0];
      wb.n_val = lengths[1];
    }
    auto feature_bank = std::make_unique<FeatureBank>(latents.to_bank());
    const auto ranges = sample_ranges(*feature_bank, wb.n_train, wb.n_val);
    wb.model = stage("fit", [&] {
      if (ranges.train_end == 0) throw Error(ErrorCode::kEmptyInput, "no training records");
      const auto d = static_cast<Eigen::Index>(feature_bank->feature_dim());
      const auto out = static_cast<Eigen::Index>(feature_bank->head_output_dim());
      Matrix features(static_cast<Eigen::Index>(ranges.train_end), d);
      Matrix targets(static_cast<Eigen::Index>(ranges.train_end), out);
      for (std::size_t i = 0; i < ranges.train_end; ++i) {
        features.row(static_cast<Eigen::Index>(i)) = feature_bank->feature(i, 0).transpose();
        targets.row(static_cast<Eigen::Index>(i)) = feature_bank->target(i, 0).transpose();
      }
      std::vector<PredictionHead> heads{fit_head_least_squares(features, targets, config.ridge)};
      return Forecaster(HeadLayout::kJoint, std::move(heads), latents.horizon, latents.channels);
    });
    wb.bank = std::move(feature_bank);
  }
  wb.ranges = sample_ranges(*wb.bank, wb.n_train, wb.n_val);

  wb.period = stage("period", [&] {
    if (config.period) return PeriodEstimate{*config.period, 0, 0.0};
    if (!wb.series) {
      throw Error(ErrorCode::kInvalidArgument,
                  "latent runs need a dataset CSV or an explicit period");
    }
    return dominant_period(wb.series->slice(0, wb.n_train));
  });
  return wb;
}

CdsScores score_cds(const Workbench& wb, std::size_t num_segments) {
  return stage("detect", [&] {
    if (wb.ranges.train_end == 0) {
      throw Error(ErrorCode::kInsufficientData, "no training samples");
    }
    const auto residuals = residual_population(*wb.model, *wb.bank, 0, wb.ranges.train_end);
    std::vector<std::int64_t> anchors;
    for (const auto& r : residuals) anchors.push_back(r.anchor_t);
    return CdsScores{
        reconditionor_score(residuals, phase_context(anchors, wb.period.period)),
        reconditionor_score(residuals, segment_context(anchors.size(), num_segments))};
  });
}

ExperimentReport run_experiment(const ExperimentConfig& config) {
  const auto wb = build_workbench(config);
  const auto& model = wb.model;
  const auto& bank = wb.bank;
  const auto& ranges = wb.ranges;
  const std::size_t n_train = wb.n_train;

  ExperimentReport report;
  report.threshold = config.threshold;
  report.horizon = config.horizon;
  report.dataset = wb.dataset;
  report.model_name = wb.model_name;
  report.lookback = wb.lookback;
  report.channels = bank->channels();
  report.train_samples = ranges.train_end - ranges.train_begin;
  report.val_samples = ranges.val_end - ranges.val_begin;
  report.test_samples = ranges.test_end - ranges.test_begin;
  report.period = wb.period;

  const auto scores = score_cds(wb, config.num_segments);
  report.phase = summarize_detector(scores.phase);
  report.segment = summarize_detector(scores.segment);
  report.strong_cds = scores.phase.strong(config.threshold);

  SolidParams base;
  base.period = report.period.period;
  base.circular_phase = config.circular_phase;
  base.batch_size = config.batch_size;
  PoolSpec pool;
  if (config.train_only_pool) pool.pool_limit = static_cast<std::int64_t>(n_train);

  const auto grid_start = Clock::now();
  if (report.val_samples > 0) {
    const auto search = stage("grid_search", [&] {
      return grid_search(*model, *bank, ranges.val_begin, ranges.val_end, config.grid,
                         config.train_lr, base, pool);
    });
    report.chosen = search.best.params;
    report.chosen_lr_ratio = search.best.lr_ratio;
    report.best_val_mse = search.best.val_mse;
    report.grid_evaluations = search.evaluated.size();
  } else {
    // No validation data: gentlest grid point.
    report.chosen = base;
    report.chosen.lambda_t = *std::max_element(config.grid.lambda_t.begin(), config.grid.lambda_t.end());
    report.chosen.lambda_p = *std::max_element(config.grid.lambda_p.begin(), config.grid.lambda_p.end());
    report.chosen.lambda_n = *std::min_element(config.grid.lambda_n.begin(), config.grid.lambda_n.end());
    report.chosen_lr_ratio = *std::min_element(config.grid.lr_ratio.begin(), config.grid.lr_ratio.end());
    report.chosen.lr = report.chosen_lr_ratio * config.train_lr;
  }
  report.runtime.grid_search_seconds = seconds_since(grid_start);

  if (report.test_samples > 0) {
    const auto base_start = Clock::now();
    std::vector<Matrix> base_predictions(report.test_samples);
#pragma omp parallel for schedule(static)
    for (std::size_t i = ranges.test_begin; i < ranges.test_end; ++i) {
      base_predictions[i - ranges.test_begin] = model->predict(*bank, i);
    }
    report.runtime.baseline_seconds = seconds_since(base_start);

    const auto adapt_start = Clock::now();
    SolidRun run;
    try {
      run = stage("adapt", [&] {
        return run_solid(*model, *bank, ranges.test_begin, ranges.test_end, report.chosen, pool,
                         config.fallback);
      });
    } catch (const Error& e) {
      report.error = e.what();
      fill_adaptation_results(report, *bank,
                              run_solid(*model, *bank, ranges.test_begin, ranges.test_end,
                                        report.chosen, pool, FallbackPolicy::kBase));
      throw ExperimentFailure(e, std::move(report));
    }
    report.runtime.adaptation_seconds = seconds_since(adapt_start);
    if (report.runtime.baseline_seconds > 0.0) {
      report.runtime.overhead_ratio =
          report.runtime.adaptation_seconds / report.runtime.baseline_seconds;
    }
    fill_adaptation_results(report, *bank, run);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Report files.

namespace {

nlohmann::json detector_json(const DetectorSummary& d) {
  return {{"delta", d.delta},
          {"log10_delta", std::isfinite(d.log10_delta) ? nlohmann::json(d.log10_delta)
                                                       : nlohmann::json(nullptr)},
          {"K", d.num_contexts},
          {"dropped_contexts", d.dropped_contexts}};
}

DetectorSummary detector_from(const nlohmann::json& j) {
  DetectorSummary d;
  d.delta = j.at("delta").get<double>();
  d.log10_delta = j.at("log10_delta").is_null() ? -std::numeric_limits<double>::infinity()
                                                : j.at("log10_delta").get<double>();
  d.num_contexts = j.at("K").get<std::size_t>();
  d.dropped_contexts = j.at("dropped_contexts").get<std::vector<std::size_t>>();
  return d;
}

}  // namespace

nlohmann::json report_to_json(const ExperimentReport& r) {
  nlohmann::json samples = nlohmann::json::array();
  for (const auto& s : r.per_sample) {
    samples.push_back({{"anchor", s.anchor},
                       {"base_mse", s.base_mse},
                       {"adapted_mse", s.adapted_mse},
                       {"n_selected", s.n_selected},
                       {"fallback", s.fallback},
                       {"steps", s.steps}});
  }
  return {
      {"dataset", r.dataset},
      {"model", r.model_name},
      {"lookback", r.lookback},
      {"horizon", r.horizon},
      {"channels", r.channels},
      {"samples", {{"train", r.train_samples}, {"val", r.val_samples}, {"test", r.test_samples}}},
      {"period",
       {{"period", r.period.period},
        {"k", r.period.dominant_frequency_index},
        {"amplitude", r.period.aggregate_amplitude}}},
      {"delta_P", detector_json(r.phase)},
      {"delta_T", detector_json(r.segment)},
      {"threshold", r.threshold},
      {"strong_cds", r.strong_cds},
      {"chosen",
       {{"lambda_t", r.chosen.lambda_t},
        {"lambda_p", r.chosen.lambda_p},
        {"lambda_n", r.chosen.lambda_n},
        {"lr", r.chosen.lr},
        {"lr_ratio", r.chosen_lr_ratio},
        {"period", r.chosen.period},
        {"circular_phase", r.chosen.circular_phase},
        {"batch_size", r.chosen.batch_size}}},
      {"best_val_mse", r.best_val_mse},
      {"grid_evaluations", r.grid_evaluations},
      {"baseline", {{"mse", r.baseline.mse}, {"mae", r.baseline.mae}}},
      {"adapted", {{"mse", r.adapted.mse}, {"mae", r.adapted.mae}}},
      {"improvement_pct", {{"mse", r.mse_improvement_pct}, {"mae", r.mae_improvement_pct}}},
      {"fallback_count", r.fallback_count},
      {"causality_violations", r.causality_violations},
      {"per_sample", samples},
      {"error", r.error.empty() ? nlohmann::json(nullptr) : nlohmann::json(r.error)},
  };
}

ExperimentReport report_from_json(const nlohmann::json& j) {
  ExperimentReport r;
  r.dataset = j.at("dataset").get<std::string>();
  r.model_name = j.at("model").get<std::string>();
  r.lookback = j.at("lookback").get<std::size_t>();
  r.horizon = j.at("horizon").get<std::size_t>();
  r.channels = j.at("channels").get<std::size_t>();
  r.train_samples = j.at("samples").at("train").get<std::size_t>();
  r.val_samples = j.at("samples").at("val").get<std::size_t>();
  r.test_samples = j.at("samples").at("test").get<std::size_t>();
  r.period.period = j.at("period").at("period").get<std::size_t>();
  r.period.dominant_frequency_index = j.at("period").at("k").get<std::size_t>();
  r.period.aggregate_amplitude = j.at("period").at("amplitude").get<double>();
  r.phase = detector_from(j.at("delta_P"));
  r.segment = detector_from(j.at("delta_T"));
  r.threshold = j.at("threshold").get<double>();
  r.strong_cds = j.at("strong_cds").get<bool>();
  const auto& c = j.at("chosen");
  r.chosen.lambda_t = c.at("lambda_t").get<std::size_t>();
  r.chosen.lambda_p = c.at("lambda_p").get<double>();
  r.chosen.lambda_n = c.at("lambda_n").get<std::size_t>();
  r.chosen.lr = c.at("lr").get<double>();
  r.chosen_lr_ratio = c.at("lr_ratio").get<double>();
  r.chosen.period = c.at("period").get<std::size_t>();
  r.chosen.circular_phase = c.at("circular_phase").get<bool>();
  r.chosen.batch_size = c.at("batch_size").get<std::size_t>();
  r.best_val_mse = j.at("best_val_mse").get<double>();
  r.grid_evaluations = j.at("grid_evaluations").get<std::size_t>();
  r.baseline = {j.at("baseline").at("mse").get<double>(), j.at("baseline").at("mae").get<double>()};
  r.adapted = {j.at("adapted").at("mse").get<double>(), j.at("adapted").at("mae").get<double>()};
  r.mse_improvement_pct = j.at("improvement_pct").at("mse").get<double>();
  r.mae_improvement_pct = j.at("improvement_pct").at("mae").get<double>();
  r.fallback_count = j.at("fallback_count").get<std::size_t>();
  r.causality_violations = j.at("causality_violations").get<std::size_t>();
  if (j.contains("error") && !j.at("error").is_null()) r.error = j.at("error").get<std::string>();
  for (const auto& s : j.at("per_sample")) {
    r.per_sample.push_back({s.at("anchor").get<std::int64_t>(), s.at("base_mse").get<double>(),
                            s.at("adapted_mse").get<double>(), s.at("n_selected").get<std::size_t>(),
                            s.at("fallback").get<bool>(), s.at("steps").get<std::size_t>()});
  }
  return r;
}

void write_per_sample_csv(const ExperimentReport& report, std::ostream& out) {
  out << "anchor,base_mse,adapted_mse,n_selected,fallback\n";
  out << std::setprecision(17);
  for (const auto& s : report.per_sample) {
    out << s.anchor << ',' << s.base_mse << ',' << s.adapted_mse << ',' << s.n_selected << ','
        << (s.fallback ? 1 : 0) << '\n';
  }
  if (report.per_sample.empty()) out << "# rows=0\n";
}

void emit_report(const ExperimentReport& report, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIoError, "cannot create '" + dir + "': " + ec.message());

  auto open = [&](const std::string& name) {
    const auto path = (fs::path(dir) / name).string();
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::kIoError, "cannot write '" + path + "'");
    return out;
  };
  {
    auto out = open("report.json");
    out << report_to_json(report).dump(2) << '\n';
  }
  {
    auto out = open("per_sample.csv");
    write_per_sample_csv(report, out);
  }
  {
    auto out = open("delta_vs_improvement.csv");
    out << "dataset,model,horizon,log10_delta_p,log10_delta_t,mse_improvement_pct,mae_improvement_pct\n";
    out << std::setprecision(17) << report.dataset << ',' << report.model_name << ','
        << report.horizon << ',' << report.phase.log10_delta << ',' << report.segment.log10_delta
        << ',' << report.mse_improvement_pct << ',' << report.mae_improvement_pct << '\n';
  }
  {
    auto out = open("timing.json");
    const nlohmann::json timing = {{"baseline_seconds", report.runtime.baseline_seconds},
                                   {"adaptation_seconds", report.runtime.adaptation_seconds},
                                   {"grid_search_seconds", report.runtime.grid_search_seconds},
                                   {"overhead_ratio", report.runtime.overhead_ratio}};
    out << timing.dump(2) << '\n';
  }
}

}  // namespace cds
