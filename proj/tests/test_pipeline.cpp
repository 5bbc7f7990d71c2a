#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cds/pipeline.hpp"
#include "synthetic.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using cds::ExperimentConfig;
using cds::SolidGrid;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("cds_pipeline_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string write_series(const fs::path& dir, const cds::TimeSeries& series) {
  const auto path = (dir / "series.csv").string();
  std::ofstream out(path);
  cds::write_csv(series, out);
  return path;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

SolidGrid small_grid() {
  SolidGrid g;
  g.lambda_t = {200, 400};
  g.lambda_p = {0.05, 0.1};
  g.lambda_n = {5, 10};
  g.lr_ratio = {0, 1, 5};
  return g;
}

ExperimentConfig synthetic_config(const std::string& csv) {
  ExperimentConfig c;
  c.dataset_path = csv;
  c.lookback = 12;
  c.horizon = 6;
  c.grid = small_grid();
  c.train_lr = 0.01;
  return c;
}

struct GridSetup {
  std::shared_ptr<const cds::TimeSeries> series;
  std::unique_ptr<cds::WindowBank> bank;
  std::optional<cds::Forecaster> model;
  cds::SolidParams base;
};

GridSetup grid_setup() {
  GridSetup s;
  s.series = std::make_shared<const cds::TimeSeries>(synthetic::phase_shifted(800, 2, 24, 0.8, 61));
  s.bank = std::make_unique<cds::WindowBank>(s.series, 12, 6);
  s.model = cds::LinearForecaster::fit(s.series->slice(0, 500), 12, 6).model();
  s.base.period = 24;
  return s;
}

}  // namespace

TEST(Config, ParsesKeysCommentsAndLists) {
  std::istringstream in(
      "# experiment\n"
      "dataset = data/etth1.csv\n"
      "lookback = 104   # weekly\n"
      "horizon=24\n"
      "split = 0.7, 0.1, 0.2\n"
      "grid_preset = illness\n"
      "lr_ratio = 1, 2\n"
      "period = auto\n"
      "train_only_pool = true\n"
      "fallback_policy = error\n");
  const auto c = cds::parse_config(in);
  EXPECT_EQ(c.dataset_path, "data/etth1.csv");
  EXPECT_EQ(c.lookback, 104u);
  EXPECT_EQ(c.horizon, 24u);
  EXPECT_DOUBLE_EQ(c.split[0], 0.7);
  EXPECT_EQ(c.grid.lambda_t, (std::vector<std::size_t>{100, 200, 300}));
  EXPECT_EQ(c.grid.lr_ratio, (std::vector<double>{1, 2}));
  EXPECT_FALSE(c.period.has_value());
  EXPECT_TRUE(c.train_only_pool);
  EXPECT_EQ(c.fallback, cds::FallbackPolicy::kError);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, ErrorsCarryLineNumbers) {
  std::istringstream unknown("lookback = 10\nbogus = 1\n");
  try {
    cds::parse_config(unknown, "exp.cfg");
    FAIL();
  } catch (const cds::Error& e) {
    EXPECT_EQ(e.code(), cds::ErrorCode::kInvalidArgument);
    EXPECT_NE(std::string(e.what()).find("exp.cfg:2"), std::string::npos);
  }
  std::istringstream no_eq("lookback 10\n");
  EXPECT_EQ(code_of([&] { cds::parse_config(no_eq); }), cds::ErrorCode::kFormatError);
  ExperimentConfig c;
  EXPECT_EQ(code_of([&] { c.set("lookback", "ten"); }), cds::ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([&] { c.set("split", "0.5,0.5"); }), cds::ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([&] { c.set("grid_preset", "nope"); }), cds::ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([&] { c.validate(); }), cds::ErrorCode::kInvalidArgument);
  c.dataset_path = "x.csv";
  c.grid.lambda_n.clear();
  EXPECT_EQ(code_of([&] { c.validate(); }), cds::ErrorCode::kEmptyGrid);
  EXPECT_EQ(code_of([] { cds::load_config("/nonexistent/cfg"); }), cds::ErrorCode::kIoError);
}

TEST(Config, EveryKeyIsRecognized) {
  // Free-form keys accept anything; the rest reject garbage as a bad value,
  // not as an unknown key.
  for (const auto& key : ExperimentConfig::keys()) {
    ExperimentConfig c;
    if (key == "dataset" || key == "latents" || key == "output_dir") {
      EXPECT_NO_THROW(c.set(key, "@@"));
      continue;
    }
    try {
      c.set(key, "@@");
      ADD_FAILURE() << key;
    } catch (const cds::Error& e) {
      EXPECT_EQ(std::string(e.what()).find("unknown config key"), std::string::npos) << key;
    }
  }
}

TEST(Config, SeedFromEnvironment) {
  ExperimentConfig c;
  ::setenv("CDS_CALIB_SEED", "99", 1);
  cds::apply_env_overrides(c);
  ::unsetenv("CDS_CALIB_SEED");
  EXPECT_EQ(c.seed, 99u);
  cds::apply_env_overrides(c);
  EXPECT_EQ(c.seed, 99u);
}

TEST(Grid, PresetsAndSizes) {
  EXPECT_EQ(SolidGrid::preset("etth1").size(), 108u);
  EXPECT_EQ(SolidGrid::preset("illness").size(), 108u);
  EXPECT_EQ(SolidGrid::preset("traffic").lr_ratio.front(), 1000.0);
  SolidGrid empty;
  empty.lr_ratio.clear();
  EXPECT_EQ(code_of([&] { empty.validate(); }), cds::ErrorCode::kEmptyGrid);
}

TEST(Grid, SingletonReturnsItsPoint) {
  const auto s = grid_setup();
  SolidGrid g;
  g.lambda_t = {300};
  g.lambda_p = {0.05};
  g.lambda_n = {7};
  g.lr_ratio = {2};
  const auto r = cds::grid_search(*s.model, *s.bank, 500, 600, g, 0.01, s.base, {});
  ASSERT_EQ(r.evaluated.size(), 1u);
  EXPECT_EQ(r.best.params.lambda_t, 300u);
  EXPECT_EQ(r.best.params.lambda_n, 7u);
  EXPECT_DOUBLE_EQ(r.best.params.lr, 0.02);
  EXPECT_EQ(r.best.val_mse, r.evaluated[0].val_mse);
}

TEST(Grid, FastMatchesReferenceAndWinnerDominates) {
  const auto s = grid_setup();
  const auto g = small_grid();
  const auto fast = cds::grid_search(*s.model, *s.bank, 500, 620, g, 0.01, s.base, {});
  const auto ref = cds::grid_search_reference(*s.model, *s.bank, 500, 620, g, 0.01, s.base, {});
  ASSERT_EQ(fast.evaluated.size(), g.size());
  ASSERT_EQ(ref.evaluated.size(), g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    EXPECT_NEAR(fast.evaluated[i].val_mse, ref.evaluated[i].val_mse,
                1e-10 * ref.evaluated[i].val_mse);
    EXPECT_LE(fast.best.val_mse, fast.evaluated[i].val_mse);
  }
  EXPECT_EQ(fast.best.params.lambda_t, ref.best.params.lambda_t);
  EXPECT_EQ(fast.best.params.lambda_n, ref.best.params.lambda_n);
  EXPECT_EQ(fast.best.lr_ratio, ref.best.lr_ratio);
}

TEST(Grid, IllnessPresetEvaluatesEveryPoint) {
  const auto s = grid_setup();
  const auto r = cds::grid_search(*s.model, *s.bank, 500, 540, SolidGrid::preset("illness"), 0.001,
                                  s.base, {});
  EXPECT_EQ(r.evaluated.size(), 108u);
}

TEST(Grid, ZeroLrTiesGoToGentlestPoint) {
  const auto s = grid_setup();
  SolidGrid g;
  g.lambda_t = {200, 400};
  g.lambda_p = {0.05, 0.1};
  g.lambda_n = {5, 10};
  g.lr_ratio = {0};
  const auto r = cds::grid_search(*s.model, *s.bank, 500, 560, g, 0.01, s.base, {});
  EXPECT_EQ(r.best.params.lambda_n, 5u);
  EXPECT_EQ(r.best.params.lambda_p, 0.1);
  EXPECT_EQ(r.best.params.lambda_t, 400u);
}

TEST(Grid, BadRangesThrow) {
  const auto s = grid_setup();
  EXPECT_THROW(cds::grid_search(*s.model, *s.bank, 600, 500, small_grid(), 0.01, s.base, {}),
               cds::Error);
}

TEST(Ranges, SplitBoundaries) {
  auto series = std::make_shared<const cds::TimeSeries>(synthetic::phase_shifted(100, 1, 24, 0.0, 1));
  const cds::WindowBank bank(series, 10, 5);
  // Anchors 10..95.
  const auto r = cds::sample_ranges(bank, 60, 20);
  EXPECT_EQ(bank.anchor(r.train_end - 1) + 5, 60);  // last train future ends at 59
  EXPECT_EQ(bank.anchor(r.val_begin), 60);
  EXPECT_EQ(bank.anchor(r.val_end - 1) + 5, 80);
  EXPECT_EQ(bank.anchor(r.test_begin), 80);
  EXPECT_EQ(r.test_end, bank.size());
}

TEST(Experiment, ZeroLrLeavesBaselineUnchanged) {
  const auto dir = scratch_dir("zero_lr");
  auto c = synthetic_config(write_series(dir, synthetic::phase_shifted(1200, 2, 24, 0.8, 71)));
  c.grid.lr_ratio = {0};
  const auto r = cds::run_experiment(c);
  EXPECT_GT(r.test_samples, 0u);
  EXPECT_EQ(r.mse_improvement_pct, 0.0);
  EXPECT_EQ(r.baseline.mse, r.adapted.mse);
  EXPECT_EQ(r.causality_violations, 0u);
}

TEST(Experiment, PhaseShiftedDataIsDetectedAndImproved) {
  const auto dir = scratch_dir("phase");
  const auto c = synthetic_config(write_series(dir, synthetic::phase_shifted(1500, 2, 24, 0.8, 72)));
  const auto r = cds::run_experiment(c);
  EXPECT_EQ(r.period.period, 24u);
  EXPECT_TRUE(r.strong_cds) << r.phase.log10_delta;
  EXPECT_GT(r.phase.delta, r.segment.delta);
  EXPECT_GT(r.mse_improvement_pct, 0.0);
  EXPECT_EQ(r.causality_violations, 0u);
  EXPECT_EQ(r.grid_evaluations, small_grid().size());
  EXPECT_NEAR(r.mse_improvement_pct, 100.0 * (r.baseline.mse - r.adapted.mse) / r.baseline.mse,
              1e-9);
}

TEST(Experiment, ReportFilesAreReproducible) {
  const auto dir = scratch_dir("repro");
  auto c = synthetic_config(write_series(dir, synthetic::phase_shifted(900, 2, 24, 0.8, 73)));
  c.output_dir = (dir / "a").string();
  cds::emit_report(cds::run_experiment(c), c.output_dir);
  const auto second = (dir / "b").string();
  cds::emit_report(cds::run_experiment(c), second);
  for (const char* f : {"report.json", "per_sample.csv", "delta_vs_improvement.csv"}) {
    EXPECT_EQ(slurp(fs::path(c.output_dir) / f), slurp(fs::path(second) / f)) << f;
  }
  EXPECT_TRUE(fs::exists(fs::path(second) / "timing.json"));

  const auto parsed = nlohmann::json::parse(slurp(fs::path(second) / "report.json"));
  const auto back = cds::report_from_json(parsed);
  EXPECT_EQ(cds::report_to_json(back), parsed);
  const double recomputed =
      100.0 * (back.baseline.mse - back.adapted.mse) / back.baseline.mse;
  EXPECT_NEAR(back.mse_improvement_pct, recomputed, 1e-9);
}

TEST(Experiment, EmptyTestSplitWritesHeaderOnly) {
  const auto dir = scratch_dir("no_test");
  auto c = synthetic_config(write_series(dir, synthetic::phase_shifted(600, 1, 24, 0.8, 74)));
  c.split = {0.8, 0.2, 0.0};
  const auto r = cds::run_experiment(c);
  EXPECT_EQ(r.test_samples, 0u);
  std::ostringstream csv;
  cds::write_per_sample_csv(r, csv);
  EXPECT_EQ(csv.str(), "anchor,base_mse,adapted_mse,n_selected,fallback\n# rows=0\n");
}

TEST(Experiment, NoValidationUsesGentlestPoint) {
  const auto dir = scratch_dir("no_val");
  auto c = synthetic_config(write_series(dir, synthetic::phase_shifted(600, 1, 24, 0.8, 75)));
  c.split = {0.8, 0.0, 0.2};
  const auto r = cds::run_experiment(c);
  EXPECT_EQ(r.grid_evaluations, 0u);
  EXPECT_EQ(r.chosen.lambda_t, 400u);
  EXPECT_EQ(r.chosen.lambda_n, 5u);
  EXPECT_EQ(r.chosen_lr_ratio, 0.0);
}

TEST(Experiment, StageErrorsAreNamed) {
  ExperimentConfig c;
  c.dataset_path = "/nonexistent/series.csv";
  try {
    cds::run_experiment(c);
    FAIL();
  } catch (const cds::Error& e) {
    EXPECT_EQ(e.code(), cds::ErrorCode::kIoError);
    EXPECT_NE(std::string(e.what()).find("[load]"), std::string::npos);
  }
}

TEST(Experiment, FailureCarriesPartialReport) {
  const auto dir = scratch_dir("failure");
  auto c = synthetic_config(write_series(dir, synthetic::phase_shifted(900, 2, 24, 0.8, 76)));
  c.grid.lr_ratio = {1e308};
  c.train_lr = 1.0;
  c.fallback = cds::FallbackPolicy::kError;
  try {
    cds::run_experiment(c);
    FAIL();
  } catch (const cds::ExperimentFailure& e) {
    EXPECT_EQ(e.code(), cds::ErrorCode::kNonFiniteUpdate);
    const auto& p = e.partial();
    EXPECT_FALSE(p.error.empty());
    EXPECT_GT(p.test_samples, 0u);
    EXPECT_EQ(p.fallback_count, p.test_samples);
    EXPECT_EQ(p.baseline.mse, p.adapted.mse);
    EXPECT_FALSE(cds::report_to_json(p)["error"].is_null());
  }
}

TEST(Experiment, LatentRunMatchesFeatureShape) {
  const auto dir = scratch_dir("latent");
  const auto series = synthetic::phase_shifted(900, 2, 24, 0.8, 77);
  const cds::FlattenExtractor extractor(12, 2);
  cds::LatentDataset data;
  data.model_name = "flatten";
  data.d = extractor.dim();
  data.horizon = 6;
  data.channels = 2;
  for (const auto& w : cds::make_windows(series, 12, 6)) {
    data.records.push_back({w.anchor_t, extractor.extract(w.history), w.future});
  }
  const auto path = (dir / "latents.bin").string();
  cds::write_latents(data, path);

  ExperimentConfig c;
  c.latents_path = path;
  c.horizon = 6;
  c.grid = small_grid();
  // Without a series the period must be explicit.
  EXPECT_EQ(code_of([&] { cds::run_experiment(c); }), cds::ErrorCode::kInvalidArgument);
  c.period = 24;
  const auto r = cds::run_experiment(c);
  EXPECT_EQ(r.model_name, "flatten");
  EXPECT_EQ(r.channels, 2u);
  EXPECT_GT(r.test_samples, 0u);
  EXPECT_EQ(r.causality_violations, 0u);
  EXPECT_GE(r.adapted.mse, 0.0);

  c.horizon = 5;
  EXPECT_EQ(code_of([&] { cds::run_experiment(c); }), cds::ErrorCode::kShapeMismatch);
}
