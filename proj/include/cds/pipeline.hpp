#pragma once

// End-to-end experiment: split, standardize, fit the baseline, detect the
// period, score CDS, grid-search SOLID on validation, adapt on test.

#include <array>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "cds/core.hpp"
#include "cds/forecaster.hpp"
#include "cds/periodicity.hpp"
#include "cds/reconditionor.hpp"
#include "cds/solid.hpp"

namespace cds {

struct SolidGrid {
  std::vector<std::size_t> lambda_t{500, 1000, 2000};
  std::vector<double> lambda_p{0.02, 0.05, 0.1};
  std::vector<std::size_t> lambda_n{5, 10, 20};
  std::vector<double> lr_ratio{5, 10, 20, 50};

  std::size_t size() const {
    return lambda_t.size() * lambda_p.size() * lambda_n.size() * lr_ratio.size();
  }
  void validate() const;

  // Search ranges per dataset family: etth1, etth2, ettm1, ettm2, weather,
  // electricity, traffic, illness.
  static SolidGrid preset(const std::string& dataset);
};

struct ExperimentConfig {
  std::string dataset_path;
  std::string latents_path;  // use imported features instead of the in-library linear model
  std::size_t lookback = 336;
  std::size_t horizon = 96;
  std::array<double, 3> split{0.6, 0.2, 0.2};
  double threshold = -3.2;
  SolidGrid grid;
  double train_lr = 0.005;  // adaptation lr = lr_ratio * train_lr
  double ridge = LinearForecaster::kDefaultRidge;
  std::uint64_t seed = 2024;
  std::string output_dir = "cds_out";
  std::optional<std::size_t> period;  // override for the detected T*
  bool train_only_pool = false;
  bool circular_phase = false;
  std::size_t batch_size = 0;
  FallbackPolicy fallback = FallbackPolicy::kBase;
  std::size_t num_segments = 5;

  void validate() const;

  // Applies one `key = value` setting; unknown keys throw.
  void set(const std::string& key, const std::string& value);
  static std::vector<std::string> keys();
};

// Flat `key = value` lines; `#` starts a comment.
ExperimentConfig parse_config(std::istream& in, const std::string& source_name = "<config>");
ExperimentConfig load_config(const std::string& path);

// CDS_CALIB_SEED, when set, replaces the configured seed.
void apply_env_overrides(ExperimentConfig& config);

struct GridPoint {
  SolidParams params;
  double lr_ratio = 0.0;
  double val_mse = 0.0;
};

struct GridSearchResult {
  GridPoint best;
  std::vector<GridPoint> evaluated;  // grid order: lambda_t, lambda_p, lambda_n, lr_ratio
};

// Exhaustive validation search. `base` carries period, phase mode and batch
// size; ties go to the gentler setting (smaller lr ratio, smaller lambda_N,
// larger lambda_P, larger lambda_T).
GridSearchResult grid_search(const Forecaster& model, const SampleBank& bank,
                             std::size_t val_begin, std::size_t val_end, const SolidGrid& grid,
                             double train_lr, const SolidParams& base, const PoolSpec& pool);

// Same search by explicit adaptation of every grid point; reference for
// the closed-form one-step evaluation used by grid_search.
GridSearchResult grid_search_reference(const Forecaster& model, const SampleBank& bank,
                                       std::size_t val_begin, std::size_t val_end,
                                       const SolidGrid& grid, double train_lr,
                                       const SolidParams& base, const PoolSpec& pool);

// Standardized series with train statistics and split lengths.
struct PreparedData {
  std::shared_ptr<const TimeSeries> standardized;  // full series, train statistics
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  std::size_t n_test = 0;
};

PreparedData prepare_series(const TimeSeries& raw, const SplitSpec& split);

// Bank index ranges [begin, end) of the train / val / test samples:
// train futures end inside train, val and test anchors start inside their
// segment.
struct SampleRanges {
  std::size_t train_begin = 0, train_end = 0;
  std::size_t val_begin = 0, val_end = 0;
  std::size_t test_begin = 0, test_end = 0;
};

SampleRanges sample_ranges(const SampleBank& bank, std::size_t n_train, std::size_t n_val);

struct DetectorSummary {
  double delta = 0.0;
  double log10_delta = 0.0;
  std::size_t num_contexts = 0;
  std::vector<std::size_t> dropped_contexts;
};

DetectorSummary summarize_detector(const DetectorReport& report);

struct PerSampleRow {
  std::int64_t anchor = 0;
  double base_mse = 0.0;
  double adapted_mse = 0.0;
  std::size_t n_selected = 0;
  bool fallback = false;
  std::size_t steps = 0;
};

struct RuntimeBreakdown {
  double baseline_seconds = 0.0;
  double adaptation_seconds = 0.0;
  double grid_search_seconds = 0.0;
  // adapted inference time / baseline inference time
  double overhead_ratio = 0.0;
};

struct ExperimentReport {
  std::string dataset;
  std::string model_name;
  std::size_t lookback = 0;
  std::size_t horizon = 0;
  std::size_t channels = 0;
  std::size_t train_samples = 0;
  std::size_t val_samples = 0;
  std::size_t test_samples = 0;
  PeriodEstimate period;
  DetectorSummary phase;
  DetectorSummary segment;
  double threshold = -3.2;
  bool strong_cds = false;
  SolidParams chosen;
  double chosen_lr_ratio = 0.0;
  double best_val_mse = 0.0;
  std::size_t grid_evaluations = 0;
  ErrorMetrics baseline;
  ErrorMetrics adapted;
  double mse_improvement_pct = 0.0;
  double mae_improvement_pct = 0.0;
  std::size_t fallback_count = 0;
  std::size_t causality_violations = 0;
  std::vector<PerSampleRow> per_sample;
  RuntimeBreakdown runtime;  // not part of report.json (hardware dependent)
  std::string error;         // set on partial reports
};

// Adaptation failed under the error policy. `partial` holds everything up to
// the failure plus a base-policy pass over the test split, so fallback
// counts are still reported.
class ExperimentFailure : public Error {
 public:
  ExperimentFailure(const Error& cause, ExperimentReport partial)
      : Error(cause), partial_(std::move(partial)) {}
  const ExperimentReport& partial() const { return partial_; }

 private:
  ExperimentReport partial_;
};

// Everything before adaptation: standardized series (absent for latent-only
// runs), sample bank, fitted baseline, split ranges and period.
struct Workbench {
  std::shared_ptr<const TimeSeries> series;
  std::unique_ptr<SampleBank> bank;
  std::optional<Forecaster> model;
  SampleRanges ranges;
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  PeriodEstimate period;
  std::string dataset;
  std::string model_name;
  std::size_t lookback = 0;
};

Workbench build_workbench(const ExperimentConfig& config);

struct CdsScores {
  DetectorReport phase;    // K = T*
  DetectorReport segment;  // K = num_segments
};

// Detector scores over the training residuals.
CdsScores score_cds(const Workbench& wb, std::size_t num_segments = 5);

// Stage errors are rethrown with the stage name prefixed.
ExperimentReport run_experiment(const ExperimentConfig& config);

// Per-sample rows and aggregate metrics from a SOLID run.
void fill_adaptation_results(ExperimentReport& report, const SampleBank& bank,
                             const SolidRun& run);

nlohmann::json report_to_json(const ExperimentReport& report);
ExperimentReport report_from_json(const nlohmann::json& j);

// report.json, per_sample.csv, delta_vs_improvement.csv, timing.json.
void emit_report(const ExperimentReport& report, const std::string& dir);
void write_per_sample_csv(const ExperimentReport& report, std::ostream& out);



}  // namespace cds
