#pragma once

// Sample-level contextualized adaptation: for each test sample, select
// preceding samples that share its temporal segment, periodic phase and
// (as a proxy for unobserved context) a similar history, fine-tune a copy
// of the prediction head on them for one epoch, and forecast.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "cds/core.hpp"
#include "cds/forecaster.hpp"

namespace cds {

struct SolidParams {
  std::size_t lambda_t = 500;   // time-range cap, steps
  double lambda_p = 0.05;       // phase-difference threshold, fraction of the period
  std::size_t lambda_n = 5;     // number of selected samples
  double lr = 0.0;              // absolute adaptation learning rate
  std::size_t period = 1;       // T*
  bool circular_phase = false;  // min(d, 1 - d) instead of the literal |d|
  std::size_t batch_size = 0;   // 0 = full batch over D_ctx

  void validate(std::size_t horizon) const;
};

enum class FallbackPolicy { kBase, kError };

// |(t mod T*) - (t' mod T*)| / T*, optionally wrapped around the cycle.
double phase_difference(std::int64_t t, std::int64_t t_prime, std::size_t period, bool circular);

// All t' in [max(t - lambda_t, first), min(t - T, last)] passing the phase
// test, ascending.
std::vector<std::int64_t> candidate_anchors(std::int64_t t, std::int64_t first_available,
                                            std::int64_t last_available, const SolidParams& params,
                                            std::size_t horizon);

struct ContextualizedDataset {
  std::vector<std::size_t> indices;         // bank indices, most similar first
  std::vector<std::int64_t> source_anchors;
  std::vector<double> similarity_scores;    // negative Euclidean distance

  std::size_t size() const { return indices.size(); }
  bool empty() const { return indices.empty(); }
};

// Top-lambda_n candidates of the test sample by descending similarity;
// ties go to the more recent anchor.
ContextualizedDataset select_contextualized(const SampleBank& bank, std::size_t test_index,
                                            std::span<const std::size_t> candidate_indices,
                                            std::size_t lambda_n);

// Which preceding samples a test sample may draw from.
struct PoolSpec {
  // Samples with anchor + T <= pool_limit are eligible in addition to the
  // causality rule t' + T <= t. Unset = rolling pool (any revealed sample).
  std::optional<std::int64_t> pool_limit;
};

// Bank indices satisfying the time range, phase test and pool rules for
// test sample `test_index`, ascending by anchor.
std::vector<std::size_t> candidate_indices(const SampleBank& bank, std::size_t test_index,
                                           const SolidParams& params, const PoolSpec& pool);

struct AdaptationTrace {
  std::int64_t anchor_t = 0;
  std::vector<std::int64_t> selected_anchors;
  double pre_loss = 0.0;   // MSE on D_ctx before adaptation
  double post_loss = 0.0;  // MSE on D_ctx after adaptation
  std::size_t steps = 0;   // gradient steps taken
  bool fallback = false;   // base forecast returned
  bool non_finite = false;
};

struct AdaptationResult {
  Matrix base_forecast;
  Matrix forecast;
  AdaptationTrace trace;
};

// Clones the heads, runs one epoch of gradient descent on D_ctx, forecasts
// the test sample. Empty D_ctx or a non-finite update returns the base
// forecast (fallback) unless the policy is kError.
AdaptationResult adapt_and_predict(const Forecaster& model, const SampleBank& bank,
                                   std::size_t test_index, const ContextualizedDataset& dctx,
                                   const SolidParams& params,
                                   FallbackPolicy policy = FallbackPolicy::kBase);

// For a single full-batch step the adapted forecast is affine in lr:
// forecast(lr) = base - lr * direction. Returns the T x M direction.
Matrix one_step_direction(const Forecaster& model, const SampleBank& bank,
                          std::size_t test_index, const ContextualizedDataset& dctx,
                          std::span<const Matrix> base_residuals);

struct SolidSample {
  std::size_t index = 0;
  Matrix base_forecast;
  Matrix forecast;
  double base_mse = 0.0;
  double adapted_mse = 0.0;
  AdaptationTrace trace;
};

struct SolidRun {
  std::vector<SolidSample> samples;
  ErrorMetrics baseline;
  ErrorMetrics adapted;
  std::size_t fallback_count = 0;
};

// (base - adapted) / base * 100, 0 when base is 0.
double improvement_percent(double base, double adapted);

// Adapts every bank sample in [begin, end) independently. The parallel and
// serial versions return bit-identical results.
SolidRun run_solid(const Forecaster& model, const SampleBank& bank, std::size_t begin,
                   std::size_t end, const SolidParams& params, const PoolSpec& pool = {},
                   FallbackPolicy policy = FallbackPolicy::kBase);
SolidRun run_solid_serial(const Forecaster& model, const SampleBank& bank, std::size_t begin,
                          std::size_t end, const SolidParams& params, const PoolSpec& pool = {},
                          FallbackPolicy policy = FallbackPolicy::kBase);

// Checks t' + T <= t for every selected anchor of every trace.
std::size_t count_causality_violations(const SolidRun& run, std::size_t horizon);

}  // namespace cds
