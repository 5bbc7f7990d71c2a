#pragma once

// Residual-based detector of context-driven distribution shift: the mutual
// information between pooled forecast residuals and a discrete context,
// with every residual population approximated by a Gaussian.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cds/forecaster.hpp"

namespace cds {

enum class ContextKind { kPeriodicPhase, kTemporalSegment, kCustom };

const char* context_kind_name(ContextKind kind);

struct ContextAssignment {
  ContextKind kind = ContextKind::kCustom;
  std::size_t num_contexts = 1;
  std::vector<std::size_t> labels;  // one per anchor, each < num_contexts

  void validate() const;
};

// c_t = t mod period, K = period.
ContextAssignment phase_context(std::span<const std::int64_t> anchors, std::size_t period);

// Contiguous index blocks of floor(n / K) anchors, remainder to the last.
ContextAssignment segment_context(std::size_t num_anchors, std::size_t num_segments = 5);

struct GaussianSummary {
  static constexpr double kStdFloor = 1e-8;

  double mean = 0.0;
  double std = kStdFloor;
  std::size_t count = 0;
};

// Population (divide-by-n) statistics with the std floor applied.
GaussianSummary summarize(std::span<const double> samples);

// KL(N(p) || N(q)).
double kl_gaussian(const GaussianSummary& p, const GaussianSummary& q);

// Running first/second moments, mergeable across threads.
class MomentAccumulator {
 public:
  void add(double x);
  void merge(const MomentAccumulator& other);
  std::size_t count() const { return count_; }
  GaussianSummary summary() const;

 private:
  std::size_t count_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

struct ContextTerm {
  std::size_t context = 0;
  GaussianSummary summary;
  double weight = 0.0;  // |R_c| / |R| over participating contexts
  double kl = 0.0;
};

struct DetectorReport {
  ContextKind kind = ContextKind::kCustom;
  std::size_t num_contexts = 0;
  double delta = 0.0;
  double log10_delta = 0.0;
  GaussianSummary marginal;
  std::vector<ContextTerm> per_context;
  std::vector<std::size_t> dropped_contexts;  // fewer than 2 residual entries

  bool strong(double threshold) const { return log10_delta >= threshold; }
};

// Prediction minus truth, flattened row-major (T*M entries) per sample.
struct SampleResiduals {
  std::int64_t anchor_t = 0;
  Vector residuals;
};

std::vector<SampleResiduals> residual_population(const Forecaster& model, const SampleBank& bank,
                                                 std::size_t begin, std::size_t end);

// Core score over already computed residuals; residuals[i] is labeled
// context.labels[i].
DetectorReport reconditionor_score(std::span<const SampleResiduals> residuals,
                                   const ContextAssignment& context);

// Computes residuals for bank samples [begin, end) and scores them.
DetectorReport reconditionor_score(const Forecaster& model, const SampleBank& bank,
                                   std::size_t begin, std::size_t end,
                                   const ContextAssignment& context);

// Diagnostics: delta restricted to one channel's (or one horizon step's)
// residual entries, averaged with equal weights across channels (steps).
double per_channel_delta(std::span<const SampleResiduals> residuals,
                         const ContextAssignment& context, std::size_t horizon,
                         std::size_t channels);
double per_horizon_delta(std::span<const SampleResiduals> residuals,
                         const ContextAssignment& context, std::size_t horizon,
                         std::size_t channels);

}  // namespace cds
