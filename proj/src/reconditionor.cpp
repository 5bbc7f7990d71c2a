#include "cds/reconditionor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>

namespace cds {

const char* context_kind_name(ContextKind kind) {
  switch (kind) {
    case ContextKind::kPeriodicPhase: return "periodic_phase";
    case ContextKind::kTemporalSegment: return "temporal_segment";
    case ContextKind::kCustom: return "custom";
  }
  return "custom";
}

void ContextAssignment::validate() const {
  if (num_contexts < 1) throw Error(ErrorCode::kInvalidArgument, "need K >= 1 contexts");
  for (auto c : labels) {
    if (c >= num_contexts) {
      throw Error(ErrorCode::kInvalidArgument, "context label out of range");
    }
  }
}

ContextAssignment phase_context(std::span<const std::int64_t> anchors, std::size_t period) {
  if (period < 1) throw Error(ErrorCode::kInvalidArgument, "period must be >= 1");
  ContextAssignment out{ContextKind::kPeriodicPhase, period, {}};
  out.labels.reserve(anchors.size());
  const auto p = static_cast<std::int64_t>(period);
  for (auto t : anchors) out.labels.push_back(static_cast<std::size_t>(((t % p) + p) % p));
  return out;
}

ContextAssignment segment_context(std::size_t num_anchors, std::size_t num_segments) {
  if (num_segments < 1) throw Error(ErrorCode::kInvalidArgument, "need >= 1 segment");
  if (num_anchors == 0) throw Error(ErrorCode::kEmptyInput, "no anchors to segment");
  ContextAssignment out{ContextKind::kTemporalSegment, num_segments, {}};
  const std::size_t block = num_anchors / num_segments;
  out.labels.reserve(num_anchors);
  for (std::size_t i = 0; i < num_anchors; ++i) {
    out.labels.push_back(block == 0 ? num_segments - 1 : std::min(i / block, num_segments - 1));
  }
  return out;
}

void MomentAccumulator::add(double x) {
  ++count_;
  const double d = x - mean_;
  mean_ += d / static_cast<double>(count_);
  m2_ += d * (x - mean_);
}

void MomentAccumulator::merge(const MomentAccumulator& other) {
  if (other.count_ == 0) return;
  if (count_ == 0) {
    *this = other;
    return;
  }
  const double na = static_cast<double>(count_);
  const double nb = static_cast<double>(other.count_);
  const double n = na + nb;
  const double d = other.mean_ - mean_;
  mean_ += d * nb / n;
  m2_ += other.m2_ + d * d * na * nb / n;
  count_ += other.count_;
}

GaussianSummary MomentAccumulator::summary() const {
  GaussianSummary s;
  s.count = count_;
  s.mean = mean_;
  const double var = count_ > 0 ? std::max(m2_, 0.0) / static_cast<double>(count_) : 0.0;
  s.std = std::max(std::sqrt(var), GaussianSummary::kStdFloor);
  return s;
}

GaussianSummary summarize(std::span<const double> samples) {
  if (samples.empty()) throw Error(ErrorCode::kEmptyInput, "cannot summarize zero samples");
  MomentAccumulator acc;
  for (double x : samples) acc.add(x);
  return acc.summary();
}

double kl_gaussian(const GaussianSummary& p, const GaussianSummary& q) {
  const double sp = std::max(p.std, GaussianSummary::kStdFloor);
  const double sq = std::max(q.std, GaussianSummary::kStdFloor);
  const double dm = p.mean - q.mean;
  const double kl = std::log(sq / sp) + (sp * sp + dm * dm) / (2.0 * sq * sq) - 0.5;
  return std::max(kl, 0.0);
}

std::vector<SampleResiduals> residual_population(const Forecaster& model, const SampleBank& bank,
                                                 std::size_t begin, std::size_t end) {
  model.check_compatible(bank);
  if (begin >= end || end > bank.size()) {
    throw Error(ErrorCode::kEmptyInput, "residual population needs a nonempty sample range");
  }
  std::vector<SampleResiduals> out(end - begin);
#pragma omp parallel for schedule(static)
  for (std::size_t i = begin; i < end; ++i) {
    const Matrix residual = model.predict(bank, i) - bank.truth(i);
    out[i - begin] = {bank.anchor(i), flatten_row_major(residual)};
  }
  return out;
}

namespace {

// Shared scoring loop; `select` restricts which flattened entries count.
DetectorReport score_entries(std::span<const SampleResiduals> residuals,
                             const ContextAssignment& context,
                             const std::function<bool(std::size_t)>& select) {
  context.validate();
  if (context.labels.size() != residuals.size()) {
    throw Error(ErrorCode::kShapeMismatch, "one context label per residual sample required");
  }
  std::vector<MomentAccumulator> per(context.num_contexts);
  for (std::size_t i = 0; i < residuals.size(); ++i) {
    auto& acc = per[context.labels[i]];
    const auto& r = residuals[i].residuals;
    for (Eigen::Index k = 0; k < r.size(); ++k) {
      if (!select || select(static_cast<std::size_t>(k))) acc.add(r(k));
    }
  }
  MomentAccumulator all;
  for (const auto& acc : per) all.merge(acc);
  if (all.count() < 2) {
    throw Error(ErrorCode::kInsufficientData, "need at least 2 residual entries");
  }

  DetectorReport report;
  report.kind = context.kind;
  report.num_contexts = context.num_contexts;
  report.marginal = all.summary();
  std::size_t participating = 0;
  for (std::size_t c = 0; c < per.size(); ++c) {
    if (per[c].count() < 2) {
      report.dropped_contexts.push_back(c);
    } else {
      participating += per[c].count();
    }
  }
  if (participating == 0) {
    throw Error(ErrorCode::kInsufficientData, "every context has fewer than 2 residual entries");
  }
  double delta = 0.0;
  for (std::size_t c = 0; c < per.size(); ++c) {
    if (per[c].count() < 2) continue;
    ContextTerm term;
    term.context = c;
    term.summary = per[c].summary();
    term.weight = static_cast<double>(per[c].count()) / static_cast<double>(participating);
    term.kl = kl_gaussian(term.summary, report.marginal);
    delta += term.weight * term.kl;
    report.per_context.push_back(term);
  }
  report.delta = std::max(delta, 0.0);
  report.log10_delta = report.delta > 0.0 ? std::log10(report.delta)
                                          : -std::numeric_limits<double>::infinity();
  return report;
}

}  // namespace

DetectorReport reconditionor_score(std::span<const SampleResiduals> residuals,
                                   const ContextAssignment& context) {
  return score_entries(residuals, context, {});
}

DetectorReport reconditionor_score(const Forecaster& model, const SampleBank& bank,
                                   std::size_t begin, std::size_t end,
                                   const ContextAssignment& context) {
  const auto residuals = residual_population(model, bank, begin, end);
  return reconditionor_score(residuals, context);
}

double per_channel_delta(std::span<const SampleResiduals> residuals,
                         const ContextAssignment& context, std::size_t horizon,
                         std::size_t channels) {
  double sum = 0.0;
  for (std::size_t m = 0; m < channels; ++m) {
    sum += score_entries(residuals, context, [=](std::size_t k) {
             return k < horizon * channels && k % channels == m;
           }).delta;
  }
  return sum / static_cast<double>(channels);
}

double per_horizon_delta(std::span<const SampleResiduals> residuals,
                         const ContextAssignment& context, std::size_t horizon,
                         std::size_t channels) {
  double sum = 0.0;
  for (std::size_t h = 0; h < horizon; ++h) {
    sum += score_entries(residuals, context, [=](std::size_t k) { return k / channels == h; }).delta;
  }
  return sum / static_cast<double>(horizon);
}

}  // namespace cds
