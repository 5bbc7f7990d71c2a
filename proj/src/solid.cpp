#include "cds/solid.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace cds {

void SolidParams::validate(std::size_t horizon) const {
  if (lambda_t < horizon) {
    throw Error(ErrorCode::kInvalidArgument, "lambda_T must be >= T");
  }
  if (!(lambda_p > 0.0 && lambda_p <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "lambda_P must lie in (0, 1]");
  }
  if (lambda_n < 1) throw Error(ErrorCode::kInvalidArgument, "lambda_N must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) {
    throw Error(ErrorCode::kInvalidArgument, "learning rate must be finite and >= 0");
  }
  if (period < 1) throw Error(ErrorCode::kInvalidArgument, "period must be >= 1");
}

double phase_difference(std::int64_t t, std::int64_t t_prime, std::size_t period, bool circular) {
  const auto p = static_cast<std::int64_t>(period);
  const auto phase = [p](std::int64_t x) { return ((x % p) + p) % p; };
  double d = std::abs(static_cast<double>(phase(t) - phase(t_prime))) / static_cast<double>(p);
  if (circular) d = std::min(d, 1.0 - d);
  return d;
}

std::vector<std::int64_t> candidate_anchors(std::int64_t t, std::int64_t first_available,
                                            std::int64_t last_available, const SolidParams& params,
                                            std::size_t horizon) {
  params.validate(horizon);
  const auto lo = std::max(t - static_cast<std::int64_t>(params.lambda_t), first_available);
  const auto hi = std::min(t - static_cast<std::int64_t>(horizon), last_available);
  std::vector<std::int64_t> out;
  for (auto tp = lo; tp <= hi; ++tp) {
    if (phase_difference(t, tp, params.period, params.circular_phase) < params.lambda_p) {
      out.push_back(tp);
    }
  }
  return out;
}

std::vector<std::size_t> candidate_indices(const SampleBank& bank, std::size_t test_index,
                                           const SolidParams& params, const PoolSpec& pool) {
  const std::int64_t t = bank.anchor(test_index);
  const auto T = static_cast<std::int64_t>(bank.horizon());
  std::int64_t hi = t - T;
  if (pool.pool_limit) hi = std::min(hi, *pool.pool_limit - T);
  std::vector<std::size_t> out;
  for (std::size_t i = bank.lower_bound(t - static_cast<std::int64_t>(params.lambda_t));
       i < bank.size() && bank.anchor(i) <= hi; ++i) {
    if (phase_difference(t, bank.anchor(i), params.period, params.circular_phase) <
        params.lambda_p) {
      out.push_back(i);
    }
  }
  return out;
}

ContextualizedDataset select_contextualized(const SampleBank& bank, std::size_t test_index,
                                            std::span<const std::size_t> candidate_indices,
                                            std::size_t lambda_n) {
  struct Ranked {
    double distance;
    std::int64_t anchor;
    std::size_t index;
  };
  std::vector<Ranked> ranked;
  ranked.reserve(candidate_indices.size());
  for (auto i : candidate_indices) {
    ranked.push_back({bank.squared_distance(i, test_index), bank.anchor(i), i});
  }
  const std::size_t keep = std::min(lambda_n, ranked.size());
  auto closer = [](const Ranked& a, const Ranked& b) {
    if (a.distance != b.distance) return a.distance < b.distance;
    return a.anchor > b.anchor;
  };
  std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(keep),
                    ranked.end(), closer);
  ContextualizedDataset out;
  for (std::size_t k = 0; k < keep; ++k) {
    out.indices.push_back(ranked[k].index);
    out.source_anchors.push_back(ranked[k].anchor);
    out.similarity_scores.push_back(-std::sqrt(ranked[k].distance));
  }
  return out;
}

namespace {

double dataset_mse(const Forecaster& model, const SampleBank& bank,
                   const ContextualizedDataset& dctx) {
  MetricAccumulator acc;
  for (auto j : dctx.indices) acc.add(model.predict(bank, j), bank.truth(j));
  return acc.result().mse;
}

}  // namespace

AdaptationResult adapt_and_predict(const Forecaster& model, const SampleBank& bank,
                                   std::size_t test_index, const ContextualizedDataset& dctx,
                                   const SolidParams& params, FallbackPolicy policy) {
  AdaptationResult result;
  result.base_forecast = model.predict(bank, test_index);
  result.trace.anchor_t = bank.anchor(test_index);
  result.trace.selected_anchors = dctx.source_anchors;

  if (dctx.empty()) {
    if (policy == FallbackPolicy::kError) {
      throw Error(ErrorCode::kInsufficientData,
                  "empty contextualized dataset at anchor " + std::to_string(result.trace.anchor_t));
    }
    result.forecast = result.base_forecast;
    result.trace.fallback = true;
    return result;
  }

  result.trace.pre_loss = dataset_mse(model, bank, dctx);
  const std::size_t batch = params.batch_size == 0 ? dctx.size() : params.batch_size;
  result.trace.steps = (dctx.size() + batch - 1) / batch;

  if (params.lr == 0.0) {
    result.forecast = result.base_forecast;
    result.trace.post_loss = result.trace.pre_loss;
    return result;
  }

  Forecaster adapted = model;
  std::vector<TrainingPair> pairs(dctx.size());
  for (std::size_t h = 0; h < model.heads().size(); ++h) {
    for (std::size_t k = 0; k < dctx.size(); ++k) {
      pairs[k].feature = bank.feature(dctx.indices[k], h);
      pairs[k].target = bank.target(dctx.indices[k], h);
    }
    adapted.mutable_heads()[h] = sgd_epoch(model.heads()[h], pairs, params.lr, params.batch_size);
  }
  bool finite = std::all_of(adapted.heads().begin(), adapted.heads().end(),
                            [](const PredictionHead& head) { return head.all_finite(); });
  Matrix adapted_forecast;
  if (finite) {
    // Finite weights can still overflow once applied.
    adapted_forecast = adapted.predict(bank, test_index);
    finite = adapted_forecast.allFinite();
  }
  if (!finite) {
    if (policy == FallbackPolicy::kError) {
      throw Error(ErrorCode::kNonFiniteUpdate,
                  "head diverged at anchor " + std::to_string(result.trace.anchor_t));
    }
    result.forecast = result.base_forecast;
    result.trace.fallback = true;
    result.trace.non_finite = true;
    result.trace.post_loss = result.trace.pre_loss;
    return result;
  }
  result.forecast = std::move(adapted_forecast);
  result.trace.post_loss = dataset_mse(adapted, bank, dctx);
  return result;
}

Matrix one_step_direction(const Forecaster& model, const SampleBank& bank,
                          std::size_t test_index, const ContextualizedDataset& dctx,
                          std::span<const Matrix> base_residuals) {
  const auto T = static_cast<Eigen::Index>(bank.horizon());
  const auto M = static_cast<Eigen::Index>(bank.channels());
  if (dctx.empty()) return Matrix::Zero(T, M);
  const double scale =
      2.0 / (static_cast<double>(dctx.size()) * static_cast<double>(bank.head_output_dim()));
  std::vector<Vector> directions;
  for (std::size_t h = 0; h < model.heads().size(); ++h) {
    const auto f_test = bank.feature(test_index, h);
    Vector dir = Vector::Zero(static_cast<Eigen::Index>(bank.head_output_dim()));
    for (auto j : dctx.indices) {
      Vector r;
      if (base_residuals.empty()) {
        r = model.heads()[h].apply(bank.feature(j, h)) - bank.target(j, h);
      } else if (bank.layout() == HeadLayout::kJoint) {
        r = flatten_row_major(base_residuals[j]);
      } else {
        r = base_residuals[j].col(static_cast<Eigen::Index>(h));
      }
      dir += (bank.feature(j, h).dot(f_test) + 1.0) * r;
    }
    directions.push_back(scale * dir);
  }
  return model.assemble(directions);
}

double improvement_percent(double base, double adapted) {
  if (base == 0.0) return 0.0;
  return (base - adapted) / base * 100.0;
}

namespace {

SolidSample adapt_one(const Forecaster& model, const SampleBank& bank, std::size_t i,
                      const SolidParams& params, const PoolSpec& pool, FallbackPolicy policy) {
  const auto candidates = candidate_indices(bank, i, params, pool);
  const auto dctx = select_contextualized(bank, i, candidates, params.lambda_n);
  auto result = adapt_and_predict(model, bank, i, dctx, params, policy);
  const Matrix truth = bank.truth(i);
  SolidSample s;
  s.index = i;
  s.base_mse = (result.base_forecast - truth).array().square().mean();
  s.adapted_mse = (result.forecast - truth).array().square().mean();
  s.base_forecast = std::move(result.base_forecast);
  s.forecast = std::move(result.forecast);
  s.trace = std::move(result.trace);
  return s;
}

SolidRun finish(const SampleBank& bank, std::vector<SolidSample> samples) {
  SolidRun run;
  MetricAccumulator base;
  MetricAccumulator adapted;
  for (const auto& s : samples) {
    const Matrix truth = bank.truth(s.index);
    base.add(s.base_forecast, truth);
    adapted.add(s.forecast, truth);
    if (s.trace.fallback) ++run.fallback_count;
  }
  if (!samples.empty()) {
    run.baseline = base.result();
    run.adapted = adapted.result();
  }
  run.samples = std::move(samples);
  return run;
}

void check_run_args(const Forecaster& model, const SampleBank& bank, std::size_t begin,
                    std::size_t end, const SolidParams& params) {
  model.check_compatible(bank);
  params.validate(bank.horizon());
  if (begin > end || end > bank.size()) {
    throw Error(ErrorCode::kInvalidArgument, "test sample range out of bounds");
  }
}

}  // namespace

SolidRun run_solid(const Forecaster& model, const SampleBank& bank, std::size_t begin,
                   std::size_t end, const SolidParams& params, const PoolSpec& pool,
                   FallbackPolicy policy) {
  check_run_args(model, bank, begin, end, params);
  std::vector<SolidSample> samples(end - begin);
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic, 16)
  for (std::size_t i = begin; i < end; ++i) {
    try {
      samples[i - begin] = adapt_one(model, bank, i, params, pool, policy);
    } catch (...) {
#pragma omp critical(cds_solid_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return finish(bank, std::move(samples));
}

SolidRun run_solid_serial(const Forecaster& model, const SampleBank& bank, std::size_t begin,
                          std::size_t end, const SolidParams& params, const PoolSpec& pool,
                          FallbackPolicy policy) {
  check_run_args(model, bank, begin, end, params);
  std::vector<SolidSample> samples;
  samples.reserve(end - begin);
  for (std::size_t i = begin; i < end; ++i) {
    samples.push_back(adapt_one(model, bank, i, params, pool, policy));
  }
  return finish(bank, std::move(samples));
}

std::size_t count_causality_violations(const SolidRun& run, std::size_t horizon) {
  std::size_t violations = 0;
  for (const auto& s : run.samples) {
    for (auto tp : s.trace.selected_anchors) {
      if (tp + static_cast<std::int64_t>(horizon) > s.trace.anchor_t) ++violations;
    }
  }
  return violations;
}

}  // namespace cds
