#pragma once

// Fixed-design, multi-context linear regression: closed-form global (GLR)
// and per-context (CLR) regressors, their analytic excess risks, and a
// Monte-Carlo oracle that estimates the same quantities by simulation.

#include <cstdint>
#include <random>
#include <vector>

#include "cds/core.hpp"

namespace cds::theory {

struct ContextGroup {
  Matrix design;  // n_i x d
  Vector theta;   // d
};

enum class NoiseKind { kGaussian, kUniform };

struct FixedDesignProblem {
  std::vector<ContextGroup> groups;
  double sigma = 1.0;
  NoiseKind noise = NoiseKind::kGaussian;

  void validate() const;
  std::size_t dim() const { return static_cast<std::size_t>(groups.front().theta.size()); }
  std::size_t total_samples() const;

  // K groups of n_per_group x d i.i.d. N(0, 1) designs and N(0, theta_scale^2)
  // truths, drawn from `seed`.
  static FixedDesignProblem random(std::size_t k, std::size_t d, std::size_t n_per_group,
                                   double sigma, double theta_scale, std::uint64_t seed);
};

struct RiskBreakdown {
  double bias = 0.0;
  double variance = 0.0;
  double total = 0.0;
  Vector theta_bar;  // psi-weighted mean of the truths (GLR only)
};

// Independent generator for (seed, stream); schedule-free parallel trials.
std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t stream);

std::vector<Vector> sample_problem_outputs(const FixedDesignProblem& problem, std::mt19937_64& rng);
std::vector<Vector> sample_problem_outputs(const FixedDesignProblem& problem, std::uint64_t seed);

Vector fit_glr(const FixedDesignProblem& problem, const std::vector<Vector>& outputs);
std::vector<Vector> fit_clr(const FixedDesignProblem& problem, const std::vector<Vector>& outputs);

// (sum psi_i)^-1 (sum psi_i theta_i).
Vector theta_bar(const FixedDesignProblem& problem);

RiskBreakdown analytic_excess_risk_glr(const FixedDesignProblem& problem);
RiskBreakdown analytic_excess_risk_clr(const FixedDesignProblem& problem);

// sum_i ||alpha_i - theta_i||^2_{psi_i}.
double excess_risk_of(const FixedDesignProblem& problem, const std::vector<Vector>& params);

enum class Estimator { kGlr, kClr };

struct MonteCarloEstimate {
  double estimate = 0.0;        // mean excess risk via the psi-norm identity
  double standard_error = 0.0;
  double holdout_estimate = 0.0;  // mean of sum ||Y' - X alpha||^2 - n sigma^2 on fresh noise
  double holdout_standard_error = 0.0;
  // Bias/variance split: ||E[alpha] - theta||^2 + E||alpha - E[alpha]||^2.
  double bias_part = 0.0;
  double variance_part = 0.0;
  std::size_t trials = 0;
};

MonteCarloEstimate monte_carlo_excess_risk(const FixedDesignProblem& problem, Estimator estimator,
                                           std::size_t trials, std::uint64_t seed);
MonteCarloEstimate monte_carlo_excess_risk_serial(const FixedDesignProblem& problem,
                                                  Estimator estimator, std::size_t trials,
                                                  std::uint64_t seed);

}  // namespace cds::theory
