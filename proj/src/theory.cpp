#include "cds/theory.hpp"

#include <cmath>
#include <string>

namespace cds::theory {
namespace {

constexpr double kMaxCondition = 1e12;

// Cholesky of an SPD matrix with the condition-number guard used for
// "singular" throughout this module.
Eigen::LLT<Matrix> guarded_factor(const Matrix& gram, const std::string& what) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(gram, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (!(lo > 0.0) || hi / lo >= kMaxCondition) {
    throw Error(ErrorCode::kSingularDesign, what + " is numerically singular");
  }
  Eigen::LLT<Matrix> llt(gram);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::kSingularDesign, what + " factorization failed");
  }
  return llt;
}

Matrix psi(const ContextGroup& g) { return g.design.transpose() * g.design; }

double psi_norm_sq(const Matrix& psi_i, const Vector& v) { return v.dot(psi_i * v); }

// Factorizations reused across Monte-Carlo trials.
struct Solvers {
  std::vector<Matrix> psis;
  std::vector<Eigen::LLT<Matrix>> per_group;
  Eigen::LLT<Matrix> pooled;
};

Solvers build_solvers(const FixedDesignProblem& problem, Estimator estimator) {
  Solvers s;
  Matrix total = Matrix::Zero(static_cast<Eigen::Index>(problem.dim()),
                              static_cast<Eigen::Index>(problem.dim()));
  for (std::size_t i = 0; i < problem.groups.size(); ++i) {
    s.psis.push_back(psi(problem.groups[i]));
    total += s.psis.back();
    if (estimator == Estimator::kClr) {
      s.per_group.push_back(guarded_factor(s.psis.back(), "psi_" + std::to_string(i)));
    }
  }
  if (estimator == Estimator::kGlr) s.pooled = guarded_factor(total, "sum of psi_i");
  return s;
}

std::vector<Vector> fit_with(const FixedDesignProblem& problem, const Solvers& s,
                             Estimator estimator, const std::vector<Vector>& outputs) {
  const auto K = problem.groups.size();
  if (estimator == Estimator::kGlr) {
    Vector rhs = Vector::Zero(static_cast<Eigen::Index>(problem.dim()));
    for (std::size_t i = 0; i < K; ++i) rhs += problem.groups[i].design.transpose() * outputs[i];
    return std::vector<Vector>(K, s.pooled.solve(rhs));
  }
  std::vector<Vector> out;
  out.reserve(K);
  for (std::size_t i = 0; i < K; ++i) {
    out.push_back(s.per_group[i].solve(problem.groups[i].design.transpose() * outputs[i]));
  }
  return out;
}

void check_outputs(const FixedDesignProblem& problem, const std::vector<Vector>& outputs) {
  if (outputs.size() != problem.groups.size()) {
    throw Error(ErrorCode::kShapeMismatch, "one output vector per group required");
  }
  for (std::size_t i = 0; i < outputs.size(); ++i) {
    if (outputs[i].size() != problem.groups[i].design.rows()) {
      throw Error(ErrorCode::kShapeMismatch, "output length must equal n_i");
    }
  }
}

struct TrialResult {
  std::vector<Vector> params;
  double identity_risk = 0.0;
  double holdout_risk = 0.0;
};

TrialResult run_trial(const FixedDesignProblem& problem, const Solvers& s, Estimator estimator,
                      std::uint64_t seed, std::uint64_t trial) {
  auto rng = make_stream(seed, trial);
  const auto train = sample_problem_outputs(problem, rng);
  TrialResult r;
  r.params = fit_with(problem, s, estimator, train);
  r.identity_risk = excess_risk_of(problem, r.params);
  const auto fresh = sample_problem_outputs(problem, rng);
  double sse = 0.0;
  for (std::size_t i = 0; i < problem.groups.size(); ++i) {
    sse += (fresh[i] - problem.groups[i].design * r.params[i]).squaredNorm();
  }
  r.holdout_risk =
      sse - static_cast<double>(problem.total_samples()) * problem.sigma * problem.sigma;
  return r;
}

MonteCarloEstimate reduce(const FixedDesignProblem& problem, const Solvers& s,
                          const std::vector<TrialResult>& results) {
  const auto n = static_cast<double>(results.size());
  MonteCarloEstimate est;
  est.trials = results.size();
  auto mean_se = [&](auto&& get, double& mean, double& se) {
    double sum = 0.0;
    for (const auto& r : results) sum += get(r);
    mean = sum / n;
    double ss = 0.0;
    for (const auto& r : results) ss += (get(r) - mean) * (get(r) - mean);
    se = std::sqrt(ss / (n - 1.0) / n);
  };
  mean_se([](const TrialResult& r) { return r.identity_risk; }, est.estimate, est.standard_error);
  mean_se([](const TrialResult& r) { return r.holdout_risk; }, est.holdout_estimate,
          est.holdout_standard_error);

  for (std::size_t i = 0; i < problem.groups.size(); ++i) {
    Vector mean = Vector::Zero(static_cast<Eigen::Index>(problem.dim()));
    for (const auto& r : results) mean += r.params[i];
    mean /= n;
    est.bias_part += psi_norm_sq(s.psis[i], mean - problem.groups[i].theta);
    double var = 0.0;
    for (const auto& r : results) var += psi_norm_sq(s.psis[i], r.params[i] - mean);
    est.variance_part += var / n;
  }
  return est;
}

}  // namespace

void FixedDesignProblem::validate() const {
  if (groups.empty()) throw Error(ErrorCode::kInvalidArgument, "need K >= 1 groups");
  if (!(sigma >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "sigma must be >= 0");
  const auto d = groups.front().theta.size();
  if (d < 1) throw Error(ErrorCode::kInvalidArgument, "need d >= 1");
  for (const auto& g : groups) {
    if (g.design.rows() < 1) throw Error(ErrorCode::kInvalidArgument, "each n_i must be >= 1");
    if (g.design.cols() != d || g.theta.size() != d) {
      throw Error(ErrorCode::kShapeMismatch, "all groups must share d");
    }
  }
}

std::size_t FixedDesignProblem::total_samples() const {
  std::size_t n = 0;
  for (const auto& g : groups) n += static_cast<std::size_t>(g.design.rows());
  return n;
}

FixedDesignProblem FixedDesignProblem::random(std::size_t k, std::size_t d,
                                              std::size_t n_per_group, double sigma,
                                              double theta_scale, std::uint64_t seed) {
  auto rng = make_stream(seed, ~std::uint64_t{0});
  std::normal_distribution<double> normal(0.0, 1.0);
  FixedDesignProblem p;
  p.sigma = sigma;
  for (std::size_t i = 0; i < k; ++i) {
    ContextGroup g;
    g.design.resize(static_cast<Eigen::Index>(n_per_group), static_cast<Eigen::Index>(d));
    for (Eigen::Index c = 0; c < g.design.cols(); ++c) {
      for (Eigen::Index r = 0; r < g.design.rows(); ++r) g.design(r, c) = normal(rng);
    }
    g.theta.resize(static_cast<Eigen::Index>(d));
    for (Eigen::Index j = 0; j < g.theta.size(); ++j) g.theta(j) = theta_scale * normal(rng);
    p.groups.push_back(std::move(g));
  }
  return p;
}

std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32),
                    0x9e3779b9u};
  return std::mt19937_64(seq);
}

std::vector<Vector> sample_problem_outputs(const FixedDesignProblem& problem,
                                           std::mt19937_64& rng) {
  problem.validate();
  std::vector<Vector> out;
  out.reserve(problem.groups.size());
  std::normal_distribution<double> normal(0.0, problem.sigma > 0.0 ? problem.sigma : 1.0);
  const double half_width = std::sqrt(3.0) * problem.sigma;
  std::uniform_real_distribution<double> uniform(-half_width, half_width);
  for (const auto& g : problem.groups) {
    Vector y = g.design * g.theta;
    if (problem.sigma > 0.0) {
      for (Eigen::Index r = 0; r < y.size(); ++r) {
        y(r) += problem.noise == NoiseKind::kGaussian ? normal(rng) : uniform(rng);
      }
    }
    out.push_back(std::move(y));
  }
  return out;
}

std::vector<Vector> sample_problem_outputs(const FixedDesignProblem& problem, std::uint64_t seed) {
  auto rng = make_stream(seed, 0);
  return sample_problem_outputs(problem, rng);
}

Vector fit_glr(const FixedDesignProblem& problem, const std::vector<Vector>& outputs) {
  problem.validate();
  check_outputs(problem, outputs);
  const auto s = build_solvers(problem, Estimator::kGlr);
  return fit_with(problem, s, Estimator::kGlr, outputs).front();
}

std::vector<Vector> fit_clr(const FixedDesignProblem& problem, const std::vector<Vector>& outputs) {
  problem.validate();
  check_outputs(problem, outputs);
  const auto s = build_solvers(problem, Estimator::kClr);
  return fit_with(problem, s, Estimator::kClr, outputs);
}

Vector theta_bar(const FixedDesignProblem& problem) {
  problem.validate();
  const auto d = static_cast<Eigen::Index>(problem.dim());
  Matrix total = Matrix::Zero(d, d);
  Vector weighted = Vector::Zero(d);
  for (const auto& g : problem.groups) {
    const Matrix p = psi(g);
    total += p;
    weighted += p * g.theta;
  }
  return guarded_factor(total, "sum of psi_i").solve(weighted);
}

RiskBreakdown analytic_excess_risk_glr(const FixedDesignProblem& problem) {
  RiskBreakdown r;
  r.theta_bar = theta_bar(problem);
  for (const auto& g : problem.groups) r.bias += psi_norm_sq(psi(g), r.theta_bar - g.theta);
  r.variance = problem.sigma * problem.sigma * static_cast<double>(problem.dim());
  r.total = r.bias + r.variance;
  return r;
}

RiskBreakdown analytic_excess_risk_clr(const FixedDesignProblem& problem) {
  problem.validate();
  for (std::size_t i = 0; i < problem.groups.size(); ++i) {
    guarded_factor(psi(problem.groups[i]), "psi_" + std::to_string(i));
  }
  RiskBreakdown r;
  r.bias = 0.0;
  r.variance = static_cast<double>(problem.groups.size()) * problem.sigma * problem.sigma *
               static_cast<double>(problem.dim());
  r.total = r.variance;
  return r;
}

double excess_risk_of(const FixedDesignProblem& problem, const std::vector<Vector>& params) {
  if (params.size() != problem.groups.size()) {
    throw Error(ErrorCode::kShapeMismatch, "one parameter vector per group required");
  }
  double risk = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    risk += (problem.groups[i].design * (params[i] - problem.groups[i].theta)).squaredNorm();
  }
  return risk;
}

MonteCarloEstimate monte_carlo_excess_risk(const FixedDesignProblem& problem, Estimator estimator,
                                           std::size_t trials, std::uint64_t seed) {
  problem.validate();
  if (trials < 2) throw Error(ErrorCode::kInvalidArgument, "need at least 2 trials");
  const auto s = build_solvers(problem, estimator);
  std::vector<TrialResult> results(trials);
#pragma omp parallel for schedule(static)
  for (std::size_t t = 0; t < trials; ++t) {
    results[t] = run_trial(problem, s, estimator, seed, t);
  }
  return reduce(problem, s, results);
}

MonteCarloEstimate monte_carlo_excess_risk_serial(const FixedDesignProblem& problem,
                                                  Estimator estimator, std::size_t trials,
                                                  std::uint64_t seed) {
  problem.validate();
  if (trials < 2) throw Error(ErrorCode::kInvalidArgument, "need at least 2 trials");
  const auto s = build_solvers(problem, estimator);
  std::vector<TrialResult> results;
  results.reserve(trials);
  for (std::size_t t = 0; t < trials; ++t) results.push_back(run_trial(problem, s, estimator, seed, t));
  return reduce(problem, s, results);
}

}  // namespace cds::theory
