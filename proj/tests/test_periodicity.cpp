#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "cds/periodicity.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using cds::Matrix;
using cds::TimeSeries;

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

Matrix sinusoid(std::size_t n, double period, double amplitude = 1.0, double phase = 0.0) {
  Matrix v(static_cast<Eigen::Index>(n), 1);
  for (std::size_t t = 0; t < n; ++t) {
    v(static_cast<Eigen::Index>(t), 0) = amplitude * std::sin(kTwoPi * t / period + phase);
  }
  return v;
}

std::vector<std::vector<double>> columns(const Matrix& v) {
  std::vector<std::vector<double>> out;
  for (Eigen::Index j = 0; j < v.cols(); ++j) {
    out.emplace_back(v.col(j).data(), v.col(j).data() + v.rows());
  }
  return out;
}

}  // namespace

TEST(Periodicity, PureSinusoid) {
  const auto est = cds::dominant_period(TimeSeries::from_values(sinusoid(8760, 24)));
  EXPECT_EQ(est.period, 24u);
  EXPECT_EQ(est.dominant_frequency_index, 365u);
  EXPECT_NEAR(est.aggregate_amplitude, 8760.0 / 2.0, 1e-6);
}

TEST(Periodicity, LargerHarmonicWins) {
  const Matrix v = sinusoid(1680, 24, 3.0) + sinusoid(1680, 7, 1.0);
  const auto s = TimeSeries::from_values(v);
  EXPECT_EQ(cds::dominant_period(s).period, 24u);
  EXPECT_EQ(oracle::dft_period(columns(v)), 24u);
}

TEST(Periodicity, SpectrumMatchesBruteForceDft) {
  std::mt19937_64 rng(21);
  Matrix v = oracle::random_matrix(rng, 301, 3);
  v.col(1) += sinusoid(301, 12.5, 2.0);
  const auto spectrum = cds::aggregate_amplitude_spectrum(TimeSeries::from_values(v));
  std::vector<double> expected(301 / 2 + 1, 0.0);
  for (const auto& c : columns(v)) {
    const auto a = oracle::dft_amplitude(c);
    for (std::size_t k = 0; k < a.size(); ++k) expected[k] += a[k];
  }
  ASSERT_EQ(spectrum.size(), expected.size());
  for (std::size_t k = 0; k < expected.size(); ++k) EXPECT_NEAR(spectrum[k], expected[k], 1e-9);
  EXPECT_EQ(cds::dominant_period(TimeSeries::from_values(v)).period, oracle::dft_period(columns(v)));
}

TEST(Periodicity, DegenerateAndShortSeries) {
  EXPECT_EQ(code_of([] { cds::dominant_period(TimeSeries::from_values(Matrix::Constant(100, 2, 3.5))); }),
            cds::ErrorCode::kDegenerateSeries);
  EXPECT_EQ(code_of([] { cds::dominant_period(TimeSeries::from_values(Matrix::Ones(3, 1))); }),
            cds::ErrorCode::kSeriesTooShort);
}

TEST(Periodicity, InvariantToOffsetsAndCommonScale) {
  std::mt19937_64 rng(4);
  Matrix v = 0.5 * oracle::random_matrix(rng, 960, 2);
  v.col(0) += sinusoid(960, 24);
  v.col(1) += sinusoid(960, 48, 0.7);
  const auto base = cds::aggregate_amplitude_spectrum(TimeSeries::from_values(v));
  const auto k = cds::dominant_period(TimeSeries::from_values(v)).dominant_frequency_index;

  Matrix shifted = v;
  shifted.col(0).array() += 100.0;
  shifted.col(1).array() -= 7.0;
  const auto s = cds::aggregate_amplitude_spectrum(TimeSeries::from_values(shifted));
  for (std::size_t i = 0; i < base.size(); ++i) EXPECT_NEAR(s[i], base[i], 1e-8);

  for (double c : {0.01, 3.0, 250.0}) {
    const Matrix scaled = c * v;
    EXPECT_EQ(cds::dominant_period(TimeSeries::from_values(scaled)).dominant_frequency_index, k);
  }
}

TEST(Periodicity, ChannelScaleIsLinear) {
  std::mt19937_64 rng(8);
  const Matrix a = oracle::random_matrix(rng, 200, 1);
  const Matrix b = oracle::random_matrix(rng, 200, 1);
  Matrix both(200, 2);
  both << a, b;
  Matrix scaled = both;
  scaled.col(1) *= 4.0;
  const auto sa = cds::aggregate_amplitude_spectrum(TimeSeries::from_values(a));
  const auto sb = cds::aggregate_amplitude_spectrum(TimeSeries::from_values(b));
  const auto s = cds::aggregate_amplitude_spectrum(TimeSeries::from_values(scaled));
  for (std::size_t k = 0; k < s.size(); ++k) EXPECT_NEAR(s[k], sa[k] + 4.0 * sb[k], 1e-9);
}

TEST(Periodicity, ExactWhenPeriodDividesLength) {
  for (double p : {4.0, 7.0, 12.0, 24.0, 168.0}) {
    for (double phase : {0.0, 1.1}) {
      const auto est = cds::dominant_period(TimeSeries::from_values(sinusoid(1680, p, 1.0, phase)));
      EXPECT_EQ(est.period, static_cast<std::size_t>(p)) << p;
    }
  }
}

TEST(Periodicity, FloorWhenNotIntegral) {
  // 100 samples, 7 cycles: k = 7, period floor(100 / 7) = 14.
  const auto est = cds::dominant_period(TimeSeries::from_values(sinusoid(100, 100.0 / 7.0)));
  EXPECT_EQ(est.dominant_frequency_index, 7u);
  EXPECT_EQ(est.period, 14u);
}
