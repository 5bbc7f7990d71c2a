#pragma once

// Time-series containers, sliding windows, chronological splits,
// standardization and pooled forecast metrics.

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "cds/error.hpp"

namespace cds {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// N x M real series. Storage is column-major, so each channel is a
// contiguous run of N values.
class TimeSeries {
 public:
  TimeSeries(Matrix values, std::vector<std::string> channel_names,
             std::int64_t start_index = 0,
             std::vector<std::string> timestamps = {});

  // Channel names default to "c0", "c1", ...
  static TimeSeries from_values(Matrix values, std::int64_t start_index = 0);

  std::size_t length() const { return static_cast<std::size_t>(values_.rows()); }
  std::size_t channels() const { return static_cast<std::size_t>(values_.cols()); }
  const Matrix& values() const { return values_; }
  const std::vector<std::string>& channel_names() const { return channel_names_; }
  const std::vector<std::string>& timestamps() const { return timestamps_; }
  std::int64_t start_index() const { return start_index_; }

  // Rows [offset, offset + count). An empty slice is allowed and carries no
  // invariant checks beyond the channel names.
  TimeSeries slice(std::size_t offset, std::size_t count) const;

 private:
  TimeSeries() = default;

  Matrix values_;
  std::vector<std::string> channel_names_;
  std::int64_t start_index_ = 0;
  std::vector<std::string> timestamps_;
};

struct WindowSample {
  std::int64_t anchor_t = 0;  // first forecast step, relative to the series
  Matrix history;             // L x M, rows anchor_t-L .. anchor_t-1
  Matrix future;              // T x M, rows anchor_t .. anchor_t+T-1
};

// Anchors t = L, L+stride, ... with t + T <= N.
std::vector<std::int64_t> window_anchors(std::size_t n, std::size_t lookback,
                                         std::size_t horizon, std::size_t stride = 1);

std::vector<WindowSample> make_windows(const TimeSeries& series, std::size_t lookback,
                                       std::size_t horizon, std::size_t stride = 1);

class SplitSpec {
 public:
  SplitSpec(double train, double val, double test);

  double train() const { return ratios_[0]; }
  double val() const { return ratios_[1]; }
  double test() const { return ratios_[2]; }

  // (train, val, test) lengths for a series of length n.
  std::array<std::size_t, 3> lengths(std::size_t n) const;

 private:
  std::array<double, 3> ratios_;
};

struct SplitSeries {
  TimeSeries train;
  TimeSeries val;
  TimeSeries test;
};

SplitSeries chronological_split(const TimeSeries& series, const SplitSpec& spec);

class Standardizer {
 public:
  static constexpr double kStdFloor = 1e-8;

  Standardizer(Vector mean, Vector std);

  // Per-channel population statistics of `train`.
  static Standardizer fit(const TimeSeries& train);

  const Vector& mean() const { return mean_; }
  const Vector& std() const { return std_; }

  TimeSeries transform(const TimeSeries& series) const;
  TimeSeries inverse_transform(const TimeSeries& series) const;

 private:
  Vector mean_;
  Vector std_;
};

struct ErrorMetrics {
  double mse = 0.0;
  double mae = 0.0;
};

ErrorMetrics mse_mae(std::span<const Matrix> predictions, std::span<const Matrix> truths);

// Streaming accumulator with the same pooling as mse_mae.
class MetricAccumulator {
 public:
  void add(const Matrix& prediction, const Matrix& truth);
  void merge(const MetricAccumulator& other);
  std::size_t count() const { return count_; }
  ErrorMetrics result() const;

 private:
  double sum_sq_ = 0.0;
  double sum_abs_ = 0.0;
  std::size_t count_ = 0;
};

// Header row required. If the first field of the first data row does not
// parse as a number, the first column is kept as timestamp metadata.
TimeSeries read_csv(const std::string& path);
TimeSeries parse_csv(std::istream& in, const std::string& source_name = "<stream>");
void write_csv(const TimeSeries& series, std::ostream& out);

}  // namespace cds
