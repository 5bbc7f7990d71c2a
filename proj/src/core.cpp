#include "cds/core.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

namespace cds {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kSeriesTooShort: return "SeriesTooShort";
    case ErrorCode::kEmptyInput: return "EmptyInput";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kSingularDesign: return "SingularDesign";
    case ErrorCode::kDegenerateSeries: return "DegenerateSeries";
    case ErrorCode::kInsufficientData: return "InsufficientData";
    case ErrorCode::kFormatError: return "FormatError";
    case ErrorCode::kEmptyGrid: return "EmptyGrid";
    case ErrorCode::kIoError: return "IoError";
    case ErrorCode::kNonFiniteUpdate: return "NonFiniteUpdate";
  }
  return "Unknown";
}

TimeSeries::TimeSeries(Matrix values, std::vector<std::string> channel_names,
                       std::int64_t start_index, std::vector<std::string> timestamps)
    : values_(std::move(values)),
      channel_names_(std::move(channel_names)),
      start_index_(start_index),
      timestamps_(std::move(timestamps)) {
  if (values_.rows() < 1 || values_.cols() < 1) {
    throw Error(ErrorCode::kInvalidArgument, "time series needs N >= 1 and M >= 1");
  }
  if (!values_.allFinite()) {
    throw Error(ErrorCode::kInvalidArgument, "time series contains non-finite values");
  }
  if (channel_names_.size() != static_cast<std::size_t>(values_.cols())) {
    throw Error(ErrorCode::kInvalidArgument, "channel_names length must equal M");
  }
  std::set<std::string> unique(channel_names_.begin(), channel_names_.end());
  if (unique.size() != channel_names_.size()) {
    throw Error(ErrorCode::kInvalidArgument, "channel names must be unique");
  }
  if (!timestamps_.empty() && timestamps_.size() != static_cast<std::size_t>(values_.rows())) {
    throw Error(ErrorCode::kInvalidArgument, "timestamps length must equal N");
  }
}

TimeSeries TimeSeries::from_values(Matrix values, std::int64_t start_index) {
  std::vector<std::string> names;
  for (Eigen::Index m = 0; m < values.cols(); ++m) names.push_back("c" + std::to_string(m));
  return TimeSeries(std::move(values), std::move(names), start_index);
}

TimeSeries TimeSeries::slice(std::size_t offset, std::size_t count) const {
  if (offset + count > length()) {
    throw Error(ErrorCode::kInvalidArgument, "slice out of range");
  }
  TimeSeries out;
  out.values_ = values_.middleRows(static_cast<Eigen::Index>(offset),
                                   static_cast<Eigen::Index>(count));
  out.channel_names_ = channel_names_;
  out.start_index_ = start_index_ + static_cast<std::int64_t>(offset);
  if (!timestamps_.empty()) {
    out.timestamps_.assign(timestamps_.begin() + static_cast<std::ptrdiff_t>(offset),
                           timestamps_.begin() + static_cast<std::ptrdiff_t>(offset + count));
  }
  return out;
}

std::vector<std::int64_t> window_anchors(std::size_t n, std::size_t lookback,
                                         std::size_t horizon, std::size_t stride) {
  if (lookback < 1 || horizon < 1 || stride < 1) {
    throw Error(ErrorCode::kInvalidArgument, "L, T and stride must be >= 1");
  }
  if (n < lookback + horizon) {
    throw Error(ErrorCode::kSeriesTooShort,
                "series length " + std::to_string(n) + " < L + T = " +
                    std::to_string(lookback + horizon));
  }
  std::vector<std::int64_t> anchors;
  anchors.reserve((n - lookback - horizon) / stride + 1);
  for (std::size_t t = lookback; t + horizon <= n; t += stride) {
    anchors.push_back(static_cast<std::int64_t>(t));
  }
  return anchors;
}

std::vector<WindowSample> make_windows(const TimeSeries& series, std::size_t lookback,
                                       std::size_t horizon, std::size_t stride) {
  const auto anchors = window_anchors(series.length(), lookback, horizon, stride);
  const auto& v = series.values();
  const auto L = static_cast<Eigen::Index>(lookback);
  const auto T = static_cast<Eigen::Index>(horizon);
  std::vector<WindowSample> windows;
  windows.reserve(anchors.size());
  for (auto t : anchors) {
    const auto ti = static_cast<Eigen::Index>(t);
    windows.push_back({t, v.middleRows(ti - L, L), v.middleRows(ti, T)});
  }
  return windows;
}

SplitSpec::SplitSpec(double train, double val, double test) : ratios_{train, val, test} {
  for (double r : ratios_) {
    if (!(r >= 0.0 && r <= 1.0)) {
      throw Error(ErrorCode::kInvalidArgument, "split ratios must lie in [0, 1]");
    }
  }
  if (std::abs(train + val + test - 1.0) > 1e-12) {
    throw Error(ErrorCode::kInvalidArgument, "split ratios must sum to 1");
  }
}

std::array<std::size_t, 3> SplitSpec::lengths(std::size_t n) const {
  // A tiny epsilon keeps exact products such as 10 * 0.7 from flooring to 6.
  auto floor_len = [n](double r) {
    return static_cast<std::size_t>(std::floor(static_cast<double>(n) * r + 1e-9));
  };
  std::size_t train = std::min(floor_len(ratios_[0]), n);
  std::size_t val = std::min(floor_len(ratios_[1]), n - train);
  return {train, val, n - train - val};
}

SplitSeries chronological_split(const TimeSeries& series, const SplitSpec& spec) {
  if (series.length() < 3) {
    throw Error(ErrorCode::kSeriesTooShort, "chronological split needs N >= 3");
  }
  const auto [n_train, n_val, n_test] = spec.lengths(series.length());
  return {series.slice(0, n_train), series.slice(n_train, n_val),
          series.slice(n_train + n_val, n_test)};
}

Standardizer::Standardizer(Vector mean, Vector std) : mean_(std::move(mean)), std_(std::move(std)) {
  if (mean_.size() != std_.size()) {
    throw Error(ErrorCode::kShapeMismatch, "standardizer mean/std length mismatch");
  }
  std_ = std_.cwiseMax(kStdFloor);
}

Standardizer Standardizer::fit(const TimeSeries& train) {
  if (train.length() == 0) {
    throw Error(ErrorCode::kEmptyInput, "cannot fit standardizer on an empty series");
  }
  const auto& v = train.values();
  Vector mean = v.colwise().mean();
  Vector std = ((v.rowwise() - mean.transpose()).array().square().colwise().mean()).sqrt();
  return Standardizer(std::move(mean), std::move(std));
}

TimeSeries Standardizer::transform(const TimeSeries& series) const {
  if (static_cast<Eigen::Index>(series.channels()) != mean_.size()) {
    throw Error(ErrorCode::kShapeMismatch, "standardizer channel count mismatch");
  }
  Matrix out = (series.values().rowwise() - mean_.transpose()).array().rowwise() /
               std_.transpose().array();
  return TimeSeries(std::move(out), series.channel_names(), series.start_index(),
                    series.timestamps());
}

TimeSeries Standardizer::inverse_transform(const TimeSeries& series) const {
  if (static_cast<Eigen::Index>(series.channels()) != mean_.size()) {
    throw Error(ErrorCode::kShapeMismatch, "standardizer channel count mismatch");
  }
  Matrix out = (series.values().array().rowwise() * std_.transpose().array()).matrix().rowwise() +
               mean_.transpose();
  return TimeSeries(std::move(out), series.channel_names(), series.start_index(),
                    series.timestamps());
}

void MetricAccumulator::add(const Matrix& prediction, const Matrix& truth) {
  if (prediction.rows() != truth.rows() || prediction.cols() != truth.cols()) {
    throw Error(ErrorCode::kShapeMismatch, "prediction and truth shapes differ");
  }
  const auto diff = (prediction - truth).array();
  sum_sq_ += diff.square().sum();
  sum_abs_ += diff.abs().sum();
  count_ += static_cast<std::size_t>(diff.size());
}

void MetricAccumulator::merge(const MetricAccumulator& other) {
  sum_sq_ += other.sum_sq_;
  sum_abs_ += other.sum_abs_;
  count_ += other.count_;
}

ErrorMetrics MetricAccumulator::result() const {
  if (count_ == 0) throw Error(ErrorCode::kEmptyInput, "no samples accumulated");
  const auto n = static_cast<double>(count_);
  return {sum_sq_ / n, sum_abs_ / n};
}

ErrorMetrics mse_mae(std::span<const Matrix> predictions, std::span<const Matrix> truths) {
  if (predictions.empty()) throw Error(ErrorCode::kEmptyInput, "no predictions");
  if (predictions.size() != truths.size()) {
    throw Error(ErrorCode::kShapeMismatch, "prediction and truth counts differ");
  }
  const auto rows = predictions.front().rows();
  const auto cols = predictions.front().cols();
  MetricAccumulator acc;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i].rows() != rows || predictions[i].cols() != cols) {
      throw Error(ErrorCode::kShapeMismatch, "all samples must share one shape");
    }
    acc.add(predictions[i], truths[i]);
  }
  return acc.result();
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) {
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ')) field.pop_back();
    std::size_t start = field.find_first_not_of(' ');
    fields.push_back(start == std::string::npos ? std::string() : field.substr(start));
  }
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

bool parse_double(const std::string& text, double& out) {
  if (text.empty()) return false;
  const char* first = text.data();
  const char* last = text.data() + text.size();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

}  // namespace

TimeSeries parse_csv(std::istream& in, const std::string& source_name) {
  std::string line;
  if (!std::getline(in, line)) {
    throw Error(ErrorCode::kFormatError, source_name + ": missing header row");
  }
  const auto header = split_fields(line);
  if (header.empty()) throw Error(ErrorCode::kFormatError, source_name + ": empty header");

  std::vector<std::vector<double>> rows;
  std::vector<std::string> timestamps;
  int has_timestamp = -1;  // decided on the first data row
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw Error(ErrorCode::kFormatError, source_name + ":" + std::to_string(line_no) +
                                               ": expected " + std::to_string(header.size()) +
                                               " fields, got " + std::to_string(fields.size()));
    }
    if (has_timestamp < 0) {
      double probe = 0.0;
      has_timestamp = parse_double(fields[0], probe) ? 0 : 1;
      if (has_timestamp == 1 && header.size() < 2) {
        throw Error(ErrorCode::kFormatError, source_name + ": no numeric columns");
      }
    }
    std::vector<double> row;
    row.reserve(fields.size());
    for (std::size_t c = static_cast<std::size_t>(has_timestamp); c < fields.size(); ++c) {
      double v = 0.0;
      if (!parse_double(fields[c], v) || !std::isfinite(v)) {
        throw Error(ErrorCode::kFormatError, source_name + ":" + std::to_string(line_no) +
                                                 ": column '" + header[c] +
                                                 "' is not a finite number: '" + fields[c] + "'");
      }
      row.push_back(v);
    }
    if (has_timestamp == 1) timestamps.push_back(fields[0]);
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw Error(ErrorCode::kEmptyInput, source_name + ": no data rows");

  const std::size_t m = rows.front().size();
  Matrix values(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(m));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < m; ++c) {
      values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  std::vector<std::string> names(header.begin() + has_timestamp, header.end());
  return TimeSeries(std::move(values), std::move(names), 0, std::move(timestamps));
}

TimeSeries read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open '" + path + "'");
  return parse_csv(in, path);
}

void write_csv(const TimeSeries& series, std::ostream& out) {
  const bool with_ts = !series.timestamps().empty();
  if (with_ts) out << "date,";
  const auto& names = series.channel_names();
  for (std::size_t c = 0; c < names.size(); ++c) out << (c ? "," : "") << names[c];
  out << '\n';
  out << std::setprecision(17);
  const auto& v = series.values();
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    if (with_ts) out << series.timestamps()[static_cast<std::size_t>(r)] << ',';
    for (Eigen::Index c = 0; c < v.cols(); ++c) out << (c ? "," : "") << v(r, c);
    out << '\n';
  }
}

}  // namespace cds
