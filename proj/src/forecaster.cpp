#include "cds/forecaster.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace cds {

PredictionHead::PredictionHead(Matrix w, Vector b) : weights(std::move(w)), bias(std::move(b)) {
  if (weights.cols() != bias.size()) {
    throw Error(ErrorCode::kShapeMismatch, "head bias length must equal output dim");
  }
}

PredictionHead PredictionHead::zeros(std::size_t input_dim, std::size_t output_dim) {
  return PredictionHead(Matrix::Zero(static_cast<Eigen::Index>(input_dim),
                                     static_cast<Eigen::Index>(output_dim)),
                        Vector::Zero(static_cast<Eigen::Index>(output_dim)));
}

Vector PredictionHead::apply(const Eigen::Ref<const Vector>& feature) const {
  if (feature.size() != weights.rows()) {
    throw Error(ErrorCode::kShapeMismatch, "feature dim " + std::to_string(feature.size()) +
                                               " != head input dim " +
                                               std::to_string(weights.rows()));
  }
  return weights.transpose() * feature + bias;
}

Vector flatten_row_major(const Matrix& m) {
  Vector v(m.size());
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) v(k++) = m(r, c);
  }
  return v;
}

Matrix unflatten_row_major(const Eigen::Ref<const Vector>& v, std::size_t rows, std::size_t cols) {
  if (static_cast<std::size_t>(v.size()) != rows * cols) {
    throw Error(ErrorCode::kShapeMismatch, "cannot reshape vector to requested matrix");
  }
  Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  Eigen::Index k = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = v(k++);
  }
  return m;
}

Vector FlattenExtractor::extract(const Matrix& history) const {
  if (static_cast<std::size_t>(history.rows()) != lookback_ ||
      static_cast<std::size_t>(history.cols()) != channels_) {
    throw Error(ErrorCode::kShapeMismatch, "history shape does not match extractor");
  }
  return flatten_row_major(history);
}

Matrix SampleBank::truth(std::size_t i) const {
  const auto T = horizon();
  const auto M = channels();
  if (layout() == HeadLayout::kJoint) return unflatten_row_major(target(i, 0), T, M);
  Matrix out(static_cast<Eigen::Index>(T), static_cast<Eigen::Index>(M));
  for (std::size_t m = 0; m < M; ++m) out.col(static_cast<Eigen::Index>(m)) = target(i, m);
  return out;
}

std::size_t SampleBank::lower_bound(std::int64_t t) const {
  std::size_t lo = 0;
  std::size_t hi = size();
  while (lo < hi) {
    const std::size_t mid = lo + (hi - lo) / 2;
    if (anchor(mid) < t) {
      lo = mid + 1;
    } else {
      hi = mid;
    }
  }
  return lo;
}

WindowBank::WindowBank(std::shared_ptr<const TimeSeries> series, std::size_t lookback,
                       std::size_t horizon, std::size_t stride)
    : series_(std::move(series)),
      lookback_(lookback),
      horizon_(horizon),
      anchors_(window_anchors(series_->length(), lookback, horizon, stride)) {}

ConstVectorMap WindowBank::feature(std::size_t i, std::size_t head) const {
  const auto n = series_->length();
  const double* col = series_->values().data() + head * n;
  return ConstVectorMap(col + anchors_[i] - static_cast<std::int64_t>(lookback_),
                        static_cast<Eigen::Index>(lookback_));
}

ConstVectorMap WindowBank::target(std::size_t i, std::size_t head) const {
  const auto n = series_->length();
  const double* col = series_->values().data() + head * n;
  return ConstVectorMap(col + anchors_[i], static_cast<Eigen::Index>(horizon_));
}

double WindowBank::squared_distance(std::size_t i, std::size_t j) const {
  const auto& v = series_->values();
  const auto L = static_cast<Eigen::Index>(lookback_);
  const auto ti = static_cast<Eigen::Index>(anchors_[i]) - L;
  const auto tj = static_cast<Eigen::Index>(anchors_[j]) - L;
  double s = 0.0;
  for (Eigen::Index m = 0; m < v.cols(); ++m) {
    s += (v.col(m).segment(ti, L) - v.col(m).segment(tj, L)).squaredNorm();
  }
  return s;
}

FeatureBank::FeatureBank(std::vector<std::int64_t> anchors, Matrix features, Matrix targets,
                         std::size_t horizon, std::size_t channels)
    : anchors_(std::move(anchors)),
      features_(std::move(features)),
      targets_(std::move(targets)),
      horizon_(horizon),
      channels_(channels) {
  const auto n = static_cast<Eigen::Index>(anchors_.size());
  if (features_.cols() != n || targets_.cols() != n) {
    throw Error(ErrorCode::kShapeMismatch, "feature/target columns must equal sample count");
  }
  if (static_cast<std::size_t>(targets_.rows()) != horizon_ * channels_) {
    throw Error(ErrorCode::kShapeMismatch, "target rows must equal T*M");
  }
  for (std::size_t i = 1; i < anchors_.size(); ++i) {
    if (anchors_[i] <= anchors_[i - 1]) {
      throw Error(ErrorCode::kInvalidArgument, "anchors must be strictly increasing");
    }
  }
}

FeatureBank FeatureBank::from_series(std::shared_ptr<const TimeSeries> series,
                                     const FeatureExtractor& extractor, std::size_t horizon,
                                     std::size_t stride) {
  const std::size_t L = extractor.lookback();
  auto windows = make_windows(*series, L, horizon, stride);
  const auto n = static_cast<Eigen::Index>(windows.size());
  Matrix features(static_cast<Eigen::Index>(extractor.dim()), n);
  Matrix targets(static_cast<Eigen::Index>(horizon * series->channels()), n);
  std::vector<std::int64_t> anchors;
  anchors.reserve(windows.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& w = windows[static_cast<std::size_t>(i)];
    Vector f = extractor.extract(w.history);
    if (static_cast<std::size_t>(f.size()) != extractor.dim()) {
      throw Error(ErrorCode::kShapeMismatch, "extractor returned wrong feature dim");
    }
    features.col(i) = f;
    targets.col(i) = flatten_row_major(w.future);
    anchors.push_back(w.anchor_t);
  }
  FeatureBank bank(std::move(anchors), std::move(features), std::move(targets), horizon,
                   series->channels());
  bank.series_ = std::move(series);
  bank.lookback_ = L;
  return bank;
}

ConstVectorMap FeatureBank::feature(std::size_t i, std::size_t) const {
  return ConstVectorMap(features_.col(static_cast<Eigen::Index>(i)).data(), features_.rows());
}

ConstVectorMap FeatureBank::target(std::size_t i, std::size_t) const {
  return ConstVectorMap(targets_.col(static_cast<Eigen::Index>(i)).data(), targets_.rows());
}

double FeatureBank::squared_distance(std::size_t i, std::size_t j) const {
  if (series_ == nullptr) {
    return (features_.col(static_cast<Eigen::Index>(i)) -
            features_.col(static_cast<Eigen::Index>(j)))
        .squaredNorm();
  }
  const auto& v = series_->values();
  const auto L = static_cast<Eigen::Index>(lookback_);
  const auto ti = static_cast<Eigen::Index>(anchors_[i]) - L;
  const auto tj = static_cast<Eigen::Index>(anchors_[j]) - L;
  return (v.middleRows(ti, L) - v.middleRows(tj, L)).squaredNorm();
}

Forecaster::Forecaster(HeadLayout layout, std::vector<PredictionHead> heads, std::size_t horizon,
                       std::size_t channels)
    : layout_(layout), heads_(std::move(heads)), horizon_(horizon), channels_(channels) {
  const std::size_t expected_heads = layout_ == HeadLayout::kJoint ? 1 : channels_;
  const std::size_t expected_out =
      layout_ == HeadLayout::kJoint ? horizon_ * channels_ : horizon_;
  if (heads_.size() != expected_heads) {
    throw Error(ErrorCode::kShapeMismatch, "wrong number of heads for layout");
  }
  for (const auto& h : heads_) {
    if (h.output_dim() != expected_out) {
      throw Error(ErrorCode::kShapeMismatch, "head output dim does not match layout");
    }
    if (!h.all_finite()) throw Error(ErrorCode::kInvalidArgument, "head has non-finite entries");
  }
}

void Forecaster::check_compatible(const SampleBank& bank) const {
  if (bank.layout() != layout_ || bank.horizon() != horizon_ || bank.channels() != channels_) {
    throw Error(ErrorCode::kShapeMismatch, "bank layout/shape does not match forecaster");
  }
  if (bank.feature_dim() != heads_.front().input_dim()) {
    throw Error(ErrorCode::kShapeMismatch, "bank feature dim does not match head input dim");
  }
}

Matrix Forecaster::assemble(std::span<const Vector> head_outputs) const {
  if (layout_ == HeadLayout::kJoint) {
    return unflatten_row_major(head_outputs.front(), horizon_, channels_);
  }
  Matrix out(static_cast<Eigen::Index>(horizon_), static_cast<Eigen::Index>(channels_));
  for (std::size_t m = 0; m < channels_; ++m) {
    out.col(static_cast<Eigen::Index>(m)) = head_outputs[m];
  }
  return out;
}

Matrix Forecaster::predict(const SampleBank& bank, std::size_t i) const {
  std::vector<Vector> outputs;
  outputs.reserve(heads_.size());
  for (std::size_t h = 0; h < heads_.size(); ++h) outputs.push_back(heads_[h].apply(bank.feature(i, h)));
  return assemble(outputs);
}

PredictionHead fit_head_least_squares(const Matrix& features, const Matrix& targets,
                                      double ridge, bool fit_intercept) {
  const auto n = features.rows();
  const auto d = features.cols();
  if (n < 1) throw Error(ErrorCode::kEmptyInput, "least squares needs n >= 1");
  if (targets.rows() != n) throw Error(ErrorCode::kShapeMismatch, "features/targets row mismatch");
  if (!(ridge >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "ridge must be >= 0");

  const Eigen::Index p = fit_intercept ? d + 1 : d;
  Matrix gram(p, p);
  Matrix rhs(p, targets.cols());
  gram.topLeftCorner(d, d).noalias() = features.transpose() * features;
  rhs.topRows(d).noalias() = features.transpose() * targets;
  if (fit_intercept) {
    const Vector col_sum = features.colwise().sum().transpose();
    gram.topRightCorner(d, 1) = col_sum;
    gram.bottomLeftCorner(1, d) = col_sum.transpose();
    gram(d, d) = static_cast<double>(n);
    rhs.row(d) = targets.colwise().sum();
  }
  gram.topLeftCorner(d, d).diagonal().array() += ridge;

  if (ridge == 0.0) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(gram, Eigen::EigenvaluesOnly);
    const double lo = eig.eigenvalues().minCoeff();
    const double hi = eig.eigenvalues().maxCoeff();
    if (!(lo > 0.0) || hi / lo >= 1e12) {
      throw Error(ErrorCode::kSingularDesign, "Gram matrix is numerically singular");
    }
  }
  Eigen::LDLT<Matrix> ldlt(gram);
  if (ldlt.info() != Eigen::Success) {
    throw Error(ErrorCode::kSingularDesign, "Gram factorization failed");
  }
  Matrix solution = ldlt.solve(rhs);
  Vector bias = fit_intercept ? Vector(solution.row(d).transpose())
                              : Vector::Zero(targets.cols());
  return PredictionHead(solution.topRows(d), std::move(bias));
}

PredictionHead sgd_epoch(const PredictionHead& head, std::span<const TrainingPair> dataset,
                         double lr, std::size_t batch_size) {
  if (dataset.empty()) throw Error(ErrorCode::kEmptyInput, "sgd_epoch needs a nonempty dataset");
  if (!(lr >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "learning rate must be >= 0");
  PredictionHead out = head;
  if (lr == 0.0) return out;
  const std::size_t batch = batch_size == 0 ? dataset.size() : batch_size;
  const auto out_dim = static_cast<double>(head.output_dim());

  Matrix grad_w(out.weights.rows(), out.weights.cols());
  Vector grad_b(out.bias.size());
  for (std::size_t begin = 0; begin < dataset.size(); begin += batch) {
    const std::size_t end = std::min(dataset.size(), begin + batch);
    grad_w.setZero();
    grad_b.setZero();
    for (std::size_t j = begin; j < end; ++j) {
      const auto& pair = dataset[j];
      if (pair.target.size() != out.bias.size()) {
        throw Error(ErrorCode::kShapeMismatch, "target dim does not match head output dim");
      }
      const Vector residual = out.apply(pair.feature) - pair.target;
      grad_w.noalias() += pair.feature * residual.transpose();
      grad_b += residual;
    }
    const double scale = 2.0 / (static_cast<double>(end - begin) * out_dim);
    out.weights -= (lr * scale) * grad_w;
    out.bias -= (lr * scale) * grad_b;
  }
  return out;
}

Matrix forecast(const FeatureExtractor& extractor, const PredictionHead& head,
                const WindowSample& window) {
  const auto T = static_cast<std::size_t>(window.future.rows());
  const auto M = static_cast<std::size_t>(window.history.cols());
  if (head.output_dim() != T * M) {
    throw Error(ErrorCode::kShapeMismatch, "head output dim must equal T*M");
  }
  if (extractor.dim() != head.input_dim()) {
    throw Error(ErrorCode::kShapeMismatch, "extractor dim must equal head input dim");
  }
  return unflatten_row_major(head.apply(extractor.extract(window.history)), T, M);
}

LinearForecaster::LinearForecaster(std::size_t lookback, std::size_t horizon,
                                   std::vector<PredictionHead> heads)
    : lookback_(lookback),
      horizon_(horizon),
      model_(HeadLayout::kPerChannel, heads, horizon, heads.size()) {}

LinearForecaster LinearForecaster::fit(const TimeSeries& train, std::size_t lookback,
                                       std::size_t horizon, double ridge) {
  auto series = std::make_shared<const TimeSeries>(train);
  WindowBank bank(series, lookback, horizon);
  const auto n = static_cast<Eigen::Index>(bank.size());
  std::vector<PredictionHead> heads;
  Matrix features(n, static_cast<Eigen::Index>(lookback));
  Matrix targets(n, static_cast<Eigen::Index>(horizon));
  for (std::size_t m = 0; m < train.channels(); ++m) {
    for (Eigen::Index i = 0; i < n; ++i) {
      features.row(i) = bank.feature(static_cast<std::size_t>(i), m).transpose();
      targets.row(i) = bank.target(static_cast<std::size_t>(i), m).transpose();
    }
    heads.push_back(fit_head_least_squares(features, targets, ridge));
  }
  return LinearForecaster(lookback, horizon, std::move(heads));
}

Matrix LinearForecaster::forecast(const WindowSample& window) const {
  if (static_cast<std::size_t>(window.history.rows()) != lookback_ ||
      static_cast<std::size_t>(window.history.cols()) != model_.heads().size()) {
    throw Error(ErrorCode::kShapeMismatch, "window shape does not match forecaster");
  }
  std::vector<Vector> outputs;
  for (std::size_t m = 0; m < model_.heads().size(); ++m) {
    outputs.push_back(model_.heads()[m].apply(window.history.col(static_cast<Eigen::Index>(m))));
  }
  return model_.assemble(outputs);
}

// ---------------------------------------------------------------------------
// Latent record files.

void LatentDataset::validate() const {
  if (records.empty()) throw Error(ErrorCode::kEmptyInput, "latent dataset has no records");
  if (d == 0 || horizon == 0 || channels == 0) {
    throw Error(ErrorCode::kFormatError, "latent header needs d, T, M >= 1");
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& r = records[i];
    if (static_cast<std::size_t>(r.feature.size()) != d) {
      throw Error(ErrorCode::kFormatError, "record " + std::to_string(i) + ": feature has " +
                                               std::to_string(r.feature.size()) +
                                               " values, header declares d = " +
                                               std::to_string(d));
    }
    if (static_cast<std::size_t>(r.future.rows()) != horizon ||
        static_cast<std::size_t>(r.future.cols()) != channels) {
      throw Error(ErrorCode::kFormatError, "record " + std::to_string(i) + ": future shape mismatch");
    }
    if (!r.feature.allFinite() || !r.future.allFinite()) {
      throw Error(ErrorCode::kFormatError, "record " + std::to_string(i) + ": non-finite value");
    }
    if (i > 0 && r.anchor_t <= records[i - 1].anchor_t) {
      throw Error(ErrorCode::kFormatError,
                  "record " + std::to_string(i) + ": anchors must be strictly increasing");
    }
  }
}

FeatureBank LatentDataset::to_bank() const {
  validate();
  const auto n = static_cast<Eigen::Index>(records.size());
  Matrix features(static_cast<Eigen::Index>(d), n);
  Matrix targets(static_cast<Eigen::Index>(horizon * channels), n);
  std::vector<std::int64_t> anchors;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = records[static_cast<std::size_t>(i)];
    features.col(i) = r.feature;
    targets.col(i) = flatten_row_major(r.future);
    anchors.push_back(r.anchor_t);
  }
  return FeatureBank(std::move(anchors), std::move(features), std::move(targets), horizon,
                     channels);
}

namespace {

template <typename T>
void put_le(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T get_le(std::istream& in, const std::string& what) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw Error(ErrorCode::kFormatError, "truncated file while reading " + what);
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

constexpr std::size_t kMagicLen = sizeof(kLatentMagic) - 1;
constexpr std::uint64_t kMaxDim = std::uint64_t{1} << 32;

void check_header_dims(std::uint64_t d, std::uint64_t t, std::uint64_t m, const std::string& src) {
  if (d == 0 || t == 0 || m == 0 || d > kMaxDim || t > kMaxDim || m > kMaxDim) {
    throw Error(ErrorCode::kFormatError, src + ": header dimensions out of range");
  }
}

LatentDataset read_binary_body(std::istream& in, const std::string& src) {
  LatentDataset data;
  const auto name_len = get_le<std::uint32_t>(in, "model name length");
  data.model_name.resize(name_len);
  if (name_len > 0 && !in.read(data.model_name.data(), name_len)) {
    throw Error(ErrorCode::kFormatError, src + ": truncated model name");
  }
  const auto d = get_le<std::uint64_t>(in, "d");
  const auto t = get_le<std::uint64_t>(in, "T");
  const auto m = get_le<std::uint64_t>(in, "M");
  const auto count = get_le<std::uint64_t>(in, "count");
  check_header_dims(d, t, m, src);
  if (count == 0) throw Error(ErrorCode::kEmptyInput, src + ": empty record section");
  data.d = d;
  data.horizon = t;
  data.channels = m;
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string where = "record " + std::to_string(i);
    LatentRecord r;
    r.anchor_t = get_le<std::int64_t>(in, where + " anchor");
    r.feature.resize(static_cast<Eigen::Index>(d));
    for (std::uint64_t k = 0; k < d; ++k) {
      r.feature(static_cast<Eigen::Index>(k)) = get_le<double>(in, where + " feature");
    }
    Vector flat(static_cast<Eigen::Index>(t * m));
    for (Eigen::Index k = 0; k < flat.size(); ++k) flat(k) = get_le<double>(in, where + " future");
    r.future = unflatten_row_major(flat, t, m);
    data.records.push_back(std::move(r));
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw Error(ErrorCode::kFormatError, src + ": trailing bytes after declared records");
  }
  return data;
}

std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string f;
  while (std::getline(ss, f, ',')) {
    if (!f.empty() && f.back() == '\r') f.pop_back();
    out.push_back(f);
  }
  return out;
}

double parse_real(const std::string& s, const std::string& where) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error(ErrorCode::kFormatError, where + ": not a number: '" + s + "'");
  }
}

std::uint64_t parse_count(const std::string& s, const std::string& where) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
    throw Error(ErrorCode::kFormatError, where + ": expected a nonnegative integer, got '" + s + "'");
  }
  return std::stoull(s);
}

LatentDataset read_csv_body(std::istream& in, const std::string& header_line,
                            const std::string& src) {
  const auto header = split_commas(header_line);
  if (header.size() != 6 || header[0] != kLatentMagic) {
    throw Error(ErrorCode::kFormatError,
                src + ":1: header must be CDSLAT1,model_name,d,T,M,count");
  }
  LatentDataset data;
  data.model_name = header[1];
  const auto d = parse_count(header[2], src + ":1 d");
  const auto t = parse_count(header[3], src + ":1 T");
  const auto m = parse_count(header[4], src + ":1 M");
  const auto count = parse_count(header[5], src + ":1 count");
  check_header_dims(d, t, m, src);
  data.d = d;
  data.horizon = t;
  data.channels = m;
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const std::string where = src + ":" + std::to_string(line_no);
    const auto fields = split_commas(line);
    if (fields.size() != 1 + d + t * m) {
      throw Error(ErrorCode::kFormatError,
                  where + ": expected " + std::to_string(1 + d + t * m) + " fields (anchor, " +
                      std::to_string(d) + " features, " + std::to_string(t * m) +
                      " future values), got " + std::to_string(fields.size()));
    }
    LatentRecord r;
    try {
      std::size_t pos = 0;
      r.anchor_t = std::stoll(fields[0], &pos);
      if (pos != fields[0].size()) throw std::invalid_argument(fields[0]);
    } catch (const std::exception&) {
      throw Error(ErrorCode::kFormatError, where + ": bad anchor '" + fields[0] + "'");
    }
    r.feature.resize(static_cast<Eigen::Index>(d));
    for (std::uint64_t k = 0; k < d; ++k) {
      r.feature(static_cast<Eigen::Index>(k)) = parse_real(fields[1 + k], where);
    }
    Vector flat(static_cast<Eigen::Index>(t * m));
    for (Eigen::Index k = 0; k < flat.size(); ++k) {
      flat(k) = parse_real(fields[1 + d + static_cast<std::size_t>(k)], where);
    }
    r.future = unflatten_row_major(flat, t, m);
    data.records.push_back(std::move(r));
  }
  if (data.records.empty()) throw Error(ErrorCode::kEmptyInput, src + ": empty record section");
  if (data.records.size() != count) {
    throw Error(ErrorCode::kFormatError, src + ": header declares " + std::to_string(count) +
                                             " records, found " +
                                             std::to_string(data.records.size()));
  }
  return data;
}

}  // namespace

void write_latents_binary(const LatentDataset& data, std::ostream& out) {
  data.validate();
  out.write(kLatentMagic, kMagicLen);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(data.model_name.size()));
  out.write(data.model_name.data(), static_cast<std::streamsize>(data.model_name.size()));
  put_le<std::uint64_t>(out, data.d);
  put_le<std::uint64_t>(out, data.horizon);
  put_le<std::uint64_t>(out, data.channels);
  put_le<std::uint64_t>(out, data.records.size());
  for (const auto& r : data.records) {
    put_le<std::int64_t>(out, r.anchor_t);
    for (Eigen::Index k = 0; k < r.feature.size(); ++k) put_le<double>(out, r.feature(k));
    const Vector flat = flatten_row_major(r.future);
    for (Eigen::Index k = 0; k < flat.size(); ++k) put_le<double>(out, flat(k));
  }
}

void write_latents_csv(const LatentDataset& data, std::ostream& out) {
  data.validate();
  if (data.model_name.find_first_of(",\n\r") != std::string::npos) {
    throw Error(ErrorCode::kInvalidArgument, "model name may not contain commas or newlines");
  }
  out << kLatentMagic << ',' << data.model_name << ',' << data.d << ',' << data.horizon << ','
      << data.channels << ',' << data.records.size() << '\n';
  out << std::setprecision(17);
  for (const auto& r : data.records) {
    out << r.anchor_t;
    for (Eigen::Index k = 0; k < r.feature.size(); ++k) out << ',' << r.feature(k);
    const Vector flat = flatten_row_major(r.future);
    for (Eigen::Index k = 0; k < flat.size(); ++k) out << ',' << flat(k);
    out << '\n';
  }
}

void write_latents(const LatentDataset& data, const std::string& path, bool binary) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write '" + path + "'");
  if (binary) {
    write_latents_binary(data, out);
  } else {
    write_latents_csv(data, out);
  }
  if (!out) throw Error(ErrorCode::kIoError, "write failed for '" + path + "'");
}

LatentDataset read_latents(std::istream& in, const std::string& source_name) {
  char magic[kMagicLen];
  if (!in.read(magic, kMagicLen) || std::memcmp(magic, kLatentMagic, kMagicLen) != 0) {
    throw Error(ErrorCode::kFormatError, source_name + ": missing CDSLAT1 magic");
  }
  LatentDataset data;
  if (in.peek() == ',') {
    std::string rest;
    std::getline(in, rest);
    data = read_csv_body(in, std::string(kLatentMagic) + rest, source_name);
  } else {
    data = read_binary_body(in, source_name);
  }
  data.validate();
  return data;
}

LatentDataset import_latents(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open '" + path + "'");
  return read_latents(in, path);
}

}  // namespace cds
