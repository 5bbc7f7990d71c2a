#pragma once

// Forecaster = linear prediction head(s) on top of a frozen feature
// extractor. Samples are served through a SampleBank so that features are
// computed once (or viewed in place) and shared by detection and adaptation.

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cds/core.hpp"

namespace cds {

using ConstVectorMap = Eigen::Map<const Vector>;

// h_theta: out = weights^T * feature + bias.
struct PredictionHead {
  Matrix weights;  // d x out
  Vector bias;     // out

  PredictionHead() = default;
  PredictionHead(Matrix w, Vector b);
  static PredictionHead zeros(std::size_t input_dim, std::size_t output_dim);

  std::size_t input_dim() const { return static_cast<std::size_t>(weights.rows()); }
  std::size_t output_dim() const { return static_cast<std::size_t>(weights.cols()); }
  bool all_finite() const { return weights.allFinite() && bias.allFinite(); }

  Vector apply(const Eigen::Ref<const Vector>& feature) const;
};

// g_Phi: deterministic map from an L x M history to a d-vector.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::size_t lookback() const = 0;
  virtual std::size_t dim() const = 0;
  virtual Vector extract(const Matrix& history) const = 0;
};

// Row-major flattening of the L x M history; the joint-head identity extractor.
class FlattenExtractor final : public FeatureExtractor {
 public:
  FlattenExtractor(std::size_t lookback, std::size_t channels)
      : lookback_(lookback), channels_(channels) {}
  std::size_t lookback() const override { return lookback_; }
  std::size_t dim() const override { return lookback_ * channels_; }
  Vector extract(const Matrix& history) const override;

 private:
  std::size_t lookback_;
  std::size_t channels_;
};

// Row-major flatten of a T x M matrix, and its inverse.
Vector flatten_row_major(const Matrix& m);
Matrix unflatten_row_major(const Eigen::Ref<const Vector>& v, std::size_t rows, std::size_t cols);

// kJoint: one head maps the feature to all T*M outputs (row-major T x M).
// kPerChannel: head m maps channel m's feature to that channel's T outputs.
enum class HeadLayout { kJoint, kPerChannel };

class SampleBank {
 public:
  virtual ~SampleBank() = default;

  virtual std::size_t size() const = 0;
  virtual std::int64_t anchor(std::size_t i) const = 0;
  virtual std::size_t horizon() const = 0;
  virtual std::size_t channels() const = 0;
  virtual HeadLayout layout() const = 0;
  virtual std::size_t feature_dim() const = 0;

  // Feature served to head `head` for sample i, and that head's target.
  virtual ConstVectorMap feature(std::size_t i, std::size_t head) const = 0;
  virtual ConstVectorMap target(std::size_t i, std::size_t head) const = 0;

  // Squared Euclidean distance between the similarity keys of samples i, j
  // (flattened histories when available).
  virtual double squared_distance(std::size_t i, std::size_t j) const = 0;

  std::size_t head_count() const {
    return layout() == HeadLayout::kJoint ? 1 : channels();
  }
  std::size_t head_output_dim() const {
    return layout() == HeadLayout::kJoint ? horizon() * channels() : horizon();
  }
  Matrix truth(std::size_t i) const;

  // Index of the first sample whose anchor is >= t (anchors ascend).
  std::size_t lower_bound(std::int64_t t) const;
};

// Channel-independent bank over a series: for anchor t, head m sees the L
// values of channel m before t and targets the T values from t. Views into
// the series; nothing is copied.
class WindowBank final : public SampleBank {
 public:
  WindowBank(std::shared_ptr<const TimeSeries> series, std::size_t lookback,
             std::size_t horizon, std::size_t stride = 1);

  std::size_t size() const override { return anchors_.size(); }
  std::int64_t anchor(std::size_t i) const override { return anchors_[i]; }
  std::size_t horizon() const override { return horizon_; }
  std::size_t channels() const override { return series_->channels(); }
  HeadLayout layout() const override { return HeadLayout::kPerChannel; }
  std::size_t feature_dim() const override { return lookback_; }
  ConstVectorMap feature(std::size_t i, std::size_t head) const override;
  ConstVectorMap target(std::size_t i, std::size_t head) const override;
  double squared_distance(std::size_t i, std::size_t j) const override;

  std::size_t lookback() const { return lookback_; }
  const TimeSeries& series() const { return *series_; }

 private:
  std::shared_ptr<const TimeSeries> series_;
  std::size_t lookback_;
  std::size_t horizon_;
  std::vector<std::int64_t> anchors_;
};

// Joint-head bank with materialized features (d x n) and flattened targets
// (T*M x n). Similarity keys are either the flattened histories (when a
// series is attached) or the features themselves.
class FeatureBank final : public SampleBank {
 public:
  FeatureBank(std::vector<std::int64_t> anchors, Matrix features, Matrix targets,
              std::size_t horizon, std::size_t channels);

  // Runs the extractor over every window of the series.
  static FeatureBank from_series(std::shared_ptr<const TimeSeries> series,
                                 const FeatureExtractor& extractor, std::size_t horizon,
                                 std::size_t stride = 1);

  std::size_t size() const override { return anchors_.size(); }
  std::int64_t anchor(std::size_t i) const override { return anchors_[i]; }
  std::size_t horizon() const override { return horizon_; }
  std::size_t channels() const override { return channels_; }
  HeadLayout layout() const override { return HeadLayout::kJoint; }
  std::size_t feature_dim() const override { return static_cast<std::size_t>(features_.rows()); }
  ConstVectorMap feature(std::size_t i, std::size_t head) const override;
  ConstVectorMap target(std::size_t i, std::size_t head) const override;
  double squared_distance(std::size_t i, std::size_t j) const override;

  bool has_history_keys() const { return series_ != nullptr; }

 private:
  std::vector<std::int64_t> anchors_;
  Matrix features_;
  Matrix targets_;
  std::size_t horizon_;
  std::size_t channels_;
  std::shared_ptr<const TimeSeries> series_;
  std::size_t lookback_ = 0;
};

// A set of heads laid out per SampleBank::layout().
class Forecaster {
 public:
  Forecaster(HeadLayout layout, std::vector<PredictionHead> heads, std::size_t horizon,
             std::size_t channels);

  HeadLayout layout() const { return layout_; }
  std::size_t horizon() const { return horizon_; }
  std::size_t channels() const { return channels_; }
  const std::vector<PredictionHead>& heads() const { return heads_; }
  std::vector<PredictionHead>& mutable_heads() { return heads_; }

  void check_compatible(const SampleBank& bank) const;

  // T x M forecast for bank sample i.
  Matrix predict(const SampleBank& bank, std::size_t i) const;

  // Assemble per-head outputs into a T x M matrix.
  Matrix assemble(std::span<const Vector> head_outputs) const;

 private:
  HeadLayout layout_;
  std::vector<PredictionHead> heads_;
  std::size_t horizon_;
  std::size_t channels_;
};

// Minimizes ||targets - features W - 1 b^T||^2 + ridge ||W||^2 with an
// unregularized bias. Without an intercept the bias is fixed to zero.
PredictionHead fit_head_least_squares(const Matrix& features, const Matrix& targets,
                                      double ridge, bool fit_intercept = true);

struct TrainingPair {
  Vector feature;
  Vector target;
};

// One pass of mini-batch gradient descent on the mean squared error (mean
// over batch and outputs), batches in dataset order. batch_size 0 means full
// batch. Returns a new head.
PredictionHead sgd_epoch(const PredictionHead& head, std::span<const TrainingPair> dataset,
                         double lr, std::size_t batch_size = 0);

// head(extractor(history)) reshaped T x M.
Matrix forecast(const FeatureExtractor& extractor, const PredictionHead& head,
                const WindowSample& window);

// Channel-independent direct linear L -> T forecaster (one head per channel).
class LinearForecaster {
 public:
  static constexpr double kDefaultRidge = 1e-4;

  LinearForecaster(std::size_t lookback, std::size_t horizon, std::vector<PredictionHead> heads);

  // Closed-form ridge fit of every channel head on the windows of `train`.
  static LinearForecaster fit(const TimeSeries& train, std::size_t lookback, std::size_t horizon,
                              double ridge = kDefaultRidge);

  std::size_t lookback() const { return lookback_; }
  std::size_t horizon() const { return horizon_; }
  const Forecaster& model() const { return model_; }

  Matrix forecast(const WindowSample& window) const;

 private:
  std::size_t lookback_;
  std::size_t horizon_;
  Forecaster model_;
};

// Externally computed latent features, one record per anchor.
struct LatentRecord {
  std::int64_t anchor_t = 0;
  Vector feature;  // d
  Matrix future;   // T x M
};

struct LatentDataset {
  std::string model_name;
  std::size_t d = 0;
  std::size_t horizon = 0;
  std::size_t channels = 0;
  std::vector<LatentRecord> records;

  void validate() const;
  FeatureBank to_bank() const;
};

inline constexpr char kLatentMagic[] = "CDSLAT1";

void write_latents_binary(const LatentDataset& data, std::ostream& out);
void write_latents_csv(const LatentDataset& data, std::ostream& out);
void write_latents(const LatentDataset& data, const std::string& path, bool binary = true);

// Detects binary vs CSV form from the bytes following the magic.
LatentDataset read_latents(std::istream& in, const std::string& source_name = "<stream>");
LatentDataset import_latents(const std::string& path);

}  // namespace cds
