#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "cds/core.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using cds::ErrorCode;
using cds::Matrix;
using cds::TimeSeries;

namespace {

Matrix ramp(Eigen::Index n, Eigen::Index m) {
  Matrix v(n, m);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < m; ++j) v(i, j) = static_cast<double>(10 * i + j);
  }
  return v;
}

}  // namespace

TEST(TimeSeries, RejectsBadInput) {
  EXPECT_EQ(code_of([] { TimeSeries::from_values(Matrix(0, 2)); }), ErrorCode::kInvalidArgument);
  Matrix v = ramp(4, 2);
  v(1, 1) = std::nan("");
  EXPECT_EQ(code_of([&] { TimeSeries::from_values(v); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([] { TimeSeries(ramp(3, 2), {"a", "a"}); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([] { TimeSeries(ramp(3, 2), {"a"}); }), ErrorCode::kInvalidArgument);
}

TEST(Windows, CountsAndAnchors) {
  EXPECT_EQ(cds::window_anchors(5, 3, 2).size(), 1u);
  const auto a = cds::window_anchors(10, 3, 2);
  ASSERT_EQ(a.size(), 6u);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], static_cast<std::int64_t>(3 + i));
  EXPECT_EQ(cds::window_anchors(17420, 96, 96).size(), 17229u);
  EXPECT_EQ(cds::window_anchors(10, 3, 2, 2).size(), 3u);
  EXPECT_EQ(code_of([] { cds::window_anchors(4, 3, 2); }), ErrorCode::kSeriesTooShort);
}

TEST(Windows, ContentsAndSliceConsistency) {
  const auto s = TimeSeries::from_values(ramp(12, 2));
  const auto w = cds::make_windows(s, 4, 3);
  ASSERT_EQ(w.size(), 6u);
  for (const auto& sample : w) {
    EXPECT_EQ(sample.history, s.values().middleRows(sample.anchor_t - 4, 4));
    EXPECT_EQ(sample.future, s.values().middleRows(sample.anchor_t, 3));
  }
  for (std::size_t i = 0; i + 1 < w.size(); ++i) {
    EXPECT_EQ(w[i + 1].history.topRows(3), w[i].history.bottomRows(3));
  }
}

TEST(Split, Lengths) {
  using L = std::array<std::size_t, 3>;
  EXPECT_EQ(cds::SplitSpec(0.7, 0.1, 0.2).lengths(10), (L{7, 1, 2}));
  EXPECT_EQ(cds::SplitSpec(0.6, 0.2, 0.2).lengths(17420), (L{10452, 3484, 3484}));
  EXPECT_EQ(cds::SplitSpec(1, 0, 0).lengths(9), (L{9, 0, 0}));
  EXPECT_EQ(code_of([] { cds::SplitSpec(0.5, 0.2, 0.2); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([] { cds::SplitSpec(1.2, -0.2, 0.0); }), ErrorCode::kInvalidArgument);
}

TEST(Split, SegmentsSumAndPreserveOrder) {
  std::mt19937_64 rng(3);
  const auto s = TimeSeries::from_values(oracle::random_matrix(rng, 101, 3));
  for (const auto& spec : {cds::SplitSpec(0.6, 0.2, 0.2), cds::SplitSpec(0.7, 0.1, 0.2),
                           cds::SplitSpec(1, 0, 0)}) {
    const auto parts = cds::chronological_split(s, spec);
    EXPECT_EQ(parts.train.length() + parts.val.length() + parts.test.length(), s.length());
    std::size_t offset = 0;
    for (const auto* seg : {&parts.train, &parts.val, &parts.test}) {
      if (seg->length() > 0) EXPECT_EQ(seg->values().row(0), s.values().row(offset));
      EXPECT_EQ(seg->start_index(), static_cast<std::int64_t>(offset));
      offset += seg->length();
    }
  }
  EXPECT_EQ(code_of([&] { cds::chronological_split(s.slice(0, 2), cds::SplitSpec(0.6, 0.2, 0.2)); }),
            ErrorCode::kSeriesTooShort);
}

TEST(Standardizer, RoundTripAndTrainStatistics) {
  std::mt19937_64 rng(5);
  Matrix v = oracle::random_matrix(rng, 200, 4, 3.0);
  v.col(2).array() += 50.0;
  v.col(3).setConstant(7.0);  // zero variance hits the floor
  const auto s = TimeSeries::from_values(v);
  const auto train = s.slice(0, 120);
  const auto z = cds::Standardizer::fit(train);
  const auto t = z.transform(train);
  for (Eigen::Index j = 0; j < 3; ++j) {
    EXPECT_NEAR(t.values().col(j).mean(), 0.0, 1e-12);
    const double var = (t.values().col(j).array() - t.values().col(j).mean()).square().mean();
    EXPECT_NEAR(var, 1.0, 1e-12);
  }
  EXPECT_DOUBLE_EQ(z.std()(3), cds::Standardizer::kStdFloor);
  const auto back = z.inverse_transform(z.transform(s));
  EXPECT_LE((back.values() - s.values()).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Metrics, HandExamples) {
  const std::vector<Matrix> p0{Matrix::Ones(2, 2)};
  auto m = cds::mse_mae(p0, p0);
  EXPECT_EQ(m.mse, 0.0);
  EXPECT_EQ(m.mae, 0.0);

  const std::vector<Matrix> p1{Matrix::Constant(1, 1, 2.0)};
  const std::vector<Matrix> t1{Matrix::Zero(1, 1)};
  m = cds::mse_mae(p1, t1);
  EXPECT_EQ(m.mse, 4.0);
  EXPECT_EQ(m.mae, 2.0);

  const std::vector<Matrix> p2{Matrix::Constant(1, 1, 1.0), Matrix::Constant(1, 1, -3.0)};
  const std::vector<Matrix> t2{Matrix::Zero(1, 1), Matrix::Zero(1, 1)};
  m = cds::mse_mae(p2, t2);
  EXPECT_EQ(m.mse, 5.0);
  EXPECT_EQ(m.mae, 2.0);

  EXPECT_EQ(code_of([] { cds::mse_mae({}, {}); }), ErrorCode::kEmptyInput);
  const std::vector<Matrix> wrong{Matrix::Zero(2, 1)};
  EXPECT_EQ(code_of([&] { cds::mse_mae(p1, wrong); }), ErrorCode::kShapeMismatch);
}

TEST(Metrics, EqualAbsoluteErrorsGiveSquaredMae) {
  std::mt19937_64 rng(9);
  std::bernoulli_distribution sign;
  std::vector<Matrix> pred, truth;
  for (int k = 0; k < 5; ++k) {
    Matrix tr = oracle::random_matrix(rng, 3, 2);
    Matrix pr = tr;
    for (Eigen::Index i = 0; i < pr.size(); ++i) pr(i) += sign(rng) ? 0.75 : -0.75;
    pred.push_back(pr);
    truth.push_back(tr);
  }
  const auto m = cds::mse_mae(pred, truth);
  EXPECT_GE(m.mse, 0.0);
  EXPECT_NEAR(m.mse, m.mae * m.mae, 1e-14);
}

TEST(Metrics, AccumulatorMatchesBatchAndMerges) {
  std::mt19937_64 rng(11);
  std::vector<Matrix> pred, truth;
  cds::MetricAccumulator a, b, all;
  for (int k = 0; k < 8; ++k) {
    pred.push_back(oracle::random_matrix(rng, 4, 3));
    truth.push_back(oracle::random_matrix(rng, 4, 3));
    (k < 3 ? a : b).add(pred.back(), truth.back());
    all.add(pred.back(), truth.back());
  }
  a.merge(b);
  const auto batch = cds::mse_mae(pred, truth);
  EXPECT_NEAR(a.result().mse, batch.mse, 1e-14);
  EXPECT_NEAR(all.result().mae, batch.mae, 1e-14);
  EXPECT_EQ(a.count(), 96u);
}

TEST(Csv, ParsesTimestampsAndRoundTrips) {
  std::istringstream in("date,HUFL,OT\n2016-07-01 00:00:00,5.8,30.5\n2016-07-01 01:00:00,5.6,27.8\n"
                        "2016-07-01 02:00:00,5.7,27.7\n");
  const auto s = cds::parse_csv(in);
  ASSERT_EQ(s.length(), 3u);
  ASSERT_EQ(s.channels(), 2u);
  EXPECT_EQ(s.channel_names()[1], "OT");
  EXPECT_EQ(s.timestamps()[2], "2016-07-01 02:00:00");
  EXPECT_DOUBLE_EQ(s.values()(1, 1), 27.8);

  std::stringstream io;
  cds::write_csv(s, io);
  const auto again = cds::parse_csv(io);
  EXPECT_EQ(again.values(), s.values());
  EXPECT_EQ(again.timestamps(), s.timestamps());
  EXPECT_EQ(again.channel_names(), s.channel_names());
}

TEST(Csv, NumericOnlyAndErrors) {
  std::istringstream plain("a,b\n1,2\n3,4\n");
  const auto s = cds::parse_csv(plain);
  EXPECT_TRUE(s.timestamps().empty());
  EXPECT_EQ(s.values()(1, 0), 3.0);

  std::istringstream ragged("a,b\n1,2\n3\n");
  EXPECT_EQ(code_of([&] { cds::parse_csv(ragged); }), ErrorCode::kFormatError);
  std::istringstream bad("a,b\n1,2\n3,x\n");
  EXPECT_EQ(code_of([&] { cds::parse_csv(bad); }), ErrorCode::kFormatError);
  std::istringstream empty("");
  EXPECT_EQ(code_of([&] { cds::parse_csv(empty); }), ErrorCode::kFormatError);
  EXPECT_EQ(code_of([] { cds::read_csv("/nonexistent/file.csv"); }), ErrorCode::kIoError);
}
