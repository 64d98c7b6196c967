#include <gtest/gtest.h>

#include "criteria.hpp"
#include "crs/preference.hpp"

using namespace crs;

TEST(TimeAware, MatchesDirectFormula) {
  const auto r = criteria::time_aware_exactness();
  EXPECT_TRUE(r.pass) << r.detail;
}

TEST(TimeAware, WeightsForLambdaTwo) {
  const auto w = time_aware_weights(3, 2.0);
  EXPECT_NEAR(w(0), 1.0 / 7, 1e-15);
  EXPECT_NEAR(w(1), 2.0 / 7, 1e-15);
  EXPECT_NEAR(w(2), 4.0 / 7, 1e-15);
}

TEST(TimeAware, LongHistoriesStayFinite) {
  const auto w = time_aware_weights(5000, 1.5);
  EXPECT_TRUE(w.allFinite());
  EXPECT_NEAR(w.sum(), 1.0, 1e-12);
  EXPECT_NEAR(w(4999), 1.0 / 3.0, 1e-9);  // (lambda - 1) / lambda in the limit
  const auto small = time_aware_weights(5000, 0.5);
  EXPECT_NEAR(small(0), 0.5, 1e-9);
}

TEST(TimeAware, EmptyHistoryIsColdStartAndBadLambdaThrows) {
  EntityEmbeddingTable t{ad::Matrix::Ones(3, 2)};
  EXPECT_FALSE(time_aware_summary(std::vector<int>{}, t, 1.5).has_value());
  EXPECT_THROW(time_aware_summary(std::vector<int>{0}, t, 0.0), Error);
  EXPECT_THROW(time_aware_weights(2, -1.0), Error);
}

TEST(TimeAware, TensorVersionAgreesWithValueVersion) {
  std::mt19937_64 rng(3);
  EntityEmbeddingTable t{oracle::random_matrix(6, 4, rng)};
  const std::vector<int> h{2, 5, 2, 0};
  const ad::Matrix v = time_aware_summary_tensor(ad::Tensor::constant(t.values), h, 1.5).value();
  EXPECT_LT((v.row(0).transpose() - *time_aware_summary(h, t, 1.5)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(History, TextEntityFilterAndDedupKeepsLatest) {
  PreferenceHistory h;
  h.push(3, true);
  h.push(7, false);
  h.push(3, true);
  h.push(5, true);
  EXPECT_EQ(select_history(h), (std::vector<int>{3, 7, 3, 5}));
  EXPECT_EQ(select_history(h, {false, false}), (std::vector<int>{3, 3, 5}));
  EXPECT_EQ(select_history(h, {true, true}), (std::vector<int>{7, 3, 5}));
}

TEST(SelfAttention, WeightsAreSoftmaxOfTanhScores) {
  std::mt19937_64 rng(5);
  EntityEmbeddingTable t{oracle::random_matrix(5, 3, rng)};
  auto p = SelfAttentionParams::init(3, 9);
  const std::vector<int> h{4, 1, 1};
  const auto w = self_attention_weights(h, t, p);
  std::vector<double> s;
  double z = 0.0;
  for (int e : h) {
    const ad::Vector a = (t.values.row(e) * p.w.value()).array().tanh().matrix().transpose();
    s.push_back(std::exp(a.dot(p.v.value().col(0))));
    z += s.back();
  }
  for (std::size_t i = 0; i < h.size(); ++i) EXPECT_NEAR(w(static_cast<ad::Index>(i)), s[i] / z, 1e-12);
  const ad::Matrix tv = self_attention_summary_tensor(ad::Tensor::constant(t.values), h, p).value();
  EXPECT_LT((tv.row(0).transpose() - *self_attention_summary(h, t, p)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(EntityScores, MaskedSoftmaxOverItems) {
  EntityEmbeddingTable t{ad::Matrix::Identity(4, 4)};
  ad::Vector user(4);
  user << 1.0, 2.0, 3.0, 4.0;
  const auto p = entity_scores(user, t, {true, false, true, false});
  EXPECT_DOUBLE_EQ(p.probs(1), 0.0);
  EXPECT_DOUBLE_EQ(p.probs(3), 0.0);
  EXPECT_NEAR(p.probs(0), std::exp(1.0) / (std::exp(1.0) + std::exp(3.0)), 1e-15);
  EXPECT_THROW(entity_scores(user, t, {false, false, false, false}), Error);
  EXPECT_THROW(entity_scores(user, t, {true}), Error);
}
