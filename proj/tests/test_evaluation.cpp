#include <gtest/gtest.h>

#include "criteria.hpp"
#include "crs/evaluation.hpp"
#include "test_util.hpp"

using namespace crs;

TEST(Metrics, HandCountedOracles) {
  const auto r = criteria::metric_oracles();
  EXPECT_TRUE(r.pass) << r.detail;
}

TEST(Metrics, RecallNeedsInstances) { EXPECT_THROW(recall_at_k({}, 1), Error); }

TEST(Metrics, HistoryBucketsCapAtTen) {
  std::vector<RecEvalInstance> rs{{{1}, 1, 12}, {{1}, 2, 10}, {{1}, 1, 3}};
  const auto b = recall_by_history_length(rs, 1);
  ASSERT_EQ(b.size(), 2u);
  EXPECT_EQ(b.at(10).count, 2u);
  EXPECT_DOUBLE_EQ(b.at(10).recall, 50.0);
}

TEST(Metrics, BleuEdgeCases) {
  EXPECT_DOUBLE_EQ(sentence_bleu({}, {"a"}, 2), 0.0);
  EXPECT_DOUBLE_EQ(sentence_bleu({"x"}, {"a"}, 2), 0.0);
  EXPECT_DOUBLE_EQ(sentence_bleu({"The"}, {"the"}, 1), 100.0);
  // Short hypothesis: brevity penalty exp(1 - 4/2).
  EXPECT_NEAR(sentence_bleu({"a", "b"}, {"a", "b", "c", "d"}, 1), 100.0 * std::exp(-1.0), 1e-9);
  // No bigram match: epsilon / 1.
  EXPECT_NEAR(sentence_bleu({"a", "c"}, {"a", "b", "c"}, 2, 0.1), 100.0 * std::exp(1.0 - 1.5) * std::sqrt(1.0 * 0.1),
              1e-9);
  EXPECT_NEAR(bleu_n({{{"a"}, {"a"}}, {{"b"}, {"a"}}}, 1), 50.0, 1e-9);
}

TEST(Metrics, DistIsCaseInsensitiveAndSkipsShortResponses) {
  EXPECT_DOUBLE_EQ(dist_n({{"Hi", "hi"}}, 1), 50.0);
  EXPECT_DOUBLE_EQ(dist_n({{"a"}}, 2), 0.0);
  EXPECT_DOUBLE_EQ(dist_n({{"a", "b", "a"}, {"c", "c"}}, 1, DistLevel::kSentence), 100.0 * (2.0 / 3 + 0.5) / 2);
}

TEST(KneserNey, DistributionSumsToOne) {
  KneserNeyLM lm(3);
  lm.train({{"the", "cat", "sat"}, {"the", "dog", "sat"}, {"a", "cat", "ran"}, {"the", "cat", "ran", "home"}});
  for (const auto& hist : std::vector<Tokens>{{"<s>"}, {"<s>", "the"}, {"the", "cat"}, {"zebra"}}) {
    double total = 0.0;
    for (const auto& w : {"the", "cat", "sat", "dog", "a", "ran", "home", "</s>", "<unk>"})
      total += std::exp(lm.log_prob(hist, w));
    EXPECT_NEAR(total, 1.0, 1e-9);
  }
}

TEST(KneserNey, FallbackDiscountsWhenCountsOfCountsAreSparse) {
  KneserNeyLM lm(2);
  lm.train({{"a", "b"}});
  EXPECT_EQ(lm.discounts(2), (KneserNeyLM::Discounts{0.5, 1.0, 1.5}));
  EXPECT_THROW(KneserNeyLM(0), Error);
  EXPECT_THROW(lm.train({}), Error);
}

TEST(Reports, RoundTripIsExact) {
  testutil::TempDir dir;
  MetricsReport r{{"recall@1", 1.0 / 3.0}, {"dist_2", 12.5}};
  write_report(dir.file("report.txt"), r);
  EXPECT_EQ(read_report(dir.file("report.txt")), r);
  testutil::write_file(dir.file("bad.txt"), "nonsense\n");
  EXPECT_THROW(read_report(dir.file("bad.txt")), Error);
}
