#include "affspace/metrics.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace affspace;

namespace {

LabelMap map_of(Index h, Index w, std::initializer_list<int> v) {
  LabelMap m(h, w);
  Index i = 0;
  for (int x : v) m.data()[i++] = static_cast<std::uint8_t>(x);
  return m;
}

}  // namespace

TEST(Confusion, PerfectPrediction) {
  ConfusionCounts c(3);
  const auto m = map_of(2, 2, {0, 1, 2, 1});
  accumulate(m, m, c);
  for (Index k = 0; k < 3; ++k) {
    EXPECT_EQ(c.fp[static_cast<std::size_t>(k)], 0);
    EXPECT_EQ(c.fn[static_cast<std::size_t>(k)], 0);
    EXPECT_EQ(iou(c, k), 1.0);
    EXPECT_EQ(dsc(c, k), 1.0);
  }
  EXPECT_EQ(miou(c), 1.0);
}

TEST(Confusion, DisjointMapsHaveNoTruePositives) {
  ConfusionCounts c(2);
  accumulate(map_of(1, 3, {0, 0, 0}), map_of(1, 3, {1, 1, 1}), c);
  EXPECT_EQ(c.tp[0], 0);
  EXPECT_EQ(c.tp[1], 0);
  EXPECT_EQ(c.fp[0], 3);
  EXPECT_EQ(c.fn[1], 3);
  EXPECT_EQ(miou(c), 0.0);
}

TEST(Confusion, IgnoredGroundTruthSkipped) {
  ConfusionCounts c(2);
  const ConfusionCounts zero(2);
  accumulate(map_of(1, 2, {0, 1}), map_of(1, 2, {kIgnoreLabel, kIgnoreLabel}), c);
  EXPECT_EQ(c.tp, zero.tp);
  EXPECT_EQ(c.fp, zero.fp);
  EXPECT_EQ(c.fn, zero.fn);
  EXPECT_EQ(c.ignored, 2);
  EXPECT_THROW(miou(c), std::domain_error);
  EXPECT_THROW(accumulate(map_of(1, 2, {0, 1}), map_of(2, 1, {0, 1}), c), ShapeError);
}

TEST(Metrics, IouAndDscSpotValues) {
  ConfusionCounts c(1);
  c.tp[0] = 2;
  c.fp[0] = 1;
  c.fn[0] = 1;
  EXPECT_DOUBLE_EQ(iou(c, 0), 0.5);
  EXPECT_DOUBLE_EQ(dsc(c, 0), 2.0 / 3.0);
}

TEST(Metrics, DiceIdentityAndOrdering) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> d(0, 1000);
  for (int rep = 0; rep < 200; ++rep) {
    ConfusionCounts c(1);
    c.tp[0] = d(rng);
    c.fp[0] = d(rng);
    c.fn[0] = d(rng) + 1;
    const double i = iou(c, 0);
    EXPECT_NEAR(dsc(c, 0), 2 * i / (1 + i), 1e-12);
    EXPECT_LE(i, dsc(c, 0));
  }
}

TEST(Metrics, AbsentClassesExcludedFromMean) {
  ConfusionCounts c(4);
  accumulate(map_of(1, 4, {0, 0, 1, 1}), map_of(1, 4, {0, 1, 1, 1}), c);
  EXPECT_THROW(iou(c, 3), std::domain_error);
  EXPECT_DOUBLE_EQ(miou(c), (0.5 + 2.0 / 3.0) / 2);
  EXPECT_DOUBLE_EQ(miou(c, {1, 3}), 2.0 / 3.0);
  EXPECT_THROW(miou(c, {2, 3}), std::domain_error);
}

TEST(Metrics, AccumulationOrderInvariant) {
  std::mt19937_64 rng(9);
  std::uniform_int_distribution<int> cls(0, 3);
  std::vector<std::pair<LabelMap, LabelMap>> pairs;
  for (int i = 0; i < 6; ++i) {
    LabelMap p(4, 4), g(4, 4);
    for (Index k = 0; k < 16; ++k) {
      p.data()[k] = static_cast<std::uint8_t>(cls(rng));
      g.data()[k] = k % 7 == 0 ? kIgnoreLabel : static_cast<std::uint8_t>(cls(rng));
    }
    pairs.emplace_back(p, g);
  }
  ConfusionCounts fwd(4), rev(4), merged(4), half(4);
  for (const auto& [p, g] : pairs) accumulate(p, g, fwd);
  for (auto it = pairs.rbegin(); it != pairs.rend(); ++it) accumulate(it->first, it->second, rev);
  for (std::size_t i = 0; i < 3; ++i) accumulate(pairs[i].first, pairs[i].second, merged);
  for (std::size_t i = 3; i < 6; ++i) accumulate(pairs[i].first, pairs[i].second, half);
  merged += half;
  EXPECT_EQ(fwd, rev);
  EXPECT_EQ(fwd, merged);
}

TEST(Evaluate, PseudoLabelsAgreeWithArgmax) {
  std::mt19937_64 rng(3);
  const auto p = oracle::random_probs(rng, 3, 4, 8, 8);
  LabeledSplit split;
  for (const auto& lab : pseudo_labels(p, 0.0)) split.push_back(Tensor<float>({3, 8, 8}), lab);
  const auto r = evaluate_predictions(p.cast<float>(), split, 8);
  for (const auto& v : r.iou) {
    if (v) {
      EXPECT_EQ(*v, 1.0);
    }
  }
  EXPECT_EQ(r.miou, 1.0);
}

TEST(Evaluate, ReportIsDeterministicAndConsistent) {
  std::mt19937_64 rng(4);
  const auto p = oracle::random_probs(rng, 2, 3, 6, 6).cast<float>();
  LabeledSplit split;
  for (int i = 0; i < 2; ++i) {
    LabelMap g(6, 6);
    for (Index k = 0; k < 36; ++k) g.data()[k] = static_cast<std::uint8_t>(k % 2);  // class 2 absent
    split.push_back(Tensor<float>({3, 6, 6}), g);
  }
  const auto a = evaluate_predictions(p, split, 4), b = evaluate_predictions(p, split, 4);
  EXPECT_EQ(report_csv(a), report_csv(b));
  EXPECT_NEAR(a.mean_affinity, mean_affinity(p, NeighborhoodSpec(4)), 1e-12);
  const auto csv = report_csv(a);
  EXPECT_EQ(csv.rfind("class,iou,dsc\n", 0), 0u);
  EXPECT_NE(csv.find("\nmiou,"), std::string::npos);
  EXPECT_NE(csv.find("\nmean_affinity,"), std::string::npos);
  if (!a.iou[2]) {
    EXPECT_NE(csv.find("\n2,nan,nan\n"), std::string::npos);
  }
  EXPECT_THROW(evaluate_predictions(p, LabeledSplit{}, 4), ShapeError);
}
