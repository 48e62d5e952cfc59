#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ngstyle/decode.hpp"
#include "ngstyle/scaling.hpp"
#include "oracles.hpp"

namespace ngstyle {
namespace {

constexpr TokenId a = 0, b = 1, c = 2;

TEST(ScaleFactor, ReferenceValues) {
  EXPECT_EQ(scale_factor(1.0, std::exp(-1.0)), 1.0);
  EXPECT_EQ(scale_factor(0.0, 0.5), 0.0);
  EXPECT_NEAR(scale_factor(2.0, 0.5), 2.885390081777926814, 1e-12);
  EXPECT_EQ(scale_factor(1.0, 0.0), 0.0);
}

TEST(ScaleFactor, CertainContinuationIsClampedAndFinite) {
  const double s = scale_factor(1.0, 1.0);
  EXPECT_TRUE(std::isfinite(s));
  EXPECT_NEAR(s, 999999999.5, 1.0);
  EXPECT_EQ(s, scale_factor(1.0, kProbCap));
}

TEST(ScaleFactor, UsageErrors) {
  EXPECT_THROW(scale_factor(-1.0, 0.5), UsageError);
  EXPECT_THROW(scale_factor(1.0, 1.5), UsageError);
  EXPECT_THROW(scale_factor(1.0, -0.1), UsageError);
  EXPECT_THROW(scale_factor(1.0, NAN), UsageError);
  EXPECT_THROW(scale_factor(INFINITY, 0.5), UsageError);
}

TEST(ScaleFactor, MonotoneInPAndLinearInF) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> pd(1e-6, kProbCap), fd(0.01, 5.0);
  for (int i = 0; i < 1000; ++i) {
    double p1 = pd(rng), p2 = pd(rng), f = fd(rng);
    if (p1 > p2) std::swap(p1, p2);
    if (p1 < p2) {
      EXPECT_LT(scale_factor(f, p1), scale_factor(f, p2));
    }
    EXPECT_EQ(scale_factor(2 * f, p1), 2 * scale_factor(f, p1));
    EXPECT_GE(scale_factor(f, p1), 0.0);
  }
}

TEST(Weights, ParseAndLabel) {
  EXPECT_EQ(parse_weights("0021"), WeightTuple::of(0, 0, 2, 1));
  EXPECT_EQ(parse_weights("0,0,2,1"), WeightTuple::of(0, 0, 2, 1));
  EXPECT_EQ(parse_weights("0, 0.5, 2, 1").label(), "0,0.5,2,1");
  EXPECT_EQ(WeightTuple::of(1, 1, 1, 0).label(), "1110");
  EXPECT_THROW(parse_weights("0,0,1"), UsageError);
  EXPECT_THROW(parse_weights("0,0,-1,0"), UsageError);
  EXPECT_THROW(parse_weights("0,x,1,0"), UsageError);
  EXPECT_DOUBLE_EQ(WeightTuple::of(4, 3, 2, 1).for_order(4), 4);
  EXPECT_DOUBLE_EQ(WeightTuple::of(4, 3, 2, 1).for_order(1), 1);
}

NgramSet bigram_set_aabab() {
  TokenSeq corpus{a, a, b, a, b};
  return train_set(corpus, 2, 3, "t");
}

TEST(ScalingVector, BigramExampleValues) {
  auto set = bigram_set_aabab();
  TokenSeq history{b, b, a};
  auto s = build_scaling_vector(set, WeightTuple::of(0, 0, 1, 0), history, 3);
  EXPECT_EQ(s.fired_order, 2);
  EXPECT_NEAR(s.values[a], 0.910239226626837393, 1e-12);
  EXPECT_NEAR(s.values[b], 2.466303462376431686, 1e-12);
  EXPECT_EQ(s.values[c], 0.0);
  EXPECT_EQ(s.source_support, (std::vector<TokenId>{a, b}));

  Logits base{0.25, -1.5, 3.0};
  auto out = apply_scaling(base, s);
  EXPECT_DOUBLE_EQ(out[0], 0.25 + 0.910239226626837393);
  EXPECT_DOUBLE_EQ(out[1], -1.5 + 2.466303462376431686);
  EXPECT_EQ(out[2], 3.0);
  EXPECT_EQ(base[0], 0.25);  // input untouched
}

TEST(ScalingVector, BackoffFiresBigramThenUnigram) {
  auto set = bigram_set_aabab();
  const auto w = WeightTuple::of(0, 0, 2, 1);
  auto seen = build_scaling_vector(set, w, TokenSeq{a}, 3);
  EXPECT_EQ(seen.fired_order, 2);
  EXPECT_NEAR(seen.values[b], scale_factor(2.0, 2.0 / 3.0), 0.0);

  auto unseen = build_scaling_vector(set, w, TokenSeq{c}, 3);  // bigram context [c] never seen
  EXPECT_EQ(unseen.fired_order, 1);
  EXPECT_NEAR(unseen.values[a], scale_factor(1.0, 3.0 / 5.0), 0.0);
  EXPECT_NEAR(unseen.values[b], scale_factor(1.0, 2.0 / 5.0), 0.0);
  EXPECT_EQ(unseen.values[c], 0.0);

  auto start = build_scaling_vector(set, w, TokenSeq{}, 3);  // not enough history for the bigram
  EXPECT_EQ(start.fired_order, 1);
}

TEST(ScalingVector, AllZeroWeightsNeverScale) {
  auto set = bigram_set_aabab();
  auto s = build_scaling_vector(set, WeightTuple{}, TokenSeq{a, b, a}, 3);
  EXPECT_EQ(s.fired_order, 0);
  for (double v : s.values) EXPECT_EQ(v, 0.0);
  EXPECT_TRUE(s.source_support.empty());
}

TEST(ScalingVector, NoSetOrExhaustedChainGivesZeros) {
  auto s = build_scaling_vector(nullptr, WeightTuple::of(1, 1, 1, 1), TokenSeq{a}, 3);
  EXPECT_EQ(s.fired_order, 0);
  auto set = bigram_set_aabab();
  auto t = build_scaling_vector(set, WeightTuple::of(1, 1, 1, 0), TokenSeq{c}, 3);  // unigram omitted
  EXPECT_EQ(t.fired_order, 0);
  for (double v : t.values) EXPECT_EQ(v, 0.0);
}

TEST(ScalingVector, VocabMismatchIsConfigError) {
  auto set = bigram_set_aabab();
  EXPECT_THROW(build_scaling_vector(set, WeightTuple::of(0, 0, 1, 0), TokenSeq{a}, 4), ConfigError);
}

TEST(ScalingVector, DeterministicContinuationIsCapped) {
  auto set = bigram_set_aabab();  // after b only a was seen, p = 1
  auto s = build_scaling_vector(set, WeightTuple::of(0, 0, 2, 0), TokenSeq{b}, 3);
  EXPECT_EQ(s.values[a], 60.0);
  ScalingOptions uncapped{0.0};
  auto u = build_scaling_vector(set, WeightTuple::of(0, 0, 2, 0), TokenSeq{b}, 3, uncapped);
  EXPECT_EQ(u.values[a], scale_factor(2.0, 1.0));
  EXPECT_LE(u.values[a], 2.0 / -std::log(kProbCap) * (1 + 1e-12));
}

TEST(ApplyScaling, LengthMismatchAndIdentity) {
  EXPECT_THROW(apply_scaling(Logits{0, 0}, ScalingVector::zeros(3)), UsageError);
  Logits l{0.0, 0.0};
  ScalingVector s{{1.0, 0.0}, 1, {0}};
  EXPECT_EQ(apply_scaling(l, s), (Logits{1.0, 0.0}));
  Logits r{1.5, -2.0, 7.25};
  EXPECT_EQ(apply_scaling(r, ScalingVector::zeros(3)), r);
}

// Random corpora, histories and weights against the per-order reference.
TEST(ScalingProperty, BackoffExclusivityAgainstReference) {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> wd(0, 2);
  for (int trial = 0; trial < 200; ++trial) {
    int vocab = 0;
    auto corpus = oracle::random_tokens(rng, 60, 5, &vocab);
    auto set = train_set(corpus, 4, static_cast<std::size_t>(vocab), "t");
    std::uniform_int_distribution<TokenId> td(0, vocab - 1);
    std::uniform_int_distribution<std::size_t> hl(0, 6);
    TokenSeq history(hl(rng));
    for (auto& t : history) t = td(rng);
    WeightTuple w = WeightTuple::of(wd(rng), wd(rng), wd(rng), wd(rng));

    auto s = build_scaling_vector(set, w, history, static_cast<std::size_t>(vocab));
    const int expected = oracle::reference_fired_order(corpus, 4, w.f, history);
    ASSERT_EQ(s.fired_order, expected);
    if (s.fired_order > 0) {
      EXPECT_GT(w.for_order(s.fired_order), 0.0);
    }
    if (s.fired_order == 0) {
      for (double v : s.values) EXPECT_EQ(v, 0.0);
      continue;
    }
    // Values come from the fired order's conditional only.
    const auto* model = set.model(s.fired_order);
    TokenView ctx = TokenView(history).last(static_cast<std::size_t>(s.fired_order - 1));
    for (TokenId t = 0; t < vocab; ++t) {
      const double p = *model->cond_prob(ctx, t);
      const double f = w.for_order(s.fired_order);
      EXPECT_EQ(s.values[static_cast<std::size_t>(t)], std::min(scale_factor(f, p), 30.0 * f));
      EXPECT_GE(s.values[static_cast<std::size_t>(t)], 0.0);
    }
  }
}

TEST(ScalingProperty, ZeroWeightsPreserveSoftmaxAndArgmax) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd(0.0, 3.0);
  auto set = train_set(TokenSeq{0, 1, 2, 3, 0, 1, 2, 0}, 4, 4, "t");
  for (int trial = 0; trial < 100; ++trial) {
    Logits l(4);
    for (auto& x : l) x = nd(rng);
    auto s = build_scaling_vector(set, WeightTuple{}, TokenSeq{0, 1}, 4);
    auto out = apply_scaling(l, s);
    EXPECT_EQ(softmax(out), softmax(l));
    EXPECT_EQ(argmax(out), argmax(l));
  }
}

}  // namespace
}  // namespace ngstyle
