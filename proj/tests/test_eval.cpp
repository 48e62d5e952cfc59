#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "ngstyle/corpus.hpp"
#include "ngstyle/eval.hpp"
#include "oracles.hpp"

namespace ngstyle {
namespace {

const std::string kData = NGSTYLE_TEST_DATA_DIR;

TEST(Perplexity, UniformSourceEqualsVocabSize) {
  UniformSource u(4, "t");
  TokenSeq tokens{0, 3, 2, 2, 1, 0, 0, 3, 1, 2};
  auto r = sliding_window_ppl(u, tokens);
  EXPECT_NEAR(r.ppl, 4.0, 1e-9);
  EXPECT_EQ(r.token_count, 9u);
  EXPECT_EQ(r.window, 32u);
  EXPECT_EQ(r.stride, 1u);
  EXPECT_EQ(r.source_descriptor, "uniform:4");
}

// Puts probability 1 - eps on the true next token of a fixed short text.
class NearPerfectSource final : public LogitSource {
 public:
  NearPerfectSource(TokenSeq text, std::size_t vocab, double eps) : text_(std::move(text)), vocab_(vocab), eps_(eps) {}
  std::size_t vocab_size() const override { return vocab_; }
  const std::string& tokenizer_id() const override { return id_; }
  std::string descriptor() const override { return "near-perfect"; }
  Logits logits(TokenView ctx) const override {
    Logits l(vocab_, 0.0);
    l[static_cast<std::size_t>(text_[ctx.size()])] = std::log((1 - eps_) / eps_ * static_cast<double>(vocab_ - 1));
    return l;
  }

 private:
  TokenSeq text_;
  std::size_t vocab_;
  double eps_;
  std::string id_ = "t";
};

TEST(Perplexity, PerfectPredictionApproachesOne) {
  TokenSeq text{1, 4, 2, 0, 3, 3, 1};
  double prev = INFINITY;
  for (double eps : {1e-1, 1e-3, 1e-6, 1e-9}) {
    NearPerfectSource src(text, 5, eps);
    const double ppl = sliding_window_ppl(src, text).ppl;
    EXPECT_NEAR(ppl, 1.0 / (1.0 - eps), 1e-9);
    EXPECT_LT(ppl, prev);
    prev = ppl;
  }
  EXPECT_NEAR(prev, 1.0, 1e-8);
}

TEST(Perplexity, AddOneBigramGolden) {
  // Counts over [a,b,a,b,a]: a->b 2, b->a 2. Add-1 over |V| = 2 gives
  // p(b|a) = p(a|b) = 3/4, so ppl of [a,b,a] = 4/3.
  ReferenceLm lm(TokenSeq{0, 1, 0, 1, 0}, 2, 1.0, 2, "t");
  auto r = sliding_window_ppl(lm, TokenSeq{0, 1, 0});
  EXPECT_NEAR(r.ppl, 4.0 / 3.0, 1e-9);
  EXPECT_EQ(r.token_count, 2u);
}

TEST(Perplexity, NllMatchesNaiveSoftmax) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> nd(0.0, 4.0);
  for (int i = 0; i < 200; ++i) {
    Logits l(7);
    for (auto& x : l) x = nd(rng);
    const TokenId t = static_cast<TokenId>(i % 7);
    EXPECT_NEAR(token_nll(l, t, 0), oracle::naive_nll(l, t), 1e-10);
  }
}

// Records the contexts it is asked about.
class RecordingSource final : public LogitSource {
 public:
  std::size_t vocab_size() const override { return 3; }
  const std::string& tokenizer_id() const override { return id_; }
  std::string descriptor() const override { return "rec"; }
  Logits logits(TokenView ctx) const override {
    contexts.emplace_back(ctx.begin(), ctx.end());
    return Logits(3, 0.0);
  }
  mutable std::vector<TokenSeq> contexts;

 private:
  std::string id_ = "t";
};

TEST(Perplexity, EveryPositionScoredOnceWithCappedContext) {
  RecordingSource src;
  TokenSeq tokens{0, 1, 2, 0, 1, 2, 0};
  token_nlls(src, tokens, 3, 1);
  ASSERT_EQ(src.contexts.size(), 6u);
  EXPECT_EQ(src.contexts[0], (TokenSeq{0}));
  EXPECT_EQ(src.contexts[1], (TokenSeq{0, 1}));
  EXPECT_EQ(src.contexts[2], (TokenSeq{1, 2}));
  EXPECT_EQ(src.contexts[3], (TokenSeq{2, 0}));
  EXPECT_EQ(src.contexts[5], (TokenSeq{1, 2}));
}

TEST(Perplexity, StrideStartsWindowsAtMultiples) {
  EXPECT_EQ(context_begin(0, 4, 1), 0u);
  EXPECT_EQ(context_begin(5, 4, 1), 2u);
  EXPECT_EQ(context_begin(5, 4, 2), 2u);
  EXPECT_EQ(context_begin(6, 4, 2), 4u);
  EXPECT_EQ(context_begin(7, 4, 3), 6u);
  for (std::size_t i = 1; i < 100; ++i) {
    for (std::size_t s = 1; s < 8; ++s) {
      const auto b = context_begin(i, 8, s);
      EXPECT_LT(b, i);
      EXPECT_LE(i - b, 8u - 1);
      EXPECT_EQ(b % s, 0u);
    }
  }
}

TEST(Perplexity, WindowLargerThanShortSequenceChangesNothing) {
  ByteTokenizer tok;
  ReferenceLm lm(tok.encode(read_text_file(kData + "/neutral.txt")), 4, 0.1, tok.vocab_size(), tok.tokenizer_id());
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> len(2, 32);
  std::uniform_int_distribution<TokenId> td(32, 122);
  for (int i = 0; i < 20; ++i) {
    TokenSeq t(static_cast<std::size_t>(len(rng)));
    for (auto& x : t) x = td(rng);
    EXPECT_EQ(sliding_window_ppl(lm, t, 32).ppl, sliding_window_ppl(lm, t, 1000).ppl);
  }
}

TEST(Perplexity, Errors) {
  UniformSource u(4, "t");
  EXPECT_THROW(sliding_window_ppl(u, TokenSeq{1}), UsageError);
  EXPECT_THROW(sliding_window_ppl(u, TokenSeq{1, 2}, 1), UsageError);
  EXPECT_THROW(sliding_window_ppl(u, TokenSeq{1, 2}, 4, 4), UsageError);
  EXPECT_THROW(sliding_window_ppl(u, TokenSeq{1, 9}), UsageError);

  class NanAtThree final : public LogitSource {
   public:
    std::size_t vocab_size() const override { return 2; }
    const std::string& tokenizer_id() const override { return id_; }
    std::string descriptor() const override { return "nan"; }
    Logits logits(TokenView ctx) const override { return ctx.size() == 3 ? Logits{0.0, NAN} : Logits{0.0, 0.0}; }
    std::string id_ = "t";
  } nan_source;
  try {
    sliding_window_ppl(nan_source, TokenSeq{0, 1, 0, 1, 0});
    FAIL() << "expected EvaluationError";
  } catch (const EvaluationError& e) {
    EXPECT_NE(std::string(e.what()).find("position 3"), std::string::npos);
  }
}

GenerationRecord gen(TokenSeq tokens) {
  GenerationRecord r;
  r.tokens = std::move(tokens);
  r.provenance.assign(r.tokens.size(), 0);
  return r;
}

TEST(GenerationPerplexity, PoolingIdentities) {
  ReferenceLm lm(TokenSeq{0, 1, 2, 0, 1, 1, 2, 0, 2}, 2, 0.5, 3, "t");
  auto g1 = gen({0, 1, 2, 0, 1});
  auto g2 = gen({2, 2, 1, 0});
  const auto single = sliding_window_ppl(lm, g1.tokens);
  EXPECT_EQ(gppl({g1}, lm).ppl, single.ppl);
  EXPECT_NEAR(gppl({g1, g1}, lm).ppl, single.ppl, 1e-12);

  // Length-weighted combination of the two single-record reports.
  const auto r1 = sliding_window_ppl(lm, g1.tokens);
  const auto r2 = sliding_window_ppl(lm, g2.tokens);
  const double n1 = static_cast<double>(r1.token_count), n2 = static_cast<double>(r2.token_count);
  const double expected = std::exp((n1 * std::log(r1.ppl) + n2 * std::log(r2.ppl)) / (n1 + n2));
  auto pooled = gppl({g1, g2}, lm);
  EXPECT_NEAR(pooled.ppl, expected, 1e-12);
  EXPECT_EQ(pooled.token_count, r1.token_count + r2.token_count);
}

TEST(GenerationPerplexity, ContextResetsAtGenerationBoundaries) {
  RecordingSource src;
  gppl({gen({0, 1, 2}), gen({2, 1})}, src);
  ASSERT_EQ(src.contexts.size(), 3u);
  EXPECT_EQ(src.contexts[2], (TokenSeq{2}));  // second generation's first scored token sees only its own start
}

TEST(GenerationPerplexity, Errors) {
  UniformSource u(3, "t");
  EXPECT_THROW(gppl({}, u), UsageError);
  EXPECT_THROW(gppl({gen({1})}, u), EvaluationError);
}

struct RpplFixture {
  ByteTokenizer tok;
  TokenSeq neutral = tok.encode(read_text_file(kData + "/neutral.txt"));
  TokenSeq style = tok.encode(read_text_file(kData + "/style.txt"));
  TokenSeq target = tok.encode(read_text_file(kData + "/five_lines.txt"));
  ReferenceLm base{neutral, 3, 0.1, tok.vocab_size(), tok.tokenizer_id()};
};

TEST(RelativePerplexity, ZeroWeightsEqualPlainPerplexityExactly) {
  RpplFixture f;
  auto set = train_set(f.style, 4, f.tok.vocab_size(), f.tok.tokenizer_id());
  auto plain = sliding_window_ppl(f.base, f.style);
  auto zero = rppl(f.style, f.base, set, WeightTuple{});
  EXPECT_EQ(zero.ppl, plain.ppl);
  EXPECT_EQ(zero.token_count, plain.token_count);
  EXPECT_EQ(zero.weights, "0000");
}

constexpr double kGoldenW0 = 40.216547924110536, kGoldenMatched = 12.542929043759004,
                   kGoldenUnrelated = 64.203743497384323;

TEST(RelativePerplexity, MatchedStyleSetLowersPerplexity) {
  RpplFixture f;
  auto matched = train_set(f.target, 4, f.tok.vocab_size(), f.tok.tokenizer_id());
  auto unrelated = train_set(f.neutral, 4, f.tok.vocab_size(), f.tok.tokenizer_id());
  const double w0 = rppl(f.target, f.base, matched, WeightTuple{}).ppl;
  const double w_matched = rppl(f.target, f.base, matched, WeightTuple::of(0, 0, 2, 0)).ppl;
  const double w_unrelated = rppl(f.target, f.base, unrelated, WeightTuple::of(0, 0, 2, 0)).ppl;
  EXPECT_LT(w_matched, w0);
  EXPECT_GE(w_unrelated, w_matched);
  // Goldens agree with an independent recomputation.
  EXPECT_NEAR(w0, kGoldenW0, 1e-9 * kGoldenW0);
  EXPECT_NEAR(w_matched, kGoldenMatched, 1e-9 * kGoldenMatched);
  EXPECT_NEAR(w_unrelated, kGoldenUnrelated, 1e-9 * kGoldenUnrelated);
}

TEST(Reports, CsvRows) {
  std::stringstream ss;
  write_report_csv(ss, {{"a,b", 4.0, 9, 32, 1, "uniform:4", ""}, {"t", 1.5, 3, 32, 1, "x", "0021"}});
  EXPECT_EQ(ss.str(),
            "label,source_descriptor,weights,ppl,token_count,window,stride\n"
            "\"a,b\",uniform:4,,4,9,32,1\n"
            "t,x,0021,1.5,3,32,1\n");
}

}  // namespace
}  // namespace ngstyle
