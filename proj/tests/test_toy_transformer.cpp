#include <gtest/gtest.h>

#include <functional>
#include <optional>

#include "masteer/toy_transformer.hpp"
#include "support.hpp"

using namespace masteer;

namespace {

ToyConfig small(std::uint64_t seed = 0) {
  ToyConfig c;
  c.vocab = 16;
  c.d_model = 8;
  c.layers = 6;
  c.heads = 2;
  c.max_seq = 12;
  c.seed = seed;
  return c;
}

std::optional<ErrorKind> error_kind(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  return std::nullopt;
}

const std::vector<Token> kPrompt = {3, 1, 4, 1, 5, 9};

}  // namespace

TEST(ToyTransformer, SameSeedSameWeights) {
  EXPECT_EQ(ToyTransformer(small(4)).flat_weights(), ToyTransformer(small(4)).flat_weights());
  EXPECT_NE(ToyTransformer(small(4)).flat_weights(), ToyTransformer(small(5)).flat_weights());
}

TEST(ToyTransformer, WeightsFollowTheStream) {
  const auto w = ToyTransformer(small(9)).flat_weights();
  SplitMix64 rng(9);
  for (std::size_t i = 0; i < 50; ++i) ASSERT_EQ(w[i], static_cast<float>(-0.1 + 0.2 * rng.unit())) << i;
  for (float x : w) ASSERT_TRUE(x >= -0.1f && x <= 0.1f);
  const std::size_t d = 8, ff = 32;
  const std::size_t per_block = 4 * (d * d + d) + d * ff + ff + ff * d + d;
  EXPECT_EQ(w.size(), 16 * d + 12 * d + 6 * per_block + 16 * d + 16);
}

TEST(ToyTransformer, HeadsMustDivideWidth) {
  auto c = small();
  c.d_model = 30;
  c.heads = 4;
  EXPECT_EQ(error_kind([&] { ToyTransformer m(c); }), ErrorKind::config);
}

TEST(ToyTransformer, TraceShapes) {
  const ToyTransformer m(small());
  const auto t = m.forward(kPrompt);
  ASSERT_EQ(t.hidden.size(), 7u);
  for (const auto& h : t.hidden) EXPECT_EQ(h.size(), kPrompt.size() * 8);
  EXPECT_EQ(t.attn_state.size(), 6u);
  EXPECT_EQ(t.ffn_branch.size(), 6u);
  EXPECT_EQ(t.logits.size(), kPrompt.size() * 16);
  const auto one = m.forward(std::vector<Token>{2});
  EXPECT_EQ(one.hidden.size(), 7u);
  EXPECT_EQ(one.hidden[0].size(), 8u);
}

TEST(ToyTransformer, ForwardIsDeterministic) {
  const ToyTransformer m(small(3));
  const auto a = m.forward(kPrompt), b = m.forward(kPrompt);
  EXPECT_EQ(a.hidden, b.hidden);
  EXPECT_EQ(a.logits, b.logits);
}

TEST(ToyTransformer, BlockOutputIsAttnPlusFfnBranch) {
  const ToyTransformer m(small(1));
  const auto t = m.forward(kPrompt);
  for (std::size_t l = 0; l < 6; ++l) {
    for (std::size_t i = 0; i < t.hidden[l + 1].size(); ++i) {
      ASSERT_EQ(t.hidden[l + 1][i], t.attn_state[l][i] + t.ffn_branch[l][i]) << l << " " << i;
    }
  }
}

TEST(ToyTransformer, HookOnlyAffectsLaterLayers) {
  const ToyTransformer m(small(2));
  const auto base = m.forward(kPrompt);
  const auto hooked = m.forward(kPrompt, [](std::size_t layer, std::size_t, std::span<float> s) {
    if (layer == 3) s[0] += 1.0f;
  });
  for (std::size_t i = 0; i <= 3; ++i) EXPECT_EQ(hooked.hidden[i], base.hidden[i]) << i;
  // The hooked state itself is what the trace records for block 3.
  for (std::size_t p = 0; p < kPrompt.size(); ++p) {
    EXPECT_EQ(hooked.block_output(3, p)[0], base.block_output(3, p)[0] + 1.0f);
  }
  EXPECT_NE(hooked.hidden[5], base.hidden[5]);
  EXPECT_NE(hooked.logits, base.logits);
}

TEST(ToyTransformer, HookSeesEveryLayerAndPosition) {
  const ToyTransformer m(small());
  std::vector<std::pair<std::size_t, std::size_t>> calls;
  m.forward(kPrompt, [&](std::size_t l, std::size_t p, std::span<float> s) {
    EXPECT_EQ(s.size(), 8u);
    calls.emplace_back(l, p);
  });
  ASSERT_EQ(calls.size(), 6 * kPrompt.size());
  EXPECT_EQ(calls.front(), (std::pair<std::size_t, std::size_t>{0, 0}));
  EXPECT_EQ(calls.back(), (std::pair<std::size_t, std::size_t>{5, kPrompt.size() - 1}));
}

TEST(ToyTransformer, Causal) {
  const ToyTransformer m(small(6));
  auto changed = kPrompt;
  changed.back() = 11;
  const auto a = m.forward(kPrompt), b = m.forward(changed);
  for (std::size_t l = 0; l < a.hidden.size(); ++l) {
    for (std::size_t p = 0; p + 1 < kPrompt.size(); ++p) {
      const auto x = a.state(l, p), y = b.state(l, p);
      ASSERT_TRUE(std::equal(x.begin(), x.end(), y.begin())) << l << " " << p;
    }
  }
  // A prefix run reproduces the same states.
  const auto prefix = m.forward(std::span<const Token>(kPrompt).first(3));
  for (std::size_t p = 0; p < 3; ++p) {
    const auto x = a.state(6, p), y = prefix.state(6, p);
    ASSERT_TRUE(std::equal(x.begin(), x.end(), y.begin()));
  }
}

TEST(LayerNorm, ZeroMeanUnitVariance) {
  SplitMix64 rng(10);
  for (int t = 0; t < 100; ++t) {
    std::vector<float> in(4 + rng.below(60)), out(in.size());
    const double shift = 10 * rng.normal(), scale = 0.1 + 5 * rng.unit();
    for (auto& x : in) x = static_cast<float>(shift + scale * rng.normal());
    layer_norm(in, out);
    double mean = 0, var = 0;
    for (float x : out) mean += x;
    mean /= static_cast<double>(out.size());
    for (float x : out) var += (x - mean) * (x - mean);
    var /= static_cast<double>(out.size());
    ASSERT_NEAR(mean, 0.0, 1e-5);
    ASSERT_NEAR(var, 1.0, 1e-5);
  }
}

TEST(ToyTransformer, BadInputs) {
  const ToyTransformer m(small());
  EXPECT_EQ(error_kind([&] { m.forward(std::vector<Token>{}); }), ErrorKind::input);
  EXPECT_EQ(error_kind([&] { m.forward(std::vector<Token>{1, 16}); }), ErrorKind::input);
  EXPECT_EQ(error_kind([&] { m.forward(std::vector<Token>{-1}); }), ErrorKind::input);
  EXPECT_EQ(error_kind([&] { m.forward(std::vector<Token>(13, 1)); }), ErrorKind::input);
}

TEST(DecodeGreedy, ZeroNewTokens) {
  const ToyTransformer m(small());
  EXPECT_TRUE(decode_greedy(m, kPrompt, 0).empty());
}

TEST(DecodeGreedy, FollowsArgmaxAndStopsAtMaxSeq) {
  const ToyTransformer m(small(8));
  const auto out = decode_greedy(m, kPrompt, 100);
  EXPECT_EQ(out.size(), 12 - kPrompt.size());
  const auto logits = m.forward(kPrompt).logits_at(kPrompt.size() - 1);
  const auto best = std::max_element(logits.begin(), logits.end()) - logits.begin();
  EXPECT_EQ(out[0], best);
}

TEST(Encoding, BytesModVocabAndTail) {
  EXPECT_EQ(encode_text("AB", 64), (std::vector<Token>{'A' % 64, 'B' % 64}));
  EXPECT_EQ(keep_tail({1, 2, 3, 4}, 2), (std::vector<Token>{3, 4}));
  EXPECT_EQ(keep_tail({1, 2}, 5), (std::vector<Token>{1, 2}));
}

TEST(ExtractActivations, FinalTokenBlockOutputs) {
  SplitMix64 rng(12);
  auto ds = test::random_dataset(rng, 3, 1, 1);
  auto cfg = small(5);
  cfg.max_seq = 64;
  const ToyTransformer m(cfg);
  const auto acts = extract_activations(m, ds.corpus);
  EXPECT_EQ(acts.model_id, m.model_id());
  EXPECT_EQ(acts.num_layers, 6u);
  EXPECT_EQ(acts.hidden_dim, 8u);
  EXPECT_EQ(acts.extraction_mode, "teacher-forced");
  ASSERT_EQ(acts.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& s = ds.corpus.samples[i];
    EXPECT_EQ(acts.sample_ids[i], s.id);
    const auto tokens = keep_tail(encode_text(contrastive_text(s, false), 16), 64);
    const auto t = m.forward(tokens);
    EXPECT_EQ(acts.neg_token_index[i], static_cast<std::int64_t>(tokens.size() - 1));
    for (std::size_t l = 0; l < 6; ++l) {
      const auto want = t.block_output(l, tokens.size() - 1);
      const auto got = acts.neg_row(i, l);
      ASSERT_TRUE(std::equal(want.begin(), want.end(), got.begin()));
    }
  }
}

TEST(ToyConfig, JsonRoundTrip) {
  auto c = small(77);
  c.plant = ReadoutPlant{std::vector<float>(8, 0.5f), 2, 3, 1.5f, 6.0f};
  nlohmann::json j = c;
  EXPECT_EQ(j.get<ToyConfig>(), c);
}
