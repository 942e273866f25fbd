#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "concise/rft.hpp"
#include "fixtures.hpp"

using namespace concise;

namespace {

const World& world() {
  static const World w{EnvConfig{}};
  return w;
}

const std::vector<Episode>& episodes() {
  static const std::vector<Episode> eps = EnvGenerator(EnvConfig{}, 21).take(20);
  return eps;
}

}  // namespace

TEST(Policy, UntrainedPolicyIsUniform) {
  Policy p = world().make_policy(PolicyConfig{});
  p.init(1);
  StepCache c;
  FeatureState st(episodes()[0], world().vocab, world().layout, 0.9);
  p.forward(st.features(), c);
  for (double lp : log_softmax(c.logits)) EXPECT_NEAR(lp, -std::log(world().vocab.size()), 1e-12);
}

TEST(Policy, DistributionsSumToOne) {
  const Policy p = fixtures::random_policy(world(), PolicyConfig{}, 2, 0.3);
  for (const Episode& e : episodes()) {
    const Trajectory t = sample_trajectory(p, world(), e, SampleOptions{}, e.id);
    replay(p, world(), e, t.tokens, [&](int, TokenId tok, const StepCache& c) {
      const auto lp = log_softmax(c.logits);
      double s = 0.0;
      for (double x : lp) s += std::exp(x);
      EXPECT_NEAR(s, 1.0, 1e-6);
      EXPECT_TRUE(std::isfinite(lp[tok]));
      double gs = 0.0;
      for (double g : c.gate) gs += g;
      EXPECT_NEAR(gs, 1.0, 1e-12);
    });
  }
}

TEST(Policy, SingleExpertMatchesDense) {
  PolicyConfig dense_cfg, one_cfg;
  dense_cfg.experts = 0;
  one_cfg.experts = 1;
  Policy dense = world().make_policy(dense_cfg), one = world().make_policy(one_cfg);
  dense.init(3);
  one.init(3);
  // Both layouts end with W2, b2 and the skip block; give them the same values.
  const std::size_t tail = dense.n_params() - (static_cast<std::size_t>(dense.input_dim()) *
                                                   dense_cfg.hidden + dense_cfg.hidden);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> normal(0.0, 0.3);
  for (std::size_t i = 0; i < tail; ++i) {
    const double v = normal(rng);
    dense.params()[dense.n_params() - 1 - i] = v;
    one.params()[one.n_params() - 1 - i] = v;
  }
  StepCache a, b;
  for (const Episode& e : episodes()) {
    FeatureState st(e, world().vocab, world().layout, 0.9);
    dense.forward(st.features(), a);
    one.forward(st.features(), b);
    ASSERT_EQ(a.logits.size(), b.logits.size());
    for (std::size_t i = 0; i < a.logits.size(); ++i) EXPECT_DOUBLE_EQ(a.logits[i], b.logits[i]);
  }
}

TEST(MoEStats, UniformGateSplitsTopOneEvenly) {
  for (int E : {1, 2, 3, 4, 8}) {
    MoEStats s(E);
    for (int t = 0; t < 10; ++t) s.add(std::vector<double>(E, 1.0 / E));
    for (double f : s.f()) EXPECT_NEAR(f, 1.0 / E, 1e-12);
    for (double P : s.P()) EXPECT_NEAR(P, 1.0 / E, 1e-12);
    EXPECT_NEAR(aux_loss(s), 1.0, 1e-12);
  }
}

TEST(MoEStats, HandBuiltTwoExpertFixture) {
  // Gate bias (ln 3, 0) on the bias feature alone routes 3:1 to expert 0.
  PolicyConfig cfg;
  cfg.experts = 2;
  cfg.hidden = 2;
  cfg.skip = false;
  Policy p(cfg, 4, 5);
  const std::size_t gate_b = 2 * (4 * 2 + 2) + 4 * 2;
  p.params()[gate_b] = std::log(3.0);
  StepCache c;
  p.forward({{0, 1.0}}, c);
  EXPECT_NEAR(c.gate[0], 0.75, 1e-12);
  EXPECT_NEAR(c.gate[1], 0.25, 1e-12);

  // Three tokens with gates (0.75, 0.25), (0.2, 0.8), (0.5, 0.5):
  // f = (1 + 0 + 0.5, 0 + 1 + 0.5) / 3, P = (1.45, 1.55) / 3.
  MoEStats s(2);
  s.add(c.gate);
  s.add({0.2, 0.8});
  s.add({0.5, 0.5});
  EXPECT_NEAR(s.f()[0], 0.5, 1e-12);
  EXPECT_NEAR(s.f()[1], 0.5, 1e-12);
  EXPECT_NEAR(s.P()[0], 1.45 / 3, 1e-12);
  EXPECT_NEAR(s.P()[1], 1.55 / 3, 1e-12);
  EXPECT_NEAR(aux_loss(s), 2 * (0.5 * 1.45 / 3 + 0.5 * 1.55 / 3), 1e-12);
}

TEST(MoEStats, EmptyStatsAreUndefined) {
  MoEStats s(3);
  EXPECT_THROW(s.f(), UndefinedStatsError);
  EXPECT_THROW(aux_loss(s), UndefinedStatsError);
}

TEST(Policy, CheckpointRoundTrip) {
  const Policy p = fixtures::random_policy(world(), PolicyConfig{}, 4, 0.1);
  const auto path = std::filesystem::temp_directory_path() / "concise_ckpt_rt.json";
  save_checkpoint(path, p, "abc123");
  const Checkpoint ck = load_checkpoint(path);
  EXPECT_EQ(ck.config_hash, "abc123");
  EXPECT_EQ(ck.policy.params(), p.params());
  EXPECT_EQ(ck.policy.config().experts, p.config().experts);
  std::filesystem::remove(path);
}

TEST(Sampling, SameSeedSameTrajectory) {
  const Policy p = fixtures::random_policy(world(), PolicyConfig{}, 5, 0.2);
  SampleOptions o;
  o.temperature = 0.7;
  for (const Episode& e : episodes()) {
    const Trajectory a = sample_trajectory(p, world(), e, o, 99);
    const Trajectory b = sample_trajectory(p, world(), e, o, 99);
    EXPECT_EQ(a.tokens, b.tokens);
    EXPECT_EQ(a.logprobs, b.logprobs);
  }
}

TEST(Sampling, ColdLimitEqualsGreedy) {
  const Policy p = fixtures::random_policy(world(), PolicyConfig{}, 6, 0.3);
  SampleOptions o;
  o.temperature = 1e-6;
  for (const Episode& e : episodes()) {
    const Trajectory g = greedy_trajectory(p, world(), e);
    for (std::uint64_t seed : {1, 2, 3}) {
      EXPECT_EQ(sample_trajectory(p, world(), e, o, seed).tokens, g.tokens);
    }
    EXPECT_EQ(greedy_trajectory(p, world(), e).tokens, g.tokens);
  }
}

TEST(Sampling, UniformLogitsGiveUniformFrequencies) {
  Policy p = world().make_policy(PolicyConfig{});
  p.init(7);
  SampleOptions o;
  o.temperature = 0.7;
  o.max_len = 2;
  const int V = world().vocab.size();
  const int n = 10000;
  std::vector<int> counts(V, 0);
  for (int i = 0; i < n; ++i) {
    ++counts[sample_trajectory(p, world(), episodes()[0], o, 1000 + i).tokens.front()];
  }
  const double mean = static_cast<double>(n) / V;
  const double sd = std::sqrt(n * (1.0 / V) * (1.0 - 1.0 / V));
  for (int t = 0; t < V; ++t) EXPECT_NEAR(counts[t], mean, 3.5 * sd) << "token " << t;
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - mean) * (c - mean) / mean;
  // dof = V - 1; mean V - 1, sd sqrt(2(V - 1)).
  EXPECT_LT(chi2, (V - 1) + 4.0 * std::sqrt(2.0 * (V - 1)));
}

TEST(Sampling, StoredLogProbsAreUntempered) {
  const Policy p = fixtures::random_policy(world(), PolicyConfig{}, 8, 0.2);
  SampleOptions o;
  o.temperature = 0.5;
  const Episode& e = episodes()[1];
  const Trajectory t = sample_trajectory(p, world(), e, o, 5);
  double sum = 0.0;
  for (double lp : t.logprobs) sum += lp;
  EXPECT_NEAR(sequence_log_prob(p, world(), e, t.tokens), sum, 1e-9);
}

TEST(Sampling, TruncationIsFlagged) {
  const Policy p = fixtures::random_policy(world(), PolicyConfig{}, 9, 0.01);
  SampleOptions o;
  o.max_len = 3;
  int truncated = 0;
  for (const Episode& e : episodes()) {
    const Trajectory t = sample_trajectory(p, world(), e, o, e.id);
    EXPECT_LE(t.tokens.size(), 3u);
    if (!t.terminated()) {
      EXPECT_TRUE(t.truncated);
      ++truncated;
    }
  }
  EXPECT_GT(truncated, 0);
  EXPECT_THROW(sample_trajectory(p, world(), episodes()[0], SampleOptions{0.0}, 1), ConfigError);
}

TEST(SequenceLogProb, UniformPolicy) {
  Policy p = world().make_policy(PolicyConfig{});
  p.init(10);
  const std::vector<TokenId> toks = {7, 8, Vocabulary::kSeparator, 9, Vocabulary::kEnd};
  EXPECT_NEAR(sequence_log_prob(p, world(), episodes()[0], toks),
              5 * std::log(1.0 / world().vocab.size()), 1e-9);
}

TEST(SequenceLogProb, DeterministicPolicyScoresZero) {
  // A huge bias on one token makes it certain at every step.
  PolicyConfig cfg;
  cfg.experts = 0;
  cfg.skip = false;
  Policy p = world().make_policy(cfg);
  const std::size_t b2 = p.n_params() - world().vocab.size();
  p.params()[b2 + Vocabulary::kEnd] = 1e3;
  EXPECT_NEAR(sequence_log_prob(p, world(), episodes()[0], {Vocabulary::kEnd}), 0.0, 1e-12);
}

TEST(SequenceLogProb, HandBuiltThreeTokenFixture) {
  // Output bias only: logits (b_0..b_{V-1}) at every step, so each token has a
  // fixed probability exp(b_t) / sum exp(b).
  PolicyConfig cfg;
  cfg.experts = 0;
  cfg.skip = false;
  Policy p = world().make_policy(cfg);
  const int V = world().vocab.size();
  const std::size_t b2 = p.n_params() - V;
  p.params()[b2 + 5] = std::log(4.0);
  p.params()[b2 + 6] = std::log(2.0);
  const double z = (V - 2) + 4.0 + 2.0;
  const double expect = std::log(4.0 / z) + std::log(2.0 / z) + std::log(1.0 / z);
  EXPECT_NEAR(sequence_log_prob(p, world(), episodes()[0], {5, 6, 7}), expect, 1e-12);
}

TEST(SequenceLogProb, UnknownTokenNamesIt) {
  Policy p = world().make_policy(PolicyConfig{});
  try {
    sequence_log_prob(p, world(), episodes()[0], {4, 9999});
    FAIL() << "expected a vocabulary error";
  } catch (const VocabularyError& err) {
    EXPECT_NE(std::string(err.what()).find("9999"), std::string::npos);
  }
}
