#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "concise/rft.hpp"
#include "fixtures.hpp"

using namespace concise;

namespace {

const World& world() {
  static const World w{EnvConfig{}};
  return w;
}

// Verdict encoded in the first token: 0..3 -> (c, h) bits, 4 -> no verdict.
class ScriptedJudge : public Judge {
 public:
  JudgeOutcome judge(const Episode&, const Trajectory& t) override {
    ++calls;
    const int code = t.tokens.front();
    if (code == 4) return {};
    return {code & 1 ? true : false, code & 2 ? true : false, "scripted"};
  }
  std::string identity() const override { return "scripted"; }
  long calls = 0;
};

Trajectory coded(bool c, bool h) { return fixtures::make_traj({(c ? 1 : 0) + (h ? 2 : 0), 9}); }

std::vector<CandidateSet> coded_sets(const std::vector<Episode>& eps,
                                     const std::vector<std::vector<Trajectory>>& cands) {
  std::vector<CandidateSet> sets;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    CandidateSet s;
    s.episode = &eps[i];
    for (const auto& t : cands[i]) s.candidates.push_back({t, std::nullopt});
    sets.push_back(std::move(s));
  }
  return sets;
}

// Independent oracle: judge every candidate, keep the first double pass.
std::vector<std::pair<std::uint64_t, int>> brute_force(const std::vector<CandidateSet>& sets) {
  std::vector<std::pair<std::uint64_t, int>> out;
  for (const auto& s : sets) {
    for (std::size_t i = 0; i < s.candidates.size(); ++i) {
      const int code = s.candidates[i].trajectory.tokens.front();
      if (code == 3) {
        out.push_back({s.episode->id, static_cast<int>(i)});
        break;
      }
    }
  }
  return out;
}

}  // namespace

TEST(RejectionFilter, FirstDoublePassIsAccepted) {
  const auto eps = EnvGenerator(world().env, 51).take(3);
  auto sets = coded_sets(eps, {{coded(1, 0), coded(0, 1), coded(1, 1), coded(1, 1)},
                               {coded(0, 1), coded(0, 0), coded(0, 1), coded(0, 0)},
                               {coded(1, 1), coded(1, 1), coded(1, 1), coded(1, 1)}});
  ScriptedJudge judge;
  FilterStats st;
  const DistillDataset ds = rejection_filter(sets, judge, &st);
  EXPECT_EQ(*sets[0].accepted, 2);
  EXPECT_FALSE(sets[1].accepted.has_value());
  EXPECT_EQ(*sets[2].accepted, 0);
  ASSERT_EQ(ds.examples.size(), 2u);
  EXPECT_EQ(ds.examples[0].candidate_index, 2);
  EXPECT_EQ(ds.examples[0].episode.id, eps[0].id);
  EXPECT_EQ(ds.examples[1].episode.id, eps[2].id);
  EXPECT_EQ(st.sets, 3);
  EXPECT_EQ(st.accepted, 2);
  EXPECT_EQ(st.candidates, 12);
  EXPECT_EQ(judge.calls, 12);
}

TEST(RejectionFilter, MissingVerdictRejectsCandidate) {
  const auto eps = EnvGenerator(world().env, 52).take(1);
  auto sets = coded_sets(eps, {{fixtures::make_traj({4, 9}), coded(1, 1)}});
  ScriptedJudge judge;
  FilterStats st;
  const DistillDataset ds = rejection_filter(sets, judge, &st);
  EXPECT_EQ(*sets[0].accepted, 1);
  EXPECT_EQ(st.judge_unavailable, 1);
  for (const auto& ex : ds.examples) EXPECT_TRUE(*ex.verdict.correct && *ex.verdict.helpful);
}

TEST(RejectionFilter, MatchesBruteForceOnRandomSets) {
  const auto eps = EnvGenerator(world().env, 53).take(1000);
  std::mt19937_64 rng(53);
  std::vector<std::vector<Trajectory>> cands;
  for (std::size_t i = 0; i < eps.size(); ++i) {
    std::vector<Trajectory> c;
    const int k = 1 + static_cast<int>(rng() % 6);
    for (int j = 0; j < k; ++j) c.push_back(fixtures::make_traj({static_cast<TokenId>(rng() % 5), 9}));
    cands.push_back(std::move(c));
  }
  auto sets = coded_sets(eps, cands);
  ScriptedJudge judge;
  const DistillDataset ds = rejection_filter(sets, judge);
  std::vector<std::pair<std::uint64_t, int>> got;
  for (const auto& ex : ds.examples) got.push_back({ex.episode.id, ex.candidate_index});
  EXPECT_EQ(got, brute_force(sets));
}

TEST(GenerateCandidates, CountsAndDeterminism) {
  const auto eps = EnvGenerator(world().env, 54).take(30);
  const ScriptedTeacher teacher(world(), TeacherConfig{});
  const auto a = generate_candidates(teacher, eps, 4, 0.7, 9);
  const auto b = generate_candidates(teacher, eps, 4, 0.7, 9);
  ASSERT_EQ(a.size(), eps.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    ASSERT_EQ(a[i].candidates.size(), 4u);
    for (int j = 0; j < 4; ++j) {
      EXPECT_EQ(a[i].candidates[j].trajectory.tokens, b[i].candidates[j].trajectory.tokens);
      EXPECT_FALSE(a[i].candidates[j].outcome.has_value());
    }
    // Distinct sub-seeds give distinct samples.
    EXPECT_NE(a[i].candidates[0].trajectory.tokens, a[i].candidates[1].trajectory.tokens);
  }
  EXPECT_EQ(generate_candidates(teacher, eps, 1, 0.7, 9)[0].candidates.size(), 1u);
  EXPECT_THROW(generate_candidates(teacher, eps, 0, 0.7, 9), ConfigError);
}

TEST(GenerateCandidates, TeacherFailureSkipsEpisode) {
  struct Flaky : Teacher {
    Trajectory generate(const Episode& e, double, std::uint64_t) const override {
      if (e.id % 3 == 0) throw Error("boom");
      return fixtures::respond({});
    }
    std::string identity() const override { return "flaky"; }
  } flaky;
  const auto eps = EnvGenerator(world().env, 55).take(9);
  long failures = 0;
  const auto sets = generate_candidates(flaky, eps, 2, 0.7, 1, &failures);
  EXPECT_EQ(failures, 3);
  EXPECT_EQ(sets.size(), 6u);
}

TEST(Teacher, ErrorFreeOutputIsCorrectAndHelpful) {
  TeacherConfig cfg;
  cfg.error_rate = 0.0;
  const ScriptedTeacher teacher(world(), cfg);
  for (const Episode& e : EnvGenerator(world().env, 56).take(1000)) {
    const Trajectory t = teacher.generate(e, 0.7, e.id);
    EXPECT_TRUE(oracle_correct(e, t, world().vocab)) << e.id;
    EXPECT_TRUE(oracle_helpful(e, t, world().vocab)) << e.id;
  }
}

TEST(Teacher, MeanThoughtLengthTracksVerbosity) {
  TeacherConfig cfg;
  cfg.verbosity = 200;
  const ScriptedTeacher teacher(world(), cfg);
  double total = 0.0;
  const auto eps = EnvGenerator(world().env, 57).take(1000);
  for (const Episode& e : eps) total += teacher.generate(e, 0.7, e.id).thought().size();
  EXPECT_NEAR(total / eps.size(), 200.0, 20.0);
}

TEST(Teacher, AcceptanceRateMatchesBinomialModel) {
  TeacherConfig cfg;
  cfg.error_rate = 0.25;
  const ScriptedTeacher teacher(world(), cfg);
  const auto eps = EnvGenerator(world().env, 58).take(2000);
  auto sets = generate_candidates(teacher, eps, 4, 0.7, 58);
  OracleJudge judge(world());
  FilterStats st;
  rejection_filter(sets, judge, &st);
  const double p = 1.0 - std::pow(0.25, 4);
  EXPECT_NEAR(st.acceptance_rate(), p, fixtures::binomial_halfwidth(p, st.sets, 2.576) + 0.5 / st.sets);

  // Per candidate the rejection rate is the error rate itself.
  long bad = 0;
  for (const auto& s : sets) {
    for (const auto& c : s.candidates) bad += c.outcome->correct && *c.outcome->correct && *c.outcome->helpful ? 0 : 1;
  }
  EXPECT_NEAR(bad / 8000.0, 0.25, fixtures::binomial_halfwidth(0.25, 8000, 3.0));
}

TEST(Teacher, LengthRewardNearZeroForVerboseTeacher) {
  // Before RL the policy imitates the teacher, so L is about L_ref; the band
  // sits at half of L_ref.
  TeacherConfig cfg;
  cfg.error_rate = 0.0;
  cfg.verbosity = 200;
  const ScriptedTeacher teacher(world(), cfg);
  double lr = 0.0;
  const auto eps = EnvGenerator(world().env, 59).take(200);
  for (const Episode& e : eps) {
    const double len = teacher.generate(e, 0.7, e.id).length();
    lr += length_reward(len, len, LengthRewardConfig{});
  }
  EXPECT_EQ(lr, 0.0);
}

TEST(SftLoss, AnalyticCases) {
  const auto eps = EnvGenerator(world().env, 60).take(2);
  Policy uniform = world().make_policy(PolicyConfig{});
  uniform.init(1);
  const std::vector<TokenId> a = {10, 11, Vocabulary::kSeparator, 12, Vocabulary::kEnd};
  const std::vector<TokenId> b = {Vocabulary::kSeparator, Vocabulary::kEnd};
  EXPECT_NEAR(sft_loss(uniform, world(), {{&eps[0], &a}, {&eps[1], &b}}),
              std::log(world().vocab.size()), 1e-12);

  // Output bias only: p(5) = 4/z, p(6) = 2/z. Two-token fixture.
  PolicyConfig pc;
  pc.experts = 0;
  pc.skip = false;
  Policy fixed = world().make_policy(pc);
  const int V = world().vocab.size();
  fixed.params()[fixed.n_params() - V + 5] = std::log(4.0);
  fixed.params()[fixed.n_params() - V + 6] = std::log(2.0);
  const double z = V - 2 + 6.0;
  const std::vector<TokenId> two = {5, 6};
  EXPECT_NEAR(sft_loss(fixed, world(), {{&eps[0], &two}}),
              -(std::log(4.0 / z) + std::log(2.0 / z)) / 2, 1e-12);

  Policy certain = world().make_policy(pc);
  certain.params()[certain.n_params() - V + Vocabulary::kEnd] = 1e3;
  const std::vector<TokenId> end = {Vocabulary::kEnd, Vocabulary::kEnd};
  EXPECT_NEAR(sft_loss(certain, world(), {{&eps[0], &end}}), 0.0, 1e-12);

  const std::vector<TokenId> bad = {5, 777};
  EXPECT_THROW(sft_loss(fixed, world(), {{&eps[0], &bad}}), VocabularyError);
}

TEST(AuxLoss, Examples) {
  for (int E : {1, 2, 4, 7}) {
    MoEStats one_hot(E);
    std::vector<double> g(E, 0.0);
    g[0] = 1.0;
    for (int t = 0; t < 5; ++t) one_hot.add(g);
    EXPECT_NEAR(aux_loss(one_hot), E, 1e-12);
  }
  MoEStats single(1);
  single.add({1.0});
  single.add({1.0});
  EXPECT_NEAR(aux_loss(single), 1.0, 1e-12);
}

TEST(RftLoss, ZeroAuxWeightIsPureSftAndTotalDominatesSft) {
  const auto eps = EnvGenerator(world().env, 61).take(4);
  const Policy p = fixtures::random_policy(world(), PolicyConfig{}, 61, 0.2);
  std::vector<Trajectory> ts;
  for (const auto& e : eps) ts.push_back(sample_trajectory(p, world(), e, SampleOptions{}, e.id));
  std::vector<SequenceRef> batch;
  for (std::size_t i = 0; i < eps.size(); ++i) batch.push_back({&eps[i], &ts[i].tokens});
  const TotalLoss zero = rft_loss(p, world(), batch, 0.0, nullptr);
  EXPECT_EQ(zero.total, zero.sft);
  EXPECT_NEAR(zero.sft, sft_loss(p, world(), batch), 1e-12);
  const TotalLoss with = rft_loss(p, world(), batch, 0.01, nullptr);
  EXPECT_GE(with.aux, 1.0 - 1e-12);
  EXPECT_GE(with.total, with.sft);
  EXPECT_NEAR(with.total, with.sft + 0.01 * with.aux, 1e-12);
}

TEST(RftLoss, GradientMatchesFiniteDifferences) {
  const auto eps = EnvGenerator(world().env, 62).take(3);
  PolicyConfig pc;
  pc.hidden = 4;
  pc.experts = 3;
  const Policy p = fixtures::random_policy(world(), pc, 62, 0.3);
  std::vector<Trajectory> ts;
  for (const auto& e : eps) ts.push_back(sample_trajectory(p, world(), e, {1.0, 10}, e.id));
  std::vector<SequenceRef> batch;
  for (std::size_t i = 0; i < eps.size(); ++i) batch.push_back({&eps[i], &ts[i].tokens});
  // The top-1 fractions are piecewise constant, so a small probe sees the
  // same f_i the analytic gradient treats as constants.
  for (double coef : {0.0, 0.5}) {
    std::vector<double> grad(p.n_params(), 0.0);
    rft_loss(p, world(), batch, coef, &grad);
    std::mt19937_64 rng(63);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> dir(p.n_params());
    double n2 = 0.0;
    for (double& d : dir) n2 += (d = normal(rng)) * d;
    for (double& d : dir) d /= std::sqrt(n2);
    Policy plus = p, minus = p;
    const double h = 1e-5;
    for (std::size_t i = 0; i < dir.size(); ++i) {
      plus.params()[i] += h * dir[i];
      minus.params()[i] -= h * dir[i];
    }
    const double fd = (rft_loss(plus, world(), batch, coef, nullptr).total -
                       rft_loss(minus, world(), batch, coef, nullptr).total) / (2 * h);
    double an = 0.0;
    for (std::size_t i = 0; i < dir.size(); ++i) an += grad[i] * dir[i];
    EXPECT_NEAR(fd, an, 1e-6 * std::max(1.0, std::abs(an))) << "aux coef " << coef;
  }
}

TEST(RunRft, LossNonIncreasingOnOwnGreedyOutputs) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto eps = EnvGenerator(world().env, 64 + seed).take(40);
    Policy p = fixtures::random_policy(world(), PolicyConfig{}, seed, 0.1);
    DistillDataset ds;
    for (const auto& e : eps) ds.examples.push_back({e, greedy_trajectory(p, world(), e, 24), {}, 0, true});
    RFTConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.epochs = 5;
    const auto hist = run_rft(p, world(), ds, cfg, seed);
    ASSERT_EQ(hist.size(), 5u);
    for (std::size_t i = 1; i < hist.size(); ++i) {
      EXPECT_LE(hist[i].sft, hist[i - 1].sft) << "seed " << seed << " epoch " << i;
    }
  }
}

TEST(RunRft, RejectsEmptyDataset) {
  Policy p = world().make_policy(PolicyConfig{});
  EXPECT_THROW(run_rft(p, world(), DistillDataset{}, RFTConfig{}, 1), Error);
}

TEST(RunRft, StudentInheritsTeacherLength) {
  const auto eps = EnvGenerator(world().env, 70).take(1500);
  const ScriptedTeacher teacher(world(), TeacherConfig{});
  auto sets = generate_candidates(teacher, eps, 4, 0.7, 70);
  OracleJudge judge(world());
  const DistillDataset ds = rejection_filter(sets, judge);
  double teacher_len = 0.0;
  for (const auto& ex : ds.examples) teacher_len += ex.trajectory.length();
  teacher_len /= ds.examples.size();

  Policy student = world().make_policy(PolicyConfig{});
  student.init(70);
  RFTConfig cfg;
  cfg.epochs = 6;
  run_rft(student, world(), ds, cfg, 70);
  const auto test = EnvGenerator(world().env, 71).take(200);
  double len = 0.0;
  for (const auto& e : test) len += sample_trajectory(student, world(), e, SampleOptions{}, e.id).length();
  len /= test.size();
  EXPECT_NEAR(len, teacher_len, 0.15 * teacher_len);
}

TEST(Dataset, RoundTripAndHash) {
  const auto eps = EnvGenerator(world().env, 72).take(50);
  const ScriptedTeacher teacher(world(), TeacherConfig{});
  auto sets = generate_candidates(teacher, eps, 4, 0.7, 72);
  OracleJudge judge(world());
  DistillDataset ds = rejection_filter(sets, judge);
  ds.provenance = {72, 4, 0.7, teacher.identity(), judge.identity(), true};
  const auto path = std::filesystem::temp_directory_path() / "concise_distill_rt.jsonl";
  write_dataset(path, ds, world().vocab);
  const DistillDataset back = read_dataset(path, world().vocab);
  EXPECT_EQ(dataset_hash(back, world().vocab), dataset_hash(ds, world().vocab));
  ASSERT_EQ(back.examples.size(), ds.examples.size());
  EXPECT_EQ(back.provenance.teacher, ds.provenance.teacher);
  EXPECT_EQ(back.provenance.k, 4);
  for (std::size_t i = 0; i < ds.examples.size(); ++i) {
    EXPECT_EQ(back.examples[i].trajectory.tokens, ds.examples[i].trajectory.tokens);
    EXPECT_EQ(back.examples[i].candidate_index, ds.examples[i].candidate_index);
  }
  std::filesystem::remove(path);

  // Same seed, same dataset; a different seed changes it.
  auto again = generate_candidates(teacher, eps, 4, 0.7, 72);
  DistillDataset ds2 = rejection_filter(again, judge);
  ds2.provenance = ds.provenance;
  EXPECT_EQ(dataset_hash(ds2, world().vocab), dataset_hash(ds, world().vocab));
  auto other = generate_candidates(teacher, eps, 4, 0.7, 73);
  DistillDataset ds3 = rejection_filter(other, judge);
  ds3.provenance = ds.provenance;
  EXPECT_NE(dataset_hash(ds3, world().vocab), dataset_hash(ds, world().vocab));
}

TEST(Dataset, UnfilteredKeepsOneSamplePerEpisode) {
  const auto eps = EnvGenerator(world().env, 74).take(40);
  TeacherConfig cfg;
  cfg.error_rate = 0.5;
  const ScriptedTeacher teacher(world(), cfg);
  const auto sets = generate_candidates(teacher, eps, 4, 0.7, 74);
  const DistillDataset ds = unfiltered_dataset(sets);
  ASSERT_EQ(ds.examples.size(), eps.size());
  EXPECT_FALSE(ds.provenance.filtered);
  for (std::size_t i = 0; i < eps.size(); ++i) {
    EXPECT_EQ(ds.examples[i].trajectory.tokens, sets[i].candidates[0].trajectory.tokens);
  }
}
