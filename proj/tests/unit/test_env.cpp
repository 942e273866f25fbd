#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "concise/episode.hpp"
#include "concise/features.hpp"
#include "concise/oracle.hpp"
#include "fixtures.hpp"

using namespace concise;
using fixtures::respond;

namespace {

bool same_episode(const Episode& a, const Episode& b) {
  if (a.id != b.id || a.noise_seed != b.noise_seed || a.answerable != b.answerable ||
      a.gold_answer != b.gold_answer || a.gold_aux_facts != b.gold_aux_facts ||
      a.question.doc != b.question.doc || a.question.key != b.question.key ||
      a.documents.size() != b.documents.size() || a.history.size() != b.history.size()) {
    return false;
  }
  for (std::size_t i = 0; i < a.documents.size(); ++i) {
    const Fact &x = a.documents[i], &y = b.documents[i];
    if (x.doc != y.doc || x.key != y.key || x.value != y.value) return false;
  }
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    if (a.history[i].question.doc != b.history[i].question.doc ||
        a.history[i].question.key != b.history[i].question.key ||
        a.history[i].response != b.history[i].response) {
      return false;
    }
  }
  return true;
}

Episode first_where(EnvGenerator& gen, bool answerable) {
  for (;;) {
    Episode e = gen.next();
    if (e.answerable == answerable && !e.gold_aux_facts.empty()) return e;
  }
}

}  // namespace

TEST(Vocabulary, IdsDistinctAndSpecialsReserved) {
  const Vocabulary v{EnvConfig{}};
  EXPECT_LE(v.size(), Vocabulary::kMaxSize);
  std::set<std::string> names;
  for (TokenId t = 0; t < v.size(); ++t) names.insert(v.name(t));
  EXPECT_EQ(static_cast<int>(names.size()), v.size());
  EXPECT_EQ(v.kind(Vocabulary::kBegin), TokenKind::kBegin);
  EXPECT_EQ(v.kind(Vocabulary::kSeparator), TokenKind::kSeparator);
  EXPECT_EQ(v.kind(Vocabulary::kEnd), TokenKind::kEnd);
  EXPECT_EQ(v.kind(Vocabulary::kUnavailable), TokenKind::kUnavailable);
  for (TokenId t = 0; t < v.size(); ++t) EXPECT_EQ(v.id(v.name(t)), t);
  EXPECT_THROW(v.check(v.size()), VocabularyError);
  EXPECT_THROW(v.id("no-such-token"), VocabularyError);
}

TEST(EnvGenerator, SameSeedSameStream) {
  EnvGenerator a(EnvConfig{}, 1), b(EnvConfig{}, 1), c(EnvConfig{}, 2);
  const auto xs = a.take(200), ys = b.take(200), zs = c.take(200);
  int differ = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    EXPECT_TRUE(same_episode(xs[i], ys[i])) << i;
    differ += same_episode(xs[i], zs[i]) ? 0 : 1;
  }
  EXPECT_GT(differ, 150);
}

TEST(EnvGenerator, EpisodesSatisfyInvariants) {
  EnvGenerator gen(EnvConfig{}, 3);
  const Vocabulary& v = gen.vocabulary();
  for (const Episode& e : gen.take(2000)) {
    EXPECT_NO_THROW(e.validate(v));
    EXPECT_EQ(e.answerable, e.contains_value(v, e.gold_answer));
    for (TokenId a : e.gold_aux_facts) EXPECT_TRUE(e.contains_value(v, a));
    const auto ids = e.doc_ids();
    EXPECT_EQ(std::set<int>(ids.begin(), ids.end()).size(), ids.size());
  }
}

TEST(EnvGenerator, FullyAnswerableConfig) {
  EnvConfig cfg;
  cfg.answerable_fraction = 1.0;
  EnvGenerator gen(cfg, 4);
  for (const Episode& e : gen.take(500)) {
    EXPECT_TRUE(e.answerable);
    EXPECT_TRUE(e.contains_value(gen.vocabulary(), e.gold_answer));
  }
}

TEST(EnvGenerator, AnswerableFractionWithinTwoPercent) {
  for (double frac : {0.8, 0.5}) {
    EnvConfig cfg;
    cfg.answerable_fraction = frac;
    EnvGenerator gen(cfg, 5);
    int n = 0;
    for (const Episode& e : gen.take(10000)) n += e.answerable ? 1 : 0;
    EXPECT_NEAR(n / 10000.0, frac, 0.02);
  }
}

TEST(EnvGenerator, CorpusRoundTrip) {
  EnvGenerator gen(EnvConfig{}, 6);
  const auto eps = gen.take(300);
  const auto path = std::filesystem::temp_directory_path() / "concise_corpus_rt.jsonl";
  write_corpus(path, eps, gen.vocabulary());
  const auto back = read_corpus(path, gen.vocabulary());
  ASSERT_EQ(back.size(), eps.size());
  for (std::size_t i = 0; i < eps.size(); ++i) EXPECT_TRUE(same_episode(eps[i], back[i])) << i;
  std::filesystem::remove(path);
}

TEST(EnvGenerator, RejectsCorruptCorpusLine) {
  const Vocabulary v{EnvConfig{}};
  EnvGenerator gen(EnvConfig{}, 7);
  auto j = episode_to_json(gen.next(), v);
  j["gold_answer"] = "not-a-token";
  EXPECT_THROW(episode_from_json(j, v), Error);
}

TEST(ReadFact, DeterministicAndNoisyAtConfiguredRate) {
  const World world{EnvConfig{}};
  EnvGenerator gen(world.env, 8);
  int right = 0, total = 0;
  for (const Episode& e : gen.take(400)) {
    for (const Fact& f : e.documents) {
      for (int pos = 0; pos < 10; ++pos) {
        const ReadResult a = read_fact(e, world.vocab, 0.9, pos, f.doc, f.key);
        const ReadResult b = read_fact(e, world.vocab, 0.9, pos, f.doc, f.key);
        ASSERT_TRUE(a.value.has_value());
        EXPECT_EQ(*a.value, *b.value);
        EXPECT_EQ(world.vocab.value_key(*a.value), f.key);  // misreads stay in the key's range
        right += *a.value == world.vocab.value(f.key, f.value) ? 1 : 0;
        ++total;
      }
    }
  }
  EXPECT_NEAR(static_cast<double>(right) / total, 0.9,
              fixtures::binomial_halfwidth(0.9, total, 4.0));
}

TEST(ReadFact, MissingFactAndPerfectAccuracy) {
  const World world{EnvConfig{}};
  EnvGenerator gen(world.env, 9);
  const Episode e = gen.next();
  int absent_doc = 0;
  while (e.has_doc(absent_doc)) ++absent_doc;
  EXPECT_FALSE(read_fact(e, world.vocab, 0.9, 0, absent_doc, 0).value.has_value());
  for (const Fact& f : e.documents) {
    for (int pos = 0; pos < 50; ++pos) {
      EXPECT_EQ(read_fact(e, world.vocab, 1.0, pos, f.doc, f.key).value,
                world.vocab.value(f.key, f.value));
    }
  }
}

TEST(Features, IndicesInRangeAndVoteLeadersTrackPlurality) {
  const World world{EnvConfig{}};
  EnvGenerator gen(world.env, 10);
  const Episode e = first_where(gen, true);
  const Vocabulary& v = world.vocab;
  FeatureState st(e, v, world.layout, 0.9);
  auto leaders = [&] {
    std::vector<int> out;
    for (const auto& [i, x] : st.features()) {
      EXPECT_GE(i, 0);
      EXPECT_LT(i, world.layout.dim);
      if (i >= world.layout.vote_leaders && i < world.layout.vote_leaders + v.n_values()) {
        out.push_back(i - world.layout.vote_leaders);
      }
    }
    return out;
  };
  EXPECT_TRUE(leaders().empty());

  // Read the asked fact repeatedly and recount the plurality by hand.
  std::vector<int> votes(v.n_values(), 0);
  for (int r = 0; r < 6; ++r) {
    st.advance(v.doc(e.question.doc));
    st.advance(v.key(e.question.key));
    const ReadResult& res = st.reads().back();
    ASSERT_TRUE(res.value.has_value());
    ++votes[v.value_slot(*res.value)];
    const int best = *std::max_element(votes.begin(), votes.end());
    std::vector<int> expect;
    for (int s = 0; s < v.n_values(); ++s) {
      if (votes[s] == best) expect.push_back(s);
    }
    EXPECT_EQ(leaders(), expect) << "after read " << r;
  }
}

TEST(Oracle, RuleTable) {
  const World world{EnvConfig{}};
  const Vocabulary& v = world.vocab;
  EnvGenerator gen(world.env, 11);
  const Episode ans = first_where(gen, true);
  const Episode un = first_where(gen, false);

  auto absent_value = [&](const Episode& e) {
    for (int s = 0; s < v.n_values(); ++s) {
      if (!e.contains_value(v, v.value_from_slot(s))) return v.value_from_slot(s);
    }
    return Vocabulary::kUnavailable;
  };
  auto absent_doc = [&](const Episode& e) {
    int d = 0;
    while (e.has_doc(d)) ++d;
    return v.doc(d);
  };
  const TokenId aux = ans.gold_aux_facts.front();
  const TokenId listed_doc = v.doc(un.doc_ids().front());

  struct Row {
    const Episode* e;
    Trajectory t;
    bool correct, helpful;
  };
  Trajectory truncated = respond({ans.gold_answer, aux});
  truncated.truncated = true;
  Trajectory no_sep = fixtures::make_traj({ans.gold_answer, Vocabulary::kEnd});
  const std::vector<Row> rows = {
      {&ans, respond({ans.gold_answer}), true, false},
      {&ans, respond({ans.gold_answer, aux}), true, true},
      {&ans, respond({ans.gold_answer, absent_value(ans)}), false, false},
      {&ans, respond({ans.gold_answer, aux, absent_doc(ans)}), false, false},
      {&ans, respond({aux}), false, false},
      {&ans, respond({ans.gold_answer, Vocabulary::kUnavailable}), false, false},
      {&ans, respond({absent_value(ans), aux}), false, false},
      {&ans, truncated, false, false},
      {&ans, no_sep, false, false},
      {&un, respond({Vocabulary::kUnavailable}), true, false},
      {&un, respond({Vocabulary::kUnavailable, listed_doc}), true, false},
      {&un, respond({Vocabulary::kUnavailable, listed_doc, un.gold_aux_facts.front()}), true, true},
      {&un, respond({Vocabulary::kUnavailable, absent_doc(un)}), false, false},
      {&un, respond({un.gold_aux_facts.front()}), false, false},
  };
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(oracle_correct(*rows[i].e, rows[i].t, v), rows[i].correct) << "row " << i;
    EXPECT_EQ(oracle_helpful(*rows[i].e, rows[i].t, v), rows[i].helpful) << "row " << i;
  }
}

TEST(Oracle, HelpfulImpliesCorrect) {
  const World world{EnvConfig{}};
  EnvGenerator gen(world.env, 12);
  std::mt19937_64 rng(12);
  for (const Episode& e : gen.take(300)) {
    for (int s = 0; s < 20; ++s) {
      std::vector<TokenId> resp;
      const int n = static_cast<int>(rng() % 4);
      for (int i = 0; i < n; ++i) resp.push_back(static_cast<TokenId>(rng() % world.vocab.size()));
      const Trajectory t = respond(resp);
      if (oracle_helpful(e, t, world.vocab)) EXPECT_TRUE(oracle_correct(e, t, world.vocab));
    }
  }
}

TEST(TrajectoryLength, ExcludesSeparatorAndTerminator) {
  const Trajectory t = fixtures::make_traj({10, 11, 12, Vocabulary::kSeparator, 13, Vocabulary::kEnd});
  EXPECT_EQ(t.length(), 4);
  EXPECT_EQ(t.thought(), (std::vector<TokenId>{10, 11, 12}));
  EXPECT_EQ(t.response(), (std::vector<TokenId>{13}));
}
