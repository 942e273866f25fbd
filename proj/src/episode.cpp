#include "concise/episode.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>

namespace concise {

namespace {

int uniform_int(std::mt19937_64& rng, int n) {
  return static_cast<int>(uniform01(rng) * n);
}

// First `count` entries of a seeded Fisher-Yates shuffle of [0, n).
std::vector<int> sample_distinct(std::mt19937_64& rng, int n, int count) {
  std::vector<int> pool(n);
  std::iota(pool.begin(), pool.end(), 0);
  for (int i = 0; i < count; ++i) {
    const int j = i + uniform_int(rng, n - i);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(count);
  return pool;
}

}  // namespace

bool Episode::has_doc(int doc) const {
  return std::any_of(documents.begin(), documents.end(),
                     [doc](const Fact& f) { return f.doc == doc; });
}

std::optional<int> Episode::lookup(int doc, int key) const {
  for (const auto& f : documents) {
    if (f.doc == doc && f.key == key) return f.value;
  }
  return std::nullopt;
}

std::vector<int> Episode::doc_ids() const {
  std::vector<int> out;
  for (const auto& f : documents) {
    if (std::find(out.begin(), out.end(), f.doc) == out.end()) out.push_back(f.doc);
  }
  return out;
}

std::vector<int> Episode::keys_of(int doc) const {
  std::vector<int> out;
  for (const auto& f : documents) {
    if (f.doc == doc) out.push_back(f.key);
  }
  return out;
}

std::vector<TokenId> Episode::value_tokens(const Vocabulary& vocab) const {
  std::vector<TokenId> out;
  for (const auto& f : documents) out.push_back(vocab.value(f.key, f.value));
  return out;
}

bool Episode::contains_value(const Vocabulary& vocab, TokenId value) const {
  return std::any_of(documents.begin(), documents.end(), [&](const Fact& f) {
    return vocab.value(f.key, f.value) == value;
  });
}

void Episode::validate(const Vocabulary& vocab) const {
  for (std::size_t i = 0; i < documents.size(); ++i) {
    for (std::size_t j = i + 1; j < documents.size(); ++j) {
      if (documents[i].doc == documents[j].doc && documents[i].key == documents[j].key) {
        throw Error("episode " + std::to_string(id) + " repeats a (doc, key) fact");
      }
    }
  }
  if (contains_value(vocab, gold_answer) != answerable) {
    throw Error("episode " + std::to_string(id) +
                ": gold answer must appear in documents iff answerable");
  }
  for (TokenId t : gold_aux_facts) {
    if (!contains_value(vocab, t)) {
      throw Error("episode " + std::to_string(id) + ": aux fact not in documents");
    }
  }
}

EnvGenerator::EnvGenerator(EnvConfig cfg, std::uint64_t seed)
    : cfg_(cfg), vocab_(cfg), seed_(seed), rng_(derive_seed(seed, 0x656e76)) {}

Episode EnvGenerator::next() {
  Episode e;
  e.id = next_id_++;
  e.noise_seed = derive_seed(seed_, e.id, 0x6e6f697365);

  const auto docs = sample_distinct(rng_, cfg_.n_doc_ids, cfg_.docs_per_episode);
  for (int d : docs) {
    for (int k : sample_distinct(rng_, cfg_.n_keys, cfg_.facts_per_doc)) {
      e.documents.push_back({d, k, uniform_int(rng_, cfg_.values_per_key)});
    }
  }

  e.answerable = uniform01(rng_) < cfg_.answerable_fraction;
  if (e.answerable) {
    const auto& f = e.documents[uniform_int(rng_, static_cast<int>(e.documents.size()))];
    e.question = {f.doc, f.key};
    e.gold_answer = vocab_.value(f.key, f.value);
    for (const auto& g : e.documents) {
      if (g.doc == f.doc && g.key != f.key) {
        e.gold_aux_facts.push_back(vocab_.value(g.key, g.value));
      }
    }
  } else {
    std::vector<int> missing;
    for (int d = 0; d < cfg_.n_doc_ids; ++d) {
      if (std::find(docs.begin(), docs.end(), d) == docs.end()) missing.push_back(d);
    }
    e.question.doc = missing[uniform_int(rng_, static_cast<int>(missing.size()))];
    // Ask about an attribute some listed product has, so alternatives exist.
    e.question.key = e.documents[uniform_int(rng_, static_cast<int>(e.documents.size()))].key;
    e.gold_answer = Vocabulary::kUnavailable;
    for (const auto& g : e.documents) {
      if (g.key == e.question.key) e.gold_aux_facts.push_back(vocab_.value(g.key, g.value));
    }
  }

  const int depth = uniform_int(rng_, cfg_.max_history + 1);
  for (int h = 0; h < depth; ++h) {
    const auto& f = e.documents[uniform_int(rng_, static_cast<int>(e.documents.size()))];
    e.history.push_back({{f.doc, f.key}, {vocab_.value(f.key, f.value)}});
  }
  return e;
}

std::vector<Episode> EnvGenerator::take(std::size_t n) {
  std::vector<Episode> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(next());
  return out;
}

namespace {

nlohmann::json query_to_json(const Query& q, const Vocabulary& vocab) {
  return {{"doc", vocab.name(vocab.doc(q.doc))}, {"key", vocab.name(vocab.key(q.key))}};
}

Query query_from_json(const nlohmann::json& j, const Vocabulary& vocab) {
  const TokenId d = vocab.id(j.at("doc").get<std::string>());
  const TokenId k = vocab.id(j.at("key").get<std::string>());
  if (vocab.kind(d) != TokenKind::kDoc || vocab.kind(k) != TokenKind::kKey) {
    throw VocabularyError("question must name a doc and a key");
  }
  return {vocab.doc_index(d), vocab.key_index(k)};
}

std::vector<std::string> names(const std::vector<TokenId>& ts, const Vocabulary& vocab) {
  std::vector<std::string> out;
  for (TokenId t : ts) out.push_back(vocab.name(t));
  return out;
}

std::vector<TokenId> ids(const nlohmann::json& j, const Vocabulary& vocab) {
  std::vector<TokenId> out;
  for (const auto& n : j) out.push_back(vocab.id(n.get<std::string>()));
  return out;
}

}  // namespace

nlohmann::json episode_to_json(const Episode& e, const Vocabulary& vocab) {
  nlohmann::json docs = nlohmann::json::array();
  for (const auto& f : e.documents) {
    docs.push_back({{"doc", vocab.name(vocab.doc(f.doc))},
                    {"key", vocab.name(vocab.key(f.key))},
                    {"value", vocab.name(vocab.value(f.key, f.value))}});
  }
  nlohmann::json history = nlohmann::json::array();
  for (const auto& t : e.history) {
    history.push_back({{"question", query_to_json(t.question, vocab)},
                       {"response", names(t.response, vocab)}});
  }
  return {{"id", e.id},
          {"noise_seed", e.noise_seed},
          {"documents", docs},
          {"question", query_to_json(e.question, vocab)},
          {"history", history},
          {"gold_answer", vocab.name(e.gold_answer)},
          {"gold_aux_facts", names(e.gold_aux_facts, vocab)},
          {"answerable", e.answerable}};
}

Episode episode_from_json(const nlohmann::json& j, const Vocabulary& vocab) {
  Episode e;
  e.id = j.at("id").get<std::uint64_t>();
  e.noise_seed = j.at("noise_seed").get<std::uint64_t>();
  for (const auto& d : j.at("documents")) {
    const TokenId doc = vocab.id(d.at("doc").get<std::string>());
    const TokenId key = vocab.id(d.at("key").get<std::string>());
    const TokenId value = vocab.id(d.at("value").get<std::string>());
    if (vocab.kind(value) != TokenKind::kValue ||
        vocab.value_key(value) != vocab.key_index(key)) {
      throw VocabularyError("fact value '" + vocab.name(value) + "' does not belong to key '" +
                            vocab.name(key) + "'");
    }
    e.documents.push_back({vocab.doc_index(doc), vocab.key_index(key), vocab.value_index(value)});
  }
  e.question = query_from_json(j.at("question"), vocab);
  for (const auto& t : j.at("history")) {
    e.history.push_back({query_from_json(t.at("question"), vocab), ids(t.at("response"), vocab)});
  }
  e.gold_answer = vocab.id(j.at("gold_answer").get<std::string>());
  e.gold_aux_facts = ids(j.at("gold_aux_facts"), vocab);
  e.answerable = j.at("answerable").get<bool>();
  e.validate(vocab);
  return e;
}

void write_corpus(const std::filesystem::path& path, const std::vector<Episode>& episodes,
                  const Vocabulary& vocab) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write corpus " + path.string());
  for (const auto& e : episodes) out << episode_to_json(e, vocab).dump() << '\n';
  if (!out) throw IoError("failed writing corpus " + path.string());
}

std::vector<Episode> read_corpus(const std::filesystem::path& path, const Vocabulary& vocab) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read corpus " + path.string());
  std::vector<Episode> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(episode_from_json(nlohmann::json::parse(line), vocab));
    } catch (const nlohmann::json::exception& ex) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return out;
}

}  // namespace concise
