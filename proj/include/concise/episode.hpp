#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "concise/vocabulary.hpp"

namespace concise {

struct Fact {
  int doc = 0;
  int key = 0;
  int value = 0;  // index within the key's value range
};

struct Query {
  int doc = 0;
  int key = 0;
};

struct Turn {
  Query question;
  std::vector<TokenId> response;
};

// One interaction turn: retrieved documents, the question, prior dialogue and
// the oracle labels used by the synthetic judge.
struct Episode {
  std::uint64_t id = 0;
  std::uint64_t noise_seed = 0;
  std::vector<Fact> documents;
  Query question;
  std::vector<Turn> history;
  TokenId gold_answer = Vocabulary::kUnavailable;
  std::vector<TokenId> gold_aux_facts;
  bool answerable = false;

  bool has_doc(int doc) const;
  std::optional<int> lookup(int doc, int key) const;
  std::vector<int> doc_ids() const;  // in listing order, unique
  std::vector<int> keys_of(int doc) const;
  std::vector<TokenId> value_tokens(const Vocabulary& vocab) const;
  bool contains_value(const Vocabulary& vocab, TokenId value) const;

  // Throws Error if the episode breaks its invariants.
  void validate(const Vocabulary& vocab) const;
};

class EnvGenerator {
 public:
  EnvGenerator(EnvConfig cfg, std::uint64_t seed);

  Episode next();
  std::vector<Episode> take(std::size_t n);

  const EnvConfig& config() const { return cfg_; }
  const Vocabulary& vocabulary() const { return vocab_; }

 private:
  EnvConfig cfg_;
  Vocabulary vocab_;
  std::uint64_t seed_;
  std::uint64_t next_id_ = 0;
  std::mt19937_64 rng_;
};

nlohmann::json episode_to_json(const Episode& e, const Vocabulary& vocab);
Episode episode_from_json(const nlohmann::json& j, const Vocabulary& vocab);

void write_corpus(const std::filesystem::path& path,
                  const std::vector<Episode>& episodes, const Vocabulary& vocab);
std::vector<Episode> read_corpus(const std::filesystem::path& path,
                                 const Vocabulary& vocab);

}  // namespace concise
