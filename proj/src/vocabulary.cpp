#include "concise/vocabulary.hpp"

#include <array>

namespace concise {

namespace {

constexpr std::array<const char*, 12> kFillerWords = {
    "hmm", "so", "first", "check", "wait", "okay",
    "then", "note", "recall", "also", "thus", "right"};

constexpr std::array<const char*, 8> kKeyWords = {
    "color", "size", "material", "price", "brand", "origin", "style", "weight"};

std::string key_word(int k) {
  if (k < static_cast<int>(kKeyWords.size())) return kKeyWords[k];
  return "attr" + std::to_string(k);
}

}  // namespace

void EnvConfig::validate() const {
  if (n_doc_ids < 2 || n_keys < 2 || values_per_key < 2 || n_fillers < 1) {
    throw ConfigError("environment needs >=2 docs, keys, values per key and >=1 filler");
  }
  if (docs_per_episode < 1 || docs_per_episode >= n_doc_ids) {
    throw ConfigError("docs_per_episode must be in [1, n_doc_ids)");
  }
  if (facts_per_doc < 2 || facts_per_doc > n_keys) {
    throw ConfigError("facts_per_doc must be in [2, n_keys]");
  }
  if (answerable_fraction < 0.0 || answerable_fraction > 1.0) {
    throw ConfigError("answerable_fraction must be in [0, 1]");
  }
  if (max_history < 0) throw ConfigError("max_history must be >= 0");
  if (read_accuracy <= 0.0 || read_accuracy > 1.0) {
    throw ConfigError("read_accuracy must be in (0, 1]");
  }
  const int size = 4 + n_fillers + n_doc_ids + n_keys + n_keys * values_per_key;
  if (size > Vocabulary::kMaxSize) {
    throw ConfigError("vocabulary would exceed " +
                      std::to_string(Vocabulary::kMaxSize) + " tokens");
  }
}

Vocabulary::Vocabulary(const EnvConfig& cfg)
    : n_docs_(cfg.n_doc_ids),
      n_keys_(cfg.n_keys),
      values_per_key_(cfg.values_per_key),
      n_fillers_(cfg.n_fillers) {
  cfg.validate();
  names_ = {"<bos>", "<sep>", "<eos>", "<unavailable>"};
  filler_base_ = static_cast<TokenId>(names_.size());
  for (int i = 0; i < n_fillers_; ++i) {
    names_.push_back(i < static_cast<int>(kFillerWords.size())
                         ? std::string(kFillerWords[i])
                         : "filler" + std::to_string(i));
  }
  doc_base_ = static_cast<TokenId>(names_.size());
  for (int d = 0; d < n_docs_; ++d) names_.push_back("link#" + std::to_string(d));
  key_base_ = static_cast<TokenId>(names_.size());
  for (int k = 0; k < n_keys_; ++k) names_.push_back(key_word(k));
  value_base_ = static_cast<TokenId>(names_.size());
  for (int k = 0; k < n_keys_; ++k) {
    for (int v = 0; v < values_per_key_; ++v) {
      names_.push_back(key_word(k) + "=" + std::to_string(v));
    }
  }
  for (TokenId t = 0; t < size(); ++t) index_.emplace(names_[t], t);
}

TokenKind Vocabulary::kind(TokenId t) const {
  check(t);
  switch (t) {
    case kBegin: return TokenKind::kBegin;
    case kSeparator: return TokenKind::kSeparator;
    case kEnd: return TokenKind::kEnd;
    case kUnavailable: return TokenKind::kUnavailable;
    default: break;
  }
  if (t < doc_base_) return TokenKind::kFiller;
  if (t < key_base_) return TokenKind::kDoc;
  if (t < value_base_) return TokenKind::kKey;
  return TokenKind::kValue;
}

const std::string& Vocabulary::name(TokenId t) const {
  check(t);
  return names_[t];
}

TokenId Vocabulary::id(std::string_view name) const {
  auto it = index_.find(std::string(name));
  if (it == index_.end()) {
    throw VocabularyError("unknown token '" + std::string(name) + "'");
  }
  return it->second;
}

void Vocabulary::check(TokenId t) const {
  if (!contains(t)) {
    throw VocabularyError("token id " + std::to_string(t) +
                          " outside vocabulary of size " + std::to_string(size()));
  }
}

std::string Vocabulary::render(const std::vector<TokenId>& tokens) const {
  std::string out;
  for (TokenId t : tokens) {
    if (!out.empty()) out.push_back(' ');
    out += name(t);
  }
  return out;
}

}  // namespace concise
