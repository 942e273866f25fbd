#pragma once

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "concise/common.hpp"

namespace concise {

// Sizes of the synthetic grounded-QA world. Values are typed by key: key k
// owns values_per_key distinct value tokens.
struct EnvConfig {
  int n_doc_ids = 12;
  int n_keys = 6;
  int values_per_key = 6;
  int n_fillers = 12;
  int docs_per_episode = 4;
  int facts_per_doc = 3;
  double answerable_fraction = 0.8;
  int max_history = 2;
  // Probability that reading a fact in the thought returns its true value.
  double read_accuracy = 0.9;

  void validate() const;
};

enum class TokenKind { kBegin, kSeparator, kEnd, kUnavailable, kFiller, kDoc, kKey, kValue };

class Vocabulary {
 public:
  static constexpr TokenId kBegin = 0;
  static constexpr TokenId kSeparator = 1;
  static constexpr TokenId kEnd = 2;
  static constexpr TokenId kUnavailable = 3;
  static constexpr int kMaxSize = 256;

  explicit Vocabulary(const EnvConfig& cfg);

  int size() const { return static_cast<int>(names_.size()); }
  int n_docs() const { return n_docs_; }
  int n_keys() const { return n_keys_; }
  int values_per_key() const { return values_per_key_; }
  int n_values() const { return n_keys_ * values_per_key_; }
  int n_fillers() const { return n_fillers_; }

  TokenId filler(int i) const { return filler_base_ + i; }
  TokenId doc(int d) const { return doc_base_ + d; }
  TokenId key(int k) const { return key_base_ + k; }
  TokenId value(int k, int v) const { return value_base_ + k * values_per_key_ + v; }
  // Flat value index in [0, n_values) for a value token.
  int value_slot(TokenId t) const { return t - value_base_; }
  TokenId value_from_slot(int slot) const { return value_base_ + slot; }

  TokenKind kind(TokenId t) const;
  bool contains(TokenId t) const { return t >= 0 && t < size(); }
  int doc_index(TokenId t) const { return t - doc_base_; }
  int key_index(TokenId t) const { return t - key_base_; }
  int value_key(TokenId t) const { return (t - value_base_) / values_per_key_; }
  int value_index(TokenId t) const { return (t - value_base_) % values_per_key_; }

  const std::string& name(TokenId t) const;
  // Throws VocabularyError for unknown names.
  TokenId id(std::string_view name) const;
  // Throws VocabularyError naming the token when it is outside the vocabulary.
  void check(TokenId t) const;

  std::string render(const std::vector<TokenId>& tokens) const;

 private:
  int n_docs_;
  int n_keys_;
  int values_per_key_;
  int n_fillers_;
  TokenId filler_base_;
  TokenId doc_base_;
  TokenId key_base_;
  TokenId value_base_;
  std::vector<std::string> names_;
  std::unordered_map<std::string, TokenId> index_;
};

}  // namespace concise
