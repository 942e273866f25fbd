#pragma once

#include <optional>
#include <vector>

#include "concise/episode.hpp"

namespace concise {

struct SparseEntry {
  int index;
  double value;
};

using SparseVector = std::vector<SparseEntry>;

// Offsets of every feature block. The context blocks are a bag-of-features
// view of [D; Q; H]; the prefix blocks summarize what has been generated so
// far, including the results of fact reads made in the thought.
struct FeatureLayout {
  explicit FeatureLayout(const Vocabulary& vocab);

  int bias, q_doc, q_key, docs_present, docs_with_qkey, history_docs;
  int phase, last_token, thought_pos, response_pos;
  int q_reads, aux_reads, other_reads, lookup_flags, last_doc_keys;
  int votes_answer, votes_aux_same_doc, votes_aux_same_key, votes_other;
  int vote_summary, vote_leaders, emitted_values, response_flags;
  int dim;

  static const std::vector<int>& thought_thresholds();
  static const std::vector<int>& q_read_thresholds();
  static const std::vector<int>& aux_read_thresholds();
  static const std::vector<int>& other_read_thresholds();
};

// Result of reading (doc, key) inside the thought.
struct ReadResult {
  int doc;
  int key;
  std::optional<TokenId> value;  // nullopt when the fact does not exist
};

// Deterministic noisy read: the environment returns the true value with
// probability `read_accuracy`, otherwise a different value of the same key.
ReadResult read_fact(const Episode& e, const Vocabulary& vocab, double read_accuracy,
                     int position, int doc, int key);

// Incremental encoder: features() describes the state before the next token,
// advance() consumes that token.
class FeatureState {
 public:
  FeatureState(const Episode& episode, const Vocabulary& vocab, const FeatureLayout& layout,
               double read_accuracy);

  const SparseVector& features() const { return features_; }
  void advance(TokenId token);

  bool in_response() const { return in_response_; }
  int position() const { return position_; }
  const std::vector<ReadResult>& reads() const { return reads_; }

 private:
  void rebuild();

  const Episode& episode_;
  const Vocabulary& vocab_;
  const FeatureLayout& layout_;
  double read_accuracy_;

  SparseVector context_;
  SparseVector features_;
  int position_ = 0;
  int thought_len_ = 0;
  int response_len_ = 0;
  bool in_response_ = false;
  TokenId last_ = Vocabulary::kBegin;
  std::optional<int> last_doc_;
  bool q_doc_mentioned_ = false;
  int q_reads_ = 0, aux_reads_ = 0, other_reads_ = 0;
  std::vector<double> votes_answer_, votes_aux_doc_, votes_aux_key_, votes_other_;
  std::vector<double> emitted_;
  int values_emitted_ = 0;
  bool answer_emitted_ = false;
  bool unavailable_emitted_ = false;
  std::vector<ReadResult> reads_;
};

}  // namespace concise
