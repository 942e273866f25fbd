#include "concise/features.hpp"

#include <algorithm>

namespace concise {

namespace {

int thermometer_count(const std::vector<int>& thresholds, int value) {
  int n = 0;
  for (int t : thresholds) {
    if (value >= t) ++n;
  }
  return n;
}

void push_thermometer(SparseVector& out, int base, const std::vector<int>& thresholds,
                      int value) {
  const int n = thermometer_count(thresholds, value);
  for (int i = 0; i < n; ++i) out.push_back({base + i, 1.0});
}

void push_counts(SparseVector& out, int base, const std::vector<double>& counts) {
  for (std::size_t i = 0; i < counts.size(); ++i) {
    if (counts[i] != 0.0) out.push_back({base + static_cast<int>(i), counts[i]});
  }
}

void push_vote_summary(SparseVector& out, int base, const std::vector<double>& votes) {
  double best = 0.0;
  int ties = 0;
  for (double v : votes) {
    if (v > best) {
      best = v;
      ties = 1;
    } else if (v == best && v > 0.0) {
      ++ties;
    }
  }
  for (int i = 0; i < 4 && best >= i + 1; ++i) out.push_back({base + i, 1.0});
  if (ties > 1) out.push_back({base + 4, 1.0});
}

// Flags every value that holds the (possibly shared) maximum vote count.
void push_leaders(SparseVector& out, int base, const std::vector<double>& votes) {
  const double best = *std::max_element(votes.begin(), votes.end());
  if (best <= 0.0) return;
  for (std::size_t v = 0; v < votes.size(); ++v) {
    if (votes[v] == best) out.push_back({base + static_cast<int>(v), 1.0});
  }
}

}  // namespace

const std::vector<int>& FeatureLayout::thought_thresholds() {
  static const std::vector<int> t = {1,  2,  3,  4,  5,  6,  7,  8,  10, 12, 14, 16,
                                     18, 20, 24, 28, 32, 40, 48, 56, 64, 80, 96, 112};
  return t;
}
const std::vector<int>& FeatureLayout::q_read_thresholds() {
  static const std::vector<int> t = {1, 2, 3, 4, 5, 6, 8};
  return t;
}
const std::vector<int>& FeatureLayout::aux_read_thresholds() {
  static const std::vector<int> t = {1, 2, 3, 4};
  return t;
}
const std::vector<int>& FeatureLayout::other_read_thresholds() {
  static const std::vector<int> t = {1, 2, 4, 8};
  return t;
}

FeatureLayout::FeatureLayout(const Vocabulary& vocab) {
  int at = 0;
  auto block = [&at](int width) {
    const int start = at;
    at += width;
    return start;
  };
  const int nd = vocab.n_docs(), nk = vocab.n_keys(), nv = vocab.n_values();
  bias = block(1);
  q_doc = block(nd);
  q_key = block(nk);
  docs_present = block(nd);
  docs_with_qkey = block(nd);
  history_docs = block(nd);
  phase = block(2);
  last_token = block(vocab.size());
  thought_pos = block(static_cast<int>(thought_thresholds().size()));
  response_pos = block(4);
  q_reads = block(static_cast<int>(q_read_thresholds().size()));
  aux_reads = block(static_cast<int>(aux_read_thresholds().size()));
  other_reads = block(static_cast<int>(other_read_thresholds().size()));
  lookup_flags = block(6);
  last_doc_keys = block(nk);
  votes_answer = block(nv);
  votes_aux_same_doc = block(nv);
  votes_aux_same_key = block(nv);
  votes_other = block(nv);
  // Per answer/aux block: max-vote thermometer {1,2,3,4} and a tie flag.
  vote_summary = block(15);
  // Plurality values of the answer / same-doc / same-key blocks.
  vote_leaders = block(3 * nv);
  emitted_values = block(nv);
  response_flags = block(4);
  dim = at;
}

ReadResult read_fact(const Episode& e, const Vocabulary& vocab, double read_accuracy,
                     int position, int doc, int key) {
  ReadResult r{doc, key, std::nullopt};
  const auto truth = e.lookup(doc, key);
  if (!truth) return r;
  const std::uint64_t h =
      derive_seed(e.noise_seed, static_cast<std::uint64_t>(position),
                  static_cast<std::uint64_t>(doc) * 1024 + static_cast<std::uint64_t>(key));
  const double u = static_cast<double>(h >> 11) * 0x1.0p-53;
  if (u < read_accuracy) {
    r.value = vocab.value(key, *truth);
    return r;
  }
  // Misread: one of the other values of this key, uniformly.
  const int others = vocab.values_per_key() - 1;
  int pick = static_cast<int>(mix64(h) % static_cast<std::uint64_t>(others));
  if (pick >= *truth) ++pick;
  r.value = vocab.value(key, pick);
  return r;
}

FeatureState::FeatureState(const Episode& episode, const Vocabulary& vocab,
                           const FeatureLayout& layout, double read_accuracy)
    : episode_(episode), vocab_(vocab), layout_(layout), read_accuracy_(read_accuracy) {
  const int nv = vocab.n_values();
  votes_answer_.assign(nv, 0.0);
  votes_aux_doc_.assign(nv, 0.0);
  votes_aux_key_.assign(nv, 0.0);
  votes_other_.assign(nv, 0.0);
  emitted_.assign(nv, 0.0);

  const Query& q = episode.question;
  context_.push_back({layout.bias, 1.0});
  context_.push_back({layout.q_doc + q.doc, 1.0});
  context_.push_back({layout.q_key + q.key, 1.0});
  for (int d : episode.doc_ids()) context_.push_back({layout.docs_present + d, 1.0});
  std::vector<int> with_key;
  for (const auto& f : episode.documents) {
    if (f.key == q.key) with_key.push_back(f.doc);
  }
  std::sort(with_key.begin(), with_key.end());
  with_key.erase(std::unique(with_key.begin(), with_key.end()), with_key.end());
  for (int d : with_key) context_.push_back({layout.docs_with_qkey + d, 1.0});
  std::vector<int> asked;
  for (const auto& t : episode.history) asked.push_back(t.question.doc);
  std::sort(asked.begin(), asked.end());
  asked.erase(std::unique(asked.begin(), asked.end()), asked.end());
  for (int d : asked) context_.push_back({layout.history_docs + d, 1.0});
  rebuild();
}

void FeatureState::advance(TokenId token) {
  vocab_.check(token);
  const TokenKind kind = vocab_.kind(token);
  const Query& q = episode_.question;

  if (!in_response_) {
    if (token == Vocabulary::kSeparator) {
      in_response_ = true;
    } else {
      ++thought_len_;
      if (kind == TokenKind::kDoc) {
        last_doc_ = vocab_.doc_index(token);
        if (*last_doc_ == q.doc) q_doc_mentioned_ = true;
      } else if (kind == TokenKind::kKey && vocab_.kind(last_) == TokenKind::kDoc) {
        const int doc = vocab_.doc_index(last_);
        const int key = vocab_.key_index(token);
        const ReadResult r = read_fact(episode_, vocab_, read_accuracy_, position_, doc, key);
        reads_.push_back(r);
        const bool same_doc = doc == q.doc;
        const bool same_key = key == q.key;
        std::vector<double>* votes = &votes_other_;
        if (same_doc && same_key) {
          ++q_reads_;
          votes = &votes_answer_;
        } else if (same_doc) {
          ++aux_reads_;
          votes = &votes_aux_doc_;
        } else if (same_key) {
          ++aux_reads_;
          votes = &votes_aux_key_;
        } else {
          ++other_reads_;
        }
        if (r.value) (*votes)[vocab_.value_slot(*r.value)] += 1.0;
      }
    }
  } else {
    ++response_len_;
    if (kind == TokenKind::kValue) {
      emitted_[vocab_.value_slot(token)] = 1.0;
      ++values_emitted_;
      if (vocab_.value_key(token) == q.key) answer_emitted_ = true;
    } else if (kind == TokenKind::kUnavailable) {
      unavailable_emitted_ = true;
      answer_emitted_ = true;
    }
  }
  last_ = token;
  ++position_;
  rebuild();
}

void FeatureState::rebuild() {
  const FeatureLayout& L = layout_;
  const Query& q = episode_.question;
  features_ = context_;
  features_.push_back({L.phase + (in_response_ ? 1 : 0), 1.0});
  features_.push_back({L.last_token + last_, 1.0});
  if (!in_response_) {
    push_thermometer(features_, L.thought_pos, FeatureLayout::thought_thresholds(),
                     thought_len_);
  } else {
    features_.push_back({L.response_pos + std::min(response_len_, 3), 1.0});
  }
  push_thermometer(features_, L.q_reads, FeatureLayout::q_read_thresholds(), q_reads_);
  push_thermometer(features_, L.aux_reads, FeatureLayout::aux_read_thresholds(), aux_reads_);
  push_thermometer(features_, L.other_reads, FeatureLayout::other_read_thresholds(),
                   other_reads_);

  const bool q_found = q_doc_mentioned_ && episode_.has_doc(q.doc);
  if (q_doc_mentioned_) features_.push_back({L.lookup_flags + 0, 1.0});
  if (q_found) features_.push_back({L.lookup_flags + 1, 1.0});
  if (q_doc_mentioned_ && !q_found) features_.push_back({L.lookup_flags + 2, 1.0});
  if (vocab_.kind(last_) == TokenKind::kDoc) {
    const int d = vocab_.doc_index(last_);
    if (d == q.doc) features_.push_back({L.lookup_flags + 3, 1.0});
    features_.push_back({L.lookup_flags + (episode_.has_doc(d) ? 4 : 5), 1.0});
  }
  if (last_doc_ && episode_.has_doc(*last_doc_)) {
    for (int k : episode_.keys_of(*last_doc_)) features_.push_back({L.last_doc_keys + k, 1.0});
  }

  push_counts(features_, L.votes_answer, votes_answer_);
  push_counts(features_, L.votes_aux_same_doc, votes_aux_doc_);
  push_counts(features_, L.votes_aux_same_key, votes_aux_key_);
  push_counts(features_, L.votes_other, votes_other_);
  push_vote_summary(features_, L.vote_summary, votes_answer_);
  push_vote_summary(features_, L.vote_summary + 5, votes_aux_doc_);
  push_vote_summary(features_, L.vote_summary + 10, votes_aux_key_);
  push_leaders(features_, L.vote_leaders, votes_answer_);
  push_leaders(features_, L.vote_leaders + vocab_.n_values(), votes_aux_doc_);
  push_leaders(features_, L.vote_leaders + 2 * vocab_.n_values(), votes_aux_key_);
  push_counts(features_, L.emitted_values, emitted_);
  if (answer_emitted_) features_.push_back({L.response_flags + 0, 1.0});
  if (unavailable_emitted_) features_.push_back({L.response_flags + 1, 1.0});
  if (values_emitted_ >= 1) features_.push_back({L.response_flags + 2, 1.0});
  if (values_emitted_ >= 2) features_.push_back({L.response_flags + 3, 1.0});
}

}  // namespace concise
