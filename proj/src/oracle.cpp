#include "concise/oracle.hpp"

#include <algorithm>

namespace concise {

bool oracle_correct(const Episode& e, const Trajectory& t, const Vocabulary& vocab) {
  if (t.truncated || !t.terminated() || t.separator_index() < 0) return false;
  bool has_gold = false;
  bool says_unavailable = false;
  for (TokenId tok : t.response()) {
    switch (vocab.kind(tok)) {
      case TokenKind::kValue:
        if (!e.contains_value(vocab, tok)) return false;
        break;
      case TokenKind::kDoc:
        if (!e.has_doc(vocab.doc_index(tok))) return false;
        break;
      case TokenKind::kUnavailable:
        says_unavailable = true;
        break;
      default:
        break;
    }
    if (tok == e.gold_answer) has_gold = true;
  }
  if (e.answerable) return has_gold && !says_unavailable;
  return says_unavailable;
}

bool oracle_helpful(const Episode& e, const Trajectory& t, const Vocabulary& vocab) {
  if (!oracle_correct(e, t, vocab)) return false;
  for (TokenId tok : t.response()) {
    if (tok == e.gold_answer) continue;
    if (std::find(e.gold_aux_facts.begin(), e.gold_aux_facts.end(), tok) !=
        e.gold_aux_facts.end()) {
      return true;
    }
  }
  return false;
}

}  // namespace concise
