#include "concise/reward.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <sstream>
#include <unordered_map>
#include <vector>

#include "concise/common.hpp"

namespace concise {

void LengthRewardConfig::validate() const {
  if (!(lambda_lower > 0.0 && lambda_lower < lambda_upper)) {
    throw ConfigError("length reward requires 0 < lambda_lower < lambda_upper");
  }
  if (!(epsilon > 0.0)) {
    throw ConfigError("length reward tolerance epsilon must be positive");
  }
}

void RewardWeights::validate() const {
  if (correct < 0.0 || helpful < 0.0 || length < 0.0) {
    throw ConfigError("reward weights must be non-negative");
  }
  if (!(correct + helpful + length > 0.0)) {
    throw ConfigError("reward weights must not all be zero");
  }
}

double length_reward(double policy_length, double reference_length,
                     const LengthRewardConfig& cfg) {
  cfg.validate();
  if (!(reference_length >= 1.0)) {
    throw InvalidReferenceError("reference length must be at least 1 token");
  }
  if (policy_length < 0.0) {
    throw Error("policy length must be non-negative");
  }
  const double upper = cfg.lambda_upper * reference_length;
  const double lower = cfg.lambda_lower * reference_length;
  double deviation = 0.0;
  if (policy_length < lower) {
    deviation = lower - policy_length;
  } else if (policy_length > upper) {
    deviation = policy_length - upper;
  }
  const double tolerance = cfg.epsilon * reference_length;
  return std::max(0.0, 1.0 - deviation / tolerance);
}

RewardBreakdown composite_reward(double r_correct, double r_helpful,
                                 double r_length,
                                 const RewardWeights& weights) {
  weights.validate();
  RewardBreakdown out;
  out.r_correct = r_correct;
  out.r_helpful = r_helpful;
  out.r_length = r_length;
  out.composite = weights.correct * r_correct + weights.helpful * r_helpful +
                  weights.length * r_length;
  return out;
}

RewardBreakdown composite_reward(const JudgeVerdict& verdict, double r_length,
                                 const RewardWeights& weights) {
  return composite_reward(verdict.correct ? 1.0 : 0.0,
                          verdict.helpful ? 1.0 : 0.0, r_length, weights);
}

namespace {

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string tok;
  while (in >> tok) out.push_back(tok);
  return out;
}

std::string strip_and_lower(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  for (unsigned char c : text) {
    if (std::ispunct(c)) continue;
    out.push_back(static_cast<char>(std::tolower(c)));
  }
  return out;
}

bool is_article(const std::string& w) {
  return w == "a" || w == "an" || w == "the";
}

}  // namespace

std::string normalize_answer(std::string_view text) {
  std::string out;
  for (const auto& word : split_ws(strip_and_lower(text))) {
    if (is_article(word)) continue;
    if (!out.empty()) out.push_back(' ');
    out += word;
  }
  return out;
}

std::vector<std::string> f1_tokens(std::string_view text) {
  return split_ws(strip_and_lower(text));
}

int em_score(std::string_view prediction, std::string_view gold) {
  return normalize_answer(prediction) == normalize_answer(gold) ? 1 : 0;
}

double token_f1(const std::vector<std::string>& pred,
                const std::vector<std::string>& ref) {
  if (pred.empty() && ref.empty()) return 1.0;
  if (pred.empty() || ref.empty()) return 0.0;

  std::unordered_map<std::string, int> ref_counts;
  for (const auto& t : ref) ++ref_counts[t];
  int common = 0;
  for (const auto& t : pred) {
    auto it = ref_counts.find(t);
    if (it != ref_counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / pred.size();
  const double recall = static_cast<double>(common) / ref.size();
  return 2.0 * precision * recall / (precision + recall);
}

double f1_score(std::string_view prediction, std::string_view gold) {
  return token_f1(f1_tokens(prediction), f1_tokens(gold));
}

std::string to_hex(std::uint64_t value) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = kDigits[value & 0xf];
    value >>= 4;
  }
  return out;
}

}  // namespace concise
