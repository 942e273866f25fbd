#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace concise {

// Band-shaped length reward parameters. The acceptable band is
// [lambda_lower, lambda_upper] * L_ref; outside it the reward ramps down
// linearly over a tolerance of epsilon * L_ref tokens.
struct LengthRewardConfig {
  double lambda_upper = 0.5;
  double lambda_lower = 0.4;
  double epsilon = 0.1;

  void validate() const;
};

struct RewardWeights {
  double correct = 0.4;
  double helpful = 0.3;
  double length = 0.3;

  void validate() const;
};

struct JudgeVerdict {
  bool correct = false;
  bool helpful = false;
  std::string reason;
};

struct RewardBreakdown {
  double r_correct = 0.0;
  double r_helpful = 0.0;
  double r_length = 0.0;
  double composite = 0.0;
};

/// Length reward in [0, 1]. Throws InvalidReferenceError when
/// `reference_length` < 1 and ConfigError for an invalid config.
double length_reward(double policy_length, double reference_length,
                     const LengthRewardConfig& cfg);

/// Weighted sum w_c*C + w_h*H + w_l*r_length.
RewardBreakdown composite_reward(const JudgeVerdict& verdict, double r_length,
                                 const RewardWeights& weights);

/// Same as above for graded (non-binary) correctness, used by the EM variant
/// where r_correct is the exact-match score.
RewardBreakdown composite_reward(double r_correct, double r_helpful,
                                 double r_length, const RewardWeights& weights);

// Reading-comprehension answer normalization: lowercase, strip ASCII
// punctuation, drop the articles a/an/the, collapse whitespace.
std::string normalize_answer(std::string_view text);

int em_score(std::string_view prediction, std::string_view gold);

// F1 tokens are lowercased and punctuation-stripped but keep articles, so
// "the red car" vs "red car" scores 0.8 rather than collapsing to EM.
std::vector<std::string> f1_tokens(std::string_view text);

// Multiset token overlap F1. Both empty scores 1, exactly one empty scores 0.
double token_f1(const std::vector<std::string>& prediction,
                const std::vector<std::string>& gold);

double f1_score(std::string_view prediction, std::string_view gold);

}  // namespace concise
