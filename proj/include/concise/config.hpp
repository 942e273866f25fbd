#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "concise/grpo.hpp"
#include "concise/remote_judge.hpp"
#include "concise/rft.hpp"

namespace concise {

enum class RefMode { kGreedy, kSampledMean };
enum class CorrectSignal { kJudge, kExactMatch, kF1 };

struct CorpusSettings {
  int train_episodes = 8000;
  int test_episodes = 400;
};

struct DistillSettings {
  int episodes = 4000;  // train episodes fed to the teacher; 0 = all
};

struct TrainSettings {
  int updates = 200;          // outer iterations (rollout phase + gradient epochs)
  int eval_every = 50;
  int eval_episodes = 400;    // taken from the front of the test split
  int eval_samples = 4;       // sampled responses per eval episode
  double eval_temperature = 1.0;
  RefMode ref_mode = RefMode::kSampledMean;
  int ref_samples = 4;
  double ref_temperature = 1.0;
  CorrectSignal correct_signal = CorrectSignal::kJudge;
  double active_params = 3e9;  // for the decode cost column
};

struct JudgeSettings {
  std::string kind = "oracle";  // oracle | remote
  JudgeClientConfig remote;
};

struct SweepSettings {
  std::vector<std::pair<double, double>> ratios = {{0.1, 0.15}, {0.4, 0.5}, {0.8, 1.0}};
  std::vector<std::uint64_t> seeds;  // GRPO seeds per variant; empty = the run seed
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string output_dir = "runs/default";
  EnvConfig env;
  CorpusSettings corpus;
  PolicyConfig policy;
  TeacherConfig teacher;
  RFTConfig rft;
  DistillSettings distill;
  LengthRewardConfig length;
  RewardWeights weights;
  GRPOConfig grpo;
  TrainSettings train;
  JudgeSettings judge;
  SweepSettings sweep;

  void validate() const;
};

nlohmann::json config_to_json(const RunConfig& c);
// Missing fields keep their defaults; unknown fields are rejected.
RunConfig config_from_json(const nlohmann::json& j);

RunConfig load_config(const std::filesystem::path& path);
void save_config(const std::filesystem::path& path, const RunConfig& c);

// Applies "a.b.c=value" overrides. The value is parsed as JSON when possible,
// otherwise taken as a string.
RunConfig apply_overrides(const RunConfig& c, const std::vector<std::string>& overrides);

// Stable hash of the canonical JSON form.
std::string config_hash(const RunConfig& c);

}  // namespace concise
