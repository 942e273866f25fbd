#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <unordered_map>

#include "concise/config.hpp"
#include "concise/metrics.hpp"

namespace concise {

// Decoding cost in TFLOPs: 2 * active parameters * tokens per response.
double decode_flops(double active_params, double tpr);

// Per-episode reference length L_ref from the frozen reference policy,
// cached by episode id.
class ReferenceLengths {
 public:
  ReferenceLengths(const Policy& reference, const World& world, const TrainSettings& settings,
                   int max_len, std::uint64_t seed);
  double get(const Episode& e);

 private:
  const Policy& reference_;
  const World& world_;
  TrainSettings settings_;
  int max_len_;
  std::uint64_t seed_;
  std::unordered_map<std::uint64_t, double> cache_;
};

struct EvalReport {
  long episodes = 0;
  long samples = 0;
  double correctness = 0.0;  // fraction in [0, 1]
  double helpfulness = 0.0;
  double mean_length = 0.0;  // TPR
  double mean_ref_length = 0.0;
  double length_ratio = 0.0;  // mean_length / mean_ref_length
  double em = 0.0;
  double f1 = 0.0;
  double decode_tflops = 0.0;
  long truncated = 0;
  long judge_unavailable = 0;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

// Samples `settings.eval_samples` responses per episode and scores them with
// `judge`. Reference lengths are reported when `refs` is non-null.
EvalReport evaluate(const Policy& policy, const World& world, const std::vector<Episode>& episodes,
                    Judge& judge, const TrainSettings& settings, ReferenceLengths* refs,
                    int max_len, std::uint64_t seed);

std::unique_ptr<Judge> make_judge(const RunConfig& cfg, const World& world);

struct TrainResult {
  EvalReport initial;
  EvalReport final;
  std::vector<nlohmann::json> history;
  long judge_unavailable = 0;
};

// GRPO from `policy` (updated in place) against the frozen `reference`.
// Evaluation always uses the oracle judge.
TrainResult train_grpo(const RunConfig& cfg, const World& world, Policy& policy,
                       const Policy& reference, const std::vector<Episode>& train,
                       const std::vector<Episode>& test, Judge& judge, MetricsSink* sink);

struct DistillOutcome {
  Policy policy;
  DistillDataset dataset;
  FilterStats stats;
  std::vector<EpochLoss> losses;
  double teacher_mean_length = 0.0;  // over all generated candidates
};

// Teacher sampling, filtering (or SFT mode) and fine-tuning of a fresh
// student.
DistillOutcome distill(const RunConfig& cfg, const World& world,
                       const std::vector<Episode>& train, Judge& judge);

// Subcommands. Corpus files live in `corpus_dir` (default: output_dir).
void cmd_init_config(const std::filesystem::path& path);
nlohmann::json cmd_gen_corpus(const RunConfig& cfg);
nlohmann::json cmd_distill(const RunConfig& cfg, const std::filesystem::path& corpus_dir);
nlohmann::json cmd_train(const RunConfig& cfg, const std::filesystem::path& corpus_dir,
                         const std::optional<std::filesystem::path>& reference,
                         bool from_scratch);
nlohmann::json cmd_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint,
                        const std::filesystem::path& test_corpus,
                        const std::optional<std::filesystem::path>& reference);
nlohmann::json cmd_sweep_length_ratio(const RunConfig& cfg, const std::filesystem::path& corpus_dir,
                                      const std::filesystem::path& reference);
nlohmann::json cmd_ablate_rewards(const RunConfig& cfg, const std::filesystem::path& corpus_dir,
                                  const std::filesystem::path& reference);

// The four reward arms: full, drop_length, drop_helpful, drop_correct.
std::vector<std::pair<std::string, RewardWeights>> ablation_arms(const RewardWeights& full);

}  // namespace concise
