#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "concise/adam.hpp"
#include "concise/judge.hpp"
#include "concise/teacher.hpp"

namespace concise {

struct RFTConfig {
  int k = 4;
  double temperature = 0.7;
  double aux_coef = 0.01;
  double learning_rate = 5e-3;
  int batch_size = 8;
  int epochs = 10;
  double max_grad_norm = 1.0;
  bool sft_mode = false;  // keep one unfiltered sample per episode

  void validate() const;
};

struct Candidate {
  Trajectory trajectory;
  std::optional<JudgeOutcome> outcome;
};

struct CandidateSet {
  const Episode* episode = nullptr;
  std::vector<Candidate> candidates;
  std::optional<int> accepted;
};

// k teacher samples per episode, candidate i of episode e seeded from
// (seed, e.id, i). Episodes on which the teacher throws are skipped and
// counted in `failures`.
std::vector<CandidateSet> generate_candidates(const Teacher& teacher,
                                              const std::vector<Episode>& episodes, int k,
                                              double temperature, std::uint64_t seed,
                                              long* failures = nullptr);

struct DistillExample {
  Episode episode;
  Trajectory trajectory;
  JudgeOutcome verdict;
  int candidate_index = 0;
  bool accepted = true;
};

struct DistillProvenance {
  std::uint64_t seed = 0;
  int k = 0;
  double temperature = 0.0;
  std::string teacher;
  std::string judge;
  bool filtered = true;
};

struct DistillDataset {
  DistillProvenance provenance;
  std::vector<DistillExample> examples;
};

struct FilterStats {
  long sets = 0;
  long accepted = 0;
  long candidates = 0;
  long judge_unavailable = 0;  // candidates rejected because a verdict was missing
  double acceptance_rate() const { return sets > 0 ? static_cast<double>(accepted) / sets : 0.0; }
};

// Judges every candidate and keeps, per set, the first one (generation
// order) judged both correct and helpful. Sets without one are dropped.
DistillDataset rejection_filter(std::vector<CandidateSet>& sets, Judge& judge,
                                FilterStats* stats = nullptr);

// SFT comparison mode: the first candidate of every set, unjudged.
DistillDataset unfiltered_dataset(const std::vector<CandidateSet>& sets);

void write_dataset(const std::filesystem::path& path, const DistillDataset& ds,
                   const Vocabulary& vocab);
DistillDataset read_dataset(const std::filesystem::path& path, const Vocabulary& vocab);
// FNV-1a of the serialized dataset.
std::string dataset_hash(const DistillDataset& ds, const Vocabulary& vocab);

struct SequenceRef {
  const Episode* episode;
  const std::vector<TokenId>* tokens;
};

// Mean negative log-likelihood per target token.
double sft_loss(const Policy& policy, const World& world, const std::vector<SequenceRef>& batch);

// E * sum_i f_i * P_i. Throws UndefinedStatsError when no token was routed.
double aux_loss(const MoEStats& stats);

struct TotalLoss {
  double sft = 0.0;
  double aux = 0.0;    // 0 for a dense policy
  double total = 0.0;  // sft + aux_coef * aux
  long tokens = 0;
};

// L_SFT + aux_coef * L_aux on a batch, accumulating the gradient into `grad`
// when non-null. The top-1 fractions f_i are treated as constants.
TotalLoss rft_loss(const Policy& policy, const World& world, const std::vector<SequenceRef>& batch,
                   double aux_coef, std::vector<double>* grad);

struct EpochLoss {
  int epoch;
  double sft;
  double aux;
  double total;
};

// Fine-tunes `policy` on the dataset. On a non-finite loss the parameters
// are restored to the last good step and NumericalError is thrown.
std::vector<EpochLoss> run_rft(Policy& policy, const World& world, const DistillDataset& ds,
                               const RFTConfig& cfg, std::uint64_t seed);

}  // namespace concise
