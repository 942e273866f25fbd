#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

namespace concise {

// Append-only run log: metrics.jsonl (one record per step, flushed
// immediately), metrics.csv (fixed columns projected from each record) and
// timing.jsonl (wall-clock seconds, kept apart so the metrics files of two
// runs with the same config and seed are byte-identical).
class MetricsSink {
 public:
  explicit MetricsSink(const std::filesystem::path& dir);

  // Throws Error if `step` does not increase.
  void write(long step, const nlohmann::json& record, double wall_seconds);

  static const std::vector<std::string>& csv_columns();

 private:
  std::ofstream jsonl_, csv_, timing_;
  long last_step_ = -1;
};

}  // namespace concise
