#include "concise/metrics.hpp"

#include "concise/common.hpp"

namespace concise {

const std::vector<std::string>& MetricsSink::csv_columns() {
  static const std::vector<std::string> cols = {
      "step",        "loss",          "clip_fraction", "kl",
      "mean_length", "mean_ref_length", "r_correct",   "r_helpful",
      "r_length",    "reward",        "judge_unavailable", "eval_correct",
      "eval_helpful", "eval_length",  "eval_ref_length", "eval_length_ratio"};
  return cols;
}

MetricsSink::MetricsSink(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  jsonl_.open(dir / "metrics.jsonl", std::ios::binary | std::ios::trunc);
  csv_.open(dir / "metrics.csv", std::ios::binary | std::ios::trunc);
  timing_.open(dir / "timing.jsonl", std::ios::binary | std::ios::trunc);
  if (!jsonl_ || !csv_ || !timing_) throw IoError("cannot open metrics files in " + dir.string());
  const auto& cols = csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) csv_ << (i ? "," : "") << cols[i];
  csv_ << '\n' << std::flush;
}

void MetricsSink::write(long step, const nlohmann::json& record, double wall_seconds) {
  if (step <= last_step_) {
    throw Error("metrics step " + std::to_string(step) + " does not follow " +
                std::to_string(last_step_));
  }
  last_step_ = step;
  nlohmann::json r = record;
  r["step"] = step;
  jsonl_ << r.dump() << '\n' << std::flush;
  const auto& cols = csv_columns();
  for (std::size_t i = 0; i < cols.size(); ++i) {
    if (i) csv_ << ',';
    if (r.contains(cols[i]) && !r.at(cols[i]).is_null()) csv_ << r.at(cols[i]).dump();
  }
  csv_ << '\n' << std::flush;
  timing_ << nlohmann::json{{"step", step}, {"wall_seconds", wall_seconds}}.dump() << '\n'
          << std::flush;
}

}  // namespace concise
