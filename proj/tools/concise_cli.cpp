// Command-line entry point: corpus generation, distillation, GRPO training,
// evaluation, length-ratio sweep and reward ablation.
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "concise/harness.hpp"

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config, "run config file (JSON); defaults apply when omitted");
  sub->add_option("-s,--set", c.overrides, "override a config value, e.g. grpo.kl_coef=0.05");
  sub->add_option("-o,--out", c.out, "output directory (overrides output_dir)");
  sub->add_option("--seed", c.seed, "run seed (overrides seed)");
}

concise::RunConfig resolve(const Common& c) {
  concise::RunConfig cfg = c.config.empty() ? concise::RunConfig{} : concise::load_config(c.config);
  cfg = concise::apply_overrides(cfg, c.overrides);
  if (!c.out.empty()) cfg.output_dir = c.out;
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

void print(const nlohmann::json& j) { std::cout << j.dump(2) << std::endl; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Length-aware RFT + multi-objective GRPO on a synthetic grounded-QA task"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace|debug|info|warn|error|off");

  std::string init_path = "config.json";
  auto* init = app.add_subcommand("init-config", "write a config file with every default");
  init->add_option("path", init_path, "destination file");

  Common gen_c, dist_c, train_c, eval_c, sweep_c, abl_c;
  auto* gen = app.add_subcommand("gen-corpus", "write train.jsonl and test.jsonl");
  add_common(gen, gen_c);

  std::string dist_corpus;
  bool sft_mode = false;
  auto* dist = app.add_subcommand("distill", "teacher sampling, rejection filter, fine-tuning");
  add_common(dist, dist_c);
  dist->add_option("--corpus", dist_corpus, "directory with train.jsonl (default: output dir)");
  dist->add_flag("--sft-mode", sft_mode, "skip filtering; train on one unfiltered sample each");

  std::string train_corpus, train_ref;
  bool from_scratch = false;
  auto* train = app.add_subcommand("train", "GRPO training from a reference checkpoint");
  add_common(train, train_c);
  train->add_option("--corpus", train_corpus, "directory with train/test corpora");
  train->add_option("--ref", train_ref, "reference checkpoint (the distilled student)");
  train->add_flag("--from-scratch", from_scratch, "start from a randomly initialized policy");

  std::string eval_ckpt, eval_test, eval_ref;
  auto* eval = app.add_subcommand("eval", "score a checkpoint on the test split");
  add_common(eval, eval_c);
  eval->add_option("--checkpoint", eval_ckpt, "policy checkpoint")->required();
  eval->add_option("--test", eval_test, "test corpus file (default: <out>/test.jsonl)");
  eval->add_option("--ref", eval_ref, "reference checkpoint for L_ref reporting");

  std::string sweep_corpus, sweep_ref;
  auto* sweep = app.add_subcommand("sweep-length-ratio", "one GRPO run per length band");
  add_common(sweep, sweep_c);
  sweep->add_option("--corpus", sweep_corpus, "directory with train/test corpora");
  sweep->add_option("--ref", sweep_ref, "reference checkpoint")->required();

  std::string abl_corpus, abl_ref;
  auto* abl = app.add_subcommand("ablate-rewards", "full / drop-length / drop-helpful / drop-correct");
  add_common(abl, abl_c);
  abl->add_option("--corpus", abl_corpus, "directory with train/test corpora");
  abl->add_option("--ref", abl_ref, "reference checkpoint")->required();

  CLI11_PARSE(app, argc, argv);
  spdlog::set_level(spdlog::level::from_str(log_level));

  auto corpus_or = [](const std::string& dir, const concise::RunConfig& cfg) {
    return std::filesystem::path(dir.empty() ? cfg.output_dir : dir);
  };
  auto opt_path = [](const std::string& p) -> std::optional<std::filesystem::path> {
    if (p.empty()) return std::nullopt;
    return std::filesystem::path(p);
  };

  try {
    if (*init) {
      concise::cmd_init_config(init_path);
      std::cout << "wrote " << init_path << std::endl;
    } else if (*gen) {
      print(concise::cmd_gen_corpus(resolve(gen_c)));
    } else if (*dist) {
      auto cfg = resolve(dist_c);
      if (sft_mode) cfg.rft.sft_mode = true;
      print(concise::cmd_distill(cfg, corpus_or(dist_corpus, cfg)));
    } else if (*train) {
      const auto cfg = resolve(train_c);
      print(concise::cmd_train(cfg, corpus_or(train_corpus, cfg), opt_path(train_ref), from_scratch));
    } else if (*eval) {
      const auto cfg = resolve(eval_c);
      const std::filesystem::path test =
          eval_test.empty() ? std::filesystem::path(cfg.output_dir) / "test.jsonl"
                            : std::filesystem::path(eval_test);
      print(concise::cmd_eval(cfg, eval_ckpt, test, opt_path(eval_ref)));
    } else if (*sweep) {
      const auto cfg = resolve(sweep_c);
      print(concise::cmd_sweep_length_ratio(cfg, corpus_or(sweep_corpus, cfg), sweep_ref));
    } else if (*abl) {
      const auto cfg = resolve(abl_c);
      print(concise::cmd_ablate_rewards(cfg, corpus_or(abl_corpus, cfg), abl_ref));
    }
  } catch (const concise::Error& ex) {
    spdlog::error("{}", ex.what());
    return 2;
  } catch (const std::exception& ex) {
    spdlog::error("unexpected failure: {}", ex.what());
    return 3;
  }
  return 0;
}
