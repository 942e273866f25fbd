#include "concise/policy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

namespace concise {

void PolicyConfig::validate() const {
  if (hidden < 1) throw ConfigError("policy.hidden must be >= 1");
  if (experts < 0) throw ConfigError("policy.experts must be >= 0");
  if (!(init_scale >= 0.0)) throw ConfigError("policy.init_scale must be >= 0");
}

void MoEStats::add(const std::vector<double>& gate) {
  const double best = *std::max_element(gate.begin(), gate.end());
  int ties = 0;
  for (double g : gate) ties += g == best ? 1 : 0;
  for (int e = 0; e < experts; ++e) {
    if (gate[e] == best) top1[e] += 1.0 / ties;
    gate_sum[e] += gate[e];
  }
  tokens += 1.0;
}

std::vector<double> MoEStats::f() const {
  if (tokens <= 0.0) throw UndefinedStatsError("routing statistics need at least one token");
  std::vector<double> out(top1);
  for (double& v : out) v /= tokens;
  return out;
}

std::vector<double> MoEStats::P() const {
  if (tokens <= 0.0) throw UndefinedStatsError("routing statistics need at least one token");
  std::vector<double> out(gate_sum);
  for (double& v : out) v /= tokens;
  return out;
}

// Parameter layout, in order:
//   per expert e: W1_e [input][hidden], b1_e [hidden]
//   gate (MoE only): G [input][experts], c [experts]
//   W2 [vocab][hidden], b2 [vocab]
//   skip (optional): S [input][vocab]
// Input-major storage keeps the sparse products contiguous.
Policy::Policy(PolicyConfig cfg, int input_dim, int vocab_size)
    : cfg_(cfg), input_dim_(input_dim), vocab_(vocab_size) {
  cfg_.validate();
  const std::size_t F = input_dim, H = cfg_.hidden, V = vocab_size, E = n_experts();
  hidden_block_ = F * H + H;
  std::size_t at = 0;
  w1_ = at;
  at += E * hidden_block_;
  gate_w_ = at;
  if (is_moe()) at += F * E;
  gate_b_ = at;
  if (is_moe()) at += E;
  w2_ = at;
  at += V * H;
  b2_ = at;
  at += V;
  skip_ = at;
  if (cfg_.skip) at += F * V;
  params_.assign(at, 0.0);
}

void Policy::init(std::uint64_t seed) {
  std::fill(params_.begin(), params_.end(), 0.0);
  std::mt19937_64 rng(derive_seed(seed, 0x706f6c));
  std::normal_distribution<double> normal(0.0, cfg_.init_scale);
  for (int e = 0; e < n_experts(); ++e) {
    for (std::size_t i = 0; i < static_cast<std::size_t>(input_dim_) * cfg_.hidden; ++i) {
      params_[w1(e) + i] = normal(rng);
    }
  }
  if (is_moe()) {
    for (std::size_t i = gate_w_; i < gate_b_; ++i) params_[i] = normal(rng);
  }
}

void Policy::forward(const SparseVector& x, StepCache& c) const {
  const int H = cfg_.hidden, E = n_experts(), V = vocab_;
  const double* p = params_.data();
  c.x = x;
  c.act.assign(static_cast<std::size_t>(E) * H, 0.0);
  for (int e = 0; e < E; ++e) {
    double* z = c.act.data() + static_cast<std::size_t>(e) * H;
    const double* b = p + b1(e);
    for (int h = 0; h < H; ++h) z[h] = b[h];
    for (const auto& [i, v] : x) {
      const double* row = p + w1(e) + static_cast<std::size_t>(i) * H;
      for (int h = 0; h < H; ++h) z[h] += v * row[h];
    }
    for (int h = 0; h < H; ++h) z[h] = std::tanh(z[h]);
  }

  c.gate.assign(E, 1.0);
  if (is_moe() && E > 1) {
    for (int e = 0; e < E; ++e) c.gate[e] = p[gate_b_ + e];
    for (const auto& [i, v] : x) {
      const double* row = p + gate_w_ + static_cast<std::size_t>(i) * E;
      for (int e = 0; e < E; ++e) c.gate[e] += v * row[e];
    }
    const double m = *std::max_element(c.gate.begin(), c.gate.end());
    double s = 0.0;
    for (double& g : c.gate) s += (g = std::exp(g - m));
    for (double& g : c.gate) g /= s;
  }

  c.hidden.assign(H, 0.0);
  for (int e = 0; e < E; ++e) {
    const double* a = c.act.data() + static_cast<std::size_t>(e) * H;
    for (int h = 0; h < H; ++h) c.hidden[h] += c.gate[e] * a[h];
  }

  c.logits.assign(V, 0.0);
  for (int t = 0; t < V; ++t) {
    const double* row = p + w2_ + static_cast<std::size_t>(t) * H;
    double s = p[b2_ + t];
    for (int h = 0; h < H; ++h) s += row[h] * c.hidden[h];
    c.logits[t] = s;
  }
  if (cfg_.skip) {
    for (const auto& [i, v] : x) {
      const double* row = p + skip_ + static_cast<std::size_t>(i) * V;
      for (int t = 0; t < V; ++t) c.logits[t] += v * row[t];
    }
  }
}

void Policy::backward(const StepCache& c, const std::vector<double>& dlogits,
                      const std::vector<double>* dgate, std::vector<double>& grad) const {
  const int H = cfg_.hidden, E = n_experts(), V = vocab_;
  const double* p = params_.data();
  double* g = grad.data();

  std::vector<double> dh(H, 0.0);
  for (int t = 0; t < V; ++t) {
    const double d = dlogits[t];
    if (d == 0.0) continue;
    double* grow = g + w2_ + static_cast<std::size_t>(t) * H;
    const double* row = p + w2_ + static_cast<std::size_t>(t) * H;
    for (int h = 0; h < H; ++h) {
      grow[h] += d * c.hidden[h];
      dh[h] += d * row[h];
    }
    g[b2_ + t] += d;
  }
  if (cfg_.skip) {
    for (const auto& [i, v] : c.x) {
      double* grow = g + skip_ + static_cast<std::size_t>(i) * V;
      for (int t = 0; t < V; ++t) grow[t] += v * dlogits[t];
    }
  }

  std::vector<double> dg(E, 0.0);
  std::vector<double> dz(H);
  for (int e = 0; e < E; ++e) {
    const double* a = c.act.data() + static_cast<std::size_t>(e) * H;
    for (int h = 0; h < H; ++h) {
      dg[e] += dh[h] * a[h];
      dz[h] = c.gate[e] * dh[h] * (1.0 - a[h] * a[h]);
    }
    double* gb = g + b1(e);
    for (int h = 0; h < H; ++h) gb[h] += dz[h];
    for (const auto& [i, v] : c.x) {
      double* grow = g + w1(e) + static_cast<std::size_t>(i) * H;
      for (int h = 0; h < H; ++h) grow[h] += v * dz[h];
    }
  }

  if (is_moe() && E > 1) {
    if (dgate) {
      for (int e = 0; e < E; ++e) dg[e] += (*dgate)[e];
    }
    double dot = 0.0;
    for (int e = 0; e < E; ++e) dot += c.gate[e] * dg[e];
    for (int e = 0; e < E; ++e) {
      const double da = c.gate[e] * (dg[e] - dot);
      g[gate_b_ + e] += da;
      for (const auto& [i, v] : c.x) g[gate_w_ + static_cast<std::size_t>(i) * E + e] += v * da;
    }
  }
}

bool Policy::all_finite() const {
  return std::all_of(params_.begin(), params_.end(), [](double v) { return std::isfinite(v); });
}

std::vector<double> log_softmax(const std::vector<double>& logits, double temperature) {
  std::vector<double> out(logits.size());
  double m = -std::numeric_limits<double>::infinity();
  for (double z : logits) m = std::max(m, z / temperature);
  double s = 0.0;
  for (double z : logits) s += std::exp(z / temperature - m);
  const double lse = m + std::log(s);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] / temperature - lse;
  return out;
}

nlohmann::json policy_config_to_json(const PolicyConfig& c) {
  return {{"hidden", c.hidden},
          {"experts", c.experts},
          {"skip", c.skip},
          {"init_scale", c.init_scale}};
}

PolicyConfig policy_config_from_json(const nlohmann::json& j) {
  PolicyConfig c;
  c.hidden = j.value("hidden", c.hidden);
  c.experts = j.value("experts", c.experts);
  c.skip = j.value("skip", c.skip);
  c.init_scale = j.value("init_scale", c.init_scale);
  c.validate();
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Policy& policy,
                     const std::string& config_hash, const nlohmann::json& extra) {
  nlohmann::json j = {{"format", "concise-checkpoint-v1"},
                      {"config_hash", config_hash},
                      {"policy", policy_config_to_json(policy.config())},
                      {"input_dim", policy.input_dim()},
                      {"vocab_size", policy.vocab_size()},
                      {"extra", extra.is_null() ? nlohmann::json::object() : extra},
                      {"params", policy.params()}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path.string());
  out << j.dump() << '\n';
  if (!out) throw IoError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& ex) {
    throw IoError("malformed checkpoint " + path.string() + ": " + ex.what());
  }
  if (j.value("format", "") != "concise-checkpoint-v1") {
    throw IoError("unrecognized checkpoint format in " + path.string());
  }
  Policy policy(policy_config_from_json(j.at("policy")), j.at("input_dim").get<int>(),
                j.at("vocab_size").get<int>());
  auto params = j.at("params").get<std::vector<double>>();
  if (params.size() != policy.n_params()) {
    throw IoError("checkpoint " + path.string() + " has " + std::to_string(params.size()) +
                  " parameters, expected " + std::to_string(policy.n_params()));
  }
  policy.params() = std::move(params);
  return {std::move(policy), j.at("config_hash").get<std::string>(), j.at("extra")};
}

}  // namespace concise
