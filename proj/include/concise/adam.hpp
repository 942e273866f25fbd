#pragma once

#include <cstddef>
#include <vector>

namespace concise {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Adam {
 public:
  Adam(std::size_t n, AdamConfig cfg);
  void step(std::vector<double>& params, const std::vector<double>& grad);
  long steps() const { return t_; }

 private:
  AdamConfig cfg_;
  std::vector<double> m_, v_;
  long t_ = 0;
};

// Scales `grad` in place so its L2 norm is at most max_norm (0 disables);
// returns the norm before scaling.
double clip_grad_norm(std::vector<double>& grad, double max_norm);

}  // namespace concise
