#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "c2c/error.hpp"
#include "c2c/tensor.hpp"

namespace c2c {

/// Adam over a fixed list of parameter tensors.
class AdamOptimizer {
 public:
  struct Options {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  };

  AdamOptimizer(std::vector<Tensor> params, Options opt) : params_(std::move(params)), opt_(opt) {
    if (!(opt_.learning_rate > 0.0)) throw InvalidConfig("learning_rate must be > 0");
    for (const Tensor& p : params_) {
      first_.emplace_back(p.size(), 0.0);
      second_.emplace_back(p.size(), 0.0);
    }
  }

  /// Applies one update from the accumulated gradients. Parameters without
  /// a gradient buffer are treated as having zero gradient.
  void step() {
    for (const Tensor& p : params_) {
      for (double g : p.grad()) {
        if (!std::isfinite(g)) throw NumericalError("optimizer_step: non-finite gradient");
      }
    }
    ++steps_;
    const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(steps_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor& p = params_[k];
      if (!p.has_grad()) continue;
      auto v = p.mutable_values();
      auto g = p.grad();
      auto& m1 = first_[k];
      auto& m2 = second_[k];
      for (std::size_t i = 0; i < v.size(); ++i) {
        m1[i] = opt_.beta1 * m1[i] + (1.0 - opt_.beta1) * g[i];
        m2[i] = opt_.beta2 * m2[i] + (1.0 - opt_.beta2) * g[i] * g[i];
        if (g[i] == 0.0 && m1[i] == 0.0) continue;
        v[i] -= opt_.learning_rate * (m1[i] / c1) / (std::sqrt(m2[i] / c2) + opt_.eps);
      }
    }
  }

  void zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
  }

  std::uint64_t steps() const { return steps_; }
  const Options& options() const { return opt_; }

 private:
  std::vector<Tensor> params_;
  Options opt_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  std::uint64_t steps_ = 0;
};

}  // namespace c2c
