#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "c2c/rng.hpp"
#include "c2c/tensor.hpp"

namespace c2c {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct GradcheckOptions {
  double eps = 1e-5;
  double tolerance = 1e-4;
  /// Denominator floor of the relative error, so coordinates whose analytic
  /// and numeric gradients are both ~0 do not dominate.
  double abs_floor = 1e-7;
  /// Coordinates sampled per parameter; 0 checks every coordinate.
  std::size_t max_coords = 0;
  std::uint64_t seed = 0;
};

struct GradcheckEntry {
  std::string name;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Compares analytic gradients of `loss_fn` with central differences,
///   rel = |analytic - numeric| / max(|analytic|, |numeric|, abs_floor).
/// `loss_fn` must rebuild its graph on every call and be deterministic.
inline GradcheckReport gradcheck(const std::function<Tensor()>& loss_fn, std::vector<NamedTensor> params,
                                 const GradcheckOptions& opt = {}) {
  for (auto& p : params) p.tensor.zero_grad();
  loss_fn().backward();
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    auto g = p.tensor.grad();
    analytic.emplace_back(p.tensor.size(), 0.0);
    if (!g.empty()) std::copy(g.begin(), g.end(), analytic.back().begin());
  }

  Rng rng(opt.seed);
  GradcheckReport report;
  NoGradGuard no_grad;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& t = params[k].tensor;
    std::vector<std::size_t> coords;
    if (opt.max_coords == 0 || opt.max_coords >= t.size()) {
      coords.resize(t.size());
      for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    } else {
      auto perm = rng.permutation(t.size());
      coords.assign(perm.begin(), perm.begin() + static_cast<long>(opt.max_coords));
      std::sort(coords.begin(), coords.end());
    }
    GradcheckEntry entry{params[k].name, coords.size(), 0.0, 0.0};
    auto values = t.mutable_values();
    for (std::size_t i : coords) {
      const double saved = values[i];
      values[i] = saved + opt.eps;
      const double up = loss_fn().item();
      values[i] = saved - opt.eps;
      const double down = loss_fn().item();
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * opt.eps);
      const double a = analytic[k][i];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), opt.abs_floor});
      entry.max_rel_error = std::max(entry.max_rel_error, rel);
      entry.max_abs_error = std::max(entry.max_abs_error, abs_err);
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.entries.push_back(std::move(entry));
  }
  report.passed = report.max_rel_error < opt.tolerance;
  return report;
}

}  // namespace c2c
