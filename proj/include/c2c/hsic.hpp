#pragma once

// Hilbert-Schmidt Independence Criterion on paired rows of two matrices.
//
//   raw(K, L) = trace(K H L H) / (n-1)^2,   H = I - (1/n) 1 1^T
//   hsic      = raw(K, L) / (sqrt(raw(K, K) * raw(L, L)) + eps)
//
// Gaussian kernels use the median pairwise distance as bandwidth; the
// bandwidth is a constant of the graph (no gradient flows through it).

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "c2c/error.hpp"
#include "c2c/tensor.hpp"

namespace c2c {

enum class Kernel { kGaussianMedian, kLinear };

/// Records the Gaussian bandwidths chosen during one forward pass and, once
/// frozen, replays them in the same order. Finite-difference checks use this
/// so perturbed evaluations see the bandwidths of the unperturbed pass.
class BandwidthCache {
 public:
  void freeze() {
    frozen_ = true;
    cursor_ = 0;
  }
  void rewind() { cursor_ = 0; }
  bool frozen() const { return frozen_; }
  const std::vector<double>& values() const { return values_; }

  double resolve(double computed) {
    if (!frozen_) {
      values_.push_back(computed);
      return computed;
    }
    if (cursor_ >= values_.size()) throw InvalidState("BandwidthCache: replay past recorded bandwidths");
    return values_[cursor_++];
  }

 private:
  std::vector<double> values_;
  std::size_t cursor_ = 0;
  bool frozen_ = false;
};

struct HsicOptions {
  Kernel kernel_x = Kernel::kGaussianMedian;
  Kernel kernel_y = Kernel::kGaussianMedian;
  bool normalized = true;
  double eps = 1e-10;
  BandwidthCache* bandwidths = nullptr;
};

/// Median of the pairwise Euclidean distances between rows of x [n,d].
/// Falls back to the mean positive distance, then to 1, when the median is 0.
inline double median_bandwidth(std::span<const double> x, std::size_t n, std::size_t d) {
  std::vector<double> dist;
  dist.reserve(n * (n - 1) / 2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      double s = 0.0;
      for (std::size_t t = 0; t < d; ++t) {
        const double diff = x[i * d + t] - x[j * d + t];
        s += diff * diff;
      }
      dist.push_back(std::sqrt(s));
    }
  }
  if (dist.empty()) return 1.0;
  std::sort(dist.begin(), dist.end());
  const std::size_t m = dist.size();
  const double median = m % 2 ? dist[m / 2] : 0.5 * (dist[m / 2 - 1] + dist[m / 2]);
  if (median > 0.0) return median;
  double sum = 0.0;
  std::size_t count = 0;
  for (double v : dist) {
    if (v > 0.0) {
      sum += v;
      ++count;
    }
  }
  return count ? sum / static_cast<double>(count) : 1.0;
}

/// n x n kernel matrix over the rows of x [n,d].
inline std::vector<double> kernel_matrix(std::span<const double> x, std::size_t n, std::size_t d, Kernel kernel,
                                         double bandwidth) {
  std::vector<double> k(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      double v = 0.0;
      if (kernel == Kernel::kLinear) {
        for (std::size_t t = 0; t < d; ++t) v += x[i * d + t] * x[j * d + t];
      } else {
        double s = 0.0;
        for (std::size_t t = 0; t < d; ++t) {
          const double diff = x[i * d + t] - x[j * d + t];
          s += diff * diff;
        }
        v = std::exp(-s / (2.0 * bandwidth * bandwidth));
      }
      k[i * n + j] = v;
      k[j * n + i] = v;
    }
  }
  return k;
}

namespace detail {

/// H K H via row/column means.
inline std::vector<double> double_center(const std::vector<double>& k, std::size_t n) {
  std::vector<double> row(n, 0.0), col(n, 0.0);
  double grand = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      row[i] += k[i * n + j];
      col[j] += k[i * n + j];
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    grand += row[i];
    row[i] /= static_cast<double>(n);
    col[i] /= static_cast<double>(n);
  }
  grand /= static_cast<double>(n * n);
  std::vector<double> c(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) c[i * n + j] = k[i * n + j] - row[i] - col[j] + grand;
  }
  return c;
}

inline double frobenius_dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

/// Accumulates dLoss/dX given dLoss/dK (symmetric, n x n).
inline void kernel_backward(const std::vector<double>& gk, const std::vector<double>& k, const Node& x,
                            std::vector<double>& gx, std::size_t n, std::size_t d, Kernel kernel,
                            double bandwidth) {
  if (kernel == Kernel::kLinear) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double g = 2.0 * gk[i * n + j];
        if (g == 0.0) continue;
        for (std::size_t t = 0; t < d; ++t) gx[i * d + t] += g * x.value[j * d + t];
      }
    }
    return;
  }
  const double inv_bw2 = 1.0 / (bandwidth * bandwidth);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double g = -2.0 * gk[i * n + j] * k[i * n + j] * inv_bw2;
      if (g == 0.0) continue;
      for (std::size_t t = 0; t < d; ++t) gx[i * d + t] += g * (x.value[i * d + t] - x.value[j * d + t]);
    }
  }
}

}  // namespace detail

/// HSIC between the rows of x [n,dx] and y [n,dy]. Returns a differentiable
/// scalar. A zero normalizer (e.g. a constant input) yields 0.
inline Tensor hsic(const Tensor& x, const Tensor& y, const HsicOptions& opt = {}) {
  detail::require_rank(x, 2, "hsic");
  detail::require_rank(y, 2, "hsic");
  const std::size_t n = x.dim(0), dx = x.dim(1), dy = y.dim(1);
  if (y.dim(0) != n) throw ShapeError("hsic: row count mismatch " + shape_str(x.shape()) + " vs " + shape_str(y.shape()));
  if (n < 2) throw InvalidInput("hsic: need at least 2 samples");

  auto bandwidth_for = [&](const Tensor& t, std::size_t d, Kernel kernel) {
    if (kernel != Kernel::kGaussianMedian) return 1.0;
    const double bw = median_bandwidth(t.values(), n, d);
    return opt.bandwidths ? opt.bandwidths->resolve(bw) : bw;
  };
  const double bw_x = bandwidth_for(x, dx, opt.kernel_x);
  const double bw_y = bandwidth_for(y, dy, opt.kernel_y);
  std::vector<double> kx = kernel_matrix(x.values(), n, dx, opt.kernel_x, bw_x);
  std::vector<double> ky = kernel_matrix(y.values(), n, dy, opt.kernel_y, bw_y);
  std::vector<double> kxc = detail::double_center(kx, n);
  std::vector<double> kyc = detail::double_center(ky, n);
  const double norm = 1.0 / (static_cast<double>(n - 1) * static_cast<double>(n - 1));
  const double r_xy = detail::frobenius_dot(kxc, ky) * norm;

  // Coefficients of dValue/dKx = ax * Kyc + bx * Kxc (and symmetrically for Ky).
  double value = r_xy, ax = norm, bx = 0.0, ay = norm, by = 0.0;
  if (opt.normalized) {
    const double r_xx = detail::frobenius_dot(kxc, kx) * norm;
    const double r_yy = detail::frobenius_dot(kyc, ky) * norm;
    const double s = (r_xx > 0.0 && r_yy > 0.0) ? std::sqrt(r_xx * r_yy) : 0.0;
    if (s <= 0.0) {
      value = 0.0;
      ax = bx = ay = by = 0.0;
    } else {
      const double denom = s + opt.eps;
      value = r_xy / denom;
      const double dh_ds = -r_xy / (denom * denom);
      ax = norm / denom;
      ay = norm / denom;
      bx = dh_ds * (r_yy / (2.0 * s)) * 2.0 * norm;
      by = dh_ds * (r_xx / (2.0 * s)) * 2.0 * norm;
    }
  }

  const Kernel kern_x = opt.kernel_x, kern_y = opt.kernel_y;
  return detail::make_result(
      {1}, {value}, {&x, &y},
      [=, kx = std::move(kx), ky = std::move(ky), kxc = std::move(kxc), kyc = std::move(kyc)](detail::Node& self) {
        const double up = self.grad[0];
        if (up == 0.0 || (ax == 0.0 && bx == 0.0 && ay == 0.0 && by == 0.0)) return;
        auto& px = *self.parents[0];
        auto& py = *self.parents[1];
        std::vector<double> gk(n * n);
        if (px.requires_grad) {
          for (std::size_t i = 0; i < n * n; ++i) gk[i] = up * (ax * kyc[i] + bx * kxc[i]);
          detail::kernel_backward(gk, kx, px, px.ensure_grad(), n, dx, kern_x, bw_x);
        }
        if (py.requires_grad) {
          for (std::size_t i = 0; i < n * n; ++i) gk[i] = up * (ay * kxc[i] + by * kyc[i]);
          detail::kernel_backward(gk, ky, py, py.ensure_grad(), n, dy, kern_y, bw_y);
        }
      });
}

}  // namespace c2c
