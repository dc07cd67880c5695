#pragma once

#include "saas/ad/tape.hpp"

#include <cmath>
#include <limits>

namespace saas {

namespace detail {

inline double softmin3(double a, double b, double c, double gamma) {
  const double m = std::min({a, b, c});
  if (!std::isfinite(m)) return m;
  const double s = std::exp(-(a - m) / gamma) + std::exp(-(b - m) / gamma) + std::exp(-(c - m) / gamma);
  return m - gamma * std::log(s);
}

/// Pairwise squared Euclidean frame costs (n x m), in double.
template <class S>
Eigen::MatrixXd frame_costs(const ad::Mat<S>& x, const ad::Mat<S>& y) {
  const Eigen::MatrixXd xd = x.template cast<double>();
  const Eigen::MatrixXd yd = y.template cast<double>();
  Eigen::MatrixXd d = (-2.0 * xd * yd.transpose()).eval();
  d.colwise() += xd.rowwise().squaredNorm();
  d.rowwise() += yd.rowwise().squaredNorm().transpose();
  return d.cwiseMax(0.0);
}

/// (n+2) x (m+2) accumulated soft-DTW table; R(n, m) is the value.
inline Eigen::MatrixXd soft_dtw_table(const Eigen::MatrixXd& d, double gamma) {
  const Eigen::Index n = d.rows(), m = d.cols();
  const double inf = std::numeric_limits<double>::infinity();
  Eigen::MatrixXd r = Eigen::MatrixXd::Constant(n + 2, m + 2, inf);
  r(0, 0) = 0.0;
  for (Eigen::Index i = 1; i <= n; ++i) {
    for (Eigen::Index j = 1; j <= m; ++j) {
      r(i, j) = d(i - 1, j - 1) + softmin3(r(i - 1, j - 1), r(i - 1, j), r(i, j - 1), gamma);
    }
  }
  return r;
}

}  // namespace detail

/// Soft-DTW value of two sequences (rows are frames) without gradients.
template <class S>
double soft_dtw_value(const ad::Mat<S>& x, const ad::Mat<S>& y, double gamma) {
  if (x.rows() == 0 || y.rows() == 0) throw std::invalid_argument("soft_dtw: empty sequence");
  if (x.cols() != y.cols()) throw std::invalid_argument("soft_dtw: frame widths differ");
  if (!(gamma > 0)) throw std::invalid_argument("soft_dtw: gamma must be positive");
  return detail::soft_dtw_table(detail::frame_costs(x, y), gamma)(x.rows(), y.rows());
}

/// Differentiable soft-DTW over squared-L2 frame costs with the expected-alignment backward pass.
template <class S>
ad::Var<S> soft_dtw(ad::Var<S> x, ad::Var<S> y, double gamma) {
  if (x.rows() == 0 || y.rows() == 0) throw std::invalid_argument("soft_dtw: empty sequence");
  if (x.cols() != y.cols()) throw std::invalid_argument("soft_dtw: frame widths differ");
  if (!(gamma > 0)) throw std::invalid_argument("soft_dtw: gamma must be positive");
  const Eigen::MatrixXd d = detail::frame_costs(x.value(), y.value());
  Eigen::MatrixXd r = detail::soft_dtw_table(d, gamma);
  const Eigen::Index n = d.rows(), m = d.cols();
  ad::Mat<S> out(1, 1);
  out(0, 0) = static_cast<S>(r(n, m));
  return x.tape().record(out, {x, y}, [x = x.id(), y = y.id(), d, r, n, m, gamma](ad::Tape<S>& t, std::size_t self) mutable {
    const double g = static_cast<double>(t.grad(self)(0, 0));
    const double ninf = -std::numeric_limits<double>::infinity();
    Eigen::MatrixXd dp = Eigen::MatrixXd::Zero(n + 2, m + 2);
    dp.block(1, 1, n, m) = d;
    for (Eigen::Index i = 1; i <= n; ++i) r(i, m + 1) = ninf;
    for (Eigen::Index j = 1; j <= m; ++j) r(n + 1, j) = ninf;
    r(n + 1, m + 1) = r(n, m);
    Eigen::MatrixXd e = Eigen::MatrixXd::Zero(n + 2, m + 2);
    e(n + 1, m + 1) = 1.0;
    for (Eigen::Index j = m; j >= 1; --j) {
      for (Eigen::Index i = n; i >= 1; --i) {
        const double a = std::exp((r(i + 1, j) - r(i, j) - dp(i + 1, j)) / gamma);
        const double b = std::exp((r(i, j + 1) - r(i, j) - dp(i, j + 1)) / gamma);
        const double c = std::exp((r(i + 1, j + 1) - r(i, j) - dp(i + 1, j + 1)) / gamma);
        e(i, j) = e(i + 1, j) * a + e(i, j + 1) * b + e(i + 1, j + 1) * c;
      }
    }
    const Eigen::MatrixXd w = g * e.block(1, 1, n, m);  // dL/dD
    const Eigen::MatrixXd xd = t.value(x).template cast<double>();
    const Eigen::MatrixXd yd = t.value(y).template cast<double>();
    if (t.requires_grad(x)) {
      const Eigen::MatrixXd gx = 2.0 * (w.rowwise().sum().asDiagonal() * xd - w * yd);
      t.accumulate(x, gx.cast<S>());
    }
    if (t.requires_grad(y)) {
      const Eigen::MatrixXd gy = 2.0 * (w.colwise().sum().transpose().asDiagonal() * yd - w.transpose() * xd);
      t.accumulate(y, gy.cast<S>());
    }
  });
}

}  // namespace saas
