#pragma once

#include "saas/core/types.hpp"

#include <vector>

namespace saas {

inline constexpr double kStdFloor = 1e-6;

/// Per-dimension mean and standard deviation (population), std floored at kStdFloor.
struct NormStats {
  RowVector mean;
  RowVector stddev;

  Eigen::Index dim() const noexcept { return mean.size(); }

  /// Statistics over the rows of every matrix in `data` (the training split only).
  static NormStats fit(const std::vector<const Matrix*>& data) {
    if (data.empty()) throw std::invalid_argument("NormStats::fit: no data");
    const Eigen::Index d = data.front()->cols();
    Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(d);
    Eigen::RowVectorXd sq = Eigen::RowVectorXd::Zero(d);
    double n = 0;
    for (const Matrix* m : data) {
      if (m->cols() != d) throw std::invalid_argument("NormStats::fit: dimension mismatch");
      const Eigen::MatrixXd md = m->cast<double>();
      sum += md.colwise().sum();
      n += static_cast<double>(md.rows());
    }
    const Eigen::RowVectorXd mu = sum / n;
    for (const Matrix* m : data) {
      const Eigen::MatrixXd centered = m->cast<double>().rowwise() - mu;
      sq += centered.array().square().matrix().colwise().sum();
    }
    NormStats s;
    s.mean = mu.cast<float>();
    s.stddev = (sq / n).array().sqrt().max(kStdFloor).matrix().cast<float>();
    return s;
  }
};

inline void check_stats(const Matrix& x, const NormStats& stats) {
  if (x.cols() != stats.dim() || stats.stddev.size() != stats.dim()) {
    throw std::invalid_argument("normalize: data has " + std::to_string(x.cols()) +
                                " dimensions, stats have " + std::to_string(stats.dim()));
  }
}

inline Matrix normalize(const Matrix& x, const NormStats& stats) {
  check_stats(x, stats);
  const Eigen::MatrixXd centered = x.cast<double>().rowwise() - stats.mean.cast<double>();
  const Eigen::ArrayXXd scaled =
      centered.array().rowwise() / stats.stddev.cast<double>().array().max(kStdFloor);
  return scaled.matrix().cast<float>();
}

inline Matrix denormalize(const Matrix& x, const NormStats& stats) {
  check_stats(x, stats);
  const Eigen::ArrayXXd scaled =
      x.cast<double>().array().rowwise() * stats.stddev.cast<double>().array().max(kStdFloor);
  return (scaled.matrix().rowwise() + stats.mean.cast<double>()).cast<float>();
}

}  // namespace saas
