#pragma once

#include "saas/core/container.hpp"
#include "saas/core/normalize.hpp"
#include "saas/core/rng.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <random>
#include <set>

namespace saas {

/// Linear face model: Ver(beta) = mean_shape + sum_j beta_j * basis_j, with
/// vertices flattened as (x0, y0, z0, x1, ...).
struct BlendshapeBasis {
  Eigen::RowVectorXd mean_shape;  // 1 x 3V
  Eigen::MatrixXd basis;          // 64 x 3V
  std::vector<int> upper_lip;
  std::vector<int> lower_lip;

  Eigen::Index vertices() const { return mean_shape.size() / 3; }

  void validate() const {
    if (mean_shape.size() == 0 || mean_shape.size() % 3 != 0) throw std::invalid_argument("basis: mean shape must be V x 3");
    if (basis.rows() != kExpressionDim || basis.cols() != mean_shape.size()) {
      throw std::invalid_argument("basis: expected 64 deltas of the mean-shape size");
    }
    if (upper_lip.empty() || lower_lip.empty()) throw std::invalid_argument("basis: lip vertex sets must be nonempty");
    const std::set<int> up(upper_lip.begin(), upper_lip.end());
    for (int v : lower_lip) {
      if (up.count(v) != 0) throw std::invalid_argument("basis: upper and lower lip sets overlap");
    }
    for (const auto* set : {&upper_lip, &lower_lip}) {
      for (int v : *set) {
        if (v < 0 || v >= vertices()) throw std::invalid_argument("basis: lip vertex index out of range");
      }
    }
  }

  /// T x 3V vertex positions.
  Eigen::MatrixXd vertices_of(const Matrix& beta) const {
    Eigen::MatrixXd v = beta.cast<double>() * basis;
    v.rowwise() += mean_shape;
    return v;
  }

  /// 64 x 3 linear map beta -> mean(upper lip) - mean(lower lip) (the mean shape part is separate).
  Eigen::MatrixXd lip_map() const {
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(kExpressionDim, 3);
    for (int v : upper_lip) m += basis.middleCols(3 * v, 3) / static_cast<double>(upper_lip.size());
    for (int v : lower_lip) m -= basis.middleCols(3 * v, 3) / static_cast<double>(lower_lip.size());
    return m;
  }

  Eigen::RowVector3d lip_offset() const {
    Eigen::RowVector3d o = Eigen::RowVector3d::Zero();
    for (int v : upper_lip) o += mean_shape.segment<3>(3 * v) / static_cast<double>(upper_lip.size());
    for (int v : lower_lip) o -= mean_shape.segment<3>(3 * v) / static_cast<double>(lower_lip.size());
    return o;
  }

  /// Upper-minus-lower lip vector per frame (T x 3).
  Eigen::MatrixXd lip_difference(const Matrix& beta) const {
    Eigen::MatrixXd d = beta.cast<double>() * lip_map();
    d.rowwise() += lip_offset();
    return d;
  }

  /// Equivalent basis for normalized coefficients x, where beta = x * stddev + mean.
  BlendshapeBasis for_normalized(const NormStats& stats) const {
    BlendshapeBasis b = *this;
    const Eigen::RowVectorXd sd = stats.stddev.cast<double>();
    const Eigen::RowVectorXd mu = stats.mean.cast<double>();
    b.basis = sd.transpose().asDiagonal() * basis;
    b.mean_shape = mean_shape + mu * basis;
    return b;
  }

  void save(Container& c) const {
    c.add_matrix("mean_shape", mean_shape);
    c.add_matrix("basis", basis);
    c.add_ints("upper_lip", {static_cast<std::int64_t>(upper_lip.size())},
               std::vector<std::int64_t>(upper_lip.begin(), upper_lip.end()));
    c.add_ints("lower_lip", {static_cast<std::int64_t>(lower_lip.size())},
               std::vector<std::int64_t>(lower_lip.begin(), lower_lip.end()));
  }

  static BlendshapeBasis load(const Container& c) {
    BlendshapeBasis b;
    b.mean_shape = c.matrix("mean_shape").cast<double>();
    b.basis = c.matrix("basis").cast<double>();
    for (auto v : c.get("upper_lip").ints()) b.upper_lip.push_back(static_cast<int>(v));
    for (auto v : c.get("lower_lip").ints()) b.lower_lip.push_back(static_cast<int>(v));
    b.validate();
    return b;
  }
};

/// Seeded synthetic basis: V vertices, two disjoint `lip`-vertex sets, and 64
/// orthonormal deltas. Lip vertices move only with the mouth block (coefficients
/// 0..mouth-1), so the lip difference is a function of the mouth block alone.
inline BlendshapeBasis synthetic_basis(std::uint64_t seed, int vertices = 468, int lip = 20, int mouth = 16) {
  if (vertices < 2 * lip + 1 || lip < 1) throw std::invalid_argument("synthetic_basis: too few vertices for the lip sets");
  auto rng = derive_rng(seed, 0xb45e);
  std::normal_distribution<double> n(0.0, 1.0);
  BlendshapeBasis b;
  const Eigen::Index cols = 3 * vertices;
  b.mean_shape.resize(cols);
  for (Eigen::Index i = 0; i < cols; ++i) b.mean_shape(i) = n(rng);
  for (int v = 0; v < lip; ++v) {
    b.upper_lip.push_back(v);
    b.lower_lip.push_back(lip + v);
    b.mean_shape(3 * v + 1) += 1.0;
    b.mean_shape(3 * (lip + v) + 1) -= 1.0;
  }
  // Non-mouth columns come first so orthogonalization keeps their lip rows at zero.
  const int rest = kExpressionDim - mouth;
  Eigen::MatrixXd raw(cols, kExpressionDim);
  for (Eigen::Index i = 0; i < raw.size(); ++i) raw.data()[i] = n(rng);
  raw.topRows(6 * lip).leftCols(rest).setZero();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(raw);
  const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(cols, kExpressionDim);
  b.basis.resize(kExpressionDim, cols);
  b.basis.topRows(mouth) = q.rightCols(mouth).transpose();
  b.basis.bottomRows(rest) = q.leftCols(rest).transpose();
  b.basis.middleCols(0, 6 * lip).bottomRows(rest).setZero();  // exact zeros instead of round-off
  b.basis *= std::sqrt(static_cast<double>(vertices));
  b.validate();
  return b;
}

}  // namespace saas
