#pragma once

#include "saas/ad/ops.hpp"
#include "saas/core/types.hpp"

#include <limits>
#include <vector>

namespace saas {

template <class S>
struct Quantized {
  MatrixT<S> values;         // tau x d, each row bitwise equal to a codebook row
  std::vector<int> indices;  // tau
  std::vector<double> distances;  // squared Euclidean distance to the chosen row
};

/// Nearest codebook row for every feature row (squared Euclidean distance, ties to the
/// lowest index). Distances are accumulated in double.
template <class S, class T>
Quantized<S> quantize(const MatrixT<S>& features, const MatrixT<T>& codebook) {
  if (codebook.rows() < 1) throw std::invalid_argument("quantize: empty codebook");
  if (codebook.cols() != features.cols()) {
    throw std::invalid_argument("quantize: feature width " + std::to_string(features.cols()) +
                                " does not match codebook width " + std::to_string(codebook.cols()));
  }
  Quantized<S> out;
  out.values.resize(features.rows(), features.cols());
  const Eigen::Index d = features.cols();
  for (Eigen::Index t = 0; t < features.rows(); ++t) {
    double best = std::numeric_limits<double>::infinity();
    Eigen::Index best_k = 0;
    for (Eigen::Index k = 0; k < codebook.rows(); ++k) {
      double dist = 0;
      for (Eigen::Index j = 0; j < d; ++j) {
        const double diff = static_cast<double>(features(t, j)) - static_cast<double>(codebook(k, j));
        dist += diff * diff;
      }
      if (dist < best) {
        best = dist;
        best_k = k;
      }
    }
    out.values.row(t) = codebook.row(best_k).template cast<S>();
    out.indices.push_back(static_cast<int>(best_k));
    out.distances.push_back(best);
  }
  return out;
}

inline Quantized<float> quantize(const Matrix& features, const Codebook& codebook) {
  return quantize<float, float>(features, codebook.entries());
}

/// Forward value is exactly `q`; the backward pass hands the incoming gradient to
/// `f` unchanged, bypassing the non-differentiable nearest-neighbour lookup.
template <class S>
ad::Var<S> straight_through(ad::Var<S> f, const MatrixT<S>& q) {
  if (f.rows() != q.rows() || f.cols() != q.cols()) throw std::invalid_argument("straight_through: shape mismatch");
  return f.tape().record(q, {f}, [f = f.id()](ad::Tape<S>& t, std::size_t self) { t.accumulate(f, t.grad(self)); });
}

}  // namespace saas
