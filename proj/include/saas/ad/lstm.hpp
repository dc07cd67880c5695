#pragma once

#include "saas/ad/tape.hpp"

#include <cmath>

namespace saas::ad {

/// One LSTM layer over a whole sequence as a single tape node.
///
/// x: T x in, weight: (in + H) x 4H acting on [x_t, h_{t-1}], bias: 1 x 4H.
/// Gate column blocks are ordered input, forget, cell, output. Zero initial state.
/// Returns the hidden states, T x H. Backward is full backpropagation through time,
/// so `weight` may itself be a computed variable (base weights plus offsets).
template <class S>
Var<S> lstm(Var<S> x, Var<S> weight, Var<S> bias) {
  const Eigen::Index T = x.rows();
  const Eigen::Index in = x.cols();
  const Eigen::Index H4 = weight.cols();
  if (H4 % 4 != 0) throw std::invalid_argument("lstm: weight width must be 4 * hidden");
  const Eigen::Index H = H4 / 4;
  if (weight.rows() != in + H) throw std::invalid_argument("lstm: weight rows must equal input + hidden");
  if (bias.rows() != 1 || bias.cols() != H4) throw std::invalid_argument("lstm: bias must be 1 x 4H");

  const Mat<S>& W = weight.value();
  Mat<S> gates = x.value() * W.topRows(in);
  gates.rowwise() += bias.value().row(0);
  Mat<S> cells(T, H);
  Mat<S> hidden(T, H);
  Eigen::Matrix<S, 1, Eigen::Dynamic> h = Eigen::Matrix<S, 1, Eigen::Dynamic>::Zero(H);
  Eigen::Matrix<S, 1, Eigen::Dynamic> c = Eigen::Matrix<S, 1, Eigen::Dynamic>::Zero(H);
  const auto sigm = [](S v) { return S(1) / (S(1) + std::exp(-v)); };
  for (Eigen::Index t = 0; t < T; ++t) {
    auto z = gates.row(t);
    z.noalias() += h * W.bottomRows(H);
    for (Eigen::Index j = 0; j < H; ++j) {
      z(j) = sigm(z(j));
      z(H + j) = sigm(z(H + j));
      z(2 * H + j) = std::tanh(z(2 * H + j));
      z(3 * H + j) = sigm(z(3 * H + j));
      c(j) = z(H + j) * c(j) + z(j) * z(2 * H + j);
      h(j) = z(3 * H + j) * std::tanh(c(j));
    }
    cells.row(t) = c;
    hidden.row(t) = h;
  }

  return x.tape().record(
      hidden, {x, weight, bias},
      [x = x.id(), w = weight.id(), b = bias.id(), gates = std::move(gates), cells = std::move(cells), in, H](
          Tape<S>& t, std::size_t self) {
        const Mat<S>& dH = t.grad(self);
        const Mat<S>& hidden = t.value(self);
        const Mat<S>& W = t.value(w);
        const Eigen::Index T = dH.rows();
        Mat<S> dZ(T, 4 * H);
        Eigen::Matrix<S, 1, Eigen::Dynamic> dh_next = Eigen::Matrix<S, 1, Eigen::Dynamic>::Zero(H);
        Eigen::Matrix<S, 1, Eigen::Dynamic> dc_next = Eigen::Matrix<S, 1, Eigen::Dynamic>::Zero(H);
        for (Eigen::Index ti = T; ti-- > 0;) {
          for (Eigen::Index j = 0; j < H; ++j) {
            const S gi = gates(ti, j);
            const S gf = gates(ti, H + j);
            const S gg = gates(ti, 2 * H + j);
            const S go = gates(ti, 3 * H + j);
            const S ct = cells(ti, j);
            const S cprev = ti > 0 ? cells(ti - 1, j) : S(0);
            const S tc = std::tanh(ct);
            const S dh = dH(ti, j) + dh_next(j);
            const S dc = dh * go * (S(1) - tc * tc) + dc_next(j);
            dZ(ti, j) = dc * gg * gi * (S(1) - gi);
            dZ(ti, H + j) = dc * cprev * gf * (S(1) - gf);
            dZ(ti, 2 * H + j) = dc * gi * (S(1) - gg * gg);
            dZ(ti, 3 * H + j) = dh * tc * go * (S(1) - go);
            dc_next(j) = dc * gf;
          }
          dh_next.noalias() = dZ.row(ti) * W.bottomRows(H).transpose();
        }
        if (t.requires_grad(w)) {
          Mat<S> dW(in + H, 4 * H);
          dW.topRows(in).noalias() = t.value(x).transpose() * dZ;
          dW.bottomRows(H).setZero();
          if (T > 1) dW.bottomRows(H).noalias() = hidden.topRows(T - 1).transpose() * dZ.bottomRows(T - 1);
          t.accumulate(w, dW);
        }
        t.accumulate(b, dZ.colwise().sum());
        if (t.requires_grad(x)) t.accumulate(x, dZ * W.topRows(in).transpose());
      });
}

}  // namespace saas::ad
