#pragma once

// Small layer library on top of the tape: each layer registers its parameters
// in a ParamSet at construction and binds them on every forward call.

#include "saas/ad/lstm.hpp"
#include "saas/ad/ops.hpp"
#include "saas/ad/params.hpp"

#include <cmath>
#include <optional>

namespace saas::ad {

template <class S>
class Linear {
 public:
  Linear() = default;
  Linear(ParamSet<S>& ps, const std::string& name, Eigen::Index in, Eigen::Index out, std::mt19937_64& rng,
         Init init = Init::uniform_fan_in)
      : w_(&ps.add(name + ".w", in, out, init, rng)), b_(&ps.add(name + ".b", 1, out, Init::zeros, rng)) {}

  Var<S> operator()(Tape<S>& t, Var<S> x) const { return add(matmul(x, t.param(*w_)), t.param(*b_)); }

  Parameter<S>& weight() const { return *w_; }
  Parameter<S>& bias() const { return *b_; }
  Eigen::Index in() const { return w_->value.rows(); }
  Eigen::Index out() const { return w_->value.cols(); }

 private:
  Parameter<S>* w_ = nullptr;
  Parameter<S>* b_ = nullptr;
};

template <class S>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(ParamSet<S>& ps, const std::string& name, Eigen::Index dim, std::mt19937_64& rng)
      : g_(&ps.add(name + ".g", 1, dim, Init::ones, rng)), b_(&ps.add(name + ".b", 1, dim, Init::zeros, rng)) {}

  Var<S> operator()(Tape<S>& t, Var<S> x) const { return layer_norm(x, t.param(*g_), t.param(*b_)); }

 private:
  Parameter<S>* g_ = nullptr;
  Parameter<S>* b_ = nullptr;
};

/// Additive attention masks: 0 where attention is allowed, a large negative value elsewhere.
template <class S>
Mat<S> causal_mask(Eigen::Index n) {
  Mat<S> m = Mat<S>::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) m(i, j) = S(-1e9);
  }
  return m;
}

/// Attention restricted to blocks of `window` consecutive positions.
template <class S>
Mat<S> block_mask(Eigen::Index n, Eigen::Index window) {
  Mat<S> m = Mat<S>::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i / window != j / window) m(i, j) = S(-1e9);
    }
  }
  return m;
}

template <class S>
Mat<S> sinusoidal_positions(Eigen::Index n, Eigen::Index dim) {
  Mat<S> p(n, dim);
  for (Eigen::Index pos = 0; pos < n; ++pos) {
    for (Eigen::Index i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(dim));
      const double a = static_cast<double>(pos) * freq;
      p(pos, i) = static_cast<S>(i % 2 == 0 ? std::sin(a) : std::cos(a));
    }
  }
  return p;
}

template <class S>
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParamSet<S>& ps, const std::string& name, Eigen::Index dim, Eigen::Index heads,
                     std::mt19937_64& rng)
      : heads_(heads),
        q_(ps, name + ".q", dim, dim, rng),
        k_(ps, name + ".k", dim, dim, rng),
        v_(ps, name + ".v", dim, dim, rng),
        o_(ps, name + ".o", dim, dim, rng) {
    if (dim % heads != 0) throw std::invalid_argument("attention width must be divisible by head count");
  }

  Var<S> operator()(Tape<S>& t, Var<S> query, Var<S> context, const Mat<S>* mask = nullptr) const {
    const Var<S> q = q_(t, query);
    const Var<S> k = k_(t, context);
    const Var<S> v = v_(t, context);
    const Eigen::Index dh = q.cols() / heads_;
    const S inv = S(1) / std::sqrt(static_cast<S>(dh));
    std::optional<Var<S>> m;
    if (mask != nullptr) m = t.constant(*mask);
    std::vector<Var<S>> outs;
    for (Eigen::Index h = 0; h < heads_; ++h) {
      Var<S> scores = scale(matmul_nt(slice_cols(q, h * dh, dh), slice_cols(k, h * dh, dh)), inv);
      if (m) scores = add(scores, *m);
      outs.push_back(matmul(softmax_rows(scores), slice_cols(v, h * dh, dh)));
    }
    return o_(t, heads_ == 1 ? outs.front() : concat_cols(outs));
  }

 private:
  Eigen::Index heads_ = 1;
  Linear<S> q_, k_, v_, o_;
};

template <class S>
class FeedForward {
 public:
  FeedForward() = default;
  FeedForward(ParamSet<S>& ps, const std::string& name, Eigen::Index dim, Eigen::Index hidden, std::mt19937_64& rng)
      : a_(ps, name + ".a", dim, hidden, rng), b_(ps, name + ".b", hidden, dim, rng) {}

  Var<S> operator()(Tape<S>& t, Var<S> x) const { return b_(t, relu(a_(t, x))); }

 private:
  Linear<S> a_, b_;
};

/// Pre-norm transformer encoder layer.
template <class S>
class EncoderLayer {
 public:
  EncoderLayer() = default;
  EncoderLayer(ParamSet<S>& ps, const std::string& name, Eigen::Index dim, Eigen::Index heads, Eigen::Index ff,
               std::mt19937_64& rng)
      : ln1_(ps, name + ".ln1", dim, rng),
        attn_(ps, name + ".attn", dim, heads, rng),
        ln2_(ps, name + ".ln2", dim, rng),
        ff_(ps, name + ".ff", dim, ff, rng) {}

  Var<S> operator()(Tape<S>& t, Var<S> x, const Mat<S>* mask = nullptr) const {
    const Var<S> n1 = ln1_(t, x);
    x = add(x, attn_(t, n1, n1, mask));
    return add(x, ff_(t, ln2_(t, x)));
  }

 private:
  LayerNorm<S> ln1_;
  MultiHeadAttention<S> attn_;
  LayerNorm<S> ln2_;
  FeedForward<S> ff_;
};

/// Pre-norm transformer decoder layer: causal self-attention, cross-attention, feed-forward.
template <class S>
class DecoderLayer {
 public:
  DecoderLayer() = default;
  DecoderLayer(ParamSet<S>& ps, const std::string& name, Eigen::Index dim, Eigen::Index heads, Eigen::Index ff,
               std::mt19937_64& rng)
      : ln1_(ps, name + ".ln1", dim, rng),
        self_(ps, name + ".self", dim, heads, rng),
        ln2_(ps, name + ".ln2", dim, rng),
        cross_(ps, name + ".cross", dim, heads, rng),
        ln3_(ps, name + ".ln3", dim, rng),
        ff_(ps, name + ".ff", dim, ff, rng) {}

  Var<S> operator()(Tape<S>& t, Var<S> x, Var<S> context, const Mat<S>& causal) const {
    const Var<S> n1 = ln1_(t, x);
    x = add(x, self_(t, n1, n1, &causal));
    x = add(x, cross_(t, ln2_(t, x), context));
    return add(x, ff_(t, ln3_(t, x)));
  }

 private:
  LayerNorm<S> ln1_;
  MultiHeadAttention<S> self_;
  LayerNorm<S> ln2_;
  MultiHeadAttention<S> cross_;
  LayerNorm<S> ln3_;
  FeedForward<S> ff_;
};

/// Same-length temporal convolution with an odd kernel and zero padding.
template <class S>
class Conv1d {
 public:
  Conv1d() = default;
  Conv1d(ParamSet<S>& ps, const std::string& name, Eigen::Index in, Eigen::Index out, Eigen::Index kernel,
         std::mt19937_64& rng)
      : kernel_(kernel), proj_(ps, name, in * kernel, out, rng) {
    if (kernel % 2 == 0) throw std::invalid_argument("Conv1d kernel must be odd");
  }

  Var<S> operator()(Tape<S>& t, Var<S> x) const {
    const Eigen::Index half = kernel_ / 2;
    std::vector<Var<S>> taps;
    for (Eigen::Index j = -half; j <= half; ++j) taps.push_back(j == 0 ? x : shift_rows(x, -j));
    return proj_(t, concat_cols(taps));
  }

 private:
  Eigen::Index kernel_ = 1;
  Linear<S> proj_;
};

/// LSTM layer with its own weights; `offset` (same shape as the weight) is added
/// before the recurrence when supplied.
template <class S>
class LstmLayer {
 public:
  LstmLayer() = default;
  LstmLayer(ParamSet<S>& ps, const std::string& name, Eigen::Index in, Eigen::Index hidden, std::mt19937_64& rng)
      : w_(&ps.add(name + ".w", in + hidden, 4 * hidden, Init::uniform, rng,
                   1.0 / std::sqrt(static_cast<double>(hidden)))),
        b_(&ps.add(name + ".b", 1, 4 * hidden, Init::zeros, rng)) {
    b_->value.middleCols(hidden, hidden).setOnes();  // forget-gate bias
  }

  Var<S> operator()(Tape<S>& t, Var<S> x, std::optional<Var<S>> offset = std::nullopt) const {
    Var<S> w = t.param(*w_);
    if (offset) w = add(w, *offset);
    return lstm(x, w, t.param(*b_));
  }

  Eigen::Index weight_rows() const { return w_->value.rows(); }
  Eigen::Index weight_cols() const { return w_->value.cols(); }
  Eigen::Index hidden() const { return w_->value.cols() / 4; }

 private:
  Parameter<S>* w_ = nullptr;
  Parameter<S>* b_ = nullptr;
};

}  // namespace saas::ad
