#pragma once

#include "saas/ad/tape.hpp"

#include <cmath>
#include <vector>

namespace saas::ad {

namespace detail {

template <class S>
void require_same_shape(const Var<S>& a, const Var<S>& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                                std::to_string(b.cols()));
  }
}

}  // namespace detail

/// Elementwise sum. `b` may also be a 1 x cols row broadcast over the rows of `a`.
template <class S>
Var<S> add(Var<S> a, Var<S> b) {
  Tape<S>& t = a.tape();
  if (b.rows() == 1 && a.rows() != 1 && b.cols() == a.cols()) {
    Mat<S> out = a.value().rowwise() + b.value().row(0);
    return t.record(std::move(out), {a, b}, [a = a.id(), b = b.id()](Tape<S>& t, std::size_t self) {
      t.accumulate(a, t.grad(self));
      t.accumulate(b, t.grad(self).colwise().sum());
    });
  }
  detail::require_same_shape(a, b, "add");
  return t.record(a.value() + b.value(), {a, b}, [a = a.id(), b = b.id()](Tape<S>& t, std::size_t self) {
    t.accumulate(a, t.grad(self));
    t.accumulate(b, t.grad(self));
  });
}

template <class S>
Var<S> sub(Var<S> a, Var<S> b) {
  detail::require_same_shape(a, b, "sub");
  return a.tape().record(a.value() - b.value(), {a, b}, [a = a.id(), b = b.id()](Tape<S>& t, std::size_t self) {
    t.accumulate(a, t.grad(self));
    t.accumulate(b, -t.grad(self));
  });
}

/// Hadamard product.
template <class S>
Var<S> mul(Var<S> a, Var<S> b) {
  detail::require_same_shape(a, b, "mul");
  Mat<S> out = a.value().cwiseProduct(b.value());
  return a.tape().record(std::move(out), {a, b}, [a = a.id(), b = b.id()](Tape<S>& t, std::size_t self) {
    t.accumulate(a, t.grad(self).cwiseProduct(t.value(b)));
    t.accumulate(b, t.grad(self).cwiseProduct(t.value(a)));
  });
}

/// a scaled by a 1x1 variable.
template <class S>
Var<S> scale_by(Var<S> a, Var<S> s) {
  if (s.rows() != 1 || s.cols() != 1) throw std::invalid_argument("scale_by: scale must be 1x1");
  Mat<S> out = a.value() * s.item();
  return a.tape().record(std::move(out), {a, s}, [a = a.id(), s = s.id()](Tape<S>& t, std::size_t self) {
    t.accumulate(a, t.grad(self) * t.value(s)(0, 0));
    Mat<S> gs(1, 1);
    gs(0, 0) = t.grad(self).cwiseProduct(t.value(a)).sum();
    t.accumulate(s, gs);
  });
}

template <class S>
Var<S> scale(Var<S> a, S c) {
  return a.tape().record(a.value() * c, {a}, [a = a.id(), c](Tape<S>& t, std::size_t self) {
    t.accumulate(a, t.grad(self) * c);
  });
}

template <class S>
Var<S> add_scalar(Var<S> a, S c) {
  Mat<S> out = a.value().array() + c;
  return a.tape().record(std::move(out), {a}, [a = a.id()](Tape<S>& t, std::size_t self) {
    t.accumulate(a, t.grad(self));
  });
}

template <class S>
Var<S> matmul(Var<S> a, Var<S> b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("matmul: inner dimension mismatch");
  Mat<S> out = a.value() * b.value();
  return a.tape().record(std::move(out), {a, b}, [a = a.id(), b = b.id()](Tape<S>& t, std::size_t self) {
    if (t.requires_grad(a)) t.accumulate(a, t.grad(self) * t.value(b).transpose());
    if (t.requires_grad(b)) t.accumulate(b, t.value(a).transpose() * t.grad(self));
  });
}

/// a * b^T
template <class S>
Var<S> matmul_nt(Var<S> a, Var<S> b) {
  if (a.cols() != b.cols()) throw std::invalid_argument("matmul_nt: inner dimension mismatch");
  Mat<S> out = a.value() * b.value().transpose();
  return a.tape().record(std::move(out), {a, b}, [a = a.id(), b = b.id()](Tape<S>& t, std::size_t self) {
    if (t.requires_grad(a)) t.accumulate(a, t.grad(self) * t.value(b));
    if (t.requires_grad(b)) t.accumulate(b, t.grad(self).transpose() * t.value(a));
  });
}

template <class S>
Var<S> transpose(Var<S> a) {
  Mat<S> out = a.value().transpose();
  return a.tape().record(std::move(out), {a}, [a = a.id()](Tape<S>& t, std::size_t self) {
    t.accumulate(a, t.grad(self).transpose());
  });
}

template <class S>
Var<S> relu(Var<S> a) {
  Mat<S> out = a.value().cwiseMax(S(0));
  return a.tape().record(std::move(out), {a}, [a = a.id()](Tape<S>& t, std::size_t self) {
    t.accumulate(a, (t.value(a).array() > S(0)).select(t.grad(self).array(), S(0)).matrix());
  });
}

template <class S>
Var<S> leaky_relu(Var<S> a, S slope = S(0.2)) {
  Mat<S> out = (a.value().array() > S(0)).select(a.value().array(), a.value().array() * slope).matrix();
  return a.tape().record(std::move(out), {a}, [a = a.id(), slope](Tape<S>& t, std::size_t self) {
    t.accumulate(a, (t.value(a).array() > S(0)).select(t.grad(self).array(), t.grad(self).array() * slope).matrix());
  });
}

template <class S>
Var<S> tanh(Var<S> a) {
  Mat<S> out = a.value().array().tanh().matrix();
  return a.tape().record(std::move(out), {a}, [a = a.id()](Tape<S>& t, std::size_t self) {
    const Mat<S>& y = t.value(self);
    t.accumulate(a, t.grad(self).cwiseProduct((S(1) - y.array().square()).matrix()));
  });
}

template <class S>
Var<S> sigmoid(Var<S> a) {
  Mat<S> out = (S(1) / (S(1) + (-a.value().array()).exp())).matrix();
  return a.tape().record(std::move(out), {a}, [a = a.id()](Tape<S>& t, std::size_t self) {
    const Mat<S>& y = t.value(self);
    t.accumulate(a, t.grad(self).cwiseProduct((y.array() * (S(1) - y.array())).matrix()));
  });
}

template <class S>
Var<S> sum(Var<S> a) {
  Mat<S> out(1, 1);
  out(0, 0) = a.value().sum();
  return a.tape().record(std::move(out), {a}, [a = a.id()](Tape<S>& t, std::size_t self) {
    const Mat<S>& v = t.value(a);
    t.accumulate(a, Mat<S>::Constant(v.rows(), v.cols(), t.grad(self)(0, 0)));
  });
}

template <class S>
Var<S> mean(Var<S> a) {
  return scale(sum(a), S(1) / static_cast<S>(a.value().size()));
}

/// Mean of squared differences over all elements.
template <class S>
Var<S> mse(Var<S> a, Var<S> b) {
  detail::require_same_shape(a, b, "mse");
  const S n = static_cast<S>(a.value().size());
  Mat<S> out(1, 1);
  out(0, 0) = (a.value() - b.value()).squaredNorm() / n;
  return a.tape().record(std::move(out), {a, b}, [a = a.id(), b = b.id(), n](Tape<S>& t, std::size_t self) {
    const Mat<S> g = (t.value(a) - t.value(b)) * (S(2) * t.grad(self)(0, 0) / n);
    t.accumulate(a, g);
    t.accumulate(b, -g);
  });
}

/// Euclidean (Frobenius) norm, sqrt(sum x^2 + eps).
template <class S>
Var<S> l2_norm(Var<S> a, S eps = S(1e-12)) {
  Mat<S> out(1, 1);
  out(0, 0) = std::sqrt(a.value().squaredNorm() + eps);
  return a.tape().record(std::move(out), {a}, [a = a.id()](Tape<S>& t, std::size_t self) {
    const S n = t.value(self)(0, 0);
    t.accumulate(a, t.value(a) * (t.grad(self)(0, 0) / n));
  });
}

template <class S>
Var<S> softmax_rows(Var<S> a) {
  Mat<S> out = a.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const S m = out.row(r).maxCoeff();
    out.row(r) = (out.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return a.tape().record(std::move(out), {a}, [a = a.id()](Tape<S>& t, std::size_t self) {
    const Mat<S>& y = t.value(self);
    const Mat<S>& g = t.grad(self);
    Mat<S> ga(y.rows(), y.cols());
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
      const S dot = g.row(r).dot(y.row(r));
      ga.row(r) = y.row(r).cwiseProduct((g.row(r).array() - dot).matrix());
    }
    t.accumulate(a, ga);
  });
}

/// Mean cross-entropy of row-wise logits against integer labels.
template <class S>
Var<S> cross_entropy(Var<S> logits, const std::vector<int>& labels) {
  const Mat<S>& z = logits.value();
  if (static_cast<Eigen::Index>(labels.size()) != z.rows()) {
    throw std::invalid_argument("cross_entropy: one label per row required");
  }
  Mat<S> probs(z.rows(), z.cols());
  S total = 0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= z.cols()) throw std::invalid_argument("cross_entropy: label out of range");
    const S m = z.row(r).maxCoeff();
    probs.row(r) = (z.row(r).array() - m).exp().matrix();
    const S denom = probs.row(r).sum();
    probs.row(r) /= denom;
    total += -(z(r, y) - m - std::log(denom));
  }
  const S n = static_cast<S>(z.rows());
  Mat<S> out(1, 1);
  out(0, 0) = total / n;
  return logits.tape().record(
      std::move(out), {logits},
      [l = logits.id(), probs = std::move(probs), labels, n](Tape<S>& t, std::size_t self) {
        Mat<S> g = probs;
        for (Eigen::Index r = 0; r < g.rows(); ++r) g(r, labels[static_cast<std::size_t>(r)]) -= S(1);
        t.accumulate(l, g * (t.grad(self)(0, 0) / n));
      });
}

/// Row-wise layer normalisation followed by per-column gain and bias.
template <class S>
Var<S> layer_norm(Var<S> x, Var<S> gain, Var<S> bias, S eps = S(1e-5)) {
  const Mat<S>& v = x.value();
  const Eigen::Index d = v.cols();
  Mat<S> xhat(v.rows(), d);
  Mat<S> inv_std(v.rows(), 1);
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const S mu = v.row(r).mean();
    const S var = (v.row(r).array() - mu).square().mean();
    inv_std(r, 0) = S(1) / std::sqrt(var + eps);
    xhat.row(r) = (v.row(r).array() - mu).matrix() * inv_std(r, 0);
  }
  Mat<S> out = (xhat.array().rowwise() * gain.value().row(0).array()).matrix();
  out.rowwise() += bias.value().row(0);
  return x.tape().record(
      std::move(out), {x, gain, bias},
      [x = x.id(), gn = gain.id(), bs = bias.id(), xhat = std::move(xhat), inv_std = std::move(inv_std)](
          Tape<S>& t, std::size_t self) {
        const Mat<S>& g = t.grad(self);
        t.accumulate(gn, g.cwiseProduct(xhat).colwise().sum());
        t.accumulate(bs, g.colwise().sum());
        if (!t.requires_grad(x)) return;
        const Eigen::Index d = g.cols();
        const Mat<S> gx = (g.array().rowwise() * t.value(gn).row(0).array()).matrix();
        Mat<S> dx(g.rows(), d);
        for (Eigen::Index r = 0; r < g.rows(); ++r) {
          const S mean_g = gx.row(r).mean();
          const S mean_gx = gx.row(r).dot(xhat.row(r)) / static_cast<S>(d);
          dx.row(r) = ((gx.row(r).array() - mean_g - xhat.row(r).array() * mean_gx) * inv_std(r, 0)).matrix();
        }
        t.accumulate(x, dx);
      });
}

template <class S>
Var<S> concat_cols(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_cols: no parts");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw std::invalid_argument("concat_cols: row mismatch");
    cols += p.cols();
  }
  Mat<S> out(rows, cols);
  std::vector<std::size_t> ids;
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
    ids.push_back(p.id());
  }
  return parts.front().tape().record(std::move(out), parts, [ids](Tape<S>& t, std::size_t self) {
    Eigen::Index c = 0;
    for (std::size_t id : ids) {
      const Eigen::Index w = t.value(id).cols();
      t.accumulate(id, t.grad(self).middleCols(c, w));
      c += w;
    }
  });
}

template <class S>
Var<S> concat_rows(const std::vector<Var<S>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_rows: no parts");
  const Eigen::Index cols = parts.front().cols();
  Eigen::Index rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw std::invalid_argument("concat_rows: column mismatch");
    rows += p.rows();
  }
  Mat<S> out(rows, cols);
  std::vector<std::size_t> ids;
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    out.middleRows(r, p.rows()) = p.value();
    r += p.rows();
    ids.push_back(p.id());
  }
  return parts.front().tape().record(std::move(out), parts, [ids](Tape<S>& t, std::size_t self) {
    Eigen::Index r = 0;
    for (std::size_t id : ids) {
      const Eigen::Index h = t.value(id).rows();
      t.accumulate(id, t.grad(self).middleRows(r, h));
      r += h;
    }
  });
}

template <class S>
Var<S> slice_rows(Var<S> a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw std::out_of_range("slice_rows");
  Mat<S> out = a.value().middleRows(start, count);
  return a.tape().record(std::move(out), {a}, [a = a.id(), start, count](Tape<S>& t, std::size_t self) {
    const Mat<S>& v = t.value(a);
    Mat<S> g = Mat<S>::Zero(v.rows(), v.cols());
    g.middleRows(start, count) = t.grad(self);
    t.accumulate(a, g);
  });
}

template <class S>
Var<S> slice_cols(Var<S> a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw std::out_of_range("slice_cols");
  Mat<S> out = a.value().middleCols(start, count);
  return a.tape().record(std::move(out), {a}, [a = a.id(), start, count](Tape<S>& t, std::size_t self) {
    const Mat<S>& v = t.value(a);
    Mat<S> g = Mat<S>::Zero(v.rows(), v.cols());
    g.middleCols(start, count) = t.grad(self);
    t.accumulate(a, g);
  });
}

/// Row-major reshape (element order preserved).
template <class S>
Var<S> reshape(Var<S> a, Eigen::Index rows, Eigen::Index cols) {
  if (rows * cols != a.value().size()) throw std::invalid_argument("reshape: element count mismatch");
  Mat<S> out = Eigen::Map<const Mat<S>>(a.value().data(), rows, cols);
  return a.tape().record(std::move(out), {a}, [a = a.id()](Tape<S>& t, std::size_t self) {
    const Mat<S>& v = t.value(a);
    t.accumulate(a, Eigen::Map<const Mat<S>>(t.grad(self).data(), v.rows(), v.cols()));
  });
}

/// Repeat a 1 x d row `times` times.
template <class S>
Var<S> broadcast_rows(Var<S> row, Eigen::Index times) {
  if (row.rows() != 1) throw std::invalid_argument("broadcast_rows: expected a single row");
  Mat<S> out = row.value().replicate(times, 1);
  return row.tape().record(std::move(out), {row}, [r = row.id()](Tape<S>& t, std::size_t self) {
    t.accumulate(r, t.grad(self).colwise().sum());
  });
}

/// Average of consecutive groups of `group` rows: (T x d) -> (T/group x d).
template <class S>
Var<S> mean_row_groups(Var<S> a, Eigen::Index group) {
  if (group < 1 || a.rows() % group != 0) throw std::invalid_argument("mean_row_groups: rows not divisible");
  const Eigen::Index n = a.rows() / group;
  Mat<S> out(n, a.cols());
  for (Eigen::Index i = 0; i < n; ++i) out.row(i) = a.value().middleRows(i * group, group).colwise().mean();
  return a.tape().record(std::move(out), {a}, [a = a.id(), group](Tape<S>& t, std::size_t self) {
    const Mat<S>& g = t.grad(self);
    Mat<S> ga(g.rows() * group, g.cols());
    for (Eigen::Index i = 0; i < g.rows(); ++i) {
      for (Eigen::Index k = 0; k < group; ++k) ga.row(i * group + k) = g.row(i) / static_cast<S>(group);
    }
    t.accumulate(a, ga);
  });
}

template <class S>
Var<S> mean_rows(Var<S> a) {
  return mean_row_groups(a, a.rows());
}

/// out[t] = a[t - shift] (zero outside the sequence). Building block for temporal convolution.
template <class S>
Var<S> shift_rows(Var<S> a, Eigen::Index shift) {
  const Eigen::Index T = a.rows();
  Mat<S> out = Mat<S>::Zero(T, a.cols());
  const Eigen::Index n = T - std::abs(shift);
  if (n > 0) {
    if (shift >= 0) {
      out.bottomRows(n) = a.value().topRows(n);
    } else {
      out.topRows(n) = a.value().bottomRows(n);
    }
  }
  return a.tape().record(std::move(out), {a}, [a = a.id(), shift, n](Tape<S>& t, std::size_t self) {
    const Mat<S>& g = t.grad(self);
    Mat<S> ga = Mat<S>::Zero(g.rows(), g.cols());
    if (n > 0) {
      if (shift >= 0) {
        ga.topRows(n) = g.bottomRows(n);
      } else {
        ga.bottomRows(n) = g.topRows(n);
      }
    }
    t.accumulate(a, ga);
  });
}

template <class S>
Var<S> gather_rows(Var<S> table, const std::vector<int>& indices) {
  const Mat<S>& v = table.value();
  Mat<S> out(static_cast<Eigen::Index>(indices.size()), v.cols());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= v.rows()) throw std::out_of_range("gather_rows: index out of range");
    out.row(static_cast<Eigen::Index>(i)) = v.row(indices[i]);
  }
  return table.tape().record(std::move(out), {table}, [tb = table.id(), indices](Tape<S>& t, std::size_t self) {
    const Mat<S>& g = t.grad(self);
    Mat<S> ga = Mat<S>::Zero(t.value(tb).rows(), g.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) ga.row(indices[i]) += g.row(static_cast<Eigen::Index>(i));
    t.accumulate(tb, ga);
  });
}

/// Value of `a`, no gradient path.
template <class S>
Var<S> stop_gradient(Var<S> a) {
  return a.tape().constant(a.value());
}

}  // namespace saas::ad
