#include "gradcheck.hpp"

#include "saas/ad/nn.hpp"

#include <gtest/gtest.h>

#include <random>

using saas::ad::Mat;
using saas::ad::Tape;
using saas::ad::Var;
using saas::testing::gradcheck_inputs;
using saas::testing::MatD;
namespace ad = saas::ad;

namespace {

MatD random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  MatD m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

constexpr double kTol = 1e-5;

}  // namespace

TEST(Autodiff, ElementwiseAndReductions) {
  std::mt19937_64 rng(1);
  const double err = gradcheck_inputs(
      [](Tape<double>&, std::vector<Var<double>>& v) {
        Var<double> y = ad::mul(ad::tanh(v[0]), ad::sigmoid(v[1]));
        y = ad::add(y, ad::leaky_relu(ad::sub(v[0], v[1]), 0.1));
        y = ad::add(y, v[2]);  // row broadcast
        return ad::add(ad::mean(ad::scale(y, 3.0)), ad::l2_norm(y));
      },
      {random_matrix(4, 5, rng), random_matrix(4, 5, rng), random_matrix(1, 5, rng)});
  EXPECT_LT(err, kTol);
}

TEST(Autodiff, MatmulSoftmaxCrossEntropy) {
  std::mt19937_64 rng(2);
  const double err = gradcheck_inputs(
      [](Tape<double>&, std::vector<Var<double>>& v) {
        Var<double> p = ad::softmax_rows(ad::matmul_nt(v[0], v[1]));
        Var<double> z = ad::matmul(p, v[2]);
        return ad::add(ad::cross_entropy(z, {0, 2, 1}), ad::mse(ad::transpose(z), ad::transpose(v[3])));
      },
      {random_matrix(3, 4, rng), random_matrix(5, 4, rng), random_matrix(5, 3, rng), random_matrix(3, 3, rng)});
  EXPECT_LT(err, kTol);
}

TEST(Autodiff, LayerNormAndShapeOps) {
  std::mt19937_64 rng(3);
  const double err = gradcheck_inputs(
      [](Tape<double>&, std::vector<Var<double>>& v) {
        Var<double> n = ad::layer_norm(v[0], v[1], v[2]);
        Var<double> a = ad::concat_cols<double>({ad::shift_rows(n, 1), ad::shift_rows(n, -2), n});
        Var<double> b = ad::concat_rows<double>({ad::slice_rows(a, 0, 2), ad::slice_rows(ad::slice_cols(a, 0, 18), 1, 3)});
        b = ad::slice_cols(b, 1, 12);
        Var<double> c = ad::mean_row_groups(ad::reshape(a, 12, 6), 3);
        Var<double> g = ad::gather_rows(c, {3, 0, 3});
        Var<double> br = ad::broadcast_rows(ad::mean_rows(g), 4);
        return ad::add(ad::add(ad::sum(ad::mul(b, b)), ad::sum(ad::tanh(br))), ad::scale_by(ad::sum(c), v[3]));
      },
      {random_matrix(4, 6, rng), random_matrix(1, 6, rng), random_matrix(1, 6, rng), random_matrix(1, 1, rng)});
  EXPECT_LT(err, kTol);
}

TEST(Autodiff, LstmThroughTime) {
  std::mt19937_64 rng(4);
  const double err = gradcheck_inputs(
      [](Tape<double>&, std::vector<Var<double>>& v) {
        Var<double> w = ad::add(v[1], ad::matmul(v[3], v[4]));  // base + low-rank offset
        Var<double> h = ad::lstm(v[0], w, v[2]);
        return ad::sum(ad::mul(h, h));
      },
      {random_matrix(6, 3, rng), random_matrix(3 + 4, 16, rng, 0.5), random_matrix(1, 16, rng, 0.5),
       random_matrix(7, 2, rng, 0.3), random_matrix(2, 16, rng, 0.3)});
  EXPECT_LT(err, kTol);
}

TEST(Autodiff, TransformerLayersWithMasks) {
  std::mt19937_64 rng(5);
  ad::ParamSet<double> ps;
  ad::EncoderLayer<double> enc(ps, "enc", 8, 2, 12, rng);
  ad::DecoderLayer<double> dec(ps, "dec", 8, 2, 12, rng);
  ad::Conv1d<double> conv(ps, "conv", 8, 8, 3, rng);
  const MatD x = random_matrix(6, 8, rng);
  const MatD y = random_matrix(4, 8, rng);
  const MatD block = ad::block_mask<double>(6, 3);
  const MatD causal = ad::causal_mask<double>(4);
  const double err = saas::testing::gradcheck_params(ps, [&](Tape<double>& t) {
    Var<double> ctx = conv(t, enc(t, t.constant(x), &block));
    Var<double> out = dec(t, t.constant(y), ctx, causal);
    return ad::sum(ad::tanh(out));
  });
  EXPECT_LT(err, kTol);
}

TEST(Autodiff, CausalMaskBlocksFutureBitwise) {
  std::mt19937_64 rng(6);
  ad::ParamSet<float> ps;
  ad::DecoderLayer<float> dec(ps, "dec", 8, 2, 16, rng);
  Mat<float> x = random_matrix(5, 8, rng).cast<float>();
  const Mat<float> ctx = random_matrix(3, 8, rng).cast<float>();
  const Mat<float> mask = ad::causal_mask<float>(5);
  Tape<float> t1;
  const Mat<float> a = dec(t1, t1.constant(x), t1.constant(ctx), mask).value();
  x.row(4).setConstant(7.0f);
  Tape<float> t2;
  const Mat<float> b = dec(t2, t2.constant(x), t2.constant(ctx), mask).value();
  EXPECT_TRUE((a.topRows(4).array() == b.topRows(4).array()).all());
  EXPECT_FALSE((a.row(4).array() == b.row(4).array()).all());
}

TEST(Autodiff, StopGradientBlocksPath) {
  Tape<double> t;
  Var<double> x = t.leaf(MatD::Constant(2, 2, 3.0));
  Var<double> y = ad::add(ad::sum(ad::mul(x, x)), ad::sum(ad::stop_gradient(ad::mul(x, x))));
  t.backward(y);
  EXPECT_TRUE(t.grad(x.id()).isApprox(MatD::Constant(2, 2, 6.0)));
}

TEST(Autodiff, ParamGradientsAccumulateAndAdamMoves) {
  std::mt19937_64 rng(7);
  ad::ParamSet<double> ps;
  ad::Linear<double> lin(ps, "lin", 3, 2, rng);
  const MatD x = random_matrix(5, 3, rng);
  const MatD target = random_matrix(5, 2, rng);
  ad::Adam<double> opt({.learning_rate = 0.05, .clip_norm = 0});
  double first = 0, last = 0;
  for (int step = 0; step < 200; ++step) {
    Tape<double> t;
    Var<double> loss = ad::mse(lin(t, t.constant(x)), t.constant(target));
    if (step == 0) first = loss.item();
    last = loss.item();
    t.backward(loss);
    opt.step(ps);
  }
  EXPECT_LT(last, first);
}

TEST(Autodiff, FrozenParametersGetNoGradient) {
  std::mt19937_64 rng(8);
  ad::ParamSet<double> ps;
  ad::Linear<double> lin(ps, "lin", 3, 2, rng);
  ps.set_frozen(true);
  Tape<double> t;
  Var<double> x = t.leaf(random_matrix(2, 3, rng));
  t.backward(ad::sum(lin(t, x)));
  EXPECT_TRUE(t.has_grad(x.id()));
  EXPECT_EQ(lin.weight().grad.norm(), 0.0);
}
