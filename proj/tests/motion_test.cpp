#include "gradcheck.hpp"

#include "saas/motion/motion_stylizer.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace saas;
using saas::testing::MatD;

namespace {

MatD randn(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double sd = 1.0) {
  std::mt19937_64 g(seed);
  std::normal_distribution<double> n(0.0, sd);
  MatD m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(g);
  return m;
}

/// Plain dynamic-programming DTW over squared Euclidean frame costs.
double hard_dtw(const MatD& x, const MatD& y) {
  const Eigen::Index n = x.rows(), m = y.rows();
  const double inf = std::numeric_limits<double>::infinity();
  MatD r = MatD::Constant(n + 1, m + 1, inf);
  r(0, 0) = 0;
  for (Eigen::Index i = 1; i <= n; ++i) {
    for (Eigen::Index j = 1; j <= m; ++j) {
      r(i, j) = (x.row(i - 1) - y.row(j - 1)).squaredNorm() + std::min({r(i - 1, j - 1), r(i - 1, j), r(i, j - 1)});
    }
  }
  return r(n, m);
}

StylizerConfig toy_core() {
  StylizerConfig c;
  c.d_z = 4;
  c.d_s = 4;
  c.rank = 2;
  c.hyper_hidden = 5;
  return c;
}

MotionConfig toy_motion() {
  MotionConfig c;
  c.core = toy_core();
  c.audio_dim = 5;
  c.conv_kernel = 3;
  c.disc_hidden = 4;
  c.disc_kernel = 3;
  c.styles = 3;
  return c;
}

StyleConfig toy_style(bool codebook) {
  StyleConfig c;
  c.d_s = 4;
  c.window = 4;
  c.clip_len = 8;
  c.codebook_size = 6;
  c.layers = 1;
  c.heads = 1;
  c.styles = 3;
  c.use_codebook = codebook;
  return c;
}

MotionSample<double> toy_sample(std::uint64_t seed, int label) {
  MotionSample<double> s;
  s.audio = randn(8, 5, seed);
  s.reference = randn(1, 64, seed + 1);
  s.target = randn(8, 64, seed + 2);
  s.style = randn(1, 4, seed + 3);
  s.positive = randn(1, 4, seed + 4);
  s.negative = randn(1, 4, seed + 5);
  s.label = label;
  return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// soft-DTW

TEST(SoftDtw, ApproachesHardDtwForSmallGamma) {
  for (std::uint64_t k = 0; k < 20; ++k) {
    const MatD x = randn(5, 3, 100 + k), y = randn(5, 3, 200 + k);
    EXPECT_NEAR(soft_dtw_value(x, y, 1e-3), hard_dtw(x, y), 1e-3) << "pair " << k;
  }
}

TEST(SoftDtw, SelfDistanceVanishes) {
  const MatD x = randn(5, 3, 1);
  EXPECT_NEAR(soft_dtw_value(x, x, 1e-3), 0.0, 1e-6);
  EXPECT_NEAR(soft_dtw_value(x, x, 1e-4), 0.0, 1e-6);
}

TEST(SoftDtw, DecreasesWithGammaAndStaysBelowHardDtw) {
  const MatD x = randn(6, 4, 2), y = randn(7, 4, 3);
  const double hard = hard_dtw(x, y);
  double prev = hard;
  for (double g : {0.01, 0.1, 1.0, 10.0}) {
    const double v = soft_dtw_value(x, y, g);
    EXPECT_LE(v, prev + 1e-12);
    prev = v;
  }
}

TEST(SoftDtw, GradientMatchesFiniteDifferences) {
  for (double gamma : {0.1, 1.0}) {
    const double err = saas::testing::gradcheck_inputs(
        [&](ad::Tape<double>&, std::vector<ad::Var<double>>& in) { return soft_dtw(in[0], in[1], gamma); },
        {randn(5, 3, 4), randn(6, 3, 5)}, 1e-6);
    EXPECT_LE(err, 1e-4) << "gamma " << gamma;
  }
}

TEST(SoftDtw, TapeValueMatchesTable) {
  const MatD x = randn(4, 2, 6), y = randn(5, 2, 7);
  ad::Tape<double> t;
  EXPECT_EQ(soft_dtw(t.constant(x), t.constant(y), 0.3).item(), soft_dtw_value(x, y, 0.3));
}

TEST(SoftDtw, RejectsBadInput) {
  EXPECT_THROW(soft_dtw_value(MatD(0, 3), randn(2, 3, 1), 0.1), std::invalid_argument);
  EXPECT_THROW(soft_dtw_value(randn(2, 2, 1), randn(2, 3, 1), 0.1), std::invalid_argument);
  EXPECT_THROW(soft_dtw_value(randn(2, 3, 1), randn(2, 3, 1), 0.0), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// stylizer core

TEST(StylizerCore, InitializedAsCanonicalBranch) {
  ad::ParamSet<double> ps;
  auto rng = derive_rng(1, 0);
  StylizerCore<double> core(ps, "m", toy_core(), rng);
  ad::Tape<double> t;
  const auto z = t.constant(randn(6, 4, 2));
  const auto s = t.constant(randn(1, 4, 3));
  const auto offsets = core.hyper_offsets(t, s);
  for (const auto& d : offsets.delta) EXPECT_EQ(d.value().cwiseAbs().maxCoeff(), 0.0);
  EXPECT_TRUE((core.stylize(t, z, s).value().array() == core.canonical(t, z).value().array()).all());
}

TEST(StylizerCore, CanonicalBranchIgnoresStyle) {
  ad::ParamSet<double> ps;
  auto rng = derive_rng(2, 0);
  StylizerCore<double> core(ps, "m", toy_core(), rng);
  core.style_head().weight().value = randn(4, 4, 4);
  ps.get("m.hyper.scale").value(0, 0) = 0.5;
  ad::Tape<double> t;
  const auto z = t.constant(randn(6, 4, 5));
  const auto s1 = t.constant(randn(1, 4, 6)), s2 = t.constant(randn(1, 4, 7));
  const MatD c = core.canonical(t, z).value();
  const MatD a = core.stylize(t, z, s1).value() - c;
  const MatD b = core.stylize(t, z, s2).value() - c;
  EXPECT_LT((a - core.style_branch(t, z, s1, core.hyper_offsets(t, s1)).value()).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_GT((a - b).norm(), 1e-6);
}

TEST(StylizerCore, OffsetsDependOnlyOnStyle) {
  ad::ParamSet<double> ps;
  auto rng = derive_rng(3, 0);
  const StylizerConfig cfg = toy_core();
  StylizerCore<double> core(ps, "m", cfg, rng);
  ps.get("m.hyper.scale").value(0, 0) = 1.0;
  ad::Tape<double> t;
  const MatD s = randn(1, 4, 8);
  const auto o1 = core.hyper_offsets(t, t.constant(s));
  const auto o2 = core.hyper_offsets(t, t.constant(s));
  const auto o3 = core.hyper_offsets(t, t.constant(randn(1, 4, 9)));
  ASSERT_EQ(o1.delta.size(), static_cast<std::size_t>(cfg.modulated_layers));
  for (std::size_t l = 0; l < o1.delta.size(); ++l) {
    EXPECT_EQ(o1.delta[l].rows(), 2 * cfg.d_z);
    EXPECT_EQ(o1.delta[l].cols(), 4 * cfg.d_z);
    EXPECT_TRUE((o1.delta[l].value().array() == o2.delta[l].value().array()).all());
    EXPECT_GT((o1.delta[l].value() - o3.delta[l].value()).norm(), 1e-9);
    EXPECT_LT((o1.delta[l].value() - o1.u[l].value() * o1.v[l].value()).cwiseAbs().maxCoeff(), 1e-12);
  }
  // Different layers receive different offsets.
  EXPECT_GT((o1.delta[0].value() - o1.delta[1].value()).norm(), 1e-9);
}

TEST(StylizerCore, WithoutHypernetworkHasNoOffsets) {
  ad::ParamSet<double> ps;
  auto rng = derive_rng(4, 0);
  StylizerConfig cfg = toy_core();
  cfg.use_hyper = false;
  StylizerCore<double> core(ps, "m", cfg, rng);
  EXPECT_THROW(ps.get("m.hyper.scale"), std::out_of_range);
  ad::Tape<double> t;
  EXPECT_TRUE(core.hyper_offsets(t, t.constant(randn(1, 4, 1))).delta.empty());
}

TEST(StylizerCore, CompositionGradientMatchesFiniteDifferences) {
  ad::ParamSet<double> ps;
  auto rng = derive_rng(5, 0);
  StylizerCore<double> core(ps, "m", toy_core(), rng);
  core.style_head().weight().value = randn(4, 4, 10, 0.5);
  ps.get("m.hyper.scale").value(0, 0) = 0.7;
  ASSERT_LE(ps.count(), 10000u);
  const MatD z = randn(5, 4, 11), s = randn(1, 4, 12), w = randn(5, 64, 13);
  const double err = saas::testing::gradcheck_params(ps, [&](ad::Tape<double>& t) {
    const auto zs = core.stylize(t, t.constant(z), t.constant(s));
    return ad::sum(ad::mul(core.decode(t, zs, t.constant(s)), t.constant(w)));
  });
  EXPECT_LE(err, 1e-4);
  const double err_inputs = saas::testing::gradcheck_inputs(
      [&](ad::Tape<double>& t, std::vector<ad::Var<double>>& in) {
        return ad::sum(ad::mul(core.stylize(t, in[0], in[1]), t.constant(randn(5, 4, 14))));
      },
      {z, s});
  EXPECT_LE(err_inputs, 1e-4);
}

TEST(StylizerCore, RejectsBadWidths) {
  ad::ParamSet<double> ps;
  auto rng = derive_rng(6, 0);
  StylizerCore<double> core(ps, "m", toy_core(), rng);
  ad::Tape<double> t;
  EXPECT_THROW(core.stylize(t, t.constant(randn(3, 5, 1)), t.constant(randn(1, 4, 1))), std::invalid_argument);
  EXPECT_THROW(core.stylize(t, t.constant(randn(3, 4, 1)), t.constant(randn(2, 4, 1))), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// discriminator and objective

TEST(StyleDiscriminator, ZeroWeightsGiveBias) {
  StyleDiscriminator<double> disc(4, 3, 3, 1);
  for (auto& p : disc.params().all()) p->value.setZero();
  disc.params().get("disc.out.b").value(0, 0) = 0.7;
  ad::Tape<double> t;
  EXPECT_DOUBLE_EQ(disc.score(t, t.constant(randn(6, 64, 1)), 2).item(), 0.7);
  EXPECT_THROW(disc.score(t, t.constant(randn(6, 64, 1)), 3), std::invalid_argument);
}

TEST(MotionLoss, ZeroWeightsLeaveReconstruction) {
  MotionStylizer<double> model(toy_motion(), 1);
  StyleDiscriminator<double> disc(4, 3, 3, 2);
  StyleExtractor<double> ex(toy_style(true), 3);
  const std::vector<MotionSample<double>> batch{toy_sample(10, 0), toy_sample(20, 2)};
  MotionLossWeights w;
  w.alpha_trip = w.alpha_style1 = w.alpha_style2 = 0;
  ad::Tape<double> t;
  const MotionLoss<double> l = motion_total_loss(t, model, disc, ex, batch, w);
  double rec = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) rec += soft_dtw_value(l.generated[i], batch[i].target, w.gamma_dtw) / 8.0;
  EXPECT_NEAR(l.total.item(), rec / 2, 1e-9);
  EXPECT_EQ(l.components.at("trip"), 0.0);
}

TEST(MotionLoss, TotalIsWeightedSumOfTerms) {
  MotionStylizer<double> model(toy_motion(), 1);
  StyleDiscriminator<double> disc(4, 3, 3, 2);
  StyleExtractor<double> ex(toy_style(true), 3);
  const std::vector<MotionSample<double>> batch{toy_sample(10, 0), toy_sample(20, 2)};
  const MotionLossWeights w{0.3, 0.2, 0.1, 0.5, 0.2};
  ad::Tape<double> t;
  const MotionLoss<double> l = motion_total_loss(t, model, disc, ex, batch, w);
  // Independent restatement of every term.
  double rec = 0, trip = 0, ce = 0, adv = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const MatD gen = model.generate(batch[i].audio, batch[i].reference, batch[i].style);
    EXPECT_LT((gen - l.generated[i]).cwiseAbs().maxCoeff(), 1e-12);
    rec += soft_dtw_value(gen, batch[i].target, w.gamma_dtw) / 8.0;
    const Eigen::RowVectorXd code = ex.extract_style(gen);
    trip += std::max(0.0, (code - batch[i].positive).norm() - (code - batch[i].negative).norm() + w.margin);
    ad::Tape<double> u;
    const MatD logits = ex.classify(u, u.constant(code)).value();
    const double m = logits.maxCoeff();
    ce += m + std::log((logits.array() - m).exp().sum()) - logits(0, batch[i].label);
    adv += -disc.score(u, u.constant(gen), batch[i].label).item();
  }
  const double oracle = rec / 2 + w.alpha_trip * trip / 2 + w.alpha_style1 * ce / 2 + w.alpha_style2 * adv / 2;
  EXPECT_NEAR(l.total.item(), oracle, 1e-6);
  EXPECT_NEAR(l.components.at("rec") + w.alpha_trip * l.components.at("trip") + w.alpha_style1 * l.components.at("style1") +
                  w.alpha_style2 * l.components.at("style2"),
              l.total.item(), 1e-9);
}

TEST(MotionLoss, GradientMatchesFiniteDifferences) {
  MotionConfig cfg = toy_motion();
  cfg.core.d_z = 3;
  MotionStylizer<double> model(cfg, 4);
  model.params().get("motion.hyper.scale").value(0, 0) = 0.5;
  model.core().style_head().weight().value = randn(3, 3, 30, 0.5);
  StyleDiscriminator<double> disc(4, 3, 3, 5);
  // The regressive extractor keeps the objective smooth in the generator parameters.
  StyleExtractor<double> ex(toy_style(false), 6);
  ex.params().set_frozen(true);
  disc.params().set_frozen(true);
  const std::vector<MotionSample<double>> batch{toy_sample(40, 1)};
  const MotionLossWeights w{0.3, 0.2, 0.1, 5.0, 0.5};
  const double err = saas::testing::gradcheck_params(
      model.params(), [&](ad::Tape<double>& t) { return motion_total_loss(t, model, disc, ex, batch, w).total; }, 1e-5, 20);
  EXPECT_LE(err, 1e-4);
}

TEST(MotionStylizer, ShapesAndValidation) {
  MotionStylizer<float> model(toy_motion(), 7);
  const auto out = model.generate(ad::Mat<float>::Random(9, 5), ad::Mat<float>::Random(1, 64), ad::Mat<float>::Random(1, 4));
  EXPECT_EQ(out.rows(), 9);
  EXPECT_EQ(out.cols(), 64);
  EXPECT_THROW(model.generate(ad::Mat<float>::Random(9, 6), ad::Mat<float>::Random(1, 64), ad::Mat<float>::Random(1, 4)),
               std::invalid_argument);
  ad::Tape<float> t;
  EXPECT_THROW(model.generate(t, t.constant(ad::Mat<float>::Random(9, 5)), t.constant(ad::Mat<float>::Random(2, 64)),
                              t.constant(ad::Mat<float>::Random(1, 4))),
               std::invalid_argument);
}

// ---------------------------------------------------------------------------
// training

namespace {

ClipSet toy_clips(std::uint64_t seed) {
  ClipSet out;
  std::mt19937_64 g(seed);
  std::normal_distribution<float> n(0.f, 1.f);
  int id = 0;
  for (int speaker = 0; speaker < 2; ++speaker) {
    for (int style = 0; style < 3; ++style) {
      for (int k = 0; k < 2; ++k) {
        Clip c;
        c.expression = Matrix(8, 64);
        c.audio = Matrix(8, 5);
        c.pose = Matrix::Zero(8, 6);
        for (Eigen::Index i = 0; i < c.expression.size(); ++i) c.expression.data()[i] = n(g);
        for (Eigen::Index i = 0; i < c.audio.size(); ++i) c.audio.data()[i] = n(g);
        c.style = style;
        c.speaker = speaker;
        c.id = id++;
        out.push_back(std::move(c));
      }
    }
  }
  return out;
}

}  // namespace

TEST(MotionTraining, DeterministicAndFreezesExtractor) {
  const ClipSet clips = toy_clips(1);
  const auto run = [&] {
    MotionStylizer<float> model(toy_motion(), 8);
    StyleDiscriminator<float> disc(4, 3, 3, 9);
    StyleExtractor<float> ex(toy_style(true), 10);
    const ad::Mat<float> before = ex.codebook().value;
    MotionTrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch = 4;
    const TrainLog log = train_motion_stylizer(model, disc, ex, clips, cfg);
    EXPECT_TRUE((ex.codebook().value.array() == before.array()).all());
    return log.back().at("total").get<double>();
  };
  EXPECT_EQ(run(), run());
}

TEST(MotionTraining, ZeroEpochsIsEmpty) {
  MotionStylizer<float> model(toy_motion(), 8);
  StyleDiscriminator<float> disc(4, 3, 3, 9);
  StyleExtractor<float> ex(toy_style(true), 10);
  MotionTrainConfig cfg;
  cfg.epochs = 0;
  EXPECT_TRUE(train_motion_stylizer(model, disc, ex, toy_clips(2), cfg).empty());
}
