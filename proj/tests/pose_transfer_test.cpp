#include "gradcheck.hpp"

#include "saas/pose/pose_generator.hpp"
#include "saas/transfer/video_transfer.hpp"

#include <Eigen/SVD>
#include <gtest/gtest.h>

#include <random>
#include <set>

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

PoseConfig toy_pose() {
  PoseConfig c;
  c.codebook_size = 7;
  c.d_p = 8;
  c.window = 4;
  c.layers = 1;
  c.heads = 2;
  c.audio_dim = 5;
  c.d_s = 4;
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// pose generator

TEST(PoseGenerator, Shapes) {
  PoseGenerator<double> model(toy_pose(), 1);
  ad::Tape<double> t;
  const auto f = model.encode(t, t.constant(randn(16, 6, 2)));
  EXPECT_EQ(f.rows(), 4);
  EXPECT_EQ(f.cols(), 8);
  EXPECT_EQ(model.decode(t, f).rows(), 16);
  EXPECT_EQ(model.decode(t, f).cols(), 6);
  const auto idx = model.encode_indices(randn(16, 6, 3));
  EXPECT_EQ(idx.size(), 4u);
  for (int k : idx) {
    EXPECT_GE(k, 0);
    EXPECT_LT(k, 7);
  }
  EXPECT_EQ(model.fuse(t, t.constant(randn(16, 5, 4)), t.constant(randn(1, 4, 5))).rows(), 4);
  EXPECT_THROW(model.encode(t, t.constant(randn(15, 6, 2))), std::invalid_argument);
  EXPECT_THROW(model.fuse(t, t.constant(randn(15, 5, 4)), t.constant(randn(1, 4, 5))), std::invalid_argument);
}

TEST(PoseGenerator, ContextDependsOnStyle) {
  PoseGenerator<double> model(toy_pose(), 1);
  ad::Tape<double> t;
  const MatD a = randn(16, 5, 4);
  const MatD c1 = model.fuse(t, t.constant(a), t.constant(randn(1, 4, 5))).value();
  const MatD c2 = model.fuse(t, t.constant(a), t.constant(randn(1, 4, 6))).value();
  EXPECT_GT((c1 - c2).norm(), 1e-6);
}

TEST(PoseGenerator, FutureIndicesDoNotAffectEarlierLogits) {
  PoseGenerator<double> model(toy_pose(), 2);
  ad::Tape<double> t;
  const auto ctx = model.fuse(t, t.constant(randn(16, 5, 1)), t.constant(randn(1, 4, 2)));
  const MatD a = model.predict(t, ctx, {1, 2, 3}).value();
  const MatD b = model.predict(t, ctx, {1, 2, 6}).value();
  EXPECT_LT((a.topRows(3) - b.topRows(3)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_GT((a.row(3) - b.row(3)).norm(), 1e-9);
}

TEST(PoseGenerator, UniformLogitsGiveLogN) {
  PoseGenerator<double> model(toy_pose(), 3);
  model.logits_layer().weight().value.setZero();
  model.logits_layer().bias().value.setZero();
  ad::Tape<double> t;
  const auto ctx = model.fuse(t, t.constant(randn(16, 5, 1)), t.constant(randn(1, 4, 2)));
  EXPECT_NEAR(ad::cross_entropy(model.teacher_forced(t, ctx, {0, 4, 2, 6}), {0, 4, 2, 6}).item(), std::log(7.0), 1e-12);
}

TEST(PoseGenerator, GreedyMatchesArgmaxAndTinyTemperature) {
  PoseGenerator<double> model(toy_pose(), 4);
  const MatD audio = randn(24, 5, 1), s = randn(1, 4, 2);
  std::vector<int> oracle;
  ad::Tape<double> t;
  const MatD ctx = model.fuse(t, t.constant(audio), t.constant(s)).value();
  for (Eigen::Index step = 0; step < ctx.rows(); ++step) {
    ad::Tape<double> u;
    const MatD logits = model.predict(u, u.constant(ctx), oracle).value();
    Eigen::Index best;
    logits.row(step).maxCoeff(&best);
    oracle.push_back(static_cast<int>(best));
  }
  EXPECT_EQ(model.sample_indices(audio, s, 1.0, 0, true), oracle);
  EXPECT_EQ(model.sample_indices(audio, s, 1e-6, 0), oracle);
}

TEST(PoseGenerator, SeededSampling) {
  PoseGenerator<double> model(toy_pose(), 5);
  const MatD audio = randn(32, 5, 1), s = randn(1, 4, 2);
  EXPECT_EQ(model.sample_poses(audio, s, 1.0, 42), model.sample_poses(audio, s, 1.0, 42));
  std::set<std::vector<int>> seen;
  for (std::uint64_t k = 0; k < 10; ++k) seen.insert(model.sample_indices(audio, s, 1.0, k));
  EXPECT_GE(seen.size(), 3u);
  EXPECT_THROW(model.sample_indices(audio, s, 0.0, 1), std::invalid_argument);
  EXPECT_THROW(model.sample_indices(audio, s, -1.0, 1), std::invalid_argument);
}

TEST(PoseGenerator, ZeroFusionWeightsGiveConstantContext) {
  PoseGenerator<double> model(toy_pose(), 6);
  for (auto& p : model.predictor_params().all()) {
    if (p->name.rfind("pose.fuse.", 0) == 0) p->value.setZero();
  }
  ad::Tape<double> t;
  const MatD a = model.fuse(t, t.constant(randn(16, 5, 1)), t.constant(randn(1, 4, 2))).value();
  const MatD b = model.fuse(t, t.constant(randn(16, 5, 3)), t.constant(randn(1, 4, 4))).value();
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
}

namespace {

ClipSet pose_clips(std::uint64_t seed) {
  ClipSet out;
  std::mt19937_64 g(seed);
  std::normal_distribution<float> n(0.f, 1.f);
  for (int k = 0; k < 6; ++k) {
    Clip c;
    c.expression = Matrix::Zero(16, 64);
    c.audio = Matrix(16, 5);
    for (Eigen::Index i = 0; i < c.audio.size(); ++i) c.audio.data()[i] = n(g);
    c.pose = Matrix(16, 6);
    for (Eigen::Index r = 0; r < 16; ++r) c.pose.row(r) = c.audio.row(r).head(5).sum() * Matrix::Ones(1, 6) * 0.3f;
    c.style = k % 2;
    c.id = k;
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace

TEST(PoseTraining, ZeroEpochsAndDeterminism) {
  const ClipSet clips = pose_clips(1);
  std::vector<RowVectorT<float>> styles(clips.size(), RowVectorT<float>::Zero(4));
  PoseTrainConfig cfg;
  cfg.codebook_epochs = 0;
  cfg.predictor_epochs = 0;
  PoseGenerator<float> model(toy_pose(), 7), ref(toy_pose(), 7);
  EXPECT_TRUE(train_pose_generator(model, clips, styles, cfg).empty());
  EXPECT_TRUE((model.codebook().value.array() == ref.codebook().value.array()).all());
  cfg.codebook_epochs = 2;
  cfg.predictor_epochs = 2;
  cfg.batch = 3;
  const auto run = [&] {
    PoseGenerator<float> m(toy_pose(), 7);
    return train_pose_generator(m, clips, styles, cfg).back().at("loss").get<double>();
  };
  EXPECT_EQ(run(), run());
}

TEST(PoseTraining, CodebookFrozenDuringPredictorStage) {
  const ClipSet clips = pose_clips(2);
  std::vector<RowVectorT<float>> styles(clips.size(), RowVectorT<float>::Zero(4));
  PoseTrainConfig cfg;
  cfg.codebook_epochs = 0;
  cfg.predictor_epochs = 2;
  PoseGenerator<float> model(toy_pose(), 8);
  const ad::Mat<float> before = model.codebook().value;
  train_pose_generator(model, clips, styles, cfg);
  EXPECT_TRUE((model.codebook().value.array() == before.array()).all());
}

// ---------------------------------------------------------------------------
// video transfer

namespace {

BlendshapeBasis toy_basis() { return synthetic_basis(3, 60, 5, 16); }

VideoTransferConfig toy_video() {
  VideoTransferConfig c;
  c.core.d_z = 4;
  c.core.d_s = 4;
  c.core.rank = 2;
  c.core.hyper_hidden = 5;
  c.conv_kernel = 3;
  c.disc_hidden = 4;
  c.disc_kernel = 3;
  c.styles = 3;
  return c;
}

StyleConfig toy_style() {
  StyleConfig c;
  c.d_s = 4;
  c.window = 4;
  c.clip_len = 8;
  c.codebook_size = 6;
  c.layers = 1;
  c.heads = 1;
  c.styles = 3;
  return c;
}

}  // namespace

TEST(MouthLoss, IdentityIsZero) {
  const MatD beta = randn(8, 64, 1);
  ad::Tape<double> t;
  EXPECT_EQ(mouth_loss(t.constant(beta), t.constant(beta), lip_map_of<double>(toy_basis())).item(), 0.0);
}

TEST(MouthLoss, NullSpaceOffsetIsZero) {
  const BlendshapeBasis basis = toy_basis();
  const MatD lips = lip_map_of<double>(basis);
  // Orthogonal complement of the 3 columns of the lip map.
  Eigen::JacobiSVD<MatD> svd(lips.transpose(), Eigen::ComputeFullV);
  const MatD null = svd.matrixV().rightCols(64 - 3);
  const MatD beta = randn(8, 64, 2);
  const MatD delta = randn(8, 61, 3) * null.transpose();
  ad::Tape<double> t;
  EXPECT_LT(mouth_loss(t.constant(beta), t.constant(MatD(beta + delta)), lips).item(), 1e-20);
  EXPECT_GT(mouth_loss(t.constant(beta), t.constant(MatD(beta + randn(8, 64, 4))), lips).item(), 1e-3);
}

TEST(MouthLoss, MatchesVertexLevelComputation) {
  const BlendshapeBasis basis = toy_basis();
  const MatD beta = randn(8, 64, 5), beta_hat = randn(8, 64, 6);
  double oracle = 0;
  const Eigen::MatrixXd v = beta * basis.basis, vh = beta_hat * basis.basis;
  for (Eigen::Index t = 0; t < 8; ++t) {
    Eigen::RowVector3d d = Eigen::RowVector3d::Zero();
    for (int k : basis.upper_lip) d += (v.row(t).segment<3>(3 * k) - vh.row(t).segment<3>(3 * k)) / 5.0;
    for (int k : basis.lower_lip) d -= (v.row(t).segment<3>(3 * k) - vh.row(t).segment<3>(3 * k)) / 5.0;
    oracle += d.squaredNorm();
  }
  ad::Tape<double> t;
  EXPECT_NEAR(mouth_loss(t.constant(beta), t.constant(beta_hat), lip_map_of<double>(basis)).item(), oracle / 8, 1e-6);
}

TEST(VideoTransfer, ShapesAndTemporalEncoder) {
  VideoTransfer<double> model(toy_video(), 1);
  const MatD beta = randn(8, 64, 1);
  ad::Tape<double> t;
  const MatD z = model.encode_video(t, t.constant(beta)).value();
  EXPECT_EQ(z.rows(), 8);
  EXPECT_EQ(z.cols(), 4);
  MatD swapped = beta;
  swapped.row(3).swap(swapped.row(4));
  const MatD zs = model.encode_video(t, t.constant(swapped)).value();
  MatD z_swapped_rows = z;
  z_swapped_rows.row(3).swap(z_swapped_rows.row(4));
  EXPECT_GT((zs - z_swapped_rows).norm(), 1e-6);
  EXPECT_EQ(model.transfer(beta, randn(1, 4, 2)).cols(), 64);
  EXPECT_THROW(model.transfer(randn(8, 63, 1), randn(1, 4, 2)), std::invalid_argument);
}

TEST(VideoTransfer, InitialOutputIgnoresStyleBranch) {
  VideoTransfer<double> model(toy_video(), 2);
  const MatD beta = randn(8, 64, 1), s = randn(1, 4, 2);
  ad::Tape<double> t;
  const auto z = model.encode_video(t, t.constant(beta));
  const MatD canon = model.core().decode(t, model.core().canonical(t, z), t.constant(s)).value();
  EXPECT_TRUE((model.transfer(beta, s).array() == canon.array()).all());
}

TEST(VideoTransfer, CycleLossEqualsComposedTransfers) {
  VideoTransfer<double> model(toy_video(), 3);
  model.core().style_head().weight().value = randn(4, 4, 9);
  model.params().get("video.hyper.scale").value(0, 0) = 0.5;
  const MatD beta = randn(8, 64, 1), s_t = randn(1, 4, 2), s_r = randn(1, 4, 3);
  ad::Tape<double> t;
  const double cyc = model.cycle_loss(t, t.constant(beta), t.constant(s_t), t.constant(s_r)).item();
  const MatD twice = model.transfer(model.transfer(beta, s_t), s_r);
  EXPECT_NEAR(cyc, (beta - twice).norm(), 1e-6);
}

TEST(VideoLoss, ZeroWeightsLeaveMouthTerm) {
  VideoTransfer<double> model(toy_video(), 4);
  StyleDiscriminator<double> disc(4, 3, 3, 5);
  StyleExtractor<double> ex(toy_style(), 6);
  const BlendshapeBasis basis = toy_basis();
  VideoSample<double> item{randn(8, 64, 1), randn(1, 4, 2), randn(1, 4, 3), randn(1, 4, 4), randn(1, 4, 5), 1};
  VideoLossWeights w{0, 0, 0, 0, 0.2};
  ad::Tape<double> t;
  const MotionLoss<double> l = video_total_loss(t, model, disc, ex, {item}, lip_map_of<double>(basis), w);
  ad::Tape<double> u;
  const double mouth = mouth_loss(u.constant(item.source), u.constant(model.transfer(item.source, item.target_style)),
                                  lip_map_of<double>(basis))
                           .item();
  EXPECT_NEAR(l.total.item(), mouth, 1e-12);
}

TEST(VideoLoss, TotalIsWeightedSumOfTerms) {
  VideoTransfer<double> model(toy_video(), 4);
  model.core().style_head().weight().value = randn(4, 4, 9);
  StyleDiscriminator<double> disc(4, 3, 3, 5);
  StyleExtractor<double> ex(toy_style(), 6);
  const BlendshapeBasis basis = toy_basis();
  const MatD lips = lip_map_of<double>(basis);
  VideoSample<double> item{randn(8, 64, 1), randn(1, 4, 2), randn(1, 4, 3), randn(1, 4, 4), randn(1, 4, 5), 1};
  const VideoLossWeights w{0.7, 0.3, 0.2, 0.1, 0.4};
  ad::Tape<double> t;
  const MotionLoss<double> l = video_total_loss(t, model, disc, ex, {item}, lips, w);
  const MatD once = model.transfer(item.source, item.target_style);
  const MatD twice = model.transfer(once, item.source_style);
  ad::Tape<double> u;
  const double mouth = mouth_loss(u.constant(item.source), u.constant(once), lips).item();
  const double cyc = (item.source - twice).norm();
  const Eigen::RowVectorXd code = ex.extract_style(once);
  const double trip = std::max(0.0, (code - item.positive).norm() - (code - item.negative).norm() + w.margin);
  const MatD logits = ex.classify(u, u.constant(code)).value();
  const double m = logits.maxCoeff();
  const double ce = m + std::log((logits.array() - m).exp().sum()) - logits(0, 1);
  const double adv = -disc.score(u, u.constant(once), 1).item();
  EXPECT_NEAR(l.total.item(), mouth + w.alpha_cyc * cyc + w.alpha_trip * trip + w.alpha_style1 * ce + w.alpha_style2 * adv, 1e-6);
}

TEST(VideoTraining, ZeroEpochsAndDeterminism) {
  ClipSet clips;
  std::mt19937_64 g(1);
  std::normal_distribution<float> n(0.f, 1.f);
  for (int k = 0; k < 6; ++k) {
    Clip c;
    c.expression = Matrix(8, 64);
    for (Eigen::Index i = 0; i < c.expression.size(); ++i) c.expression.data()[i] = n(g);
    c.audio = Matrix::Zero(8, 5);
    c.pose = Matrix::Zero(8, 6);
    c.style = k % 3;
    c.speaker = k / 3;
    c.id = k;
    clips.push_back(std::move(c));
  }
  const BlendshapeBasis basis = toy_basis();
  const auto run = [&](int epochs) {
    VideoTransfer<float> model(toy_video(), 5);
    StyleDiscriminator<float> disc(4, 3, 3, 6);
    StyleExtractor<float> ex(toy_style(), 7);
    VideoTrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch = 3;
    const TrainLog log = train_video_transfer(model, disc, ex, clips, basis, cfg);
    return log.empty() ? -1.0 : log.back().at("total").get<double>();
  };
  EXPECT_EQ(run(0), -1.0);
  EXPECT_EQ(run(2), run(2));
}
