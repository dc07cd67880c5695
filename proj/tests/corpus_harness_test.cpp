#include "saas/harness/pipeline.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace saas;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("saas_test_" + name);
  fs::remove_all(p);
  return p;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

CorpusConfig small_corpus() {
  CorpusConfig c;
  c.speakers = 4;
  c.val_speakers = 1;
  c.test_speakers = 1;
  c.clips_per_speaker_style = 2;
  c.frames = 32;
  return c;
}

/// First canonical correlation between the column spaces of a and b.
double first_canonical_correlation(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const auto basis_of = [](Eigen::MatrixXd m) {
    m.rowwise() -= m.colwise().mean();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU);
    const auto& s = svd.singularValues();
    Eigen::Index rank = 0;
    while (rank < s.size() && s(rank) > 1e-9 * s(0)) ++rank;
    return Eigen::MatrixXd(svd.matrixU().leftCols(rank));
  };
  const Eigen::MatrixXd qa = basis_of(a), qb = basis_of(b);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(qa.transpose() * qb);
  return svd.singularValues()(0);
}

}  // namespace

// ---------------------------------------------------------------------------
// synthetic corpus

TEST(SynthCorpus, SameSeedGivesIdenticalBytes) {
  const fs::path a = scratch("corpus_a"), b = scratch("corpus_b");
  generate_corpus(small_corpus(), a);
  generate_corpus(small_corpus(), b);
  std::size_t files = 0;
  for (const auto& entry : fs::recursive_directory_iterator(a)) {
    if (!entry.is_regular_file()) continue;
    const fs::path rel = fs::relative(entry.path(), a);
    EXPECT_EQ(file_bytes(entry.path()), file_bytes(b / rel)) << rel;
    ++files;
  }
  EXPECT_GT(files, 4u);
}

TEST(SynthCorpus, CountsShapesAndSplits) {
  const fs::path dir = scratch("corpus_counts");
  CorpusConfig cfg;  // defaults
  generate_corpus(cfg, dir);
  const ClipSet train = load_split(dir, "train"), val = load_split(dir, "val"), test = load_split(dir, "test");
  EXPECT_EQ(train.size() + val.size() + test.size(), static_cast<std::size_t>(6 * 10 * 4));
  EXPECT_EQ(test.size(), static_cast<std::size_t>(6 * 2 * 4));
  std::set<int> train_speakers, test_speakers;
  for (const auto& c : train) train_speakers.insert(c.speaker);
  for (const auto& c : test) test_speakers.insert(c.speaker);
  for (int s : test_speakers) EXPECT_EQ(train_speakers.count(s), 0u);
  const Clip& c = train.front();
  EXPECT_EQ(c.expression.rows(), 64);
  EXPECT_EQ(c.expression.cols(), 64);
  EXPECT_EQ(c.pose.rows(), 64);
  EXPECT_EQ(c.pose.cols(), 6);
  EXPECT_EQ(c.audio.cols(), 28);
  const ClipSet again = load_split(dir, "train");
  for (std::size_t i = 0; i < train.size(); ++i) {
    EXPECT_TRUE((train[i].expression.array() == again[i].expression.array()).all());
    EXPECT_EQ(train[i].style, again[i].style);
  }
  EXPECT_THROW(load_split(dir, "missing"), ContainerError);
}

TEST(SynthCorpus, TwoNoiselessStylesAreLinearlySeparable) {
  CorpusConfig cfg = small_corpus();
  cfg.styles = 2;
  cfg.noise_std = 0;
  const CorpusModel model(cfg);
  const ClipSet clips = model.all_clips();
  // Least-squares linear classifier on mean frames, fit and scored on all clips.
  Eigen::MatrixXd x(static_cast<Eigen::Index>(clips.size()), kExpressionDim + 1);
  Eigen::VectorXd y(x.rows());
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    x.row(r) << clips[i].expression.cast<double>().colwise().mean(), 1.0;
    y(r) = clips[i].style == 0 ? -1.0 : 1.0;
  }
  const Eigen::VectorXd w = x.completeOrthogonalDecomposition().solve(y);
  const Eigen::VectorXd score = x * w;
  for (Eigen::Index r = 0; r < x.rows(); ++r) EXPECT_GT(score(r) * y(r), 0.0);
}

TEST(SynthCorpus, StyleTransformsAreWellConditionedAndSeparated) {
  const CorpusModel model(CorpusConfig{});
  for (std::size_t m = 0; m < model.styles.size(); ++m) {
    EXPECT_LT(model.styles[m].condition_number(), 100.0);
    for (std::size_t k = 0; k < m; ++k) EXPECT_GE((model.styles[m].flatten() - model.styles[k].flatten()).norm(), 1.0);
  }
}

TEST(SynthCorpus, MouthBlockTracksAudio) {
  CorpusConfig cfg = small_corpus();
  cfg.noise_std = 0;
  const CorpusModel model(cfg);
  for (const auto& c : model.all_clips()) {
    const double rho = first_canonical_correlation(c.audio.cast<double>(), c.expression.leftCols(kMouthDim).cast<double>());
    EXPECT_GT(rho, 0.9) << "clip " << c.id;
  }
}

TEST(SynthCorpus, OracleAccuracyFallsWithNoise) {
  double prev = 1.1;
  for (double noise : {0.0, 0.5, 2.0}) {
    CorpusConfig cfg = small_corpus();
    cfg.noise_std = noise;
    const CorpusModel model(cfg);
    const ClipSet clips = model.all_clips();
    int correct = 0;
    for (const auto& c : clips) correct += model.oracle_classify(c) == c.style ? 1 : 0;
    const double acc = static_cast<double>(correct) / static_cast<double>(clips.size());
    if (noise == 0.0) {
      EXPECT_EQ(acc, 1.0);
    }
    EXPECT_LE(acc, prev);
    prev = acc;
  }
}

TEST(SynthCorpus, RejectsBadConfigs) {
  CorpusConfig c;
  c.styles = 1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = CorpusConfig{};
  c.frames = 60;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = CorpusConfig{};
  c.val_speakers = 5;
  c.test_speakers = 5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// blendshape basis

TEST(Blendshape, OrthogonalDeltasAndMouthOnlyLips) {
  const BlendshapeBasis b = synthetic_basis(1);
  const Eigen::MatrixXd gram = b.basis * b.basis.transpose() / 468.0;
  EXPECT_LT((gram - Eigen::MatrixXd::Identity(64, 64)).cwiseAbs().maxCoeff(), 1e-9);
  const Eigen::MatrixXd lips = b.lip_map();
  EXPECT_EQ(lips.bottomRows(64 - kMouthDim).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_GT(lips.topRows(kMouthDim).norm(), 1e-3);
}

TEST(Blendshape, NormalizedBasisGivesSameVertices) {
  const BlendshapeBasis b = synthetic_basis(2);
  std::mt19937_64 g(3);
  std::normal_distribution<float> n(0.f, 2.f);
  Matrix beta(10, 64);
  for (Eigen::Index i = 0; i < beta.size(); ++i) beta.data()[i] = n(g) + 0.5f;
  const NormStats stats = NormStats::fit({&beta});
  const Matrix x = normalize(beta, stats);
  const Eigen::MatrixXd v1 = b.vertices_of(beta), v2 = b.for_normalized(stats).vertices_of(x);
  EXPECT_LT((v1 - v2).cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Blendshape, ContainerRoundTrip) {
  const BlendshapeBasis b = synthetic_basis(4, 50, 4);
  Container c;
  b.save(c);
  const fs::path dir = scratch("basis");
  save_container(dir, c);
  const BlendshapeBasis r = BlendshapeBasis::load(load_container(dir));
  EXPECT_EQ(r.upper_lip, b.upper_lip);
  EXPECT_LT((r.basis - b.basis).cwiseAbs().maxCoeff(), 1e-5);
}

// ---------------------------------------------------------------------------
// metrics

TEST(Metrics, IdenticalSequencesHaveZeroDistance) {
  const BlendshapeBasis b = synthetic_basis(5, 50, 4);
  const Matrix x = Matrix::Random(6, 64);
  const LandmarkDistance d = landmark_distance(x, x, b);
  EXPECT_EQ(d.mouth, 0.0);
  EXPECT_EQ(d.face, 0.0);
  EXPECT_EQ(lip_difference_error(x, x, b), 0.0);
  EXPECT_THROW(landmark_distance(x, Matrix::Random(5, 64), b), std::invalid_argument);
}

TEST(Metrics, LandmarkDistanceMatchesVertexComputation) {
  const BlendshapeBasis b = synthetic_basis(6, 50, 4);
  const Matrix x = Matrix::Random(3, 64), y = Matrix::Random(3, 64);
  const Eigen::MatrixXd vx = b.vertices_of(x), vy = b.vertices_of(y);
  double face = 0, mouth = 0;
  for (Eigen::Index t = 0; t < 3; ++t) {
    for (Eigen::Index v = 0; v < 50; ++v) {
      const double d = (vx.row(t).segment<3>(3 * v) - vy.row(t).segment<3>(3 * v)).norm();
      face += d;
      if (v < 8) mouth += d;  // lip sets are vertices 0..3 and 4..7
    }
  }
  const LandmarkDistance d = landmark_distance(x, y, b);
  EXPECT_NEAR(d.face, face / (3 * 50), 1e-6);
  EXPECT_NEAR(d.mouth, mouth / (3 * 8), 1e-6);
}

TEST(Metrics, ReportFormats) {
  EvalReport r;
  r.scalars["style_accuracy"] = 0.5;
  r.per_clip.push_back({{"clip", 3}});
  EvalReport outer;
  outer.merge("motion.", r);
  EXPECT_EQ(outer.scalars.at("motion.style_accuracy"), 0.5);
  const std::string lines = outer.jsonl();
  EXPECT_NE(lines.find("\"record\":\"summary\""), std::string::npos);
  EXPECT_NE(lines.find("\"section\":\"motion\""), std::string::npos);
  EXPECT_NE(outer.table().find("motion.style_accuracy"), std::string::npos);
}

// ---------------------------------------------------------------------------
// config

TEST(RunConfig, DefaultsAndOverrides) {
  RunConfig rc;
  EXPECT_EQ(rc.i("d_s"), 256);
  EXPECT_EQ(rc.i("codebook_size"), 500);
  EXPECT_EQ(rc.i("window"), 8);
  EXPECT_EQ(rc.i("clip_len"), 32);
  EXPECT_DOUBLE_EQ(rc.real("lr"), 2e-4);
  rc.merge_text("# comment\nd_s = 64  # trailing\nuse_codebook=false\n");
  EXPECT_EQ(rc.i("d_s"), 64);
  EXPECT_FALSE(rc.flag("use_codebook"));
  rc.apply("lr=1e-3");
  EXPECT_DOUBLE_EQ(rc.real("lr"), 1e-3);
}

TEST(RunConfig, RejectsUnknownAndIllTyped) {
  RunConfig rc;
  EXPECT_THROW(rc.apply("nope=1"), ConfigError);
  EXPECT_THROW(rc.apply("d_s=1.5"), ConfigError);
  EXPECT_THROW(rc.apply("use_hyper=yes"), ConfigError);
  EXPECT_THROW(rc.apply("lr"), ConfigError);
  EXPECT_THROW(rc.merge_text("d_s = 3\nbad line\n"), ConfigError);
}

TEST(RunConfig, TextRoundTripAndHash) {
  RunConfig a;
  a.apply("seed=7");
  RunConfig b;
  b.merge_text(a.text());
  EXPECT_EQ(a.text(), b.text());
  EXPECT_EQ(a.hash(), b.hash());
  b.apply("seed=8");
  EXPECT_NE(a.hash(), b.hash());
}

TEST(Pipeline, ModuleConfigsFollowRunConfig) {
  RunConfig rc;
  rc.merge_text("d_s = 32\nd_z = 16\nalpha_trip = 0\nmotion_alpha_trip = 0.5\ncodebook_size = 250\n");
  const StyleConfig sc = style_config(rc, 6);
  EXPECT_EQ(sc.d_s, 32);
  EXPECT_EQ(sc.codebook_size, 250);
  EXPECT_EQ(style_train_config(rc).weights.alpha_trip, 0.0);
  const MotionTrainConfig mc = motion_train_config(rc);
  EXPECT_EQ(mc.weights.alpha_trip, 0.5);
  EXPECT_EQ(motion_config(rc, 6, 28).core.d_z, 16);
  EXPECT_EQ(table3_arms().size(), 8u);
  EXPECT_THROW(axis_arms("not_a_key", {"1"}), ConfigError);
  EXPECT_DOUBLE_EQ(median({3.0, 1.0, 2.0}), 2.0);
}

TEST(Pipeline, ZeroEpochStyleCheckpointIsTheInitialization) {
  const fs::path data = scratch("stage_data"), run = scratch("stage_run");
  generate_corpus(small_corpus(), data);
  const Dataset ds = load_dataset(data);
  RunConfig rc;
  rc.merge_text("d_s = 16\ncodebook_size = 32\nstyle_epochs = 0\n");
  stage_train_style<float>(rc, ds, run);
  const StyleExtractor<float> init = make_style<float>(rc, ds);
  const StyleExtractor<float> saved = load_style<float>(rc, ds, run);
  ASSERT_EQ(init.params().count(), saved.params().count());
  const auto& a = init.params().all();
  const auto& b = saved.params().all();
  for (std::size_t k = 0; k < a.size(); ++k) {
    EXPECT_EQ(a[k]->name, b[k]->name);
    EXPECT_TRUE((a[k]->value.array() == b[k]->value.array()).all()) << a[k]->name;
  }
  EXPECT_TRUE(fs::exists(run / "style_log.jsonl"));
}
