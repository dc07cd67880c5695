#pragma once

// Run orchestration: dataset loading and normalization, module construction from a
// RunConfig, checkpoints, the per-stage training entry points, evaluation and ablation.

#include "saas/core/normalize.hpp"
#include "saas/corpus/synth_corpus.hpp"
#include "saas/harness/config.hpp"
#include "saas/harness/metrics.hpp"
#include "saas/motion/motion_stylizer.hpp"
#include "saas/pose/pose_generator.hpp"
#include "saas/transfer/video_transfer.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

namespace saas {

namespace fs = std::filesystem;

/// Splits in normalized coordinates (statistics from the training split only).
struct Dataset {
  CorpusConfig corpus;
  ClipSet train, val, test;
  NormStats expr, pose, audio;
  BlendshapeBasis basis;    // raw coefficients
  BlendshapeBasis basis_n;  // normalized coefficients

  Matrix raw_expression(const Matrix& x) const { return denormalize(x, expr); }
  Matrix raw_pose(const Matrix& x) const { return denormalize(x, pose); }
};

inline void normalize_clips(ClipSet& clips, const NormStats& e, const NormStats& p, const NormStats& a) {
  for (auto& c : clips) {
    c.expression = normalize(c.expression, e);
    c.pose = normalize(c.pose, p);
    c.audio = normalize(c.audio, a);
  }
}

inline Dataset load_dataset(const fs::path& dir) {
  Dataset ds;
  ds.corpus = CorpusConfig::from_json(read_corpus_manifest(dir).at("config"));
  ds.train = load_split(dir, "train");
  ds.val = load_split(dir, "val");
  ds.test = load_split(dir, "test");
  if (ds.train.empty()) throw std::runtime_error("dataset has an empty training split");
  std::vector<const Matrix*> e, p, a;
  for (const auto& c : ds.train) {
    e.push_back(&c.expression);
    p.push_back(&c.pose);
    a.push_back(&c.audio);
  }
  ds.expr = NormStats::fit(e);
  ds.pose = NormStats::fit(p);
  ds.audio = NormStats::fit(a);
  for (auto* split : {&ds.train, &ds.val, &ds.test}) normalize_clips(*split, ds.expr, ds.pose, ds.audio);
  ds.basis = load_basis(dir);
  ds.basis_n = ds.basis.for_normalized(ds.expr);
  return ds;
}

inline CorpusConfig corpus_config(const RunConfig& rc) {
  CorpusConfig c;
  c.styles = rc.i("styles");
  c.speakers = rc.i("speakers");
  c.clips_per_speaker_style = rc.i("clips_per_speaker_style");
  c.frames = rc.i("frames");
  c.audio_dim = rc.i("audio_dim");
  c.val_speakers = rc.i("val_speakers");
  c.test_speakers = rc.i("test_speakers");
  c.window = rc.i("window");
  c.pose_window = rc.i("pose_window");
  c.noise_std = rc.real("noise_std");
  c.style_strength = rc.real("style_strength");
  c.seed = rc.seed();
  return c;
}

inline int positive(const RunConfig& rc, const std::string& name) {
  const int v = rc.i(name);
  if (v < 1) throw ConfigError(name + " must be at least 1");
  return v;
}

inline ad::AdamConfig adam_config(const RunConfig& rc) {
  ad::AdamConfig a;
  a.learning_rate = rc.real("lr");
  a.beta1 = rc.real("beta1");
  a.beta2 = rc.real("beta2");
  a.clip_norm = rc.real("clip_norm");
  return a;
}

inline StyleConfig style_config(const RunConfig& rc, int styles) {
  StyleConfig c;
  c.d_s = rc.i("d_s");
  c.window = rc.i("window");
  c.clip_len = rc.i("clip_len");
  c.codebook_size = rc.i("codebook_size");
  c.use_codebook = rc.flag("use_codebook");
  c.layers = rc.i("style_layers");
  c.heads = rc.i("style_heads");
  c.styles = styles;
  return c;
}

inline StyleTrainConfig style_train_config(const RunConfig& rc) {
  StyleTrainConfig c;
  c.epochs = rc.i("style_epochs");
  c.batch = positive(rc, "batch");
  c.adam = adam_config(rc);
  c.weights.alpha_trip = rc.real("alpha_trip");
  c.weights.alpha_c = rc.real("alpha_c");
  c.weights.margin = rc.real("margin");
  c.dead_after = rc.i("dead_after");
  c.seed = rc.seed();
  return c;
}

inline StylizerConfig stylizer_config(const RunConfig& rc) {
  StylizerConfig c;
  c.d_z = rc.i("d_z");
  c.d_s = rc.i("d_s");
  c.rank = rc.i("rank");
  c.hyper_hidden = rc.i("hyper_hidden");
  c.use_hyper = rc.flag("use_hyper");
  return c;
}

inline MotionConfig motion_config(const RunConfig& rc, int styles, int audio_dim) {
  MotionConfig c;
  c.core = stylizer_config(rc);
  c.audio_dim = audio_dim;
  c.disc_hidden = rc.i("disc_hidden");
  c.styles = styles;
  return c;
}

inline MotionTrainConfig motion_train_config(const RunConfig& rc) {
  MotionTrainConfig c;
  c.epochs = rc.i("motion_epochs");
  c.batch = positive(rc, "batch");
  c.adam = adam_config(rc);
  c.weights.alpha_trip = rc.real("motion_alpha_trip");
  c.weights.alpha_style1 = rc.real("alpha_style1");
  c.weights.alpha_style2 = rc.real("alpha_style2");
  c.weights.margin = rc.real("margin");
  c.weights.gamma_dtw = rc.real("gamma_dtw");
  c.seed = rc.seed();
  return c;
}

inline PoseConfig pose_config(const RunConfig& rc, int audio_dim) {
  PoseConfig c;
  c.codebook_size = rc.i("pose_codebook_size");
  c.d_p = rc.i("d_p");
  c.window = rc.i("pose_window");
  c.audio_dim = audio_dim;
  c.d_s = rc.i("d_s");
  return c;
}

inline PoseTrainConfig pose_train_config(const RunConfig& rc) {
  PoseTrainConfig c;
  c.codebook_epochs = rc.i("pose_codebook_epochs");
  c.predictor_epochs = rc.i("pose_epochs");
  c.batch = positive(rc, "batch");
  c.adam = adam_config(rc);
  c.dead_after = rc.i("dead_after");
  c.seed = rc.seed();
  return c;
}

inline VideoTransferConfig video_config(const RunConfig& rc, int styles) {
  VideoTransferConfig c;
  c.core = stylizer_config(rc);
  c.disc_hidden = rc.i("disc_hidden");
  c.styles = styles;
  return c;
}

inline VideoTrainConfig video_train_config(const RunConfig& rc) {
  VideoTrainConfig c;
  c.epochs = rc.i("transfer_epochs");
  c.batch = positive(rc, "transfer_batch");
  c.adam = adam_config(rc);
  c.weights.alpha_cyc = rc.real("alpha_cyc");
  c.weights.alpha_trip = rc.real("motion_alpha_trip");
  c.weights.alpha_style1 = rc.real("alpha_style1");
  c.weights.alpha_style2 = rc.real("alpha_style2");
  c.weights.margin = rc.real("margin");
  c.seed = rc.seed();
  return c;
}

// ---------------------------------------------------------------------------
// checkpoints

template <class S>
void save_checkpoint(const fs::path& dir, const std::vector<const ad::ParamSet<S>*>& sets, const RunConfig& rc,
                     const std::string& kind, const Dataset* ds = nullptr) {
  Container c;
  for (const auto* ps : sets) ps->export_to(c);
  if (ds != nullptr) {
    c.add_matrix("norm.expression.mean", ds->expr.mean);
    c.add_matrix("norm.expression.std", ds->expr.stddev);
    c.add_matrix("norm.pose.mean", ds->pose.mean);
    c.add_matrix("norm.pose.std", ds->pose.stddev);
    c.add_matrix("norm.audio.mean", ds->audio.mean);
    c.add_matrix("norm.audio.std", ds->audio.stddev);
  }
  c.metadata["kind"] = kind;
  c.metadata["config_hash"] = rc.hash();
  c.metadata["seed"] = std::to_string(rc.seed());
  save_container(dir, c);
}

template <class S>
Container load_checkpoint(const fs::path& dir, const std::vector<ad::ParamSet<S>*>& sets, const std::string& kind) {
  if (!fs::exists(dir / "manifest.json")) throw ContainerError("missing " + kind + " checkpoint at " + dir.string());
  Container c = load_container(dir);
  if (c.meta("kind") != kind) throw ContainerError(dir.string() + " holds a '" + c.meta("kind") + "' checkpoint, expected " + kind);
  for (auto* ps : sets) ps->import_from(c);
  return c;
}

inline NormStats norm_from(const Container& c, const std::string& name) {
  NormStats s;
  s.mean = c.matrix("norm." + name + ".mean").row(0);
  s.stddev = c.matrix("norm." + name + ".std").row(0);
  return s;
}

inline void write_log(const fs::path& path, const TrainLog& log) {
  std::ofstream out(path);
  for (const auto& rec : log) out << rec.dump() << '\n';
}

inline RunConfig load_run_config(const fs::path& run) {
  RunConfig rc;
  rc.merge_file(run / "config.txt");
  return rc;
}

// ---------------------------------------------------------------------------
// evaluation

/// Index of a clip in `clips` with `style`, preferring a speaker different from `avoid_speaker`
/// and never `self`; the choice rotates with `salt` so sources are spread over the split.
inline std::size_t pick_clip(const ClipSet& clips, int style, int avoid_speaker, std::size_t self, std::size_t salt) {
  std::vector<std::size_t> other_speaker, same_speaker;
  for (std::size_t k = 0; k < clips.size(); ++k) {
    if (k == self || clips[k].style != style) continue;
    (clips[k].speaker != avoid_speaker ? other_speaker : same_speaker).push_back(k);
  }
  const auto& pool = other_speaker.empty() ? same_speaker : other_speaker;
  if (pool.empty()) return self;
  return pool[salt % pool.size()];
}

template <class S>
EvalReport eval_style(const StyleExtractor<S>& ex, const Dataset& ds) {
  EvalReport r;
  r.scalars["style_accuracy"] = style_accuracy(ex, ds.test);
  r.scalars["codebook_usage"] = codebook_usage(ex, ds.train);
  r.scalars["reconstruction_mse"] = reconstruction_mse(ex, ds.test);
  const auto codes = clip_style_codes(ex, ds.test);
  double same = 0;
  int n = 0;
  for (std::size_t i = 0; i < codes.size(); ++i) {
    for (std::size_t j = i + 1; j < codes.size(); ++j) {
      if (ds.test[i].style != ds.test[j].style) continue;
      same += static_cast<double>(codes[i].dot(codes[j]) / (codes[i].norm() * codes[j].norm() + S(1e-12)));
      ++n;
    }
  }
  r.scalars["same_style_cosine"] = n == 0 ? 0.0 : same / n;
  for (const auto& c : ds.test) {
    r.per_clip.push_back({{"clip", c.id}, {"style", c.style}, {"predicted", ex.predict_label(c.expression.template cast<S>())}});
  }
  return r;
}

/// Held-out generation: every test clip is driven to every style. Style accuracy is judged by
/// `judge`; landmark distances use own-style pairs against the recorded clip.
template <class S>
EvalReport eval_motion(const MotionStylizer<S>& model, const StyleExtractor<S>& ex, const StyleExtractor<S>& judge,
                       const Dataset& ds) {
  EvalReport r;
  const auto codes = clip_style_codes(ex, ds.test);
  int correct = 0, total = 0;
  double mouth = 0, face = 0;
  int own = 0;
  for (std::size_t i = 0; i < ds.test.size(); ++i) {
    const Clip& c = ds.test[i];
    for (int m = 0; m < ds.corpus.styles; ++m) {
      const std::size_t j = pick_clip(ds.test, m, c.speaker, i, i);
      const MatrixT<S> gen = model.generate(c.audio.template cast<S>(), c.expression.row(0).template cast<S>(), codes[j]);
      const int predicted = judge.predict_label(gen);
      correct += predicted == m ? 1 : 0;
      ++total;
      if (m == c.style) {
        const LandmarkDistance d = landmark_distance(gen.template cast<float>(), c.expression, ds.basis_n);
        mouth += d.mouth;
        face += d.face;
        ++own;
        r.per_clip.push_back({{"clip", c.id}, {"mlmd_proxy", d.mouth}, {"flmd_proxy", d.face}, {"predicted", predicted}, {"target", m}});
      }
    }
  }
  r.scalars["style_accuracy"] = total == 0 ? 0.0 : static_cast<double>(correct) / total;
  r.scalars["mlmd_proxy"] = own == 0 ? 0.0 : mouth / own;
  r.scalars["flmd_proxy"] = own == 0 ? 0.0 : face / own;
  return r;
}

/// Adds the untrained model's landmark distances (same seed) and the trained/untrained mouth ratio.
template <class S>
void add_motion_baseline(EvalReport& r, const RunConfig& rc, const StyleExtractor<S>& ex, const Dataset& ds) {
  const MotionStylizer<S> untrained(motion_config(rc, ds.corpus.styles, ds.corpus.audio_dim), rc.seed());
  const EvalReport b = eval_motion(untrained, ex, ex, ds);
  r.scalars["mlmd_untrained"] = b.scalars.at("mlmd_proxy");
  r.scalars["mlmd_ratio"] = b.scalars.at("mlmd_proxy") > 0 ? r.scalars.at("mlmd_proxy") / b.scalars.at("mlmd_proxy") : 0.0;
}

template <class S>
std::vector<RowVectorT<S>> pose_conditioning(const StyleExtractor<S>& ex, const ClipSet& clips) {
  return clip_style_codes(ex, clips);
}

struct PoseProbe {
  double index_accuracy = 0;
  int distinct_sequences = 0;
  bool greedy_matches_argmax = false;
  double range_excess = 0;  // max over dims of how far long-horizon poses leave [min - 3 sd, max + 3 sd]
};

/// Teacher-forced greedy decoding recomputed step by step from `predict` logits.
template <class S>
std::vector<int> argmax_decode(const PoseGenerator<S>& model, const MatrixT<S>& audio, const RowVectorT<S>& s) {
  ad::Tape<S> t;
  const MatrixT<S> ctx = model.fuse(t, t.constant(audio), t.constant(s)).value();
  std::vector<int> out;
  for (Eigen::Index step = 0; step < ctx.rows(); ++step) {
    ad::Tape<S> u;
    const MatrixT<S> logits = model.predict(u, u.constant(ctx), out).value();
    int best = 0;
    for (Eigen::Index k = 1; k < logits.cols(); ++k) {
      if (logits(step, k) > logits(step, best)) best = static_cast<int>(k);
    }
    out.push_back(best);
  }
  return out;
}

template <class S>
PoseProbe probe_pose(const PoseGenerator<S>& model, const StyleExtractor<S>& ex, const Dataset& ds, double temperature,
                     std::uint64_t seed) {
  PoseProbe p;
  const auto codes = clip_style_codes(ex, ds.test);
  p.index_accuracy = pose_index_accuracy(model, ds.test, codes);
  const Clip& c = ds.test.front();
  std::set<std::vector<int>> distinct;
  for (std::uint64_t k = 0; k < 10; ++k) {
    distinct.insert(model.sample_indices(c.audio.template cast<S>(), codes.front(), temperature, seed + k));
  }
  p.distinct_sequences = static_cast<int>(distinct.size());
  p.greedy_matches_argmax =
      model.sample_indices(c.audio.template cast<S>(), codes.front(), 1.0, seed, true) ==
      argmax_decode<S>(model, c.audio.template cast<S>(), codes.front());
  // 10x horizon: the test clip's audio repeated ten times.
  MatrixT<S> audio(c.audio.rows() * 10, c.audio.cols());
  for (int k = 0; k < 10; ++k) audio.middleRows(k * c.audio.rows(), c.audio.rows()) = c.audio.template cast<S>();
  const Matrix poses = ds.raw_pose(model.sample_poses(audio, codes.front(), temperature, seed).template cast<float>());
  Eigen::ArrayXd lo = Eigen::ArrayXd::Constant(kPoseDim, 1e300), hi = Eigen::ArrayXd::Constant(kPoseDim, -1e300);
  Eigen::ArrayXd sum = Eigen::ArrayXd::Zero(kPoseDim), sq = Eigen::ArrayXd::Zero(kPoseDim);
  double n = 0;
  for (const auto& clip : ds.train) {
    const Eigen::MatrixXd raw = ds.raw_pose(clip.pose).cast<double>();
    lo = lo.min(raw.colwise().minCoeff().transpose().array());
    hi = hi.max(raw.colwise().maxCoeff().transpose().array());
    sum += raw.colwise().sum().transpose().array();
    sq += raw.array().square().matrix().colwise().sum().transpose().array();
    n += static_cast<double>(raw.rows());
  }
  const Eigen::ArrayXd sd = (sq / n - (sum / n).square()).max(0.0).sqrt();
  for (Eigen::Index t = 0; t < poses.rows(); ++t) {
    for (Eigen::Index d = 0; d < kPoseDim; ++d) {
      const double v = poses(t, d);
      p.range_excess = std::max({p.range_excess, (lo(d) - 3 * sd(d)) - v, v - (hi(d) + 3 * sd(d))});
    }
  }
  return p;
}

/// Round trip on held-out clips: neutralize (target = a neutral-style clip's code) and
/// restylize with the source's own code. Errors are in raw coefficients.
template <class S>
EvalReport eval_transfer(const VideoTransfer<S>& model, const VideoTransfer<S>& baseline, const StyleExtractor<S>& ex,
                         const StyleExtractor<S>& judge, const Dataset& ds) {
  EvalReport r;
  const auto codes = clip_style_codes(ex, ds.test);
  double ratio = 0, lip = 0, lip_base = 0;
  int correct = 0, total = 0;
  for (std::size_t i = 0; i < ds.test.size(); ++i) {
    const Clip& c = ds.test[i];
    const MatrixT<S> src = c.expression.template cast<S>();
    const std::size_t neutral = pick_clip(ds.test, 0, c.speaker, i, i);
    const MatrixT<S> first = model.transfer(src, codes[neutral]);
    const MatrixT<S> back = model.transfer(first, codes[i]);
    const Matrix raw_src = ds.raw_expression(c.expression);
    const Matrix raw_back = ds.raw_expression(back.template cast<float>());
    const double var = (raw_src.array() - raw_src.mean()).square().mean();
    const double mse = (raw_back - raw_src).array().square().mean();
    ratio += mse / var;
    const double l = lip_difference_error(c.expression, first.template cast<float>(), ds.basis_n);
    const double lb = lip_difference_error(c.expression, baseline.transfer(src, codes[neutral]).template cast<float>(), ds.basis_n);
    lip += l;
    lip_base += lb;
    for (int m = 0; m < ds.corpus.styles; ++m) {
      if (m == c.style) continue;
      const std::size_t j = pick_clip(ds.test, m, c.speaker, i, i);
      correct += judge.predict_label(model.transfer(src, codes[j])) == m ? 1 : 0;
      ++total;
    }
    r.per_clip.push_back({{"clip", c.id}, {"roundtrip_mse_ratio", mse / var}, {"lip_error", l}, {"lip_error_untrained", lb}});
  }
  const auto n = static_cast<double>(ds.test.size());
  r.scalars["cycle_error"] = ratio / n;
  r.scalars["lip_error"] = lip / n;
  r.scalars["lip_error_untrained"] = lip_base / n;
  r.scalars["lip_error_ratio"] = lip_base > 0 ? lip / lip_base : 0.0;
  r.scalars["transfer_style_accuracy"] = total == 0 ? 0.0 : static_cast<double>(correct) / total;
  return r;
}

// ---------------------------------------------------------------------------
// stages (each writes its checkpoint and log under the run directory)

using EpochHook = std::function<void(const nlohmann::json&)>;

template <class S>
StyleExtractor<S> make_style(const RunConfig& rc, const Dataset& ds) {
  return StyleExtractor<S>(style_config(rc, ds.corpus.styles), rc.seed());
}

template <class S>
StyleExtractor<S> load_style(const RunConfig& rc, const Dataset& ds, const fs::path& run) {
  StyleExtractor<S> ex = make_style<S>(rc, ds);
  load_checkpoint<S>(run / "style", {&ex.params()}, "style");
  return ex;
}

template <class S>
EvalReport stage_train_style(const RunConfig& rc, const Dataset& ds, const fs::path& run, const EpochHook& hook = {}) {
  StyleExtractor<S> ex = make_style<S>(rc, ds);
  const TrainLog log = train_style_extractor(ex, ds.train, style_train_config(rc), hook);
  save_checkpoint<S>(run / "style", {&ex.params()}, rc, "style", &ds);
  write_log(run / "style_log.jsonl", log);
  EvalReport r = eval_style(ex, ds);
  if (!log.empty()) r.scalars["final_loss"] = log.back().at("total").get<double>();
  return r;
}

template <class S>
EvalReport stage_train_motion(const RunConfig& rc, const Dataset& ds, const fs::path& run, const EpochHook& hook = {}) {
  StyleExtractor<S> ex = load_style<S>(rc, ds, run);
  MotionStylizer<S> model(motion_config(rc, ds.corpus.styles, ds.corpus.audio_dim), rc.seed());
  StyleDiscriminator<S> disc(rc.i("disc_hidden"), ds.corpus.styles, 5, rc.seed());
  const TrainLog log = train_motion_stylizer(model, disc, ex, ds.train, motion_train_config(rc), hook);
  save_checkpoint<S>(run / "motion", {&model.params(), &disc.params()}, rc, "motion");
  write_log(run / "motion_log.jsonl", log);
  EvalReport r = eval_motion(model, ex, ex, ds);
  add_motion_baseline(r, rc, ex, ds);
  if (!log.empty()) r.scalars["final_loss"] = log.back().at("total").get<double>();
  return r;
}

template <class S>
EvalReport stage_train_pose(const RunConfig& rc, const Dataset& ds, const fs::path& run, const EpochHook& hook = {}) {
  StyleExtractor<S> ex = load_style<S>(rc, ds, run);
  PoseGenerator<S> model(pose_config(rc, ds.corpus.audio_dim), rc.seed());
  const TrainLog log = train_pose_generator(model, ds.train, clip_style_codes(ex, ds.train), pose_train_config(rc), hook);
  save_checkpoint<S>(run / "pose", {&model.codebook_params(), &model.predictor_params()}, rc, "pose");
  write_log(run / "pose_log.jsonl", log);
  const PoseProbe p = probe_pose(model, ex, ds, rc.real("temperature"), rc.seed());
  EvalReport r;
  r.scalars["pose_index_accuracy"] = p.index_accuracy;
  r.scalars["pose_diversity"] = p.distinct_sequences;
  r.scalars["pose_greedy_matches_argmax"] = p.greedy_matches_argmax ? 1.0 : 0.0;
  r.scalars["pose_range_excess"] = p.range_excess;
  if (!log.empty()) r.scalars["final_loss"] = log.back().at("loss").get<double>();
  return r;
}

template <class S>
EvalReport stage_train_transfer(const RunConfig& rc, const Dataset& ds, const fs::path& run, const EpochHook& hook = {}) {
  StyleExtractor<S> ex = load_style<S>(rc, ds, run);
  VideoTransfer<S> model(video_config(rc, ds.corpus.styles), rc.seed());
  const VideoTransfer<S> baseline(video_config(rc, ds.corpus.styles), rc.seed());
  StyleDiscriminator<S> disc(rc.i("disc_hidden"), ds.corpus.styles, 5, rc.seed() + 1);
  const TrainLog log = train_video_transfer(model, disc, ex, ds.train, ds.basis_n, video_train_config(rc), hook);
  save_checkpoint<S>(run / "transfer", {&model.params(), &disc.params()}, rc, "transfer");
  write_log(run / "transfer_log.jsonl", log);
  EvalReport r = eval_transfer(model, baseline, ex, ex, ds);
  if (!log.empty()) r.scalars["final_loss"] = log.back().at("total").get<double>();
  return r;
}

/// Evaluates every checkpoint present in the run directory on the test split.
template <class S>
EvalReport stage_eval(const RunConfig& rc, const Dataset& ds, const fs::path& run) {
  EvalReport r;
  StyleExtractor<S> ex = load_style<S>(rc, ds, run);
  r.merge("style.", eval_style(ex, ds));
  if (fs::exists(run / "motion" / "manifest.json")) {
    MotionStylizer<S> model(motion_config(rc, ds.corpus.styles, ds.corpus.audio_dim), rc.seed());
    StyleDiscriminator<S> disc(rc.i("disc_hidden"), ds.corpus.styles, 5, rc.seed());
    load_checkpoint<S>(run / "motion", {&model.params(), &disc.params()}, "motion");
    EvalReport m = eval_motion(model, ex, ex, ds);
    add_motion_baseline(m, rc, ex, ds);
    r.merge("motion.", m);
  }
  if (fs::exists(run / "pose" / "manifest.json")) {
    PoseGenerator<S> model(pose_config(rc, ds.corpus.audio_dim), rc.seed());
    load_checkpoint<S>(run / "pose", {&model.codebook_params(), &model.predictor_params()}, "pose");
    const PoseProbe p = probe_pose(model, ex, ds, rc.real("temperature"), rc.seed());
    r.scalars["pose.pose_index_accuracy"] = p.index_accuracy;
    r.scalars["pose.pose_diversity"] = p.distinct_sequences;
    r.scalars["pose.pose_range_excess"] = p.range_excess;
  }
  if (fs::exists(run / "transfer" / "manifest.json")) {
    VideoTransfer<S> model(video_config(rc, ds.corpus.styles), rc.seed());
    const VideoTransfer<S> baseline(video_config(rc, ds.corpus.styles), rc.seed());
    StyleDiscriminator<S> disc(rc.i("disc_hidden"), ds.corpus.styles, 5, rc.seed() + 1);
    load_checkpoint<S>(run / "transfer", {&model.params(), &disc.params()}, "transfer");
    r.merge("transfer.", eval_transfer(model, baseline, ex, ex, ds));
  }
  return r;
}

// ---------------------------------------------------------------------------
// ablation

struct ArmSpec {
  std::string name;
  std::vector<std::string> overrides;
};

inline std::vector<ArmSpec> table3_arms() {
  return {{"full", {}},
          {"no_codebook", {"use_codebook=false"}},
          {"N=250", {"codebook_size=250"}},
          {"N=750", {"codebook_size=750"}},
          {"no_hyper", {"use_hyper=false"}},
          {"no_trip", {"alpha_trip=0", "motion_alpha_trip=0"}},
          {"no_style1", {"alpha_style1=0"}},
          {"no_style2", {"alpha_style2=0"}}};
}

inline std::vector<ArmSpec> axis_arms(const std::string& axis, const std::vector<std::string>& values) {
  RunConfig::key(axis);
  std::vector<ArmSpec> out;
  for (const auto& v : values) out.push_back({axis + "=" + v, {axis + "=" + v}});
  return out;
}

struct ArmResult {
  std::string arm;
  std::uint64_t seed = 0;
  double style_accuracy = 0;
  double flmd = 0;
  double mlmd = 0;
};

inline std::string style_cache_key(const RunConfig& rc) {
  std::string k;
  for (const char* name : {"seed", "d_s", "window", "clip_len", "codebook_size", "use_codebook", "style_layers", "style_heads",
                           "alpha_trip", "alpha_c", "margin", "dead_after", "style_epochs", "lr", "beta1", "beta2",
                           "clip_norm", "batch"}) {
    k += rc.raw(name) + "|";
  }
  return k;
}

/// Every arm trains its own style extractor (shared when the style settings coincide) and
/// motion stylizer on the same corpus; all arms of a seed are judged by the full model's
/// style extractor.
template <class S>
std::vector<ArmResult> run_ablation(const RunConfig& base, const Dataset& ds, const std::vector<ArmSpec>& arms,
                                    const std::vector<std::uint64_t>& seeds,
                                    const std::function<void(const ArmResult&)>& on_result = {}) {
  std::vector<ArmResult> out;
  for (std::uint64_t seed : seeds) {
    std::map<std::string, std::unique_ptr<StyleExtractor<S>>> cache;
    const auto extractor_for = [&](const RunConfig& rc) -> StyleExtractor<S>& {
      const std::string key = style_cache_key(rc);
      auto it = cache.find(key);
      if (it == cache.end()) {
        auto ex = std::make_unique<StyleExtractor<S>>(make_style<S>(rc, ds));
        train_style_extractor(*ex, ds.train, style_train_config(rc));
        ex->params().set_frozen(true);
        it = cache.emplace(key, std::move(ex)).first;
      }
      return *it->second;
    };
    RunConfig judge_rc = base;
    judge_rc.set("seed", std::to_string(seed));
    const StyleExtractor<S>& judge = extractor_for(judge_rc);
    for (const auto& arm : arms) {
      RunConfig rc = base;
      rc.set("seed", std::to_string(seed));
      for (const auto& o : arm.overrides) rc.apply(o);
      StyleExtractor<S>& ex = extractor_for(rc);
      MotionStylizer<S> model(motion_config(rc, ds.corpus.styles, ds.corpus.audio_dim), seed);
      StyleDiscriminator<S> disc(rc.i("disc_hidden"), ds.corpus.styles, 5, seed);
      train_motion_stylizer(model, disc, ex, ds.train, motion_train_config(rc));
      const EvalReport r = eval_motion(model, ex, judge, ds);
      ArmResult res{arm.name, seed, r.scalars.at("style_accuracy"), r.scalars.at("flmd_proxy"), r.scalars.at("mlmd_proxy")};
      if (on_result) on_result(res);
      out.push_back(res);
    }
  }
  return out;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct ArmSummary {
  std::string arm;
  double style_accuracy = 0;
  double flmd = 0;
  double mlmd = 0;
};

inline std::vector<ArmSummary> summarize_arms(const std::vector<ArmSpec>& arms, const std::vector<ArmResult>& results) {
  std::vector<ArmSummary> out;
  for (const auto& arm : arms) {
    std::vector<double> acc, flmd, mlmd;
    for (const auto& r : results) {
      if (r.arm != arm.name) continue;
      acc.push_back(r.style_accuracy);
      flmd.push_back(r.flmd);
      mlmd.push_back(r.mlmd);
    }
    out.push_back({arm.name, median(acc), median(flmd), median(mlmd)});
  }
  return out;
}

inline std::string arm_table(const std::vector<ArmSummary>& rows) {
  std::ostringstream out;
  out << std::left << std::setw(14) << "arm" << std::setw(16) << "style_accuracy" << std::setw(14) << "flmd_proxy"
      << "mlmd_proxy\n";
  for (const auto& r : rows) {
    out << std::left << std::setw(14) << r.arm << std::setw(16) << std::setprecision(4) << r.style_accuracy << std::setw(14)
        << std::setprecision(5) << r.flmd << std::setprecision(5) << r.mlmd << "\n";
  }
  return out.str();
}

}  // namespace saas
