#pragma once

// Seeded synthetic stylized-motion corpus. Each clip is driven by K low-frequency
// speech latents u(t): audio is a fixed linear image of u, the mouth block of the
// expression is another linear image of u, and a per-style transform (mouth gain,
// speech-locked envelope, affine map of the upper face, style-specific co-movement,
// bias, pose tendency) turns the canonical motion into a stylized one.

#include "saas/core/clip.hpp"
#include "saas/core/container.hpp"
#include "saas/core/rng.hpp"
#include "saas/transfer/blendshape.hpp"

#include <Eigen/SVD>
#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

namespace saas {

inline constexpr int kMouthDim = 16;

struct CorpusConfig {
  int styles = 6;
  int speakers = 10;
  int clips_per_speaker_style = 4;
  int frames = 64;
  int audio_dim = 28;
  int latent_dim = 8;
  int val_speakers = 2;
  int test_speakers = 2;
  int window = 8;
  int pose_window = 8;
  double noise_std = 0.1;
  double style_strength = 1.0;
  std::uint64_t seed = 0;

  int train_speakers() const { return speakers - val_speakers - test_speakers; }
  int clip_count() const { return styles * speakers * clips_per_speaker_style; }

  void validate() const {
    if (styles < 2) throw std::invalid_argument("corpus: at least 2 styles are required");
    if (frames < 1 || window < 1 || pose_window < 1 || frames % window != 0 || frames % pose_window != 0) {
      throw std::invalid_argument("corpus: frames " + std::to_string(frames) + " must be divisible by window " +
                                  std::to_string(window) + " and pose window " + std::to_string(pose_window));
    }
    if (train_speakers() < 1 || val_speakers < 0 || test_speakers < 0) {
      throw std::invalid_argument("corpus: speaker split leaves no training speakers");
    }
    if (clips_per_speaker_style < 1) throw std::invalid_argument("corpus: clips_per_speaker_style must be positive");
    if (audio_dim < latent_dim) throw std::invalid_argument("corpus: audio_dim must be at least latent_dim");
    if (noise_std < 0) throw std::invalid_argument("corpus: noise_std must be nonnegative");
  }

  nlohmann::json to_json() const {
    return {{"styles", styles},           {"speakers", speakers},
            {"clips_per_speaker_style", clips_per_speaker_style},
            {"frames", frames},           {"audio_dim", audio_dim},
            {"latent_dim", latent_dim},   {"val_speakers", val_speakers},
            {"test_speakers", test_speakers}, {"window", window},
            {"pose_window", pose_window}, {"noise_std", noise_std},
            {"style_strength", style_strength}, {"seed", seed}};
  }

  static CorpusConfig from_json(const nlohmann::json& j) {
    CorpusConfig c;
    c.styles = j.at("styles");
    c.speakers = j.at("speakers");
    c.clips_per_speaker_style = j.at("clips_per_speaker_style");
    c.frames = j.at("frames");
    c.audio_dim = j.at("audio_dim");
    c.latent_dim = j.at("latent_dim");
    c.val_speakers = j.at("val_speakers");
    c.test_speakers = j.at("test_speakers");
    c.window = j.at("window");
    c.pose_window = j.at("pose_window");
    c.noise_std = j.at("noise_std");
    c.style_strength = j.at("style_strength");
    c.seed = j.at("seed");
    return c;
  }
};

struct StyleTransform {
  double mouth_gain = 1.0;
  double envelope_depth = 0.0;
  Eigen::VectorXd envelope_dir;  // K
  Eigen::MatrixXd face_map;      // 48 x 48, near identity
  Eigen::MatrixXd comove;        // K x 48
  Eigen::RowVectorXd bias;       // 64
  Eigen::RowVectorXd pose_bias;  // 6
  Eigen::RowVectorXd pose_amp;   // 6

  Eigen::RowVectorXd flatten() const {
    std::vector<double> v{mouth_gain, envelope_depth};
    const auto push = [&](const auto& m) {
      for (Eigen::Index i = 0; i < m.size(); ++i) v.push_back(m.data()[i]);
    };
    push(envelope_dir);
    push(face_map);
    push(comove);
    push(bias);
    push(pose_bias);
    push(pose_amp);
    return Eigen::Map<Eigen::RowVectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
  }

  double condition_number() const {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(face_map);
    const auto& s = svd.singularValues();
    return s(0) / s(s.size() - 1);
  }
};

/// Corpus-wide maps plus per-style and per-speaker parameters, all pure functions of the config.
struct CorpusModel {
  CorpusConfig config;
  Eigen::MatrixXd audio_map;  // K x d_a
  Eigen::MatrixXd mouth_map;  // K x 16
  Eigen::MatrixXd face_map;   // K x 48
  Eigen::MatrixXd pose_map;   // K x 6
  std::vector<StyleTransform> styles;
  std::vector<Eigen::RowVectorXd> speaker_bias;       // 64
  std::vector<Eigen::RowVectorXd> speaker_pose_bias;  // 6

  static constexpr double kMinStyleDistance = 1.0;

  explicit CorpusModel(const CorpusConfig& cfg) : config(cfg) {
    cfg.validate();
    const int k = cfg.latent_dim;
    const int face = kExpressionDim - kMouthDim;
    auto g = derive_rng(cfg.seed, 0);
    std::normal_distribution<double> n(0.0, 1.0);
    const auto gauss = [&](Eigen::Index r, Eigen::Index c, double sd, std::mt19937_64& rng) {
      Eigen::MatrixXd m(r, c);
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = sd * n(rng);
      return m;
    };
    audio_map = gauss(k, cfg.audio_dim, 1.0 / std::sqrt(k), g);
    mouth_map = gauss(k, kMouthDim, 1.0 / std::sqrt(k), g);
    face_map = gauss(k, face, 0.5 / std::sqrt(k), g);
    pose_map = gauss(k, kPoseDim, 0.5 / std::sqrt(k), g);

    const double a = cfg.style_strength;
    for (int m = 0; m < cfg.styles; ++m) {
      StyleTransform st;
      if (m == 0) {  // neutral reference style
        st.envelope_dir = Eigen::VectorXd::Zero(k);
        st.face_map = Eigen::MatrixXd::Identity(face, face);
        st.comove = Eigen::MatrixXd::Zero(k, face);
        st.bias = Eigen::RowVectorXd::Zero(kExpressionDim);
        st.pose_bias = Eigen::RowVectorXd::Zero(kPoseDim);
        st.pose_amp = Eigen::RowVectorXd::Ones(kPoseDim);
        styles.push_back(st);
        continue;
      }
      auto rng = derive_rng(cfg.seed, 1 + static_cast<std::uint64_t>(m));
      std::uniform_real_distribution<double> u(0.0, 1.0);
      for (int attempt = 0;; ++attempt) {
        st.mouth_gain = 1.0 + a * (0.3 * u(rng) - 0.15);
        st.envelope_depth = a * 0.4 * u(rng);
        st.envelope_dir = gauss(k, 1, 1.0, rng).col(0).normalized();
        st.face_map = Eigen::MatrixXd::Identity(face, face) + gauss(face, face, a * 0.25 / std::sqrt(face), rng);
        st.comove = gauss(k, face, a * 0.4 / std::sqrt(k), rng);
        st.bias = gauss(1, kExpressionDim, a * 0.35, rng).row(0);
        st.bias.head(kMouthDim) *= 0.2;
        st.pose_bias = gauss(1, kPoseDim, a * 0.3, rng).row(0);
        st.pose_amp = (Eigen::RowVectorXd::Ones(kPoseDim).array() + a * (0.8 * gauss(1, kPoseDim, 1.0, rng).row(0).array().tanh()))
                          .max(0.2)
                          .matrix();
        bool ok = st.condition_number() < 100.0;
        for (const auto& other : styles) ok = ok && (st.flatten() - other.flatten()).norm() >= kMinStyleDistance * a;
        if (ok) break;
        if (attempt > 100) throw std::runtime_error("corpus: could not separate style transforms");
      }
      styles.push_back(st);
    }
    for (int s = 0; s < cfg.speakers; ++s) {
      auto rng = derive_rng(cfg.seed, 1000 + static_cast<std::uint64_t>(s));
      speaker_bias.push_back(gauss(1, kExpressionDim, 0.05, rng).row(0));
      speaker_pose_bias.push_back(gauss(1, kPoseDim, 0.05, rng).row(0));
    }
  }

  /// T x K speech latents of clip `index`: three random sinusoids per latent.
  Eigen::MatrixXd latents(int index) const {
    auto rng = derive_rng(config.seed, 100000 + static_cast<std::uint64_t>(index));
    std::uniform_real_distribution<double> f(0.02, 0.15), ph(0.0, 2 * std::numbers::pi), amp(0.3, 1.0);
    Eigen::MatrixXd u = Eigen::MatrixXd::Zero(config.frames, config.latent_dim);
    for (int k = 0; k < config.latent_dim; ++k) {
      for (int h = 0; h < 3; ++h) {
        const double fr = f(rng), p = ph(rng), a = amp(rng) / std::sqrt(3.0);
        for (int t = 0; t < config.frames; ++t) u(t, k) += a * std::sin(2 * std::numbers::pi * fr * t + p);
      }
    }
    return u;
  }

  /// Noise-free stylized expression and pose for latents u, style m and speaker s.
  std::pair<Eigen::MatrixXd, Eigen::MatrixXd> render(const Eigen::MatrixXd& u, int m, int s) const {
    const StyleTransform& st = styles.at(static_cast<std::size_t>(m));
    const Eigen::VectorXd env = (1.0 + st.envelope_depth * (u * st.envelope_dir).array().tanh()).matrix();
    Eigen::MatrixXd beta(u.rows(), kExpressionDim);
    beta.leftCols(kMouthDim) = st.mouth_gain * env.asDiagonal() * (u * mouth_map);
    beta.rightCols(kExpressionDim - kMouthDim) = (u * face_map) * st.face_map.transpose() + env.asDiagonal() * (u * st.comove);
    beta.rowwise() += st.bias + speaker_bias.at(static_cast<std::size_t>(s));
    Eigen::MatrixXd pose = env.asDiagonal() * (u * pose_map);
    pose = pose.array().rowwise() * st.pose_amp.array();
    pose.rowwise() += st.pose_bias + speaker_pose_bias.at(static_cast<std::size_t>(s));
    return {beta, pose};
  }

  Clip make_clip(int index, int m, int s) const {
    const Eigen::MatrixXd u = latents(index);
    auto [beta, pose] = render(u, m, s);
    Eigen::MatrixXd audio = u * audio_map;
    auto rng = derive_rng(config.seed, 200000 + static_cast<std::uint64_t>(index));
    std::normal_distribution<double> n(0.0, config.noise_std);
    if (config.noise_std > 0) {
      for (auto* mat : {&beta, &pose, &audio}) {
        for (Eigen::Index i = 0; i < mat->size(); ++i) mat->data()[i] += n(rng);
      }
    }
    Clip c;
    c.expression = beta.cast<float>();
    c.pose = pose.cast<float>();
    c.audio = audio.cast<float>();
    c.style = m;
    c.speaker = s;
    c.id = index;
    return c;
  }

  std::string split_of_speaker(int s) const {
    if (s < config.train_speakers()) return "train";
    if (s < config.train_speakers() + config.val_speakers) return "val";
    return "test";
  }

  /// Clip index order: speaker-major, then style, then repetition.
  std::vector<Clip> all_clips() const {
    std::vector<Clip> out;
    int index = 0;
    for (int s = 0; s < config.speakers; ++s) {
      for (int m = 0; m < config.styles; ++m) {
        for (int r = 0; r < config.clips_per_speaker_style; ++r) out.push_back(make_clip(index++, m, s));
      }
    }
    return out;
  }

  /// Generation oracle: recovers u from the audio by least squares and returns the style
  /// whose rendering leaves the smallest residual (the unknown speaker bias folds into it).
  int oracle_classify(const Clip& c) const {
    const Eigen::MatrixXd a = c.audio.cast<double>();
    const Eigen::MatrixXd u = audio_map.transpose().colPivHouseholderQr().solve(a.transpose()).transpose();
    int best = 0;
    double best_err = std::numeric_limits<double>::infinity();
    for (int m = 0; m < config.styles; ++m) {
      const Eigen::MatrixXd r = c.expression.cast<double>() - render(u, m, 0).first;
      const double err = r.squaredNorm();
      if (err < best_err) {
        best_err = err;
        best = m;
      }
    }
    return best;
  }
};

inline Container clips_to_container(const ClipSet& clips, int frames, int audio_dim) {
  Container c;
  const auto n = static_cast<std::int64_t>(clips.size());
  std::vector<float> expr, pose, audio;
  std::vector<std::int64_t> style, speaker, id;
  for (const auto& clip : clips) {
    expr.insert(expr.end(), clip.expression.data(), clip.expression.data() + clip.expression.size());
    pose.insert(pose.end(), clip.pose.data(), clip.pose.data() + clip.pose.size());
    audio.insert(audio.end(), clip.audio.data(), clip.audio.data() + clip.audio.size());
    style.push_back(clip.style);
    speaker.push_back(clip.speaker);
    id.push_back(clip.id);
  }
  c.add_floats("expression", {n, frames, kExpressionDim}, std::move(expr));
  c.add_floats("pose", {n, frames, kPoseDim}, std::move(pose));
  c.add_floats("audio", {n, frames, audio_dim}, std::move(audio));
  c.add_ints("style", {n}, std::move(style));
  c.add_ints("speaker", {n}, std::move(speaker));
  c.add_ints("clip_id", {n}, std::move(id));
  return c;
}

inline ClipSet clips_from_container(const Container& c) {
  const auto& shape = c.get("expression").shape;
  if (shape.size() != 3) throw ContainerError("expression array must be clips x frames x 64");
  const Eigen::Index n = shape[0], frames = shape[1];
  const Matrix e = c.matrix("expression"), p = c.matrix("pose"), a = c.matrix("audio");
  const Eigen::Index da = a.cols() / std::max<Eigen::Index>(frames, 1);
  const auto& style = c.get("style").ints();
  const auto& speaker = c.get("speaker").ints();
  const auto& id = c.get("clip_id").ints();
  ClipSet out;
  for (Eigen::Index i = 0; i < n; ++i) {
    Clip clip;
    clip.expression = Eigen::Map<const Matrix>(e.row(i).data(), frames, kExpressionDim);
    clip.pose = Eigen::Map<const Matrix>(p.row(i).data(), frames, kPoseDim);
    clip.audio = Eigen::Map<const Matrix>(a.row(i).data(), frames, da);
    clip.style = static_cast<int>(style[static_cast<std::size_t>(i)]);
    clip.speaker = static_cast<int>(speaker[static_cast<std::size_t>(i)]);
    clip.id = static_cast<int>(id[static_cast<std::size_t>(i)]);
    out.push_back(std::move(clip));
  }
  return out;
}

/// Writes train/val/test containers, the blendshape basis and corpus.json under `dir`.
inline void generate_corpus(const CorpusConfig& cfg, const std::filesystem::path& dir) {
  const CorpusModel model(cfg);
  std::map<std::string, ClipSet> splits{{"train", {}}, {"val", {}}, {"test", {}}};
  nlohmann::json table = nlohmann::json::array();
  for (auto& clip : model.all_clips()) {
    const std::string split = model.split_of_speaker(clip.speaker);
    table.push_back({{"id", clip.id}, {"style", clip.style}, {"speaker", clip.speaker}, {"split", split}});
    splits[split].push_back(std::move(clip));
  }
  std::filesystem::create_directories(dir);
  for (const auto& [name, clips] : splits) {
    Container c = clips_to_container(clips, cfg.frames, cfg.audio_dim);
    c.metadata["split"] = name;
    c.metadata["seed"] = std::to_string(cfg.seed);
    save_container(dir / name, c);
  }
  Container basis;
  synthetic_basis(cfg.seed).save(basis);
  basis.metadata["kind"] = "blendshape_basis";
  save_container(dir / "basis", basis);
  nlohmann::json manifest{{"config", cfg.to_json()}, {"clips", table}};
  std::ofstream(dir / "corpus.json") << manifest.dump(2) << '\n';
}

inline nlohmann::json read_corpus_manifest(const std::filesystem::path& dir) {
  std::ifstream in(dir / "corpus.json");
  if (!in) throw ContainerError("no corpus.json in " + dir.string());
  return nlohmann::json::parse(in);
}

/// Clips of one split in stable order; fails if any speaker also appears in another split.
inline ClipSet load_split(const std::filesystem::path& dir, const std::string& split) {
  if (!std::filesystem::exists(dir / split / "manifest.json")) {
    throw ContainerError("corpus at " + dir.string() + " has no split '" + split + "'");
  }
  const auto manifest = read_corpus_manifest(dir);
  std::map<int, std::set<std::string>> speaker_splits;
  for (const auto& e : manifest.at("clips")) speaker_splits[e.at("speaker").get<int>()].insert(e.at("split").get<std::string>());
  ClipSet clips = clips_from_container(load_container(dir / split));
  for (const auto& c : clips) {
    const auto& where = speaker_splits[c.speaker];
    if (where.size() != 1 || *where.begin() != split) {
      throw ContainerError("speaker " + std::to_string(c.speaker) + " appears in more than one split");
    }
  }
  return clips;
}

inline BlendshapeBasis load_basis(const std::filesystem::path& dir) { return BlendshapeBasis::load(load_container(dir / "basis")); }

}  // namespace saas
