#pragma once

// Discrete head-pose prior: a VQ autoencoder over w_p-frame pose windows, and a causal
// transformer that predicts codebook indices from fused audio + style context.

#include "saas/ad/nn.hpp"
#include "saas/core/clip.hpp"
#include "saas/core/rng.hpp"
#include "saas/style/quantizer.hpp"
#include "saas/style/style_training.hpp"

#include <nlohmann/json.hpp>

namespace saas {

struct PoseConfig {
  int codebook_size = 128;
  int d_p = 128;
  int window = 8;
  int layers = 2;
  int heads = 4;
  int audio_dim = 28;
  int d_s = 256;

  void validate() const {
    if (codebook_size < 2) throw std::invalid_argument("pose config: codebook needs at least 2 entries");
    if (window < 1 || d_p < 1 || d_p % heads != 0) throw std::invalid_argument("pose config: invalid widths");
  }
};

template <class S>
class PoseGenerator {
 public:
  PoseGenerator(const PoseConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    auto rng = derive_rng(seed, 0x905e);
    const int d = cfg_.d_p, w = cfg_.window * kPoseDim;
    enc1_ = ad::Linear<S>(vq_, "pose.enc.hidden", w, d, rng);
    enc2_ = ad::Linear<S>(vq_, "pose.enc.out", d, d, rng);
    codebook_ = &vq_.add("pose.codebook", cfg_.codebook_size, d, ad::Init::uniform, rng, 1.0 / cfg_.codebook_size);
    dec1_ = ad::Linear<S>(vq_, "pose.dec.hidden", d, d, rng);
    dec2_ = ad::Linear<S>(vq_, "pose.dec.out", d, w, rng);

    audio_in_ = ad::Linear<S>(pred_, "pose.fuse.audio", cfg_.audio_dim, d, rng);
    style_in_ = ad::Linear<S>(pred_, "pose.fuse.style", cfg_.d_s, d, rng);
    for (int l = 0; l < cfg_.layers; ++l) fuse_.emplace_back(pred_, "pose.fuse.layer" + std::to_string(l), d, cfg_.heads, 2 * d, rng);
    start_ = &pred_.add("pose.pred.start", 1, d, ad::Init::normal, rng, 0.1);
    embed_ = &pred_.add("pose.pred.embed", cfg_.codebook_size, d, ad::Init::normal, rng, 0.1);
    for (int l = 0; l < cfg_.layers; ++l) decoder_.emplace_back(pred_, "pose.pred.layer" + std::to_string(l), d, cfg_.heads, 2 * d, rng);
    logits_ = ad::Linear<S>(pred_, "pose.pred.logits", d, cfg_.codebook_size, rng);
  }

  const PoseConfig& config() const noexcept { return cfg_; }
  ad::ParamSet<S>& codebook_params() noexcept { return vq_; }
  ad::ParamSet<S>& predictor_params() noexcept { return pred_; }
  const ad::ParamSet<S>& codebook_params() const noexcept { return vq_; }
  const ad::ParamSet<S>& predictor_params() const noexcept { return pred_; }
  ad::Parameter<S>& codebook() const { return *codebook_; }
  ad::Linear<S>& logits_layer() { return logits_; }

  /// tau_p x d_p encoder features of a T x 6 pose track.
  ad::Var<S> encode(ad::Tape<S>& t, ad::Var<S> pose) const {
    check_pose(pose.rows(), pose.cols());
    const Eigen::Index tau = pose.rows() / cfg_.window;
    const ad::Var<S> windows = ad::reshape(pose, tau, cfg_.window * kPoseDim);
    return enc2_(t, ad::relu(enc1_(t, windows)));
  }

  ad::Var<S> decode(ad::Tape<S>& t, ad::Var<S> tokens) const {
    const ad::Var<S> w = dec2_(t, ad::relu(dec1_(t, tokens)));
    return ad::reshape(w, tokens.rows() * cfg_.window, kPoseDim);
  }

  std::vector<int> encode_indices(const MatrixT<S>& pose) const {
    ad::Tape<S> t;
    return quantize<S, S>(encode(t, t.constant(pose)).value(), codebook_->value).indices;
  }

  MatrixT<S> tokens_of(const std::vector<int>& indices) const {
    MatrixT<S> q(static_cast<Eigen::Index>(indices.size()), cfg_.d_p);
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const int k = indices[i];
      if (k < 0 || k >= cfg_.codebook_size) throw std::invalid_argument("pose index out of range");
      q.row(static_cast<Eigen::Index>(i)) = codebook_->value.row(k);
    }
    return q;
  }

  MatrixT<S> decode_indices(const std::vector<int>& indices) const {
    ad::Tape<S> t;
    return decode(t, t.constant(tokens_of(indices))).value();
  }

  /// Reconstruction, codebook and commitment terms for one pose track.
  ad::Var<S> vq_loss(ad::Tape<S>& t, const MatrixT<S>& pose, std::vector<int>* indices = nullptr,
                     MatrixT<S>* features = nullptr) const {
    const ad::Var<S> f = encode(t, t.constant(pose));
    Quantized<S> qz = quantize<S, S>(f.value(), codebook_->value);
    const ad::Var<S> q_st = straight_through(f, qz.values);
    const ad::Var<S> rec = ad::mse(decode(t, q_st), t.constant(pose));
    const ad::Var<S> cb = ad::mse(ad::stop_gradient(f), ad::gather_rows(t.param(*codebook_), qz.indices));
    const ad::Var<S> commit = ad::mse(f, t.constant(qz.values));
    if (indices != nullptr) *indices = qz.indices;
    if (features != nullptr) *features = f.value();
    return ad::add(rec, ad::add(cb, commit));
  }

  /// Cross-modal context: audio frames average-pooled per pose window, a prepended
  /// style token, sinusoidal positions and a transformer encoder; the style slot is dropped.
  ad::Var<S> fuse(ad::Tape<S>& t, ad::Var<S> audio, ad::Var<S> s) const {
    if (audio.cols() != cfg_.audio_dim) throw std::invalid_argument("fuse_audio_style: audio width mismatch");
    if (audio.rows() % cfg_.window != 0) {
      throw std::invalid_argument("fuse_audio_style: audio length is not divisible by the pose window");
    }
    const ad::Var<S> pooled = ad::mean_row_groups(audio_in_(t, audio), cfg_.window);
    ad::Var<S> x = ad::concat_rows<S>({style_in_(t, s), pooled});
    x = ad::add(x, t.constant(ad::sinusoidal_positions<S>(x.rows(), cfg_.d_p)));
    for (const auto& layer : fuse_) x = layer(t, x);
    return ad::slice_rows(x, 1, x.rows() - 1);
  }

  /// Logits for every step given the ground-truth (or sampled) past indices; row t sees indices < t.
  ad::Var<S> predict(ad::Tape<S>& t, ad::Var<S> context, const std::vector<int>& past) const {
    const auto steps = static_cast<Eigen::Index>(past.size()) + 1;
    std::vector<ad::Var<S>> rows{t.param(*start_)};
    if (!past.empty()) rows.push_back(ad::gather_rows(t.param(*embed_), past));
    ad::Var<S> x = ad::concat_rows(rows);
    x = ad::add(x, t.constant(ad::sinusoidal_positions<S>(steps, cfg_.d_p)));
    const MatrixT<S> mask = ad::causal_mask<S>(steps);
    for (const auto& layer : decoder_) x = layer(t, x, context, mask);
    return logits_(t, x);
  }

  /// Teacher-forced logits (tau_p x N_p) for a full index sequence.
  ad::Var<S> teacher_forced(ad::Tape<S>& t, ad::Var<S> context, const std::vector<int>& indices) const {
    const std::vector<int> past(indices.begin(), indices.end() - 1);
    return predict(t, context, past);
  }

  /// Autoregressive index sampling; temperature must be positive unless `greedy`.
  std::vector<int> sample_indices(const MatrixT<S>& audio, const RowVectorT<S>& s, double temperature, std::uint64_t seed,
                                  bool greedy = false) const {
    if (!greedy && !(temperature > 0)) {
      throw std::invalid_argument("sample_poses: temperature must be positive (use greedy mode for argmax decoding)");
    }
    ad::Tape<S> ctx_tape;
    const MatrixT<S> context = fuse(ctx_tape, ctx_tape.constant(audio), ctx_tape.constant(s)).value();
    auto rng = derive_rng(seed, 0x5a3);
    std::vector<int> out;
    for (Eigen::Index step = 0; step < context.rows(); ++step) {
      ad::Tape<S> t;
      const MatrixT<S> logits = predict(t, t.constant(context), out).value();
      const auto row = logits.row(step).template cast<double>();
      Eigen::Index best;
      row.maxCoeff(&best);
      if (greedy) {
        out.push_back(static_cast<int>(best));
        continue;
      }
      const Eigen::RowVectorXd z = (row.array() - row.maxCoeff()) / temperature;
      const Eigen::RowVectorXd p = z.array().exp();
      double u = uniform01(rng) * p.sum();
      int pick = static_cast<int>(p.size()) - 1;
      for (Eigen::Index k = 0; k < p.size(); ++k) {
        u -= p(k);
        if (u < 0) {
          pick = static_cast<int>(k);
          break;
        }
      }
      out.push_back(pick);
    }
    return out;
  }

  MatrixT<S> sample_poses(const MatrixT<S>& audio, const RowVectorT<S>& s, double temperature, std::uint64_t seed,
                          bool greedy = false) const {
    return decode_indices(sample_indices(audio, s, temperature, seed, greedy));
  }

 private:
  void check_pose(Eigen::Index rows, Eigen::Index cols) const {
    if (cols != kPoseDim) throw std::invalid_argument("pose track must have 6 coefficients per frame");
    if (rows < cfg_.window || rows % cfg_.window != 0) {
      throw std::invalid_argument("pose length " + std::to_string(rows) + " is not divisible by window " +
                                  std::to_string(cfg_.window));
    }
  }

  PoseConfig cfg_;
  ad::ParamSet<S> vq_, pred_;
  ad::Linear<S> enc1_, enc2_, dec1_, dec2_;
  ad::Parameter<S>* codebook_ = nullptr;
  ad::Linear<S> audio_in_, style_in_, logits_;
  std::vector<ad::EncoderLayer<S>> fuse_;
  std::vector<ad::DecoderLayer<S>> decoder_;
  ad::Parameter<S>* start_ = nullptr;
  ad::Parameter<S>* embed_ = nullptr;
};

struct PoseTrainConfig {
  int codebook_epochs = 100;
  int predictor_epochs = 100;
  int batch = 8;
  ad::AdamConfig adam{};
  int dead_after = 200;
  std::uint64_t seed = 0;
};

/// Two stages: the VQ autoencoder, then the index predictor with the codebook frozen.
/// `styles[i]` is the style code conditioning clip i.
template <class S>
TrainLog train_pose_generator(PoseGenerator<S>& model, const ClipSet& train, const std::vector<RowVectorT<S>>& styles,
                              const PoseTrainConfig& cfg, const std::function<void(const nlohmann::json&)>& on_epoch = {}) {
  TrainLog log;
  auto rng = derive_rng(cfg.seed, 0x9050);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  {
    ad::Adam<S> opt(cfg.adam);
    const int n = model.config().codebook_size;
    std::vector<long> last_used(static_cast<std::size_t>(n), 0);
    long step = 0;
    for (int epoch = 0; epoch < cfg.codebook_epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      double sum = 0;
      int batches = 0;
      for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.batch)) {
        ad::Tape<S> t;
        std::vector<ad::Var<S>> losses;
        std::vector<MatrixT<S>> feats;
        const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(cfg.batch));
        for (std::size_t i = b0; i < b1; ++i) {
          std::vector<int> idx;
          MatrixT<S> f;
          losses.push_back(model.vq_loss(t, train[order[i]].pose.template cast<S>(), &idx, &f));
          for (int k : idx) last_used[static_cast<std::size_t>(k)] = step + 1;
          feats.push_back(std::move(f));
        }
        const ad::Var<S> loss = ad::scale(ad::sum(ad::concat_rows(losses)), S(1) / static_cast<S>(losses.size()));
        t.backward(loss);
        opt.step(model.codebook_params());
        ++step;
        std::normal_distribution<double> noise(0.0, 0.01);
        for (int k = 0; k < n; ++k) {
          if (step - last_used[static_cast<std::size_t>(k)] < cfg.dead_after) continue;
          const MatrixT<S>& f = feats[uniform_index(rng, feats.size())];
          const auto row = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(f.rows())));
          for (Eigen::Index j = 0; j < f.cols(); ++j) model.codebook().value(k, j) = f(row, j) + static_cast<S>(noise(rng));
          opt.reset_row(model.codebook_params(), model.codebook(), k);
          last_used[static_cast<std::size_t>(k)] = step;
        }
        sum += loss.item();
        ++batches;
      }
      nlohmann::json rec{{"stage", "codebook"}, {"epoch", epoch + 1}, {"loss", sum / batches}};
      log.push_back(rec);
      if (on_epoch) on_epoch(rec);
    }
  }
  if (cfg.predictor_epochs <= 0) return log;
  model.codebook_params().set_frozen(true);
  std::vector<std::vector<int>> targets;
  for (const auto& c : train) targets.push_back(model.encode_indices(c.pose.template cast<S>()));
  ad::Adam<S> opt(cfg.adam);
  for (int epoch = 0; epoch < cfg.predictor_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double sum = 0;
    int batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.batch)) {
      ad::Tape<S> t;
      std::vector<ad::Var<S>> losses;
      const std::size_t b1 = std::min(order.size(), b0 + static_cast<std::size_t>(cfg.batch));
      for (std::size_t i = b0; i < b1; ++i) {
        const std::size_t c = order[i];
        const ad::Var<S> ctx = model.fuse(t, t.constant(train[c].audio.template cast<S>()), t.constant(styles[c]));
        losses.push_back(ad::cross_entropy(model.teacher_forced(t, ctx, targets[c]), targets[c]));
      }
      const ad::Var<S> loss = ad::scale(ad::sum(ad::concat_rows(losses)), S(1) / static_cast<S>(losses.size()));
      t.backward(loss);
      opt.step(model.predictor_params());
      sum += loss.item();
      ++batches;
    }
    nlohmann::json rec{{"stage", "predictor"}, {"epoch", epoch + 1}, {"loss", sum / batches}};
    log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  model.codebook_params().set_frozen(false);
  return log;
}

/// Held-out teacher-forced top-1 accuracy of the index predictor.
template <class S>
double pose_index_accuracy(const PoseGenerator<S>& model, const ClipSet& clips, const std::vector<RowVectorT<S>>& styles) {
  int correct = 0, total = 0;
  for (std::size_t c = 0; c < clips.size(); ++c) {
    const std::vector<int> target = model.encode_indices(clips[c].pose.template cast<S>());
    ad::Tape<S> t;
    const ad::Var<S> ctx = model.fuse(t, t.constant(clips[c].audio.template cast<S>()), t.constant(styles[c]));
    const MatrixT<S> logits = model.teacher_forced(t, ctx, target).value();
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      Eigen::Index best;
      logits.row(r).maxCoeff(&best);
      correct += static_cast<int>(best) == target[static_cast<std::size_t>(r)] ? 1 : 0;
      ++total;
    }
  }
  return total == 0 ? 0.0 : static_cast<double>(correct) / total;
}

}  // namespace saas
