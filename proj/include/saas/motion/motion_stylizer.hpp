#pragma once

#include "saas/core/clip.hpp"
#include "saas/motion/soft_dtw.hpp"
#include "saas/motion/stylizer_core.hpp"
#include "saas/style/style_training.hpp"

namespace saas {

struct MotionConfig {
  StylizerConfig core{};
  int audio_dim = 28;
  int conv_kernel = 5;
  int disc_hidden = 64;
  int disc_kernel = 5;
  int styles = 6;
};

struct MotionLossWeights {
  double alpha_trip = 1.0;
  double alpha_style1 = 0.1;
  double alpha_style2 = 0.05;
  double margin = 0.2;
  double gamma_dtw = 0.1;
};

template <class S>
class MotionStylizer {
 public:
  MotionStylizer(const MotionConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    auto rng = derive_rng(seed, 0x70);
    const int d = cfg_.core.d_z;
    enc_in_ = ad::Linear<S>(ps_, "motion.enc.in", cfg_.audio_dim + kExpressionDim, d, rng);
    enc_conv_ = ad::Conv1d<S>(ps_, "motion.enc.conv", d, d, cfg_.conv_kernel, rng);
    core_ = std::make_unique<StylizerCore<S>>(ps_, "motion", cfg_.core, rng);
  }

  const MotionConfig& config() const noexcept { return cfg_; }
  ad::ParamSet<S>& params() noexcept { return ps_; }
  const ad::ParamSet<S>& params() const noexcept { return ps_; }
  StylizerCore<S>& core() noexcept { return *core_; }
  const StylizerCore<S>& core() const noexcept { return *core_; }

  /// z^a: the reference frame is concatenated to every audio frame before encoding.
  ad::Var<S> encode_audio(ad::Tape<S>& t, ad::Var<S> audio, ad::Var<S> reference) const {
    if (audio.rows() < 1) throw std::invalid_argument("encode_audio: empty audio");
    if (audio.cols() != cfg_.audio_dim) {
      throw std::invalid_argument("encode_audio: audio width " + std::to_string(audio.cols()) + " does not match " +
                                  std::to_string(cfg_.audio_dim));
    }
    if (reference.rows() != 1 || reference.cols() != kExpressionDim) {
      throw std::invalid_argument("encode_audio: reference must be a single 64-coefficient frame");
    }
    const ad::Var<S> x = ad::concat_cols<S>({audio, ad::broadcast_rows(reference, audio.rows())});
    return enc_conv_(t, ad::relu(enc_in_(t, x)));
  }

  ad::Var<S> generate(ad::Tape<S>& t, ad::Var<S> audio, ad::Var<S> reference, ad::Var<S> s) const {
    const ad::Var<S> z = encode_audio(t, audio, reference);
    return core_->decode(t, core_->stylize(t, z, s), s);
  }

  MatrixT<S> generate(const MatrixT<S>& audio, const RowVectorT<S>& reference, const RowVectorT<S>& s) const {
    ad::Tape<S> t;
    return generate(t, t.constant(audio), t.constant(reference), t.constant(s)).value();
  }

 private:
  MotionConfig cfg_;
  ad::ParamSet<S> ps_;
  ad::Linear<S> enc_in_;
  ad::Conv1d<S> enc_conv_;
  std::unique_ptr<StylizerCore<S>> core_;
};

/// One self-supervised training item.
template <class S>
struct MotionSample {
  MatrixT<S> audio;        // T x d_a
  RowVectorT<S> reference;  // 1 x 64
  MatrixT<S> target;       // T x 64
  RowVectorT<S> style;     // s from the style clip
  RowVectorT<S> positive;  // style code of another clip with the target label
  RowVectorT<S> negative;  // style code of a clip with a different label
  int label = 0;
};

template <class S>
struct MotionLoss {
  ad::Var<S> total;
  std::map<std::string, double> components;  // unweighted terms
  std::vector<MatrixT<S>> generated;
};

inline const std::vector<std::string>& motion_loss_terms() {
  static const std::vector<std::string> names{"rec", "trip", "style1", "style2"};
  return names;
}

/// Shared generator-side adversarial, triplet and classification terms on generated sequences.
template <class S>
struct StyleSupervision {
  std::vector<ad::Var<S>> trip, style1, style2;
};

template <class S>
void supervise_generated(ad::Tape<S>& t, const StyleExtractor<S>& extractor, const StyleDiscriminator<S>& disc,
                         ad::Var<S> generated, const RowVectorT<S>& positive, const RowVectorT<S>& negative, int label,
                         double margin, bool need_code, StyleSupervision<S>& out) {
  if (need_code) {
    const ad::Var<S> code = extractor.extract(t, generated);
    const ad::Var<S> dp = ad::l2_norm(ad::sub(code, t.constant(positive)));
    const ad::Var<S> dn = ad::l2_norm(ad::sub(code, t.constant(negative)));
    out.trip.push_back(ad::relu(ad::add_scalar(ad::sub(dp, dn), static_cast<S>(margin))));
    out.style1.push_back(ad::cross_entropy(extractor.classify(t, code), {label}));
  }
  out.style2.push_back(ad::scale(disc.score(t, generated, label), S(-1)));
}

/// L_total = L_rec + a_trip L_trip + a_style1 L_style1 + a_style2 L_style2, averaged over the batch.
/// L_rec is soft-DTW divided by the sequence length.
template <class S>
MotionLoss<S> motion_total_loss(ad::Tape<S>& t, const MotionStylizer<S>& model, const StyleDiscriminator<S>& disc,
                                const StyleExtractor<S>& extractor, const std::vector<MotionSample<S>>& batch,
                                const MotionLossWeights& w) {
  if (batch.empty()) throw std::invalid_argument("motion_total_loss: empty batch");
  MotionLoss<S> out;
  std::vector<ad::Var<S>> rec;
  StyleSupervision<S> sup;
  const bool need_code = w.alpha_trip > 0 || w.alpha_style1 > 0;
  for (const auto& item : batch) {
    const ad::Var<S> gen = model.generate(t, t.constant(item.audio), t.constant(item.reference), t.constant(item.style));
    rec.push_back(ad::scale(soft_dtw(gen, t.constant(item.target), w.gamma_dtw), S(1) / static_cast<S>(gen.rows())));
    supervise_generated(t, extractor, disc, gen, item.positive, item.negative, item.label, w.margin, need_code, sup);
    out.generated.push_back(gen.value());
  }
  const S inv = S(1) / static_cast<S>(batch.size());
  const auto avg = [&](const std::vector<ad::Var<S>>& v) { return ad::scale(ad::sum(ad::concat_rows(v)), inv); };
  const ad::Var<S> l_rec = avg(rec);
  out.total = l_rec;
  out.components["rec"] = l_rec.item();
  const auto term = [&](const std::string& name, const std::vector<ad::Var<S>>& v, double alpha) {
    if (v.empty()) {
      out.components[name] = 0.0;
      return;
    }
    const ad::Var<S> l = avg(v);
    out.components[name] = l.item();
    if (alpha != 0) out.total = ad::add(out.total, ad::scale(l, static_cast<S>(alpha)));
  };
  term("trip", sup.trip, w.alpha_trip);
  term("style1", sup.style1, w.alpha_style1);
  term("style2", sup.style2, w.alpha_style2);
  return out;
}

/// Hinge loss for the discriminator on real (target) and generated sequences.
template <class S>
ad::Var<S> discriminator_loss(ad::Tape<S>& t, const StyleDiscriminator<S>& disc, const std::vector<MatrixT<S>>& real,
                              const std::vector<MatrixT<S>>& fake, const std::vector<int>& labels) {
  std::vector<ad::Var<S>> terms;
  for (std::size_t i = 0; i < real.size(); ++i) {
    terms.push_back(ad::relu(ad::add_scalar(ad::scale(disc.score(t, t.constant(real[i]), labels[i]), S(-1)), S(1))));
    terms.push_back(ad::relu(ad::add_scalar(disc.score(t, t.constant(fake[i]), labels[i]), S(1))));
  }
  return ad::scale(ad::sum(ad::concat_rows(terms)), S(1) / static_cast<S>(real.size()));
}

struct MotionTrainConfig {
  int epochs = 500;
  int batch = 8;
  ad::AdamConfig adam{};
  MotionLossWeights weights{};
  std::uint64_t seed = 0;
};

/// Style codes (full-clip extraction) for every clip, computed once with the frozen extractor.
template <class S>
std::vector<RowVectorT<S>> clip_style_codes(const StyleExtractor<S>& extractor, const ClipSet& clips) {
  std::vector<RowVectorT<S>> out;
  out.reserve(clips.size());
  for (const auto& c : clips) out.push_back(extractor.extract_style(c.expression.template cast<S>()));
  return out;
}

/// Pairing for self-supervision: the style clip is another recording of the same speaker and
/// style, the reference frame is frame 0 of another clip of the same speaker.
class PairingIndex {
 public:
  explicit PairingIndex(const ClipSet& clips) : clips_(clips), triplets_(clips) {
    for (std::size_t i = 0; i < clips.size(); ++i) {
      same_speaker_style_[{clips[i].speaker, clips[i].style}].push_back(i);
      same_speaker_[clips[i].speaker].push_back(i);
    }
  }

  std::size_t style_source(std::size_t i, std::mt19937_64& rng) const { return other(same_speaker_style_.at({clips_[i].speaker, clips_[i].style}), i, rng); }
  std::size_t reference(std::size_t i, std::mt19937_64& rng) const { return other(same_speaker_.at(clips_[i].speaker), i, rng); }
  const TripletSampler& triplets() const { return triplets_; }

 private:
  static std::size_t other(const std::vector<std::size_t>& pool, std::size_t self, std::mt19937_64& rng) {
    if (pool.size() < 2) return self;
    for (;;) {
      const std::size_t j = pool[uniform_index(rng, pool.size())];
      if (j != self) return j;
    }
  }

  const ClipSet& clips_;
  TripletSampler triplets_;
  std::map<std::pair<int, int>, std::vector<std::size_t>> same_speaker_style_;
  std::map<int, std::vector<std::size_t>> same_speaker_;
};

/// Alternating 1:1 generator/discriminator training with the style extractor frozen.
template <class S>
TrainLog train_motion_stylizer(MotionStylizer<S>& model, StyleDiscriminator<S>& disc, StyleExtractor<S>& extractor,
                               const ClipSet& train, const MotionTrainConfig& cfg,
                               const std::function<void(const nlohmann::json&)>& on_epoch = {}) {
  TrainLog log;
  if (cfg.epochs <= 0) return log;
  extractor.params().set_frozen(true);
  const auto codes = clip_style_codes(extractor, train);
  const PairingIndex pairs(train);
  auto rng = derive_rng(cfg.seed, 0x30);
  ad::Adam<S> gen_opt(cfg.adam), disc_opt(cfg.adam);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    std::map<std::string, double> sums;
    int batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.batch)) {
      std::vector<MotionSample<S>> batch;
      std::vector<MatrixT<S>> real;
      std::vector<int> labels;
      for (std::size_t i = b0; i < std::min(order.size(), b0 + static_cast<std::size_t>(cfg.batch)); ++i) {
        const std::size_t a = order[i];
        MotionSample<S> item;
        item.audio = train[a].audio.template cast<S>();
        item.target = train[a].expression.template cast<S>();
        item.reference = train[pairs.reference(a, rng)].expression.row(0).template cast<S>();
        item.style = codes[pairs.style_source(a, rng)];
        item.positive = codes[pairs.triplets().positive(a, rng)];
        item.negative = codes[pairs.triplets().negative(a, rng)];
        item.label = train[a].style;
        real.push_back(item.target);
        labels.push_back(item.label);
        batch.push_back(std::move(item));
      }
      MotionLoss<S> loss = [&] {
        ad::Tape<S> t;
        MotionLoss<S> l = motion_total_loss(t, model, disc, extractor, batch, cfg.weights);
        t.backward(l.total);
        l.components["total"] = l.total.item();
        return l;
      }();
      disc.params().zero_grad();  // generator step must not leak into the discriminator
      gen_opt.step(model.params());
      double d_loss = 0;
      {
        ad::Tape<S> t;
        const ad::Var<S> l = discriminator_loss(t, disc, real, loss.generated, labels);
        d_loss = l.item();
        t.backward(l);
        disc_opt.step(disc.params());
      }
      model.params().zero_grad();
      ++step;
      for (const auto& [k, v] : loss.components) sums[k] += v;
      sums["disc"] += d_loss;
      ++batches;
    }
    nlohmann::json rec{{"epoch", epoch + 1}, {"step", step}};
    for (const auto& [k, v] : sums) rec[k] = v / batches;
    log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return log;
}

}  // namespace saas
