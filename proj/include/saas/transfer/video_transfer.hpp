#pragma once

#include "saas/motion/motion_stylizer.hpp"
#include "saas/transfer/blendshape.hpp"

namespace saas {

struct VideoTransferConfig {
  StylizerConfig core{};
  int conv_kernel = 5;
  int disc_hidden = 64;
  int disc_kernel = 5;
  int styles = 6;
};

struct VideoLossWeights {
  double alpha_cyc = 1.0;
  double alpha_trip = 1.0;
  double alpha_style1 = 0.1;
  double alpha_style2 = 0.05;
  double margin = 0.2;
};

/// Per-frame mean of |(beta - beta_hat) L|^2, L the 64 x 3 upper-minus-lower lip map.
template <class S>
ad::Var<S> mouth_loss(ad::Var<S> beta, ad::Var<S> beta_hat, const MatrixT<S>& lip_map) {
  if (beta.rows() != beta_hat.rows() || beta.cols() != beta_hat.cols()) {
    throw std::invalid_argument("mouth_loss: sequences differ in shape");
  }
  const ad::Var<S> d = ad::matmul(ad::sub(beta, beta_hat), beta.tape().constant(lip_map));
  return ad::scale(ad::sum(ad::mul(d, d)), S(1) / static_cast<S>(beta.rows()));
}

template <class S>
MatrixT<S> lip_map_of(const BlendshapeBasis& basis) {
  return basis.lip_map().cast<S>();
}

template <class S>
class VideoTransfer {
 public:
  VideoTransfer(const VideoTransferConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    auto rng = derive_rng(seed, 0x71);
    const int d = cfg_.core.d_z;
    enc_in_ = ad::Linear<S>(ps_, "video.enc.in", kExpressionDim, d, rng);
    enc_conv_ = ad::Conv1d<S>(ps_, "video.enc.conv", d, d, cfg_.conv_kernel, rng);
    core_ = std::make_unique<StylizerCore<S>>(ps_, "video", cfg_.core, rng);
  }

  const VideoTransferConfig& config() const noexcept { return cfg_; }
  ad::ParamSet<S>& params() noexcept { return ps_; }
  const ad::ParamSet<S>& params() const noexcept { return ps_; }
  StylizerCore<S>& core() noexcept { return *core_; }

  ad::Var<S> encode_video(ad::Tape<S>& t, ad::Var<S> beta) const {
    if (beta.rows() < 1 || beta.cols() != kExpressionDim) throw std::invalid_argument("encode_video: expected T x 64 coefficients");
    return enc_conv_(t, ad::relu(enc_in_(t, beta)));
  }

  ad::Var<S> transfer(ad::Tape<S>& t, ad::Var<S> beta, ad::Var<S> s) const {
    const ad::Var<S> z = encode_video(t, beta);
    return core_->decode(t, core_->stylize(t, z, s), s);
  }

  MatrixT<S> transfer(const MatrixT<S>& beta, const RowVectorT<S>& s) const {
    ad::Tape<S> t;
    return transfer(t, t.constant(beta), t.constant(s)).value();
  }

  /// ||beta - transfer(transfer(beta, s_t), s_r)||_2 (Frobenius norm over the sequence).
  ad::Var<S> cycle_loss(ad::Tape<S>& t, ad::Var<S> beta, ad::Var<S> s_t, ad::Var<S> s_r, ad::Var<S>* first = nullptr) const {
    const ad::Var<S> once = transfer(t, beta, s_t);
    if (first != nullptr) *first = once;
    return ad::l2_norm(ad::sub(beta, transfer(t, once, s_r)));
  }

 private:
  VideoTransferConfig cfg_;
  ad::ParamSet<S> ps_;
  ad::Linear<S> enc_in_;
  ad::Conv1d<S> enc_conv_;
  std::unique_ptr<StylizerCore<S>> core_;
};

template <class S>
struct VideoSample {
  MatrixT<S> source;
  RowVectorT<S> source_style;  // s_r, extracted once from the source
  RowVectorT<S> target_style;  // s_t
  RowVectorT<S> positive, negative;
  int target_label = 0;
};

inline const std::vector<std::string>& video_loss_terms() {
  static const std::vector<std::string> names{"mouth", "cyc", "trip", "style1", "style2"};
  return names;
}

/// L_mouth + a_cyc L_cyc + a_trip L_trip + a_style1 L_style1 + a_style2 L_style2; the style
/// terms supervise the first (source -> target) pass only.
template <class S>
MotionLoss<S> video_total_loss(ad::Tape<S>& t, const VideoTransfer<S>& model, const StyleDiscriminator<S>& disc,
                               const StyleExtractor<S>& extractor, const std::vector<VideoSample<S>>& batch,
                               const MatrixT<S>& lip_map, const VideoLossWeights& w) {
  if (batch.empty()) throw std::invalid_argument("video_total_loss: empty batch");
  MotionLoss<S> out;
  std::vector<ad::Var<S>> mouth, cyc;
  StyleSupervision<S> sup;
  const bool need_code = w.alpha_trip > 0 || w.alpha_style1 > 0;
  for (const auto& item : batch) {
    const ad::Var<S> src = t.constant(item.source);
    ad::Var<S> first;
    cyc.push_back(model.cycle_loss(t, src, t.constant(item.target_style), t.constant(item.source_style), &first));
    mouth.push_back(mouth_loss(src, first, lip_map));
    supervise_generated(t, extractor, disc, first, item.positive, item.negative, item.target_label, w.margin, need_code, sup);
    out.generated.push_back(first.value());
  }
  const S inv = S(1) / static_cast<S>(batch.size());
  const auto avg = [&](const std::vector<ad::Var<S>>& v) { return ad::scale(ad::sum(ad::concat_rows(v)), inv); };
  out.total = avg(mouth);
  out.components["mouth"] = out.total.item();
  const auto term = [&](const std::string& name, const std::vector<ad::Var<S>>& v, double alpha) {
    if (v.empty()) {
      out.components[name] = 0.0;
      return;
    }
    const ad::Var<S> l = avg(v);
    out.components[name] = l.item();
    if (alpha != 0) out.total = ad::add(out.total, ad::scale(l, static_cast<S>(alpha)));
  };
  term("cyc", cyc, w.alpha_cyc);
  term("trip", sup.trip, w.alpha_trip);
  term("style1", sup.style1, w.alpha_style1);
  term("style2", sup.style2, w.alpha_style2);
  return out;
}

struct VideoTrainConfig {
  int epochs = 300;
  int batch = 8;
  ad::AdamConfig adam{};
  VideoLossWeights weights{};
  std::uint64_t seed = 0;
};

/// Unpaired training on (source clip, random target-style clip) pairs.
template <class S>
TrainLog train_video_transfer(VideoTransfer<S>& model, StyleDiscriminator<S>& disc, StyleExtractor<S>& extractor,
                              const ClipSet& train, const BlendshapeBasis& basis, const VideoTrainConfig& cfg,
                              const std::function<void(const nlohmann::json&)>& on_epoch = {}) {
  TrainLog log;
  if (cfg.epochs <= 0) return log;
  extractor.params().set_frozen(true);
  const auto codes = clip_style_codes(extractor, train);
  const TripletSampler sampler(train);
  const MatrixT<S> lips = lip_map_of<S>(basis);
  auto rng = derive_rng(cfg.seed, 0x31);
  ad::Adam<S> gen_opt(cfg.adam), disc_opt(cfg.adam);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  long step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    std::map<std::string, double> sums;
    int batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.batch)) {
      std::vector<VideoSample<S>> batch;
      std::vector<MatrixT<S>> real;
      std::vector<int> labels;
      for (std::size_t i = b0; i < std::min(order.size(), b0 + static_cast<std::size_t>(cfg.batch)); ++i) {
        const std::size_t a = order[i];
        const std::size_t target = uniform_index(rng, train.size());
        VideoSample<S> item;
        item.source = train[a].expression.template cast<S>();
        item.source_style = codes[a];
        item.target_style = codes[target];
        item.target_label = train[target].style;
        item.positive = codes[sampler.positive(target, rng)];
        item.negative = codes[sampler.negative(target, rng)];
        real.push_back(train[target].expression.template cast<S>());
        labels.push_back(item.target_label);
        batch.push_back(std::move(item));
      }
      MotionLoss<S> loss = [&] {
        ad::Tape<S> t;
        MotionLoss<S> l = video_total_loss(t, model, disc, extractor, batch, lips, cfg.weights);
        t.backward(l.total);
        l.components["total"] = l.total.item();
        return l;
      }();
      disc.params().zero_grad();
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
