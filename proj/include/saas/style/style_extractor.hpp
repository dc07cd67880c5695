#pragma once

#include "saas/ad/nn.hpp"
#include "saas/core/rng.hpp"
#include "saas/core/window.hpp"
#include "saas/style/quantizer.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <optional>
#include <string>

namespace saas {

struct StyleConfig {
  int d_s = 256;
  int window = 8;
  int clip_len = 32;
  int codebook_size = 500;
  int layers = 2;
  int heads = 4;
  int ff = 0;  // 0 means 2 * d_s
  int styles = 6;
  bool use_codebook = true;
  bool local_attention = false;

  int tokens() const { return clip_len / window; }
  int ff_width() const { return ff > 0 ? ff : 2 * d_s; }

  void validate() const {
    if (d_s < 1 || window < 1 || clip_len < window || clip_len % window != 0) {
      throw std::invalid_argument("style config: clip_len " + std::to_string(clip_len) +
                                  " is not divisible by window " + std::to_string(window));
    }
    if (d_s % heads != 0) throw std::invalid_argument("style config: d_s must be divisible by heads");
    if (use_codebook && codebook_size < 2) throw std::invalid_argument("style config: codebook needs at least 2 entries");
    if (styles < 2) throw std::invalid_argument("style config: at least 2 style classes are required");
  }
};

struct StyleLossWeights {
  double alpha_trip = 1.0;
  double alpha_c = 0.1;
  double margin = 0.2;
};

template <class S>
struct StyleForward {
  ad::Var<S> f;     // tau x d_s encoder grid
  ad::Var<S> q_st;  // straight-through quantized grid (equals f without a codebook)
  std::vector<int> indices;
  MatrixT<S> q;
  ad::Var<S> s;  // 1 x d_s style code
};

template <class S>
class StyleExtractor {
 public:
  StyleExtractor(const StyleConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    auto rng = derive_rng(seed, 0x57);
    const int d = cfg_.d_s;
    in_ = ad::Linear<S>(ps_, "style.enc.in", kExpressionDim, d, rng);
    for (int l = 0; l < cfg_.layers; ++l) {
      layers_.emplace_back(ps_, "style.enc.layer" + std::to_string(l), d, cfg_.heads, cfg_.ff_width(), rng);
    }
    out_ = ad::Linear<S>(ps_, "style.enc.out", d, d, rng);
    if (cfg_.use_codebook) {
      const double half = 1.0 / cfg_.codebook_size;
      codebook_ = &ps_.add("style.codebook", cfg_.codebook_size, d, ad::Init::uniform, rng, half);
    }
    query_ = &ps_.add("style.pool.query", 1, d, ad::Init::normal, rng, 1.0 / std::sqrt(static_cast<double>(d)));
    key_ = ad::Linear<S>(ps_, "style.pool.key", d, d, rng);
    value_ = ad::Linear<S>(ps_, "style.pool.value", d, d, rng);
    dec1_ = ad::Linear<S>(ps_, "style.dec.hidden", d, d, rng);
    dec2_ = ad::Linear<S>(ps_, "style.dec.out", d, cfg_.window * kExpressionDim, rng);
    cls_ = ad::Linear<S>(ps_, "style.cls", d, cfg_.styles, rng);
    positions_ = ad::sinusoidal_positions<S>(cfg_.clip_len, d);
    if (cfg_.local_attention) mask_ = ad::block_mask<S>(cfg_.clip_len, cfg_.window);
  }

  StyleExtractor(const StyleExtractor&) = delete;
  StyleExtractor& operator=(const StyleExtractor&) = delete;
  StyleExtractor(StyleExtractor&&) noexcept = default;

  const StyleConfig& config() const noexcept { return cfg_; }
  ad::ParamSet<S>& params() noexcept { return ps_; }
  const ad::ParamSet<S>& params() const noexcept { return ps_; }
  bool has_codebook() const noexcept { return codebook_ != nullptr; }
  ad::Parameter<S>& codebook() const {
    if (codebook_ == nullptr) throw std::logic_error("style extractor has no codebook");
    return *codebook_;
  }
  ad::Linear<S>& encoder_output() { return out_; }

  /// tau x d_s feature grid of a T' x 64 clip.
  ad::Var<S> encode(ad::Tape<S>& t, ad::Var<S> clip) const {
    if (clip.cols() != kExpressionDim) {
      throw std::invalid_argument("encode_style: expected 64 coefficients per frame, got " + std::to_string(clip.cols()));
    }
    if (clip.rows() != cfg_.clip_len) {
      throw std::invalid_argument("encode_style: clip has " + std::to_string(clip.rows()) + " frames, expected " +
                                  std::to_string(cfg_.clip_len));
    }
    ad::Var<S> x = ad::add(in_(t, clip), t.constant(positions_));
    for (const auto& layer : layers_) x = layer(t, x, mask_ ? &*mask_ : nullptr);
    return ad::mean_row_groups(out_(t, x), cfg_.window);
  }

  Quantized<S> quantize_grid(const MatrixT<S>& f) const { return quantize<S, S>(f, codebook().value); }

  ad::Var<S> pool(ad::Tape<S>& t, ad::Var<S> tokens) const {
    const ad::Var<S> k = key_(t, tokens);
    const ad::Var<S> v = value_(t, tokens);
    const S inv = S(1) / std::sqrt(static_cast<S>(cfg_.d_s));
    const ad::Var<S> w = ad::softmax_rows(ad::scale(ad::matmul_nt(t.param(*query_), k), inv));
    return ad::matmul(w, v);
  }

  ad::Var<S> reconstruct(ad::Tape<S>& t, ad::Var<S> tokens) const {
    const ad::Var<S> h = dec2_(t, ad::relu(dec1_(t, tokens)));
    return ad::reshape(h, tokens.rows() * cfg_.window, kExpressionDim);
  }

  ad::Var<S> classify(ad::Tape<S>& t, ad::Var<S> s) const { return cls_(t, s); }

  StyleForward<S> forward(ad::Tape<S>& t, ad::Var<S> clip) const {
    StyleForward<S> out;
    out.f = encode(t, clip);
    if (codebook_ != nullptr) {
      Quantized<S> qz = quantize_grid(out.f.value());
      out.q = std::move(qz.values);
      out.indices = std::move(qz.indices);
      out.q_st = straight_through(out.f, out.q);
    } else {
      out.q = out.f.value();
      out.q_st = out.f;
    }
    out.s = pool(t, out.q_st);
    return out;
  }

  /// Style code of a clip of length >= T': mean over consecutive T'-windows (the last one end-aligned).
  ad::Var<S> extract(ad::Tape<S>& t, ad::Var<S> seq) const {
    if (seq.rows() < cfg_.clip_len) {
      throw std::invalid_argument("extract_style: clip of " + std::to_string(seq.rows()) +
                                  " frames is shorter than the style window " + std::to_string(cfg_.clip_len));
    }
    const auto starts = sliding_starts(seq.rows(), cfg_.clip_len, cfg_.clip_len);
    std::vector<ad::Var<S>> codes;
    for (Eigen::Index s0 : starts) codes.push_back(forward(t, ad::slice_rows(seq, s0, cfg_.clip_len)).s);
    if (codes.size() == 1) return codes.front();
    return ad::mean_rows(ad::concat_rows(codes));
  }

  RowVectorT<S> extract_style(const MatrixT<S>& seq) const {
    ad::Tape<S> t;
    return extract(t, t.constant(seq)).value();
  }

  /// Codebook indices selected by every T'-window of `seq` (same windows as extract).
  std::vector<int> token_indices(const MatrixT<S>& seq) const {
    std::vector<int> out;
    if (codebook_ == nullptr) return out;
    for (Eigen::Index s0 : sliding_starts(seq.rows(), cfg_.clip_len, cfg_.clip_len)) {
      ad::Tape<S> t;
      const auto f = encode(t, t.constant(seq.middleRows(s0, cfg_.clip_len)));
      const auto q = quantize_grid(f.value());
      out.insert(out.end(), q.indices.begin(), q.indices.end());
    }
    return out;
  }

  int predict_label(const MatrixT<S>& seq) const {
    ad::Tape<S> t;
    const ad::Var<S> logits = classify(t, extract(t, t.constant(seq)));
    Eigen::Index best;
    logits.value().row(0).maxCoeff(&best);
    return static_cast<int>(best);
  }

 private:
  StyleConfig cfg_;
  ad::ParamSet<S> ps_;
  ad::Linear<S> in_, out_;
  std::vector<ad::EncoderLayer<S>> layers_;
  ad::Parameter<S>* codebook_ = nullptr;
  ad::Parameter<S>* query_ = nullptr;
  ad::Linear<S> key_, value_, dec1_, dec2_, cls_;
  MatrixT<S> positions_;
  std::optional<MatrixT<S>> mask_;
};

/// One triplet item: anchor, positive (same label) and negative (different label) clips.
template <class S>
struct StyleTriplet {
  MatrixT<S> anchor, positive, negative;
  int label = 0, positive_label = 0, negative_label = 0;
};

template <class S>
struct StyleLoss {
  ad::Var<S> total;
  std::map<std::string, double> components;
  std::vector<std::vector<int>> indices;  // anchor token indices per item
  MatrixT<S> features;                    // stacked anchor features (for codebook re-seeding)
};

inline const std::vector<std::string>& style_loss_terms() {
  static const std::vector<std::string> names{"codebook", "commitment", "triplet", "classification", "reconstruction"};
  return names;
}

/// Five-term objective averaged over the batch:
/// mse(sg f, q) + mse(f, sg q) + a_trip * hinge + a_c * CE + mse(clip, D_s(q_st)).
template <class S>
StyleLoss<S> style_loss(ad::Tape<S>& t, const StyleExtractor<S>& model, const std::vector<StyleTriplet<S>>& batch,
                        const StyleLossWeights& w) {
  if (batch.empty()) throw std::invalid_argument("style_loss: empty batch");
  if (w.margin <= 0) throw std::invalid_argument("style_loss: triplet margin must be positive");
  std::vector<ad::Var<S>> cb, commit, trip, recon, codes;
  std::vector<int> labels;
  StyleLoss<S> out;
  std::vector<MatrixT<S>> feats;
  for (const auto& item : batch) {
    if (item.positive_label != item.label) throw std::invalid_argument("style_loss: positive clip has a different style label");
    if (item.negative_label == item.label) throw std::invalid_argument("style_loss: negative clip shares the anchor style label");
    const ad::Var<S> clip = t.constant(item.anchor);
    const StyleForward<S> a = model.forward(t, clip);
    const StyleForward<S> p = model.forward(t, t.constant(item.positive));
    const StyleForward<S> n = model.forward(t, t.constant(item.negative));
    if (model.has_codebook()) {
      cb.push_back(ad::mse(ad::stop_gradient(a.f), ad::gather_rows(t.param(model.codebook()), a.indices)));
      commit.push_back(ad::mse(a.f, t.constant(a.q)));
    }
    const ad::Var<S> dp = ad::l2_norm(ad::sub(a.s, p.s));
    const ad::Var<S> dn = ad::l2_norm(ad::sub(a.s, n.s));
    trip.push_back(ad::relu(ad::add_scalar(ad::sub(dp, dn), static_cast<S>(w.margin))));
    recon.push_back(ad::mse(clip, model.reconstruct(t, a.q_st)));
    codes.push_back(a.s);
    labels.push_back(item.label);
    out.indices.push_back(a.indices);
    feats.push_back(a.f.value());
  }
  const S inv = S(1) / static_cast<S>(batch.size());
  const auto avg = [&](const std::vector<ad::Var<S>>& v) { return ad::scale(ad::sum(ad::concat_rows(v)), inv); };
  std::vector<std::pair<std::string, ad::Var<S>>> terms;
  if (model.has_codebook()) {
    terms.emplace_back("codebook", avg(cb));
    terms.emplace_back("commitment", avg(commit));
  }
  terms.emplace_back("triplet", ad::scale(avg(trip), static_cast<S>(w.alpha_trip)));
  terms.emplace_back("classification",
                     ad::scale(ad::cross_entropy(model.classify(t, ad::concat_rows(codes)), labels), static_cast<S>(w.alpha_c)));
  terms.emplace_back("reconstruction", avg(recon));
  for (const auto& name : style_loss_terms()) out.components[name] = 0.0;
  out.total = terms.front().second;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    out.components[terms[i].first] = static_cast<double>(terms[i].second.item());
    if (i > 0) out.total = ad::add(out.total, terms[i].second);
  }
  Eigen::Index rows = 0;
  for (const auto& f : feats) rows += f.rows();
  out.features.resize(rows, model.config().d_s);
  rows = 0;
  for (const auto& f : feats) {
    out.features.middleRows(rows, f.rows()) = f;
    rows += f.rows();
  }
  return out;
}

}  // namespace saas
