#pragma once

// Residual stylization shared by the audio- and video-driven models:
// z^s = phi_c(z) + phi_s(z, s, H(s)), then D([z^s, s]) -> 64 coefficients.

#include "saas/ad/nn.hpp"
#include "saas/core/rng.hpp"
#include "saas/core/types.hpp"

namespace saas {

struct StylizerConfig {
  int d_z = 256;
  int d_s = 256;
  int rank = 4;
  int hyper_hidden = 128;
  int canonical_layers = 2;
  int style_layers = 6;
  int modulated_layers = 4;  // the middle layers of the style branch
  bool use_hyper = true;

  void validate() const {
    if (d_z < 1 || d_s < 1 || rank < 1 || hyper_hidden < 1) throw std::invalid_argument("stylizer config: widths must be positive");
    if (canonical_layers < 1) throw std::invalid_argument("stylizer config: canonical branch needs a layer");
    if (style_layers < modulated_layers + 2 || modulated_layers < 0) {
      throw std::invalid_argument("stylizer config: style branch must have unmodulated first and last layers");
    }
  }
  int first_modulated() const { return (style_layers - modulated_layers) / 2; }
};

/// Per-layer low-rank offsets produced by the hypernetwork: dW_l = scale * U_l V_l.
template <class S>
struct WeightOffsets {
  std::vector<ad::Var<S>> u, v, delta;
};

template <class S>
class StylizerCore {
 public:
  StylizerCore(ad::ParamSet<S>& ps, const std::string& name, const StylizerConfig& cfg, std::mt19937_64& rng) : cfg_(cfg) {
    cfg_.validate();
    const int d = cfg_.d_z;
    for (int l = 0; l < cfg_.canonical_layers; ++l) canonical_.emplace_back(ps, name + ".canon.lstm" + std::to_string(l), d, d, rng);
    canonical_head_ = ad::Linear<S>(ps, name + ".canon.head", d, d, rng);
    for (int l = 0; l < cfg_.style_layers; ++l) {
      style_.emplace_back(ps, name + ".style.lstm" + std::to_string(l), l == 0 ? d + cfg_.d_s : d, d, rng);
    }
    style_head_ = ad::Linear<S>(ps, name + ".style.head", d, d, rng, ad::Init::zeros);
    if (cfg_.use_hyper) {
      hyper_in_ = ad::Linear<S>(ps, name + ".hyper.in", cfg_.d_s, cfg_.hyper_hidden, rng);
      const Eigen::Index m = 2 * d, n = 4 * d;
      per_layer_ = cfg_.rank * (m + n);
      hyper_out_ = ad::Linear<S>(ps, name + ".hyper.out", cfg_.hyper_hidden, per_layer_ * cfg_.modulated_layers, rng);
      scale_ = &ps.add(name + ".hyper.scale", 1, 1, ad::Init::zeros, rng);
    }
    dec1_ = ad::Linear<S>(ps, name + ".dec.hidden", d + cfg_.d_s, d, rng);
    dec2_ = ad::Linear<S>(ps, name + ".dec.out", d, kExpressionDim, rng);
  }

  const StylizerConfig& config() const noexcept { return cfg_; }
  ad::Linear<S>& hyper_output() { return hyper_out_; }
  ad::Linear<S>& style_head() { return style_head_; }
  ad::Parameter<S>* hyper_scale() const { return scale_; }

  WeightOffsets<S> hyper_offsets(ad::Tape<S>& t, ad::Var<S> s) const {
    WeightOffsets<S> out;
    if (!cfg_.use_hyper) return out;
    check_style(s);
    const ad::Var<S> h = hyper_out_(t, ad::relu(hyper_in_(t, s)));
    const Eigen::Index m = 2 * cfg_.d_z, n = 4 * cfg_.d_z;
    const ad::Var<S> scale = t.param(*scale_);
    for (int l = 0; l < cfg_.modulated_layers; ++l) {
      const Eigen::Index off = l * per_layer_;
      out.u.push_back(ad::reshape(ad::slice_cols(h, off, m * cfg_.rank), m, cfg_.rank));
      out.v.push_back(ad::reshape(ad::slice_cols(h, off + m * cfg_.rank, cfg_.rank * n), cfg_.rank, n));
      out.delta.push_back(ad::scale_by(ad::matmul(out.u.back(), out.v.back()), scale));
    }
    return out;
  }

  ad::Var<S> canonical(ad::Tape<S>& t, ad::Var<S> z) const {
    check_latent(z);
    ad::Var<S> h = z;
    for (const auto& layer : canonical_) h = layer(t, h);
    return canonical_head_(t, h);
  }

  ad::Var<S> style_branch(ad::Tape<S>& t, ad::Var<S> z, ad::Var<S> s, const WeightOffsets<S>& offsets) const {
    check_latent(z);
    check_style(s);
    ad::Var<S> h = ad::concat_cols<S>({z, ad::broadcast_rows(s, z.rows())});
    const int first = cfg_.first_modulated();
    for (int l = 0; l < cfg_.style_layers; ++l) {
      const int k = l - first;
      if (cfg_.use_hyper && k >= 0 && k < cfg_.modulated_layers) {
        h = style_[static_cast<std::size_t>(l)](t, h, offsets.delta[static_cast<std::size_t>(k)]);
      } else {
        h = style_[static_cast<std::size_t>(l)](t, h);
      }
    }
    return style_head_(t, h);
  }

  ad::Var<S> stylize(ad::Tape<S>& t, ad::Var<S> z, ad::Var<S> s) const {
    return ad::add(canonical(t, z), style_branch(t, z, s, hyper_offsets(t, s)));
  }

  ad::Var<S> decode(ad::Tape<S>& t, ad::Var<S> zs, ad::Var<S> s) const {
    check_latent(zs);
    const ad::Var<S> x = ad::concat_cols<S>({zs, ad::broadcast_rows(s, zs.rows())});
    return dec2_(t, ad::relu(dec1_(t, x)));
  }

 private:
  void check_latent(ad::Var<S> z) const {
    if (z.cols() != cfg_.d_z) {
      throw std::invalid_argument("stylizer: latent width " + std::to_string(z.cols()) + " does not match d_z " +
                                  std::to_string(cfg_.d_z));
    }
  }
  void check_style(ad::Var<S> s) const {
    if (s.rows() != 1 || s.cols() != cfg_.d_s) throw std::invalid_argument("stylizer: style code must be 1 x d_s");
  }

  StylizerConfig cfg_;
  std::vector<ad::LstmLayer<S>> canonical_, style_;
  ad::Linear<S> canonical_head_, style_head_, hyper_in_, hyper_out_, dec1_, dec2_;
  ad::Parameter<S>* scale_ = nullptr;
  Eigen::Index per_layer_ = 0;
};

/// Class-conditional temporal discriminator with a projection term:
/// score = w . phi(x) + b + e_y . phi(x), phi = time-mean of conv features.
template <class S>
class StyleDiscriminator {
 public:
  StyleDiscriminator(int hidden, int classes, int kernel, std::uint64_t seed) : classes_(classes) {
    auto rng = derive_rng(seed, 0xd15c);
    in_ = ad::Linear<S>(ps_, "disc.in", kExpressionDim, hidden, rng);
    conv1_ = ad::Conv1d<S>(ps_, "disc.conv1", hidden, hidden, kernel, rng);
    conv2_ = ad::Conv1d<S>(ps_, "disc.conv2", hidden, hidden, kernel, rng);
    out_ = ad::Linear<S>(ps_, "disc.out", hidden, 1, rng);
    embed_ = &ps_.add("disc.embed", classes, hidden, ad::Init::normal, rng, 0.1);
  }

  ad::ParamSet<S>& params() noexcept { return ps_; }

  ad::Var<S> score(ad::Tape<S>& t, ad::Var<S> seq, int label) const {
    if (label < 0 || label >= classes_) throw std::invalid_argument("discriminator: class label out of range");
    const S slope = S(0.2);
    ad::Var<S> h = ad::leaky_relu(in_(t, seq), slope);
    h = ad::leaky_relu(conv1_(t, h), slope);
    h = ad::leaky_relu(conv2_(t, h), slope);
    const ad::Var<S> phi = ad::mean_rows(h);
    const ad::Var<S> e = ad::gather_rows(t.param(*embed_), {label});
    return ad::add(out_(t, phi), ad::sum(ad::mul(phi, e)));
  }

 private:
  int classes_;
  ad::ParamSet<S> ps_;
  ad::Linear<S> in_, out_;
  ad::Conv1d<S> conv1_, conv2_;
  ad::Parameter<S>* embed_ = nullptr;
};

}  // namespace saas
