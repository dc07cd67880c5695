#pragma once

// Independent re-statements of training objectives, shared by unit and acceptance tests.

#include "gradcheck.hpp"

#include "saas/style/style_extractor.hpp"

#include <array>

namespace saas::testing {

/// Quantizer state of one clip at the base point: features, chosen rows and their indices.
struct FrozenTokens {
  ad::Mat<double> f0, q0;
  std::vector<int> indices;
};

inline FrozenTokens freeze_tokens(const StyleExtractor<double>& model, const ad::Mat<double>& clip) {
  ad::Tape<double> t;
  const auto fw = model.forward(t, t.constant(clip));
  return {fw.f.value(), fw.q, fw.indices};
}

/// The five-term style objective with every stop-gradient replaced by its base-point value:
/// q_st = f + (q0 - f0), sg[f] = f0, sg[q] = q0, indices fixed. Its ordinary derivative is the
/// gradient the straight-through estimator is defined to produce.
inline double surrogate_style_loss(const StyleExtractor<double>& model, const std::vector<StyleTriplet<double>>& batch,
                                   const std::vector<std::array<FrozenTokens, 3>>& frozen, const StyleLossWeights& w) {
  ad::Tape<double> t;
  double cb = 0, commit = 0, trip = 0, recon = 0;
  std::vector<ad::Var<double>> codes;
  std::vector<int> labels;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const std::array<const ad::Mat<double>*, 3> clips{&batch[i].anchor, &batch[i].positive, &batch[i].negative};
    std::array<ad::Var<double>, 3> s;
    for (int k = 0; k < 3; ++k) {
      const FrozenTokens& fz = frozen[i][static_cast<std::size_t>(k)];
      const ad::Var<double> f = model.encode(t, t.constant(*clips[static_cast<std::size_t>(k)]));
      const ad::Var<double> q_st = ad::add(f, t.constant(fz.q0 - fz.f0));
      s[static_cast<std::size_t>(k)] = model.pool(t, q_st);
      if (k == 0) {
        if (model.has_codebook()) {
          ad::Mat<double> q(fz.indices.size(), f.cols());
          for (std::size_t r = 0; r < fz.indices.size(); ++r) q.row(static_cast<Eigen::Index>(r)) = model.codebook().value.row(fz.indices[r]);
          cb += (fz.f0 - q).array().square().mean();
          commit += (f.value() - fz.q0).array().square().mean();
        }
        recon += (*clips[0] - model.reconstruct(t, q_st).value()).array().square().mean();
      }
    }
    const double dp = (s[0].value() - s[1].value()).norm();
    const double dn = (s[0].value() - s[2].value()).norm();
    trip += std::max(0.0, dp - dn + w.margin);
    codes.push_back(s[0]);
    labels.push_back(batch[i].label);
  }
  const ad::Mat<double> logits = model.classify(t, ad::concat_rows(codes)).value();
  double ce = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    ce += m + std::log((logits.row(r).array() - m).exp().sum()) - logits(r, labels[static_cast<std::size_t>(r)]);
  }
  const auto n = static_cast<double>(batch.size());
  return cb / n + commit / n + w.alpha_trip * trip / n + w.alpha_c * ce / n + recon / n;
}

/// Max relative error between the tape gradient of style_loss and central differences of the
/// stop-gradient surrogate, over every parameter entry.
inline double style_loss_gradcheck(StyleExtractor<double>& model, const std::vector<StyleTriplet<double>>& batch,
                                   const StyleLossWeights& w, double h = 1e-6) {
  std::vector<std::array<FrozenTokens, 3>> frozen;
  for (const auto& item : batch) {
    frozen.push_back({freeze_tokens(model, item.anchor), freeze_tokens(model, item.positive), freeze_tokens(model, item.negative)});
  }
  return gradcheck_params_split(
      model.params(), [&](ad::Tape<double>& t) { return style_loss(t, model, batch, w).total; },
      [&] { return surrogate_style_loss(model, batch, frozen, w); }, h);
}

}  // namespace saas::testing
