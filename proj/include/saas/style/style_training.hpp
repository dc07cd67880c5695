#pragma once

#include "saas/core/clip.hpp"
#include "saas/style/style_extractor.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <functional>
#include <numeric>

namespace saas {

struct StyleTrainConfig {
  int epochs = 200;
  int batch = 8;
  ad::AdamConfig adam{};
  StyleLossWeights weights{};
  int dead_after = 200;
  double reseed_noise = 0.01;
  std::uint64_t seed = 0;
};

using TrainLog = std::vector<nlohmann::json>;

/// Random T'-crop of a clip's expression track.
inline Matrix random_crop(const Matrix& seq, int len, std::mt19937_64& rng) {
  if (seq.rows() < len) throw std::invalid_argument("random_crop: clip shorter than crop length");
  const auto start = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(seq.rows() - len + 1)));
  return seq.middleRows(start, len);
}

/// Triplet partners: a different clip with the same label, and a clip with a uniformly
/// random different label.
class TripletSampler {
 public:
  explicit TripletSampler(const ClipSet& clips) : clips_(clips) {
    for (std::size_t i = 0; i < clips.size(); ++i) by_label_[clips[i].style].push_back(i);
    if (by_label_.size() < 2) throw std::invalid_argument("triplet sampling needs at least two style labels");
    for (const auto& [label, members] : by_label_) labels_.push_back(label);
  }

  std::size_t positive(std::size_t anchor, std::mt19937_64& rng) const {
    const auto& same = by_label_.at(clips_[anchor].style);
    if (same.size() < 2) return anchor;
    for (;;) {
      const std::size_t j = same[uniform_index(rng, same.size())];
      if (j != anchor) return j;
    }
  }

  std::size_t negative(std::size_t anchor, std::mt19937_64& rng) const {
    const int own = clips_[anchor].style;
    int label = own;
    while (label == own) label = labels_[uniform_index(rng, labels_.size())];
    const auto& pool = by_label_.at(label);
    return pool[uniform_index(rng, pool.size())];
  }

 private:
  const ClipSet& clips_;
  std::map<int, std::vector<std::size_t>> by_label_;
  std::vector<int> labels_;
};

/// Joint training of encoder, codebook, pooling, decoder and classifier. Codebook rows
/// unused for `dead_after` consecutive steps are re-seeded to a batch feature plus noise.
template <class S>
TrainLog train_style_extractor(StyleExtractor<S>& model, const ClipSet& train, const StyleTrainConfig& cfg,
                               const std::function<void(const nlohmann::json&)>& on_epoch = {}) {
  TrainLog log;
  if (cfg.epochs <= 0) return log;
  const TripletSampler sampler(train);
  auto rng = derive_rng(cfg.seed, 0x5e1);
  ad::Adam<S> opt(cfg.adam);
  const int len = model.config().clip_len;
  const int n_entries = model.has_codebook() ? model.config().codebook_size : 0;
  std::vector<long> last_used(static_cast<std::size_t>(n_entries), 0);
  long step = 0;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    std::map<std::string, double> sums;
    std::set<int> used_epoch;
    int batches = 0;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.batch)) {
      std::vector<StyleTriplet<S>> batch;
      for (std::size_t i = b0; i < std::min(order.size(), b0 + static_cast<std::size_t>(cfg.batch)); ++i) {
        const std::size_t a = order[i];
        const std::size_t p = sampler.positive(a, rng);
        const std::size_t n = sampler.negative(a, rng);
        StyleTriplet<S> item;
        item.anchor = random_crop(train[a].expression, len, rng).template cast<S>();
        item.positive = random_crop(train[p].expression, len, rng).template cast<S>();
        item.negative = random_crop(train[n].expression, len, rng).template cast<S>();
        item.label = train[a].style;
        item.positive_label = train[p].style;
        item.negative_label = train[n].style;
        batch.push_back(std::move(item));
      }
      ad::Tape<S> tape;
      const StyleLoss<S> loss = style_loss(tape, model, batch, cfg.weights);
      tape.backward(loss.total);
      opt.step(model.params());
      ++step;
      for (const auto& [k, v] : loss.components) sums[k] += v;
      sums["total"] += static_cast<double>(loss.total.item());
      ++batches;
      if (n_entries > 0) {
        for (const auto& idx : loss.indices) {
          for (int k : idx) {
            last_used[static_cast<std::size_t>(k)] = step;
            used_epoch.insert(k);
          }
        }
        auto& cb = model.codebook();
        std::normal_distribution<double> noise(0.0, cfg.reseed_noise);
        for (int k = 0; k < n_entries; ++k) {
          if (step - last_used[static_cast<std::size_t>(k)] < cfg.dead_after) continue;
          const auto row = static_cast<Eigen::Index>(uniform_index(rng, static_cast<std::size_t>(loss.features.rows())));
          for (Eigen::Index j = 0; j < cb.value.cols(); ++j) {
            cb.value(k, j) = loss.features(row, j) + static_cast<S>(noise(rng));
          }
          opt.reset_row(model.params(), cb, k);
          last_used[static_cast<std::size_t>(k)] = step;
        }
      }
    }
    nlohmann::json rec{{"epoch", epoch + 1}, {"step", step}};
    for (const auto& [k, v] : sums) rec[k] = v / batches;
    if (n_entries > 0) rec["codebook_usage"] = static_cast<double>(used_epoch.size()) / n_entries;
    log.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return log;
}

template <class S>
double style_accuracy(const StyleExtractor<S>& model, const ClipSet& clips) {
  if (clips.empty()) return 0.0;
  int correct = 0;
  for (const auto& c : clips) correct += model.predict_label(c.expression.template cast<S>()) == c.style ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(clips.size());
}

/// Fraction of codebook rows selected at least once over every T'-window of `clips`.
template <class S>
double codebook_usage(const StyleExtractor<S>& model, const ClipSet& clips) {
  if (!model.has_codebook()) return 0.0;
  std::set<int> used;
  for (const auto& c : clips) {
    for (int k : model.token_indices(c.expression.template cast<S>())) used.insert(k);
  }
  return static_cast<double>(used.size()) / model.config().codebook_size;
}

template <class S>
double reconstruction_mse(const StyleExtractor<S>& model, const ClipSet& clips) {
  double sum = 0;
  int n = 0;
  const int len = model.config().clip_len;
  for (const auto& c : clips) {
    for (Eigen::Index s0 : sliding_starts(c.expression.rows(), len, std::max(1, len / 2))) {
      ad::Tape<S> t;
      const MatrixT<S> clip = c.expression.middleRows(s0, len).template cast<S>();
      const auto fwd = model.forward(t, t.constant(clip));
      sum += static_cast<double>((model.reconstruct(t, fwd.q_st).value() - clip).squaredNorm()) / clip.size();
      ++n;
    }
  }
  return n == 0 ? 0.0 : sum / n;
}

}  // namespace saas
