#pragma once

#include "saas/core/types.hpp"

#include <vector>

namespace saas {

/// One aligned recording: expression (T x 64), pose (T x 6) and audio features (T x d_a).
struct Clip {
  Matrix expression;
  Matrix pose;
  Matrix audio;
  int style = 0;
  int speaker = 0;
  int id = 0;
};

using ClipSet = std::vector<Clip>;

inline std::vector<int> style_labels(const ClipSet& clips) {
  std::vector<int> out;
  out.reserve(clips.size());
  for (const auto& c : clips) out.push_back(c.style);
  return out;
}

}  // namespace saas
