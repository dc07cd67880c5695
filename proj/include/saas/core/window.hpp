#pragma once

#include "saas/core/types.hpp"

#include <string>
#include <vector>

namespace saas {

/// Split T frames into T/window consecutive windows. T must be divisible by window.
template <Eigen::Index W, class Tag>
std::vector<FrameSequence<W, Tag>> window_split(const FrameSequence<W, Tag>& seq, Eigen::Index window) {
  if (window < 1) throw std::invalid_argument("window_split: window must be positive");
  if (seq.length() % window != 0) {
    throw std::invalid_argument("window_split: length " + std::to_string(seq.length()) +
                                " is not divisible by window " + std::to_string(window));
  }
  std::vector<FrameSequence<W, Tag>> out;
  out.reserve(static_cast<std::size_t>(seq.length() / window));
  for (Eigen::Index start = 0; start < seq.length(); start += window) {
    out.push_back(seq.slice(start, window));
  }
  return out;
}

template <Eigen::Index W, class Tag>
FrameSequence<W, Tag> concat(const std::vector<FrameSequence<W, Tag>>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat: no parts");
  Eigen::Index rows = 0;
  for (const auto& p : parts) rows += p.length();
  Matrix m(rows, parts.front().width());
  Eigen::Index r = 0;
  for (const auto& p : parts) {
    if (p.width() != m.cols()) throw std::invalid_argument("concat: width mismatch");
    m.middleRows(r, p.length()) = p.frames();
    r += p.length();
  }
  return FrameSequence<W, Tag>(std::move(m), parts.front().frame_rate());
}

/// Start offsets of length-`window` crops with the given stride; the last crop is
/// aligned to the end so every frame is covered.
inline std::vector<Eigen::Index> sliding_starts(Eigen::Index length, Eigen::Index window, Eigen::Index stride) {
  if (length < window) throw std::invalid_argument("sliding_starts: sequence shorter than window");
  std::vector<Eigen::Index> starts;
  for (Eigen::Index s = 0; s + window <= length; s += stride) starts.push_back(s);
  if (starts.back() + window < length) starts.push_back(length - window);
  return starts;
}

}  // namespace saas
