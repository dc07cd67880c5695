#pragma once

#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

namespace saas {

inline constexpr Eigen::Index kExpressionDim = 64;
inline constexpr Eigen::Index kPoseDim = 6;

template <class S>
using MatrixT = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using RowVectorT = Eigen::Matrix<S, 1, Eigen::Dynamic>;

using Matrix = MatrixT<float>;
using RowVector = RowVectorT<float>;

template <class Derived>
bool all_finite(const Eigen::DenseBase<Derived>& m) {
  return m.allFinite();
}

namespace detail {

inline void require_frames(const Matrix& frames, Eigen::Index width, const char* what) {
  if (frames.rows() < 1) {
    throw std::invalid_argument(std::string(what) + ": sequence must contain at least one frame");
  }
  if (width > 0 && frames.cols() != width) {
    throw std::invalid_argument(std::string(what) + ": expected " + std::to_string(width) +
                                " coefficients per frame, got " + std::to_string(frames.cols()));
  }
  if (!frames.allFinite()) {
    throw std::invalid_argument(std::string(what) + ": non-finite coefficient");
  }
}

}  // namespace detail

/// Per-frame coefficient track with a fixed coefficient width checked at construction.
/// Width 0 means the width is only required to be positive (audio features).
template <Eigen::Index Width, class Tag>
class FrameSequence {
 public:
  FrameSequence() : frames_(Matrix::Zero(1, Width > 0 ? Width : 1)) {}
  explicit FrameSequence(Matrix frames, double frame_rate = 25.0)
      : frames_(std::move(frames)), frame_rate_(frame_rate) {
    detail::require_frames(frames_, Width, Tag::name);
    if (frames_.cols() < 1) throw std::invalid_argument(std::string(Tag::name) + ": zero-width frames");
  }

  const Matrix& frames() const noexcept { return frames_; }
  Eigen::Index length() const noexcept { return frames_.rows(); }
  Eigen::Index width() const noexcept { return frames_.cols(); }
  double frame_rate() const noexcept { return frame_rate_; }

  FrameSequence slice(Eigen::Index start, Eigen::Index count) const {
    if (start < 0 || count < 1 || start + count > length()) {
      throw std::out_of_range(std::string(Tag::name) + ": slice out of range");
    }
    return FrameSequence(frames_.middleRows(start, count), frame_rate_);
  }

  friend bool operator==(const FrameSequence& a, const FrameSequence& b) {
    return a.frames_.rows() == b.frames_.rows() && a.frames_.cols() == b.frames_.cols() &&
           a.frames_ == b.frames_;
  }

 private:
  Matrix frames_;
  double frame_rate_ = 25.0;
};

struct ExpressionTag { static constexpr const char* name = "ExpressionSequence"; };
struct PoseTag { static constexpr const char* name = "PoseSequence"; };
struct AudioTag { static constexpr const char* name = "AudioFeatureSequence"; };

using ExpressionSequence = FrameSequence<kExpressionDim, ExpressionTag>;
using PoseSequence = FrameSequence<kPoseDim, PoseTag>;
using AudioFeatureSequence = FrameSequence<0, AudioTag>;

class StyleCode {
 public:
  StyleCode() = default;
  explicit StyleCode(RowVector v) : v_(std::move(v)) {
    if (v_.size() < 1 || !v_.allFinite()) throw std::invalid_argument("StyleCode: empty or non-finite");
  }
  const RowVector& vector() const noexcept { return v_; }
  Eigen::Index dim() const noexcept { return v_.size(); }

 private:
  RowVector v_;
};

/// N x d learned discrete latent table. Entries are updated in place, never removed.
class Codebook {
 public:
  explicit Codebook(Matrix entries) : entries_(std::move(entries)) {
    if (entries_.rows() < 2) throw std::invalid_argument("Codebook: need at least two entries");
    if (entries_.cols() < 1 || !entries_.allFinite()) {
      throw std::invalid_argument("Codebook: entries must be finite with positive width");
    }
  }
  const Matrix& entries() const noexcept { return entries_; }
  Eigen::Index size() const noexcept { return entries_.rows(); }
  Eigen::Index dim() const noexcept { return entries_.cols(); }

 private:
  Matrix entries_;
};

}  // namespace saas
