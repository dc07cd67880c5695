#pragma once

#include "saas/transfer/blendshape.hpp"

#include <nlohmann/json.hpp>

#include <iomanip>
#include <map>
#include <sstream>

namespace saas {

struct LandmarkDistance {
  double mouth = 0;  // mean per-vertex L2 over the lip vertex sets
  double face = 0;   // mean per-vertex L2 over every vertex
};

/// Landmark-distance proxies between two coefficient tracks of equal length.
inline LandmarkDistance landmark_distance(const Matrix& generated, const Matrix& reference, const BlendshapeBasis& basis) {
  if (generated.rows() != reference.rows() || generated.cols() != reference.cols()) {
    throw std::invalid_argument("landmark_distance: sequences differ in shape");
  }
  const Eigen::MatrixXd diff = (generated.cast<double>() - reference.cast<double>()) * basis.basis;
  const Eigen::Index v = basis.vertices();
  LandmarkDistance out;
  double lips = 0;
  for (Eigen::Index t = 0; t < diff.rows(); ++t) {
    for (Eigen::Index k = 0; k < v; ++k) out.face += diff.row(t).segment<3>(3 * k).norm();
    for (const auto* set : {&basis.upper_lip, &basis.lower_lip}) {
      for (int k : *set) lips += diff.row(t).segment<3>(3 * k).norm();
    }
  }
  const auto frames = static_cast<double>(diff.rows());
  out.face /= frames * static_cast<double>(v);
  out.mouth = lips / (frames * static_cast<double>(basis.upper_lip.size() + basis.lower_lip.size()));
  return out;
}

/// Mean over frames of the squared change of the upper-minus-lower lip vector.
inline double lip_difference_error(const Matrix& source, const Matrix& edited, const BlendshapeBasis& basis) {
  return (basis.lip_difference(source) - basis.lip_difference(edited)).rowwise().squaredNorm().mean();
}

/// Metric scalars plus per-clip rows; printable as a table and as line-delimited JSON.
struct EvalReport {
  std::map<std::string, double> scalars;
  std::vector<nlohmann::json> per_clip;

  void merge(const std::string& prefix, const EvalReport& other) {
    for (const auto& [k, v] : other.scalars) scalars[prefix + k] = v;
    for (auto row : other.per_clip) {
      row["section"] = prefix.empty() ? "" : prefix.substr(0, prefix.size() - 1);
      per_clip.push_back(std::move(row));
    }
  }

  std::string table() const {
    std::ostringstream out;
    std::size_t width = 6;
    for (const auto& [k, v] : scalars) width = std::max(width, k.size());
    out << std::left << std::setw(static_cast<int>(width)) << "metric" << "  value\n";
    for (const auto& [k, v] : scalars) {
      out << std::left << std::setw(static_cast<int>(width)) << k << "  " << std::setprecision(6) << v << "\n";
    }
    return out.str();
  }

  std::string jsonl() const {
    std::string out = nlohmann::json{{"record", "summary"}, {"metrics", scalars}}.dump() + "\n";
    for (const auto& row : per_clip) {
      nlohmann::json r = row;
      r["record"] = "clip";
      out += r.dump() + "\n";
    }
    return out;
  }
};

}  // namespace saas
