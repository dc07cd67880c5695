#pragma once

#include "saas/ad/tape.hpp"
#include "saas/core/container.hpp"

#include <cmath>
#include <memory>
#include <random>
#include <string>
#include <vector>

namespace saas::ad {

enum class Init { zeros, ones, uniform_fan_in, uniform, normal };

/// Named parameter registry owned by a model. Pointers stay valid for the
/// lifetime of the set.
template <class S>
class ParamSet {
 public:
  ParamSet() = default;
  ParamSet(const ParamSet&) = delete;
  ParamSet& operator=(const ParamSet&) = delete;
  ParamSet(ParamSet&&) noexcept = default;
  ParamSet& operator=(ParamSet&&) noexcept = default;

  /// `scale` is the half-width for Init::uniform and the std for Init::normal.
  Parameter<S>& add(const std::string& name, Eigen::Index rows, Eigen::Index cols, Init init, std::mt19937_64& rng,
                    double scale = 0.0) {
    for (const auto& p : params_) {
      if (p->name == name) throw std::logic_error("duplicate parameter name " + name);
    }
    auto p = std::make_unique<Parameter<S>>();
    p->name = name;
    p->value = Mat<S>::Zero(rows, cols);
    switch (init) {
      case Init::zeros:
        break;
      case Init::ones:
        p->value.setOnes();
        break;
      case Init::uniform_fan_in:
        fill_uniform(p->value, 1.0 / std::sqrt(static_cast<double>(rows)), rng);
        break;
      case Init::uniform:
        fill_uniform(p->value, scale, rng);
        break;
      case Init::normal: {
        std::normal_distribution<double> dist(0.0, scale);
        for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = static_cast<S>(dist(rng));
        break;
      }
    }
    p->zero_grad();
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Parameter<S>& get(const std::string& name) {
    for (auto& p : params_) {
      if (p->name == name) return *p;
    }
    throw std::out_of_range("no parameter named " + name);
  }

  std::vector<std::unique_ptr<Parameter<S>>>& all() { return params_; }
  const std::vector<std::unique_ptr<Parameter<S>>>& all() const { return params_; }

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  void set_frozen(bool frozen) {
    for (auto& p : params_) p->frozen = frozen;
  }

  /// Append every parameter as an f32 array named `prefix + name`.
  void export_to(Container& c, const std::string& prefix = "") const {
    for (const auto& p : params_) c.add_matrix(prefix + p->name, p->value);
  }

  void import_from(const Container& c, const std::string& prefix = "") {
    for (auto& p : params_) {
      const Matrix m = c.matrix(prefix + p->name);
      if (m.rows() != p->value.rows() || m.cols() != p->value.cols()) {
        throw ContainerError("parameter " + p->name + " has shape " + std::to_string(m.rows()) + "x" +
                             std::to_string(m.cols()) + " in checkpoint, model expects " +
                             std::to_string(p->value.rows()) + "x" + std::to_string(p->value.cols()));
      }
      p->value = m.cast<S>();
    }
  }

  template <class T>
  void copy_values_from(const ParamSet<T>& other) {
    if (other.all().size() != params_.size()) throw std::logic_error("copy_values_from: parameter count mismatch");
    for (std::size_t i = 0; i < params_.size(); ++i) params_[i]->value = other.all()[i]->value.template cast<S>();
  }

 private:
  static void fill_uniform(Mat<S>& m, double half_width, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-half_width, half_width);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(dist(rng));
  }

  std::vector<std::unique_ptr<Parameter<S>>> params_;
};

struct AdamConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double clip_norm = 1.0;  // global gradient-norm clip; <= 0 disables
};

template <class S>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const noexcept { return cfg_; }
  long steps() const noexcept { return step_; }

  /// One update over every non-frozen parameter, then clears their gradients.
  void step(ParamSet<S>& params) {
    auto& ps = params.all();
    if (m_.size() != ps.size()) {
      m_.clear();
      v_.clear();
      for (const auto& p : ps) {
        m_.push_back(Mat<S>::Zero(p->value.rows(), p->value.cols()));
        v_.push_back(Mat<S>::Zero(p->value.rows(), p->value.cols()));
      }
    }
    double sq = 0;
    for (const auto& p : ps) {
      if (!p->frozen) sq += static_cast<double>(p->grad.squaredNorm());
    }
    const double norm = std::sqrt(sq);
    const S clip = (cfg_.clip_norm > 0 && norm > cfg_.clip_norm) ? static_cast<S>(cfg_.clip_norm / norm) : S(1);
    ++step_;
    const S b1 = static_cast<S>(cfg_.beta1);
    const S b2 = static_cast<S>(cfg_.beta2);
    const S c1 = static_cast<S>(1.0 - std::pow(cfg_.beta1, step_));
    const S c2 = static_cast<S>(1.0 - std::pow(cfg_.beta2, step_));
    const S lr = static_cast<S>(cfg_.learning_rate);
    const S eps = static_cast<S>(cfg_.eps);
    for (std::size_t i = 0; i < ps.size(); ++i) {
      Parameter<S>& p = *ps[i];
      if (p.frozen) continue;
      const Mat<S> g = p.grad * clip;
      m_[i] = b1 * m_[i] + (S(1) - b1) * g;
      v_[i] = b2 * v_[i] + (S(1) - b2) * g.cwiseProduct(g);
      p.value.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps);
      p.zero_grad();
    }
  }

  /// Reset the moment estimates of one parameter row (used when a codebook entry is re-seeded).
  void reset_row(const ParamSet<S>& params, const Parameter<S>& p, Eigen::Index row) {
    for (std::size_t i = 0; i < params.all().size() && i < m_.size(); ++i) {
      if (params.all()[i].get() == &p) {
        m_[i].row(row).setZero();
        v_[i].row(row).setZero();
      }
    }
  }

 private:
  AdamConfig cfg_;
  long step_ = 0;
  std::vector<Mat<S>> m_;
  std::vector<Mat<S>> v_;
};

}  // namespace saas::ad
