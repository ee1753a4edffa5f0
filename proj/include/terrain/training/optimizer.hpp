#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "terrain/core_math.hpp"

namespace terrain {

enum class OptimizerKind { sgd, adam };

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  friend bool operator==(const AdamSettings&, const AdamSettings&) = default;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double lr_decay = 1.0;  // multiplicative, applied once per epoch
  double lambda = 0.01;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  std::optional<double> grad_clip = 5.0;  // max global L2 norm
  OptimizerKind optimizer = OptimizerKind::adam;
  AdamSettings adam;
  std::uint64_t seed = 1;
  std::optional<double> dropout;  // overrides every head dropout rate

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

inline void validate(const TrainConfig& c) {
  if (!(c.learning_rate > 0.0)) throw ArgumentError("learning_rate must be > 0");
  if (!(c.lr_decay > 0.0 && c.lr_decay <= 1.0)) throw ArgumentError("lr_decay must be in (0, 1]");
  if (!(c.lambda >= 0.0)) throw ArgumentError("lambda must be >= 0");
  if (c.batch_size == 0) throw ArgumentError("batch_size must be >= 1");
  if (c.grad_clip && !(*c.grad_clip > 0.0)) throw ArgumentError("grad_clip must be > 0");
  if (c.dropout && !(*c.dropout >= 0.0 && *c.dropout < 1.0)) {
    throw ArgumentError("dropout override must be in [0, 1)");
  }
}

template <typename M>
std::vector<std::span<double>> tensor_spans(M& m) {
  std::vector<std::span<double>> out;
  visit_tensors(m, [&](std::string_view, auto& t) { out.push_back(t.span()); });
  return out;
}

template <typename M>
std::vector<std::span<const double>> tensor_spans(const M& m) {
  std::vector<std::span<const double>> out;
  visit_tensors(m, [&](std::string_view, const auto& t) { out.push_back(t.span()); });
  return out;
}

inline double global_norm(std::span<const std::span<const double>> grads) {
  double s = 0.0;
  for (const auto& g : grads) s += sum_of_squares(g);
  return std::sqrt(s);
}

/// SGD or Adam over a fixed set of tensors. Moment buffers are sized lazily on
/// the first step and must keep matching afterwards.
class Optimizer {
 public:
  explicit Optimizer(const TrainConfig& config) : config_(config) {}

  std::size_t step_count() const { return steps_; }

  /// One update at learning rate `lr`. Returns the pre-clip gradient norm.
  double step(std::span<const std::span<double>> params,
              std::span<const std::span<const double>> grads, double lr) {
    if (params.size() != grads.size()) throw ShapeError("optimizer: params/grads count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
      if (params[i].size() != grads[i].size()) {
        throw ShapeError("optimizer: tensor " + std::to_string(i) + " has " +
                         std::to_string(params[i].size()) + " params but " +
                         std::to_string(grads[i].size()) + " grads");
      }
    }
    const double norm = global_norm(grads);
    if (!std::isfinite(norm)) throw NumericError("optimizer: non-finite gradient norm");
    double clip = 1.0;
    if (config_.grad_clip && norm > *config_.grad_clip) clip = *config_.grad_clip / norm;
    ++steps_;
    if (config_.optimizer == OptimizerKind::sgd) {
      for (std::size_t i = 0; i < params.size(); ++i) {
        for (std::size_t j = 0; j < params[i].size(); ++j) params[i][j] -= lr * clip * grads[i][j];
      }
      return norm;
    }
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
      }
    }
    if (m_.size() != params.size()) throw ShapeError("optimizer: tensor set changed between steps");
    const auto& a = config_.adam;
    const double bc1 = 1.0 - std::pow(a.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(a.beta2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < params[i].size(); ++j) {
        const double g = clip * grads[i][j];
        m[j] = a.beta1 * m[j] + (1.0 - a.beta1) * g;
        v[j] = a.beta2 * v[j] + (1.0 - a.beta2) * g * g;
        const double m_hat = m[j] / bc1;
        const double v_hat = v[j] / bc2;
        params[i][j] -= lr * m_hat / (std::sqrt(v_hat) + a.epsilon);
      }
    }
    return norm;
  }

  /// Convenience overload for a model and its same-shaped gradient object.
  template <typename M>
  double step(M& params, const M& grads, double lr) {
    auto ps = tensor_spans(params);
    auto gs = tensor_spans(grads);
    return step(std::span<const std::span<double>>(ps), std::span<const std::span<const double>>(gs), lr);
  }

 private:
  TrainConfig config_;
  std::size_t steps_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace terrain
