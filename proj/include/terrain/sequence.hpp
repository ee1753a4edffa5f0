#pragma once

// Variable-length samples, normalization, padded batches with masks, and
// final-state selection.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "terrain/core_math.hpp"

namespace terrain {

/// One labeled recording: `data` is timesteps x channels.
struct SequenceSample {
  Matrix data;
  std::size_t label = 0;
  std::map<std::string, std::string> meta;

  std::size_t length() const { return data.rows(); }
  std::size_t channels() const { return data.cols(); }
  std::span<const double> step(std::size_t t) const { return data.row(t); }
};

/// Dense B x T x D array, row-major.
template <typename T>
class BasicTensor3 {
 public:
  BasicTensor3() = default;
  BasicTensor3(std::size_t d0, std::size_t d1, std::size_t d2, T fill = T{0})
      : d0_(d0), d1_(d1), d2_(d2), values_(d0 * d1 * d2, fill) {}

  std::size_t dim0() const { return d0_; }
  std::size_t dim1() const { return d1_; }
  std::size_t dim2() const { return d2_; }

  T& operator()(std::size_t i, std::size_t j, std::size_t k) {
    return values_[(i * d1_ + j) * d2_ + k];
  }
  const T& operator()(std::size_t i, std::size_t j, std::size_t k) const {
    return values_[(i * d1_ + j) * d2_ + k];
  }

  std::span<T> slice(std::size_t i, std::size_t j) { return {&values_[(i * d1_ + j) * d2_], d2_}; }
  std::span<const T> slice(std::size_t i, std::size_t j) const {
    return {&values_[(i * d1_ + j) * d2_], d2_};
  }
  std::span<T> span() { return values_; }
  std::span<const T> span() const { return values_; }

  friend bool operator==(const BasicTensor3&, const BasicTensor3&) = default;

 private:
  std::size_t d0_ = 0, d1_ = 0, d2_ = 0;
  std::vector<T> values_;
};

using Tensor3 = BasicTensor3<double>;

/// Padded batch. Positions at t >= lengths[b] hold the pad value and are never
/// read by the models.
class SequenceBatch {
 public:
  Tensor3 data;  // B x T_max x D
  std::vector<std::size_t> lengths;
  std::vector<std::size_t> labels;

  std::size_t size() const { return lengths.size(); }
  std::size_t max_length() const { return data.dim1(); }
  std::size_t channels() const { return data.dim2(); }
  bool mask(std::size_t b, std::size_t t) const { return t < lengths[b]; }

  std::span<const double> step(std::size_t b, std::size_t t) const { return data.slice(b, t); }

  /// Rows 0..lengths[b]-1 of sample b as a contiguous lengths[b] x D block.
  std::span<const double> valid_steps(std::size_t b) const {
    return {&data(b, 0, 0), lengths[b] * channels()};
  }
};

struct NormStats {
  Vector mean;
  Vector std;
};

inline constexpr double kStdFloor = 1e-8;

/// Per-channel mean and population standard deviation over every valid step.
inline NormStats fit_normalizer(std::span<const SequenceSample> train) {
  if (train.empty()) throw ArgumentError("fit_normalizer: no training samples");
  const std::size_t d = train.front().channels();
  std::vector<double> sum(d, 0.0);
  std::size_t count = 0;
  for (const auto& s : train) {
    if (s.channels() != d) {
      throw ShapeError("fit_normalizer: sample has " + std::to_string(s.channels()) +
                       " channels, expected " + std::to_string(d));
    }
    for (std::size_t t = 0; t < s.length(); ++t) {
      for (std::size_t c = 0; c < d; ++c) sum[c] += s.data(t, c);
    }
    count += s.length();
  }
  if (count == 0) throw ArgumentError("fit_normalizer: samples contain no timesteps");
  NormStats st{Vector(d), Vector(d)};
  for (std::size_t c = 0; c < d; ++c) st.mean[c] = sum[c] / static_cast<double>(count);
  // second pass for numerical stability
  std::vector<double> sq(d, 0.0);
  for (const auto& s : train) {
    for (std::size_t t = 0; t < s.length(); ++t) {
      for (std::size_t c = 0; c < d; ++c) {
        const double dv = s.data(t, c) - st.mean[c];
        sq[c] += dv * dv;
      }
    }
  }
  for (std::size_t c = 0; c < d; ++c) {
    st.std[c] = std::max(std::sqrt(sq[c] / static_cast<double>(count)), kStdFloor);
  }
  return st;
}

inline SequenceSample apply_normalizer(const NormStats& stats, const SequenceSample& s) {
  if (s.channels() != stats.mean.dim()) {
    throw ShapeError("apply_normalizer: sample has " + std::to_string(s.channels()) +
                     " channels, stats have " + std::to_string(stats.mean.dim()));
  }
  SequenceSample out = s;
  for (std::size_t t = 0; t < out.length(); ++t) {
    auto row = out.data.row(t);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] = (row[c] - stats.mean[c]) / stats.std[c];
  }
  return out;
}

inline std::vector<SequenceSample> apply_normalizer(const NormStats& stats,
                                                    std::span<const SequenceSample> samples) {
  std::vector<SequenceSample> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(apply_normalizer(stats, s));
  return out;
}

inline SequenceBatch make_batch(std::span<const SequenceSample> samples, double pad_value = 0.0) {
  if (samples.empty()) throw ArgumentError("make_batch: empty sample list");
  const std::size_t d = samples.front().channels();
  std::size_t t_max = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].channels() != d) {
      throw ShapeError("make_batch: sample " + std::to_string(i) + " has " +
                       std::to_string(samples[i].channels()) + " channels, expected " +
                       std::to_string(d));
    }
    if (samples[i].length() == 0) {
      throw ArgumentError("make_batch: sample " + std::to_string(i) + " has no timesteps");
    }
    t_max = std::max(t_max, samples[i].length());
  }
  SequenceBatch b;
  b.data = Tensor3(samples.size(), t_max, d, pad_value);
  b.lengths.reserve(samples.size());
  b.labels.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    std::copy(s.data.span().begin(), s.data.span().end(), &b.data(i, 0, 0));
    b.lengths.push_back(s.length());
    b.labels.push_back(s.label);
  }
  return b;
}

/// Gathers samples by index, then batches them.
inline SequenceBatch make_batch(std::span<const SequenceSample> samples,
                                std::span<const std::size_t> indices, double pad_value = 0.0) {
  std::vector<SequenceSample> picked;
  picked.reserve(indices.size());
  for (auto i : indices) picked.push_back(samples[i]);
  return make_batch(picked, pad_value);
}

/// Row b of the result is states[b][lengths[b]-1].
inline Matrix select_final_states(const Tensor3& states, std::span<const std::size_t> lengths) {
  if (lengths.size() != states.dim0()) {
    throw ShapeError("select_final_states: " + std::to_string(lengths.size()) +
                     " lengths for batch of " + std::to_string(states.dim0()));
  }
  Matrix out(states.dim0(), states.dim2());
  for (std::size_t b = 0; b < lengths.size(); ++b) {
    if (lengths[b] == 0 || lengths[b] > states.dim1()) {
      throw ArgumentError("select_final_states: sample " + std::to_string(b) + " has length " +
                          std::to_string(lengths[b]) + " outside [1, " +
                          std::to_string(states.dim1()) + "]");
    }
    auto src = states.slice(b, lengths[b] - 1);
    std::copy(src.begin(), src.end(), out.row(b).begin());
  }
  return out;
}

}  // namespace terrain
