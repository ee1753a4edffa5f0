#pragma once

// Index partitions: stratified k-fold plans and the predicting/classifying
// split used for semi-supervised runs.

#include <algorithm>
#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "terrain/error.hpp"

namespace terrain {

struct FoldPlan {
  std::size_t k = 0;
  std::vector<std::vector<std::size_t>> train;
  std::vector<std::vector<std::size_t>> validation;
  bool stratified = true;
  std::uint64_t seed = 0;
};

namespace detail {

// Each class shuffled independently, then classes interleaved round-robin so
// any prefix of the result is class-balanced to within one sample per class.
inline std::vector<std::size_t> balanced_order(std::span<const std::size_t> labels,
                                               std::mt19937_64& rng) {
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  std::vector<std::vector<std::size_t>> pools;
  for (auto& [label, idx] : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    pools.push_back(std::move(idx));
  }
  // Round-robin by proportional position so unequal class sizes still spread evenly.
  struct Entry {
    double key;
    std::size_t pool;
    std::size_t index;
  };
  std::vector<Entry> entries;
  entries.reserve(labels.size());
  for (std::size_t p = 0; p < pools.size(); ++p) {
    const double n = static_cast<double>(pools[p].size());
    for (std::size_t j = 0; j < pools[p].size(); ++j) {
      entries.push_back({(static_cast<double>(j) + 0.5) / n, p, pools[p][j]});
    }
  }
  std::stable_sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    return a.key != b.key ? a.key < b.key : a.pool < b.pool;
  });
  std::vector<std::size_t> order;
  order.reserve(entries.size());
  for (const auto& e : entries) order.push_back(e.index);
  return order;
}

}  // namespace detail

/// Disjoint validation folds covering [0, n). Fold sizes differ by at most one;
/// with `stratified` each fold's per-class count is within one of its share.
inline FoldPlan kfold_split(std::size_t n, std::span<const std::size_t> labels, std::size_t k,
                            std::uint64_t seed, bool stratified = true) {
  if (k < 2) throw ArgumentError("kfold_split: k must be >= 2 (got " + std::to_string(k) + ")");
  if (k > n) {
    throw ArgumentError("kfold_split: k = " + std::to_string(k) + " exceeds sample count " +
                        std::to_string(n));
  }
  if (stratified && labels.size() != n) {
    throw ArgumentError("kfold_split: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(n) + " samples");
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order;
  if (stratified) {
    // Classes back to back, each shuffled. Dealing this sequence round-robin
    // sends every class to consecutive folds, so per-class counts differ by at
    // most one whatever the number of classes.
    std::map<std::size_t, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < n; ++i) by_class[labels[i]].push_back(i);
    for (auto& [label, idx] : by_class) {
      std::shuffle(idx.begin(), idx.end(), rng);
      order.insert(order.end(), idx.begin(), idx.end());
    }
  } else {
    order.resize(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
  }
  FoldPlan plan;
  plan.k = k;
  plan.stratified = stratified;
  plan.seed = seed;
  plan.validation.assign(k, {});
  for (std::size_t i = 0; i < order.size(); ++i) plan.validation[i % k].push_back(order[i]);
  plan.train.assign(k, {});
  for (std::size_t f = 0; f < k; ++f) {
    std::sort(plan.validation[f].begin(), plan.validation[f].end());
    for (std::size_t g = 0; g < k; ++g) {
      if (g == f) continue;
      plan.train[f].insert(plan.train[f].end(), plan.validation[g].begin(),
                           plan.validation[g].end());
    }
    std::sort(plan.train[f].begin(), plan.train[f].end());
  }
  return plan;
}

/// Unlabeled "predicting" portion plus two equal labeled halves.
struct SemiSplit {
  std::vector<std::size_t> predicting;
  std::vector<std::size_t> fold_a;
  std::vector<std::size_t> fold_b;
  unsigned label_percent = 0;
};

inline constexpr unsigned kSemiLabelPercents[] = {5, 10, 15, 20, 25};

/// `label_percent` of the data goes to each labeled half; the remaining
/// 100 - 2 * label_percent is the predicting data (later the test set).
inline SemiSplit semi_split(std::size_t n, std::span<const std::size_t> labels,
                            unsigned label_percent, std::uint64_t seed) {
  if (std::find(std::begin(kSemiLabelPercents), std::end(kSemiLabelPercents), label_percent) ==
      std::end(kSemiLabelPercents)) {
    throw ArgumentError("semi_split: label fraction " + std::to_string(label_percent) +
                        "% not in {5, 10, 15, 20, 25}");
  }
  if (labels.size() != n) {
    throw ArgumentError("semi_split: " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(n) + " samples");
  }
  std::mt19937_64 rng(seed);
  const auto order = detail::balanced_order(labels, rng);
  const std::size_t half = n * label_percent / 100;
  SemiSplit s;
  s.label_percent = label_percent;
  s.fold_a.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(half));
  s.fold_b.assign(order.begin() + static_cast<std::ptrdiff_t>(half),
                  order.begin() + static_cast<std::ptrdiff_t>(2 * half));
  s.predicting.assign(order.begin() + static_cast<std::ptrdiff_t>(2 * half), order.end());
  std::sort(s.fold_a.begin(), s.fold_a.end());
  std::sort(s.fold_b.begin(), s.fold_b.end());
  std::sort(s.predicting.begin(), s.predicting.end());
  return s;
}

}  // namespace terrain
