#pragma once

// Test-only helpers: central finite-difference gradient oracle and random
// instance generators.

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "terrain/models.hpp"
#include "terrain/sequence.hpp"

namespace terrain::testkit {

struct GradCheckResult {
  std::size_t checked = 0;
  std::size_t failures = 0;
  double worst_excess = 0.0;  // max |a - n| / allowed
  std::string worst_name;
  double worst_analytic = 0.0, worst_numeric = 0.0;

  bool ok() const { return failures == 0; }
};

/// Compares analytic gradients to central differences of `loss(model)` for
/// every parameter entry (or every `stride`-th entry per tensor).
template <typename M, typename LossFn>
GradCheckResult finite_difference_check(M model, const M& analytic, LossFn&& loss,
                                        double step = 1e-5, double rel_tol = 1e-4,
                                        double abs_tol = 1e-6, std::size_t stride = 1) {
  std::vector<std::string> names;
  std::vector<std::span<double>> params;
  std::vector<std::span<const double>> grads;
  visit_tensors(model, [&](std::string_view name, auto& t) {
    names.emplace_back(name);
    params.push_back(t.span());
  });
  visit_tensors(analytic, [&](std::string_view, const auto& t) { grads.push_back(t.span()); });
  GradCheckResult r;
  for (std::size_t i = 0; i < params.size(); ++i) {
    for (std::size_t j = 0; j < params[i].size(); j += stride) {
      const double saved = params[i][j];
      params[i][j] = saved + step;
      const double up = loss(model);
      params[i][j] = saved - step;
      const double down = loss(model);
      params[i][j] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double a = grads[i][j];
      const double allowed = std::max(abs_tol, rel_tol * std::max(std::abs(a), std::abs(numeric)));
      const double excess = std::abs(a - numeric) / allowed;
      ++r.checked;
      if (excess > 1.0) ++r.failures;
      if (excess > r.worst_excess) {
        r.worst_excess = excess;
        r.worst_name = names[i] + "[" + std::to_string(j) + "]";
        r.worst_analytic = a;
        r.worst_numeric = numeric;
      }
    }
  }
  return r;
}

inline std::vector<SequenceSample> random_samples(std::size_t count, std::size_t channels,
                                                  std::size_t min_len, std::size_t max_len,
                                                  std::size_t classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> len(min_len, max_len);
  std::uniform_int_distribution<std::size_t> label(0, classes - 1);
  std::normal_distribution<double> value(0.0, 1.0);
  std::vector<SequenceSample> out;
  for (std::size_t i = 0; i < count; ++i) {
    SequenceSample s;
    s.data = Matrix(len(rng), channels);
    for (auto& v : s.data.span()) v = value(rng);
    s.label = label(rng);
    out.push_back(std::move(s));
  }
  return out;
}

/// Perturbs every parameter with Gaussian noise so tests do not depend on
/// initialization (biases included).
template <typename M>
void jitter(M& m, double sd, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sd);
  visit_tensors(m, [&](std::string_view, auto& t) {
    for (auto& v : t.span()) v += n(rng);
  });
}

}  // namespace terrain::testkit
