#pragma once

// Accuracy/confusion evaluation and principal-component projection of
// classifier hidden-state trajectories.

#include <algorithm>
#include <cmath>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "terrain/core_math.hpp"
#include "terrain/models.hpp"
#include "terrain/sequence.hpp"

namespace terrain {

struct EvalReport {
  double accuracy = 0.0;
  BasicMatrix<std::size_t> confusion;  // rows: true class, cols: predicted
  std::size_t n = 0;
};

inline std::size_t num_classes(const ClassifierModel& m) { return m.arch.num_classes; }
inline std::size_t num_classes(const SemiSupervisedModel& m) { return m.classifier.arch.num_classes; }

/// Argmax accuracy with dropout disabled. Samples are run in chunks so memory
/// stays bounded; the result does not depend on sample order.
template <typename Model>
EvalReport evaluate(const Model& m, std::span<const SequenceSample> samples,
                    std::size_t chunk = 64) {
  const std::size_t c = num_classes(m);
  EvalReport r{0.0, BasicMatrix<std::size_t>(c, c), samples.size()};
  std::size_t hits = 0;
  for (std::size_t start = 0; start < samples.size(); start += chunk) {
    const auto part = samples.subspan(start, std::min(chunk, samples.size() - start));
    const auto batch = make_batch(part);
    const Matrix probs = predict_proba(m, batch);
    for (std::size_t i = 0; i < part.size(); ++i) {
      const auto row = probs.row(i);
      const auto pred =
          static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      const std::size_t truth = part[i].label;
      if (truth >= c) {
        throw ArgumentError("evaluate: label " + std::to_string(truth) + " out of range for " +
                            std::to_string(c) + " classes");
      }
      r.confusion(truth, pred) += 1;
      hits += pred == truth ? 1 : 0;
    }
  }
  r.accuracy = samples.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(samples.size());
  return r;
}

// ---------------------------------------------------------------------------
// PCA

struct EigenDecomposition {
  Vector values;   // descending
  Matrix vectors;  // column j pairs with values[j]
};

/// Cyclic Jacobi rotations on a symmetric matrix.
inline EigenDecomposition symmetric_eigen(const Matrix& a, double tol = 1e-14,
                                          std::size_t max_sweeps = 100) {
  const std::size_t n = a.rows();
  if (a.cols() != n) throw ShapeError("symmetric_eigen: matrix is " + a.shape_string());
  Matrix m = a;
  Matrix v = Matrix::identity(n);
  double scale = 0.0;
  for (double x : m.span()) scale = std::max(scale, std::abs(x));
  for (std::size_t sweep = 0; sweep < max_sweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) off += m(p, q) * m(p, q);
    }
    if (std::sqrt(off) <= tol * std::max(scale, 1e-300)) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = m(p, q);
        if (apq == 0.0) continue;
        const double theta = (m(q, q) - m(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double mkp = m(k, p), mkq = m(k, q);
          m(k, p) = c * mkp - s * mkq;
          m(k, q) = s * mkp + c * mkq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double mpk = m(p, k), mqk = m(q, k);
          m(p, k) = c * mpk - s * mqk;
          m(q, k) = s * mpk + c * mqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t i, std::size_t j) { return m(i, i) > m(j, j); });
  EigenDecomposition out{Vector(n), Matrix(n, n)};
  for (std::size_t j = 0; j < n; ++j) {
    out.values[j] = m(order[j], order[j]);
    for (std::size_t k = 0; k < n; ++k) out.vectors(k, j) = v(k, order[j]);
  }
  return out;
}

struct PrincipalComponents {
  Matrix directions;   // n_components x dims, orthonormal rows
  Vector variances;    // eigenvalue per direction
  Vector mean;         // dims
  Matrix projected;    // points x n_components
};

/// Top principal directions of the rows of `points` (covariance route). Each
/// direction is signed so its largest-magnitude entry is positive.
inline PrincipalComponents principal_components(const Matrix& points,
                                                std::size_t n_components = 2) {
  const std::size_t n = points.rows(), d = points.cols();
  if (n == 0 || d == 0) throw ArgumentError("principal_components: empty point set");
  if (n_components > d) {
    throw ArgumentError("principal_components: " + std::to_string(n_components) +
                        " components requested from " + std::to_string(d) + " dims");
  }
  Vector mean(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) mean[j] += points(i, j);
  }
  for (auto& v : mean) v /= static_cast<double>(n);
  Matrix centered = points;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) centered(i, j) -= mean[j];
  }
  Matrix cov(d, d);
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = centered.row(i);
    for (std::size_t a = 0; a < d; ++a) {
      if (r[a] == 0.0) continue;
      for (std::size_t b = a; b < d; ++b) cov(a, b) += r[a] * r[b];
    }
  }
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = a; b < d; ++b) {
      cov(a, b) /= static_cast<double>(n);
      cov(b, a) = cov(a, b);
    }
  }
  const auto eig = symmetric_eigen(cov);
  PrincipalComponents pc{Matrix(n_components, d), Vector(n_components), mean,
                         Matrix(n, n_components)};
  for (std::size_t c = 0; c < n_components; ++c) {
    pc.variances[c] = eig.values[c];
    std::size_t arg = 0;
    for (std::size_t k = 0; k < d; ++k) {
      if (std::abs(eig.vectors(k, c)) > std::abs(eig.vectors(arg, c))) arg = k;
    }
    const double sign = eig.vectors(arg, c) < 0.0 ? -1.0 : 1.0;
    for (std::size_t k = 0; k < d; ++k) pc.directions(c, k) = sign * eig.vectors(k, c);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < n_components; ++c) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += centered(i, k) * pc.directions(c, k);
      pc.projected(i, c) = s;
    }
  }
  return pc;
}

struct PcaProjection {
  double time_fraction = 0.0;  // percent of each sample's length
  Matrix components;           // 2 x H
  Vector explained_variance;   // 2
  Matrix points;               // samples x 2
  std::vector<std::size_t> labels;
};

/// 1-based step ceil(f * T / 100), clamped to [1, T].
inline std::size_t fraction_step(double percent, std::size_t length) {
  const double raw = std::ceil(percent * static_cast<double>(length) / 100.0 - 1e-9);
  const auto step = static_cast<std::size_t>(std::max(1.0, raw));
  return std::min(step, length);
}

/// For each fraction, the classifier hidden state at that point of every
/// sample, projected onto its own top-2 principal directions.
template <typename Model>
std::vector<PcaProjection> pca_hidden_states(const Model& m, std::span<const SequenceSample> samples,
                                             std::span<const double> fractions) {
  if (samples.empty()) throw ArgumentError("pca_hidden_states: no samples");
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 100.0)) {
      throw ArgumentError("pca_hidden_states: fraction " + std::to_string(f) +
                          " outside (0, 100]");
    }
  }
  std::vector<Matrix> states;
  states.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].length() < 1) {
      throw ArgumentError("pca_hidden_states: sample " + std::to_string(i) + " is empty");
    }
    states.push_back(classifier_hidden_states(m, samples[i]));
  }
  const std::size_t h = states.front().cols();
  std::vector<PcaProjection> out;
  for (double f : fractions) {
    Matrix pts(samples.size(), h);
    PcaProjection proj;
    proj.time_fraction = f;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const std::size_t t = fraction_step(f, samples[i].length()) - 1;
      const auto src = states[i].row(t);
      std::copy(src.begin(), src.end(), pts.row(i).begin());
      proj.labels.push_back(samples[i].label);
    }
    auto pc = principal_components(pts, std::min<std::size_t>(2, h));
    proj.components = std::move(pc.directions);
    proj.explained_variance = std::move(pc.variances);
    proj.points = std::move(pc.projected);
    out.push_back(std::move(proj));
  }
  return out;
}

/// Delimited export: label,time_fraction,pc1,pc2 (one row per point).
inline void write_pca_csv(std::ostream& os, std::span<const PcaProjection> projections,
                          std::span<const std::string> class_names = {}) {
  os << "label,time_fraction,pc1,pc2\n";
  os.precision(17);
  for (const auto& p : projections) {
    for (std::size_t i = 0; i < p.points.rows(); ++i) {
      const std::size_t l = p.labels[i];
      if (l < class_names.size()) {
        os << class_names[l];
      } else {
        os << l;
      }
      os << ',' << p.time_fraction << ',' << p.points(i, 0) << ','
         << (p.points.cols() > 1 ? p.points(i, 1) : 0.0) << '\n';
    }
  }
}

}  // namespace terrain
