#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <random>
#include <sstream>

#include "support/test_support.hpp"
#include "terrain/analysis.hpp"

using namespace terrain;

namespace {

Matrix random_points(std::size_t n, std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(n, d);
  for (auto& v : m.span()) v = g(rng);
  // anisotropic scaling keeps the eigenvalues well separated
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) m(i, j) *= 1.0 + 1.5 * static_cast<double>(d - j);
  }
  return m;
}

}  // namespace

TEST(SymmetricEigen, ReconstructsMatrix) {
  const Matrix a{{4.0, 1.0, 0.5}, {1.0, 3.0, -0.2}, {0.5, -0.2, 1.0}};
  const auto e = symmetric_eigen(a);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < 3; ++k) s += e.vectors(i, k) * e.values[k] * e.vectors(j, k);
      EXPECT_NEAR(s, a(i, j), 1e-12);
    }
  }
  EXPECT_GE(e.values[0], e.values[1]);
  EXPECT_GE(e.values[1], e.values[2]);
}

TEST(PrincipalComponents, MatchesEigenSolverUpToSign) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const std::size_t n = 30 + seed, d = 3 + seed % 5;
    const Matrix pts = random_points(n, d, seed);
    const auto pc = principal_components(pts, 2);

    Eigen::MatrixXd x(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) x(i, j) = pts(i, j);
    }
    const Eigen::MatrixXd centered = x.rowwise() - x.colwise().mean();
    const Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
    for (int c = 0; c < 2; ++c) {
      const Eigen::VectorXd ref = solver.eigenvectors().col(static_cast<int>(d) - 1 - c);
      EXPECT_NEAR(pc.variances[c], solver.eigenvalues()(static_cast<int>(d) - 1 - c), 1e-8);
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += ref(static_cast<int>(k)) * pc.directions(c, k);
      const double sign = dot < 0 ? -1.0 : 1.0;
      for (std::size_t k = 0; k < d; ++k) {
        EXPECT_NEAR(pc.directions(c, k), sign * ref(static_cast<int>(k)), 1e-8);
      }
    }
  }
}

TEST(PrincipalComponents, SignConventionAndProjection) {
  const Matrix pts = random_points(25, 4, 99);
  const auto pc = principal_components(pts, 2);
  for (std::size_t c = 0; c < 2; ++c) {
    std::size_t arg = 0;
    for (std::size_t k = 0; k < 4; ++k) {
      if (std::abs(pc.directions(c, k)) > std::abs(pc.directions(c, arg))) arg = k;
    }
    EXPECT_GT(pc.directions(c, arg), 0.0);
  }
  for (std::size_t i = 0; i < 25; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < 4; ++k) s += (pts(i, k) - pc.mean[k]) * pc.directions(0, k);
    EXPECT_NEAR(pc.projected(i, 0), s, 1e-12);
  }
}

TEST(PrincipalComponents, RejectsBadRequests) {
  EXPECT_THROW(principal_components(Matrix(0, 3)), ArgumentError);
  EXPECT_THROW(principal_components(Matrix(5, 1), 2), ArgumentError);
}

TEST(FractionStep, CeilingClampedToLength) {
  EXPECT_EQ(fraction_step(10, 50), 5u);
  EXPECT_EQ(fraction_step(10, 41), 5u);
  EXPECT_EQ(fraction_step(100, 37), 37u);
  EXPECT_EQ(fraction_step(1, 5), 1u);
  EXPECT_EQ(fraction_step(40, 10), 4u);
}

TEST(PcaHiddenStates, OneProjectionPerFraction) {
  const auto xs = testkit::random_samples(12, 3, 4, 20, 3, 4);
  const auto m = make_classifier(ClassifierArch{CellKind::gru, 3, 6, 3, {}, true}, 1);
  const std::vector<double> fractions{10, 40, 70, 100};
  const auto proj = pca_hidden_states(m, xs, fractions);
  ASSERT_EQ(proj.size(), 4u);
  for (const auto& p : proj) {
    EXPECT_EQ(p.points.rows(), 12u);
    EXPECT_EQ(p.points.cols(), 2u);
    EXPECT_EQ(p.labels.size(), 12u);
  }
  // the 100% slice uses the final hidden state of each sample
  const Matrix h = classifier_hidden_states(m, xs[0]);
  Matrix finals(12, 6);
  for (std::size_t i = 0; i < 12; ++i) {
    const Matrix hi = classifier_hidden_states(m, xs[i]);
    for (std::size_t j = 0; j < 6; ++j) finals(i, j) = hi(hi.rows() - 1, j);
  }
  const auto ref = principal_components(finals, 2);
  EXPECT_EQ(ref.projected, proj[3].points);
  EXPECT_EQ(h.rows(), xs[0].length());
}

TEST(PcaHiddenStates, CsvHasHeaderAndOneRowPerPoint) {
  const auto xs = testkit::random_samples(5, 2, 3, 8, 2, 4);
  const auto m = make_classifier(ClassifierArch{CellKind::gru, 2, 4, 2, {}, true}, 1);
  const std::vector<double> fractions{50, 100};
  const auto proj = pca_hidden_states(m, xs, fractions);
  std::ostringstream os;
  const std::vector<std::string> names{"sand", "grass"};
  write_pca_csv(os, proj, names);
  std::istringstream in(os.str());
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line, "label,time_fraction,pc1,pc2");
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    EXPECT_TRUE(line.rfind("sand,", 0) == 0 || line.rfind("grass,", 0) == 0) << line;
    ++rows;
  }
  EXPECT_EQ(rows, 10u);
}

TEST(Evaluate, PerfectAndConfusedModels) {
  // A classifier whose output bias alone decides the class.
  auto m = make_classifier(ClassifierArch{CellKind::gru, 2, 3, 3, {}, true}, 1);
  m.head[0].w.fill(0.0);
  m.head[0].b = Vector{0.0, 5.0, 0.0};
  auto xs = testkit::random_samples(9, 2, 2, 6, 3, 2);
  for (std::size_t i = 0; i < xs.size(); ++i) xs[i].label = i % 3;
  const auto r = evaluate(m, xs, 4);
  EXPECT_NEAR(r.accuracy, 1.0 / 3.0, 1e-15);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_EQ(r.confusion(c, 1), 3u);
    EXPECT_EQ(r.confusion(c, 0) + r.confusion(c, 2), 0u);
  }
  for (auto& s : xs) s.label = 1;
  EXPECT_EQ(evaluate(m, xs).accuracy, 1.0);
  xs[0].label = 3;
  EXPECT_THROW(evaluate(m, xs), ArgumentError);
}

TEST(Evaluate, IndependentOfChunking) {
  const auto xs = testkit::random_samples(23, 3, 2, 15, 4, 11);
  const auto m = make_classifier(ClassifierArch{CellKind::lstm, 3, 5, 4, fcl_head(6, 0.5), true}, 3);
  const auto a = evaluate(m, xs, 64);
  const auto b = evaluate(m, xs, 5);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_EQ(a.confusion, b.confusion);
}
