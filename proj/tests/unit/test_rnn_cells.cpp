#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "support/test_support.hpp"
#include "terrain/rnn_cells.hpp"

using namespace terrain;

namespace {

double ref_sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

template <RecurrentParams P>
P all_ones_1d() {
  P p = make_params<P>(1, 1, 0);
  visit_tensors(p, [](std::string_view, auto& t) { t.fill(1.0); });
  if constexpr (P::kind == CellKind::gru) {
    p.b_z.fill(0), p.b_r.fill(0), p.b_h.fill(0);
  } else if constexpr (P::kind == CellKind::lstm) {
    p.b_i.fill(0), p.b_f.fill(0), p.b_o.fill(0), p.b_c.fill(0);
  }
  return p;
}

Vector random_vector(std::size_t n, std::mt19937_64& rng, double scale = 1.0) {
  std::uniform_real_distribution<double> d(-scale, scale);
  Vector v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

}  // namespace

TEST(RnnStep, ZeroWeightsGiveZero) {
  std::mt19937_64 rng(1);
  const auto h = rnn_step(Matrix(4, 3), Matrix(4, 4), Vector(4), random_vector(3, rng),
                          random_vector(4, rng));
  EXPECT_EQ(h, Vector(4));
  EXPECT_EQ(rnn_step(Matrix(4, 3), Matrix(4, 4), Vector(4), Vector(3), Vector(4)), Vector(4));
}

TEST(RnnStep, ScalarReference) {
  const auto h = rnn_step(Matrix{{1.0}}, Matrix{{1.0}}, Vector{0.0}, Vector{0.5}, Vector{0.25});
  EXPECT_NEAR(h[0], std::tanh(0.75), 1e-15);
  EXPECT_NEAR(h[0], 0.63515, 1e-5);
}

TEST(RnnStep, ShapeError) {
  EXPECT_THROW(rnn_step(Matrix(4, 3), Matrix(4, 4), Vector(4), Vector(2), Vector(4)), ShapeError);
}

TEST(GruStep, ZeroParamsHalveState) {
  GruParams p = zeros_like(make_params<GruParams>(3, 5, 7));
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector x = random_vector(3, rng, 5.0), h = random_vector(5, rng);
    const Vector out = gru_step(p, x, h);
    for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(out[j], 0.5 * h[j]);
  }
  EXPECT_EQ(gru_step(p, random_vector(3, rng), Vector(5)), Vector(5));
}

TEST(GruStep, ScalarReference) {
  const auto p = all_ones_1d<GruParams>();
  const auto h = gru_step(p, Vector{1.0}, Vector{0.0});
  // z = r = sigmoid(1), candidate = tanh(1 + 1 * (r * 0))
  const double expected = ref_sigmoid(1.0) * std::tanh(1.0);
  EXPECT_NEAR(h[0], expected, 1e-15);
  EXPECT_NEAR(h[0], 0.55677, 1e-5);
}

TEST(GruStep, ConstantUpdateGateIsLeakyIntegrator) {
  // Force z to a constant k by zeroing its weights and setting its bias.
  std::mt19937_64 rng(8);
  GruParams p = make_params<GruParams>(3, 4, 21);
  p.w_z.fill(0.0);
  p.u_z.fill(0.0);
  const double k = 0.3;
  p.b_z.fill(std::log(k / (1.0 - k)));
  for (int trial = 0; trial < 10; ++trial) {
    const Vector x = random_vector(3, rng), h = random_vector(4, rng);
    // reset gate and candidate computed independently
    Vector rh(4), cand(4);
    for (std::size_t c = 0; c < 4; ++c) {
      double r_pre = p.b_r[c];
      for (std::size_t q = 0; q < 3; ++q) r_pre += p.w_r(c, q) * x[q];
      for (std::size_t q = 0; q < 4; ++q) r_pre += p.u_r(c, q) * h[q];
      rh[c] = ref_sigmoid(r_pre) * h[c];
    }
    for (std::size_t j = 0; j < 4; ++j) {
      double acc = p.b_h[j];
      for (std::size_t q = 0; q < 3; ++q) acc += p.w(j, q) * x[q];
      for (std::size_t c = 0; c < 4; ++c) acc += p.u(j, c) * rh[c];
      cand[j] = std::tanh(acc);
    }
    const Vector out = gru_step(p, x, h);
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_NEAR(out[j], (1.0 - k) * h[j] + k * cand[j], 1e-14);
    }
  }
}

TEST(LstmStep, ZeroParamsClosedForm) {
  LstmParams p = zeros_like(make_params<LstmParams>(2, 3, 7));
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const CellState s{random_vector(3, rng), random_vector(3, rng, 4.0)};
    const auto out = lstm_step(p, random_vector(2, rng), s);
    for (std::size_t j = 0; j < 3; ++j) {
      EXPECT_EQ(out.c[j], 0.5 * s.c[j]);
      EXPECT_EQ(out.h[j], 0.5 * std::tanh(0.5 * s.c[j]));
    }
  }
  const auto zero = lstm_step(p, Vector(2), CellState{Vector(3), Vector(3)});
  EXPECT_EQ(zero.h, Vector(3));
  EXPECT_EQ(zero.c, Vector(3));
}

TEST(LstmStep, ScalarReference) {
  const auto p = all_ones_1d<LstmParams>();
  const auto s = lstm_step(p, Vector{1.0}, CellState{Vector{0.0}, Vector{0.0}});
  const double gate = ref_sigmoid(1.0);
  const double c = gate * std::tanh(1.0);
  EXPECT_NEAR(s.c[0], c, 1e-15);
  EXPECT_NEAR(s.h[0], gate * std::tanh(c), 1e-15);
  EXPECT_NEAR(s.h[0], 0.369606, 1e-6);
}

TEST(LstmStep, RejectsMissingMemoryCell) {
  const auto p = make_params<LstmParams>(2, 3, 1);
  EXPECT_THROW(lstm_step(p, Vector(2), CellState{Vector(3), Vector()}), ShapeError);
  EXPECT_THROW(lstm_step(p, Vector(3), CellState{Vector(3), Vector(3)}), ShapeError);
}

TEST(CellOutputs, GatedHiddenStateStaysInsideUnitInterval) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    auto g = make_params<GruParams>(3, 6, trial);
    auto l = make_params<LstmParams>(3, 6, trial);
    testkit::jitter(g, 3.0, trial);
    testkit::jitter(l, 3.0, trial + 100);
    Vector h(6);
    CellState s{Vector(6), Vector(6)};
    for (int t = 0; t < 40; ++t) {
      const Vector x = random_vector(3, rng, 10.0);
      h = gru_step(g, x, h);
      s = lstm_step(l, x, s);
      for (std::size_t j = 0; j < 6; ++j) {
        EXPECT_LE(std::abs(h[j]), 1.0);
        EXPECT_LT(std::abs(s.h[j]), 1.0);
      }
    }
  }
}

TEST(InitParams, ShapesFollowDims) {
  const auto p = std::get<GruParams>(init_params(CellKind::gru, 10, 50, 1));
  EXPECT_EQ(p.w_z.rows(), 50u);
  EXPECT_EQ(p.w_z.cols(), 10u);
  EXPECT_EQ(p.u_z.rows(), 50u);
  EXPECT_EQ(p.u_z.cols(), 50u);
  EXPECT_EQ(p.b_z.dim(), 50u);
  const auto l = std::get<LstmParams>(init_params(CellKind::lstm, 4, 8, 1));
  EXPECT_EQ(l.w_c.cols(), 4u);
  EXPECT_EQ(l.u_o.rows(), 8u);
}

TEST(InitParams, DeterministicPerSeed) {
  for (auto kind : {CellKind::vanilla, CellKind::gru, CellKind::lstm}) {
    const auto a = init_params(kind, 5, 7, 42);
    const auto b = init_params(kind, 5, 7, 42);
    const auto c = init_params(kind, 5, 7, 43);
    std::visit(
        [&](const auto& pa) {
          using P = std::remove_cvref_t<decltype(pa)>;
          const auto& pb = std::get<P>(b);
          const auto& pc = std::get<P>(c);
          std::vector<std::vector<double>> va, vb, vc;
          visit_tensors(pa, [&](std::string_view, const auto& t) { va.emplace_back(t.span().begin(), t.span().end()); });
          visit_tensors(pb, [&](std::string_view, const auto& t) { vb.emplace_back(t.span().begin(), t.span().end()); });
          visit_tensors(pc, [&](std::string_view, const auto& t) { vc.emplace_back(t.span().begin(), t.span().end()); });
          EXPECT_EQ(va, vb);
          EXPECT_NE(va, vc);
        },
        a);
  }
}

TEST(InitParams, EntriesWithinGlorotBound) {
  const auto p = make_params<LstmParams>(10, 50, 5);
  // bound recomputed from dims: sqrt(6 / (fan_in + fan_out))
  const double in_bound = std::sqrt(6.0 / 60.0), hid_bound = std::sqrt(6.0 / 100.0);
  for (const Matrix* m : {&p.w_i, &p.w_f, &p.w_o, &p.w_c}) {
    for (double v : m->span()) EXPECT_LE(std::abs(v), in_bound);
  }
  for (const Matrix* m : {&p.u_i, &p.u_f, &p.u_o, &p.u_c}) {
    for (double v : m->span()) EXPECT_LE(std::abs(v), hid_bound);
  }
  for (double v : p.b_f) EXPECT_EQ(v, 0.0);
}

TEST(InitParams, ZeroDimsRejected) {
  EXPECT_THROW(init_params(CellKind::gru, 0, 5, 1), ArgumentError);
  EXPECT_THROW(init_params(CellKind::lstm, 5, 0, 1), ArgumentError);
}

TEST(InitParams, BiasToggleRemovesBiasTensors) {
  const auto p = make_params<GruParams>(3, 4, 1, false);
  std::size_t count = 0;
  visit_tensors(p, [&](std::string_view name, const auto&) {
    ++count;
    EXPECT_NE(name.front(), 'b');
  });
  EXPECT_EQ(count, 6u);
}
