#include <gtest/gtest.h>

#include <cmath>

#include "terrain/training/optimizer.hpp"

using namespace terrain;

namespace {

double run_step(Optimizer& opt, std::vector<double>& p, const std::vector<double>& g, double lr) {
  const std::span<double> ps[] = {p};
  const std::span<const double> gs[] = {g};
  return opt.step(std::span<const std::span<double>>(ps), std::span<const std::span<const double>>(gs),
                  lr);
}

}  // namespace

TEST(Optimizer, SgdSubtractsScaledGradient) {
  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::sgd;
  cfg.grad_clip.reset();
  Optimizer opt(cfg);
  std::vector<double> p{1.0, -2.0, 0.5}, g{0.5, 0.25, -1.0};
  run_step(opt, p, g, 0.1);
  EXPECT_DOUBLE_EQ(p[0], 0.95);
  EXPECT_DOUBLE_EQ(p[1], -2.025);
  EXPECT_DOUBLE_EQ(p[2], 0.6);
}

TEST(Optimizer, AdamFirstStepMovesByLearningRate) {
  TrainConfig cfg;
  cfg.grad_clip.reset();
  Optimizer opt(cfg);
  std::vector<double> p{0.0, 1.0, -3.0, 2.0}, g{1e-3, -5.0, 40.0, 0.2};
  const auto before = p;
  run_step(opt, p, g, 1e-3);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double sign = g[i] > 0 ? 1.0 : -1.0;
    EXPECT_NEAR(before[i] - p[i], sign * 1e-3, 1e-6) << i;
  }
}

TEST(Optimizer, AdamMatchesReferenceRecurrence) {
  TrainConfig cfg;
  cfg.grad_clip.reset();
  Optimizer opt(cfg);
  std::vector<double> p{0.3};
  double ref = 0.3, m = 0.0, v = 0.0;
  const double grads[] = {0.5, -0.2, 0.1, 0.7, -0.4};
  for (int t = 1; t <= 5; ++t) {
    const double g = grads[t - 1];
    run_step(opt, p, {g}, 0.01);
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1.0 - std::pow(0.9, t));
    const double vh = v / (1.0 - std::pow(0.999, t));
    ref -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
    EXPECT_NEAR(p[0], ref, 1e-15);
  }
  EXPECT_EQ(opt.step_count(), 5u);
}

TEST(Optimizer, ClippingRescalesToMaxNorm) {
  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::sgd;
  cfg.grad_clip = 1.0;
  Optimizer opt(cfg);
  std::vector<double> p{0.0, 0.0}, g{3.0, 4.0};
  const double norm = run_step(opt, p, g, 1.0);
  EXPECT_DOUBLE_EQ(norm, 5.0);
  EXPECT_NEAR(p[0], -0.6, 1e-15);
  EXPECT_NEAR(p[1], -0.8, 1e-15);
  // below the threshold the gradient is untouched
  std::vector<double> q{0.0}, small{0.5};
  run_step(opt, q, small, 1.0);
  EXPECT_DOUBLE_EQ(q[0], -0.5);
}

TEST(Optimizer, RejectsMismatchedShapesAndNonFiniteGradients) {
  Optimizer opt(TrainConfig{});
  std::vector<double> p{1.0, 2.0}, g{1.0};
  EXPECT_THROW(run_step(opt, p, g, 0.1), ShapeError);
  std::vector<double> bad{std::nan(""), 0.0};
  EXPECT_THROW(run_step(opt, p, bad, 0.1), NumericError);
}

TEST(TrainConfigValidation, RejectsBadValues) {
  TrainConfig c;
  EXPECT_NO_THROW(validate(c));
  c.learning_rate = 0.0;
  EXPECT_THROW(validate(c), ArgumentError);
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(validate(c), ArgumentError);
  c = {};
  c.lambda = -1.0;
  EXPECT_THROW(validate(c), ArgumentError);
  c = {};
  c.lr_decay = 1.5;
  EXPECT_THROW(validate(c), ArgumentError);
}
