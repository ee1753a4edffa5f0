#include <gtest/gtest.h>

#include <cmath>

#include "support/test_support.hpp"
#include "terrain/sequence.hpp"

using namespace terrain;

namespace {

SequenceSample constant_sample(std::size_t len, std::vector<double> row, std::size_t label = 0) {
  SequenceSample s;
  s.data = Matrix(len, row.size());
  for (std::size_t t = 0; t < len; ++t) {
    for (std::size_t c = 0; c < row.size(); ++c) s.data(t, c) = row[c];
  }
  s.label = label;
  return s;
}

}  // namespace

TEST(Normalizer, ConstantChannelFloorsStd) {
  const std::vector<SequenceSample> xs{constant_sample(4, {5.0}), constant_sample(3, {5.0})};
  const auto st = fit_normalizer(xs);
  EXPECT_DOUBLE_EQ(st.mean[0], 5.0);
  EXPECT_EQ(st.std[0], kStdFloor);
}

TEST(Normalizer, SymmetricValues) {
  const std::vector<SequenceSample> xs{constant_sample(5, {-1.0}), constant_sample(5, {1.0})};
  const auto st = fit_normalizer(xs);
  EXPECT_DOUBLE_EQ(st.mean[0], 0.0);
  EXPECT_DOUBLE_EQ(st.std[0], 1.0);
}

TEST(Normalizer, FittingSetBecomesStandardized) {
  auto xs = testkit::random_samples(20, 4, 3, 30, 3, 7);
  for (auto& s : xs) {
    for (std::size_t t = 0; t < s.length(); ++t) {
      s.data(t, 0) = 3.0 * s.data(t, 0) + 10.0;
      s.data(t, 2) = 0.01 * s.data(t, 2) - 4.0;
    }
  }
  const auto st = fit_normalizer(xs);
  const auto ys = apply_normalizer(st, xs);
  for (std::size_t c = 0; c < 4; ++c) {
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (const auto& s : ys) {
      for (std::size_t t = 0; t < s.length(); ++t) {
        sum += s.data(t, c);
        sq += s.data(t, c) * s.data(t, c);
        ++n;
      }
    }
    const double mean = sum / n;
    EXPECT_NEAR(mean, 0.0, 1e-9);
    EXPECT_NEAR(std::sqrt(sq / n - mean * mean), 1.0, 1e-9);
  }
}

TEST(Normalizer, EmptyInputRejected) {
  EXPECT_THROW(fit_normalizer(std::vector<SequenceSample>{}), ArgumentError);
}

TEST(Normalizer, ApplyValues) {
  const auto s = constant_sample(2, {7.0, 1.5}, 4);
  const NormStats identity{Vector{0.0, 0.0}, Vector{1.0, 1.0}};
  EXPECT_EQ(apply_normalizer(identity, s).data, s.data);
  const NormStats st{Vector{5.0, 1.5}, Vector{2.0, 1.0}};
  const auto out = apply_normalizer(st, s);
  EXPECT_DOUBLE_EQ(out.data(0, 0), 1.0);
  EXPECT_DOUBLE_EQ(out.data(1, 1), 0.0);
  EXPECT_EQ(out.length(), 2u);
  EXPECT_EQ(out.label, 4u);
  EXPECT_THROW(apply_normalizer(NormStats{Vector(3), Vector(3, 1.0)}, s), ShapeError);
}

TEST(MakeBatch, MaskFollowsLengths) {
  const std::vector<SequenceSample> xs{constant_sample(3, {1.0}), constant_sample(5, {2.0})};
  const auto b = make_batch(xs);
  EXPECT_EQ(b.max_length(), 5u);
  const bool expected[2][5] = {{true, true, true, false, false}, {true, true, true, true, true}};
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t t = 0; t < 5; ++t) EXPECT_EQ(b.mask(i, t), expected[i][t]);
  }
  EXPECT_EQ(b.lengths, (std::vector<std::size_t>{3, 5}));
}

TEST(MakeBatch, SingleSampleRoundTrips) {
  const auto xs = testkit::random_samples(1, 3, 9, 9, 2, 1);
  const auto b = make_batch(xs);
  for (std::size_t t = 0; t < 9; ++t) {
    for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(b.data(0, t, c), xs[0].data(t, c));
  }
  EXPECT_EQ(b.labels[0], xs[0].label);
}

TEST(MakeBatch, PadValueFillsOnlyMaskedPositions) {
  const auto xs = testkit::random_samples(4, 2, 2, 10, 2, 3);
  const auto b = make_batch(xs, 7.0);
  for (std::size_t i = 0; i < 4; ++i) {
    for (std::size_t t = 0; t < b.max_length(); ++t) {
      for (std::size_t c = 0; c < 2; ++c) {
        if (b.mask(i, t)) {
          EXPECT_EQ(b.data(i, t, c), xs[i].data(t, c));
        } else {
          EXPECT_EQ(b.data(i, t, c), 7.0);
        }
      }
    }
  }
}

TEST(MakeBatch, MixedChannelsRejected) {
  const std::vector<SequenceSample> xs{constant_sample(3, {1.0}), constant_sample(3, {1.0, 2.0})};
  EXPECT_THROW(make_batch(xs), ShapeError);
}

TEST(SelectFinalStates, PicksTrueFinalStep) {
  Tensor3 states(2, 4, 3);
  for (std::size_t b = 0; b < 2; ++b) {
    for (std::size_t t = 0; t < 4; ++t) {
      for (std::size_t h = 0; h < 3; ++h) states(b, t, h) = static_cast<double>(t);
    }
  }
  const std::vector<std::size_t> lengths{2, 4};
  const Matrix out = select_final_states(states, lengths);
  for (std::size_t h = 0; h < 3; ++h) {
    EXPECT_EQ(out(0, h), 1.0);
    EXPECT_EQ(out(1, h), 3.0);
  }
  const std::vector<std::size_t> full{4, 4};
  EXPECT_EQ(select_final_states(states, full)(0, 0), 3.0);
  const std::vector<std::size_t> one{1, 4};
  EXPECT_EQ(select_final_states(states, one)(0, 0), 0.0);
}

TEST(SelectFinalStates, RejectsBadLengths) {
  Tensor3 states(2, 4, 3);
  const std::vector<std::size_t> zero{0, 4}, too_long{2, 5};
  EXPECT_THROW(select_final_states(states, zero), ArgumentError);
  EXPECT_THROW(select_final_states(states, too_long), ArgumentError);
}
