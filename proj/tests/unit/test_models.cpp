#include <gtest/gtest.h>

#include <cmath>

#include "support/test_support.hpp"
#include "terrain/models.hpp"

using namespace terrain;

namespace {

ClassifierArch small_arch(CellKind cell, std::size_t input, HeadSpec head = {}) {
  return ClassifierArch{cell, input, 6, 4, std::move(head), true};
}

SequenceBatch with_pad(const std::vector<SequenceSample>& xs, double pad) {
  return make_batch(xs, pad);
}

double ref_sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

TEST(ClassifierForward, RowsAreDistributions) {
  for (auto cell : {CellKind::vanilla, CellKind::gru, CellKind::lstm}) {
    const auto m = make_classifier(small_arch(cell, 3, fcl_head(8, 0.3)), 5);
    const auto b = make_batch(testkit::random_samples(7, 3, 1, 15, 4, 2));
    for (bool train : {false, true}) {
      const Matrix p = classifier_forward(m, b, train, DropoutStream{9});
      for (std::size_t i = 0; i < p.rows(); ++i) {
        double s = 0.0;
        for (double v : p.row(i)) s += v;
        EXPECT_NEAR(s, 1.0, 1e-9);
      }
    }
  }
}

TEST(ClassifierForward, InvariantToPadValue) {
  const auto xs = testkit::random_samples(6, 3, 2, 20, 4, 4);
  for (auto cell : {CellKind::vanilla, CellKind::gru, CellKind::lstm}) {
    const auto m = make_classifier(small_arch(cell, 3, fcl_head(8, 0.5)), 1);
    EXPECT_EQ(classifier_forward(m, with_pad(xs, 0.0), true, {3}),
              classifier_forward(m, with_pad(xs, 7.0), true, {3}));
  }
}

TEST(ClassifierForward, BatchMatchesOneAtATime) {
  const auto xs = testkit::random_samples(5, 2, 1, 25, 4, 8);
  const auto m = make_classifier(small_arch(CellKind::gru, 2, fcl_head(5, 0.2)), 2);
  const Matrix batched = classifier_forward(m, make_batch(xs));
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const Matrix single = classifier_forward(m, make_batch(std::span(xs).subspan(i, 1)));
    for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(batched(i, c), single(0, c), 1e-10);
  }
}

TEST(ClassifierForward, EvalModeDeterministicAndDropoutZeroMatchesEval) {
  const auto b = make_batch(testkit::random_samples(4, 3, 3, 9, 4, 1));
  const auto with_dropout = make_classifier(small_arch(CellKind::gru, 3, fcl_head(8, 0.5)), 3);
  EXPECT_EQ(classifier_forward(with_dropout, b, false, {1}),
            classifier_forward(with_dropout, b, false, {2}));
  EXPECT_NE(classifier_forward(with_dropout, b, true, {1}),
            classifier_forward(with_dropout, b, false, {1}));
  const auto no_dropout = make_classifier(small_arch(CellKind::gru, 3, fcl_head(8, 0.0)), 3);
  EXPECT_EQ(classifier_forward(no_dropout, b, true, {1}), classifier_forward(no_dropout, b, false));
}

TEST(ClassifierForward, ChannelMismatchIsShapeError) {
  const auto m = make_classifier(small_arch(CellKind::gru, 3), 1);
  EXPECT_THROW(classifier_forward(m, make_batch(testkit::random_samples(2, 4, 3, 5, 4, 1))),
               ShapeError);
}

TEST(ClassifierArch, InvalidHeadRejected) {
  EXPECT_THROW(make_classifier(small_arch(CellKind::gru, 3, HeadSpec{{8}, {}}), 1), ArgumentError);
  EXPECT_THROW(make_classifier(small_arch(CellKind::gru, 3, HeadSpec{{8}, {1.0}}), 1),
               ArgumentError);
  const auto m = make_classifier(small_arch(CellKind::gru, 3, fcl_head(128, 0.5)), 1);
  ASSERT_EQ(m.head.size(), 2u);
  EXPECT_EQ(m.head.back().w.rows(), 4u);
  EXPECT_EQ(m.head.front().w.rows(), 128u);
}

TEST(PredictorForward, ZeroWeightsPredictReadoutBias) {
  auto m = make_predictor(PredictorArch{CellKind::gru, 3, 5, true}, 1);
  m = zeros_like_model(m);
  m.readout.b = Vector{0.5, -1.0, 2.0};
  const auto b = make_batch(testkit::random_samples(3, 3, 2, 8, 2, 2));
  const auto out = predictor_forward(m, b);
  EXPECT_EQ(out.predictions.dim1(), b.max_length() - 1);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t t = 0; t + 1 < b.lengths[i]; ++t) {
      for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(out.predictions(i, t, c), m.readout.b[c]);
    }
  }
}

TEST(PredictorForward, ScalarReferenceGru) {
  // 1-d GRU with hand-set parameters on a three-step sequence.
  PredictorModel m = make_predictor(PredictorArch{CellKind::gru, 1, 1, true}, 1);
  auto& p = std::get<GruParams>(m.cell);
  p.w_z = Matrix{{0.5}}, p.u_z = Matrix{{-0.3}}, p.b_z = Vector{0.1};
  p.w_r = Matrix{{0.2}}, p.u_r = Matrix{{0.7}}, p.b_r = Vector{-0.2};
  p.w = Matrix{{1.1}}, p.u = Matrix{{-0.4}}, p.b_h = Vector{0.05};
  m.readout.w = Matrix{{1.5}};
  m.readout.b = Vector{-0.25};
  SequenceSample s;
  s.data = Matrix{{0.4}, {-1.2}, {0.9}};
  const auto b = make_batch(std::vector<SequenceSample>{s});
  const auto out = predictor_forward(m, b);

  double h = 0.0;
  std::vector<double> preds;
  for (double x : {0.4, -1.2, 0.9}) {
    const double z = ref_sigmoid(0.5 * x - 0.3 * h + 0.1);
    const double r = ref_sigmoid(0.2 * x + 0.7 * h - 0.2);
    const double cand = std::tanh(1.1 * x - 0.4 * (r * h) + 0.05);
    h = (1.0 - z) * h + z * cand;
    preds.push_back(1.5 * h - 0.25);
  }
  ASSERT_EQ(out.predictions.dim1(), 2u);
  EXPECT_NEAR(out.predictions(0, 0, 0), preds[0], 1e-15);
  EXPECT_NEAR(out.predictions(0, 1, 0), preds[1], 1e-15);
  const double expected_loss =
      ((preds[0] + 1.2) * (preds[0] + 1.2) + (preds[1] - 0.9) * (preds[1] - 0.9)) / 2.0;
  EXPECT_NEAR(predictor_loss(out.predictions, b), expected_loss, 1e-15);
}

TEST(PredictorForward, ShortSequenceRejectedWithSampleIndex) {
  const auto m = make_predictor(PredictorArch{CellKind::gru, 2, 3, true}, 1);
  auto xs = testkit::random_samples(3, 2, 3, 6, 2, 1);
  xs[2].data = Matrix(1, 2);
  try {
    predictor_forward(m, make_batch(xs));
    FAIL() << "expected ArgumentError";
  } catch (const ArgumentError& e) {
    EXPECT_NE(std::string(e.what()).find("sample 2"), std::string::npos);
  }
}

TEST(PredictorLoss, ExactShiftAndConstantOffset) {
  const auto xs = testkit::random_samples(3, 2, 2, 9, 2, 6);
  const auto b = make_batch(xs, 0.0);
  Tensor3 shifted(3, b.max_length() - 1, 2);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t t = 0; t + 1 < b.lengths[i]; ++t) {
      for (std::size_t c = 0; c < 2; ++c) shifted(i, t, c) = b.data(i, t + 1, c);
    }
  }
  EXPECT_EQ(predictor_loss(shifted, b), 0.0);
  const double delta = 0.3;
  Tensor3 offset = shifted;
  for (auto& v : offset.span()) v += delta;
  EXPECT_NEAR(predictor_loss(offset, b), delta * delta, 1e-15);
  // masked prediction slots and padded inputs are ignored
  const auto b7 = make_batch(xs, 7.0);
  EXPECT_EQ(predictor_loss(offset, b), predictor_loss(offset, b7));
}

TEST(SemiForward, RowsSumToOneAndPadInvariant) {
  const auto xs = testkit::random_samples(5, 3, 2, 12, 4, 3);
  for (auto feed : {FeedKind::hidden_states, FeedKind::predictions}) {
    const auto m = make_semi(PredictorArch{CellKind::gru, 3, 5, true},
                             ClassifierArch{CellKind::gru, 0, 4, 4, fcl_head(6, 0.5), true}, feed,
                             2);
    const Matrix p = semi_forward(m, make_batch(xs, 0.0), true, {4});
    for (std::size_t i = 0; i < p.rows(); ++i) {
      double s = 0.0;
      for (double v : p.row(i)) s += v;
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
    EXPECT_EQ(p, semi_forward(m, make_batch(xs, 7.0), true, {4}));
  }
}

TEST(SemiForward, EqualsManualStacking) {
  const auto xs = testkit::random_samples(4, 3, 2, 15, 4, 5);
  const auto m = make_semi(PredictorArch{CellKind::gru, 3, 5, true},
                           ClassifierArch{CellKind::lstm, 0, 4, 4, {}, true},
                           FeedKind::hidden_states, 7);
  const auto b = make_batch(xs);
  const Matrix stacked = semi_forward(m, b);
  const auto pout = predictor_forward(m.predictor, b);
  // feed the predictor's hidden states to the standalone classifier
  std::vector<SequenceSample> hidden;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    SequenceSample s;
    s.data = Matrix(xs[i].length(), 5);
    for (std::size_t t = 0; t < xs[i].length(); ++t) {
      for (std::size_t j = 0; j < 5; ++j) s.data(t, j) = pout.hidden(i, t, j);
    }
    hidden.push_back(s);
  }
  const Matrix manual = classifier_forward(m.classifier, make_batch(hidden));
  for (std::size_t i = 0; i < stacked.size(); ++i) {
    EXPECT_NEAR(stacked.span()[i], manual.span()[i], 1e-12);
  }
}

TEST(SemiModel, MismatchedClassifierInputRejected) {
  EXPECT_THROW(make_semi(PredictorArch{CellKind::gru, 3, 5, true},
                         ClassifierArch{CellKind::gru, 4, 4, 4, {}, true}, FeedKind::hidden_states,
                         1),
               ShapeError);
}
