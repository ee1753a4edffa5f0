#pragma once

// Reverse-mode gradients of the regularized training losses through the head,
// final-state selection and the full unrolled recurrence. Only valid steps
// are ever unrolled, so padded positions contribute exactly nothing.

#include <cmath>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "terrain/core_math.hpp"
#include "terrain/models.hpp"
#include "terrain/rnn_cells.hpp"
#include "terrain/sequence.hpp"

namespace terrain {

struct LossOptions {
  double lambda = 0.01;
  bool train_mode = true;
  DropoutStream dropout;
  std::size_t batch_index = 0;  // reported in numeric errors
};

template <typename M>
struct LossAndGrads {
  double loss = 0.0;       // data term + L2 term
  double data_loss = 0.0;  // mean cross entropy or mean squared error
  std::size_t correct = 0; // argmax hits (classification only)
  M grads;
};

// ---------------------------------------------------------------------------
// Backpropagation through time for one sample.
//
// dh_ext row t is the loss gradient arriving at h_t from outside the
// recurrence. dx (length x input_dim) receives input gradients when non-null.

template <RecurrentParams P>
void bptt(const P& p, const Trace<P>& tr, const Matrix& dh_ext, P& g, Matrix* dx) {
  const std::size_t n = p.hidden_dim();
  Vector dh(n), dc(P::kind == CellKind::lstm ? n : 0);
  for (std::size_t t = tr.length(); t-- > 0;) {
    auto ext = dh_ext.row(t);
    for (std::size_t j = 0; j < n; ++j) dh[j] += ext[j];
    std::span<double> dx_row = dx ? dx->row(t) : std::span<double>();
    backward_step(p, tr.steps[t], dh, dc, g, dx_row);
  }
}

inline void bptt(const CellParams& p, const AnyTrace& tr, const Matrix& dh_ext, CellParams& g,
                 Matrix* dx) {
  std::visit(
      [&](const auto& params) {
        using P = std::remove_cvref_t<decltype(params)>;
        bptt(params, std::get<Trace<P>>(tr), dh_ext, std::get<P>(g), dx);
      },
      p);
}

// ---------------------------------------------------------------------------
// L2 term

template <typename M>
double add_l2(const M& params, M& grads, double lambda) {
  if (lambda == 0.0) return 0.0;
  std::vector<std::span<const double>> ps;
  std::vector<std::span<double>> gs;
  visit_tensors(params, [&](std::string_view, const auto& t) { ps.push_back(t.span()); });
  visit_tensors(grads, [&](std::string_view, auto& t) { gs.push_back(t.span()); });
  double s = 0.0;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    for (std::size_t j = 0; j < ps[i].size(); ++j) {
      s += ps[i][j] * ps[i][j];
      gs[i][j] += 2.0 * lambda * ps[i][j];
    }
  }
  return lambda * s;
}

namespace detail {

inline void check_finite_loss(double loss, std::size_t batch_index, std::size_t sample) {
  if (!std::isfinite(loss)) {
    throw NumericError("non-finite loss in batch " + std::to_string(batch_index) + " (sample " +
                       std::to_string(sample) + ")");
  }
}

inline std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = i;
  }
  return best;
}

// Cross entropy on one sample plus dL/dlogits scaled by 1/B.
inline double softmax_xent_grad(const Vector& probs, std::size_t label, double scale,
                                Vector& dlogits) {
  if (label >= probs.dim()) {
    throw ArgumentError("label " + std::to_string(label) + " out of range for " +
                        std::to_string(probs.dim()) + " classes");
  }
  dlogits = probs;
  dlogits[label] -= 1.0;
  for (auto& v : dlogits) v *= scale;
  return cross_entropy(probs.span(), label);
}

// Classifier backward on one sample. When dx is non-null it receives the
// gradient w.r.t. the classifier's input sequence.
inline double classifier_sample_backward(const ClassifierModel& m, std::span<const double> inputs,
                                         std::size_t length, std::size_t label, double scale,
                                         bool train_mode, std::mt19937_64& rng,
                                         ClassifierModel& g, Matrix* dx, bool& hit) {
  auto f = classifier_sample_forward(m, inputs, length, train_mode, &rng);
  hit = argmax(f.head.probs.span()) == label;
  Vector dlogits, dh_final;
  const double loss = softmax_xent_grad(f.head.probs, label, scale, dlogits);
  head_backward(m.head, f.head, std::move(dlogits), g.head, dh_final);
  Matrix dh_ext(length, m.arch.hidden);
  std::copy(dh_final.begin(), dh_final.end(), dh_ext.row(length - 1).begin());
  bptt(m.cell, f.trace, dh_ext, g.cell, dx);
  return loss;
}

}  // namespace detail

/// Mean cross entropy over the batch plus lambda * sum of squared parameters.
inline LossAndGrads<ClassifierModel> classifier_backward(const ClassifierModel& m,
                                                         const SequenceBatch& b,
                                                         const LossOptions& opt = {}) {
  check_input_dim(m.arch.input_dim, b.channels(), "classifier_backward");
  LossAndGrads<ClassifierModel> out{0.0, 0.0, 0, zeros_like_model(m)};
  const double scale = 1.0 / static_cast<double>(b.size());
  for (std::size_t i = 0; i < b.size(); ++i) {
    auto rng = dropout_rng(opt.dropout, i);
    bool hit = false;
    const double li = detail::classifier_sample_backward(m, b.valid_steps(i), b.lengths[i],
                                                         b.labels[i], scale, opt.train_mode, rng,
                                                         out.grads, nullptr, hit);
    detail::check_finite_loss(li, opt.batch_index, i);
    out.data_loss += li * scale;
    out.correct += hit ? 1 : 0;
  }
  out.loss = out.data_loss + add_l2(m, out.grads, opt.lambda);
  detail::check_finite_loss(out.loss, opt.batch_index, 0);
  return out;
}

/// Mean squared next-step error plus lambda * sum of squared parameters.
inline LossAndGrads<PredictorModel> predictor_backward(const PredictorModel& m,
                                                       const SequenceBatch& b,
                                                       const LossOptions& opt = {}) {
  check_input_dim(m.arch.input_dim, b.channels(), "predictor_backward");
  require_predictable(b);
  LossAndGrads<PredictorModel> out{0.0, 0.0, 0, zeros_like_model(m)};
  std::size_t count = 0;
  for (std::size_t i = 0; i < b.size(); ++i) count += (b.lengths[i] - 1) * b.channels();
  const double scale = 1.0 / static_cast<double>(count);
  const std::size_t d = m.arch.input_dim;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const std::size_t len = b.lengths[i];
    auto f = predictor_sample_forward(m, b.valid_steps(i), len);
    Matrix dh_ext(len, m.arch.hidden);
    Vector dpred(d);
    double sq = 0.0;
    for (std::size_t t = 0; t + 1 < len; ++t) {
      auto pred = f.predictions.row(t);
      auto target = b.step(i, t + 1);
      for (std::size_t c = 0; c < d; ++c) {
        const double e = pred[c] - target[c];
        sq += e * e;
        dpred[c] = 2.0 * e * scale;
      }
      const auto& h = trace_hidden(f.trace, t);
      outer_add(out.grads.readout.w, std::span<const double>(dpred.span()), h.span());
      for (std::size_t c = 0; c < d; ++c) out.grads.readout.b[c] += dpred[c];
      gemv_t_add(m.readout.w, std::span<const double>(dpred.span()), dh_ext.row(t));
    }
    detail::check_finite_loss(sq, opt.batch_index, i);
    out.data_loss += sq * scale;
    bptt(m.cell, f.trace, dh_ext, out.grads.cell, nullptr);
  }
  out.loss = out.data_loss + add_l2(m, out.grads, opt.lambda);
  detail::check_finite_loss(out.loss, opt.batch_index, 0);
  return out;
}

/// Classification loss of the stacked model. With freeze_predictor the
/// predictor receives exactly zero gradient and is excluded from the L2 term.
inline LossAndGrads<SemiSupervisedModel> semi_backward(const SemiSupervisedModel& m,
                                                       const SequenceBatch& b,
                                                       const LossOptions& opt = {}) {
  check_input_dim(m.predictor.arch.input_dim, b.channels(), "semi_backward");
  LossAndGrads<SemiSupervisedModel> out{0.0, 0.0, 0, zeros_like_model(m)};
  const double scale = 1.0 / static_cast<double>(b.size());
  const std::size_t feat_dim = m.classifier.arch.input_dim;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const std::size_t len = b.lengths[i];
    auto pf = predictor_sample_forward(m.predictor, b.valid_steps(i), len);
    const Matrix feats = stacked_features(m, pf);
    auto rng = dropout_rng(opt.dropout, i);
    Matrix dfeats(len, feat_dim);
    bool hit = false;
    const double li = detail::classifier_sample_backward(
        m.classifier, feats.span(), len, b.labels[i], scale, opt.train_mode, rng,
        out.grads.classifier, m.freeze_predictor ? nullptr : &dfeats, hit);
    detail::check_finite_loss(li, opt.batch_index, i);
    out.data_loss += li * scale;
    out.correct += hit ? 1 : 0;
    if (m.freeze_predictor) continue;
    if (m.feed == FeedKind::hidden_states) {
      bptt(m.predictor.cell, pf.trace, dfeats, out.grads.predictor.cell, nullptr);
    } else {
      Matrix dh_ext(len, m.predictor.arch.hidden);
      auto& gr = out.grads.predictor.readout;
      for (std::size_t t = 0; t < len; ++t) {
        auto dxt = std::span<const double>(dfeats.row(t));
        outer_add(gr.w, dxt, trace_hidden(pf.trace, t).span());
        for (std::size_t c = 0; c < dxt.size(); ++c) gr.b[c] += dxt[c];
        gemv_t_add(m.predictor.readout.w, dxt, dh_ext.row(t));
      }
      bptt(m.predictor.cell, pf.trace, dh_ext, out.grads.predictor.cell, nullptr);
    }
  }
  double reg = add_l2(m.classifier, out.grads.classifier, opt.lambda);
  if (!m.freeze_predictor) {
    if (m.feed == FeedKind::hidden_states) {
      // the readout does not take part in classification
      double s = 0.0;
      std::visit(
          [&](const auto& p) {
            using P = std::remove_cvref_t<decltype(p)>;
            s = add_l2(p, std::get<P>(out.grads.predictor.cell), opt.lambda);
          },
          m.predictor.cell);
      reg += s;
    } else {
      reg += add_l2(m.predictor, out.grads.predictor, opt.lambda);
    }
  }
  out.loss = out.data_loss + reg;
  detail::check_finite_loss(out.loss, opt.batch_index, 0);
  return out;
}

/// Scalar loss only (same value backward reports). Used by finite-difference checks.
inline double classifier_loss(const ClassifierModel& m, const SequenceBatch& b,
                              const LossOptions& opt = {}) {
  const Matrix probs = classifier_forward(m, b, opt.train_mode, opt.dropout);
  double loss = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) loss += cross_entropy(probs.row(i), b.labels[i]);
  loss /= static_cast<double>(b.size());
  double sq = 0.0;
  visit_tensors(m, [&](std::string_view, const auto& t) { sq += sum_of_squares(t.span()); });
  return loss + opt.lambda * sq;
}

inline double predictor_total_loss(const PredictorModel& m, const SequenceBatch& b,
                                   const LossOptions& opt = {}) {
  const auto out = predictor_forward(m, b);
  double sq = 0.0;
  visit_tensors(m, [&](std::string_view, const auto& t) { sq += sum_of_squares(t.span()); });
  return predictor_loss(out.predictions, b) + opt.lambda * sq;
}

inline double semi_loss(const SemiSupervisedModel& m, const SequenceBatch& b,
                        const LossOptions& opt = {}) {
  const Matrix probs = semi_forward(m, b, opt.train_mode, opt.dropout);
  double loss = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) loss += cross_entropy(probs.row(i), b.labels[i]);
  loss /= static_cast<double>(b.size());
  double sq = 0.0;
  auto acc = [&](std::string_view, const auto& t) { sq += sum_of_squares(t.span()); };
  visit_tensors(m.classifier, acc);
  if (!m.freeze_predictor) {
    if (m.feed == FeedKind::hidden_states) {
      std::visit([&](const auto& p) { visit_tensors(p, acc); }, m.predictor.cell);
    } else {
      visit_tensors(m.predictor, acc);
    }
  }
  return loss + opt.lambda * sq;
}

}  // namespace terrain

namespace terrain {

// Uniform entry point: the loss kind follows from the model type.
inline LossAndGrads<ClassifierModel> backward(const ClassifierModel& m, const SequenceBatch& b,
                                              const LossOptions& opt = {}) {
  return classifier_backward(m, b, opt);
}
inline LossAndGrads<PredictorModel> backward(const PredictorModel& m, const SequenceBatch& b,
                                             const LossOptions& opt = {}) {
  return predictor_backward(m, b, opt);
}
inline LossAndGrads<SemiSupervisedModel> backward(const SemiSupervisedModel& m,
                                                  const SequenceBatch& b,
                                                  const LossOptions& opt = {}) {
  return semi_backward(m, b, opt);
}

}  // namespace terrain
