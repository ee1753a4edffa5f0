#pragma once

// Supervised classifier (recurrent cell + fully-connected head + softmax at the
// final valid step), next-step predictor, and the predictor-under-classifier
// stack used for semi-supervised training.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "terrain/core_math.hpp"
#include "terrain/rnn_cells.hpp"
#include "terrain/sequence.hpp"

namespace terrain {

struct DenseLayer {
  Matrix w;  // out x in
  Vector b;  // out
};

/// Hidden fully-connected layers between the recurrent final state and the
/// output layer. The output layer (width num_classes) is always appended.
/// `dropout[i]` is applied to the output of hidden layer i.
struct HeadSpec {
  std::vector<std::size_t> hidden_widths;
  std::vector<double> dropout;

  friend bool operator==(const HeadSpec&, const HeadSpec&) = default;
};

/// Two-layer head with dropout, used for the "RNNs+FCL" configuration.
inline HeadSpec fcl_head(std::size_t width = 128, double dropout = 0.5) {
  return HeadSpec{{width}, {dropout}};
}

struct ClassifierArch {
  CellKind cell = CellKind::gru;
  std::size_t input_dim = 0;
  std::size_t hidden = 0;
  std::size_t num_classes = 0;
  HeadSpec head;
  bool use_bias = true;

  friend bool operator==(const ClassifierArch&, const ClassifierArch&) = default;
};

struct ClassifierModel {
  ClassifierArch arch;
  CellParams cell;
  std::vector<DenseLayer> head;
};

struct PredictorArch {
  CellKind cell = CellKind::gru;
  std::size_t input_dim = 0;
  std::size_t hidden = 0;
  bool use_bias = true;

  friend bool operator==(const PredictorArch&, const PredictorArch&) = default;
};

struct PredictorModel {
  PredictorArch arch;
  CellParams cell;
  DenseLayer readout;  // hidden -> input_dim
};

/// What the classifier in the stack consumes from the predictor.
enum class FeedKind { hidden_states, predictions };

struct SemiSupervisedModel {
  PredictorModel predictor;
  ClassifierModel classifier;
  FeedKind feed = FeedKind::hidden_states;
  bool freeze_predictor = true;
};

/// Seed for the dropout masks of one forward call. Masks for sample b are a
/// pure function of (seed, b), so a forward pass and its backward pass agree.
struct DropoutStream {
  std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// Construction

inline void validate(const ClassifierArch& a) {
  if (a.input_dim == 0 || a.hidden == 0 || a.num_classes == 0) {
    throw ArgumentError("classifier: input_dim, hidden and num_classes must be >= 1");
  }
  if (a.head.dropout.size() != a.head.hidden_widths.size()) {
    throw ArgumentError("classifier head: " + std::to_string(a.head.dropout.size()) +
                        " dropout rates for " + std::to_string(a.head.hidden_widths.size()) +
                        " hidden layers");
  }
  for (double r : a.head.dropout) {
    if (!(r >= 0.0 && r < 1.0)) {
      throw ArgumentError("classifier head: dropout rate " + std::to_string(r) +
                          " outside [0, 1)");
    }
  }
  for (auto w : a.head.hidden_widths) {
    if (w == 0) throw ArgumentError("classifier head: zero-width layer");
  }
}

inline DenseLayer make_dense(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  DenseLayer l{Matrix(out, in), Vector(out)};
  detail::glorot_fill(l.w, rng);
  return l;
}

inline ClassifierModel make_classifier(const ClassifierArch& arch, std::uint64_t seed) {
  validate(arch);
  ClassifierModel m;
  m.arch = arch;
  m.cell = init_params(arch.cell, arch.input_dim, arch.hidden, seed, arch.use_bias);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::size_t in = arch.hidden;
  for (auto w : arch.head.hidden_widths) {
    m.head.push_back(make_dense(in, w, rng));
    in = w;
  }
  m.head.push_back(make_dense(in, arch.num_classes, rng));
  return m;
}

inline PredictorModel make_predictor(const PredictorArch& arch, std::uint64_t seed) {
  if (arch.input_dim == 0 || arch.hidden == 0) {
    throw ArgumentError("predictor: input_dim and hidden must be >= 1");
  }
  PredictorModel m;
  m.arch = arch;
  m.cell = init_params(arch.cell, arch.input_dim, arch.hidden, seed, arch.use_bias);
  std::mt19937_64 rng(seed ^ 0x7f4a7c159e3779b9ULL);
  m.readout = make_dense(arch.hidden, arch.input_dim, rng);
  return m;
}

/// Classifier input width implied by the stack wiring.
inline std::size_t stacked_input_dim(const PredictorArch& p, FeedKind feed) {
  return feed == FeedKind::hidden_states ? p.hidden : p.input_dim;
}

inline SemiSupervisedModel make_semi(const PredictorArch& pred, ClassifierArch cls, FeedKind feed,
                                     std::uint64_t seed) {
  const std::size_t in = stacked_input_dim(pred, feed);
  if (cls.input_dim != 0 && cls.input_dim != in) {
    throw ShapeError("semi model: classifier input " + std::to_string(cls.input_dim) +
                     " does not match predictor output " + std::to_string(in));
  }
  cls.input_dim = in;
  return SemiSupervisedModel{make_predictor(pred, seed), make_classifier(cls, seed + 1), feed,
                             true};
}

// ---------------------------------------------------------------------------
// Tensor enumeration (parameters and same-shaped gradients)

template <typename M, typename F>
  requires std::same_as<std::remove_const_t<M>, DenseLayer>
void visit_tensors(M& l, F&& f) {
  f("w", l.w);
  f("b", l.b);
}

namespace detail {

template <typename F>
auto prefixed(std::string prefix, F& f) {
  return [prefix = std::move(prefix), &f](std::string_view name, auto& t) {
    f(prefix + std::string(name), t);
  };
}

template <typename C, typename F>
void visit_cell(C& cell, const std::string& prefix, F& f) {
  std::visit([&](auto& p) { visit_tensors(p, prefixed(prefix, f)); }, cell);
}

}  // namespace detail

template <typename M, typename F>
  requires std::same_as<std::remove_const_t<M>, ClassifierModel>
void visit_tensors(M& m, F&& f) {
  detail::visit_cell(m.cell, "cell/", f);
  for (std::size_t i = 0; i < m.head.size(); ++i) {
    visit_tensors(m.head[i], detail::prefixed("head/" + std::to_string(i) + "/", f));
  }
}

template <typename M, typename F>
  requires std::same_as<std::remove_const_t<M>, PredictorModel>
void visit_tensors(M& m, F&& f) {
  detail::visit_cell(m.cell, "cell/", f);
  visit_tensors(m.readout, detail::prefixed("readout/", f));
}

template <typename M, typename F>
  requires std::same_as<std::remove_const_t<M>, SemiSupervisedModel>
void visit_tensors(M& m, F&& f) {
  visit_tensors(m.predictor, detail::prefixed("predictor/", f));
  visit_tensors(m.classifier, detail::prefixed("classifier/", f));
}

/// Copy of `m` with every tensor (including disabled biases) zeroed.
template <typename M>
M zeros_like_model(const M& m) {
  M z = m;
  auto zero = [](std::string_view, auto& t) { t.fill(0.0); };
  visit_tensors(z, zero);
  auto zero_cell = [](CellParams& c) { std::visit([](auto& p) { p = zeros_like(p); }, c); };
  if constexpr (std::same_as<M, SemiSupervisedModel>) {
    zero_cell(z.predictor.cell);
    zero_cell(z.classifier.cell);
  } else {
    zero_cell(z.cell);
  }
  return z;
}

template <typename M>
std::size_t parameter_count(const M& m) {
  std::size_t n = 0;
  visit_tensors(m, [&](std::string_view, const auto& t) { n += t.span().size(); });
  return n;
}

// ---------------------------------------------------------------------------
// Per-sample forward passes with the intermediates kept for backpropagation.

template <RecurrentParams P>
struct Trace {
  std::vector<StepCache<P>> steps;

  std::size_t length() const { return steps.size(); }
  const Vector& hidden(std::size_t t) const { return steps[t].h; }
};

using AnyTrace = std::variant<Trace<VanillaParams>, Trace<GruParams>, Trace<LstmParams>>;

/// Runs the cell over `length` rows of `inputs` (row-major, length x D) from a
/// zero state. Nothing past `length` is touched.
template <RecurrentParams P>
Trace<P> unroll(const P& p, std::span<const double> inputs, std::size_t length) {
  const std::size_t d = p.input_dim();
  if (inputs.size() < length * d) {
    throw ShapeError("unroll: " + std::to_string(inputs.size()) + " values for " +
                     std::to_string(length) + " steps of " + std::to_string(d) + " channels");
  }
  Trace<P> tr;
  tr.steps.resize(length);
  CellState state{Vector(p.hidden_dim()), P::kind == CellKind::lstm ? Vector(p.hidden_dim())
                                                                    : Vector()};
  for (std::size_t t = 0; t < length; ++t) {
    forward_step(p, inputs.subspan(t * d, d), state, tr.steps[t]);
  }
  return tr;
}

inline AnyTrace unroll(const CellParams& cell, std::span<const double> inputs,
                       std::size_t length) {
  return std::visit([&](const auto& p) -> AnyTrace { return unroll(p, inputs, length); }, cell);
}

inline std::size_t trace_length(const AnyTrace& tr) {
  return std::visit([](const auto& t) { return t.length(); }, tr);
}

inline const Vector& trace_hidden(const AnyTrace& tr, std::size_t t) {
  return std::visit([t](const auto& x) -> const Vector& { return x.hidden(t); }, tr);
}

/// Hidden states of a trace as a length x H matrix.
inline Matrix trace_states(const AnyTrace& tr) {
  const std::size_t n = trace_length(tr);
  const std::size_t h = n ? trace_hidden(tr, 0).dim() : 0;
  Matrix out(n, h);
  for (std::size_t t = 0; t < n; ++t) {
    const auto& v = trace_hidden(tr, t);
    std::copy(v.begin(), v.end(), out.row(t).begin());
  }
  return out;
}

struct HeadCache {
  std::vector<Vector> inputs;   // input to each layer
  std::vector<Vector> pre;      // pre-activation of each layer
  std::vector<Vector> keep;     // scaled dropout mask per hidden layer (empty if inactive)
  Vector probs;
};

inline std::mt19937_64 dropout_rng(DropoutStream stream, std::size_t sample) {
  std::seed_seq seq{static_cast<std::uint32_t>(stream.seed), static_cast<std::uint32_t>(stream.seed >> 32),
                    static_cast<std::uint32_t>(sample), static_cast<std::uint32_t>(sample >> 32)};
  return std::mt19937_64(seq);
}

/// Hidden layers use ReLU; the output layer feeds softmax.
inline void head_forward(const std::vector<DenseLayer>& head, const HeadSpec& spec,
                         std::span<const double> input, bool train_mode, std::mt19937_64* rng,
                         HeadCache& cache) {
  const std::size_t n = head.size();
  cache.inputs.assign(n, Vector());
  cache.pre.assign(n, Vector());
  cache.keep.assign(n, Vector());
  Vector x(std::vector<double>(input.begin(), input.end()));
  for (std::size_t l = 0; l < n; ++l) {
    const auto& layer = head[l];
    if (x.dim() != layer.w.cols()) {
      throw ShapeError("head layer " + std::to_string(l) + ": expects " +
                       std::to_string(layer.w.cols()) + " inputs, got " + std::to_string(x.dim()));
    }
    cache.inputs[l] = x;
    Vector a = layer.b;
    gemv_add(layer.w, x.span(), a.span());
    cache.pre[l] = a;
    if (l + 1 == n) {
      softmax_inplace(a.span());
      cache.probs = std::move(a);
      break;
    }
    for (auto& v : a) v = v > 0.0 ? v : 0.0;
    const double rate = spec.dropout[l];
    if (train_mode && rate > 0.0 && rng != nullptr) {
      Vector keep(a.dim());
      std::bernoulli_distribution survive(1.0 - rate);
      const double scale = 1.0 / (1.0 - rate);
      for (std::size_t j = 0; j < a.dim(); ++j) {
        keep[j] = survive(*rng) ? scale : 0.0;
        a[j] *= keep[j];
      }
      cache.keep[l] = std::move(keep);
    }
    x = std::move(a);
  }
}

/// Backpropagates dlogits through the head. Gradients accumulate into `g`;
/// the gradient w.r.t. the head input is written to `dinput`.
inline void head_backward(const std::vector<DenseLayer>& head, const HeadCache& cache,
                          Vector dlogits, std::vector<DenseLayer>& g, Vector& dinput) {
  Vector da = std::move(dlogits);
  for (std::size_t l = head.size(); l-- > 0;) {
    outer_add(g[l].w, std::span<const double>(da.span()), cache.inputs[l].span());
    for (std::size_t j = 0; j < da.dim(); ++j) g[l].b[j] += da[j];
    Vector dx(head[l].w.cols());
    gemv_t_add(head[l].w, std::span<const double>(da.span()), dx.span());
    if (l == 0) {
      dinput = std::move(dx);
      break;
    }
    // through dropout and ReLU of the previous hidden layer
    const auto& keep = cache.keep[l - 1];
    const auto& pre = cache.pre[l - 1];
    for (std::size_t j = 0; j < dx.dim(); ++j) {
      if (!keep.empty()) dx[j] *= keep[j];
      if (pre[j] <= 0.0) dx[j] = 0.0;
    }
    da = std::move(dx);
  }
}

struct ClassifierSampleForward {
  AnyTrace trace;
  HeadCache head;
};

inline void check_input_dim(std::size_t expected, std::size_t got, const char* who) {
  if (expected != got) {
    throw ShapeError(std::string(who) + ": model expects " + std::to_string(expected) +
                     " input channels, batch has " + std::to_string(got));
  }
}

/// Classifier on one sample given as a contiguous length x input_dim block.
inline ClassifierSampleForward classifier_sample_forward(const ClassifierModel& m,
                                                         std::span<const double> inputs,
                                                         std::size_t length, bool train_mode,
                                                         std::mt19937_64* rng) {
  ClassifierSampleForward out{unroll(m.cell, inputs, length), {}};
  const auto& h_final = trace_hidden(out.trace, length - 1);
  head_forward(m.head, m.arch.head, h_final.span(), train_mode, rng, out.head);
  return out;
}

struct PredictorSampleForward {
  AnyTrace trace;
  Matrix predictions;  // length x D; row t estimates input t+1 (last row is extrapolation)
};

inline PredictorSampleForward predictor_sample_forward(const PredictorModel& m,
                                                       std::span<const double> inputs,
                                                       std::size_t length) {
  PredictorSampleForward out{unroll(m.cell, inputs, length), Matrix(length, m.arch.input_dim)};
  for (std::size_t t = 0; t < length; ++t) {
    auto row = out.predictions.row(t);
    std::copy(m.readout.b.begin(), m.readout.b.end(), row.begin());
    gemv_add(m.readout.w, trace_hidden(out.trace, t).span(), row);
  }
  return out;
}

/// The predictor output sequence the stacked classifier consumes.
inline Matrix stacked_features(const SemiSupervisedModel& m, const PredictorSampleForward& pf) {
  return m.feed == FeedKind::hidden_states ? trace_states(pf.trace) : pf.predictions;
}

// ---------------------------------------------------------------------------
// Batch forward passes

/// B x C class distributions from the final valid step of each sample.
inline Matrix classifier_forward(const ClassifierModel& m, const SequenceBatch& b,
                                 bool train_mode = false, DropoutStream dropout = {}) {
  check_input_dim(m.arch.input_dim, b.channels(), "classifier_forward");
  Matrix out(b.size(), m.arch.num_classes);
  for (std::size_t i = 0; i < b.size(); ++i) {
    auto rng = dropout_rng(dropout, i);
    auto f = classifier_sample_forward(m, b.valid_steps(i), b.lengths[i], train_mode, &rng);
    std::copy(f.head.probs.begin(), f.head.probs.end(), out.row(i).begin());
  }
  return out;
}

struct PredictorOutput {
  Tensor3 hidden;       // B x T_max x H, zero past each length
  Tensor3 predictions;  // B x (T_max - 1) x D, zero past each length - 1
};

inline void require_predictable(const SequenceBatch& b) {
  for (std::size_t i = 0; i < b.size(); ++i) {
    if (b.lengths[i] < 2) {
      throw ArgumentError("predictor: sample " + std::to_string(i) + " has length " +
                          std::to_string(b.lengths[i]) + "; next-step prediction needs >= 2");
    }
  }
}

inline PredictorOutput predictor_forward(const PredictorModel& m, const SequenceBatch& b) {
  check_input_dim(m.arch.input_dim, b.channels(), "predictor_forward");
  require_predictable(b);
  const std::size_t t_max = b.max_length();
  PredictorOutput out{Tensor3(b.size(), t_max, m.arch.hidden),
                      Tensor3(b.size(), t_max - 1, m.arch.input_dim)};
  for (std::size_t i = 0; i < b.size(); ++i) {
    auto f = predictor_sample_forward(m, b.valid_steps(i), b.lengths[i]);
    for (std::size_t t = 0; t < b.lengths[i]; ++t) {
      const auto& h = trace_hidden(f.trace, t);
      std::copy(h.begin(), h.end(), out.hidden.slice(i, t).begin());
      if (t + 1 < b.lengths[i]) {
        auto p = f.predictions.row(t);
        std::copy(p.begin(), p.end(), out.predictions.slice(i, t).begin());
      }
    }
  }
  return out;
}

/// Mean squared next-step error over valid positions and channels.
inline double predictor_loss(const Tensor3& predictions, const SequenceBatch& b) {
  if (predictions.dim0() != b.size() || predictions.dim2() != b.channels() ||
      predictions.dim1() + 1 != b.max_length()) {
    throw ShapeError("predictor_loss: predictions do not match batch shape");
  }
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    for (std::size_t t = 0; t + 1 < b.lengths[i]; ++t) {
      auto pred = predictions.slice(i, t);
      auto target = b.step(i, t + 1);
      for (std::size_t c = 0; c < pred.size(); ++c) {
        const double e = pred[c] - target[c];
        sum += e * e;
      }
      count += pred.size();
    }
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

inline Matrix semi_forward(const SemiSupervisedModel& m, const SequenceBatch& b,
                           bool train_mode = false, DropoutStream dropout = {}) {
  check_input_dim(m.predictor.arch.input_dim, b.channels(), "semi_forward");
  check_input_dim(m.classifier.arch.input_dim, stacked_input_dim(m.predictor.arch, m.feed),
                  "semi_forward (stack)");
  Matrix out(b.size(), m.classifier.arch.num_classes);
  for (std::size_t i = 0; i < b.size(); ++i) {
    auto pf = predictor_sample_forward(m.predictor, b.valid_steps(i), b.lengths[i]);
    const Matrix feats = stacked_features(m, pf);
    auto rng = dropout_rng(dropout, i);
    auto f = classifier_sample_forward(m.classifier, feats.span(), b.lengths[i], train_mode, &rng);
    std::copy(f.head.probs.begin(), f.head.probs.end(), out.row(i).begin());
  }
  return out;
}

/// Hidden state of the classifier recurrence at every valid step of one sample.
inline Matrix classifier_hidden_states(const ClassifierModel& m, const SequenceSample& s) {
  check_input_dim(m.arch.input_dim, s.channels(), "classifier_hidden_states");
  return trace_states(unroll(m.cell, s.data.span(), s.length()));
}

inline Matrix classifier_hidden_states(const SemiSupervisedModel& m, const SequenceSample& s) {
  check_input_dim(m.predictor.arch.input_dim, s.channels(), "classifier_hidden_states");
  auto pf = predictor_sample_forward(m.predictor, s.data.span(), s.length());
  const Matrix feats = stacked_features(m, pf);
  return trace_states(unroll(m.classifier.cell, feats.span(), s.length()));
}

/// Forward pass for either model type; used by evaluation.
inline Matrix predict_proba(const ClassifierModel& m, const SequenceBatch& b) {
  return classifier_forward(m, b, false);
}
inline Matrix predict_proba(const SemiSupervisedModel& m, const SequenceBatch& b) {
  return semi_forward(m, b, false);
}

}  // namespace terrain
