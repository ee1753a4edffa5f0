#pragma once

// Mini-batch training loops: supervised classifier, next-step predictor, the
// staged semi-supervised procedure, and k-fold cross-validation.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "terrain/analysis.hpp"
#include "terrain/models.hpp"
#include "terrain/sequence.hpp"
#include "terrain/training/gradients.hpp"
#include "terrain/training/optimizer.hpp"
#include "terrain/training/splits.hpp"

namespace terrain {

struct EpochStats {
  std::size_t epoch = 0;
  double loss = 0.0;
  double data_loss = 0.0;
  double accuracy = 0.0;  // classification stages only
  double learning_rate = 0.0;
};

struct History {
  std::vector<EpochStats> epochs;
};

/// Called after every epoch; return false to stop early.
using EpochCallback = std::function<bool(const EpochStats&)>;

/// Tags errors with the stage (and fold) they came from.
class TrainingError : public NumericError {
 public:
  TrainingError(const std::string& stage, const std::string& what)
      : NumericError(stage + ": " + what), stage_(stage) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b, std::uint64_t c = 0) {
  std::uint64_t x = a * 0x9e3779b97f4a7c15ULL ^ (b + 0x632be59bd9b4e019ULL) * 0xbf58476d1ce4e5b9ULL ^
                    (c + 0x2545f4914f6cdd1dULL) * 0x94d049bb133111ebULL;
  x ^= x >> 31;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 29;
  return x;
}

/// Shared epoch loop. `step(batch, opts, lr)` performs backward + update on
/// one batch and returns (loss, data_loss, correct).
struct StepResult {
  double loss;
  double data_loss;
  std::size_t correct;
};

template <typename StepFn>
History run_epochs(std::span<const SequenceSample> data, const TrainConfig& cfg, StepFn&& step,
                   std::uint64_t stream, const EpochCallback& on_epoch) {
  History hist;
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 shuffle_rng(mix_seed(cfg.seed, stream));
  double lr = cfg.learning_rate;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss = 0.0, data_loss = 0.0;
    std::size_t correct = 0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const auto idx = std::span<const std::size_t>(order).subspan(start, end - start);
      const auto batch = make_batch(data, idx);
      LossOptions opts;
      opts.lambda = cfg.lambda;
      opts.train_mode = true;
      opts.dropout = DropoutStream{mix_seed(cfg.seed, stream + 1, epoch * 1000003 + batch_index)};
      opts.batch_index = batch_index;
      const StepResult r = step(batch, opts, lr);
      const double w = static_cast<double>(idx.size());
      loss += r.loss * w;
      data_loss += r.data_loss * w;
      correct += r.correct;
    }
    const double n = static_cast<double>(data.size());
    EpochStats st{epoch, loss / n, data_loss / n, static_cast<double>(correct) / n, lr};
    hist.epochs.push_back(st);
    if (!std::isfinite(st.loss)) {
      throw NumericError("loss diverged at epoch " + std::to_string(epoch));
    }
    lr *= cfg.lr_decay;
    if (on_epoch && !on_epoch(st)) break;
  }
  return hist;
}

inline void apply_dropout_override(ClassifierArch& arch, const TrainConfig& cfg) {
  if (cfg.dropout) {
    for (auto& r : arch.head.dropout) r = *cfg.dropout;
  }
}

}  // namespace detail

struct SupervisedResult {
  ClassifierModel model;
  History history;
};

/// Trains a fresh classifier on already-normalized samples. input_dim is taken
/// from the data when left at 0.
inline SupervisedResult train_supervised(std::span<const SequenceSample> data, ClassifierArch arch,
                                         const TrainConfig& cfg,
                                         const EpochCallback& on_epoch = {}) {
  if (data.empty()) throw ArgumentError("train_supervised: empty dataset");
  validate(cfg);
  if (arch.input_dim == 0) arch.input_dim = data.front().channels();
  detail::apply_dropout_override(arch, cfg);
  SupervisedResult res{make_classifier(arch, cfg.seed), {}};
  Optimizer opt(cfg);
  auto step = [&](const SequenceBatch& b, const LossOptions& o, double lr) {
    auto lg = classifier_backward(res.model, b, o);
    opt.step(res.model, lg.grads, lr);
    return detail::StepResult{lg.loss, lg.data_loss, lg.correct};
  };
  try {
    res.history = detail::run_epochs(data, cfg, step, 11, on_epoch);
  } catch (const NumericError& e) {
    throw TrainingError("supervised", e.what());
  }
  return res;
}

struct PredictorResult {
  PredictorModel model;
  History history;
};

inline PredictorResult train_predictor(std::span<const SequenceSample> data, PredictorArch arch,
                                       const TrainConfig& cfg,
                                       const EpochCallback& on_epoch = {}) {
  if (data.empty()) throw ArgumentError("train_predictor: empty dataset");
  validate(cfg);
  if (arch.input_dim == 0) arch.input_dim = data.front().channels();
  PredictorResult res{make_predictor(arch, cfg.seed), {}};
  Optimizer opt(cfg);
  auto step = [&](const SequenceBatch& b, const LossOptions& o, double lr) {
    auto lg = predictor_backward(res.model, b, o);
    opt.step(res.model, lg.grads, lr);
    return detail::StepResult{lg.loss, lg.data_loss, 0};
  };
  try {
    res.history = detail::run_epochs(data, cfg, step, 23, on_epoch);
  } catch (const NumericError& e) {
    throw TrainingError("predictor", e.what());
  }
  return res;
}

/// Settings for the three-stage semi-supervised procedure.
struct SemiConfig {
  PredictorArch predictor{CellKind::gru, 0, 50, true};
  ClassifierArch classifier{CellKind::gru, 0, 200, 0, fcl_head(), true};
  FeedKind feed = FeedKind::hidden_states;
  TrainConfig predictor_train;   // stage 1
  TrainConfig classifier_train;  // stages 2 and 3
  double predictor_lambda = 0.0;  // L2 for stage 1
  double ft_factor = 0.1;         // stage-3 learning rate multiplier
  std::optional<std::size_t> ft_epochs;  // defaults to classifier_train.epochs
};

struct SemiResult {
  PredictorModel stage1_predictor;
  SemiSupervisedModel fe_model;
  std::optional<SemiSupervisedModel> ft_model;
  History predictor_history, fe_history, ft_history;
  EvalReport fe_validation, fe_test;
  std::optional<EvalReport> ft_validation, ft_test;
};

inline std::vector<SequenceSample> gather(std::span<const SequenceSample> data,
                                          std::span<const std::size_t> idx) {
  std::vector<SequenceSample> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(data[i]);
  return out;
}

/// Stage 1 trains the predictor on the predicting data; stage 2 freezes it and
/// trains the stacked classifier on fold A (FE); stage 3 (fine_tune) unfreezes
/// everything and retrains on fold A at a reduced learning rate (FE+FT).
/// Validation is on fold B; test accuracy is on the predicting data.
inline SemiResult train_semi_supervised(std::span<const SequenceSample> data, SemiConfig cfg,
                                        const SemiSplit& split, bool fine_tune,
                                        const EpochCallback& on_epoch = {}) {
  if (split.predicting.empty() || split.fold_a.empty()) {
    throw ArgumentError("train_semi_supervised: split has an empty portion");
  }
  for (const auto* part : {&split.predicting, &split.fold_a, &split.fold_b}) {
    for (auto i : *part) {
      if (i >= data.size()) throw ArgumentError("train_semi_supervised: split index out of range");
    }
  }
  validate(cfg.predictor_train);
  validate(cfg.classifier_train);
  const auto predicting = gather(data, split.predicting);
  const auto train = gather(data, split.fold_a);
  const auto val = gather(data, split.fold_b);
  if (cfg.predictor.input_dim == 0) cfg.predictor.input_dim = data.front().channels();

  SemiResult res;
  TrainConfig pcfg = cfg.predictor_train;
  pcfg.lambda = cfg.predictor_lambda;
  try {
    auto pr = train_predictor(predicting, cfg.predictor, pcfg, on_epoch);
    res.stage1_predictor = pr.model;
    res.predictor_history = std::move(pr.history);
  } catch (const NumericError& e) {
    throw TrainingError("semi/stage1-predictor", e.what());
  }

  ClassifierArch carch = cfg.classifier;
  carch.input_dim = stacked_input_dim(cfg.predictor, cfg.feed);
  detail::apply_dropout_override(carch, cfg.classifier_train);
  SemiSupervisedModel model{res.stage1_predictor,
                            make_classifier(carch, cfg.classifier_train.seed), cfg.feed, true};

  // Stage 2: only the classifier half is handed to the optimizer.
  try {
    Optimizer opt(cfg.classifier_train);
    auto step = [&](const SequenceBatch& b, const LossOptions& o, double lr) {
      auto lg = semi_backward(model, b, o);
      opt.step(model.classifier, lg.grads.classifier, lr);
      return detail::StepResult{lg.loss, lg.data_loss, lg.correct};
    };
    res.fe_history = detail::run_epochs(train, cfg.classifier_train, step, 37, on_epoch);
  } catch (const NumericError& e) {
    throw TrainingError("semi/stage2-feature-extracting", e.what());
  }
  res.fe_model = model;
  if (!val.empty()) res.fe_validation = evaluate(res.fe_model, val);
  res.fe_test = evaluate(res.fe_model, predicting);

  if (fine_tune) {
    TrainConfig ft = cfg.classifier_train;
    ft.learning_rate *= cfg.ft_factor;
    ft.epochs = cfg.ft_epochs.value_or(ft.epochs);
    model.freeze_predictor = false;
    try {
      Optimizer opt(ft);
      auto step = [&](const SequenceBatch& b, const LossOptions& o, double lr) {
        auto lg = semi_backward(model, b, o);
        if (model.feed == FeedKind::hidden_states) {
          // readout is not part of the classification graph
          auto ps = tensor_spans(model.classifier);
          auto gs = tensor_spans(std::as_const(lg.grads.classifier));
          std::visit([&](auto& p) { for (auto s : tensor_spans(p)) ps.push_back(s); },
                     model.predictor.cell);
          std::visit([&](const auto& g) { for (auto s : tensor_spans(g)) gs.push_back(s); },
                     std::as_const(lg.grads.predictor.cell));
          opt.step(std::span<const std::span<double>>(ps),
                   std::span<const std::span<const double>>(gs), lr);
        } else {
          opt.step(model, lg.grads, lr);
        }
        return detail::StepResult{lg.loss, lg.data_loss, lg.correct};
      };
      res.ft_history = detail::run_epochs(train, ft, step, 53, on_epoch);
    } catch (const NumericError& e) {
      throw TrainingError("semi/stage3-fine-tuning", e.what());
    }
    res.ft_model = model;
    if (!val.empty()) res.ft_validation = evaluate(*res.ft_model, val);
    res.ft_test = evaluate(*res.ft_model, predicting);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Cross-validation

struct SummaryStats {
  double mean = 0.0, sd = 0.0, min = 0.0, max = 0.0;
};

/// Mean, population standard deviation, min and max.
inline SummaryStats summarize(std::span<const double> xs) {
  if (xs.empty()) return {};
  SummaryStats s;
  s.min = *std::min_element(xs.begin(), xs.end());
  s.max = *std::max_element(xs.begin(), xs.end());
  s.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - s.mean) * (x - s.mean);
  s.sd = std::sqrt(var / static_cast<double>(xs.size()));
  // keep min <= mean <= max under rounding
  s.mean = std::clamp(s.mean, s.min, s.max);
  return s;
}

enum class NormalizationMode { per_split, global, none };

struct CvOptions {
  std::size_t parallel_folds = 1;
  NormalizationMode normalization = NormalizationMode::per_split;
  bool stratified = true;
};

struct CvReport {
  std::size_t k = 0;
  std::vector<double> fold_accuracies;
  std::vector<BasicMatrix<std::size_t>> confusions;
  std::vector<History> histories;
  SummaryStats stats;
};

/// Samples normalized for one train/validation partition.
struct PreparedSplit {
  std::vector<SequenceSample> train, validation;
  NormStats stats;
};

inline PreparedSplit prepare_split(std::span<const SequenceSample> data,
                                   std::span<const std::size_t> train_idx,
                                   std::span<const std::size_t> val_idx, NormalizationMode mode) {
  PreparedSplit p{gather(data, train_idx), gather(data, val_idx), {}};
  if (mode == NormalizationMode::none) return p;
  p.stats = mode == NormalizationMode::per_split ? fit_normalizer(p.train) : fit_normalizer(data);
  p.train = apply_normalizer(p.stats, p.train);
  p.validation = apply_normalizer(p.stats, p.validation);
  return p;
}

/// k independent models, fold f trained with seed + f on raw (unnormalized)
/// samples; the normalizer is fit on each fold's training portion.
inline CvReport cross_validate(std::span<const SequenceSample> data, const ClassifierArch& arch,
                               const TrainConfig& cfg, std::size_t k,
                               const CvOptions& options = {}) {
  std::vector<std::size_t> labels;
  labels.reserve(data.size());
  for (const auto& s : data) labels.push_back(s.label);
  const auto plan = kfold_split(data.size(), labels, k, cfg.seed, options.stratified);

  CvReport report;
  report.k = k;
  report.fold_accuracies.assign(k, 0.0);
  report.confusions.assign(k, {});
  report.histories.assign(k, {});
  std::vector<std::exception_ptr> errors(k);

  auto run_fold = [&](std::size_t f) {
    try {
      auto prep = prepare_split(data, plan.train[f], plan.validation[f], options.normalization);
      TrainConfig fc = cfg;
      fc.seed = cfg.seed + f;
      auto res = train_supervised(prep.train, arch, fc);
      auto ev = evaluate(res.model, prep.validation);
      report.fold_accuracies[f] = ev.accuracy;
      report.confusions[f] = std::move(ev.confusion);
      report.histories[f] = std::move(res.history);
    } catch (const NumericError& e) {
      errors[f] = std::make_exception_ptr(TrainingError("fold " + std::to_string(f), e.what()));
    } catch (...) {
      errors[f] = std::current_exception();
    }
  };

  const std::size_t workers = std::clamp<std::size_t>(options.parallel_folds, 1, k);
  if (workers == 1) {
    for (std::size_t f = 0; f < k; ++f) run_fold(f);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t f = next++; f < k; f = next++) run_fold(f);
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  report.stats = summarize(report.fold_accuracies);
  return report;
}

}  // namespace terrain
