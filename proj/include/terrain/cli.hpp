#pragma once

// Run specification and command dispatch behind the terrain-cli tool.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "terrain/analysis.hpp"
#include "terrain/checkpoint.hpp"
#include "terrain/config.hpp"
#include "terrain/data.hpp"
#include "terrain/training/trainer.hpp"

namespace terrain::cli {

namespace fs = std::filesystem;

enum ExitCode : int { kOk = 0, kConfigError = 2, kNumericError = 3 };

inline const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names{"train", "cv",    "semi",   "eval",
                                              "pca",   "synth", "convert"};
  return names;
}

struct RunSpec {
  std::string command;
  std::string manifest;
  std::optional<SynthConfig> synthetic;  // used when no manifest is given
  ClassifierArch classifier{CellKind::gru, 0, 200, 0, {}, true};
  TrainConfig train;
  SemiConfig semi;
  std::size_t holdout_k = 5;  // train: fold 0 of a stratified k-fold plan is held out
  std::size_t k = 10;
  std::size_t parallel_folds = 1;
  NormalizationMode normalization = NormalizationMode::per_split;
  bool stratified = true;
  unsigned labels = 5;
  bool fine_tune = false;
  std::string checkpoint;
  std::vector<double> fractions{10, 40, 70, 100};
  std::string source;  // convert
  std::string preset;  // convert
  std::string output_dir;
  std::uint64_t seed = 1;
};

inline Json to_json(const RunSpec& s) {
  Json j{{"command", s.command},
         {"manifest", s.manifest},
         {"classifier", to_json(s.classifier)},
         {"train", to_json(s.train)},
         {"semi", to_json(s.semi)},
         {"holdout_k", s.holdout_k},
         {"k", s.k},
         {"parallel_folds", s.parallel_folds},
         {"normalization", std::string(to_string(s.normalization))},
         {"stratified", s.stratified},
         {"labels", s.labels},
         {"fine_tune", s.fine_tune},
         {"checkpoint", s.checkpoint},
         {"fractions", s.fractions},
         {"source", s.source},
         {"preset", s.preset},
         {"output_dir", s.output_dir},
         {"seed", s.seed}};
  j["synthetic"] = s.synthetic ? to_json(*s.synthetic) : Json(nullptr);
  return j;
}

/// Fields absent from `j` keep the values already in `s`.
inline RunSpec run_spec_from_json(const Json& j, RunSpec s = {}) {
  detail::FieldReader r(j, "");
  r.optional("command", s.command);
  r.optional("manifest", s.manifest);
  if (r.has("synthetic")) {
    const Json& sj = r.raw("synthetic");
    if (sj.is_null()) {
      s.synthetic.reset();
    } else {
      s.synthetic = synth_config_from_json(sj, "synthetic", s.synthetic.value_or(SynthConfig{}));
    }
  }
  if (r.has("classifier")) {
    s.classifier = classifier_arch_from_json(r.raw("classifier"), "classifier", s.classifier);
  }
  if (r.has("train")) s.train = train_config_from_json(r.raw("train"), "train", s.train);
  if (r.has("semi")) s.semi = semi_config_from_json(r.raw("semi"), "semi", s.semi);
  r.optional("holdout_k", s.holdout_k);
  r.optional("k", s.k);
  r.optional("parallel_folds", s.parallel_folds);
  std::string norm(to_string(s.normalization));
  r.optional("normalization", norm);
  detail::check_at("normalization", [&] { s.normalization = parse_normalization(norm); });
  r.optional("stratified", s.stratified);
  std::size_t labels = s.labels;
  r.optional("labels", labels);
  s.labels = static_cast<unsigned>(labels);
  r.optional("fine_tune", s.fine_tune);
  r.optional("checkpoint", s.checkpoint);
  r.optional("fractions", s.fractions);
  r.optional("source", s.source);
  r.optional("preset", s.preset);
  r.optional("output_dir", s.output_dir);
  r.optional("seed", s.seed);
  r.finish();
  return s;
}

inline RunSpec read_run_spec(const fs::path& path, RunSpec base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  Json j;
  try {
    in >> j;
  } catch (const Json::exception& e) {
    throw ConfigError("config: " + path.string() + ": " + e.what());
  }
  return run_spec_from_json(j, std::move(base));
}

/// The top-level seed is copied into every training block so the resolved
/// config is self-contained.
inline void apply_seed(RunSpec& s) {
  s.train.seed = s.seed;
  s.semi.predictor_train.seed = s.seed;
  s.semi.classifier_train.seed = s.seed;
  if (s.synthetic) s.synthetic->seed = s.seed;
}

inline void validate(const RunSpec& s) {
  const auto& names = command_names();
  if (std::find(names.begin(), names.end(), s.command) == names.end()) {
    throw ConfigError("command: unknown command '" + s.command + "'");
  }
  if (s.output_dir.empty()) throw ConfigError("output_dir: required");
  const bool needs_data = s.command != "synth" && s.command != "convert";
  if (needs_data && s.manifest.empty() && !s.synthetic) {
    throw ConfigError("manifest: required (or provide a synthetic block)");
  }
  detail::check_at("train", [&] { validate(s.train); });
  if (s.command == "train" && s.holdout_k < 2) throw ConfigError("holdout_k: must be >= 2");
  if (s.command == "cv") {
    if (s.k < 2) throw ConfigError("k: must be >= 2");
    if (s.parallel_folds == 0) throw ConfigError("parallel_folds: must be >= 1");
  }
  if (s.command == "semi" &&
      std::find(std::begin(kSemiLabelPercents), std::end(kSemiLabelPercents), s.labels) ==
          std::end(kSemiLabelPercents)) {
    throw ConfigError("labels: " + std::to_string(s.labels) + " not in {5, 10, 15, 20, 25}");
  }
  if ((s.command == "eval" || s.command == "pca") && s.checkpoint.empty()) {
    throw ConfigError("checkpoint: required for " + s.command);
  }
  if (s.command == "pca") {
    if (s.fractions.empty()) throw ConfigError("fractions: at least one fraction required");
    for (double f : s.fractions) {
      if (!(f > 0.0 && f <= 100.0)) throw ConfigError("fractions: values must be in (0, 100]");
    }
  }
  if (s.command == "convert") {
    if (s.source.empty()) throw ConfigError("source: required for convert");
    if (s.preset.empty()) throw ConfigError("preset: required for convert");
  }
}

// ---------------------------------------------------------------------------
// Output helpers. Metric files carry no timestamps or timings.

struct LoadedData {
  std::vector<SequenceSample> samples;
  std::vector<std::string> class_names;
  std::size_t num_classes = 0;
};

inline LoadedData load_run_data(const RunSpec& s) {
  LoadedData d;
  if (!s.manifest.empty()) {
    const auto m = read_manifest(s.manifest);
    d.samples = load_dataset(m);
    d.class_names = m.class_names;
    d.num_classes = m.num_classes;
  } else {
    d.samples = generate_synthetic(*s.synthetic);
    const auto m = synthetic_manifest(*s.synthetic);
    d.class_names = m.class_names;
    d.num_classes = m.num_classes;
  }
  if (d.samples.empty()) throw ConfigError("data: dataset has no samples");
  if (d.class_names.empty()) {
    for (std::size_t c = 0; c < d.num_classes; ++c) d.class_names.push_back(std::to_string(c));
  }
  return d;
}

inline void write_json(const fs::path& p, const Json& j) {
  std::ofstream out(p);
  if (!out) throw ConfigError("output_dir: cannot write " + p.string());
  out << j.dump(2) << '\n';
}

inline void write_confusion_csv(const fs::path& p, const BasicMatrix<std::size_t>& c,
                                const std::vector<std::string>& names) {
  std::ofstream out(p);
  out << "true\\predicted";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  for (std::size_t r = 0; r < c.rows(); ++r) {
    out << (r < names.size() ? names[r] : std::to_string(r));
    for (std::size_t k = 0; k < c.cols(); ++k) out << ',' << c(r, k);
    out << '\n';
  }
}

inline Json confusion_json(const BasicMatrix<std::size_t>& c) {
  Json rows = Json::array();
  for (std::size_t r = 0; r < c.rows(); ++r) {
    rows.push_back(std::vector<std::size_t>(c.row(r).begin(), c.row(r).end()));
  }
  return rows;
}

inline Json history_json(const History& h) {
  Json out = Json::array();
  for (const auto& e : h.epochs) {
    out.push_back({{"epoch", e.epoch},
                   {"loss", e.loss},
                   {"data_loss", e.data_loss},
                   {"train_accuracy", e.accuracy},
                   {"learning_rate", e.learning_rate}});
  }
  return out;
}

inline std::string percent(double x) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << 100.0 * x;
  return os.str();
}

inline Json stats_json(const SummaryStats& s) {
  return Json{{"mean", s.mean}, {"sd", s.sd}, {"min", s.min}, {"max", s.max}};
}

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

inline EpochCallback progress(std::ostream& log, std::string stage, std::size_t epochs) {
  return [&log, stage = std::move(stage), epochs](const EpochStats& e) {
    log << stage << " epoch " << e.epoch + 1 << "/" << epochs << " loss " << e.loss;
    if (e.accuracy > 0.0) log << " train-acc " << percent(e.accuracy) << "%";
    log << '\n';
    return true;
  };
}

template <typename Model>
std::vector<SequenceSample> normalize_for(const Checkpoint& ck, const Model&,
                                          std::vector<SequenceSample> samples) {
  if (ck.normalizer) return apply_normalizer(*ck.normalizer, samples);
  return samples;
}

// ---------------------------------------------------------------------------
// Commands

inline int run_train(const RunSpec& s, const fs::path& out, std::ostream& log) {
  const auto data = load_run_data(s);
  ClassifierArch arch = s.classifier;
  if (arch.num_classes == 0) arch.num_classes = data.num_classes;
  std::vector<std::size_t> labels;
  for (const auto& x : data.samples) labels.push_back(x.label);
  const auto plan = kfold_split(data.samples.size(), labels, s.holdout_k, s.seed, s.stratified);
  const auto prep =
      prepare_split(data.samples, plan.train[0], plan.validation[0], s.normalization);
  const auto res = train_supervised(prep.train, arch, s.train, progress(log, "train", s.train.epochs));
  const auto ev = evaluate(res.model, prep.validation);

  std::optional<NormStats> norm;
  if (s.normalization != NormalizationMode::none) norm = prep.stats;
  save_checkpoint(out / "model.ckpt", res.model, s.train, norm, data.class_names);
  write_confusion_csv(out / "confusion.csv", ev.confusion, data.class_names);
  write_json(out / "metrics.json", Json{{"command", "train"},
                                        {"n_train", prep.train.size()},
                                        {"n_validation", prep.validation.size()},
                                        {"validation_accuracy", ev.accuracy},
                                        {"confusion", confusion_json(ev.confusion)},
                                        {"history", history_json(res.history)}});
  std::ostringstream txt;
  txt << "command      train\n"
      << "train        " << prep.train.size() << " samples\n"
      << "validation   " << prep.validation.size() << " samples\n"
      << "accuracy     " << percent(ev.accuracy) << " %\n"
      << "final loss   " << res.history.epochs.back().loss << '\n';
  write_text(out / "metrics.txt", txt.str());
  log << "validation accuracy " << percent(ev.accuracy) << "%\n";
  return kOk;
}

inline int run_cv(const RunSpec& s, const fs::path& out, std::ostream& log) {
  const auto data = load_run_data(s);
  ClassifierArch arch = s.classifier;
  if (arch.num_classes == 0) arch.num_classes = data.num_classes;
  log << "cross-validating " << s.k << " folds on " << data.samples.size() << " samples\n";
  const auto rep = cross_validate(data.samples, arch, s.train, s.k,
                                  CvOptions{s.parallel_folds, s.normalization, s.stratified});
  BasicMatrix<std::size_t> total(arch.num_classes, arch.num_classes);
  Json folds = Json::array();
  for (std::size_t f = 0; f < rep.k; ++f) {
    for (std::size_t i = 0; i < total.size(); ++i) total.span()[i] += rep.confusions[f].span()[i];
    write_confusion_csv(out / ("confusion_fold" + std::to_string(f) + ".csv"), rep.confusions[f],
                        data.class_names);
    folds.push_back({{"fold", f},
                     {"accuracy", rep.fold_accuracies[f]},
                     {"confusion", confusion_json(rep.confusions[f])},
                     {"history", history_json(rep.histories[f])}});
  }
  write_confusion_csv(out / "confusion.csv", total, data.class_names);
  write_json(out / "metrics.json", Json{{"command", "cv"},
                                        {"k", rep.k},
                                        {"fold_accuracies", rep.fold_accuracies},
                                        {"summary", stats_json(rep.stats)},
                                        {"folds", folds}});
  std::ostringstream txt;
  txt << "fold  accuracy(%)\n";
  for (std::size_t f = 0; f < rep.k; ++f) {
    txt << std::setw(4) << f << "  " << percent(rep.fold_accuracies[f]) << '\n';
  }
  txt << "\nmean  " << percent(rep.stats.mean) << "\nsd    " << percent(rep.stats.sd)
      << "\nmin   " << percent(rep.stats.min) << "\nmax   " << percent(rep.stats.max) << '\n';
  write_text(out / "metrics.txt", txt.str());
  log << "mean accuracy " << percent(rep.stats.mean) << "% (sd " << percent(rep.stats.sd) << ")\n";
  return kOk;
}

/// Both halves of the classifying data take a turn as the training fold; the
/// predicting portion is the test set in each turn.
inline int run_semi(const RunSpec& s, const fs::path& out, std::ostream& log) {
  const auto data = load_run_data(s);
  SemiConfig cfg = s.semi;
  if (cfg.classifier.num_classes == 0) cfg.classifier.num_classes = data.num_classes;
  std::vector<std::size_t> labels;
  for (const auto& x : data.samples) labels.push_back(x.label);
  const auto split = semi_split(data.samples.size(), labels, s.labels, s.seed);

  std::vector<std::size_t> fit_idx = split.predicting;
  fit_idx.insert(fit_idx.end(), split.fold_a.begin(), split.fold_a.end());
  fit_idx.insert(fit_idx.end(), split.fold_b.begin(), split.fold_b.end());
  std::optional<NormStats> norm;
  std::vector<SequenceSample> samples = data.samples;
  if (s.normalization != NormalizationMode::none) {
    norm = fit_normalizer(gather(samples, fit_idx));
    samples = apply_normalizer(*norm, samples);
  }

  Json folds = Json::array();
  std::vector<double> fe, ft, sup;
  std::optional<SemiSupervisedModel> first_model;
  std::ostringstream txt;
  txt << "labels " << s.labels << "% per fold; predicting " << split.predicting.size()
      << " samples; classifying " << split.fold_a.size() << " + " << split.fold_b.size() << "\n\n"
      << "fold  supervised(%)  FE(%)  FE+FT(%)\n";
  for (std::size_t f = 0; f < 2; ++f) {
    SemiSplit turn = split;
    if (f == 1) std::swap(turn.fold_a, turn.fold_b);
    SemiConfig fc = cfg;
    fc.classifier_train.seed = cfg.classifier_train.seed + f;
    log << "semi fold " << f << ": predictor on " << turn.predicting.size() << ", classifier on "
        << turn.fold_a.size() << " labelled samples\n";
    const auto res = train_semi_supervised(samples, fc, turn, s.fine_tune);

    ClassifierArch sup_arch = fc.classifier;
    sup_arch.input_dim = 0;
    const auto train_set = gather(samples, turn.fold_a);
    const auto test_set = gather(samples, turn.predicting);
    const auto base = train_supervised(train_set, sup_arch, fc.classifier_train);
    const auto base_ev = evaluate(base.model, test_set);

    Json fj{{"fold", f},
            {"supervised_test_accuracy", base_ev.accuracy},
            {"fe_validation_accuracy", res.fe_validation.accuracy},
            {"fe_test_accuracy", res.fe_test.accuracy},
            {"fe_confusion", confusion_json(res.fe_test.confusion)},
            {"predictor_history", history_json(res.predictor_history)},
            {"fe_history", history_json(res.fe_history)}};
    fe.push_back(res.fe_test.accuracy);
    sup.push_back(base_ev.accuracy);
    txt << std::setw(4) << f << "  " << std::setw(13) << percent(base_ev.accuracy) << "  "
        << std::setw(5) << percent(res.fe_test.accuracy) << "  ";
    if (res.ft_model) {
      fj["ft_validation_accuracy"] = res.ft_validation->accuracy;
      fj["ft_test_accuracy"] = res.ft_test->accuracy;
      fj["ft_confusion"] = confusion_json(res.ft_test->confusion);
      fj["ft_history"] = history_json(res.ft_history);
      ft.push_back(res.ft_test->accuracy);
      txt << std::setw(8) << percent(res.ft_test->accuracy);
    } else {
      txt << std::setw(8) << "-";
    }
    txt << '\n';
    folds.push_back(std::move(fj));
    const auto& best = res.ft_model ? *res.ft_model : res.fe_model;
    const auto& ev = res.ft_model ? *res.ft_test : res.fe_test;
    write_confusion_csv(out / ("confusion_fold" + std::to_string(f) + ".csv"), ev.confusion,
                        data.class_names);
    if (f == 0) first_model = best;
  }
  save_checkpoint(out / "model.ckpt", *first_model, cfg.classifier_train, norm, data.class_names);

  Json summary{{"supervised", stats_json(summarize(sup))}, {"fe", stats_json(summarize(fe))}};
  if (!ft.empty()) summary["fe_ft"] = stats_json(summarize(ft));
  write_json(out / "metrics.json", Json{{"command", "semi"},
                                        {"label_percent", s.labels},
                                        {"fine_tune", s.fine_tune},
                                        {"n_predicting", split.predicting.size()},
                                        {"n_fold_a", split.fold_a.size()},
                                        {"n_fold_b", split.fold_b.size()},
                                        {"summary", summary},
                                        {"folds", folds}});
  txt << "\nmean  " << std::setw(13) << percent(summarize(sup).mean) << "  " << std::setw(5)
      << percent(summarize(fe).mean) << "  "
      << std::setw(8) << (ft.empty() ? std::string("-") : percent(summarize(ft).mean)) << '\n';
  write_text(out / "metrics.txt", txt.str());
  log << "test accuracy on predicting data: supervised " << percent(summarize(sup).mean) << "%, FE "
      << percent(summarize(fe).mean) << "%";
  if (!ft.empty()) log << ", FE+FT " << percent(summarize(ft).mean) << "%";
  log << '\n';
  return kOk;
}

inline int run_eval(const RunSpec& s, const fs::path& out, std::ostream& log) {
  const auto ck = load_checkpoint(s.checkpoint);
  const auto data = load_run_data(s);
  return std::visit(
      [&](const auto& model) {
        const auto samples = normalize_for(ck, model, data.samples);
        const auto ev = evaluate(model, samples);
        const auto& names = ck.class_names.empty() ? data.class_names : ck.class_names;
        write_confusion_csv(out / "confusion.csv", ev.confusion, names);
        write_json(out / "metrics.json", Json{{"command", "eval"},
                                              {"n", ev.n},
                                              {"accuracy", ev.accuracy},
                                              {"confusion", confusion_json(ev.confusion)}});
        write_text(out / "metrics.txt", "command   eval\nsamples   " + std::to_string(ev.n) +
                                            "\naccuracy  " + percent(ev.accuracy) + " %\n");
        log << "accuracy " << percent(ev.accuracy) << "% on " << ev.n << " samples\n";
        return static_cast<int>(kOk);
      },
      ck.model);
}

inline int run_pca(const RunSpec& s, const fs::path& out, std::ostream& log) {
  const auto ck = load_checkpoint(s.checkpoint);
  const auto data = load_run_data(s);
  return std::visit(
      [&](const auto& model) {
        const auto samples = normalize_for(ck, model, data.samples);
        const auto proj = pca_hidden_states(model, samples, s.fractions);
        const auto& names = ck.class_names.empty() ? data.class_names : ck.class_names;
        std::ofstream csv(out / "pca.csv");
        write_pca_csv(csv, proj, names);
        Json slices = Json::array();
        for (const auto& p : proj) {
          slices.push_back({{"time_fraction", p.time_fraction},
                            {"explained_variance", p.explained_variance.values()}});
        }
        write_json(out / "metrics.json",
                   Json{{"command", "pca"}, {"n", samples.size()}, {"slices", slices}});
        std::ostringstream txt;
        txt << "fraction(%)  var(pc1)  var(pc2)\n";
        for (const auto& p : proj) {
          txt << std::setw(11) << p.time_fraction << "  " << p.explained_variance[0] << "  "
              << (p.explained_variance.dim() > 1 ? p.explained_variance[1] : 0.0) << '\n';
        }
        write_text(out / "metrics.txt", txt.str());
        log << "wrote " << proj.size() << " PCA slices for " << samples.size() << " samples\n";
        return static_cast<int>(kOk);
      },
      ck.model);
}

inline int run_synth(const RunSpec& s, const fs::path& out, std::ostream& log) {
  const SynthConfig cfg = s.synthetic.value_or(SynthConfig{});
  const auto samples = generate_synthetic(cfg);
  const auto manifest = write_dataset(out, synthetic_manifest(cfg), samples);
  log << "wrote " << samples.size() << " samples to " << manifest.string() << '\n';
  return kOk;
}

inline int run_convert(const RunSpec& s, const fs::path& out, std::ostream& log) {
  const auto preset = convert_preset(s.preset);
  const auto manifest = convert_archive(s.source, out, preset);
  log << "wrote " << manifest.string() << '\n';
  return kOk;
}

/// Validates, writes the resolved config and runs the command. Errors are
/// reported on `log` and mapped to exit codes.
inline int dispatch(RunSpec s, std::ostream& log = std::cerr) {
  try {
    apply_seed(s);
    validate(s);
    const fs::path out = s.output_dir;
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec || !fs::is_directory(out)) {
      throw ConfigError("output_dir: cannot create " + out.string());
    }
    write_json(out / "resolved_config.json", to_json(s));
    if (s.command == "train") return run_train(s, out, log);
    if (s.command == "cv") return run_cv(s, out, log);
    if (s.command == "semi") return run_semi(s, out, log);
    if (s.command == "eval") return run_eval(s, out, log);
    if (s.command == "pca") return run_pca(s, out, log);
    if (s.command == "synth") return run_synth(s, out, log);
    return run_convert(s, out, log);
  } catch (const NumericError& e) {
    log << "error: " << e.what() << '\n';
    return kNumericError;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << '\n';
    return kConfigError;
  }
}

}  // namespace terrain::cli
