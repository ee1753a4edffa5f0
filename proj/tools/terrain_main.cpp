// terrain-cli: command-line front end for training, cross-validation,
// semi-supervised runs, evaluation, PCA export and dataset preparation.

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "terrain/cli.hpp"

namespace {

using terrain::cli::RunSpec;

struct Overrides {
  std::string config;
  std::optional<std::string> manifest, out, checkpoint, normalization, cell, feed, source, preset;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> hidden, epochs, batch_size, k, parallel_folds, holdout_k;
  std::optional<std::size_t> samples_per_class, predictor_epochs;
  std::optional<double> lr, lambda, lr_decay, dropout;
  std::optional<unsigned> labels;
  std::optional<std::vector<double>> fractions;
  bool synthetic = false;
  bool fine_tune = false;
};

void add_common(CLI::App* sub, Overrides& o) {
  sub->add_option("--config", o.config, "JSON run configuration");
  sub->add_option("--out", o.out, "Output directory");
  sub->add_option("--seed", o.seed, "Seed for splits, initialization and shuffling");
}

void add_data(CLI::App* sub, Overrides& o) {
  sub->add_option("--manifest", o.manifest, "Dataset manifest (manifest.json)");
  sub->add_flag("--synthetic", o.synthetic, "Use the built-in synthetic dataset");
  sub->add_option("--samples-per-class", o.samples_per_class, "Synthetic samples per class");
}

void add_training(CLI::App* sub, Overrides& o) {
  sub->add_option("--cell", o.cell, "Recurrent cell: vanilla, gru or lstm");
  sub->add_option("--hidden", o.hidden, "Hidden units");
  sub->add_option("--epochs", o.epochs, "Training epochs");
  sub->add_option("--batch-size", o.batch_size, "Minibatch size");
  sub->add_option("--lr", o.lr, "Learning rate");
  sub->add_option("--lr-decay", o.lr_decay, "Per-epoch learning-rate factor");
  sub->add_option("--lambda", o.lambda, "L2 regularization strength");
  sub->add_option("--dropout", o.dropout, "Head dropout rate override");
  sub->add_option("--normalization", o.normalization, "per_split, global or none");
}

void apply_training(terrain::TrainConfig& t, const Overrides& o) {
  if (o.epochs) t.epochs = *o.epochs;
  if (o.batch_size) t.batch_size = *o.batch_size;
  if (o.lr) t.learning_rate = *o.lr;
  if (o.lr_decay) t.lr_decay = *o.lr_decay;
  if (o.lambda) t.lambda = *o.lambda;
  if (o.dropout) t.dropout = *o.dropout;
}

RunSpec resolve(const std::string& command, const Overrides& o) {
  RunSpec s;
  if (!o.config.empty()) s = terrain::cli::read_run_spec(o.config);
  s.command = command;
  if (o.manifest) s.manifest = *o.manifest;
  if (o.synthetic && !s.synthetic) s.synthetic = terrain::SynthConfig{};
  if (o.samples_per_class) {
    if (!s.synthetic) s.synthetic = terrain::SynthConfig{};
    s.synthetic->samples_per_class = *o.samples_per_class;
  }
  if (o.out) s.output_dir = *o.out;
  if (o.seed) s.seed = *o.seed;
  if (o.checkpoint) s.checkpoint = *o.checkpoint;
  if (o.k) s.k = *o.k;
  if (o.holdout_k) s.holdout_k = *o.holdout_k;
  if (o.parallel_folds) s.parallel_folds = *o.parallel_folds;
  if (o.labels) s.labels = *o.labels;
  if (o.fine_tune) s.fine_tune = true;
  if (o.fractions) s.fractions = *o.fractions;
  if (o.source) s.source = *o.source;
  if (o.preset) s.preset = *o.preset;
  terrain::detail::check_at("normalization", [&] {
    if (o.normalization) s.normalization = terrain::parse_normalization(*o.normalization);
  });
  terrain::detail::check_at("cell", [&] {
    if (!o.cell) return;
    const auto kind = terrain::parse_cell_kind(*o.cell);
    s.classifier.cell = kind;
    s.semi.classifier.cell = kind;
    s.semi.predictor.cell = kind;
  });
  terrain::detail::check_at("feed", [&] {
    if (o.feed) s.semi.feed = terrain::parse_feed(*o.feed);
  });
  if (o.hidden) {
    s.classifier.hidden = *o.hidden;
    s.semi.classifier.hidden = *o.hidden;
  }
  apply_training(s.train, o);
  apply_training(s.semi.classifier_train, o);
  apply_training(s.semi.predictor_train, o);
  if (o.predictor_epochs) s.semi.predictor_train.epochs = *o.predictor_epochs;
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gated recurrent network terrain classification"};
  app.require_subcommand(1);
  Overrides o;

  auto* train = app.add_subcommand("train", "Train a classifier with a held-out validation fold");
  add_common(train, o);
  add_data(train, o);
  add_training(train, o);
  train->add_option("--holdout-k", o.holdout_k, "Fold count used to carve the held-out fold");

  auto* cv = app.add_subcommand("cv", "k-fold cross-validation");
  add_common(cv, o);
  add_data(cv, o);
  add_training(cv, o);
  cv->add_option("--k", o.k, "Number of folds");
  cv->add_option("--parallel-folds", o.parallel_folds, "Folds trained concurrently");

  auto* semi = app.add_subcommand("semi", "Semi-supervised training with a signal predictor");
  add_common(semi, o);
  add_data(semi, o);
  add_training(semi, o);
  semi->add_option("--labels", o.labels, "Labelled percent per fold: 5, 10, 15, 20 or 25");
  semi->add_flag("--fine-tune", o.fine_tune, "Run the fine-tuning stage");
  semi->add_option("--feed", o.feed, "hidden_states or predictions");
  semi->add_option("--predictor-epochs", o.predictor_epochs, "Signal predictor epochs");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  add_common(eval, o);
  add_data(eval, o);
  eval->add_option("--checkpoint", o.checkpoint, "Model checkpoint");

  auto* pca = app.add_subcommand("pca", "Project hidden states onto principal components");
  add_common(pca, o);
  add_data(pca, o);
  pca->add_option("--checkpoint", o.checkpoint, "Model checkpoint");
  pca->add_option("--fractions", o.fractions, "Percent-of-sequence time points")->delimiter(',');

  auto* synth = app.add_subcommand("synth", "Write the synthetic dataset to disk");
  add_common(synth, o);
  synth->add_option("--samples-per-class", o.samples_per_class, "Samples per class");

  auto* convert = app.add_subcommand("convert", "Convert a raw archive into a manifest dataset");
  add_common(convert, o);
  convert->add_option("--src", o.source, "Archive root with one directory per class");
  convert->add_option("--preset", o.preset, "put, qcat-force, qcat-imu or qcat-all");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : terrain::cli::kConfigError;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  RunSpec spec;
  try {
    spec = resolve(command, o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return terrain::cli::kConfigError;
  }
  return terrain::cli::dispatch(std::move(spec), std::cerr);
}
