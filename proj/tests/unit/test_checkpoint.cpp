#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "support/test_support.hpp"
#include "terrain/checkpoint.hpp"
#include "terrain/config.hpp"

using namespace terrain;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / ("terrain_ckpt_" + name);
}

}  // namespace

TEST(Checkpoint, ClassifierRoundTripIsBitwise) {
  const auto m = make_classifier(ClassifierArch{CellKind::lstm, 3, 5, 4, fcl_head(7, 0.25), true}, 9);
  TrainConfig cfg;
  cfg.learning_rate = 0.02;
  cfg.grad_clip.reset();
  const NormStats norm{Vector{1.0, 2.0, 3.0}, Vector{0.5, 0.25, 4.0}};
  const auto path = temp_file("cls.bin");
  save_checkpoint(path, m, cfg, norm, {"a", "b", "c", "d"});
  const auto ck = load_checkpoint(path);
  const auto& loaded = std::get<ClassifierModel>(ck.model);
  EXPECT_EQ(loaded.arch, m.arch);
  EXPECT_EQ(loaded.head[0].w, m.head[0].w);
  EXPECT_EQ(std::get<LstmParams>(loaded.cell).w_f, std::get<LstmParams>(m.cell).w_f);
  EXPECT_EQ(ck.train_config, cfg);
  ASSERT_TRUE(ck.normalizer.has_value());
  EXPECT_EQ(ck.normalizer->std, norm.std);
  EXPECT_EQ(ck.class_names.size(), 4u);
  const auto xs = testkit::random_samples(3, 3, 2, 9, 4, 1);
  EXPECT_EQ(predict_proba(loaded, make_batch(xs)), predict_proba(m, make_batch(xs)));
  fs::remove(path);
}

TEST(Checkpoint, SemiRoundTrip) {
  auto m = make_semi(PredictorArch{CellKind::gru, 2, 4, true},
                     ClassifierArch{CellKind::gru, 0, 3, 3, {}, false}, FeedKind::predictions, 2);
  testkit::jitter(m, 0.1, 3);
  const auto path = temp_file("semi.bin");
  save_checkpoint(path, m, TrainConfig{});
  const auto ck = load_checkpoint(path);
  const auto& loaded = std::get<SemiSupervisedModel>(ck.model);
  EXPECT_EQ(loaded.feed, FeedKind::predictions);
  EXPECT_EQ(loaded.predictor.readout.w, m.predictor.readout.w);
  EXPECT_FALSE(ck.normalizer.has_value());
  const auto xs = testkit::random_samples(2, 2, 2, 6, 3, 4);
  EXPECT_EQ(predict_proba(loaded, make_batch(xs)), predict_proba(m, make_batch(xs)));
  fs::remove(path);
}

TEST(Checkpoint, VersionMismatchRefused) {
  const auto m = make_classifier(ClassifierArch{CellKind::gru, 2, 3, 2, {}, true}, 1);
  const auto path = temp_file("ver.bin");
  save_checkpoint(path, m, TrainConfig{});
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    f.put(static_cast<char>(2));
  }
  try {
    load_checkpoint(path);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos) << e.what();
  }
  fs::remove(path);
}

TEST(Checkpoint, TruncatedOrForeignFilesRejected) {
  const auto m = make_classifier(ClassifierArch{CellKind::gru, 2, 3, 2, {}, true}, 1);
  const auto path = temp_file("trunc.bin");
  save_checkpoint(path, m, TrainConfig{});
  fs::resize_file(path, fs::file_size(path) - 8);
  EXPECT_THROW(load_checkpoint(path), FormatError);
  std::ofstream(path) << "hello";
  EXPECT_THROW(load_checkpoint(path), FormatError);
  fs::remove(path);
  EXPECT_THROW(load_checkpoint(path), FormatError);
}

TEST(Config, TrainConfigRoundTrip) {
  TrainConfig c;
  c.learning_rate = 0.003;
  c.lr_decay = 0.97;
  c.optimizer = OptimizerKind::sgd;
  c.dropout = 0.4;
  c.grad_clip.reset();
  c.seed = 77;
  EXPECT_EQ(train_config_from_json(to_json(c), "train"), c);
}

TEST(Config, ArchAndSemiRoundTrip) {
  const ClassifierArch a{CellKind::lstm, 12, 200, 6, fcl_head(), false};
  EXPECT_EQ(classifier_arch_from_json(to_json(a), "arch"), a);
  SemiConfig s;
  s.feed = FeedKind::predictions;
  s.ft_epochs = 7;
  const auto back = semi_config_from_json(to_json(s), "semi");
  EXPECT_EQ(back.feed, s.feed);
  EXPECT_EQ(back.ft_epochs, s.ft_epochs);
  EXPECT_EQ(back.classifier, s.classifier);
  SynthConfig sc;
  sc.classes = default_profiles(6);
  EXPECT_EQ(synth_config_from_json(to_json(sc), "synth"), sc);
}

TEST(Config, FieldLevelErrors) {
  auto expect_msg = [](const Json& j, const std::string& fragment) {
    try {
      train_config_from_json(j, "train");
      ADD_FAILURE() << "expected ConfigError for " << j.dump();
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(fragment), std::string::npos) << e.what();
    }
  };
  expect_msg(Json{{"learning_rat", 0.1}}, "train.learning_rat: unknown field");
  expect_msg(Json{{"epochs", -3}}, "train.epochs: expected a non-negative integer");
  expect_msg(Json{{"learning_rate", "fast"}}, "train.learning_rate: expected a number");
  expect_msg(Json{{"optimizer", "rmsprop"}}, "train.optimizer: unknown optimizer");
  expect_msg(Json{{"lr_decay", 2.0}}, "train: lr_decay");
  expect_msg(Json{{"adam", {{"beta3", 1}}}}, "train.adam.beta3: unknown field");
  EXPECT_THROW(classifier_arch_from_json(Json{{"cell", "tcn"}}, "arch"), ConfigError);
}
