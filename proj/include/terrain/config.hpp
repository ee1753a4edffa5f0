#pragma once

// JSON mapping for architectures and training settings. Readers reject
// unknown keys and report the dotted path of the offending field.

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "terrain/data.hpp"
#include "terrain/error.hpp"
#include "terrain/models.hpp"
#include "terrain/training/trainer.hpp"

namespace terrain {

using Json = nlohmann::json;

namespace detail {

class FieldReader {
 public:
  FieldReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + "expected an object");
  }

  std::string field(std::string_view key) const {
    return path_.empty() ? std::string(key) : path_ + "." + std::string(key);
  }

  bool has(const char* key) const { return j_.contains(key); }

  template <typename T>
  void optional(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    out = convert<T>(j_.at(key), field(key));
  }

  template <typename T>
  void optional(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    const Json& v = j_.at(key);
    if (v.is_null()) {
      out.reset();
    } else {
      out = convert<T>(v, field(key));
    }
  }

  template <typename T>
  void required(const char* key, T& out) {
    if (!j_.contains(key)) throw ConfigError(field(key) + ": required field is missing");
    optional(key, out);
  }

  FieldReader child(const char* key) {
    seen_.insert(key);
    return FieldReader(j_.at(key), field(key));
  }

  const Json& raw(const char* key) {
    seen_.insert(key);
    return j_.at(key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw ConfigError(field(k) + ": unknown field");
    }
  }

  template <typename T>
  static T convert(const Json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, double>) {
      if (!v.is_number()) throw ConfigError(path + ": expected a number");
      return v.get<double>();
    } else if constexpr (std::is_same_v<T, std::size_t> || std::is_same_v<T, std::uint64_t>) {
      if (!v.is_number_unsigned()) throw ConfigError(path + ": expected a non-negative integer");
      return v.get<T>();
    } else if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(path + ": expected true or false");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) throw ConfigError(path + ": expected a string");
      return v.get<std::string>();
    } else {
      if (!v.is_array()) throw ConfigError(path + ": expected an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) {
        out.push_back(convert<typename T::value_type>(v[i], path + "[" + std::to_string(i) + "]"));
      }
      return out;
    }
  }

 private:
  std::string where() const { return path_.empty() ? "" : path_ + ": "; }

  const Json& j_;
  std::string path_;
  std::set<std::string, std::less<>> seen_;
};

/// Runs `check` and re-throws its message prefixed with `path`.
template <typename F>
void check_at(const std::string& path, F&& check) {
  try {
    check();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

}  // namespace detail

inline std::string_view to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }
inline std::string_view to_string(FeedKind k) {
  return k == FeedKind::hidden_states ? "hidden_states" : "predictions";
}
inline std::string_view to_string(NormalizationMode m) {
  switch (m) {
    case NormalizationMode::per_split: return "per_split";
    case NormalizationMode::global: return "global";
    case NormalizationMode::none: return "none";
  }
  return "?";
}

inline OptimizerKind parse_optimizer(std::string_view s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ArgumentError("unknown optimizer '" + std::string(s) + "' (expected sgd or adam)");
}

inline FeedKind parse_feed(std::string_view s) {
  if (s == "hidden_states") return FeedKind::hidden_states;
  if (s == "predictions") return FeedKind::predictions;
  throw ArgumentError("unknown feed '" + std::string(s) + "' (expected hidden_states or predictions)");
}

inline NormalizationMode parse_normalization(std::string_view s) {
  if (s == "per_split") return NormalizationMode::per_split;
  if (s == "global") return NormalizationMode::global;
  if (s == "none") return NormalizationMode::none;
  throw ArgumentError("unknown normalization '" + std::string(s) +
                      "' (expected per_split, global or none)");
}

// ---------------------------------------------------------------------------

inline Json to_json(const HeadSpec& h) {
  return Json{{"hidden_widths", h.hidden_widths}, {"dropout", h.dropout}};
}

inline HeadSpec head_from_json(const Json& j, const std::string& path) {
  HeadSpec h;
  detail::FieldReader r(j, path);
  r.optional("hidden_widths", h.hidden_widths);
  r.optional("dropout", h.dropout);
  r.finish();
  return h;
}

inline Json to_json(const ClassifierArch& a) {
  return Json{{"cell", std::string(to_string(a.cell))}, {"input_dim", a.input_dim},
              {"hidden", a.hidden},                     {"num_classes", a.num_classes},
              {"head", to_json(a.head)},                {"use_bias", a.use_bias}};
}

inline ClassifierArch classifier_arch_from_json(const Json& j, const std::string& path,
                                                ClassifierArch a = {}) {
  detail::FieldReader r(j, path);
  std::string cell(to_string(a.cell));
  r.optional("cell", cell);
  detail::check_at(r.field("cell"), [&] { a.cell = parse_cell_kind(cell); });
  r.optional("input_dim", a.input_dim);
  r.optional("hidden", a.hidden);
  r.optional("num_classes", a.num_classes);
  if (r.has("head")) a.head = head_from_json(r.raw("head"), r.field("head"));
  r.optional("use_bias", a.use_bias);
  r.finish();
  return a;
}

inline Json to_json(const PredictorArch& a) {
  return Json{{"cell", std::string(to_string(a.cell))},
              {"input_dim", a.input_dim},
              {"hidden", a.hidden},
              {"use_bias", a.use_bias}};
}

inline PredictorArch predictor_arch_from_json(const Json& j, const std::string& path,
                                              PredictorArch a = {}) {
  detail::FieldReader r(j, path);
  std::string cell(to_string(a.cell));
  r.optional("cell", cell);
  detail::check_at(r.field("cell"), [&] { a.cell = parse_cell_kind(cell); });
  r.optional("input_dim", a.input_dim);
  r.optional("hidden", a.hidden);
  r.optional("use_bias", a.use_bias);
  r.finish();
  return a;
}

inline Json to_json(const TrainConfig& c) {
  Json j{{"learning_rate", c.learning_rate},
         {"lr_decay", c.lr_decay},
         {"lambda", c.lambda},
         {"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"optimizer", std::string(to_string(c.optimizer))},
         {"adam", {{"beta1", c.adam.beta1}, {"beta2", c.adam.beta2}, {"epsilon", c.adam.epsilon}}},
         {"seed", c.seed}};
  j["grad_clip"] = c.grad_clip ? Json(*c.grad_clip) : Json(nullptr);
  j["dropout"] = c.dropout ? Json(*c.dropout) : Json(nullptr);
  return j;
}

inline TrainConfig train_config_from_json(const Json& j, const std::string& path,
                                          TrainConfig c = {}) {
  detail::FieldReader r(j, path);
  r.optional("learning_rate", c.learning_rate);
  r.optional("lr_decay", c.lr_decay);
  r.optional("lambda", c.lambda);
  r.optional("epochs", c.epochs);
  r.optional("batch_size", c.batch_size);
  r.optional("grad_clip", c.grad_clip);
  std::string opt(to_string(c.optimizer));
  r.optional("optimizer", opt);
  detail::check_at(r.field("optimizer"), [&] { c.optimizer = parse_optimizer(opt); });
  if (r.has("adam")) {
    auto a = r.child("adam");
    a.optional("beta1", c.adam.beta1);
    a.optional("beta2", c.adam.beta2);
    a.optional("epsilon", c.adam.epsilon);
    a.finish();
  }
  r.optional("seed", c.seed);
  r.optional("dropout", c.dropout);
  r.finish();
  detail::check_at(path, [&] { validate(c); });
  return c;
}

inline Json to_json(const SemiConfig& c) {
  Json j{{"predictor", to_json(c.predictor)},
         {"classifier", to_json(c.classifier)},
         {"feed", std::string(to_string(c.feed))},
         {"predictor_train", to_json(c.predictor_train)},
         {"classifier_train", to_json(c.classifier_train)},
         {"predictor_lambda", c.predictor_lambda},
         {"ft_factor", c.ft_factor}};
  j["ft_epochs"] = c.ft_epochs ? Json(*c.ft_epochs) : Json(nullptr);
  return j;
}

inline SemiConfig semi_config_from_json(const Json& j, const std::string& path,
                                        SemiConfig c = {}) {
  detail::FieldReader r(j, path);
  if (r.has("predictor")) {
    c.predictor = predictor_arch_from_json(r.raw("predictor"), r.field("predictor"), c.predictor);
  }
  if (r.has("classifier")) {
    c.classifier =
        classifier_arch_from_json(r.raw("classifier"), r.field("classifier"), c.classifier);
  }
  std::string feed(to_string(c.feed));
  r.optional("feed", feed);
  detail::check_at(r.field("feed"), [&] { c.feed = parse_feed(feed); });
  if (r.has("predictor_train")) {
    c.predictor_train = train_config_from_json(r.raw("predictor_train"),
                                               r.field("predictor_train"), c.predictor_train);
  }
  if (r.has("classifier_train")) {
    c.classifier_train = train_config_from_json(r.raw("classifier_train"),
                                                r.field("classifier_train"), c.classifier_train);
  }
  r.optional("predictor_lambda", c.predictor_lambda);
  r.optional("ft_factor", c.ft_factor);
  r.optional("ft_epochs", c.ft_epochs);
  r.finish();
  if (!(c.predictor_lambda >= 0.0)) throw ConfigError(r.field("predictor_lambda") + ": must be >= 0");
  if (!(c.ft_factor > 0.0)) throw ConfigError(r.field("ft_factor") + ": must be > 0");
  return c;
}

inline Json to_json(const SynthConfig& c) {
  Json classes = Json::array();
  for (const auto& p : c.classes) {
    classes.push_back({{"base_frequency", p.base_frequency},
                       {"amplitude", p.amplitude},
                       {"harmonics", p.harmonics},
                       {"noise_std", p.noise_std}});
  }
  return Json{{"num_classes", c.num_classes},
              {"channels", c.channels},
              {"classes", classes},
              {"min_length", c.min_length},
              {"max_length", c.max_length},
              {"samples_per_class", c.samples_per_class},
              {"frequency_jitter", c.frequency_jitter},
              {"amplitude_jitter", c.amplitude_jitter},
              {"seed", c.seed}};
}

inline SynthConfig synth_config_from_json(const Json& j, const std::string& path,
                                          SynthConfig c = {}) {
  detail::FieldReader r(j, path);
  r.optional("num_classes", c.num_classes);
  r.optional("channels", c.channels);
  if (r.has("classes")) {
    const Json& arr = r.raw("classes");
    if (!arr.is_array()) throw ConfigError(r.field("classes") + ": expected an array");
    c.classes.clear();
    for (std::size_t i = 0; i < arr.size(); ++i) {
      ClassProfile p;
      detail::FieldReader pr(arr[i], r.field("classes") + "[" + std::to_string(i) + "]");
      pr.optional("base_frequency", p.base_frequency);
      pr.optional("amplitude", p.amplitude);
      pr.optional("harmonics", p.harmonics);
      pr.optional("noise_std", p.noise_std);
      pr.finish();
      c.classes.push_back(std::move(p));
    }
  }
  r.optional("min_length", c.min_length);
  r.optional("max_length", c.max_length);
  r.optional("samples_per_class", c.samples_per_class);
  r.optional("frequency_jitter", c.frequency_jitter);
  r.optional("amplitude_jitter", c.amplitude_jitter);
  r.optional("seed", c.seed);
  r.finish();
  detail::check_at(path, [&] { validate(c); });
  return c;
}

inline Json to_json(const NormStats& s) {
  return Json{{"mean", s.mean.values()}, {"std", s.std.values()}};
}

inline NormStats norm_stats_from_json(const Json& j, const std::string& path) {
  detail::FieldReader r(j, path);
  std::vector<double> mean, sd;
  r.required("mean", mean);
  r.required("std", sd);
  r.finish();
  if (mean.size() != sd.size()) {
    throw ConfigError(path + ": mean has " + std::to_string(mean.size()) + " entries, std has " +
                      std::to_string(sd.size()));
  }
  return NormStats{Vector(std::move(mean)), Vector(std::move(sd))};
}

}  // namespace terrain
