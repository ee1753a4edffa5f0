#pragma once

// Binary checkpoints: 8-byte magic, little-endian u32 format version, u64
// header length, a JSON header (architecture, training config, normalizer,
// tensor table) and then every tensor as little-endian float64 in table order.

#include <array>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "terrain/config.hpp"
#include "terrain/models.hpp"

namespace terrain {

inline constexpr std::array<char, 8> kCheckpointMagic{'T', 'E', 'R', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::variant<ClassifierModel, SemiSupervisedModel> model;
  TrainConfig train_config;
  std::optional<NormStats> normalizer;
  std::vector<std::string> class_names;
};

namespace detail {

template <typename U>
void put_le(std::ostream& os, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) os.put(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <typename U>
U get_le(std::istream& is, const std::string& what) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    const int c = is.get();
    if (c == EOF) throw FormatError("checkpoint: truncated " + what);
    v |= static_cast<U>(static_cast<unsigned char>(c)) << (8 * i);
  }
  return v;
}

inline Json tensor_table(const auto& model) {
  Json table = Json::array();
  visit_tensors(model, [&](std::string_view name, const auto& t) {
    table.push_back({{"name", std::string(name)}, {"size", t.span().size()}});
  });
  return table;
}

inline Json model_header(const ClassifierModel& m) {
  return Json{{"kind", "classifier"}, {"classifier", to_json(m.arch)}};
}

inline Json model_header(const SemiSupervisedModel& m) {
  return Json{{"kind", "semi"},
              {"predictor", to_json(m.predictor.arch)},
              {"classifier", to_json(m.classifier.arch)},
              {"feed", std::string(to_string(m.feed))}};
}

}  // namespace detail

template <typename Model>
void save_checkpoint(const std::filesystem::path& path, const Model& m, const TrainConfig& cfg,
                     const std::optional<NormStats>& norm = {},
                     const std::vector<std::string>& class_names = {}) {
  Json header = detail::model_header(m);
  header["train_config"] = to_json(cfg);
  header["normalizer"] = norm ? to_json(*norm) : Json(nullptr);
  header["class_names"] = class_names;
  header["tensors"] = detail::tensor_table(m);
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  visit_tensors(m, [&](std::string_view, const auto& t) {
    for (double v : t.span()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      detail::put_le<std::uint64_t>(out, bits);
    }
  });
  if (!out) throw FormatError("failed writing checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kCheckpointMagic) {
    throw FormatError(path.string() + " is not a checkpoint file");
  }
  const auto version = detail::get_le<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) {
    throw FormatError("checkpoint " + path.string() + " has format version " +
                      std::to_string(version) + "; this build reads version " +
                      std::to_string(kCheckpointVersion));
  }
  const auto header_len = detail::get_le<std::uint64_t>(in, "header length");
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw FormatError("checkpoint: truncated header");

  Json header;
  try {
    header = Json::parse(text);
  } catch (const Json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }

  Checkpoint ck;
  try {
    const std::string kind = header.at("kind").get<std::string>();
    if (kind == "classifier") {
      ck.model = make_classifier(classifier_arch_from_json(header.at("classifier"), "classifier"), 0);
    } else if (kind == "semi") {
      const auto pred = predictor_arch_from_json(header.at("predictor"), "predictor");
      const auto cls = classifier_arch_from_json(header.at("classifier"), "classifier");
      const auto feed = parse_feed(header.at("feed").get<std::string>());
      ck.model = make_semi(pred, cls, feed, 0);
    } else {
      throw FormatError("checkpoint: unknown model kind '" + kind + "'");
    }
    ck.train_config = train_config_from_json(header.at("train_config"), "train_config");
    if (!header.at("normalizer").is_null()) {
      ck.normalizer = norm_stats_from_json(header.at("normalizer"), "normalizer");
    }
    ck.class_names = header.at("class_names").get<std::vector<std::string>>();
  } catch (const Json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }

  const Json& table = header.at("tensors");
  std::visit(
      [&](auto& m) {
        std::size_t i = 0;
        visit_tensors(m, [&](std::string_view name, auto& t) {
          if (i >= table.size() || table[i].at("name").get<std::string>() != name ||
              table[i].at("size").get<std::size_t>() != t.span().size()) {
            throw FormatError("checkpoint: tensor table does not match architecture at '" +
                              std::string(name) + "'");
          }
          for (double& v : t.span()) {
            const auto bits = detail::get_le<std::uint64_t>(in, "tensor " + std::string(name));
            std::memcpy(&v, &bits, sizeof v);
          }
          ++i;
        });
        if (i != table.size()) throw FormatError("checkpoint: extra tensors in table");
      },
      ck.model);
  if (in.peek() != EOF) throw FormatError("checkpoint: trailing bytes after tensor data");
  return ck;
}

}  // namespace terrain
