#pragma once

// Dataset manifests, CSV sample files, the synthetic gait generator and the
// archive converter.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "terrain/error.hpp"
#include "terrain/sequence.hpp"

namespace terrain {

namespace fs = std::filesystem;

inline constexpr int kManifestVersion = 1;
inline constexpr const char* kDataRootEnv = "TERRAIN_DATA_ROOT";

struct ChannelInfo {
  std::string name;
  std::string unit;
  std::string group;  // e.g. "force", "imu"

  friend bool operator==(const ChannelInfo&, const ChannelInfo&) = default;
};

struct SampleRecord {
  std::string file;  // relative to the manifest directory unless absolute
  std::size_t label = 0;
  std::optional<std::size_t> length;
  std::map<std::string, std::string> meta;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

struct DatasetManifest {
  int format_version = kManifestVersion;
  std::string name;
  std::size_t num_classes = 0;
  std::vector<std::string> class_names;
  double sample_rate_hz = 0.0;
  std::vector<ChannelInfo> channels;       // columns of every sample file
  std::vector<std::string> selected_groups;  // empty selects every channel
  std::vector<SampleRecord> records;
  fs::path base_dir;  // where relative record paths resolve; not serialized

  /// Column indices kept by the group selection, in file order.
  std::vector<std::size_t> selected_columns() const {
    std::vector<std::size_t> cols;
    for (std::size_t i = 0; i < channels.size(); ++i) {
      if (selected_groups.empty() ||
          std::find(selected_groups.begin(), selected_groups.end(), channels[i].group) !=
              selected_groups.end()) {
        cols.push_back(i);
      }
    }
    return cols;
  }
};

inline nlohmann::json to_json(const DatasetManifest& m) {
  nlohmann::json j;
  j["format_version"] = m.format_version;
  j["name"] = m.name;
  j["num_classes"] = m.num_classes;
  j["class_names"] = m.class_names;
  j["sample_rate_hz"] = m.sample_rate_hz;
  j["channels"] = nlohmann::json::array();
  for (const auto& c : m.channels) {
    j["channels"].push_back({{"name", c.name}, {"unit", c.unit}, {"group", c.group}});
  }
  j["selected_groups"] = m.selected_groups;
  j["records"] = nlohmann::json::array();
  for (const auto& r : m.records) {
    nlohmann::json jr{{"file", r.file}, {"label", r.label}};
    if (r.length) jr["length"] = *r.length;
    if (!r.meta.empty()) jr["meta"] = r.meta;
    j["records"].push_back(std::move(jr));
  }
  return j;
}

inline DatasetManifest manifest_from_json(const nlohmann::json& j, const fs::path& base_dir = {}) {
  DatasetManifest m;
  try {
    m.format_version = j.at("format_version").get<int>();
    if (m.format_version != kManifestVersion) {
      throw FormatError("manifest format_version " + std::to_string(m.format_version) +
                        " is not supported (expected " + std::to_string(kManifestVersion) + ")");
    }
    m.name = j.value("name", std::string{});
    m.num_classes = j.at("num_classes").get<std::size_t>();
    m.class_names = j.value("class_names", std::vector<std::string>{});
    m.sample_rate_hz = j.value("sample_rate_hz", 0.0);
    for (const auto& c : j.at("channels")) {
      m.channels.push_back({c.at("name").get<std::string>(), c.value("unit", std::string{}),
                            c.value("group", std::string{})});
    }
    m.selected_groups = j.value("selected_groups", std::vector<std::string>{});
    for (const auto& r : j.at("records")) {
      SampleRecord rec;
      rec.file = r.at("file").get<std::string>();
      rec.label = r.at("label").get<std::size_t>();
      if (r.contains("length")) rec.length = r.at("length").get<std::size_t>();
      if (r.contains("meta")) rec.meta = r.at("meta").get<std::map<std::string, std::string>>();
      m.records.push_back(std::move(rec));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest: ") + e.what());
  }
  if (m.num_classes == 0) throw FormatError("manifest: num_classes must be >= 1");
  if (!m.class_names.empty() && m.class_names.size() != m.num_classes) {
    throw FormatError("manifest: " + std::to_string(m.class_names.size()) +
                      " class names for num_classes = " + std::to_string(m.num_classes));
  }
  if (m.channels.empty()) throw FormatError("manifest: channel schema is empty");
  for (const auto& g : m.selected_groups) {
    const bool known = std::any_of(m.channels.begin(), m.channels.end(),
                                   [&](const ChannelInfo& c) { return c.group == g; });
    if (!known) throw FormatError("manifest: selected group '" + g + "' has no channels");
  }
  for (std::size_t i = 0; i < m.records.size(); ++i) {
    if (m.records[i].label >= m.num_classes) {
      throw FormatError("manifest: record " + std::to_string(i) + " (" + m.records[i].file +
                        ") has label " + std::to_string(m.records[i].label) + " >= num_classes " +
                        std::to_string(m.num_classes));
    }
  }
  m.base_dir = base_dir;
  return m;
}

/// Relative manifest paths that do not exist are retried under
/// $TERRAIN_DATA_ROOT.
inline fs::path resolve_data_path(const fs::path& p) {
  if (p.is_absolute() || fs::exists(p)) return p;
  if (const char* root = std::getenv(kDataRootEnv); root && *root) {
    const fs::path alt = fs::path(root) / p;
    if (fs::exists(alt)) return alt;
  }
  return p;
}

inline DatasetManifest read_manifest(const fs::path& path) {
  const fs::path resolved = resolve_data_path(path);
  std::ifstream in(resolved);
  if (!in) throw FormatError("cannot open manifest " + resolved.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest " + resolved.string() + ": " + e.what());
  }
  return manifest_from_json(j, resolved.parent_path());
}

inline void write_manifest(const DatasetManifest& m, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write manifest " + path.string());
  out << to_json(m).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Sample files: header row of channel names, one row per timestep.

inline Matrix read_sample_csv(const fs::path& path, std::size_t expected_channels) {
  std::ifstream in(path);
  if (!in) throw FormatError("missing sample file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(path.string() + ": empty file");
  const auto header_cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  if (header_cols != expected_channels) {
    throw FormatError(path.string() + ": expected " + std::to_string(expected_channels) +
                      " channels, found " + std::to_string(header_cols));
  }
  std::vector<double> values;
  std::size_t rows = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::size_t cols = 0;
    const char* p = line.c_str();
    while (true) {
      char* end = nullptr;
      const double v = std::strtod(p, &end);
      if (end == p) {
        throw FormatError(path.string() + ": row " + std::to_string(rows + 1) +
                          ": unparsable value");
      }
      values.push_back(v);
      ++cols;
      while (*end == ' ' || *end == '\t') ++end;
      if (*end == '\0') break;
      if (*end != ',') {
        throw FormatError(path.string() + ": row " + std::to_string(rows + 1) +
                          ": unexpected character");
      }
      p = end + 1;
    }
    if (cols != expected_channels) {
      throw FormatError(path.string() + ": row " + std::to_string(rows + 1) + " has " +
                        std::to_string(cols) + " values, expected " +
                        std::to_string(expected_channels) + " channels");
    }
    ++rows;
  }
  if (rows == 0) throw FormatError(path.string() + ": no data rows");
  Matrix m(rows, expected_channels);
  std::copy(values.begin(), values.end(), m.span().begin());
  return m;
}

inline void write_sample_csv(const fs::path& path, const Matrix& data,
                             const std::vector<ChannelInfo>& channels) {
  if (data.cols() != channels.size()) {
    throw ShapeError("write_sample_csv: " + std::to_string(data.cols()) + " columns for " +
                     std::to_string(channels.size()) + " channels");
  }
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  for (std::size_t c = 0; c < channels.size(); ++c) out << (c ? "," : "") << channels[c].name;
  out << '\n';
  out.precision(17);
  for (std::size_t t = 0; t < data.rows(); ++t) {
    for (std::size_t c = 0; c < data.cols(); ++c) out << (c ? "," : "") << data(t, c);
    out << '\n';
  }
}

/// One sample per record, in manifest order, restricted to the selected
/// channel groups. Lengths come from the files; nothing is padded or trimmed.
inline std::vector<SequenceSample> load_dataset(const DatasetManifest& m) {
  const auto cols = m.selected_columns();
  std::vector<SequenceSample> out;
  out.reserve(m.records.size());
  for (const auto& r : m.records) {
    fs::path p = r.file;
    if (p.is_relative()) p = m.base_dir / p;
    const Matrix full = read_sample_csv(p, m.channels.size());
    if (r.length && *r.length != full.rows()) {
      throw FormatError(p.string() + ": manifest length " + std::to_string(*r.length) +
                        " but file has " + std::to_string(full.rows()) + " rows");
    }
    SequenceSample s;
    s.data = Matrix(full.rows(), cols.size());
    for (std::size_t t = 0; t < full.rows(); ++t) {
      for (std::size_t c = 0; c < cols.size(); ++c) s.data(t, c) = full(t, cols[c]);
    }
    s.label = r.label;
    s.meta = r.meta;
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<SequenceSample> load_dataset(const fs::path& manifest_path) {
  return load_dataset(read_manifest(manifest_path));
}

/// Writes one CSV per sample under `dir/samples/` plus `dir/manifest.json`.
/// Returns the manifest path.
inline fs::path write_dataset(const fs::path& dir, DatasetManifest info,
                              std::span<const SequenceSample> samples) {
  fs::create_directories(dir / "samples");
  info.records.clear();
  const int width = static_cast<int>(std::to_string(samples.size()).size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::ostringstream name;
    name << "samples/" << std::setw(width) << std::setfill('0') << i << ".csv";
    write_sample_csv(dir / name.str(), samples[i].data, info.channels);
    info.records.push_back({name.str(), samples[i].label, samples[i].length(), samples[i].meta});
  }
  const fs::path manifest = dir / "manifest.json";
  write_manifest(info, manifest);
  return manifest;
}

// ---------------------------------------------------------------------------
// Synthetic gait surrogate

struct ClassProfile {
  double base_frequency = 0.05;     // cycles per timestep
  double amplitude = 1.0;
  std::vector<double> harmonics{1.0};  // weight of the k-th multiple of the base frequency
  double noise_std = 0.3;

  friend bool operator==(const ClassProfile&, const ClassProfile&) = default;
};

struct SynthConfig {
  std::size_t num_classes = 6;
  std::size_t channels = 6;
  std::vector<ClassProfile> classes;  // empty: default_profiles(num_classes)
  std::size_t min_length = 40;
  std::size_t max_length = 120;
  std::size_t samples_per_class = 100;
  double frequency_jitter = 0.1;  // relative, per sample
  double amplitude_jitter = 0.1;  // relative, per sample and channel
  std::uint64_t seed = 1;

  friend bool operator==(const SynthConfig&, const SynthConfig&) = default;
};

/// Neighbouring classes share a base frequency band and differ mostly in their
/// harmonic content, so the task needs more than a frequency estimate.
inline std::vector<ClassProfile> default_profiles(std::size_t num_classes) {
  std::vector<ClassProfile> out;
  for (std::size_t c = 0; c < num_classes; ++c) {
    ClassProfile p;
    p.base_frequency = 0.04 + 0.012 * static_cast<double>(c / 2);
    p.amplitude = 1.0 + 0.15 * static_cast<double>(c % 3);
    p.harmonics = c % 2 == 0 ? std::vector<double>{1.0, 0.15, 0.0}
                             : std::vector<double>{1.0, 0.0, 0.45};
    p.noise_std = 0.35;
    out.push_back(p);
  }
  return out;
}

inline void validate(const SynthConfig& cfg) {
  if (cfg.num_classes == 0) throw ArgumentError("synth: num_classes must be >= 1");
  if (cfg.channels == 0) throw ArgumentError("synth: channels must be >= 1");
  if (cfg.min_length < 2) throw ArgumentError("synth: min_length must be >= 2");
  if (cfg.max_length < cfg.min_length) throw ArgumentError("synth: max_length < min_length");
  if (!cfg.classes.empty() && cfg.classes.size() != cfg.num_classes) {
    throw ArgumentError("synth: " + std::to_string(cfg.classes.size()) + " profiles for " +
                        std::to_string(cfg.num_classes) + " classes");
  }
  for (const auto& p : cfg.classes) {
    if (!(p.noise_std >= 0.0)) throw ArgumentError("synth: noise_std must be >= 0");
  }
  if (!(cfg.frequency_jitter >= 0.0 && cfg.amplitude_jitter >= 0.0)) {
    throw ArgumentError("synth: jitter must be >= 0");
  }
}

/// Samples are interleaved by class (0, 1, ..., C-1, 0, 1, ...). Each channel d
/// carries the class waveform with its own phase lag and gain, a random
/// per-sample phase, and white Gaussian noise.
inline std::vector<SequenceSample> generate_synthetic(const SynthConfig& cfg) {
  validate(cfg);
  const auto profiles = cfg.classes.empty() ? default_profiles(cfg.num_classes) : cfg.classes;
  std::mt19937_64 rng(cfg.seed);
  std::uniform_int_distribution<std::size_t> length(cfg.min_length, cfg.max_length);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const auto d_count = static_cast<double>(cfg.channels);

  std::vector<SequenceSample> out;
  out.reserve(cfg.num_classes * cfg.samples_per_class);
  for (std::size_t i = 0; i < cfg.samples_per_class; ++i) {
    for (std::size_t c = 0; c < cfg.num_classes; ++c) {
      const auto& p = profiles[c];
      SequenceSample s;
      s.label = c;
      const std::size_t len = length(rng);
      const double freq = p.base_frequency * (1.0 + cfg.frequency_jitter * unit(rng));
      const double phi = phase(rng);
      std::vector<double> gain(cfg.channels);
      for (std::size_t d = 0; d < cfg.channels; ++d) {
        const double base = 1.0 - 0.5 * static_cast<double>(d) / d_count;
        gain[d] = p.amplitude * base * (1.0 + cfg.amplitude_jitter * unit(rng));
      }
      s.data = Matrix(len, cfg.channels);
      for (std::size_t t = 0; t < len; ++t) {
        for (std::size_t d = 0; d < cfg.channels; ++d) {
          const double lag = std::numbers::pi * static_cast<double>(d) / d_count;
          double v = 0.0;
          for (std::size_t h = 0; h < p.harmonics.size(); ++h) {
            if (p.harmonics[h] == 0.0) continue;
            const double k = static_cast<double>(h + 1);
            v += p.harmonics[h] *
                 std::sin(2.0 * std::numbers::pi * k * freq * static_cast<double>(t) + k * (phi + lag));
          }
          s.data(t, d) = gain[d] * v + p.noise_std * gauss(rng);
        }
      }
      s.meta["source"] = "synthetic";
      out.push_back(std::move(s));
    }
  }
  return out;
}

inline DatasetManifest synthetic_manifest(const SynthConfig& cfg) {
  DatasetManifest m;
  m.name = "synthetic";
  m.num_classes = cfg.num_classes;
  for (std::size_t c = 0; c < cfg.num_classes; ++c) m.class_names.push_back("class" + std::to_string(c));
  m.sample_rate_hz = 100.0;
  for (std::size_t d = 0; d < cfg.channels; ++d) m.channels.push_back({"ch" + std::to_string(d), "", "synthetic"});
  return m;
}

// ---------------------------------------------------------------------------
// Converter for published archives laid out as <root>/<class>/<step files>.

struct ConvertPreset {
  std::string name;
  double sample_rate_hz;
  std::vector<std::string> class_names;
  std::vector<ChannelInfo> channels;
  std::vector<std::string> selected_groups;
};

namespace detail {

inline std::vector<ChannelInfo> force_channels(std::size_t sensors) {
  std::vector<ChannelInfo> out;
  for (std::size_t s = 0; s < sensors; ++s) {
    for (const char* axis : {"x", "y", "z"}) {
      out.push_back({"foot" + std::to_string(s) + "_f" + axis, "N", "force"});
    }
  }
  return out;
}

inline std::vector<ChannelInfo> imu_channels() {
  return {{"acc_x", "m/s^2", "imu"}, {"acc_y", "m/s^2", "imu"}, {"acc_z", "m/s^2", "imu"},
          {"gyr_x", "rad/s", "imu"}, {"gyr_y", "rad/s", "imu"}, {"gyr_z", "rad/s", "imu"},
          {"ori_w", "", "imu"},      {"ori_x", "", "imu"},      {"ori_y", "", "imu"},
          {"ori_z", "", "imu"}};
}

}  // namespace detail

inline ConvertPreset convert_preset(const std::string& name) {
  const std::vector<std::string> qcat_classes{"concrete", "grass", "gravel", "mulch", "dirt", "sand"};
  auto qcat = [&](std::vector<std::string> groups) {
    auto ch = detail::force_channels(4);
    for (auto& c : detail::imu_channels()) ch.push_back(c);
    return ConvertPreset{name, 100.0, qcat_classes, ch, std::move(groups)};
  };
  if (name == "put") {
    return {name,
            200.0,
            {"sand", "rubber", "concrete", "artificial_grass", "wood_chipping", "gravel"},
            {{"fx", "N", "ft"}, {"fy", "N", "ft"}, {"fz", "N", "ft"},
             {"tx", "Nm", "ft"}, {"ty", "Nm", "ft"}, {"tz", "Nm", "ft"}},
            {}};
  }
  if (name == "qcat-force") return qcat({"force"});
  if (name == "qcat-imu") return qcat({"imu"});
  if (name == "qcat-all") return qcat({});
  throw ArgumentError("unknown converter preset '" + name +
                      "' (expected put, qcat-force, qcat-imu or qcat-all)");
}

/// Copies every delimited file under <src>/<class name>/ into the native
/// layout. Source files may use comma, semicolon, tab or space separators and
/// may start with a header row; columns must follow the preset's channel order.
inline fs::path convert_archive(const fs::path& src, const fs::path& dst,
                                const ConvertPreset& preset) {
  DatasetManifest m;
  m.name = preset.name;
  m.num_classes = preset.class_names.size();
  m.class_names = preset.class_names;
  m.sample_rate_hz = preset.sample_rate_hz;
  m.channels = preset.channels;
  m.selected_groups = preset.selected_groups;
  fs::create_directories(dst / "samples");

  for (std::size_t label = 0; label < preset.class_names.size(); ++label) {
    const fs::path class_dir = src / preset.class_names[label];
    if (!fs::is_directory(class_dir)) {
      throw FormatError("convert: missing class directory " + class_dir.string());
    }
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(class_dir)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
      std::ifstream in(f);
      std::string line;
      std::vector<double> values;
      std::size_t rows = 0;
      while (std::getline(in, line)) {
        std::replace_if(line.begin(), line.end(),
                        [](char ch) { return ch == ',' || ch == ';' || ch == '\t' || ch == '\r'; },
                        ' ');
        std::istringstream ss(line);
        std::vector<double> row;
        double v;
        while (ss >> v) row.push_back(v);
        if (!ss.eof()) {
          if (rows == 0) continue;  // header row
          throw FormatError("convert: " + f.string() + ": non-numeric value in row " +
                            std::to_string(rows + 1));
        }
        if (row.empty()) continue;
        if (row.size() != preset.channels.size()) {
          throw FormatError("convert: " + f.string() + ": expected " +
                            std::to_string(preset.channels.size()) + " channels, found " +
                            std::to_string(row.size()));
        }
        values.insert(values.end(), row.begin(), row.end());
        ++rows;
      }
      if (rows == 0) throw FormatError("convert: " + f.string() + ": no data rows");
      Matrix data(rows, preset.channels.size());
      std::copy(values.begin(), values.end(), data.span().begin());
      const std::string rel = "samples/" + preset.class_names[label] + "_" +
                              std::to_string(m.records.size()) + ".csv";
      write_sample_csv(dst / rel, data, m.channels);
      m.records.push_back(
          {rel, label, rows, {{"source", fs::relative(f, src).generic_string()}}});
    }
  }
  const fs::path manifest = dst / "manifest.json";
  write_manifest(m, manifest);
  return manifest;
}

}  // namespace terrain
