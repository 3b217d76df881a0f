#pragma once

// Flat key=value run configuration for the hmc command-line tool.
//
// Resolution order: built-in defaults, then the --config file, then
// positional key=value overrides, then the dedicated flags (--seed,
// --variant, --threshold, --oracle-category). Every key names exactly one
// RunConfig field; unknown keys are errors.
//
// Config file syntax: one `key = value` per line; `#` starts a comment;
// blank lines are ignored. Booleans accept true/false/1/0/yes/no.

#include <charconv>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "hmc/checkpoint.hpp"

namespace hmc::cli {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  // Paths.
  std::string tree = "data/tree.tsv";
  std::string manifest = "data/train.tsv";
  std::string out_dir = "data";
  std::string checkpoint = "model.ckpt";
  std::string pipeline = "pipeline";  // directory (or spec file) of the baseline
  std::string report;                 // JSON output path; empty skips the file
  std::string log;                    // training log path; empty skips the file
  std::string predictions;            // predict output path; empty writes stdout

  // Model and training. Defaults follow the reference implementation.
  std::string variant = "final";
  std::size_t hidden_dim = 1024;
  std::size_t backbone_dim = 2048;  // params only; training reads it off the data
  double learning_rate = 0.001;
  std::size_t batch_size = 32;
  std::size_t epochs = 10;
  std::uint64_t seed = 7;
  double threshold = 0.75;
  double dropout = 0.3;
  double l2_factor = 0.0005;
  std::size_t encoder_stages = 0;
  std::string conv_channels = "8,16,32";
  bool augment = true;
  double augment_probability = 0.5;
  bool oracle_category = false;
  bool hidden_truth = true;
  bool paper_defaults = false;
  unsigned threads = 1;

  // Synthetic data.
  std::size_t genders = 2;
  std::size_t families = 4;
  std::size_t categories = 8;
  std::size_t subcategories = 20;
  std::size_t attributes = 15;
  std::size_t attachments_per_attribute = 2;
  std::size_t products = 10000;
  double imbalance = 1.0;
  double attribute_rate = 0.3;
  std::size_t max_attributes = 5;
  double missingness = 0.0;
  double noise = 1.0;
  std::string input_mode = "features";
  std::size_t feature_dim = 64;
  std::size_t image_size = 32;
  double train_fraction = 0.75;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_value(const std::string& key, const std::string& text) {
  if constexpr (std::is_same_v<T, std::string>) {
    return text;
  } else if constexpr (std::is_same_v<T, bool>) {
    if (text == "true" || text == "1" || text == "yes") return true;
    if (text == "false" || text == "0" || text == "no") return false;
    throw ConfigError("config key " + key + " expects a boolean, got '" + text + "'");
  } else if constexpr (std::is_floating_point_v<T>) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(text, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != text.size()) throw ConfigError("config key " + key + " expects a number, got '" + text + "'");
    return static_cast<T>(v);
  } else {
    T v{};
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc{} || end != text.data() + text.size()) {
      throw ConfigError("config key " + key + " expects a nonnegative integer, got '" + text + "'");
    }
    return v;
  }
}

template <class T>
std::string format_value(const T& v) {
  if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else if constexpr (std::is_same_v<T, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_floating_point_v<T>) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  } else {
    return std::to_string(v);
  }
}

}  // namespace detail

struct ConfigKey {
  std::string name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
ConfigKey key_for(std::string name, T RunConfig::*member) {
  return {name,
          [member, name](RunConfig& c, const std::string& text) { c.*member = detail::parse_value<T>(name, text); },
          [member](const RunConfig& c) { return detail::format_value(c.*member); }};
}

inline const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = {
      key_for("tree", &RunConfig::tree),
      key_for("manifest", &RunConfig::manifest),
      key_for("out_dir", &RunConfig::out_dir),
      key_for("checkpoint", &RunConfig::checkpoint),
      key_for("pipeline", &RunConfig::pipeline),
      key_for("report", &RunConfig::report),
      key_for("log", &RunConfig::log),
      key_for("predictions", &RunConfig::predictions),
      key_for("variant", &RunConfig::variant),
      key_for("hidden_dim", &RunConfig::hidden_dim),
      key_for("backbone_dim", &RunConfig::backbone_dim),
      key_for("learning_rate", &RunConfig::learning_rate),
      key_for("batch_size", &RunConfig::batch_size),
      key_for("epochs", &RunConfig::epochs),
      key_for("seed", &RunConfig::seed),
      key_for("threshold", &RunConfig::threshold),
      key_for("dropout", &RunConfig::dropout),
      key_for("l2_factor", &RunConfig::l2_factor),
      key_for("encoder_stages", &RunConfig::encoder_stages),
      key_for("conv_channels", &RunConfig::conv_channels),
      key_for("augment", &RunConfig::augment),
      key_for("augment_probability", &RunConfig::augment_probability),
      key_for("oracle_category", &RunConfig::oracle_category),
      key_for("hidden_truth", &RunConfig::hidden_truth),
      key_for("paper_defaults", &RunConfig::paper_defaults),
      key_for("threads", &RunConfig::threads),
      key_for("genders", &RunConfig::genders),
      key_for("families", &RunConfig::families),
      key_for("categories", &RunConfig::categories),
      key_for("subcategories", &RunConfig::subcategories),
      key_for("attributes", &RunConfig::attributes),
      key_for("attachments_per_attribute", &RunConfig::attachments_per_attribute),
      key_for("products", &RunConfig::products),
      key_for("imbalance", &RunConfig::imbalance),
      key_for("attribute_rate", &RunConfig::attribute_rate),
      key_for("max_attributes", &RunConfig::max_attributes),
      key_for("missingness", &RunConfig::missingness),
      key_for("noise", &RunConfig::noise),
      key_for("input_mode", &RunConfig::input_mode),
      key_for("feature_dim", &RunConfig::feature_dim),
      key_for("image_size", &RunConfig::image_size),
      key_for("train_fraction", &RunConfig::train_fraction),
  };
  return keys;
}

inline void set_key(RunConfig& c, const std::string& key, const std::string& value) {
  for (const ConfigKey& k : config_keys()) {
    if (k.name == key) {
      k.set(c, value);
      return;
    }
  }
  throw ConfigError("unknown config key: " + key);
}

/// Applies one "key=value" override.
inline void apply_override(RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("expected key=value, got '" + assignment + "'");
  set_key(c, detail::trim(std::string_view(assignment).substr(0, eq)),
          detail::trim(std::string_view(assignment).substr(eq + 1)));
}

inline void apply_config_text(RunConfig& c, const std::string& text, const std::string& origin = "config") {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    if (detail::trim(line).empty()) continue;
    try {
      apply_override(c, line);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

inline void apply_config_file(RunConfig& c, const std::string& path) {
  apply_config_text(c, hmc::detail::read_file(path), path);
}

/// Every key with its current value, one `key = value` line each; the output
/// parses back to the same configuration.
inline std::string config_text(const RunConfig& c) {
  std::string out;
  for (const ConfigKey& k : config_keys()) out += k.name + " = " + k.get(c) + "\n";
  return out;
}

}  // namespace hmc::cli
