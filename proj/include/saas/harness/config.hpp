#pragma once

// Flat `key = value` run configuration with a typed schema. Unknown keys and
// ill-typed values are rejected; the resolved configuration is written back verbatim.

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace saas {

enum class ConfigType { integer, real, boolean, text };

struct ConfigKey {
  std::string name;
  ConfigType type;
  std::string fallback;
  std::string doc;
};

inline const std::vector<ConfigKey>& config_schema() {
  using T = ConfigType;
  static const std::vector<ConfigKey> keys{
      {"seed", T::integer, "0", "global seed for data order, initialization and sampling"},
      {"precision", T::text, "float32", "float32 (training) or float64 (gradient checks)"},
      // corpus
      {"styles", T::integer, "6", "style classes M"},
      {"speakers", T::integer, "10", "speakers in the synthetic corpus"},
      {"clips_per_speaker_style", T::integer, "4", "clips per (speaker, style)"},
      {"frames", T::integer, "64", "clip length T"},
      {"audio_dim", T::integer, "28", "acoustic feature width d_a"},
      {"val_speakers", T::integer, "2", "speakers held out for validation"},
      {"test_speakers", T::integer, "2", "speakers held out for testing"},
      {"noise_std", T::real, "0.1", "Gaussian noise added to every generated track"},
      {"style_strength", T::real, "1.0", "scale of the per-style transforms"},
      // style extractor
      {"d_s", T::integer, "256", "style code width"},
      {"window", T::integer, "8", "style token window w"},
      {"clip_len", T::integer, "32", "style clip length T'"},
      {"codebook_size", T::integer, "500", "style codebook entries N"},
      {"use_codebook", T::boolean, "true", "false extracts the style code regressively"},
      {"style_layers", T::integer, "2", "transformer layers in the style encoder"},
      {"style_heads", T::integer, "4", "attention heads in the style encoder"},
      {"alpha_trip", T::real, "1.0", "triplet weight in the style objective"},
      {"alpha_c", T::real, "0.1", "classification weight in the style objective"},
      {"margin", T::real, "0.2", "triplet margin gamma"},
      {"dead_after", T::integer, "200", "steps before an unused codebook entry is re-seeded"},
      {"style_epochs", T::integer, "200", "style extractor epochs"},
      // motion stylizer
      {"d_z", T::integer, "256", "latent motion width"},
      {"rank", T::integer, "4", "rank of the hypernetwork weight offsets"},
      {"hyper_hidden", T::integer, "128", "hypernetwork hidden width"},
      {"use_hyper", T::boolean, "true", "false removes the hypernetwork (unmodulated style branch)"},
      {"motion_alpha_trip", T::real, "1.0", "triplet weight on generated sequences"},
      {"alpha_style1", T::real, "0.1", "frozen-classifier weight on generated sequences"},
      {"alpha_style2", T::real, "0.05", "adversarial weight on generated sequences"},
      {"gamma_dtw", T::real, "0.1", "soft-DTW smoothing"},
      {"disc_hidden", T::integer, "64", "style discriminator width"},
      {"motion_epochs", T::integer, "500", "motion stylizer epochs"},
      // pose generator
      {"pose_codebook_size", T::integer, "128", "pose codebook entries N_p"},
      {"d_p", T::integer, "128", "pose token width"},
      {"pose_window", T::integer, "8", "frames per pose token"},
      {"pose_codebook_epochs", T::integer, "100", "pose VQ autoencoder epochs"},
      {"pose_epochs", T::integer, "100", "pose index predictor epochs"},
      {"temperature", T::real, "1.0", "pose sampling temperature"},
      // video transfer
      {"alpha_cyc", T::real, "1.0", "cycle-reconstruction weight"},
      {"transfer_epochs", T::integer, "300", "video transfer epochs"},
      {"transfer_batch", T::integer, "8", "video transfer minibatch size"},
      // optimizer
      {"lr", T::real, "2e-4", "Adam learning rate"},
      {"beta1", T::real, "0.9", "Adam beta1"},
      {"beta2", T::real, "0.999", "Adam beta2"},
      {"clip_norm", T::real, "1.0", "global gradient-norm clip (<= 0 disables)"},
      {"batch", T::integer, "8", "minibatch size"},
  };
  return keys;
}

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class RunConfig {
 public:
  RunConfig() {
    for (const auto& k : config_schema()) values_[k.name] = k.fallback;
  }

  static const ConfigKey& key(const std::string& name) {
    for (const auto& k : config_schema()) {
      if (k.name == name) return k;
    }
    throw ConfigError("unknown config key '" + name + "'");
  }

  void set(const std::string& name, const std::string& value) {
    const ConfigKey& k = key(name);
    check_type(k, value);
    values_[name] = value;
  }

  /// `key=value` override (command-line form).
  void apply(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
  }

  void merge_text(const std::string& text, const std::string& origin = "config") {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.resize(hash);
      line = trim(line);
      if (line.empty()) continue;
      try {
        apply(line);
      } catch (const ConfigError& e) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
      }
    }
  }

  void merge_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    merge_text(ss.str(), path.string());
  }

  const std::string& raw(const std::string& name) const {
    key(name);
    return values_.at(name);
  }
  long long integer(const std::string& name) const { return std::stoll(typed(name, ConfigType::integer)); }
  int i(const std::string& name) const { return static_cast<int>(integer(name)); }
  double real(const std::string& name) const { return std::stod(typed(name, ConfigType::real)); }
  bool flag(const std::string& name) const { return typed(name, ConfigType::boolean) == "true"; }
  std::uint64_t seed() const { return static_cast<std::uint64_t>(integer("seed")); }

  /// Canonical text form: schema order, one `key = value` per line.
  std::string text() const {
    std::string out;
    for (const auto& k : config_schema()) out += k.name + " = " + values_.at(k.name) + "\n";
    return out;
  }

  void write(const std::filesystem::path& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write config file " + path.string());
    out << text();
  }

  /// FNV-1a of the canonical text, for checkpoint manifests.
  std::string hash() const {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : text()) {
      h ^= c;
      h *= 1099511628211ull;
    }
    std::ostringstream ss;
    ss << std::hex << h;
    return ss.str();
  }

  static std::string usage() {
    std::string out = "config keys (file lines or --set key=value):\n";
    for (const auto& k : config_schema()) out += "  " + k.name + " [" + k.fallback + "]  " + k.doc + "\n";
    return out;
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  }

  static void check_type(const ConfigKey& k, const std::string& v) {
    const auto bad = [&] { return ConfigError("value '" + v + "' is not valid for " + k.name); };
    switch (k.type) {
      case ConfigType::integer: {
        long long x = 0;
        const auto r = std::from_chars(v.data(), v.data() + v.size(), x);
        if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw bad();
        break;
      }
      case ConfigType::real: {
        try {
          std::size_t pos = 0;
          std::stod(v, &pos);
          if (pos != v.size()) throw bad();
        } catch (const std::logic_error&) {
          throw bad();
        }
        break;
      }
      case ConfigType::boolean:
        if (v != "true" && v != "false") throw bad();
        break;
      case ConfigType::text:
        if (v.empty()) throw bad();
        break;
    }
  }

  const std::string& typed(const std::string& name, ConfigType type) const {
    if (key(name).type != type) throw ConfigError("config key " + name + " has a different type");
    return values_.at(name);
  }

  std::map<std::string, std::string> values_;
};

}  // namespace saas
