#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <istream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pcdiff/attacks.hpp"
#include "pcdiff/io.hpp"
#include "pcdiff/synth_data.hpp"
#include "pcdiff/training.hpp"
#include "pcdiff/watermark.hpp"

namespace pcdiff {

/// Everything a scripted run needs. Every field has a default; a config file
/// only lists what it changes.
struct RunConfig {
  // Zero keeps the per-stage seeds below as written; any other value derives
  // every stage seed from it.
  std::uint64_t seed = 0;
  std::string out_dir = "runs/default";

  DatasetSpec data;
  double train_fraction = 0.9;
  std::uint64_t split_seed = 7;

  TrainHParams reference_train = default_reference_hparams();
  StructureConfig structure = default_structure();
  TrainHParams pcdiff_train = default_pcdiff_hparams();

  std::size_t eval_latents = 100;
  std::uint64_t eval_seed = 99;
  std::size_t wrong_key_trials = 10;
  std::uint64_t attack_seed = 5;
  std::size_t brute_force_budget = 0;  // 0 = exhaustive
  std::vector<AttackSpec> suite = standard_suite();

  std::size_t watermark_payloads = 100;
  std::size_t watermark_bits = 32;
  std::size_t watermark_replication = 8;
  std::uint64_t watermark_seed = 21;

  static TrainHParams default_reference_hparams() {
    TrainHParams h;
    h.learning_rate = 2e-3;
    h.steps = 2000;
    h.batch_size = 16;
    h.weight_decay = 0.0;
    h.seed = 1;
    return h;
  }

  static StructureConfig default_structure() {
    StructureConfig s;
    s.m = 2;
    s.n = 1;
    return s;
  }

  static TrainHParams default_pcdiff_hparams() {
    TrainHParams h;
    h.learning_rate = 3e-4;
    h.steps = 1500;
    h.batch_size = 8;
    h.lambda3 = 0.1;
    h.ceiling = 0.045;
    h.margin = 0.03;
    h.wrong_keys = 2;
    h.strip_weight = 0.1;
    h.strip_margin = 0.08;
    h.seed = 3;
    return h;
  }

  std::uint64_t stage_seed(std::uint64_t configured, std::uint64_t tag) const {
    return seed == 0 ? configured : mix_seed(seed, tag);
  }

  DatasetSpec effective_data() const {
    DatasetSpec d = data;
    d.seed = stage_seed(data.seed, 1);
    return d;
  }
  std::uint64_t effective_split_seed() const { return stage_seed(split_seed, 2); }
  TrainHParams effective_reference() const {
    TrainHParams h = reference_train;
    h.seed = stage_seed(reference_train.seed, 3);
    return h;
  }
  TrainHParams effective_pcdiff() const {
    TrainHParams h = pcdiff_train;
    h.seed = stage_seed(pcdiff_train.seed, 4);
    return h;
  }
  std::uint64_t effective_eval_seed() const { return stage_seed(eval_seed, 5); }
  std::uint64_t effective_attack_seed() const { return stage_seed(attack_seed, 6); }
  std::uint64_t effective_watermark_seed() const { return stage_seed(watermark_seed, 7); }

  void validate() const {
    pcdiff::validate(data);
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("config: train_fraction must lie in (0, 1)");
    reference_train.validate();
    structure.validate();
    pcdiff_train.validate();
    if (eval_latents == 0) throw ConfigError("config: eval.latents must be at least 1");
    if (wrong_key_trials == 0) throw ConfigError("config: attack.wrong_key_trials must be at least 1");
    const auto space = combination_count(structure.m, structure.n);
    if (brute_force_budget > space) {
      throw ConfigError("config: attack.brute_force_budget " + std::to_string(brute_force_budget) +
                        " exceeds the " + std::to_string(space) + " removal hypotheses");
    }
    for (const auto& a : suite) a.validate();
    WatermarkPayload probe{std::vector<bool>(watermark_bits), watermark_replication, 0};
    probe.validate();
  }

  nlohmann::json to_json() const;
};

namespace detail {

struct ConfigField {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename U>
U parse_number(const std::string& key, const std::string& text) {
  std::istringstream in(text);
  U v{};
  in >> v;
  if (in.fail() || !in.eof()) throw ConfigError("config: key '" + key + "' expects a number, got '" + text + "'");
  if constexpr (std::is_unsigned_v<U>) {
    if (trim(text).starts_with('-')) throw ConfigError("config: key '" + key + "' must be non-negative");
  }
  return v;
}

// Shortest text that parses back to the same double.
inline std::string show_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename U>
ConfigField number_field(U RunConfig::*member) {
  return {[member](RunConfig& c, const std::string& v) { c.*member = parse_number<U>("", v); },
          [member](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<U>) return show_double(c.*member);
            else return std::to_string(c.*member);
          }};
}

template <typename Owner, typename U>
ConfigField nested_field(Owner RunConfig::*owner, U Owner::*member) {
  return {[owner, member](RunConfig& c, const std::string& v) { (c.*owner).*member = parse_number<U>("", v); },
          [owner, member](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<U>) return show_double((c.*owner).*member);
            else return std::to_string((c.*owner).*member);
          }};
}

inline void add_hparams(std::map<std::string, ConfigField>& f, const std::string& prefix, TrainHParams RunConfig::*h) {
  f[prefix + ".learning_rate"] = nested_field(h, &TrainHParams::learning_rate);
  f[prefix + ".steps"] = nested_field(h, &TrainHParams::steps);
  f[prefix + ".batch_size"] = nested_field(h, &TrainHParams::batch_size);
  f[prefix + ".lambda1"] = nested_field(h, &TrainHParams::lambda1);
  f[prefix + ".lambda2"] = nested_field(h, &TrainHParams::lambda2);
  f[prefix + ".lambda3"] = nested_field(h, &TrainHParams::lambda3);
  f[prefix + ".margin"] = nested_field(h, &TrainHParams::margin);
  f[prefix + ".ceiling"] = nested_field(h, &TrainHParams::ceiling);
  f[prefix + ".wrong_keys"] = nested_field(h, &TrainHParams::wrong_keys);
  f[prefix + ".strip_weight"] = nested_field(h, &TrainHParams::strip_weight);
  f[prefix + ".strip_margin"] = nested_field(h, &TrainHParams::strip_margin);
  f[prefix + ".weight_decay"] = nested_field(h, &TrainHParams::weight_decay);
  f[prefix + ".clip_norm"] = nested_field(h, &TrainHParams::clip_norm);
  f[prefix + ".cycle_weight"] = nested_field(h, &TrainHParams::cycle_weight);
  f[prefix + ".gaussian_fraction"] = nested_field(h, &TrainHParams::gaussian_fraction);
  f[prefix + ".seed"] = nested_field(h, &TrainHParams::seed);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

inline const std::map<std::string, ConfigField>& config_fields() {
  static const std::map<std::string, ConfigField> fields = [] {
    std::map<std::string, ConfigField> f;
    f["seed"] = number_field(&RunConfig::seed);
    f["out_dir"] = {[](RunConfig& c, const std::string& v) { c.out_dir = v; },
                    [](const RunConfig& c) { return c.out_dir; }};
    f["data.count"] = nested_field(&RunConfig::data, &DatasetSpec::count);
    f["data.seed"] = nested_field(&RunConfig::data, &DatasetSpec::seed);
    f["data.train_fraction"] = number_field(&RunConfig::train_fraction);
    f["data.split_seed"] = number_field(&RunConfig::split_seed);
    add_hparams(f, "reference", &RunConfig::reference_train);
    add_hparams(f, "pcdiff", &RunConfig::pcdiff_train);
    f["structure.m"] = nested_field(&RunConfig::structure, &StructureConfig::m);
    f["structure.n"] = nested_field(&RunConfig::structure, &StructureConfig::n);
    f["structure.fusers"] = {[](RunConfig& c, const std::string& v) {
                               c.structure.fusers.clear();
                               for (const auto& s : split_list(v)) c.structure.fusers.push_back(parse_fuser_site(s));
                             },
                             [](const RunConfig& c) {
                               std::string s;
                               for (auto site : c.structure.fusers) s += (s.empty() ? "" : ",") + to_string(site);
                               return s;
                             }};
    f["eval.latents"] = number_field(&RunConfig::eval_latents);
    f["eval.seed"] = number_field(&RunConfig::eval_seed);
    f["attack.wrong_key_trials"] = number_field(&RunConfig::wrong_key_trials);
    f["attack.seed"] = number_field(&RunConfig::attack_seed);
    f["attack.brute_force_budget"] = number_field(&RunConfig::brute_force_budget);
    // "jpeg:75,crop:0.5,..."; a bare name takes the standard parameter.
    f["attack.suite"] = {[](RunConfig& c, const std::string& v) {
                           c.suite.clear();
                           for (const auto& item : split_list(v)) {
                             const auto colon = item.find(':');
                             AttackSpec a = AttackSpec::standard(parse_attack_kind(trim(item.substr(0, colon))));
                             if (colon != std::string::npos)
                               a.param = parse_number<double>("attack.suite", trim(item.substr(colon + 1)));
                             c.suite.push_back(a);
                           }
                         },
                         [](const RunConfig& c) {
                           std::string s;
                           for (const auto& a : c.suite) s += (s.empty() ? "" : ",") + a.label() + ":" + show_double(a.param);
                           return s;
                         }};
    f["watermark.payloads"] = number_field(&RunConfig::watermark_payloads);
    f["watermark.bits"] = number_field(&RunConfig::watermark_bits);
    f["watermark.replication"] = number_field(&RunConfig::watermark_replication);
    f["watermark.seed"] = number_field(&RunConfig::watermark_seed);
    return f;
  }();
  return fields;
}

}  // namespace detail

/// Sets one `key = value` pair. Unknown keys are an error.
inline void set_config_value(RunConfig& c, const std::string& key, const std::string& value) {
  const auto& fields = detail::config_fields();
  const auto it = fields.find(key);
  if (it == fields.end()) throw ConfigError("config: unknown key '" + key + "'");
  try {
    it->second.set(c, value);
  } catch (const ConfigError& e) {
    throw ConfigError("config: bad value '" + value + "' for key '" + key + "': " + e.what());
  }
}

/// Parses `key = value` lines; `#` starts a comment.
inline RunConfig parse_config(std::istream& in, const std::string& origin = "config") {
  RunConfig c;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value', got '" + line + "'");
    }
    try {
      set_config_value(c, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return c;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::istringstream in(detail::read_file(path));
  return parse_config(in, path.string());
}

/// Canonical text form; parse_config(write_config(c)) reproduces c.
inline std::string write_config(const RunConfig& c) {
  std::string out;
  for (const auto& [key, field] : detail::config_fields()) out += key + " = " + field.get(c) + "\n";
  return out;
}

inline nlohmann::json RunConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [key, field] : detail::config_fields()) j[key] = field.get(*this);
  return j;
}

}  // namespace pcdiff
