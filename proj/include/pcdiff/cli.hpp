#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "pcdiff/attacks.hpp"
#include "pcdiff/config.hpp"
#include "pcdiff/io.hpp"
#include "pcdiff/keying.hpp"
#include "pcdiff/training.hpp"
#include "pcdiff/watermark.hpp"

namespace pcdiff::cli {

namespace fs = std::filesystem;
using nlohmann::json;

inline constexpr const char* kKeyEnv = "PCDIFF_KEY";

/// Fixed file layout inside a run's output directory.
struct RunLayout {
  fs::path root;

  fs::path data_dir() const { return root / "data"; }
  fs::path reference_ckpt() const { return root / "reference.ckpt"; }
  fs::path pcdiff_ckpt() const { return root / "pcdiff.ckpt"; }
  fs::path generated_dir() const { return root / "generated"; }
  fs::path attack_dir() const { return root / "attack"; }
  fs::path conditions() const { return attack_dir() / "conditions.json"; }
  fs::path watermark_csv() const { return root / "watermark" / "robustness.csv"; }
  fs::path report_csv() const { return root / "report.csv"; }
};

struct CommonOptions {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string key_hex;
};

inline RunConfig resolve_config(const CommonOptions& o) {
  RunConfig c = o.config_path.empty() ? RunConfig{} : load_config(o.config_path);
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(c, detail::trim(kv.substr(0, eq)), detail::trim(kv.substr(eq + 1)));
  }
  if (o.seed) c.seed = *o.seed;
  if (!o.out_dir.empty()) c.out_dir = o.out_dir;
  c.validate();
  return c;
}

/// The key comes from --key, else from the environment. Error messages name the source.
inline std::optional<FuserKey> resolve_key(const CommonOptions& o) {
  std::string hex = o.key_hex;
  std::string source = "--key";
  if (hex.empty()) {
    if (const char* env = std::getenv(kKeyEnv)) {
      hex = env;
      source = kKeyEnv;
    }
  }
  if (hex.empty()) return std::nullopt;
  try {
    return parse_key(hex);
  } catch (const KeyError& e) {
    throw KeyError(source + ": " + e.what());
  }
}

inline FuserKey require_key(const CommonOptions& o) {
  auto key = resolve_key(o);
  if (!key) throw KeyError(std::string("a FuserKey is required: pass --key or set ") + kKeyEnv);
  return *key;
}

inline std::string key_salt(std::uint64_t seed) { return "pcdiff-key:" + std::to_string(seed); }

inline std::string image_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04zu.ppm", i);
  return buf;
}

inline std::vector<ImageF32> load_image_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw IoError("missing image directory '" + dir.string() + "' (run gen-data first)");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".ppm") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::vector<ImageF32> out;
  out.reserve(files.size());
  for (const auto& f : files) out.push_back(load_image(f));
  return out;
}

inline DatasetSplit load_dataset(const RunLayout& layout) {
  return {load_image_dir(layout.data_dir() / "train"), load_image_dir(layout.data_dir() / "eval")};
}

inline void write_text(const fs::path& path, const std::string& text) { detail::write_file(path, text); }

inline ReferenceAutoencoder<float> load_reference(const RunLayout& layout) {
  auto model = ReferenceAutoencoder<float>::build(0);
  apply_checkpoint(model.params(), load_checkpoint(layout.reference_ckpt()));
  model.freeze();
  return model;
}

inline StructureConfig structure_from_json(const json& j) {
  StructureConfig s;
  s.m = j.at("m").get<std::int64_t>();
  s.n = j.at("n").get<std::int64_t>();
  s.fusers.clear();
  for (const auto& site : j.at("fusers")) s.fusers.push_back(parse_fuser_site(site.get<std::string>()));
  s.validate();
  return s;
}

inline json structure_to_json(const StructureConfig& s) {
  json sites = json::array();
  for (auto site : s.fusers) sites.push_back(to_string(site));
  return {{"m", s.m}, {"n", s.n}, {"label", s.effective_label()}, {"fusers", sites}};
}

struct LoadedPCDiff {
  PCDiffModel<float> model;
  json metadata;
};

inline LoadedPCDiff load_pcdiff(const RunLayout& layout, const ReferenceAutoencoder<float>& reference) {
  const auto ckpt = load_checkpoint(layout.pcdiff_ckpt());
  LoadedPCDiff out{PCDiffModel<float>::build(reference, structure_from_json(ckpt.metadata.at("structure")), 0),
                   ckpt.metadata};
  apply_checkpoint(out.model.params(), ckpt);
  verify_frozen(out.model, reference);
  return out;
}

/// Rejects a key whose salted fingerprint differs from the one stored at training time.
inline void check_fingerprint(const json& metadata, const FuserKey& key) {
  const auto& fp = metadata.at("key_fingerprint");
  if (key_fingerprint(key, fp.at("salt").get<std::string>()) != fp.at("sha256").get<std::string>()) {
    throw KeyError("--key does not match the fingerprint stored in the PCDiff checkpoint");
  }
}

inline json report_json(const MetricsReport& r) {
  return {{"condition", r.condition}, {"subject", r.subject},          {"baseline", r.baseline},
          {"psnr", r.psnr},           {"ssim", r.ssim},                {"fd_proxy", r.feature_distance},
          {"samples", r.samples}};
}

/// Training summary without wall time, so checkpoints stay byte-stable.
inline json stable_summary(const TrainReport& r) {
  auto j = r.summary();
  j.erase("wall_seconds");
  return j;
}

inline Tensor<float> eval_latents(const RunConfig& c) {
  Rng rng(c.effective_eval_seed());
  return gaussian_latents<float>(c.eval_latents, rng);
}

// ---------------------------------------------------------------------------
// Subcommands

inline int cmd_gen_data(const RunConfig& c, std::ostream& out) {
  const RunLayout layout{c.out_dir};
  const auto data = split(generate_dataset(c.effective_data()), c.train_fraction, c.effective_split_seed());
  for (std::size_t i = 0; i < data.train.size(); ++i) save_image(layout.data_dir() / "train" / image_name(i), data.train[i]);
  for (std::size_t i = 0; i < data.eval.size(); ++i) save_image(layout.data_dir() / "eval" / image_name(i), data.eval[i]);
  const json manifest{{"train", data.train.size()}, {"eval", data.eval.size()}, {"config", c.to_json()}};
  write_text(layout.data_dir() / "manifest.json", manifest.dump(2) + "\n");
  out << json{{"train", data.train.size()}, {"eval", data.eval.size()}}.dump() << '\n';
  return 0;
}

inline int cmd_train_ref(const RunConfig& c, std::ostream& out) {
  const RunLayout layout{c.out_dir};
  const auto hp = c.effective_reference();
  auto result = train_reference<float>(load_dataset(layout), hp);
  save_checkpoint(layout.reference_ckpt(),
                  to_checkpoint(result.model.params(), {{"kind", "reference"}, {"train", stable_summary(result.report)}}));
  std::ostringstream curve;
  result.report.write_jsonl(curve);
  write_text(layout.root / "reference_curve.jsonl", curve.str());
  write_text(layout.root / "reference_summary.json", result.report.summary().dump(2) + "\n");
  out << json{{"eval_psnr", result.report.eval_psnr}, {"eval_ssim", result.report.eval_ssim}}.dump() << '\n';
  return 0;
}

inline int cmd_train_pcdiff(const RunConfig& c, const FuserKey& key, std::ostream& out) {
  const RunLayout layout{c.out_dir};
  const auto reference = load_reference(layout);
  const auto hp = c.effective_pcdiff();
  auto result = train_pcdiff<float>(reference, c.structure, key, load_dataset(layout), hp);
  const std::string salt = key_salt(hp.seed);
  const json meta{{"kind", "pcdiff"},
                  {"structure", structure_to_json(c.structure)},
                  {"key_fingerprint", {{"salt", salt}, {"sha256", key_fingerprint(key, salt)}}},
                  {"train", stable_summary(result.report)}};
  save_checkpoint(layout.pcdiff_ckpt(), to_checkpoint(result.model.params(), meta));
  std::ostringstream curve;
  result.report.write_jsonl(curve);
  write_text(layout.root / "pcdiff_curve.jsonl", curve.str());
  write_text(layout.root / "pcdiff_summary.json", result.report.summary().dump(2) + "\n");
  out << json{{"eval_psnr", result.report.eval_psnr}, {"eval_ssim", result.report.eval_ssim}}.dump() << '\n';
  return 0;
}

inline int cmd_generate(const RunConfig& c, const std::optional<FuserKey>& key, std::size_t count, std::ostream& out,
                        std::ostream& err) {
  const RunLayout layout{c.out_dir};
  const auto reference = load_reference(layout);
  const auto loaded = load_pcdiff(layout, reference);
  if (key) check_fingerprint(loaded.metadata, *key);
  Rng rng(c.effective_eval_seed());
  const auto z = gaussian_latents<float>(count, rng);
  DecodeOptions o;
  if (key) o.key = &*key;
  NoGradGuard guard;
  const auto result = loaded.model.decode(ops::constant(z), o);
  if (result.unauthorized()) err << "warning: decoding without a key (" << to_string(result.mode) << ")\n";
  const auto imgs = batch_to_images(result.images.value());
  for (std::size_t i = 0; i < imgs.size(); ++i) save_image(layout.generated_dir() / image_name(i), imgs[i]);
  out << json{{"written", imgs.size()}, {"mode", to_string(result.mode)}}.dump() << '\n';
  return 0;
}

inline int cmd_attack(const RunConfig& c, const FuserKey& key, std::ostream& out) {
  const RunLayout layout{c.out_dir};
  const auto reference = load_reference(layout);
  const auto loaded = load_pcdiff(layout, reference);
  check_fingerprint(loaded.metadata, key);
  const auto& model = loaded.model;
  const auto z = eval_latents(c);
  const auto refs = reference_decode(reference, z);
  const auto seed = c.effective_attack_seed();

  std::vector<ImageF32> wrong_imgs, stripped_imgs;
  json conditions = json::array();
  const auto ori = authorized_decode_report(model, reference, z, key);
  conditions.push_back(report_json(ori));
  conditions.push_back(report_json(wrong_key_attack(model, reference, z, key, c.wrong_key_trials, seed, nullptr, &wrong_imgs)));
  conditions.push_back(report_json(remove_fuser_attack(model, reference, z, &stripped_imgs)));

  std::vector<ImageF32> wrong_refs;
  for (std::size_t t = 0; t < c.wrong_key_trials; ++t) wrong_refs.insert(wrong_refs.end(), refs.begin(), refs.end());
  conditions.push_back(report_json(restoration_report("restored_wrong_key", wrong_imgs, wrong_refs)));
  conditions.push_back(report_json(restoration_report("restored_no_fuser", stripped_imgs, refs)));

  const auto space = combination_count(c.structure.m, c.structure.n);
  const std::size_t budget = c.brute_force_budget == 0 ? space : c.brute_force_budget;
  const auto search = brute_force_search(model, reference, z, budget, seed);
  json best = {{"condition", "best_removal"}, {"subject", "removal " + describe(search.best)},
               {"baseline", "reference_decode"}, {"psnr", search.best_psnr}, {"ssim", search.best_ssim},
               {"samples", c.eval_latents}};
  conditions.push_back(best);

  std::ostringstream trace;
  for (const auto& t : search.trace) {
    trace << json{{"index", t.index}, {"hypothesis", describe(t.hypothesis)}, {"psnr", t.psnr}, {"ssim", t.ssim},
                  {"seconds", t.seconds}}
                 .dump()
          << '\n';
  }
  write_text(layout.attack_dir() / "brute_force.jsonl", trace.str());
  const auto crack = crack_time(c.structure.m, c.structure.n, search.mean_trial_seconds);
  write_text(layout.attack_dir() / "timing.json",
             json{{"trials", budget}, {"mean_trial_seconds", search.mean_trial_seconds},
                  {"combinations", crack.combination_count}, {"t_crack_s", crack.t_crack}}
                     .dump(2) +
                 "\n");
  const json doc{{"structure", structure_to_json(c.structure)},
                 {"eval_latents", c.eval_latents},
                 {"wrong_key_trials", c.wrong_key_trials},
                 {"conditions", conditions}};
  write_text(layout.conditions(), doc.dump(2) + "\n");
  out << json{{"ori_psnr", ori.psnr}, {"hypotheses", budget}}.dump() << '\n';
  return 0;
}

inline std::vector<ImageAttack> watermark_suite(const RunConfig& c) {
  std::vector<ImageAttack> suite{{"none", [](const ImageF32& img, std::size_t) { return img; }}};
  const auto seed = c.effective_attack_seed();
  for (const auto& spec : c.suite) {
    suite.push_back({spec.label(), [spec, seed](const ImageF32& img, std::size_t i) {
                       AttackSpec s = spec;
                       s.seed = mix_seed(seed, i);
                       return apply_attack(img, s);
                     }});
  }
  return suite;
}

struct WatermarkSet {
  std::vector<WatermarkPayload> payloads;
  std::vector<Tensor<float>> latents;
};

inline WatermarkSet watermark_payloads(std::size_t count, std::size_t bits, std::size_t replication,
                                       std::uint64_t seed) {
  WatermarkSet s;
  Rng rng(mix_seed(seed, 0xB175));
  for (std::size_t i = 0; i < count; ++i) {
    s.payloads.push_back(WatermarkPayload::random(bits, replication, mix_seed(seed, i), rng));
    Rng noise(mix_seed(seed, 0x10000 + i));
    s.latents.push_back(embed_watermark(s.payloads.back(), noise));
  }
  return s;
}

/// Robustness table with a reference-decoder row and a PCDiff correct-key row.
inline RobustnessTable watermark_table(const RunConfig& c, const ReferenceAutoencoder<float>& reference,
                                       const PCDiffModel<float>& model, const FuserKey& key) {
  const auto set = watermark_payloads(c.watermark_payloads, c.watermark_bits, c.watermark_replication,
                                      c.effective_watermark_seed());
  const auto suite = watermark_suite(c);
  auto ref_decode = [&](const Tensor<float>& z) { return reference_decode(reference, z).front(); };
  auto pc_decode = [&](const Tensor<float>& z) {
    DecodeOptions o;
    o.key = &key;
    return pcdiff_decode(model, z, o).front();
  };
  RobustnessTable table;
  for (const auto& a : suite) table.attacks.push_back(a.name);
  table.rows.push_back(robustness_eval("reference", set.payloads, set.latents, ref_decode, suite, reference));
  table.rows.push_back(robustness_eval("pcdiff", set.payloads, set.latents, pc_decode, suite, reference));

  std::vector<ImageF32> ref_imgs, pc_imgs;
  for (const auto& z : set.latents) {
    ref_imgs.push_back(ref_decode(z));
    pc_imgs.push_back(pc_decode(z));
  }
  table.quality.push_back(std::nullopt);
  table.quality.push_back(evaluate_images("pcdiff", pc_imgs, ref_imgs));
  return table;
}

inline int cmd_watermark_eval(const RunConfig& c, const FuserKey& key, std::ostream& out) {
  const RunLayout layout{c.out_dir};
  const auto reference = load_reference(layout);
  const auto loaded = load_pcdiff(layout, reference);
  check_fingerprint(loaded.metadata, key);
  const auto table = watermark_table(c, reference, loaded.model, key);
  std::ostringstream csv;
  table.write_csv(csv);
  write_text(layout.watermark_csv(), csv.str());
  out << csv.str();
  return 0;
}

/// Integral values print without a fractional part.
inline json plain_number(double v) {
  if (std::isfinite(v) && v == std::floor(v) && std::abs(v) < 9e15) return static_cast<std::int64_t>(v);
  return v;
}

inline int cmd_crack_time(std::int64_t m, std::int64_t n, double t_test, std::ostream& out) {
  const auto e = crack_time(m, n, t_test);
  json j = json::object();
  j["combinations"] = e.combination_count;
  j["t_crack_s"] = plain_number(e.t_crack);
  out << j.dump() << '\n';
  return 0;
}

/// condition,psnr,ssim,fd_proxy,samples from a finished attack run. No timings, so the bytes are stable.
inline std::string report_csv(const fs::path& run_dir) {
  const RunLayout layout{run_dir};
  json doc;
  try {
    doc = json::parse(detail::read_file(layout.conditions()));
  } catch (const json::exception& e) {
    throw IoError(layout.conditions().string() + ": " + e.what());
  }
  std::string csv = "condition,psnr,ssim,fd_proxy,samples\n";
  for (const auto& r : doc.at("conditions")) {
    csv += r.at("condition").get<std::string>() + "," + format_fixed(r.at("psnr").get<double>(), 4) + "," +
           format_fixed(r.at("ssim").get<double>(), 4) + "," +
           (r.contains("fd_proxy") ? format_fixed(r.at("fd_proxy").get<double>(), 4) : std::string("-")) + "," +
           std::to_string(r.at("samples").get<std::size_t>()) + "\n";
  }
  return csv;
}

inline int cmd_report(const fs::path& run_dir, std::ostream& out) {
  const auto csv = report_csv(run_dir);
  write_text(RunLayout{run_dir}.report_csv(), csv);
  out << csv;
  return 0;
}

// ---------------------------------------------------------------------------

inline void add_common(CLI::App* sub, CommonOptions& o, bool with_key) {
  sub->add_option("--config", o.config_path, "key = value run configuration")->check(CLI::ExistingFile);
  sub->add_option("--set", o.overrides, "override one config entry, key=value (repeatable)");
  sub->add_option("--seed", o.seed, "master seed; derives every stage seed");
  sub->add_option("--out", o.out_dir, "run output directory");
  if (with_key) sub->add_option("--key", o.key_hex, std::string("32-hex-digit FuserKey (or set ") + kKeyEnv + ")");
}

/// Exit codes: 0 success, 1 configuration or usage error, 2 runtime or training error.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Proactive-control decoder toolkit"};
  app.name("pcdiff");
  app.require_subcommand(1);
  app.failure_message(CLI::FailureMessage::help);

  CommonOptions o;
  std::size_t count = 4;
  std::int64_t crack_m = 0, crack_n = 0;
  double t_test = 0.0;
  std::string report_dir;

  auto* gen = app.add_subcommand("gen-data", "write the synthetic dataset as PPM files");
  add_common(gen, o, false);
  auto* tref = app.add_subcommand("train-ref", "train the reference autoencoder");
  add_common(tref, o, false);
  auto* tpc = app.add_subcommand("train-pcdiff", "fine-tune added layers and fusers under a key");
  add_common(tpc, o, true);
  auto* generate = app.add_subcommand("generate", "decode seeded latents to PPM images");
  add_common(generate, o, true);
  generate->add_option("--count", count, "number of images")->check(CLI::PositiveNumber);
  auto* attack = app.add_subcommand("attack", "evaluate wrong-key, no-fuser, restoration and removal attacks");
  add_common(attack, o, true);
  auto* wm = app.add_subcommand("watermark-eval", "latent watermark robustness through both decoders");
  add_common(wm, o, true);
  auto* crack = app.add_subcommand("crack-time", "exhaustive structure-search cost");
  crack->add_option("--m", crack_m, "added mid blocks")->required();
  crack->add_option("--n", crack_n, "added up/down pairs")->required();
  crack->add_option("--t-test", t_test, "seconds per tested hypothesis")->required();
  auto* report = app.add_subcommand("report", "summarise a finished attack run as CSV");
  report->add_option("--in", report_dir, "run directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*crack) return cmd_crack_time(crack_m, crack_n, t_test, out);
    if (*report) return cmd_report(report_dir, out);
    const RunConfig c = resolve_config(o);
    if (*gen) return cmd_gen_data(c, out);
    if (*tref) return cmd_train_ref(c, out);
    if (*tpc) return cmd_train_pcdiff(c, require_key(o), out);
    if (*generate) return cmd_generate(c, resolve_key(o), count, out, err);
    if (*attack) return cmd_attack(c, require_key(o), out);
    if (*wm) return cmd_watermark_eval(c, require_key(o), out);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const KeyError& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

}  // namespace pcdiff::cli
