// cssr: train, sr, classify, eval and sweep front end.
//
// Exit codes: 0 ok, 1 usage or configuration error, 2 data error,
// 3 acceptance failure.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cssr/cssr.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitAcceptance = 3;

bool g_quiet = false;

/// One key=value record per line on stderr. Values with spaces are quoted.
void log_line(const std::string& level, const std::vector<std::pair<std::string, std::string>>& fields) {
  if (g_quiet && level == "info") return;
  std::string line = "level=" + level;
  for (const auto& [k, v] : fields) {
    const bool quote = v.empty() || v.find_first_of(" \t\"=") != std::string::npos;
    std::string val = v;
    if (quote) {
      std::string esc;
      for (char c : v) {
        if (c == '"' || c == '\\') esc += '\\';
        esc += c;
      }
      val = "\"" + esc + "\"";
    }
    line += " " + k + "=" + val;
  }
  std::cerr << line << "\n";
}

void log_info(const std::string& event, std::vector<std::pair<std::string, std::string>> fields = {}) {
  fields.insert(fields.begin(), {"event", event});
  log_line("info", fields);
}

/// Progress strings from run_experiment are already key=value.
void log_raw(const std::string& kv) {
  if (!g_quiet) std::cerr << "level=info " << kv << "\n";
}

std::string num(double v) {
  std::ostringstream o;
  o.precision(10);
  o << v;
  return o.str();
}

/// Settings shared by every subcommand: config file, then flags.
struct Settings {
  std::string configPath;
  std::vector<std::pair<std::string, std::string>> overrides;  // set_option keys, in flag order
  std::optional<int> scale;
  std::optional<std::uint64_t> seed;
  unsigned threads = 0;

  void bind(CLI::App& app, bool withTraining) {
    app.set_help_flag("--help", "Print this help message and exit");  // --h is the bandwidth flag
    app.fallthrough();
    app.add_option("--config", configPath, "Settings file ([recon]/[train] key = value sections)")
        ->check(CLI::ExistingFile);
    app.add_option("--scale", scale, "Upscaling factor (2, 3 or 4)")->check(CLI::IsMember({2, 3, 4}));
    app.add_option("--seed", seed, "Run seed");
    app.add_option("--threads", threads, "Cap on worker threads (0 = all cores)");
    auto flag = [&](const std::string& name, const std::string& key, const std::string& help) {
      app.add_option_function<std::string>(
          name, [this, key](const std::string& v) { overrides.emplace_back(key, v); }, help);
    };
    flag("--patch-size", "patch_size", "Reconstruction patch size");
    flag("--overlap", "overlap", "Patch overlap in pixels");
    flag("--lambda", "lambda", "Sparsity weight");
    flag("--h", "h", "Similarity decay bandwidth");
    flag("--nmax", "nmax", "Maximum similar blocks per patch");
    flag("--t1", "t1", "Smooth/texture threshold");
    flag("--t2", "t2", "Texture/edge threshold");
    flag("--sampling-rate", "sampling_rate", "Classifier measurement rate");
    flag("--feature-gain", "feature_gain", "Classifier feature gain");
    flag("--solver", "solver", "Coding solver: ista or omp");
    flag("--ibp-iterations", "ibp_iterations", "Back-projection iterations");
    flag("--blur-sigma", "blur_sigma", "Degradation blur sigma (0 = scale default)");
    if (withTraining) {
      flag("--atoms", "atoms", "Atoms per dictionary");
      flag("--sparsity", "sparsity", "Training sparsity");
      flag("--iterations", "iterations", "Training iterations");
      flag("--per-class-cap", "per_class_cap", "Training samples kept per class");
      flag("--sample-stride", "sample_stride", "Training patch stride");
      flag("--feature", "feature", "LR feature: gradient or identity");
    }
  }

  cssr::ExperimentConfig resolve() const {
    cssr::ExperimentConfig cfg;
    if (!configPath.empty()) cfg = cssr::load_experiment(configPath);
    for (const auto& [k, v] : overrides) cssr::set_option(cfg, k, v);
    if (scale) cfg.recon.scale = *scale;
    if (seed) cfg.seed = *seed;
    cfg.recon.seed = cfg.seed;
    cssr::set_max_threads(threads);
    return cfg;
  }
};

void echo_config(const cssr::ExperimentConfig& cfg, const std::string& method) {
  std::vector<std::pair<std::string, std::string>> fields;
  std::istringstream in(cssr::canonical_config(cfg, cssr::Method::Proposed, cfg.recon.scale));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    std::string key = line.substr(0, eq);
    std::string value = line.substr(eq + 1);
    if (key == "method") value = method;
    fields.emplace_back(std::move(key), std::move(value));
  }
  fields.emplace_back("threads", std::to_string(cssr::max_threads()));
  log_info("config", fields);
}

cssr::Image load_input(const std::string& source) { return cssr::load_source(source, fs::current_path()); }

fs::path dictionary_path(const fs::path& dir, const std::string& name) { return dir / (name + ".dict"); }

std::shared_ptr<const cssr::DictionaryPair> load_dictionary_file(const fs::path& path) {
  if (!fs::exists(path)) throw cssr::DataError("dictionary not found: " + path.string());
  return std::make_shared<const cssr::DictionaryPair>(cssr::load_dictionary(path));
}

void write_json(const fs::path& path, const json& j) { cssr::atomic_write(path, j.dump(2) + "\n"); }

// --- train -------------------------------------------------------------------------

struct TrainArgs {
  Settings settings;
  std::vector<std::string> images;
  std::string outDir = ".";
  bool singleDict = false;
};

int cmd_train(const TrainArgs& a) {
  cssr::ExperimentConfig cfg = a.settings.resolve();
  cfg.trainImages = a.images;
  cfg.recon.validate();
  echo_config(cfg, "train");
  std::vector<cssr::Image> hr;
  for (const auto& s : a.images) hr.push_back(load_input(s));
  const fs::path out(a.outDir);
  fs::create_directories(out);

  const int scale = cfg.recon.scale;
  const cssr::TrainedDictionaries dicts = cssr::train_dictionaries(hr, cfg, scale, true, a.singleDict);
  json report;
  report["scale"] = scale;
  report["atoms"] = cfg.training.atoms;
  report["sparsity"] = cfg.training.sparsity;
  report["iterations"] = cfg.training.iterations;
  report["seed"] = cfg.seed;
  report["images"] = a.images;
  auto describe = [](const cssr::DictionaryPair& d, const fs::path& file) {
    json j;
    j["file"] = file.filename().string();
    j["samples"] = d.meta.sampleCount;
    j["final_residual"] = d.meta.objectiveTrace.empty() ? 0.0 : d.meta.objectiveTrace.back();
    j["residual_trace"] = d.meta.objectiveTrace;
    return j;
  };
  for (cssr::PatchClass c : cssr::kAllClasses) {
    const std::string name(cssr::to_string(c));
    const fs::path file = dictionary_path(out, name);
    cssr::save_dictionary(*dicts.classified.get(c), file);
    json j = describe(*dicts.classified.get(c), file);
    j["class_samples"] = dicts.sampleCounts.at(c);
    report["classes"][name] = j;
    log_info("dictionary", {{"class", name},
                            {"samples", std::to_string(dicts.sampleCounts.at(c))},
                            {"final_residual", num(j["final_residual"].get<double>())},
                            {"path", file.string()}});
  }
  if (dicts.pooled) {
    const fs::path file = dictionary_path(out, "pooled");
    cssr::save_dictionary(*dicts.pooled, file);
    report["pooled"] = describe(*dicts.pooled, file);
    log_info("dictionary", {{"class", "pooled"}, {"path", file.string()}});
  }
  write_json(out / "training_report.json", report);
  return kExitOk;
}

// --- sr ----------------------------------------------------------------------------

struct SrArgs {
  Settings settings;
  std::string input;
  std::string output;
  std::string dictDir = ".";
  std::string report;
  std::string classMap;
  bool noNonlocal = false;
  bool singleDict = false;
};

int cmd_sr(const SrArgs& a) {
  cssr::ExperimentConfig cfg = a.settings.resolve();
  if (a.noNonlocal) cfg.recon.search.nMax = 0;
  const std::string method = a.singleDict ? (a.noNonlocal ? "sparse-coding" : "proposed-single-dict")
                                          : (a.noNonlocal ? "proposed-no-nonlocal" : "proposed");
  cfg.recon.validate();
  echo_config(cfg, method);
  const cssr::Image lr = load_input(a.input);
  const fs::path dir(a.dictDir);
  cssr::DictionarySet dicts;
  if (a.singleDict) {
    dicts = cssr::DictionarySet::uniform(load_dictionary_file(dictionary_path(dir, "pooled")));
  } else {
    for (cssr::PatchClass c : cssr::kAllClasses)
      dicts.set(c, load_dictionary_file(dictionary_path(dir, std::string(cssr::to_string(c)))));
  }
  const cssr::MeasurementMatrix phi = cssr::classifier_matrix(cfg.recon.classifier);
  for (const auto& w : cfg.recon.classifier.warnings()) log_line("warn", {{"event", "config"}, {"message", w}});
  log_info("sr_start", {{"input", a.input}, {"width", std::to_string(lr.width())},
                        {"height", std::to_string(lr.height())}});
  const cssr::ReconResult rr = cssr::super_resolve(lr, dicts, cfg.recon, phi);
  cssr::write_image(a.output, rr.image);

  const cssr::ReconReport& r = rr.report;
  json j;
  j["input"] = a.input;
  j["output"] = a.output;
  j["method"] = method;
  j["scale"] = cfg.recon.scale;
  j["width"] = rr.image.width();
  j["height"] = rr.image.height();
  j["seed"] = cfg.seed;
  j["patches"] = r.patches;
  for (cssr::PatchClass c : cssr::kAllClasses) j["patch_classes"][std::string(cssr::to_string(c))] = r.patchClasses[c];
  j["mean_similar_set_size"] = r.meanSimilarSetSize;
  j["objective_increases"] = r.objectiveIncreases;
  j["ibp_residuals"] = r.ibpResiduals;
  j["ibp_violations"] = r.ibpViolations;
  j["clamped_pixels"] = r.clampedPixels;
  const fs::path reportPath = a.report.empty() ? fs::path(a.output + ".json") : fs::path(a.report);
  write_json(reportPath, j);

  if (!a.classMap.empty()) {
    const cssr::Image mid = cssr::upsample_to(lr, cfg.recon.scale, rr.image.width(), rr.image.height());
    cssr::write_image(a.classMap, cssr::class_map(mid, cfg.recon.classifier, phi).levels);
  }
  log_info("sr_done", {{"output", a.output},
                       {"patches", std::to_string(r.patches)},
                       {"smooth", std::to_string(r.patchClasses[cssr::PatchClass::Smooth])},
                       {"texture", std::to_string(r.patchClasses[cssr::PatchClass::Texture])},
                       {"edge", std::to_string(r.patchClasses[cssr::PatchClass::Edge])},
                       {"mean_similar", num(r.meanSimilarSetSize)},
                       {"ibp_violations", std::to_string(r.ibpViolations)},
                       {"clamped", std::to_string(r.clampedPixels)}});
  return kExitOk;
}

// --- classify ----------------------------------------------------------------------

struct ClassifyArgs {
  Settings settings;
  std::string input;
  std::string output;
};

int cmd_classify(const ClassifyArgs& a) {
  cssr::ExperimentConfig cfg = a.settings.resolve();
  cfg.recon.classifier.validate();
  echo_config(cfg, "classify");
  const cssr::Image img = load_input(a.input);
  const cssr::MeasurementMatrix phi = cssr::classifier_matrix(cfg.recon.classifier);
  const cssr::ClassMap map = cssr::class_map(img, cfg.recon.classifier, phi);
  if (!a.output.empty()) cssr::write_image(a.output, map.levels);
  log_info("classify", {{"input", a.input},
                        {"blocks", std::to_string(map.counts.total())},
                        {"smooth", std::to_string(map.counts[cssr::PatchClass::Smooth])},
                        {"texture", std::to_string(map.counts[cssr::PatchClass::Texture])},
                        {"edge", std::to_string(map.counts[cssr::PatchClass::Edge])}});
  return kExitOk;
}

// --- eval --------------------------------------------------------------------------

struct EvalArgs {
  Settings settings;
  std::string manifest;
  std::string csv;
  std::string table;
  std::vector<std::string> sweeps;
  std::string imageDir;
};

int cmd_eval(const EvalArgs& a) {
  cssr::ExperimentConfig base = cssr::load_experiment(a.manifest);
  for (const auto& [k, v] : a.settings.overrides) cssr::set_option(base, k, v);
  if (a.settings.scale) base.scales = {*a.settings.scale};
  if (a.settings.seed) base.seed = *a.settings.seed;
  cssr::set_max_threads(a.settings.threads);
  if (base.testImages.empty()) throw cssr::ConfigError("manifest lists no test images");
  echo_config(base, "eval");

  // Each sweep item is key=v1,v2,...; runs are the cartesian product.
  std::vector<std::vector<std::pair<std::string, std::string>>> runs{{}};
  for (const auto& s : a.sweeps) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw cssr::ConfigError("--sweep expects key=v1,v2,...");
    const std::string key = cssr::trim(s.substr(0, eq));
    const auto values = cssr::split_list(s.substr(eq + 1));
    if (values.empty()) throw cssr::ConfigError("--sweep " + key + " lists no values");
    std::vector<std::vector<std::pair<std::string, std::string>>> next;
    for (const auto& run : runs)
      for (const auto& v : values) {
        auto r = run;
        r.emplace_back(key, v);
        next.push_back(std::move(r));
      }
    runs = std::move(next);
  }

  std::vector<cssr::CellResult> cells;
  std::vector<cssr::AcceptanceCheck> checks;
  for (const auto& run : runs) {
    cssr::ExperimentConfig cfg = base;
    std::string suffix;
    for (const auto& [k, v] : run) {
      cssr::set_option(cfg, k, v);
      suffix += (suffix.empty() ? "" : ",") + k + "=" + v;
    }
    if (!suffix.empty()) log_info("sweep", {{"setting", suffix}});
    cssr::ExperimentResult res = cssr::run_experiment(cfg, log_raw);
    for (auto& c : res.cells) {
      if (!suffix.empty()) c.method += "[" + suffix + "]";
      if (!a.imageDir.empty()) {
        fs::create_directories(a.imageDir);
        std::string stem = c.image + "_x" + std::to_string(c.scale) + "_" + c.method + ".png";
        for (char& ch : stem)
          if (ch == ':' || ch == '/' || ch == '[' || ch == ']' || ch == ',' || ch == '=') ch = '_';
        cssr::write_image(fs::path(a.imageDir) / stem, c.output);
      }
      cells.push_back(std::move(c));
    }
    for (auto& c : res.checks) {
      if (!suffix.empty()) c.name += "[" + suffix + "]";
      checks.push_back(std::move(c));
    }
  }

  const std::string csv = cssr::results_csv(cells);
  const std::string table = cssr::results_table(cells);
  if (!a.csv.empty()) cssr::atomic_write(a.csv, csv);
  if (!a.table.empty()) cssr::atomic_write(a.table, table);
  if (a.csv.empty() && a.table.empty()) std::cout << csv;

  bool ok = true;
  for (const auto& c : checks) {
    log_line(c.passed ? "info" : "error",
             {{"event", "acceptance"}, {"check", c.name}, {"result", c.passed ? "pass" : "fail"}, {"detail", c.detail}});
    ok = ok && c.passed;
  }
  return ok ? kExitOk : kExitAcceptance;
}

// --- sweep -------------------------------------------------------------------------

struct SweepArgs {
  Settings settings;
  double lo = 1.0;
  double hi = 1e4;
  int perDecade = 8;
  int size = 128;
  std::uint64_t phantomSeed = 1;
  std::string json;
};

int cmd_sweep(const SweepArgs& a) {
  cssr::ExperimentConfig cfg = a.settings.resolve();
  cssr::ClassifierConfig cc = cfg.recon.classifier;
  cc.featureGain = 1.0;
  cc.validate();
  echo_config(cfg, "sweep");
  const cssr::Phantom ph = cssr::make_phantom(a.size, a.size, cssr::PhantomKind::SheppLike, a.phantomSeed);
  const cssr::MeasurementMatrix phi = cssr::classifier_matrix(cc);
  const cssr::LabeledBlocks blocks = cssr::labeled_blocks(ph, cc, phi);
  const auto scores = cssr::sweep_feature_gain(blocks, cc, cssr::gain_grid(a.lo, a.hi, a.perDecade));

  json j;
  std::printf("%12s  %10s  %13s  %9s  %s\n", "gain", "bg_smooth", "boundary_edge", "bal_acc", "targets");
  for (const auto& s : scores) {
    std::printf("%12.4f  %10.4f  %13s  %9.4f  %s\n", s.gain, s.backgroundSmooth, s.boundaryMajorityEdge ? "yes" : "no",
                s.balancedAccuracy, s.meets_targets() ? "met" : "-");
    j["grid"].push_back({{"gain", s.gain},
                         {"background_smooth", s.backgroundSmooth},
                         {"boundary_majority_edge", s.boundaryMajorityEdge},
                         {"balanced_accuracy", s.balancedAccuracy}});
  }
  const cssr::GainScore best = cssr::select_feature_gain(scores);
  std::printf("selected gain %.17g\n", best.gain);
  j["selected_gain"] = best.gain;
  if (!a.json.empty()) write_json(a.json, j);
  log_info("sweep_done", {{"selected_gain", num(best.gain)}});
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Classified sparse-coding super-resolution with nonlocal regularization"};
  app.require_subcommand(1);
  app.add_flag("-q,--quiet", g_quiet, "Suppress informational log records");

  TrainArgs train;
  auto* trainCmd = app.add_subcommand("train", "Learn one coupled dictionary per patch class");
  train.settings.bind(*trainCmd, true);
  trainCmd->add_option("--hr", train.images, "HR training images (PNG/PGM or phantom:<kind>:<W>x<H>:<seed>)")
      ->required();
  trainCmd->add_option("--out-dir", train.outDir, "Directory for the dictionary files and report");
  trainCmd->add_flag("--single-dict", train.singleDict, "Also train a pooled dictionary");

  SrArgs sr;
  auto* srCmd = app.add_subcommand("sr", "Super-resolve one LR image");
  sr.settings.bind(*srCmd, false);
  srCmd->add_option("--input,-i", sr.input, "LR image")->required();
  srCmd->add_option("--output,-o", sr.output, "HR output image")->required();
  srCmd->add_option("--dict-dir", sr.dictDir, "Directory holding smooth/texture/edge(.dict)");
  srCmd->add_option("--report", sr.report, "Sidecar report path (default <output>.json)");
  srCmd->add_option("--dump-classmap", sr.classMap, "Write the three-level class map of the upsampled image");
  srCmd->add_flag("--no-nonlocal", sr.noNonlocal, "Disable the self-similarity term");
  srCmd->add_flag("--single-dict", sr.singleDict, "Use pooled.dict for every class");

  ClassifyArgs cls;
  auto* clsCmd = app.add_subcommand("classify", "Classify an image block by block");
  cls.settings.bind(*clsCmd, false);
  clsCmd->add_option("--input,-i", cls.input, "Image")->required();
  clsCmd->add_option("--output,-o", cls.output, "Class map image (0 smooth, 128 texture, 255 edge)");

  EvalArgs ev;
  auto* evalCmd = app.add_subcommand("eval", "Run an experiment manifest");
  ev.settings.bind(*evalCmd, true);
  evalCmd->add_option("manifest", ev.manifest, "Experiment manifest")->required();
  evalCmd->add_option("--csv", ev.csv, "CSV output path");
  evalCmd->add_option("--table", ev.table, "Aligned text table path");
  evalCmd->add_option("--sweep", ev.sweeps, "Setting sweep, e.g. lambda=0.01,0.1,0.5");
  evalCmd->add_option("--image-dir", ev.imageDir, "Directory for reconstructed images");

  SweepArgs sw;
  auto* sweepCmd = app.add_subcommand("sweep", "Calibrate the classifier feature gain on the labeled phantom");
  sw.settings.bind(*sweepCmd, false);
  sweepCmd->add_option("--lo", sw.lo, "Smallest gain");
  sweepCmd->add_option("--hi", sw.hi, "Largest gain");
  sweepCmd->add_option("--per-decade", sw.perDecade, "Grid points per decade");
  sweepCmd->add_option("--size", sw.size, "Phantom side length");
  sweepCmd->add_option("--phantom-seed", sw.phantomSeed, "Phantom seed");
  sweepCmd->add_option("--json", sw.json, "Write the sweep as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*trainCmd) return cmd_train(train);
    if (*srCmd) return cmd_sr(sr);
    if (*clsCmd) return cmd_classify(cls);
    if (*evalCmd) return cmd_eval(ev);
    if (*sweepCmd) return cmd_sweep(sw);
  } catch (const cssr::InsufficientDataError& e) {
    log_line("error", {{"event", "insufficient_data"},
                       {"class", e.subject()},
                       {"have", std::to_string(e.have())},
                       {"needed", std::to_string(e.needed())},
                       {"message", e.what()}});
    return kExitData;
  } catch (const cssr::ConfigError& e) {
    log_line("error", {{"event", "config"}, {"message", e.what()}});
    return kExitUsage;
  } catch (const cssr::InvalidArgument& e) {
    log_line("error", {{"event", "usage"}, {"message", e.what()}});
    return kExitUsage;
  } catch (const std::exception& e) {
    log_line("error", {{"event", "data"}, {"message", e.what()}});
    return kExitData;
  }
  return kExitUsage;
}
