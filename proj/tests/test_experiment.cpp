#include <gtest/gtest.h>
#include <zlib.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cssr/cssr.hpp"

namespace cssr {
namespace {

namespace fs = std::filesystem;

std::uint32_t pixel_crc(const Image& img) {
  std::vector<unsigned char> bytes;
  for (double v : img.pixels()) bytes.push_back(static_cast<unsigned char>(std::lround(v)));
  return static_cast<std::uint32_t>(crc32(0L, bytes.data(), static_cast<uInt>(bytes.size())));
}

fs::path scratch_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("cssr_test_experiment_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::vector<std::string> lines_of(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) out.push_back(line);
  return out;
}

// --- phantoms ---

TEST(Phantom, FixedChecksums) {
  EXPECT_EQ(pixel_crc(make_phantom(64, 64, PhantomKind::SheppLike, 42).image), 0x868fdff1u);
  EXPECT_EQ(pixel_crc(make_phantom(64, 64, PhantomKind::Disks, 42).image), 0x6da06fb1u);
  EXPECT_EQ(pixel_crc(make_phantom(64, 64, PhantomKind::CheckerEdge, 42).image), 0x259540ffu);
}

TEST(Phantom, SeedChangesTheImage) {
  EXPECT_NE(make_phantom(64, 64, PhantomKind::SheppLike, 1).image, make_phantom(64, 64, PhantomKind::SheppLike, 2).image);
}

TEST(Phantom, LabelsCoverEveryPixel) {
  for (auto kind : {PhantomKind::SheppLike, PhantomKind::Disks, PhantomKind::CheckerEdge}) {
    const Phantom ph = make_phantom(50, 40, kind, 3);
    EXPECT_EQ(ph.image.width(), 50);
    EXPECT_EQ(ph.image.height(), 40);
    ASSERT_EQ(ph.labels.size(), 2000u);
    for (double v : ph.image.pixels()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 255.0);
    }
  }
}

TEST(Phantom, KindNames) {
  for (auto kind : {PhantomKind::SheppLike, PhantomKind::Disks, PhantomKind::CheckerEdge})
    EXPECT_EQ(parse_phantom_kind(to_string(kind)), kind);
  EXPECT_FALSE(parse_phantom_kind("mandrill").has_value());
}

// --- manifest text ---

TEST(Manifest, SectionsCommentsAndRepeatedKeys) {
  const Manifest m = parse_manifest(
      "# header\n[train]\nimage = a.png ; trailing\nimage=b.png\n\n  atoms = 64  \n[test]\nimage = c.png\n");
  EXPECT_EQ(m.all("train", "image"), (std::vector<std::string>{"a.png", "b.png"}));
  EXPECT_EQ(m.all("train", "atoms"), (std::vector<std::string>{"64"}));
  EXPECT_EQ(m.all("test", "image"), (std::vector<std::string>{"c.png"}));
  EXPECT_TRUE(m.all("recon", "h").empty());
}

TEST(Manifest, MalformedLines) {
  EXPECT_THROW(parse_manifest("image = x.png\n"), ConfigError);
  EXPECT_THROW(parse_manifest("[train\n"), ConfigError);
  EXPECT_THROW(parse_manifest("[train]\nno equals sign\n"), ConfigError);
}

TEST(Manifest, SuiteFileBindsEverySetting) {
  const ExperimentConfig cfg = load_experiment(CSSR_SUITE_MANIFEST);
  EXPECT_EQ(cfg.name, "phantom-suite");
  EXPECT_EQ(cfg.dataset, "phantoms");
  EXPECT_EQ(cfg.seed, 1u);
  EXPECT_EQ(cfg.methods, (std::vector<Method>{Method::Bicubic, Method::Proposed, Method::ProposedNoNonlocal}));
  EXPECT_EQ(cfg.scales, (std::vector<int>{2, 4}));
  EXPECT_FALSE(cfg.timing);
  EXPECT_EQ(cfg.trainImages.size(), 6u);
  EXPECT_EQ(cfg.testImages.size(), 5u);
  EXPECT_EQ(cfg.training.atoms, 128);
  EXPECT_EQ(cfg.training.iterations, 10);
  EXPECT_EQ(cfg.trainingSet.perClassCap, 6000u);
  EXPECT_EQ(cfg.recon.search.h, 10.0);
  EXPECT_EQ(cfg.acceptance.at("min_gain_db.2"), 1.0);
  EXPECT_EQ(cfg.acceptance.size(), 5u);
}

TEST(Manifest, UnknownKeysAndValues) {
  EXPECT_THROW(experiment_from_manifest(parse_manifest("[extra]\nx = 1\n"), "."), ConfigError);
  EXPECT_THROW(experiment_from_manifest(parse_manifest("[experiment]\ncolour = red\n"), "."), ConfigError);
  EXPECT_THROW(experiment_from_manifest(parse_manifest("[experiment]\nmethods = bicubic, srcnn\n"), "."), ConfigError);
  EXPECT_THROW(experiment_from_manifest(parse_manifest("[experiment]\ntiming = maybe\n"), "."), ConfigError);
  EXPECT_THROW(experiment_from_manifest(parse_manifest("[recon]\nlambda = much\n"), "."), ConfigError);
  EXPECT_THROW(experiment_from_manifest(parse_manifest("[recon]\nsolver = lars\n"), "."), ConfigError);
  EXPECT_THROW(experiment_from_manifest(parse_manifest("[test]\natoms = 3\n"), "."), ConfigError);
}

TEST(Settings, EachKeyReachesItsField) {
  ExperimentConfig cfg;
  set_option(cfg, "lambda", "0.25");
  set_option(cfg, "nmax", "4");
  set_option(cfg, "patch_size", "7");
  set_option(cfg, "solver", "omp");
  set_option(cfg, "t1", "1e5");
  set_option(cfg, "feature", "identity");
  set_option(cfg, "per_class_cap", "99");
  EXPECT_EQ(cfg.recon.lambda, 0.25);
  EXPECT_EQ(cfg.recon.search.nMax, 4);
  EXPECT_EQ(cfg.recon.patchSize, 7);
  EXPECT_EQ(cfg.trainingSet.patchSize, 7);
  EXPECT_EQ(cfg.recon.solver, SolverKind::Omp);
  EXPECT_EQ(cfg.recon.classifier.t1, 1e5);
  EXPECT_EQ(cfg.trainingSet.featureMode, FeatureMode::Identity);
  EXPECT_EQ(cfg.trainingSet.perClassCap, 99u);
  EXPECT_THROW(set_option(cfg, "warp_factor", "9"), ConfigError);
}

// --- configuration hash ---

TEST(ConfigHash, IsTheStandardCrc32) {
  EXPECT_EQ(config_hash("123456789"), 0xCBF43926u);
  EXPECT_EQ(config_hash(""), 0u);
}

TEST(ConfigHash, TracksEveryOutputAffectingSetting) {
  const ExperimentConfig base;
  const std::uint32_t h0 = config_hash(canonical_config(base, Method::Proposed, 2));
  EXPECT_EQ(h0, config_hash(canonical_config(base, Method::Proposed, 2)));
  EXPECT_NE(h0, config_hash(canonical_config(base, Method::Proposed, 4)));
  EXPECT_NE(h0, config_hash(canonical_config(base, Method::Bicubic, 2)));
  for (const auto& [key, value] : std::vector<std::pair<std::string, std::string>>{
           {"lambda", "0.2"}, {"h", "10"}, {"nmax", "3"}, {"overlap", "3"}, {"atoms", "64"}, {"t2", "1e8"}}) {
    ExperimentConfig changed;
    set_option(changed, key, value);
    EXPECT_NE(h0, config_hash(canonical_config(changed, Method::Proposed, 2))) << key;
  }
  ExperimentConfig trained = base;
  trained.trainImages = {"phantom:disks:64x64:1"};
  EXPECT_NE(h0, config_hash(canonical_config(trained, Method::Proposed, 2)));
}

// --- image sources ---

TEST(Sources, PhantomSpecifier) {
  const Image img = load_source("phantom:disks:40x30:9", ".");
  EXPECT_EQ(img, make_phantom(40, 30, PhantomKind::Disks, 9).image);
  EXPECT_EQ(source_label("phantom:disks:40x30:9"), "disks:40x30:9");
  EXPECT_THROW(load_source("phantom:disks:40x30", "."), ConfigError);
  EXPECT_THROW(load_source("phantom:blobs:40x30:1", "."), ConfigError);
  EXPECT_THROW(load_source("phantom:disks:40by30:1", "."), ConfigError);
}

TEST(Sources, FilesResolveAgainstTheManifestDirectory) {
  const fs::path dir = scratch_dir("sources");
  const Image img = make_phantom(20, 20, PhantomKind::Disks, 1).image;
  write_png(dir / "a.png", img);
  EXPECT_EQ(pixel_crc(load_source("a.png", dir)), pixel_crc(img));
  EXPECT_EQ(source_label("sub/a.png"), "a.png");
  EXPECT_EQ(source_key("a.png", dir), source_key((dir / "a.png").string(), "/elsewhere"));
  EXPECT_THROW(load_source("missing.png", dir), DataError);
}

TEST(Sources, CropToMultiple) {
  const Image img = make_phantom(13, 10, PhantomKind::Disks, 1).image;
  const Image out = crop_to_multiple(img, 4);
  EXPECT_EQ(out.width(), 12);
  EXPECT_EQ(out.height(), 8);
  for (int r = 0; r < 8; ++r)
    for (int c = 0; c < 12; ++c) EXPECT_EQ(out(r, c), img(r, c));
  EXPECT_EQ(crop_to_multiple(img, 1), img);
  EXPECT_THROW(crop_to_multiple(Image(3, 3), 4), InvalidArgument);
}

// --- running ---

ExperimentConfig bicubic_only() {
  ExperimentConfig cfg;
  cfg.methods = {Method::Bicubic};
  cfg.timing = false;
  cfg.testImages = {"phantom:shepp-like:48x48:1"};
  return cfg;
}

TEST(Run, OneImageBicubicGivesOneRow) {
  const ExperimentResult r = run_experiment(bicubic_only());
  ASSERT_EQ(r.cells.size(), 1u);
  const CellResult& cell = r.cells[0];
  EXPECT_EQ(cell.method, "bicubic");
  EXPECT_EQ(cell.image, "shepp-like:48x48:1");
  EXPECT_EQ(cell.metrics.runtimeMs, 0.0);
  EXPECT_FALSE(cell.report.has_value());
  const Image hr = make_phantom(48, 48, PhantomKind::SheppLike, 1).image;
  const DegradationModel model = DegradationModel::gaussian(2);
  Image expected = upsample_to(degrade(hr, model), 2, 48, 48);
  clamp_to_range(expected);
  EXPECT_EQ(cell.output, expected);
  EXPECT_EQ(cell.metrics.mse, mse(expected, hr));
  EXPECT_NEAR(psnr_from_mse(cell.metrics.mse), cell.metrics.psnr, 1e-9);
  EXPECT_TRUE(r.checks.empty());
  EXPECT_TRUE(r.accepted());
}

TEST(Run, ScalesCropToAMultiple) {
  ExperimentConfig cfg = bicubic_only();
  cfg.testImages = {"phantom:disks:50x47:2"};
  cfg.scales = {3};
  const ExperimentResult r = run_experiment(cfg);
  EXPECT_EQ(r.cells[0].output.width(), 48);
  EXPECT_EQ(r.cells[0].output.height(), 45);
}

TEST(Run, RejectsTrainTestOverlap) {
  ExperimentConfig cfg = bicubic_only();
  cfg.trainImages = {"phantom:shepp-like:48x48:1"};
  EXPECT_THROW(run_experiment(cfg), ConfigError);

  const fs::path dir = scratch_dir("overlap");
  write_png(dir / "x.png", make_phantom(16, 16, PhantomKind::Disks, 1).image);
  fs::create_directories(dir / "sub");
  cfg.baseDir = dir;
  cfg.trainImages = {"x.png"};
  cfg.testImages = {"sub/../x.png"};
  EXPECT_THROW(run_experiment(cfg), ConfigError);
}

TEST(Run, MissingInputsAndMethods) {
  ExperimentConfig cfg = bicubic_only();
  cfg.testImages = {"nowhere.png"};
  cfg.baseDir = scratch_dir("missing");
  EXPECT_THROW(run_experiment(cfg), DataError);
  cfg = bicubic_only();
  cfg.testImages.clear();
  EXPECT_THROW(run_experiment(cfg), ConfigError);
  cfg = bicubic_only();
  cfg.methods = {Method::Proposed};
  EXPECT_THROW(run_experiment(cfg), ConfigError);
}

TEST(Run, LearnedMethodsOnASmallSuite) {
  ExperimentConfig cfg;
  cfg.dataset = "mini";
  cfg.timing = false;
  cfg.methods = {Method::Bicubic, Method::Proposed, Method::ProposedNoNonlocal, Method::ProposedSingleDict};
  cfg.trainImages = {"phantom:shepp-like:96x96:70", "phantom:shepp-like:96x96:71", "phantom:checker-edge:96x96:80"};
  cfg.testImages = {"phantom:shepp-like:48x48:5"};
  cfg.training.atoms = 32;
  cfg.training.iterations = 3;
  cfg.trainingSet.perClassCap = 2000;
  cfg.acceptance = {{"min_gain_db.2", 0.0}, {"max_ibp_violations", 1.0}, {"ablation_tolerance_db", 0.05}};
  std::vector<std::string> events;
  const ExperimentResult r = run_experiment(cfg, [&](const std::string& e) { events.push_back(e); });
  ASSERT_EQ(r.cells.size(), 4u);
  EXPECT_EQ(events.size(), 5u);
  EXPECT_EQ(events[0], "event=train scale=2");
  for (const CellResult& c : r.cells) {
    EXPECT_EQ(c.report.has_value(), c.method != "bicubic") << c.method;
    EXPECT_EQ(c.metrics.runtimeMs, 0.0);
  }
  EXPECT_GT(r.cells[1].metrics.psnr, r.cells[0].metrics.psnr);
  EXPECT_EQ(r.checks.size(), 3u);
  for (const auto& check : r.checks) EXPECT_FALSE(check.detail.empty()) << check.name;

  const ExperimentResult again = run_experiment(cfg);
  for (std::size_t i = 0; i < r.cells.size(); ++i) EXPECT_EQ(r.cells[i].output, again.cells[i].output);
}

// --- reports ---

CellResult cell(std::string dataset, int scale, std::string method, double psnr, double ssim) {
  CellResult c;
  c.dataset = std::move(dataset);
  c.image = "img";
  c.scale = scale;
  c.method = std::move(method);
  c.metrics.psnr = psnr;
  c.metrics.ssim = ssim;
  c.metrics.mse = 65025.0 / std::pow(10.0, psnr / 10.0);
  c.seed = 7;
  c.configHash = 0xabcdef01u;
  return c;
}

TEST(Reports, CsvSchemaAndRows) {
  const std::vector<CellResult> cells{cell("d", 2, "bicubic", 30.0, 0.9), cell("d", 2, "proposed", 32.5, 0.95)};
  const auto lines = lines_of(results_csv(cells));
  ASSERT_EQ(lines.size(), 3u);
  EXPECT_EQ(lines[0], "dataset,image,scale,method,psnr_db,ssim,mse,runtime_ms,seed,config_hash");
  EXPECT_EQ(lines[1], "d,img,2,bicubic,30.000000,0.900000,65.025000,0.0,7,abcdef01");
  EXPECT_EQ(lines[2].substr(0, 35), "d,img,2,proposed,32.500000,0.950000");
}

TEST(Reports, MeansPerDatasetScaleAndMethod) {
  const std::vector<CellResult> cells{cell("d", 2, "bicubic", 30.0, 0.8), cell("d", 2, "bicubic", 32.0, 0.9),
                                      cell("d", 4, "bicubic", 25.0, 0.7)};
  const auto means = method_means(cells);
  ASSERT_EQ(means.size(), 2u);
  EXPECT_EQ(means[0].first, std::make_tuple(std::string("d"), 2, std::string("bicubic")));
  EXPECT_DOUBLE_EQ(means[0].second.psnr, 31.0);
  EXPECT_DOUBLE_EQ(means[0].second.ssim, 0.85);
  EXPECT_EQ(means[0].second.count, 2);
  EXPECT_EQ(means[1].second.count, 1);
}

TEST(Reports, AlignedTable) {
  const std::vector<CellResult> cells{cell("phantoms", 2, "bicubic", 30.0, 0.9),
                                      cell("phantoms", 2, "proposed", 35.25, 0.95),
                                      cell("phantoms", 4, "bicubic", 24.0, 0.7)};
  const auto lines = lines_of(results_table(cells));
  ASSERT_EQ(lines.size(), 4u);
  EXPECT_EQ(lines[0], "dataset   scale  bicubic PSNR  bicubic SSIM  proposed PSNR  proposed SSIM");
  EXPECT_EQ(lines[1], std::string(lines[0].size(), '-'));
  EXPECT_EQ(lines[2], "phantoms  x2            30.00        0.9000          35.25         0.9500");
  EXPECT_EQ(lines[3], "phantoms  x4            24.00        0.7000              -              -");
}

TEST(Reports, FormatFixed) {
  EXPECT_EQ(format_fixed(1.23456, 3), "1.235");
  EXPECT_EQ(format_fixed(INFINITY, 2), "inf");
  EXPECT_EQ(format_fixed(-INFINITY, 2), "-inf");
}

// --- acceptance evaluation ---

ExperimentConfig acceptance_config(std::map<std::string, double> keys) {
  ExperimentConfig cfg;
  cfg.dataset = "d";
  cfg.scales = {2};
  cfg.acceptance = std::move(keys);
  return cfg;
}

TEST(Acceptance, GainThresholds) {
  const std::vector<CellResult> cells{cell("d", 2, "bicubic", 30.0, 0.90), cell("d", 2, "proposed", 31.0, 0.92)};
  auto checks = evaluate_acceptance(acceptance_config({{"min_gain_db.2", 1.0}, {"min_gain_ssim.2", 0.03}}), cells);
  ASSERT_EQ(checks.size(), 2u);
  EXPECT_TRUE(checks[0].passed) << checks[0].detail;
  EXPECT_FALSE(checks[1].passed) << checks[1].detail;
  checks = evaluate_acceptance(acceptance_config({{"min_gain_db.4", 0.5}}), cells);
  EXPECT_FALSE(checks[0].passed);
  EXPECT_THROW(evaluate_acceptance(acceptance_config({{"min_gain_db", 1.0}}), cells), ConfigError);
  EXPECT_THROW(evaluate_acceptance(acceptance_config({{"max_gain", 1.0}}), cells), ConfigError);
}

TEST(Acceptance, AblationOrderWithinTolerance) {
  std::vector<CellResult> cells{cell("d", 2, "bicubic", 30.0, 0.9), cell("d", 2, "proposed", 32.0, 0.9),
                                cell("d", 2, "proposed-no-nonlocal", 32.04, 0.9)};
  auto checks = evaluate_acceptance(acceptance_config({{"ablation_tolerance_db", 0.05}}), cells);
  ASSERT_EQ(checks.size(), 1u);
  EXPECT_EQ(checks[0].name, "ablation_order.x2");
  EXPECT_TRUE(checks[0].passed);
  cells[2].metrics.psnr = 32.06;
  EXPECT_FALSE(evaluate_acceptance(acceptance_config({{"ablation_tolerance_db.2", 0.05}}), cells)[0].passed);
}

TEST(Acceptance, BackProjectionGuard) {
  std::vector<CellResult> cells{cell("d", 2, "proposed", 32.0, 0.9), cell("d", 2, "proposed", 31.0, 0.9)};
  cells[0].report = ReconReport{};
  cells[0].report->ibpResiduals = {3.0, 2.0, 2.0};
  cells[1].report = ReconReport{};
  cells[1].report->ibpResiduals = {3.0, 1.0};
  cells[1].report->ibpViolations = 1;
  EXPECT_TRUE(evaluate_acceptance(acceptance_config({{"max_ibp_violations", 1.0}}), cells)[0].passed);
  EXPECT_FALSE(evaluate_acceptance(acceptance_config({{"max_ibp_violations", 0.0}}), cells)[0].passed);
  cells[0].report->ibpResiduals = {3.0, 2.0, 2.5};
  EXPECT_FALSE(evaluate_acceptance(acceptance_config({{"max_ibp_violations", 1.0}}), cells)[0].passed);
}

}  // namespace
}  // namespace cssr
