#include <gtest/gtest.h>

#include <cmath>

#include "cssr/cssr.hpp"
#include "support/instances.hpp"
#include "support/oracles.hpp"

namespace cssr {
namespace {

ReconConfig exact_config() {
  ReconConfig cfg;
  cfg.lambda = 1e-10;
  cfg.istaMaxIter = 100000;
  cfg.istaTol = 1e-14;
  return cfg;
}

// --- joint coding ---

TEST(JointCode, SingleAtomLimit) {
  const DictionaryPair d = fixture::random_pair(16, 1);
  const CodingDictionary coder(d);
  const double scale = 7.5;
  const Vector feature = scale * d.dl.col(5);
  const SparseCode sc = joint_sparse_code(feature, PatchClass::Texture, {}, {}, coder, exact_config());
  for (int k = 0; k < 16; ++k) EXPECT_NEAR(sc.coefficients[k], k == 5 ? scale : 0.0, 1e-6 * scale) << k;
  EXPECT_LT(sc.residualNorm, 1e-6 * feature.norm());
}

TEST(JointCode, EmptySimilarSetIsPlainCoding) {
  const DictionaryPair d = fixture::random_pair(32, 2);
  const CodingDictionary coder(d);
  Rng rng(3);
  Vector f(100);
  for (Eigen::Index i = 0; i < f.size(); ++i) f[i] = 40.0 * rng.normal();
  const ReconConfig cfg;
  EXPECT_EQ(joint_sparse_code(f, PatchClass::Texture, {}, {}, coder, cfg).coefficients,
            plain_sparse_code(f, coder, cfg).coefficients);
}

TEST(JointCode, SelfSimilarBlockAgrees) {
  fixture::JointInstance in = fixture::joint_instance(4, 16, 0);
  in.problem.similarTargets = {in.problem.target};
  in.problem.gammas = {1.0};
  JointSolveOptions opt;
  opt.refinementPasses = 5;
  opt.tol = 1e-12;
  opt.maxIter = 5000;
  const JointSolution sol = solve_joint_two_stage(in.problem, opt);
  EXPECT_LT((sol.alpha - sol.similarCodes[0]).lpNorm<Eigen::Infinity>(), 1e-6);
  const Matrix& bh = in.coder->hr_basis();
  EXPECT_LT((bh * (sol.alpha - sol.similarCodes[0])).squaredNorm(), 1e-10);
}

TEST(JointCode, TwoStageMatchesFullJointOracle) {
  JointSolveOptions opt;
  opt.refinementPasses = 10;
  opt.tol = 1e-8;
  opt.maxIter = 2000;
  for (std::uint64_t seed = 10; seed < 15; ++seed) {
    const fixture::JointInstance in = fixture::joint_instance(seed);
    const JointProblem& pb = in.problem;
    const JointSolution sol = solve_joint_two_stage(pb, opt);
    const double value = joint_objective(pb, sol.alpha, sol.similarCodes);
    const auto ref = oracle::joint_oracle(in.coder->lr_basis(), in.coder->hr_basis(), pb.target, pb.similarTargets,
                                          pb.gammas, pb.lambda, 100000);
    EXPECT_LE(std::abs(value - ref.value), 1e-4 * ref.value) << "seed " << seed;
    EXPECT_NEAR(joint_objective(pb, ref.alpha, ref.similar), ref.value, 1e-12 * ref.value);
  }
}

TEST(JointCode, FullJointSolverReachesOracle) {
  const fixture::JointInstance in = fixture::joint_instance(20);
  const JointProblem& pb = in.problem;
  const JointSolution full = solve_joint_full(pb, 200000, 1e-12);
  const auto ref = oracle::joint_oracle(in.coder->lr_basis(), in.coder->hr_basis(), pb.target, pb.similarTargets,
                                        pb.gammas, pb.lambda, 100000);
  EXPECT_LE(std::abs(full.objectiveTrace.back() - ref.value), 1e-6 * ref.value);
}

TEST(JointCode, ObjectiveNeverIncreasesAcrossPasses) {
  for (std::uint64_t seed = 30; seed < 60; ++seed) {
    const fixture::JointInstance in = fixture::joint_instance(seed, 24, 1 + static_cast<int>(seed % 4));
    for (bool accelerated : {true, false}) {
      JointSolveOptions opt;
      opt.refinementPasses = 4;
      opt.accelerated = accelerated;
      const JointSolution sol = solve_joint_two_stage(in.problem, opt);
      ASSERT_EQ(sol.objectiveTrace.size(), 5u);
      EXPECT_EQ(sol.objectiveIncreases, 0) << "seed " << seed;
      for (std::size_t i = 1; i < sol.objectiveTrace.size(); ++i)
        EXPECT_LE(sol.objectiveTrace[i], sol.objectiveTrace[i - 1] * (1.0 + 1e-9)) << "seed " << seed;
    }
  }
}

TEST(JointCode, OmpSolverStaysWithinSparsity) {
  const fixture::JointInstance in = fixture::joint_instance(61, 24, 2);
  JointSolveOptions opt;
  opt.solver = SolverKind::Omp;
  opt.ompSparsity = 3;
  const JointSolution sol = solve_joint_two_stage(in.problem, opt);
  EXPECT_LE(support_of(sol.alpha).size(), 3u);
  for (const Vector& c : sol.similarCodes) EXPECT_LE(support_of(c).size(), 3u);
}

TEST(JointCode, ClassMismatchIsAContractViolation) {
  const DictionaryPair d = fixture::random_pair(16, 5, PatchClass::Edge);
  const CodingDictionary coder(d);
  const Vector f = d.dl.col(0);
  EXPECT_THROW(joint_sparse_code(f, PatchClass::Smooth, {}, {}, coder, ReconConfig{}), ContractViolation);
  EXPECT_NO_THROW(joint_sparse_code(f, PatchClass::Edge, {}, {}, coder, ReconConfig{}));
}

TEST(JointCode, FlatAnchorGetsZeroCode) {
  const DictionaryPair d = fixture::random_pair(16, 6);
  const CodingDictionary coder(d);
  const std::vector<Vector> sim{d.dl.col(1)};
  const std::vector<double> g{1.0};
  const SparseCode sc = joint_sparse_code(Vector::Zero(100), PatchClass::Texture, sim, g, coder, ReconConfig{});
  EXPECT_EQ(sc.coefficients, Vector::Zero(16));
}

// --- synthesis ---

TEST(Synthesis, ZeroCodeIsConstant) {
  const DictionaryPair d = fixture::random_pair(8, 7);
  const Patch p = synthesize_patch(Vector::Zero(8), d, 93.0, 4, 6);
  EXPECT_EQ(p.size, 5);
  EXPECT_EQ(p.row, 4);
  EXPECT_EQ(p.col, 6);
  for (double v : p.values) EXPECT_EQ(v, 93.0);
}

TEST(Synthesis, UnitCodeIsTheAtom) {
  const DictionaryPair d = fixture::random_pair(8, 8);
  Vector e = Vector::Zero(8);
  e[3] = 1.0;
  const Patch p = synthesize_patch(e, d, 10.0);
  for (int i = 0; i < 25; ++i) EXPECT_DOUBLE_EQ(p.values[static_cast<std::size_t>(i)], d.dh(i, 3) + 10.0);
  EXPECT_THROW(synthesize_patch(Vector::Zero(7), d, 0.0), InvalidArgument);
}

TEST(Synthesis, ThreeAtomRoundTrip) {
  DictionaryPair d = fixture::random_pair(16, 9);
  d.dh *= 40.0;
  Vector truth = Vector::Zero(16);
  truth[2] = 1.5;
  truth[9] = -0.8;
  truth[13] = 2.2;
  const double dc = 120.0;
  const Patch target = synthesize_patch(truth, d, dc);
  const SparseCode sc = joint_sparse_code(d.dl * truth, PatchClass::Texture, {}, {}, CodingDictionary(d), exact_config());
  const Patch back = synthesize_patch(sc.coefficients, d, dc);
  for (std::size_t i = 0; i < 25; ++i) EXPECT_NEAR(back.values[i], target.values[i], 1e-6);
}

// --- back-projection ---

Image noise_image(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  Image img(w, h);
  for (double& v : img.pixels()) v = 255.0 * rng.uniform();
  return img;
}

TEST(Ibp, ConsistentInputIsUnchanged) {
  const DegradationModel model = DegradationModel::gaussian(2);
  const Image x = noise_image(32, 32, 10);
  const IbpResult r = ibp_refine(x, degrade(x, model), model, 20, 1.0);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(r.image.pixels()[i], x.pixels()[i], 1e-10);
}

TEST(Ibp, HalvesResidualFromBicubicOnPhantoms) {
  for (auto kind : {PhantomKind::SheppLike, PhantomKind::Disks, PhantomKind::CheckerEdge})
    for (int scale : {2, 3, 4}) {
      const DegradationModel model = DegradationModel::gaussian(scale);
      const Image hr = make_phantom(96, 96, kind, 3).image;
      const Image lr = degrade(hr, model);
      const IbpResult r = ibp_refine(upsample_to(lr, scale, 96, 96), lr, model, 20, 1.0);
      EXPECT_LE(r.residuals.back(), 0.5 * r.residuals.front()) << to_string(kind) << " x" << scale;
      for (std::size_t i = 1; i < r.residuals.size(); ++i) EXPECT_LE(r.residuals[i], r.residuals[i - 1]);
      EXPECT_NEAR(r.residuals.back(), consistency_residual(r.image, lr, model), 1e-9);
    }
}

TEST(Ibp, ZeroStepIsIdentity) {
  const DegradationModel model = DegradationModel::gaussian(3);
  const Image x = noise_image(30, 30, 11);
  const Image y = noise_image(10, 10, 12);
  EXPECT_EQ(ibp_refine(x, y, model, 20, 0.0).image, x);
}

TEST(Ibp, OversizedStepIsStoppedByTheGuard) {
  const DegradationModel model = DegradationModel::gaussian(2);
  const Image x = noise_image(24, 24, 13);
  const IbpResult r = ibp_refine(x, noise_image(12, 12, 14), model, 20, 50.0);
  EXPECT_EQ(r.violations, 1);
  for (std::size_t i = 1; i < r.residuals.size(); ++i) EXPECT_LE(r.residuals[i], r.residuals[i - 1]);
}

TEST(Ibp, ShapeMismatch) {
  const DegradationModel model = DegradationModel::gaussian(2);
  EXPECT_THROW(ibp_refine(Image(20, 20), Image(9, 10), model, 1, 1.0), InvalidArgument);
}

TEST(Clamp, CountsMovedPixels) {
  Image img(3, 1, std::vector<double>{-4.0, 100.0, 260.0});
  EXPECT_EQ(clamp_to_range(img), 2u);
  EXPECT_EQ(img(0, 0), 0.0);
  EXPECT_EQ(img(0, 2), 255.0);
}

// --- full pipeline ---

class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    std::vector<Image> hr;
    for (std::uint64_t s = 0; s < 3; ++s) hr.push_back(make_phantom(96, 96, PhantomKind::SheppLike, 70 + s).image);
    hr.push_back(make_phantom(96, 96, PhantomKind::CheckerEdge, 80).image);
    TrainingSetOptions topt;
    topt.perClassCap = 3000;
    topt.minPerClass = 32;
    const TrainingSet set = build_training_set(hr, DegradationModel::gaussian(2), ClassifierConfig{}, topt);
    DictionaryTrainingOptions dopt;
    dopt.atoms = 32;
    dopt.iterations = 5;
    classes_ = new DictionarySet;
    for (PatchClass c : kAllClasses)
      classes_->set(c, std::make_shared<const DictionaryPair>(train_dictionary_pair(set.at(c), dopt)));
    pooled_ = new std::shared_ptr<const DictionaryPair>(
        std::make_shared<const DictionaryPair>(train_dictionary_pair(pool_training_set(set), dopt)));
  }
  static void TearDownTestSuite() {
    delete classes_;
    delete pooled_;
  }
  static DictionarySet* classes_;
  static std::shared_ptr<const DictionaryPair>* pooled_;

  static Image test_lr() { return degrade(make_phantom(48, 48, PhantomKind::SheppLike, 5).image, DegradationModel::gaussian(2)); }
};
DictionarySet* Pipeline::classes_ = nullptr;
std::shared_ptr<const DictionaryPair>* Pipeline::pooled_ = nullptr;

TEST_F(Pipeline, ConstantImageStaysConstant) {
  const ReconConfig cfg;
  const Image hr(40, 40, 87.0);
  const Image lr = degrade(hr, cfg.degradation());
  const ReconResult out = super_resolve(lr, *classes_, cfg, classifier_matrix(cfg.classifier));
  ASSERT_EQ(out.image.width(), 40);
  for (double v : out.image.pixels()) EXPECT_NEAR(v, 87.0, 1e-6);
  EXPECT_EQ(out.report.patchClasses[PatchClass::Smooth], out.report.patches);
}

TEST_F(Pipeline, OutputDimensionsAndReport) {
  const ReconConfig cfg;
  const Image lr = test_lr();
  const ReconResult out = super_resolve(lr, *classes_, cfg, classifier_matrix(cfg.classifier));
  EXPECT_EQ(out.image.width(), 2 * lr.width());
  EXPECT_EQ(out.image.height(), 2 * lr.height());
  EXPECT_EQ(out.report.patches, 44u * 44u);
  EXPECT_EQ(out.report.patchClasses.total(), out.report.patches);
  EXPECT_GT(out.report.meanSimilarSetSize, 0.0);
  EXPECT_LE(out.report.meanSimilarSetSize, 10.0);
  EXPECT_EQ(out.report.objectiveIncreases, 0);
  EXPECT_EQ(out.report.ibpViolations, 0);
  for (std::size_t i = 1; i < out.report.ibpResiduals.size(); ++i)
    EXPECT_LE(out.report.ibpResiduals[i], out.report.ibpResiduals[i - 1]);
  for (double v : out.image.pixels()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 255.0);
  }
}

TEST_F(Pipeline, ReducesToClassicalSparseCoding) {
  ReconConfig cfg;
  cfg.search.nMax = 0;
  const Image lr = test_lr();
  const ReconResult classical = sparse_coding_sr(lr, **pooled_, cfg);
  const ReconResult reduced =
      super_resolve(lr, DictionarySet::uniform(*pooled_), cfg, classifier_matrix(cfg.classifier));
  EXPECT_EQ(classical.image, reduced.image);
  EXPECT_EQ(reduced.report.meanSimilarSetSize, 0.0);
}

TEST_F(Pipeline, Deterministic) {
  const ReconConfig cfg;
  const Image lr = test_lr();
  const MeasurementMatrix phi = classifier_matrix(cfg.classifier);
  EXPECT_EQ(super_resolve(lr, *classes_, cfg, phi).image, super_resolve(lr, *classes_, cfg, phi).image);
}

TEST_F(Pipeline, ThreadCountDoesNotChangeTheResult) {
  const ReconConfig cfg;
  const Image lr = test_lr();
  const MeasurementMatrix phi = classifier_matrix(cfg.classifier);
  set_max_threads(1);
  const Image one = super_resolve(lr, *classes_, cfg, phi).image;
  set_max_threads(4);
  const Image four = super_resolve(lr, *classes_, cfg, phi).image;
  set_max_threads(0);
  EXPECT_EQ(one, four);
}

TEST_F(Pipeline, BeatsBicubicOnAHeldOutPhantom) {
  const ReconConfig cfg;
  const Image hr = make_phantom(48, 48, PhantomKind::SheppLike, 5).image;
  const Image lr = degrade(hr, cfg.degradation());
  const Image sr = super_resolve(lr, *classes_, cfg, classifier_matrix(cfg.classifier)).image;
  EXPECT_GT(psnr(sr, hr), psnr(upsample_to(lr, 2, 48, 48), hr));
}

TEST_F(Pipeline, MissingOrMisplacedDictionary) {
  const ReconConfig cfg;
  const MeasurementMatrix phi = classifier_matrix(cfg.classifier);
  DictionarySet missing = *classes_;
  missing.set(PatchClass::Edge, nullptr);
  EXPECT_THROW(super_resolve(test_lr(), missing, cfg, phi), ConfigError);
  DictionarySet swapped = *classes_;
  swapped.set(PatchClass::Smooth, classes_->get(PatchClass::Edge));
  EXPECT_THROW(super_resolve(test_lr(), swapped, cfg, phi), ConfigError);
  ReconConfig other = cfg;
  other.scale = 3;
  EXPECT_THROW(super_resolve(test_lr(), *classes_, other, phi), ConfigError);
}

TEST(ReconConfig, Validation) {
  ReconConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.overlap = 5;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = ReconConfig{};
  cfg.lambda = 0.0;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
  cfg = ReconConfig{};
  cfg.scale = 5;
  EXPECT_THROW(cfg.validate(), InvalidArgument);
}

}  // namespace
}  // namespace cssr
