#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "cssr/nonlocal.hpp"
#include "cssr/phantom.hpp"
#include "support/oracles.hpp"

namespace cssr {
namespace {

Image noise_image(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  Image img(w, h);
  for (double& v : img.pixels()) v = 255.0 * rng.uniform();
  return img;
}

std::vector<double> buffer(const Image& img) { return {img.pixels().begin(), img.pixels().end()}; }

Patch random_patch(int size, Rng& rng) {
  Patch p{size, 0, 0, {}};
  for (int i = 0; i < size * size; ++i) p.values.push_back(255.0 * rng.uniform());
  return p;
}

// --- weights ---

TEST(NlWeight, ClosedFormCases) {
  Rng rng(1);
  const Patch a = random_patch(5, rng);
  EXPECT_EQ(nl_weight(a, a, 75.0), 1.0);
  Patch b = a;
  b.values[7] += 75.0;  // |a - b|^2 = h^2
  EXPECT_NEAR(nl_weight(a, b, 75.0), std::exp(-1.0), 1e-15);
}

TEST(NlWeight, Symmetric) {
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    const Patch a = random_patch(5, rng), b = random_patch(5, rng);
    EXPECT_EQ(nl_weight(a, b, 40.0), nl_weight(b, a, 40.0));
    EXPECT_GT(nl_weight(a, b, 400.0), 0.0);
    EXPECT_LE(nl_weight(a, b, 400.0), 1.0);
  }
}

TEST(NlWeight, Errors) {
  Rng rng(3);
  EXPECT_THROW(nl_weight(random_patch(5, rng), random_patch(4, rng), 1.0), InvalidArgument);
  EXPECT_THROW(nl_weight(random_patch(5, rng), random_patch(5, rng), 0.0), InvalidArgument);
}

TEST(Gamma, ClosedFormCases) {
  const std::vector<double> equal = gamma_weights(std::vector<double>{0.0, 0.0}, 10.0);
  EXPECT_EQ(equal, (std::vector<double>{0.5, 0.5}));
  const double e = std::exp(-1.0);
  const std::vector<double> two = gamma_weights(std::vector<double>{0.0, 100.0}, 10.0);
  EXPECT_NEAR(two[0], 1.0 / (1.0 + e), 1e-15);
  EXPECT_NEAR(two[1], e / (1.0 + e), 1e-15);
  EXPECT_TRUE(gamma_weights(std::vector<double>{}, 10.0).empty());
}

TEST(Gamma, UnderflowFallsBackToUniform) {
  const std::vector<double> g = gamma_weights(std::vector<double>{1e6, 2e6, 3e6}, 1.0);
  for (double v : g) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Gamma, NormalizedAndMonotone) {
  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> d(1 + rng.below(15));
    for (double& v : d) v = 5000.0 * rng.uniform();
    const std::vector<double> g = gamma_weights(d, 75.0);
    EXPECT_NEAR(std::accumulate(g.begin(), g.end(), 0.0), 1.0, 1e-12);
    for (std::size_t i = 0; i < d.size(); ++i) {
      EXPECT_GE(g[i], 0.0);
      EXPECT_LE(g[i], 1.0);
      for (std::size_t j = 0; j < d.size(); ++j)
        if (d[i] < d[j]) EXPECT_GT(g[i], g[j]);
    }
  }
}

// --- search ---

TEST(Search, ConstantImageTakesFirstVisited) {
  const Image img(32, 32, 90.0);
  const SimilarSet s = spiral_search(img, crop_patch(img, 10, 10, 5), SearchConfig{});
  ASSERT_EQ(s.members.size(), 10u);
  // Ring 1 clockwise from its top-left corner, then the first two cells of ring 2.
  const std::vector<std::pair<int, int>> expected{{9, 9},  {9, 10},  {9, 11},  {10, 11}, {11, 11},
                                                  {11, 10}, {11, 9}, {10, 9}, {8, 8},   {8, 9}};
  for (std::size_t i = 0; i < 10; ++i) {
    EXPECT_EQ(std::make_pair(s.members[i].patch.row, s.members[i].patch.col), expected[i]) << i;
    EXPECT_EQ(s.members[i].distance2, 0.0);
    EXPECT_DOUBLE_EQ(s.gammas[i], 0.1);
  }
}

TEST(Search, FindsTheOnlyDuplicate) {
  Image img = noise_image(48, 48, 5);
  const int ar = 4, ac = 4;
  // (13, 35) lies on ring 31, which the variable-step phase visits at step 2.
  const int dr = 13, dc = 35;
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) img(dr + i, dc + j) = img(ar + i, ac + j);
  SearchConfig cfg;
  cfg.spiralRadius = 8;
  cfg.farStepInit = 1;
  cfg.distanceCutoff = 1.0;
  const SimilarSet s = spiral_search(img, crop_patch(img, ar, ac, 5), cfg);
  ASSERT_EQ(s.members.size(), 1u);
  EXPECT_EQ(s.members[0].patch.row, dr);
  EXPECT_EQ(s.members[0].patch.col, dc);
  EXPECT_EQ(s.gammas, std::vector<double>{1.0});

  const auto all = oracle::exhaustive_neighbors(buffer(img), 48, 48, 5, ar, ac);
  ASSERT_EQ(all.front().d2, 0.0);
  EXPECT_EQ(all.front().row, dr);
  EXPECT_EQ(all.front().col, dc);
  EXPECT_GT(all[1].d2, 1.0);
}

TEST(Search, AnchorIsNeverAMember) {
  const Image img(20, 20, 3.0);
  for (int r : {0, 7, 15})
    for (int c : {0, 9, 15}) {
      SearchConfig cfg;
      cfg.nMax = 300;
      const SimilarSet s = spiral_search(img, crop_patch(img, r, c, 5), cfg);
      EXPECT_EQ(s.members.size(), 255u);
      for (const SimilarMember& m : s.members) EXPECT_FALSE(m.patch.row == r && m.patch.col == c);
    }
}

TEST(Search, FullSpiralEqualsExhaustiveScan) {
  for (std::uint64_t seed = 6; seed < 9; ++seed) {
    const int w = 40 + 8 * static_cast<int>(seed - 6), h = 64 - 8 * static_cast<int>(seed - 6);
    const Image img = noise_image(w, h, seed);
    Rng rng(seed + 50);
    for (int trial = 0; trial < 4; ++trial) {
      const int ar = static_cast<int>(rng.below(static_cast<std::uint64_t>(h - 4)));
      const int ac = static_cast<int>(rng.below(static_cast<std::uint64_t>(w - 4)));
      SearchConfig cfg;
      cfg.spiralRadius = 100;
      cfg.distanceCutoff = 1e300;
      const SimilarSet s = spiral_search(img, crop_patch(img, ar, ac, 5), cfg);
      const auto all = oracle::exhaustive_neighbors(buffer(img), w, h, 5, ar, ac);
      ASSERT_EQ(s.members.size(), 10u);
      for (std::size_t i = 0; i < 10; ++i) {
        EXPECT_EQ(s.members[i].patch.row, all[i].row);
        EXPECT_EQ(s.members[i].patch.col, all[i].col);
        EXPECT_EQ(s.members[i].distance2, all[i].d2);
      }
    }
  }
}

TEST(Search, HeuristicWithinBoundOfExhaustive) {
  double spiralSum = 0.0, exactSum = 0.0;
  for (auto kind : {PhantomKind::SheppLike, PhantomKind::Disks, PhantomKind::CheckerEdge}) {
    const Phantom ph = make_phantom(96, 96, kind, 11);
    const DegradationModel model = DegradationModel::gaussian(2);
    const Image mid = upsample_to(degrade(ph.image, model), 2, 96, 96);
    const SearchConfig cfg;
    for (int r = 3; r + 5 <= 96; r += 9)
      for (int c = 3; c + 5 <= 96; c += 9) {
        const SimilarSet s = spiral_search(mid, crop_patch(mid, r, c, 5), cfg);
        const auto all = oracle::exhaustive_neighbors(buffer(mid), 96, 96, 5, r, c);
        std::size_t exactCount = 0;
        double exact = 0.0;
        for (std::size_t i = 0; i < all.size() && exactCount < 10 && all[i].d2 <= cfg.cutoff(); ++i, ++exactCount)
          exact += all[i].d2;
        double found = 0.0;
        for (const SimilarMember& m : s.members) found += m.distance2;
        if (exactCount) exactSum += exact / static_cast<double>(exactCount);
        if (!s.members.empty()) spiralSum += found / static_cast<double>(s.members.size());
      }
  }
  EXPECT_LE(spiralSum, 1.5 * exactSum) << "spiral " << spiralSum << " exhaustive " << exactSum;
}

TEST(Search, SetInvariants) {
  const Image img = noise_image(50, 50, 12);
  SearchConfig cfg;
  cfg.h = 400.0;
  cfg.nMax = 7;
  const SimilarSet s = spiral_search(img, crop_patch(img, 20, 20, 5), cfg);
  ASSERT_LE(s.members.size(), 7u);
  ASSERT_EQ(s.gammas.size(), s.members.size());
  EXPECT_NEAR(std::accumulate(s.gammas.begin(), s.gammas.end(), 0.0), 1.0, 1e-10);
  for (std::size_t i = 1; i < s.members.size(); ++i) {
    EXPECT_LE(s.members[i - 1].distance2, s.members[i].distance2);
    EXPECT_GE(s.gammas[i - 1], s.gammas[i]);
  }
  for (const SimilarMember& m : s.members)
    EXPECT_DOUBLE_EQ(m.distance2, patch_distance2(m.patch, s.anchor));
}

TEST(Search, CutoffAndMinimumMembers) {
  const Image img = noise_image(30, 30, 13);
  SearchConfig cfg;
  cfg.distanceCutoff = 1.0;
  EXPECT_TRUE(spiral_search(img, crop_patch(img, 12, 12, 5), cfg).members.empty());
  EXPECT_TRUE(spiral_search(img, crop_patch(img, 12, 12, 5), cfg).gammas.empty());
  cfg.minMembers = 3;
  const SimilarSet s = spiral_search(img, crop_patch(img, 12, 12, 5), cfg);
  EXPECT_EQ(s.members.size(), 3u);
  cfg = SearchConfig{};
  cfg.nMax = 0;
  EXPECT_TRUE(spiral_search(img, crop_patch(img, 12, 12, 5), cfg).members.empty());
}

TEST(Search, ValidatesInputs) {
  const Image img = noise_image(20, 20, 14);
  Patch outside = crop_patch(img, 0, 0, 5);
  outside.row = 17;
  EXPECT_THROW(spiral_search(img, outside, SearchConfig{}), InvalidArgument);
  SearchConfig bad;
  bad.h = 0.0;
  EXPECT_THROW(spiral_search(img, crop_patch(img, 0, 0, 5), bad), InvalidArgument);
  bad = SearchConfig{};
  bad.farStepInit = 0;
  EXPECT_THROW(spiral_search(img, crop_patch(img, 0, 0, 5), bad), InvalidArgument);
}

TEST(Search, Deterministic) {
  const Image img = noise_image(40, 40, 15);
  const SimilarSet a = spiral_search(img, crop_patch(img, 5, 30, 5), SearchConfig{});
  const SimilarSet b = spiral_search(img, crop_patch(img, 5, 30, 5), SearchConfig{});
  ASSERT_EQ(a.members.size(), b.members.size());
  for (std::size_t i = 0; i < a.members.size(); ++i) EXPECT_EQ(a.members[i].patch.values, b.members[i].patch.values);
  EXPECT_EQ(a.gammas, b.gammas);
}

TEST(SimilarityMap, PeaksAtTheAnchor) {
  const Image img = noise_image(24, 24, 16);
  const Image map = similarity_map(img, crop_patch(img, 6, 9, 5), 75.0);
  EXPECT_EQ(map.width(), 20);
  EXPECT_EQ(map(6, 9), 255.0);
  for (double v : map.pixels()) EXPECT_LE(v, 255.0);
}

}  // namespace
}  // namespace cssr
