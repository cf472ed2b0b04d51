#include <gtest/gtest.h>

#include <numbers>
#include <random>

#include "oracles.hpp"
#include "spose/hmap_io.hpp"
#include "spose/heatmap.hpp"
#include "test_util.hpp"

using namespace spose;

namespace {

Heatmap random_map(std::mt19937_64& rng, int w, int h) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Heatmap m(w, h);
  for (double& x : m.values()) x = u(rng);
  return m;
}

HeatmapConfig sigma(double s) {
  HeatmapConfig c;
  c.sigma = s;
  return c;
}

}  // namespace

TEST(RenderGaussian, PeakAndSymmetry) {
  const Heatmap h = render_gaussian({32, 32}, sigma(1.5), 64, 64);
  EXPECT_DOUBLE_EQ(h.at(32, 32), 1.0);
  for (int v = 0; v < 64; ++v)
    for (int u = 0; u < 64; ++u) EXPECT_EQ(h.at(u, v), h.at(v, u));
}

TEST(RenderGaussian, FarOffGrid) {
  const Heatmap h = render_gaussian({-50, -50}, sigma(1.5), 64, 64);
  EXPECT_LT(h.max(), 1e-100);
}

TEST(RenderGaussian, MatchesPointwiseFormula) {
  const Heatmap h = render_gaussian({20.5, 40.25}, sigma(2.0), 64, 64);
  for (int v = 0; v < 64; ++v)
    for (int u = 0; u < 64; ++u) {
      const double ref = std::exp(-((u - 20.5) * (u - 20.5) + (v - 40.25) * (v - 40.25)) / 8.0);
      EXPECT_NEAR(h.at(u, v), ref, 1e-15);
    }
}

TEST(RenderGaussianProperty, TranslationCovariant) {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> c(20, 40);
  std::uniform_int_distribution<int> s(-5, 5);
  for (int trial = 0; trial < 50; ++trial) {
    const Vec2 p(c(rng), c(rng));
    const int du = s(rng), dv = s(rng);
    const Heatmap a = render_gaussian(p, sigma(1.5), 64, 64);
    const Heatmap b = render_gaussian(p + Vec2(du, dv), sigma(1.5), 64, 64);
    for (int v = 10; v < 54; ++v)
      for (int u = 10; u < 54; ++u) EXPECT_NEAR(b.at(u + du, v + dv), a.at(u, v), 1e-14);
  }
}

TEST(NormalizeBeta, Examples) {
  Heatmap h = render_gaussian({10, 10}, sigma(2.0), 32, 32, 0.5);
  EXPECT_DOUBLE_EQ(normalize_beta(h, 1e3).max(), 1000.0);
  const Heatmap one = render_gaussian({10, 10}, sigma(2.0), 32, 32);
  EXPECT_EQ(normalize_beta(one, 1.0), one);
  expect_code(ErrorCode::DegenerateHeatmap, [] { normalize_beta(Heatmap(8, 8), 1.0); });
}

TEST(NormalizeBetaProperty, UnitMaxAndIdempotent) {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 200; ++trial) {
    const Heatmap h = random_map(rng, 16, 12);
    const Heatmap n = normalize_beta(h, 1e3);
    EXPECT_NEAR(n.max() / 1e3, 1.0, 1e-12);
    const Heatmap nn = normalize_beta(n, 1e3);
    for (std::size_t j = 0; j < n.size(); ++j) EXPECT_NEAR(nn[j], n[j], 1e-12 * 1e3);
  }
}

TEST(HardArgmax, Examples) {
  EXPECT_EQ(hard_argmax(render_gaussian({32, 32}, sigma(1.5), 64, 64)), Vec2(32, 32));
  Heatmap h(10, 10);
  h.at(0, 5) = 1.0;
  h.at(9, 5) = 1.0;
  EXPECT_EQ(hard_argmax(h), Vec2(0, 5));
  expect_code(ErrorCode::DegenerateHeatmap, [] { hard_argmax(Heatmap(8, 8)); });
}

TEST(HardArgmaxProperty, MatchesExhaustiveScan) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 1000; ++trial) {
    const Heatmap h = random_map(rng, 13, 9);
    int bu = 0, bv = 0;
    for (int v = 0; v < 9; ++v)
      for (int u = 0; u < 13; ++u)
        if (h.at(u, v) > h.at(bu, bv)) bu = u, bv = v;
    EXPECT_EQ(hard_argmax(h), Vec2(bu, bv));
  }
}

TEST(SoftArgmax, UniformMapGivesCentroid) {
  const Heatmap h(64, 64, 1.0);
  const Vec2 p = soft_argmax(h, HeatmapConfig{});
  EXPECT_NEAR(p.x(), 31.5, 1e-12);
  EXPECT_NEAR(p.y(), 31.5, 1e-12);
}

TEST(SoftArgmax, SymmetricGaussian) {
  // A 65x65 grid is symmetric about (32, 32), so the background cancels.
  const Vec2 p = soft_argmax(render_gaussian({32, 32}, sigma(1.5), 65, 65), sigma(1.5));
  EXPECT_LT((p - Vec2(32, 32)).norm(), 1e-6);
}

TEST(SoftArgmax, OffGridCentre) {
  const Heatmap h = render_gaussian({20.5, 40.25}, sigma(1.5), 64, 64);
  EXPECT_LT((soft_argmax(h, sigma(1.5)) - oracle::soft_argmax(h, 15.0)).norm(), 1e-10);
  const Heatmap wide = render_gaussian({20.5, 40.25}, HeatmapConfig{}, 64, 64);
  EXPECT_LT((soft_argmax(wide, HeatmapConfig{}) - Vec2(20.5, 40.25)).norm(), 0.05);
  const Heatmap d = render_decodable({20.5, 40.25}, sigma(1.5), 64, 64);
  EXPECT_LT((soft_argmax(d, sigma(1.5)) - Vec2(20.5, 40.25)).norm(), 1e-10);
}

TEST(RefinedArgmax, RecoversGaussianCentre) {
  std::mt19937_64 rng(25);
  std::uniform_real_distribution<double> c(2, 61);
  for (int trial = 0; trial < 200; ++trial) {
    const Vec2 centre(c(rng), c(rng));
    const Heatmap h = render_gaussian(centre, HeatmapConfig{}, 64, 64, 0.7);
    EXPECT_LT((refined_argmax(h) - centre).norm(), 1e-9);
    EXPECT_LE((refined_argmax(h) - hard_argmax(h)).cwiseAbs().maxCoeff(), 0.5);
  }
  Heatmap spike(16, 16);
  spike.at(0, 7) = 1.0;
  EXPECT_EQ(refined_argmax(spike), Vec2(0, 7));
}

TEST(SoftArgmaxProperty, InsideGridAndMatchesOracle) {
  std::mt19937_64 rng(24);
  for (int trial = 0; trial < 200; ++trial) {
    const Heatmap h = random_map(rng, 20, 17);
    const Vec2 p = soft_argmax(h, HeatmapConfig{});
    EXPECT_GE(p.x(), 0.0);
    EXPECT_LE(p.x(), 19.0);
    EXPECT_GE(p.y(), 0.0);
    EXPECT_LE(p.y(), 16.0);
    EXPECT_LT((p - oracle::soft_argmax(h, 15.0)).norm(), 1e-10);
  }
}

TEST(SoftArgmaxProperty, JacobianMatchesFiniteDifferences) {
  std::mt19937_64 rng(25);
  const HeatmapConfig cfg;
  std::uniform_int_distribution<int> cell(0, 32 * 32 - 1);
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    Heatmap h = random_map(rng, 32, 32);
    // Keep the maximum strictly separated so the step never moves it.
    h[argmax_index(h)] += 0.05;
    const SoftArgmaxResult r = soft_argmax_with_jacobian(h, cfg);
    double scale = 0.0;
    for (std::size_t j = 0; j < h.size(); ++j) scale = std::max({scale, std::abs(r.du[j]), std::abs(r.dv[j])});
    for (int probe = 0; probe < 20; ++probe) {
      const std::size_t j = probe == 0 ? argmax_index(h) : static_cast<std::size_t>(cell(rng));
      Heatmap e = h;
      e[j] += 1e-4;
      const Vec2 a = soft_argmax(e, cfg);
      e[j] = h[j] - 1e-4;
      const Vec2 b = soft_argmax(e, cfg);
      const Vec2 fd = (a - b) / 2e-4;
      const double floor = 1e-3 * scale;
      worst = std::max({worst, std::abs(fd.x() - r.du[j]) / std::max({std::abs(fd.x()), std::abs(r.du[j]), floor}),
                        std::abs(fd.y() - r.dv[j]) / std::max({std::abs(fd.y()), std::abs(r.dv[j]), floor})});
    }
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(RenderDecodable, DecodesToTarget) {
  std::mt19937_64 rng(26);
  std::uniform_real_distribution<double> c(6, 58);
  for (int trial = 0; trial < 100; ++trial) {
    const Vec2 t(c(rng), c(rng));
    const Heatmap h = render_decodable(t, HeatmapConfig{}, 64, 64);
    EXPECT_LT((soft_argmax(h, HeatmapConfig{}) - t).norm(), 1e-10);
  }
}

TEST(ResponseScore, Examples) {
  EXPECT_EQ(response_score(Heatmap(16, 16)), 0.0);
  const double s = response_score(render_gaussian({32, 32}, sigma(1.5), 64, 64));
  EXPECT_NEAR(s, 2.0 * std::numbers::pi * 1.5 * 1.5, 0.01 * 14.137);
}

TEST(ResponseScoreProperty, MatchesCompensatedSum) {
  std::mt19937_64 rng(27);
  for (int trial = 0; trial < 100; ++trial) {
    const Heatmap h = random_map(rng, 40, 30);
    const double ref = oracle::kahan_sum(h.values());
    EXPECT_NEAR(response_score(h), ref, 1e-9 * ref);
  }
}

TEST(SampleDepth, Examples) {
  const DepthMap c(16, 16, 7.0);
  EXPECT_DOUBLE_EQ(sample_depth(c, {3.3, 9.7}), 7.0);
  EXPECT_DOUBLE_EQ(sample_depth(c, {15, 15}), 7.0);
  DepthMap ramp(16, 16);
  for (int v = 0; v < 16; ++v)
    for (int u = 0; u < 16; ++u) ramp.at(u, v) = u + 100.0 * v;
  EXPECT_DOUBLE_EQ(sample_depth(ramp, {4, 6}), 604.0);
  EXPECT_NEAR(sample_depth(ramp, {10.25, 3}), 310.25, 1e-12);
  expect_code(ErrorCode::OutOfBounds, [&] { sample_depth(ramp, {15.5, 2}); });
}

TEST(Hmap, RoundTripAndRejectsCorruption) {
  std::mt19937_64 rng(28);
  std::vector<HeadOutput> heads(2);
  for (auto& h : heads)
    for (int k = 0; k < 3; ++k) {
      h.keypoint_maps.push_back(random_map(rng, 5, 4));
      h.depth_maps.emplace_back(5, 4, 2.5);
    }
  const std::string bytes = encode_hmap(heads);
  const auto back = decode_hmap(bytes);
  ASSERT_EQ(back.size(), 2u);
  ASSERT_EQ(back[1].depth_maps.size(), 3u);
  for (std::size_t j = 0; j < 20; ++j)
    EXPECT_EQ(back[1].keypoint_maps[2][j], static_cast<double>(static_cast<float>(heads[1].keypoint_maps[2][j])));
  expect_code(ErrorCode::ParseError, [&] { decode_hmap(bytes.substr(0, bytes.size() - 1)); });
  expect_code(ErrorCode::ParseError, [&] { decode_hmap("HMAP2" + bytes.substr(5)); });
}
