#include "test_support.hpp"
#include "volgauss/raster.hpp"

#include <gtest/gtest.h>

#include <set>

namespace volgauss {
namespace {

Gaussian3D on_axis(double depth, double s, double theta = 0.5) {
  Gaussian3D g;
  g.mean = Vec3(0, 0, depth);
  g.scale = Vec3::Constant(s);
  g.theta = theta;
  g.color = Vec3(1, 0.5, 0.25);
  g.splat_opacity = 0.8;
  return g;
}

TEST(BinTiles, TinyOnAxisGaussianHitsOnlyCenterTile) {
  // 3x3 tiles, principal point on the centre pixel of tile (1, 1).
  Camera cam = Camera::simple(48, 48, 60.0);
  cam.cx = cam.cy = 24.5;
  Scene s;
  s.gaussians.push_back(on_axis(4.0, 1e-3));
  for (RenderMode mode : {RenderMode::analytic, RenderMode::splat}) {
    const TileGrid grid = bin_tiles(s, cam, mode);
    for (int ty = 0; ty < grid.tiles_y; ++ty)
      for (int tx = 0; tx < grid.tiles_x; ++tx)
        EXPECT_EQ(grid.at(tx, ty).size(), (tx == 1 && ty == 1) ? 1u : 0u) << to_string(mode);
  }
}

TEST(BinTiles, BehindCameraIsCulled) {
  const Camera cam = Camera::simple(32, 32, 30.0);
  Scene s;
  s.gaussians.push_back(on_axis(-3.0, 0.5));
  for (RenderMode mode : {RenderMode::analytic, RenderMode::splat}) {
    const TileGrid grid = bin_tiles(s, cam, mode);
    for (const auto& l : grid.lists) EXPECT_TRUE(l.empty());
  }
}

TEST(BinTiles, EmptySceneGivesEmptyGrid) {
  const TileGrid grid = bin_tiles(Scene{}, Camera::simple(40, 20, 30.0), 16);
  EXPECT_EQ(grid.tiles_x, 3);
  EXPECT_EQ(grid.tiles_y, 2);
  for (const auto& l : grid.lists) EXPECT_TRUE(l.empty());
}

TEST(BinTiles, ListsSortedByDepth) {
  CounterRng rng(4);
  const Scene s = testing::random_scene(rng, 60, 1.0);
  const Camera cam = Camera::simple(64, 64, 60.0);
  const TileGrid grid = bin_tiles(s, cam, RenderMode::analytic);
  for (const auto& l : grid.lists)
    for (std::size_t j = 1; j < l.size(); ++j) EXPECT_LE(l[j - 1].depth, l[j].depth);
}

TEST(BinTiles, EveryVisiblePairIsBinned) {
  // Brute force over all (pixel, primitive) pairs at 64x64. Analytic mode must
  // list every pair with alpha > 1/255; splat mode every pixel in its circle.
  CounterRng rng(31);
  testing::GaussianRanges r;
  r.theta_max = 1.0;
  for (int trial = 0; trial < 4; ++trial) {
    const Scene s = testing::random_scene(rng, 40, 1.2, r);
    const Camera cam = Camera::look_at(64, 64, 55.0, Vec3(rng.uniform(-1, 1), 0.3, 0), Vec3(0, 0, 4),
                                       Vec3(0, -1, 0));
    for (RenderMode mode : {RenderMode::analytic, RenderMode::splat}) {
      const auto prims = prepare_primitives(s, cam, mode, {});
      const TileGrid grid = bin_tiles(prims, cam, 16);
      for (int py = 0; py < 64; ++py) {
        for (int px = 0; px < 64; ++px) {
          std::set<std::uint32_t> listed;
          for (const TileEntry& e : grid.for_pixel(px, py)) listed.insert(e.index);
          for (std::uint32_t i = 0; i < s.size(); ++i) {
            if (!prims[i].visible) continue;
            bool needed;
            if (mode == RenderMode::analytic) {
              needed = analytic_alpha(project_to_ray(s.gaussians[i], cam.pixel_ray(px, py)),
                                      prims[i].kappa) > 1.0 / 255.0;
            } else {
              // Splat footprint is the 3-sigma circle of the dilated covariance.
              const Eigen::SelfAdjointEigenSolver<Mat2> eig(prims[i].splat.cov2d);
              const double radius = 3.0 * std::sqrt(eig.eigenvalues().maxCoeff());
              needed = (pixel_center(px, py) - prims[i].splat.mean2d).norm() <= radius * (1 - 1e-12);
            }
            if (needed) {
              ASSERT_TRUE(listed.count(i)) << to_string(mode) << " " << px << "," << py;
            }
          }
        }
      }
    }
  }
}

TEST(Composite, Examples) {
  {
    const Contribution c[] = {{1.0 - 1e-9, Vec3(1, 0, 0)}};
    const CompositeResult r = composite_pixel(c, Vec3::Zero());
    EXPECT_NEAR(r.color.x(), 1.0, 1e-8);
    EXPECT_NEAR(r.transmittance, 0.0, 1e-8);
  }
  {
    const Contribution c[] = {{0.5, Vec3(1, 0, 0)}, {0.5, Vec3(0, 1, 0)}};
    const CompositeResult r = composite_pixel(c, Vec3::Zero());
    EXPECT_DOUBLE_EQ(r.color.x(), 0.5);
    EXPECT_DOUBLE_EQ(r.color.y(), 0.25);
    EXPECT_DOUBLE_EQ(r.color.z(), 0.0);
    EXPECT_DOUBLE_EQ(r.transmittance, 0.25);
  }
}

TEST(Composite, MatchesProductSum) {
  CounterRng rng(9);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Contribution> layers;
    std::vector<double> alphas;
    std::vector<Vec3> colors;
    for (int i = 0; i < 50; ++i) {
      const double a = rng.uniform(0.0, 0.15);
      const Vec3 c(rng.uniform(), rng.uniform(), rng.uniform());
      layers.push_back({a, c});
      alphas.push_back(a);
      colors.push_back(c);
    }
    const Vec3 bg(rng.uniform(), rng.uniform(), rng.uniform());
    const CompositeResult r = composite_pixel(layers, bg, 0.0);
    const auto [color, t] = testing::reference_composite(alphas, colors, bg);
    EXPECT_LT((r.color - color).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_NEAR(r.transmittance, t, 1e-15);
  }
}

TEST(Composite, EarlyTermination) {
  const Contribution c[] = {{0.99, Vec3(1, 0, 0)}, {0.99, Vec3(0, 1, 0)}, {0.99, Vec3(0, 0, 1)}};
  const CompositeResult r = composite_pixel(c, Vec3::Ones());
  // T: 0.01, 1e-4 (not below), 1e-6 -> stop after the third.
  EXPECT_EQ(r.used, 3);
  const Contribution d[] = {{0.999, Vec3(1, 0, 0)}, {0.99, Vec3(0, 1, 0)}, {0.5, Vec3(0, 0, 1)}};
  EXPECT_EQ(composite_pixel(d, Vec3::Ones()).used, 2);
}

TEST(Render, EmptySceneIsBackground) {
  Scene s;
  s.background = Vec3(0.2, 0.4, 0.6);
  const Camera cam = Camera::simple(20, 17, 20.0);
  for (RenderMode mode : {RenderMode::analytic, RenderMode::splat}) {
    const RenderOutput out = render(s, cam, mode);
    for (int y = 0; y < cam.height; ++y)
      for (int x = 0; x < cam.width; ++x)
        for (int c = 0; c < 3; ++c) EXPECT_EQ(out.color.at(x, y, c), s.background[c]);
    for (double t : out.final_transmittance) EXPECT_EQ(t, 1.0);
  }
}

TEST(Render, CenterPixelHandPipeline) {
  const Camera cam = Camera::simple(33, 33, 40.0);
  Scene s;
  s.background = Vec3(0.1, 0.1, 0.1);
  Gaussian3D g = on_axis(5.0, 0.4, 0.3);
  g.rotation = Vec4(0.9, 0.1, -0.2, 0.3);
  s.gaussians.push_back(g);
  const RenderOutput out = render(s, cam, RenderMode::analytic);
  const Ray ray = cam.pixel_ray(16, 16);
  const RayGaussian1D r = project_to_ray(g, ray);
  const double kappa = density_kappa(g.theta, g.scale);
  const double alpha = 1.0 - std::exp(-kappa * std::sqrt(2 * std::numbers::pi) * r.beta * r.peak);
  for (int c = 0; c < 3; ++c)
    EXPECT_NEAR(out.color.at(16, 16, c), g.color[c] * alpha + s.background[c] * (1 - alpha), 1e-14);
  EXPECT_NEAR(out.final_transmittance[16 * 33 + 16], 1 - alpha, 1e-14);
}

TEST(Render, PerPixelProductIdentity) {
  CounterRng rng(77);
  const Scene s = testing::random_scene(rng, 30, 0.8);
  const Camera cam = Camera::simple(40, 40, 45.0);
  for (RenderMode mode : {RenderMode::analytic, RenderMode::splat}) {
    RenderOptions opt;
    const auto prims = prepare_primitives(s, cam, mode, opt);
    const TileGrid grid = bin_tiles(prims, cam, opt.tile_size);
    const RenderOutput out = render(s, cam, mode, opt);
    std::vector<PixelSample> samples;
    for (int py = 0; py < cam.height; py += 3) {
      for (int px = 0; px < cam.width; px += 3) {
        gather_pixel(prims, grid.for_pixel(px, py), px, py, cam, mode, opt, samples);
        std::vector<double> a;
        std::vector<Vec3> c;
        for (const auto& smp : samples) {
          a.push_back(smp.alpha);
          c.push_back(prims[smp.index].color);
        }
        const auto [color, t] = testing::reference_composite(a, c, s.background);
        for (int k = 0; k < 3; ++k) EXPECT_NEAR(out.color.at(px, py, k), color[k], 1e-13);
        EXPECT_NEAR(out.final_transmittance[py * cam.width + px], t, 1e-14);
      }
    }
  }
}

TEST(Render, DeterministicAcrossThreads) {
  CounterRng rng(5);
  const Scene s = testing::random_scene(rng, 80, 1.0);
  const Camera cam = Camera::simple(70, 50, 50.0);
  for (RenderMode mode : {RenderMode::analytic, RenderMode::splat}) {
    RenderOptions one, many;
    one.threads = 1;
    many.threads = 4;
    const RenderOutput a = render(s, cam, mode, one), b = render(s, cam, mode, many);
    EXPECT_EQ(a.color.data, b.color.data);
    EXPECT_EQ(a.final_transmittance, b.final_transmittance);
  }
}

TEST(Render, ThetaMonotonicity) {
  CounterRng rng(13);
  const Scene base = testing::random_scene(rng, 12, 0.6);
  const Camera cam = Camera::simple(32, 32, 35.0);
  RenderOptions opt;
  opt.transmittance_min = 0.0;
  const RenderOutput before = render(base, cam, RenderMode::analytic, opt);
  for (std::size_t i = 0; i < base.size(); ++i) {
    Scene s = base;
    s.gaussians[i].theta = std::min(1.0, s.gaussians[i].theta + 0.05);
    const RenderOutput after = render(s, cam, RenderMode::analytic, opt);
    for (std::size_t k = 0; k < after.final_transmittance.size(); ++k)
      EXPECT_LE(after.final_transmittance[k], before.final_transmittance[k]);
  }
}

TEST(Render, ZScaleInvariance) {
  const Camera cam = Camera::simple(32, 32, 40.0);
  const Vec3 zs[] = {Vec3(0.3, 0.3, 0.15), Vec3(0.3, 0.3, 0.3), Vec3(0.3, 0.3, 0.6), Vec3(0.3, 0.3, 1.2)};
  std::vector<double> center_alpha;
  Image first;
  for (const Vec3& scale : zs) {
    Scene s;
    Gaussian3D g = on_axis(5.0, 0.3, 0.4);
    g.scale = scale;
    s.gaussians.push_back(g);
    const RenderOutput sp = render(s, cam, RenderMode::splat);
    if (first.data.empty()) first = sp.color;
    EXPECT_EQ(sp.color.data, first.data);
    center_alpha.push_back(1.0 - render(s, cam, RenderMode::analytic).final_transmittance[16 * 32 + 16]);
  }
  for (std::size_t i = 1; i < center_alpha.size(); ++i) EXPECT_GT(center_alpha[i], center_alpha[i - 1]);
}

TEST(Camera, ValidationListsProblems) {
  Camera c = Camera::simple(10, 10, 10.0);
  c.fx = -1;
  c.cx = 12;
  try {
    c.validate();
    FAIL();
  } catch (const ValidationError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("fx"), std::string::npos);
    EXPECT_NE(msg.find("cx"), std::string::npos);
  }
}

}  // namespace
}  // namespace volgauss
