#include "test_support.hpp"
#include "volgauss/oracle.hpp"
#include "volgauss/scenes.hpp"

#include <gtest/gtest.h>

#include <numbers>

namespace volgauss {
namespace {

TEST(MixtureField, PeakOfSingleGaussian) {
  Scene s;
  Gaussian3D g;
  g.mean = Vec3(1, 2, 3);
  g.scale = Vec3::Ones();
  g.theta = theta_for_kappa(2.0, g.scale);
  g.color = Vec3(0.3, 0.6, 0.9);
  s.gaussians.push_back(g);
  const FieldSample f = mixture_field(s, g.mean);
  EXPECT_NEAR(f.density, 2.0, 1e-12);
  EXPECT_LT((f.color - g.color).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(MixtureField, CoLocatedColorsAverage) {
  Scene s;
  Gaussian3D a;
  a.theta = 0.4;
  a.color = Vec3(1, 0, 0);
  Gaussian3D b = a;
  b.color = Vec3(0, 0, 1);
  s.gaussians = {a, b};
  const FieldSample f = mixture_field(s, Vec3(0.3, -0.2, 0.1));
  EXPECT_NEAR(f.color.x(), 0.5, 1e-15);
  EXPECT_NEAR(f.color.z(), 0.5, 1e-15);
}

TEST(MixtureField, ZeroDensityGivesBackground) {
  Scene s;
  s.background = Vec3(0.1, 0.2, 0.3);
  Gaussian3D a;
  a.theta = 0.0;
  s.gaussians.push_back(a);
  const FieldSample f = mixture_field(s, Vec3::Zero());
  EXPECT_EQ(f.density, 0.0);
  EXPECT_EQ(f.color, s.background);
}

TEST(MixtureField, MatchesIndependentSum) {
  CounterRng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const Scene s = testing::random_scene(rng, 15, 1.0);
    const MixtureField field(s);
    for (int k = 0; k < 20; ++k) {
      const Vec3 x = Vec3(0, 0, 4) + Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
      double sigma = 0.0;
      for (const auto& g : s.gaussians)
        sigma += density_kappa(g.theta, g.scale) * testing::reference_gaussian(g, x);
      EXPECT_NEAR(field(x).density, sigma, 1e-12 * std::max(1.0, sigma));
    }
  }
}

TEST(Raymarch, EmptySceneIsBackground) {
  Scene s;
  s.background = Vec3(0.5, 0.25, 1.0);
  const MarchResult r = raymarch(s, make_ray(Vec3::Zero(), Vec3::UnitZ()), {});
  EXPECT_EQ(r.color, s.background);
  EXPECT_EQ(r.transmittance, 1.0);
}

TEST(Raymarch, SingleGaussianMatchesClosedForm) {
  CounterRng rng(12);
  MarchConfig cfg;
  cfg.step_count = 100000;
  for (int trial = 0; trial < 10; ++trial) {
    Scene s;
    s.gaussians.push_back(testing::random_gaussian(rng, Vec3::Zero(), 0.2));
    const Gaussian3D& g = s.gaussians[0];
    const Ray ray = testing::random_ray_near(rng, g, 0.3);
    const double closed = transmittance(project_to_ray(g, ray), density_kappa(g.theta, g.scale));
    EXPECT_NEAR(raymarch(s, ray, cfg).transmittance, closed, 1e-5);
  }
}

TEST(Raymarch, RichardsonErrorsShrink) {
  Scene s;
  Gaussian3D g;
  g.mean = Vec3(0, 0, 4);
  g.scale = Vec3(0.3, 0.2, 0.5);
  g.rotation = Vec4(0.8, 0.2, 0.4, -0.1);
  g.theta = 0.9;
  g.color = Vec3(1, 0.2, 0.1);
  s.gaussians.push_back(g);
  const Ray ray = make_ray(Vec3::Zero(), Vec3(0.02, 0.01, 1));
  double prev_diff = std::numeric_limits<double>::infinity();
  // Midpoint quadrature of a Gaussian converges very fast; the sequence is
  // only meaningful until it reaches rounding level.
  int checked = 0;
  for (int n = 2; n <= 2048 && prev_diff > 1e-14; n *= 2) {
    MarchConfig a, b;
    a.step_count = n;
    b.step_count = 2 * n;
    const double diff = std::abs(raymarch(s, ray, a).transmittance - raymarch(s, ray, b).transmittance);
    EXPECT_LT(diff, prev_diff) << n;
    prev_diff = diff;
    ++checked;
  }
  EXPECT_GE(checked, 4);
}

TEST(Raymarch, TransmittanceBoundsAndKappaMonotone) {
  CounterRng rng(3);
  const Scene s = testing::random_scene(rng, 10, 0.6);
  MarchConfig cfg;
  cfg.step_count = 2000;
  const Ray ray = make_ray(Vec3::Zero(), Vec3(0.01, -0.02, 1));
  const double base = raymarch(s, ray, cfg).transmittance;
  EXPECT_GT(base, 0.0);
  EXPECT_LE(base, 1.0);
  for (std::size_t i = 0; i < s.size(); ++i) {
    Scene t = s;
    t.gaussians[i].theta = std::min(1.0, t.gaussians[i].theta + 0.05);
    EXPECT_LE(raymarch(t, ray, cfg).transmittance, base);
  }
}

TEST(ExactSorted, SingleGaussianMatchesRaster) {
  Scene s;
  s.background = Vec3(0.2, 0.3, 0.4);
  Gaussian3D g;
  g.mean = Vec3(0.1, -0.1, 4);
  g.scale = Vec3(0.3, 0.5, 0.2);
  g.rotation = Vec4(0.7, 0.1, 0.5, 0.2);
  g.theta = 0.7;
  g.color = Vec3(0.9, 0.1, 0.4);
  s.gaussians.push_back(g);
  const Camera cam = Camera::simple(24, 24, 30.0);
  const RenderOutput raster = render(s, cam, RenderMode::analytic);
  for (int py = 0; py < 24; py += 5)
    for (int px = 0; px < 24; px += 5) {
      const MarchResult r = exact_sorted_composite(s, cam.pixel_ray(px, py));
      for (int c = 0; c < 3; ++c) EXPECT_NEAR(r.color[c], raster.color.at(px, py, c), 1e-12);
    }
}

TEST(ExactSorted, AxisAlignedChainMatchesRaster) {
  Scene s;
  for (int i = 0; i < 4; ++i) {
    Gaussian3D g;
    g.mean = Vec3(0.05 * i, 0, 3 + i);
    g.scale = Vec3(0.4, 0.4, 0.1);
    g.theta = 0.3;
    g.color = Vec3(0.25 * i, 1 - 0.25 * i, 0.5);
    s.gaussians.push_back(g);
  }
  const Camera cam = Camera::simple(32, 32, 40.0);
  const RenderOutput raster = render(s, cam, RenderMode::analytic);
  const RenderOutput sorted = render_exact_sorted(s, cam);
  EXPECT_LT(image_difference(raster.color, sorted.color).max_abs, 1e-12);
  for (int py = 0; py < 32; py += 4)
    for (int px = 0; px < 32; px += 4) {
      const MarchResult r = exact_sorted_composite(s, cam.pixel_ray(px, py));
      for (int c = 0; c < 3; ++c) EXPECT_NEAR(r.color[c], raster.color.at(px, py, c), 1e-12);
    }
}

TEST(ExactSorted, AdversarialPairDiffers) {
  // A large tilted slab whose mean is closer to the camera than a small
  // Gaussian, while along the small one's rays the slab lies behind it.
  Scene s;
  Gaussian3D big;
  big.mean = Vec3(0, 0, 4.0);
  big.scale = Vec3(1.5, 0.6, 0.05);
  const double half = -0.5 * 0.9;  // rotate about y
  big.rotation = Vec4(std::cos(half), 0, std::sin(half), 0);
  big.theta = 0.9;
  big.color = Vec3(1, 0, 0);
  Gaussian3D small;
  small.mean = Vec3(0.6, 0, 4.3);
  small.scale = Vec3::Constant(0.15);
  small.theta = 0.9;
  small.color = Vec3(0, 0, 1);
  s.gaussians = {big, small};
  const Camera cam = Camera::simple(48, 48, 40.0);
  const ImageDifference d =
      image_difference(render(s, cam, RenderMode::analytic).color, render_exact_sorted(s, cam).color);
  EXPECT_GT(d.max_abs, 1e-2);
}

TEST(ImageDifference, ReportsLocation) {
  Image a(4, 3, 3), b(4, 3, 3);
  b.at(2, 1, 1) = 0.5;
  b.at(0, 0, 0) = 0.1;
  const ImageDifference d = image_difference(a, b);
  EXPECT_EQ(d.max_abs, 0.5);
  EXPECT_EQ(d.argmax_x, 2);
  EXPECT_EQ(d.argmax_y, 1);
  EXPECT_NEAR(d.mean_abs, 0.6 / 36, 1e-15);
}

TEST(LayeredScene, SlabsDisjointAndBelowClamp) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const Scene s = layered_scene(seed, 6);
    ASSERT_EQ(s.size(), 6u);
    for (std::size_t i = 1; i < s.size(); ++i) {
      const auto& a = s.gaussians[i - 1];
      const auto& b = s.gaussians[i];
      const double ea = 4.0 * std::sqrt(testing::reference_covariance(a)(2, 2));
      const double eb = 4.0 * std::sqrt(testing::reference_covariance(b)(2, 2));
      EXPECT_GE(b.mean.z() - eb, a.mean.z() + ea - 1e-12) << "seed " << seed;
    }
    for (const auto& g : s.gaussians) {
      // Optical depth through the center along the longest axis.
      const double peak = density_kappa(g.theta, g.scale) * std::sqrt(2.0 * std::numbers::pi) * g.scale.maxCoeff();
      EXPECT_LE(peak, 4.0 + 1e-9);
      EXPECT_GT(g.theta, 0.0);
    }
  }
}

TEST(OnAxisScene, ScalesOnlyDepthAxis) {
  const Scene a = on_axis_scene(1.0), b = on_axis_scene(4.0);
  EXPECT_EQ(a.gaussians[0].scale.x(), b.gaussians[0].scale.x());
  EXPECT_DOUBLE_EQ(b.gaussians[0].scale.z(), 4.0 * a.gaussians[0].scale.z());
}

}  // namespace
}  // namespace volgauss
