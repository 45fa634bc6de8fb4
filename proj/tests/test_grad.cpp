#include "test_support.hpp"
#include "volgauss/fd_check.hpp"
#include "volgauss/grad.hpp"

#include <gtest/gtest.h>

namespace volgauss {
namespace {

Image random_target(CounterRng& rng, int w, int h) {
  Image im(w, h, 3);
  for (double& v : im.data) v = rng.uniform();
  return im;
}

void expect_report(const FdReport& r, double min_fraction, const char* what) {
  EXPECT_GE(r.pass_fraction(), min_fraction) << what << " max rel " << r.max_rel_error();
  if (r.pass_fraction() < min_fraction) {
    for (const auto& e : r.entries)
      if (!e.pass)
        ADD_FAILURE() << what << " prim " << e.primitive << " " << e.parameter << "[" << e.component
                      << "] analytic " << e.analytic << " numeric " << e.numeric;
  }
}

TEST(Backward, SingleGaussianSinglePixelL2) {
  for (RenderMode mode : {RenderMode::analytic, RenderMode::splat}) {
    Scene s;
    s.background = Vec3(0.1, 0.2, 0.3);
    Gaussian3D g;
    g.mean = Vec3(0.02, -0.03, 3.0);
    g.scale = Vec3(0.3, 0.2, 0.4);
    g.rotation = Vec4(0.9, 0.2, -0.1, 0.3);
    g.theta = 0.6;
    g.color = Vec3(0.8, 0.4, 0.1);
    g.splat_opacity = 0.7;
    s.gaussians.push_back(g);
    Camera cam = Camera::simple(1, 1, 2.0);
    Image target(1, 1, 3);
    target.data = {0.2, 0.9, 0.5};
    FdTolerances tol;
    tol.relative = 1e-4;
    expect_report(fd_check(s, cam, target, {LossKind::l2}, mode, tol), 1.0, to_string(mode));
  }
}

TEST(Backward, RandomScenesMixedLoss) {
  CounterRng rng(2024);
  for (int trial = 0; trial < 3; ++trial) {
    const Scene s = testing::random_scene(rng, 8, 0.5);
    const Camera cam = Camera::simple(16, 16, 18.0);
    const Image target = random_target(rng, 16, 16);
    for (RenderMode mode : {RenderMode::analytic, RenderMode::splat}) {
      expect_report(fd_check(s, cam, target, {}, mode), 0.99, to_string(mode));
      FdTolerances tol;
      tol.relative = 1e-4;
      expect_report(fd_check(s, cam, target, {LossKind::l2}, mode, tol), 1.0, to_string(mode));
    }
  }
}

TEST(Backward, ZeroDensityPrimitive) {
  Scene s;
  s.background = Vec3::Zero();
  Gaussian3D g;
  g.mean = Vec3(0, 0, 3);
  g.scale = Vec3::Constant(0.3);
  g.theta = 0.0;
  g.color = Vec3(1, 1, 1);
  s.gaussians.push_back(g);
  const Camera cam = Camera::simple(8, 8, 10.0);
  Image target(8, 8, 3);
  std::fill(target.data.begin(), target.data.end(), 1.0);  // wants more white
  const RenderOptions opt = RenderOptions::smooth();
  const RenderOutput fwd = render(s, cam, RenderMode::analytic, opt);
  Image d;
  evaluate_loss(fwd.color, target, {LossKind::l2}, &d);
  const SceneGrad grad = backward(s, cam, RenderMode::analytic, fwd, d, {}, opt);
  EXPECT_EQ(grad.params[0].d_color, Vec3::Zero());
  EXPECT_LT(grad.params[0].d_theta, 0.0);  // descent direction increases theta
}

TEST(Backward, TransmittanceGradientOfKappa) {
  Scene s;
  Gaussian3D g;
  g.mean = Vec3(0.05, 0.02, 3.0);
  g.scale = Vec3(0.3, 0.25, 0.5);
  g.theta = 0.4;
  s.gaussians.push_back(g);
  const Camera cam = Camera::simple(1, 1, 3.0);
  const RenderOptions opt = RenderOptions::smooth();
  const RenderOutput fwd = render(s, cam, RenderMode::analytic, opt);
  const double dt[] = {1.0};
  const SceneGrad grad = backward(s, cam, RenderMode::analytic, fwd, Image(1, 1, 3), dt, opt);
  const RayGaussian1D r = project_to_ray(g, cam.pixel_ray(0, 0));
  const double kappa = density_kappa(g.theta, g.scale);
  const double d_kappa = -kSqrt2Pi * r.beta * r.peak * transmittance(r, kappa);
  const double dkappa_dtheta = kThetaGain / (1 - kThetaGain * g.theta) * mean_inverse_scale(g.scale);
  EXPECT_NEAR(grad.params[0].d_theta, d_kappa * dkappa_dtheta, 1e-12);
  // FD in kappa through theta.
  const double h = 1e-6;
  Scene p = s, m = s;
  p.gaussians[0].theta += h;
  m.gaussians[0].theta -= h;
  const double fd = (render(p, cam, RenderMode::analytic, opt).final_transmittance[0] -
                     render(m, cam, RenderMode::analytic, opt).final_transmittance[0]) /
                    (2 * h);
  EXPECT_NEAR(grad.params[0].d_theta, fd, 1e-8);
}

TEST(Backward, QuaternionGradientIsTangent) {
  CounterRng rng(5);
  const Scene s = testing::random_scene(rng, 10, 0.5);
  const Camera cam = Camera::simple(24, 24, 28.0);
  const Image target = random_target(rng, 24, 24);
  for (RenderMode mode : {RenderMode::analytic, RenderMode::splat}) {
    const RenderOutput fwd = render(s, cam, mode);
    Image d;
    evaluate_loss(fwd.color, target, {}, &d);
    const SceneGrad grad = backward(s, cam, mode, fwd, d);
    for (std::size_t i = 0; i < s.size(); ++i) {
      const Vec4 q = s.gaussians[i].rotation.normalized();
      EXPECT_NEAR(grad.params[i].d_rotation.dot(q), 0.0, 1e-9);
      for (int k = 0; k < 4; ++k) EXPECT_TRUE(std::isfinite(grad.params[i].d_rotation[k]));
    }
  }
}

TEST(Backward, SplatScaleZIsZeroOnAxis) {
  Scene s;
  Gaussian3D g;
  g.mean = Vec3(0, 0, 4);
  g.scale = Vec3(0.3, 0.3, 0.7);
  g.theta = 0.5;
  g.splat_opacity = 0.6;
  g.color = Vec3::Ones();
  s.gaussians.push_back(g);
  const Camera cam = Camera::simple(16, 16, 20.0);
  Image target(16, 16, 3);
  for (int y = 4; y < 12; ++y)
    for (int x = 4; x < 12; ++x)
      for (int c = 0; c < 3; ++c) target.at(x, y, c) = 1.0;
  for (RenderMode mode : {RenderMode::analytic, RenderMode::splat}) {
    const RenderOutput fwd = render(s, cam, mode);
    Image d;
    evaluate_loss(fwd.color, target, {LossKind::l2}, &d);
    const SceneGrad grad = backward(s, cam, mode, fwd, d);
    if (mode == RenderMode::splat)
      EXPECT_EQ(grad.params[0].d_scale.z(), 0.0);
    else
      EXPECT_NE(grad.params[0].d_scale.z(), 0.0);
  }
}

TEST(Backward, DeterministicAcrossThreads) {
  CounterRng rng(99);
  const Scene s = testing::random_scene(rng, 40, 0.8);
  const Camera cam = Camera::simple(48, 40, 40.0);
  const Image target = random_target(rng, 48, 40);
  for (RenderMode mode : {RenderMode::analytic, RenderMode::splat}) {
    RenderOptions one, four;
    one.threads = 1;
    four.threads = 4;
    const RenderOutput fwd = render(s, cam, mode, one);
    Image d;
    evaluate_loss(fwd.color, target, {}, &d);
    const SceneGrad a = backward(s, cam, mode, fwd, d, {}, one);
    const SceneGrad b = backward(s, cam, mode, fwd, d, {}, four);
    for (std::size_t i = 0; i < s.size(); ++i) {
      EXPECT_EQ(a.params[i].d_mean, b.params[i].d_mean);
      EXPECT_EQ(a.params[i].d_scale, b.params[i].d_scale);
      EXPECT_EQ(a.params[i].d_theta, b.params[i].d_theta);
    }
  }
}

TEST(Backward, NonFiniteUpstreamThrows) {
  Scene s;
  s.gaussians.push_back(Gaussian3D{});
  s.gaussians[0].mean = Vec3(0, 0, 3);
  const Camera cam = Camera::simple(4, 4, 4.0);
  const RenderOutput fwd = render(s, cam, RenderMode::analytic);
  Image d(4, 4, 3);
  d.at(1, 2, 0) = std::nan("");
  EXPECT_THROW(backward(s, cam, RenderMode::analytic, fwd, d), NumericalError);
}

TEST(FdCheck, FlatSceneAllPass) {
  Scene s;
  for (int i = 0; i < 3; ++i) {
    Gaussian3D g;
    g.mean = Vec3(0.2 * i, 0, 3);
    g.theta = 0.0;
    s.gaussians.push_back(g);
  }
  const Camera cam = Camera::simple(8, 8, 8.0);
  const FdReport r = fd_check(s, cam, Image(8, 8, 3), {LossKind::l2}, RenderMode::analytic);
  EXPECT_TRUE(r.all_pass());
}

TEST(FdCheck, RejectsLargeProblems) {
  Scene s;
  s.gaussians.resize(33);
  EXPECT_THROW(fd_check(s, Camera::simple(8, 8, 8.0), Image(8, 8, 3), {}, RenderMode::analytic),
               ValidationError);
}

TEST(Gradcheck, SmallSuitePassesAndPools) {
  GradcheckConfig cfg;
  cfg.scenes = 2;
  cfg.primitives = 3;
  cfg.size = 12;
  const GradcheckOutcome out = run_gradcheck(cfg, 5, 1);
  ASSERT_EQ(out.runs.size(), 8u);  // 2 scenes x 2 modes x (mixed + L2)
  std::size_t strict = 0;
  for (const auto& r : out.runs) strict += r.strict;
  EXPECT_EQ(strict, 4u);
  EXPECT_TRUE(out.all_pass()) << out.suite_fraction();
}

TEST(Gradcheck, PooledFractionCountsOnlyMixedRuns) {
  GradcheckOutcome out;
  out.min_pass_fraction = 0.75;
  auto run = [](bool strict, std::size_t n, std::size_t passed) {
    GradcheckRun r;
    r.strict = strict;
    r.report.entries.resize(n);
    r.report.passed = passed;
    return r;
  };
  out.runs = {run(false, 4, 2), run(false, 4, 4), run(true, 4, 4)};
  EXPECT_DOUBLE_EQ(out.suite_fraction(), 0.75);
  EXPECT_TRUE(out.all_pass());
  out.runs.push_back(run(true, 4, 3));
  EXPECT_FALSE(out.all_pass());
}

TEST(Gradcheck, ProblemsAreSeeded) {
  GradcheckConfig cfg;
  const GradcheckProblem a = gradcheck_problem(cfg, 3, 1), b = gradcheck_problem(cfg, 3, 1);
  const GradcheckProblem c = gradcheck_problem(cfg, 3, 2);
  EXPECT_EQ(a.target.data, b.target.data);
  EXPECT_EQ(a.scene.gaussians[0].mean, b.scene.gaussians[0].mean);
  EXPECT_NE(a.scene.gaussians[0].mean, c.scene.gaussians[0].mean);
}

}  // namespace
}  // namespace volgauss
