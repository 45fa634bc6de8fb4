#pragma once

#include "volgauss/grad.hpp"
#include "volgauss/loss.hpp"
#include "volgauss/raster.hpp"
#include "volgauss/rng.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace volgauss {

struct FdTolerances {
  double relative = 1e-3;
  double denominator_floor = 1e-8;
  // Floor relative to the run's largest gradient: entries far below it are
  // at the level of summation roundoff in the loss divided by h.
  double scale_floor = 1e-6;
  double step_relative = 1e-4;
  double step_min = 1e-5;
};

struct FdEntry {
  std::size_t primitive = 0;
  std::string parameter;
  int component = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;
  bool pass = true;
};

struct FdReport {
  std::vector<FdEntry> entries;
  double tolerance = 0.0;
  std::size_t passed = 0;

  double pass_fraction() const {
    return entries.empty() ? 1.0 : static_cast<double>(passed) / entries.size();
  }
  bool all_pass() const { return passed == entries.size(); }
  double max_rel_error() const {
    double m = 0.0;
    for (const auto& e : entries) m = std::max(m, e.rel_error);
    return m;
  }
};

inline double fd_relative_error(double a, double f, double floor) {
  return std::abs(a - f) / std::max({std::abs(a), std::abs(f), floor});
}

inline double fd_step(double value, const FdTolerances& tol) {
  return std::max(tol.step_min, tol.step_relative * std::abs(value));
}

/// A named scalar slot of a primitive, for perturbation.
struct ParamSlot {
  const char* name;
  int component;
  double* (*address)(Gaussian3D&, int);
  double (*gradient)(const ParamGrad&, int);
};

inline std::vector<ParamSlot> parameter_slots(RenderMode mode) {
  std::vector<ParamSlot> slots;
  for (int c = 0; c < 3; ++c)
    slots.push_back({"mean", c, [](Gaussian3D& g, int k) { return &g.mean[k]; },
                     [](const ParamGrad& p, int k) { return p.d_mean[k]; }});
  for (int c = 0; c < 3; ++c)
    slots.push_back({"scale", c, [](Gaussian3D& g, int k) { return &g.scale[k]; },
                     [](const ParamGrad& p, int k) { return p.d_scale[k]; }});
  for (int c = 0; c < 4; ++c)
    slots.push_back({"rotation", c, [](Gaussian3D& g, int k) { return &g.rotation[k]; },
                     [](const ParamGrad& p, int k) { return p.d_rotation[k]; }});
  if (mode == RenderMode::analytic)
    slots.push_back({"theta", 0, [](Gaussian3D& g, int) { return &g.theta; },
                     [](const ParamGrad& p, int) { return p.d_theta; }});
  else
    slots.push_back({"opacity", 0, [](Gaussian3D& g, int) { return &g.splat_opacity; },
                     [](const ParamGrad& p, int) { return p.d_opacity; }});
  for (int c = 0; c < 3; ++c)
    slots.push_back({"color", c, [](Gaussian3D& g, int k) { return &g.color[k]; },
                     [](const ParamGrad& p, int k) { return p.d_color[k]; }});
  return slots;
}

/// Compares analytic gradients against five-point central differences of `loss`.
/// `gradient` must return the analytic gradient at the unperturbed scene.
inline FdReport fd_compare(const Scene& scene, const std::vector<ParamGrad>& analytic,
                           const std::function<double(const Scene&)>& loss, RenderMode mode,
                           const FdTolerances& tol) {
  FdReport report;
  report.tolerance = tol.relative;
  Scene work = scene;
  const auto slots = parameter_slots(mode);
  for (std::size_t i = 0; i < scene.size(); ++i) {
    for (const ParamSlot& slot : slots) {
      double* p = slot.address(work.gaussians[i], slot.component);
      const double original = *p;
      const double h = fd_step(original, tol);
      auto at = [&](double offset) {
        *p = original + offset;
        const double v = loss(work);
        *p = original;
        return v;
      };
      // Fourth-order stencil: small gradients under a large third derivative
      // are otherwise dominated by the h^2 term.
      const double d1 = at(h) - at(-h);
      const double d2 = at(2.0 * h) - at(-2.0 * h);
      FdEntry e;
      e.primitive = i;
      e.parameter = slot.name;
      e.component = slot.component;
      e.analytic = slot.gradient(analytic[i], slot.component);
      e.numeric = (8.0 * d1 - d2) / (12.0 * h);
      report.entries.push_back(std::move(e));
    }
  }
  double largest = 0.0;
  for (const FdEntry& e : report.entries) largest = std::max({largest, std::abs(e.analytic), std::abs(e.numeric)});
  const double floor = std::max(tol.denominator_floor, tol.scale_floor * largest);
  for (FdEntry& e : report.entries) {
    e.rel_error = fd_relative_error(e.analytic, e.numeric, floor);
    e.pass = e.rel_error <= tol.relative;
    report.passed += e.pass;
  }
  return report;
}

/// Rendering finite-difference check. Early termination, the splat alpha
/// cut and footprint culling are disabled for both sides.
inline FdReport fd_check(const Scene& scene, const Camera& cam, const Image& target,
                         const LossSpec& loss_spec, RenderMode mode, const FdTolerances& tol = {},
                         int threads = 0) {
  if (scene.size() > 32 || cam.width > 64 || cam.height > 64)
    throw ValidationError("fd_check: limited to 32 primitives and 64x64 images");
  RenderOptions opt = RenderOptions::smooth();
  opt.threads = threads;
  const RenderOutput fwd = render(scene, cam, mode, opt);
  Image d_img;
  evaluate_loss(fwd.color, target, loss_spec, &d_img);
  const SceneGrad grad = backward(scene, cam, mode, fwd, d_img, {}, opt);
  auto loss = [&](const Scene& s) {
    return evaluate_loss(render(s, cam, mode, opt).color, target, loss_spec);
  };
  return fd_compare(scene, grad.params, loss, mode, tol);
}

// ---------------------------------------------------------------------------
// Randomized suite

struct GradcheckConfig {
  int scenes = 10;
  int primitives = 8;
  int size = 32;
  double spread = 0.5;
  bool analytic = true;
  bool splat = true;
  LossSpec loss;
  double tolerance = 1e-3;
  double min_pass_fraction = 0.99;
  /// Also require every parameter to pass under L2 at l2_tolerance.
  bool l2_check = true;
  double l2_tolerance = 1e-4;

  std::vector<std::string> problems() const {
    std::vector<std::string> p;
    if (scenes < 1) p.push_back("scenes must be >= 1");
    if (primitives < 1 || primitives > 32) p.push_back("primitives must be in [1, 32]");
    if (size < 1 || size > 64) p.push_back("size must be in [1, 64]");
    if (!(spread >= 0.0)) p.push_back("spread must be >= 0");
    if (!analytic && !splat) p.push_back("at least one of analytic, splat must be enabled");
    if (!(tolerance > 0.0)) p.push_back("tolerance must be > 0");
    if (!(min_pass_fraction >= 0.0 && min_pass_fraction <= 1.0)) p.push_back("min_pass_fraction must be in [0, 1]");
    if (!(l2_tolerance > 0.0)) p.push_back("l2_tolerance must be > 0");
    return p;
  }
};

struct GradcheckProblem {
  Scene scene;
  Camera camera;
  Image target;
};

/// Scene `index` of the suite: primitives around depth 4 in front of a
/// square camera, random target image.
inline GradcheckProblem gradcheck_problem(const GradcheckConfig& cfg, std::uint64_t seed, int index) {
  CounterRng rng(seed, 0x9c00 + static_cast<std::uint64_t>(index));
  GradcheckProblem p;
  p.camera = Camera::simple(cfg.size, cfg.size, 1.125 * cfg.size);
  p.scene.background = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
  const bool separate = 2.0 * cfg.spread > 0.04 * cfg.primitives;
  for (int i = 0; i < cfg.primitives; ++i) {
    Gaussian3D g;
    // Depths stay apart so that no stencil point crosses a sort swap, where
    // the render is discontinuous.
    auto too_close = [&](double z) {
      for (const Gaussian3D& o : p.scene.gaussians)
        if (std::abs(o.mean.z() - z) < 0.01) return true;
      return false;
    };
    do {
      g.mean = Vec3(0, 0, 4) + cfg.spread * Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    } while (separate && too_close(g.mean.z()));
    for (int k = 0; k < 3; ++k) g.scale[k] = std::exp(rng.uniform(std::log(0.05), std::log(0.5)));
    Vec4 q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    g.rotation = q / q.norm();
    g.theta = rng.uniform(0.05, 0.9);
    g.color = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
    g.splat_opacity = rng.uniform(0.1, 0.9);
    p.scene.gaussians.push_back(g);
  }
  p.target = Image(cfg.size, cfg.size, 3);
  for (double& v : p.target.data) v = rng.uniform();
  return p;
}

struct GradcheckRun {
  int scene = 0;
  RenderMode mode = RenderMode::analytic;
  LossSpec loss;
  bool strict = false;  // every entry must pass
  FdReport report;

  bool pass() const { return strict ? report.pass_fraction() >= 1.0 : true; }
};

/// Non-strict runs are judged together: the fraction of all their entries
/// that pass must reach `min_pass_fraction`.
struct GradcheckOutcome {
  std::vector<GradcheckRun> runs;
  double min_pass_fraction = 0.99;

  double suite_fraction() const {
    std::size_t total = 0, ok = 0;
    for (const auto& r : runs) {
      if (r.strict) continue;
      total += r.report.entries.size();
      ok += r.report.passed;
    }
    return total == 0 ? 1.0 : double(ok) / double(total);
  }

  bool all_pass() const {
    for (const auto& r : runs)
      if (!r.pass()) return false;
    return suite_fraction() >= min_pass_fraction;
  }
};

inline GradcheckOutcome run_gradcheck(const GradcheckConfig& cfg, std::uint64_t seed, int threads = 0) {
  if (const auto p = cfg.problems(); !p.empty()) {
    std::string msg = "invalid gradcheck config:";
    for (const auto& s : p) msg += "\n  " + s;
    throw ValidationError(msg);
  }
  GradcheckOutcome out;
  out.min_pass_fraction = cfg.min_pass_fraction;
  std::vector<RenderMode> modes;
  if (cfg.analytic) modes.push_back(RenderMode::analytic);
  if (cfg.splat) modes.push_back(RenderMode::splat);
  for (int i = 0; i < cfg.scenes; ++i) {
    const GradcheckProblem prob = gradcheck_problem(cfg, seed, i);
    for (RenderMode mode : modes) {
      FdTolerances tol;
      tol.relative = cfg.tolerance;
      out.runs.push_back({i, mode, cfg.loss, false,
                          fd_check(prob.scene, prob.camera, prob.target, cfg.loss, mode, tol, threads)});
      if (cfg.l2_check) {
        // Tighter tolerance: a larger floor on the step keeps roundoff well below it.
        tol.relative = cfg.l2_tolerance;
        tol.step_min = 1e-4;
        out.runs.push_back({i, mode, {LossKind::l2}, true,
                            fd_check(prob.scene, prob.camera, prob.target, {LossKind::l2}, mode, tol, threads)});
      }
    }
  }
  return out;
}

}  // namespace volgauss
