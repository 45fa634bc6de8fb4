#pragma once

// Scene fitting: Adam over the per-primitive parameter groups, adaptive
// density control (split / clone / prune) with kappa halving, and the image
// fitting loop used by the single-disk and fixed-budget shape experiments.

#include "volgauss/camera.hpp"
#include "volgauss/core.hpp"
#include "volgauss/errors.hpp"
#include "volgauss/grad.hpp"
#include "volgauss/image.hpp"
#include "volgauss/loss.hpp"
#include "volgauss/metrics.hpp"
#include "volgauss/raster.hpp"
#include "volgauss/rng.hpp"
#include "volgauss/scene.hpp"

#include <Eigen/Cholesky>

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

namespace volgauss {

struct TrainConfig {
  int iterations = 1000;
  double lr_position_init = 1.6e-4;
  double lr_position_final = 1e-5;
  double lr_theta = 0.03;
  double lr_opacity = 0.03;  // splat mode counterpart of theta
  double lr_color = 0.003;
  double lr_scale = 5e-3;
  double lr_rotation = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-15;

  bool densify = true;
  int densify_interval = 200;
  int densify_until = 0;  // 0: until the last iteration
  double split_grad_threshold = 1e-8;
  double clone_grad_threshold = 5e-5;
  /// Primitives with max scale above this fraction of the extent count as large.
  double percent_dense = 0.01;
  int split_children = 2;
  double split_scale_divisor = 1.6;
  /// Split when kappa exceeds this fraction of the theta = 1 ceiling.
  double high_kappa_fraction = 0.9;
  double prune_theta_min = 0.005;
  double prune_scale_fraction = 0.01;
  /// The large-scale prune only runs from this iteration on.
  int prune_scale_after = 3000;
  /// Densification stops adding primitives at this count; 0 means no limit.
  int max_primitives = 0;
  /// 0 derives the extent from the cameras.
  double scene_extent = 0.0;
  double scene_extent_multiplier = 1.0;
  /// Disabled when 0. Sets theta (or opacity) to at most 0.01 every N iterations.
  int opacity_reset_interval = 0;

  LossSpec loss;
  std::uint64_t seed = 0;
  int threads = 0;
  RenderOptions render;

  /// Every problem, one per line.
  std::vector<std::string> problems() const {
    std::vector<std::string> p;
    auto positive = [&](double v, const char* name) {
      if (!(v > 0.0) || !std::isfinite(v)) p.push_back(std::string(name) + " must be > 0");
    };
    auto nonneg = [&](double v, const char* name) {
      if (!(v >= 0.0) || !std::isfinite(v)) p.push_back(std::string(name) + " must be >= 0");
    };
    if (iterations < 0) p.push_back("iterations must be >= 0");
    positive(lr_position_init, "lr_position_init");
    positive(lr_position_final, "lr_position_final");
    positive(lr_theta, "lr_theta");
    positive(lr_opacity, "lr_opacity");
    positive(lr_color, "lr_color");
    positive(lr_scale, "lr_scale");
    positive(lr_rotation, "lr_rotation");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) p.push_back("adam_beta1 must be in [0, 1)");
    if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) p.push_back("adam_beta2 must be in [0, 1)");
    positive(adam_eps, "adam_eps");
    if (densify_interval < 1) p.push_back("densify_interval must be >= 1");
    if (densify_until < 0) p.push_back("densify_until must be >= 0");
    nonneg(split_grad_threshold, "split_grad_threshold");
    nonneg(clone_grad_threshold, "clone_grad_threshold");
    nonneg(percent_dense, "percent_dense");
    if (split_children < 1) p.push_back("split_children must be >= 1");
    positive(split_scale_divisor, "split_scale_divisor");
    nonneg(high_kappa_fraction, "high_kappa_fraction");
    nonneg(prune_theta_min, "prune_theta_min");
    nonneg(prune_scale_fraction, "prune_scale_fraction");
    if (max_primitives < 0) p.push_back("max_primitives must be >= 0");
    nonneg(scene_extent, "scene_extent");
    positive(scene_extent_multiplier, "scene_extent_multiplier");
    if (opacity_reset_interval < 0) p.push_back("opacity_reset_interval must be >= 0");
    if (!(loss.lambda >= 0.0 && loss.lambda <= 1.0)) p.push_back("loss.lambda must be in [0, 1]");
    return p;
  }

  void validate() const {
    const auto p = problems();
    if (p.empty()) return;
    std::string msg = "invalid training config:";
    for (const auto& s : p) msg += "\n  " + s;
    throw ValidationError(msg);
  }

  double position_lr(int iteration) const {
    const double t = iterations > 0 ? std::clamp(static_cast<double>(iteration) / iterations, 0.0, 1.0) : 0.0;
    return std::exp(std::log(lr_position_init) * (1.0 - t) + std::log(lr_position_final) * t);
  }
};

// ---------------------------------------------------------------------------
// Color activation

inline constexpr double kSoftplusBeta = 10.0;

inline double softplus(double f) {
  const double x = kSoftplusBeta * f;
  return (x > 30.0 ? x : std::log1p(std::exp(x))) / kSoftplusBeta;
}

inline double softplus_grad(double f) { return 1.0 / (1.0 + std::exp(-kSoftplusBeta * f)); }

inline double softplus_inverse(double c) {
  const double x = kSoftplusBeta * std::max(c, 1e-6);
  return (x > 30.0 ? x : std::log(std::expm1(x))) / kSoftplusBeta;
}

/// Largest feature whose color does not exceed 1.
inline double color_feature_max() {
  static const double f = softplus_inverse(1.0);
  return f;
}

// ---------------------------------------------------------------------------
// Optimizer state

/// Parameter layout: mean 3, log-scale 3, rotation 4, density 1, color 3.
inline constexpr int kParamsPerPrimitive = 14;

struct PrimitiveState {
  std::uint64_t id = 0;
  std::array<double, kParamsPerPrimitive> m{};
  std::array<double, kParamsPerPrimitive> v{};
  Vec3 color_feature = Vec3::Zero();
  double grad_accum = 0.0;
  int grad_count = 0;
};

struct OptimizerState {
  std::vector<PrimitiveState> prims;
  std::uint64_t next_id = 0;
  int step = 0;

  static OptimizerState for_scene(const Scene& scene) {
    OptimizerState s;
    for (const Gaussian3D& g : scene.gaussians) s.add(g);
    return s;
  }

  PrimitiveState& add(const Gaussian3D& g) {
    PrimitiveState p;
    p.id = next_id++;
    for (int c = 0; c < 3; ++c) p.color_feature[c] = softplus_inverse(g.color[c]);
    prims.push_back(p);
    return prims.back();
  }
};

enum class DensifyKind { split, clone, prune, clamp };

inline const char* to_string(DensifyKind k) {
  switch (k) {
    case DensifyKind::split: return "split";
    case DensifyKind::clone: return "clone";
    case DensifyKind::prune: return "prune";
    case DensifyKind::clamp: return "clamp";
  }
  return "?";
}

/// Raw parameters are logged so that a replay can recompute kappa.
struct DensifyEvent {
  int iteration = 0;
  DensifyKind kind = DensifyKind::split;
  std::string reason;
  std::uint64_t parent = 0;
  double parent_theta = 0.0;
  Vec3 parent_scale = Vec3::Ones();
  std::vector<std::uint64_t> children;
  std::vector<double> child_theta;
  std::vector<Vec3> child_scale;
  double target_kappa = 0.0;  // clamp events
};

// ---------------------------------------------------------------------------
// Adam step

namespace detail {

inline double adam_update(double& m, double& v, double g, double lr, const TrainConfig& cfg,
                          double bias1, double bias2) {
  m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * g;
  v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * g * g;
  return lr * (m / bias1) / (std::sqrt(v / bias2) + cfg.adam_eps);
}

[[noreturn]] inline void non_finite(std::size_t index, std::uint64_t id, const char* what) {
  throw NumericalError("optimizer: non-finite update of " + std::string(what) + " for primitive " +
                       std::to_string(index) + " (id " + std::to_string(id) + ")");
}

}  // namespace detail

/// One Adam step on every primitive. `extent` scales the position rate.
inline void step(Scene& scene, OptimizerState& state, const SceneGrad& grad, RenderMode mode,
                 const TrainConfig& cfg, int iteration, double extent) {
  if (grad.params.size() != scene.size() || state.prims.size() != scene.size())
    throw ValidationError("step: gradient, state and scene sizes differ");
  ++state.step;
  const double bias1 = 1.0 - std::pow(cfg.adam_beta1, state.step);
  const double bias2 = 1.0 - std::pow(cfg.adam_beta2, state.step);
  const double lr_pos = cfg.position_lr(iteration) * extent;
  for (std::size_t i = 0; i < scene.size(); ++i) {
    Gaussian3D& g = scene.gaussians[i];
    PrimitiveState& st = state.prims[i];
    const ParamGrad& pg = grad.params[i];
    std::array<double, kParamsPerPrimitive> upd{};
    for (int k = 0; k < 3; ++k)
      upd[k] = detail::adam_update(st.m[k], st.v[k], pg.d_mean[k], lr_pos, cfg, bias1, bias2);
    for (int k = 0; k < 3; ++k) {
      const double d_log = pg.d_scale[k] * g.scale[k];
      upd[3 + k] = detail::adam_update(st.m[3 + k], st.v[3 + k], d_log, cfg.lr_scale, cfg, bias1, bias2);
    }
    for (int k = 0; k < 4; ++k)
      upd[6 + k] = detail::adam_update(st.m[6 + k], st.v[6 + k], pg.d_rotation[k], cfg.lr_rotation, cfg,
                                       bias1, bias2);
    const double d_density = mode == RenderMode::analytic ? pg.d_theta : pg.d_opacity;
    upd[10] = detail::adam_update(st.m[10], st.v[10], d_density,
                                  mode == RenderMode::analytic ? cfg.lr_theta : cfg.lr_opacity, cfg, bias1,
                                  bias2);
    for (int k = 0; k < 3; ++k) {
      const double d_f = pg.d_color[k] * softplus_grad(st.color_feature[k]);
      upd[11 + k] = detail::adam_update(st.m[11 + k], st.v[11 + k], d_f, cfg.lr_color, cfg, bias1, bias2);
    }
    for (int k = 0; k < kParamsPerPrimitive; ++k)
      if (!std::isfinite(upd[k])) detail::non_finite(i, st.id, "parameters");

    for (int k = 0; k < 3; ++k) g.mean[k] -= upd[k];
    for (int k = 0; k < 3; ++k)
      g.scale[k] = std::max(kMinScale, std::exp(std::log(floored_scale(g.scale)[k]) - upd[3 + k]));
    for (int k = 0; k < 4; ++k) g.rotation[k] -= upd[6 + k];
    const double qn = g.rotation.norm();
    if (!(qn > 0.0) || !std::isfinite(qn)) detail::non_finite(i, st.id, "rotation");
    g.rotation /= qn;
    if (mode == RenderMode::analytic)
      g.theta = std::clamp(g.theta - upd[10], 0.0, 1.0);
    else
      g.splat_opacity = std::clamp(g.splat_opacity - upd[10], 0.0, 1.0);
    for (int k = 0; k < 3; ++k) {
      st.color_feature[k] = std::min(st.color_feature[k] - upd[11 + k], color_feature_max());
      g.color[k] = std::min(1.0, softplus(st.color_feature[k]));
    }
    if (grad.visible.empty() || grad.visible[i]) {
      st.grad_accum += pg.position_grad_norm;
      ++st.grad_count;
    }
  }
}

// ---------------------------------------------------------------------------
// Adaptive density control

/// Theta giving `kappa` at `scale`; clamps to 1 and reports when the
/// target is above the theta = 1 ceiling.
inline double solve_theta(double kappa, const Vec3& scale, bool& clamped) {
  const double theta = theta_for_kappa(kappa, scale);
  clamped = theta > 1.0;
  return clamped ? 1.0 : std::max(0.0, theta);
}

/// Densify and prune at iteration `iteration`. Returns the events in the
/// order they were applied.
inline std::vector<DensifyEvent> densify_and_prune(Scene& scene, OptimizerState& state,
                                                   RenderMode mode, const TrainConfig& cfg,
                                                   int iteration, double extent) {
  std::vector<DensifyEvent> events;
  const std::size_t n = scene.size();
  const double big = cfg.percent_dense * extent;
  std::vector<int> action(n, 0);  // 1 clone, 2 split
  std::vector<std::string> reason(n);
  std::size_t budget_used = n;
  for (std::size_t i = 0; i < n; ++i) {
    const Gaussian3D& g = scene.gaussians[i];
    const PrimitiveState& st = state.prims[i];
    const double avg = st.grad_count > 0 ? st.grad_accum / st.grad_count : 0.0;
    const double max_scale = floored_scale(g.scale).maxCoeff();
    const double kappa = density_kappa(g.theta, g.scale);
    int a = 0;
    if (mode == RenderMode::analytic && kappa > cfg.high_kappa_fraction * kappa_ceiling(g.scale)) {
      a = 2;
      reason[i] = "high_kappa";
    } else if (avg > cfg.split_grad_threshold && max_scale > big) {
      a = 2;
      reason[i] = "gradient";
    } else if (avg > cfg.clone_grad_threshold && max_scale <= big) {
      a = 1;
      reason[i] = "gradient";
    }
    const std::size_t grow = a == 2 ? static_cast<std::size_t>(cfg.split_children) - 1 : a;
    if (a && cfg.max_primitives > 0 && budget_used + grow > static_cast<std::size_t>(cfg.max_primitives)) a = 0;
    if (a) budget_used += grow;
    action[i] = a;
  }

  Scene next;
  next.background = scene.background;
  OptimizerState next_state;
  next_state.next_id = state.next_id;
  next_state.step = state.step;
  std::vector<Gaussian3D> added;
  std::vector<PrimitiveState> added_state;
  std::vector<char> fresh;  // densified this call, exempt from the prune below

  auto halve = [&](Gaussian3D& child, double parent_kappa, DensifyEvent& ev, std::uint64_t child_id) {
    bool clamped = false;
    child.theta = solve_theta(0.5 * parent_kappa, child.scale, clamped);
    if (clamped) {
      DensifyEvent c;
      c.iteration = iteration;
      c.kind = DensifyKind::clamp;
      c.reason = "theta ceiling";
      c.parent = ev.parent;
      c.parent_theta = ev.parent_theta;
      c.parent_scale = ev.parent_scale;
      c.children = {child_id};
      c.child_theta = {child.theta};
      c.child_scale = {child.scale};
      c.target_kappa = 0.5 * parent_kappa;
      events.push_back(std::move(c));
    }
  };

  for (std::size_t i = 0; i < n; ++i) {
    const Gaussian3D& g = scene.gaussians[i];
    const PrimitiveState& st = state.prims[i];
    const double kappa = density_kappa(g.theta, g.scale);
    if (action[i] == 0) {
      next.gaussians.push_back(g);
      next_state.prims.push_back(st);
      fresh.push_back(0);
      continue;
    }
    DensifyEvent ev;
    ev.iteration = iteration;
    ev.reason = reason[i];
    ev.parent = st.id;
    ev.parent_theta = g.theta;
    ev.parent_scale = g.scale;
    if (action[i] == 1) {
      ev.kind = DensifyKind::clone;
      Gaussian3D keep = g, copy = g;
      const std::uint64_t copy_id = next_state.next_id++;
      const std::size_t clamp_at = events.size();
      halve(keep, kappa, ev, st.id);
      halve(copy, kappa, ev, copy_id);
      ev.children = {st.id, copy_id};
      ev.child_theta = {keep.theta, copy.theta};
      ev.child_scale = {keep.scale, copy.scale};
      events.insert(events.begin() + static_cast<std::ptrdiff_t>(clamp_at), ev);
      next.gaussians.push_back(keep);
      next_state.prims.push_back(st);
      fresh.push_back(1);
      PrimitiveState cs;
      cs.id = copy_id;
      cs.color_feature = st.color_feature;
      added.push_back(copy);
      added_state.push_back(cs);
    } else {
      ev.kind = DensifyKind::split;
      const Covariance cv = covariance(g);
      const Eigen::LLT<Mat3> llt(cv.matrix);
      const Mat3 chol = llt.matrixL();
      CounterRng rng(cfg.seed ^ 0x5851f42d4c957f2dULL,
                     (static_cast<std::uint64_t>(iteration) << 32) ^ st.id);
      const std::size_t clamp_at = events.size();
      for (int c = 0; c < cfg.split_children; ++c) {
        Gaussian3D child = g;
        child.mean = g.mean + chol * Vec3(rng.normal(), rng.normal(), rng.normal());
        child.scale = floored_scale(g.scale / cfg.split_scale_divisor);
        const std::uint64_t id = next_state.next_id++;
        halve(child, kappa, ev, id);
        ev.children.push_back(id);
        ev.child_theta.push_back(child.theta);
        ev.child_scale.push_back(child.scale);
        PrimitiveState cs;
        cs.id = id;
        cs.color_feature = st.color_feature;
        added.push_back(child);
        added_state.push_back(cs);
      }
      events.insert(events.begin() + static_cast<std::ptrdiff_t>(clamp_at), ev);
    }
  }
  for (std::size_t k = 0; k < added.size(); ++k) {
    next.gaussians.push_back(added[k]);
    next_state.prims.push_back(added_state[k]);
    fresh.push_back(1);
  }

  // Prune.
  Scene kept;
  kept.background = next.background;
  OptimizerState kept_state;
  kept_state.next_id = next_state.next_id;
  kept_state.step = next_state.step;
  const bool scale_prune = iteration >= cfg.prune_scale_after;
  const double scale_limit = cfg.prune_scale_fraction * extent;
  for (std::size_t i = 0; i < next.size(); ++i) {
    const Gaussian3D& g = next.gaussians[i];
    const double density = mode == RenderMode::analytic ? g.theta : g.splat_opacity;
    std::string why;
    if (fresh[i])
      ;
    else if (density < cfg.prune_theta_min)
      why = "theta";
    else if (scale_prune && floored_scale(g.scale).maxCoeff() > scale_limit)
      why = "scale";
    if (why.empty()) {
      kept.gaussians.push_back(g);
      kept_state.prims.push_back(next_state.prims[i]);
      continue;
    }
    DensifyEvent ev;
    ev.iteration = iteration;
    ev.kind = DensifyKind::prune;
    ev.reason = why;
    ev.parent = next_state.prims[i].id;
    ev.parent_theta = density;
    ev.parent_scale = g.scale;
    events.push_back(std::move(ev));
  }
  for (auto& p : kept_state.prims) {
    p.grad_accum = 0.0;
    p.grad_count = 0;
  }
  scene = std::move(kept);
  state = std::move(kept_state);
  return events;
}

/// Caps theta (or splat opacity) at 0.01.
inline void reset_opacity(Scene& scene, RenderMode mode) {
  for (Gaussian3D& g : scene.gaussians) {
    if (mode == RenderMode::analytic)
      g.theta = std::min(g.theta, 0.01);
    else
      g.splat_opacity = std::min(g.splat_opacity, 0.01);
  }
}

/// 1.1 times the largest camera distance from the camera centroid, as in
/// 3DGS. A single camera falls back to its distance from `focus`.
inline double camera_extent(const std::vector<Camera>& cams, const Vec3& focus) {
  Vec3 centroid = Vec3::Zero();
  for (const Camera& c : cams) centroid += c.center();
  centroid /= static_cast<double>(std::max<std::size_t>(1, cams.size()));
  double r = 0.0;
  for (const Camera& c : cams) r = std::max(r, (c.center() - centroid).norm());
  if (r < 1e-9) {
    for (const Camera& c : cams) r = std::max(r, (c.center() - focus).norm());
    return r;
  }
  return 1.1 * r;
}

// ---------------------------------------------------------------------------
// Image fitting

struct FitView {
  Camera camera;
  Image target;
};

struct FitReport {
  std::vector<double> loss;
  std::vector<int> primitive_count;
  std::vector<ImageMetrics> final_metrics;  // one per view
  ImageMetrics mean_metrics;
};

struct FitResult {
  Scene scene;
  FitReport report;
  std::vector<DensifyEvent> events;
  OptimizerState state;
  double extent = 0.0;
};

/// Raised on a non-finite loss; carries the last scene that rendered finitely.
class DivergenceError : public NumericalError {
 public:
  DivergenceError(const std::string& msg, Scene last_good, int iteration)
      : NumericalError(msg), last_good_(std::move(last_good)), iteration_(iteration) {}
  const Scene& last_good() const { return last_good_; }
  int iteration() const { return iteration_; }

 private:
  Scene last_good_;
  int iteration_;
};

inline std::vector<ImageMetrics> evaluate_views(const Scene& scene, const std::vector<FitView>& views,
                                                RenderMode mode, const TrainConfig& cfg,
                                                ImageMetrics* mean = nullptr) {
  std::vector<ImageMetrics> out;
  ImageMetrics acc;
  RenderOptions opt = cfg.render;
  opt.threads = cfg.threads;
  for (const FitView& v : views) {
    out.push_back(image_metrics(render(scene, v.camera, mode, opt).color, v.target));
    acc.mse += out.back().mse;
    acc.ssim += out.back().ssim;
  }
  if (mean && !out.empty()) {
    mean->mse = acc.mse / out.size();
    mean->ssim = acc.ssim / out.size();
    mean->psnr = psnr_from_mse(mean->mse);
  }
  return out;
}

/// Views are used round-robin, one per iteration.
inline FitResult fit_image(Scene init, const std::vector<FitView>& views, const TrainConfig& cfg,
                           RenderMode mode, const Vec3& focus = Vec3::Zero()) {
  cfg.validate();
  if (views.empty()) throw ValidationError("fit: at least one view is required");
  if (init.empty()) throw ValidationError("fit: the initial scene is empty");
  for (const FitView& v : views) {
    v.camera.validate();
    if (v.target.width != v.camera.width || v.target.height != v.camera.height || v.target.channels != 3)
      throw ValidationError("fit: target size does not match its camera");
  }
  std::vector<Camera> cams;
  for (const FitView& v : views) cams.push_back(v.camera);
  FitResult res;
  res.extent = (cfg.scene_extent > 0.0 ? cfg.scene_extent : camera_extent(cams, focus)) *
               cfg.scene_extent_multiplier;
  res.scene = std::move(init);
  res.state = OptimizerState::for_scene(res.scene);
  RenderOptions opt = cfg.render;
  opt.threads = cfg.threads;
  const int densify_until = cfg.densify_until > 0 ? cfg.densify_until : cfg.iterations;
  Scene last_good = res.scene;
  for (int it = 0; it < cfg.iterations; ++it) {
    const FitView& view = views[static_cast<std::size_t>(it) % views.size()];
    const RenderOutput fwd = render(res.scene, view.camera, mode, opt);
    Image d_img;
    const double loss = evaluate_loss(fwd.color, view.target, cfg.loss, &d_img);
    if (!std::isfinite(loss))
      throw DivergenceError("fit: loss became non-finite at iteration " + std::to_string(it), last_good, it);
    last_good = res.scene;
    res.report.loss.push_back(loss);
    const SceneGrad grad = backward(res.scene, view.camera, mode, fwd, d_img, {}, opt);
    step(res.scene, res.state, grad, mode, cfg, it, res.extent);
    const int done = it + 1;
    if (cfg.densify && done % cfg.densify_interval == 0 && done < densify_until) {
      auto ev = densify_and_prune(res.scene, res.state, mode, cfg, done, res.extent);
      res.events.insert(res.events.end(), ev.begin(), ev.end());
    }
    if (cfg.opacity_reset_interval > 0 && done % cfg.opacity_reset_interval == 0 && done < cfg.iterations)
      reset_opacity(res.scene, mode);
    res.report.primitive_count.push_back(static_cast<int>(res.scene.size()));
  }
  res.report.final_metrics = evaluate_views(res.scene, views, mode, cfg, &res.report.mean_metrics);
  return res;
}

// ---------------------------------------------------------------------------
// Desk-scale protocols

/// White disk of `radius` pixels centered in a black w x h image.
inline Image disk_target(int w, int h, double radius) {
  Image im(w, h, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double dx = x + 0.5 - 0.5 * w, dy = y + 0.5 - 0.5 * h;
      if (dx * dx + dy * dy <= radius * radius)
        for (int c = 0; c < 3; ++c) im.at(x, y, c) = 1.0;
    }
  return im;
}

/// Piecewise-constant image: rectangle, disk and triangle on a dark plane.
inline Image shapes_target(int w, int h) {
  Image im(w, h, 3);
  const Vec3 bg(0.1, 0.1, 0.1);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double u = (x + 0.5) / w, v = (y + 0.5) / h;
      Vec3 c = bg;
      if (u > 0.08 && u < 0.45 && v > 0.1 && v < 0.42) c = Vec3(0.9, 0.2, 0.15);
      const double du = u - 0.7, dv = v - 0.3;
      if (du * du + dv * dv < 0.19 * 0.19) c = Vec3(0.15, 0.35, 0.95);
      // Triangle with apex (0.5, 0.52), base y = 0.92 from x = 0.2 to 0.8.
      if (v > 0.52 && v < 0.92) {
        const double half = 0.3 * (v - 0.52) / 0.4;
        if (std::abs(u - 0.5) < half) c = Vec3(0.95, 0.85, 0.2);
      }
      for (int k = 0; k < 3; ++k) im.at(x, y, k) = c[k];
    }
  }
  return im;
}

struct SlabInit {
  int count = 1;
  double depth = 4.0;
  double thickness = 0.25;
  Vec3 color = Vec3::Constant(0.5);
  double theta = 0.1;
  double opacity = 0.1;
  /// Isotropic scale in pixels at the slab depth. 0: sqrt(pixels / count) / 2.
  double scale_pixels = 0.0;
  bool centered = false;  // single primitive on the axis
};

/// Primitives uniform over the camera's view at the slab depth, identical
/// for both render modes.
inline Scene init_slab(const Camera& cam, const SlabInit& s, std::uint64_t seed) {
  Scene scene;
  CounterRng rng(seed, 0x51ab);
  const double footprint = s.depth / cam.fx;
  const double px = s.scale_pixels > 0.0 ? s.scale_pixels
                                         : 0.5 * std::sqrt(static_cast<double>(cam.pixel_count()) / s.count);
  for (int i = 0; i < s.count; ++i) {
    Gaussian3D g;
    if (s.centered) {
      g.mean = Vec3((0.5 * cam.width - cam.cx) * footprint, (0.5 * cam.height - cam.cy) * footprint, s.depth);
    } else {
      const double u = rng.uniform(0, cam.width), v = rng.uniform(0, cam.height);
      const double z = s.depth + rng.uniform(-0.5, 0.5) * s.thickness;
      g.mean = Vec3((u - cam.cx) / cam.fx * z, (v - cam.cy) / cam.fy * z, z);
    }
    g.mean = cam.rotation.transpose() * (g.mean - cam.translation);
    g.scale = Vec3::Constant(px * footprint);
    g.theta = s.theta;
    g.splat_opacity = s.opacity;
    g.color = s.color;
    scene.gaussians.push_back(g);
  }
  return scene;
}

struct ComparisonResult {
  FitResult analytic;
  FitResult splat;
};

inline ComparisonResult compare_fit(const Scene& init, const std::vector<FitView>& views,
                                    const TrainConfig& cfg, const Vec3& focus) {
  return {fit_image(init, views, cfg, RenderMode::analytic, focus),
          fit_image(init, views, cfg, RenderMode::splat, focus)};
}

/// Single Gaussian fitting a white disk (no densification).
struct DiskProtocol {
  int size = 64;
  double radius = 20.0;
  double focal = 64.0;
  double depth = 4.0;
  double init_scale_pixels = 8.0;
  int iterations = 1500;
};

/// Initial scene, views and extent focus of a protocol.
struct FitSetup {
  Scene init;
  std::vector<FitView> views;
  Vec3 focus = Vec3::Zero();
};

inline FitSetup disk_setup(const DiskProtocol& p, std::uint64_t seed) {
  const Camera cam = Camera::simple(p.size, p.size, p.focal);
  SlabInit s;
  s.count = 1;
  s.depth = p.depth;
  s.centered = true;
  s.scale_pixels = p.init_scale_pixels;
  FitSetup f{init_slab(cam, s, seed), {{cam, disk_target(p.size, p.size, p.radius)}}, Vec3(0, 0, p.depth)};
  f.init.background = Vec3::Zero();
  return f;
}

inline ComparisonResult run_disk_protocol(const DiskProtocol& p, TrainConfig cfg) {
  cfg.iterations = p.iterations;
  cfg.densify = false;
  const FitSetup f = disk_setup(p, cfg.seed);
  return compare_fit(f.init, f.views, cfg, f.focus);
}

/// Fixed budget of primitives fitting the shapes image (no densification).
struct ShapesProtocol {
  int size = 64;
  int count = 500;
  double focal = 64.0;
  double depth = 4.0;
  int iterations = 1000;
};

inline FitSetup shapes_setup(const ShapesProtocol& p, std::uint64_t seed) {
  const Camera cam = Camera::simple(p.size, p.size, p.focal);
  SlabInit s;
  s.count = p.count;
  s.depth = p.depth;
  FitSetup f{init_slab(cam, s, seed), {{cam, shapes_target(p.size, p.size)}}, Vec3(0, 0, p.depth)};
  f.init.background = Vec3(0.1, 0.1, 0.1);
  return f;
}

inline ComparisonResult run_shapes_protocol(const ShapesProtocol& p, TrainConfig cfg) {
  cfg.iterations = p.iterations;
  cfg.densify = false;
  const FitSetup f = shapes_setup(p, cfg.seed);
  return compare_fit(f.init, f.views, cfg, f.focus);
}

}  // namespace volgauss
