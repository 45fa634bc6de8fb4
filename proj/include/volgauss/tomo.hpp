#pragma once

// Tomography: the pixel value is the line integral of the mixture density,
// I(p) = sum_j kappa_j sqrt(2 pi) beta_j peak_j, so no sorting or
// compositing is involved. Synthetic phantoms provide exact projections and
// a voxel reference for 3D PSNR / SSIM.

#include "volgauss/camera.hpp"
#include "volgauss/core.hpp"
#include "volgauss/errors.hpp"
#include "volgauss/fd_check.hpp"
#include "volgauss/grad.hpp"
#include "volgauss/image.hpp"
#include "volgauss/loss.hpp"
#include "volgauss/metrics.hpp"
#include "volgauss/optim.hpp"
#include "volgauss/parallel.hpp"
#include "volgauss/raster.hpp"
#include "volgauss/rng.hpp"
#include "volgauss/scene.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace volgauss {

struct Projection {
  Camera camera;
  Image image;  // one channel
};

// ---------------------------------------------------------------------------
// Forward model

inline RenderOptions tomo_render_options(int threads = 0) {
  RenderOptions opt;
  opt.analytic_bin_epsilon = 1e-12;
  opt.transmittance_min = 0.0;
  opt.threads = threads;
  return opt;
}

/// Line integral image of the mixture, summed per pixel over its tile list.
inline Image tomo_forward(const Scene& scene, const Camera& cam, const RenderOptions& opt = tomo_render_options()) {
  cam.validate();
  const auto prims = prepare_primitives(scene, cam, RenderMode::analytic, opt);
  const TileGrid grid = bin_tiles(prims, cam, opt.tile_size);
  Image out(cam.width, cam.height, 1);
  detail::for_each_tile_pixel(cam, grid, opt.threads, [&](int, int px, int py) {
    const Ray ray = cam.pixel_ray(px, py);
    double sum = 0.0;
    for (const TileEntry& e : grid.for_pixel(px, py)) {
      const PreparedPrimitive& p = prims[e.index];
      sum += optical_depth(ray_quadratic(p.mean, p.inverse_cov, ray).ray_gaussian(), p.kappa);
    }
    out.at(px, py) = sum;
  });
  return out;
}

/// Gradient of sum_p d_image(p) I(p) with respect to every primitive.
inline SceneGrad tomo_backward(const Scene& scene, const Camera& cam, const Image& d_image,
                               const RenderOptions& opt = tomo_render_options()) {
  if (d_image.width != cam.width || d_image.height != cam.height || d_image.channels != 1)
    throw ValidationError("tomo_backward: upstream gradient must be HxW");
  detail::require_finite(d_image.data, "projection");
  const auto prims = prepare_primitives(scene, cam, RenderMode::analytic, opt);
  const TileGrid grid = bin_tiles(prims, cam, opt.tile_size);
  std::vector<std::vector<RawGrad>> local(grid.tile_count());
  parallel_for(grid.tile_count(), opt.threads, [&](int t) {
    const auto& list = grid.lists[t];
    auto& acc = local[t];
    acc.assign(list.size(), RawGrad{});
    const int tx = t % grid.tiles_x, ty = t / grid.tiles_x;
    const int x1 = std::min(cam.width, (tx + 1) * grid.tile_size);
    const int y1 = std::min(cam.height, (ty + 1) * grid.tile_size);
    for (int py = ty * grid.tile_size; py < y1; ++py) {
      for (int px = tx * grid.tile_size; px < x1; ++px) {
        const double g = d_image.at(px, py);
        if (g == 0.0) continue;
        const Ray ray = cam.pixel_ray(px, py);
        for (std::size_t j = 0; j < list.size(); ++j) {
          const PreparedPrimitive& p = prims[list[j].index];
          const RayQuadratic q = ray_quadratic(p.mean, p.inverse_cov, ray);
          const double tau = optical_depth(q.ray_gaussian(), p.kappa);
          accumulate_optical_depth_grad(acc[j], q, ray.direction, p.kappa, tau, g);
        }
      }
    }
  });
  const std::vector<RawGrad> total = detail::reduce_tiles(grid, local, scene.size());
  SceneGrad out;
  out.params.resize(scene.size());
  out.visible.assign(scene.size(), 0);
  for (std::size_t i = 0; i < scene.size(); ++i) {
    if (!prims[i].visible) continue;
    out.visible[i] = 1;
    out.params[i] = finalize_analytic(scene.gaussians[i], total[i]);
  }
  return out;
}

/// Finite-difference check of tomo_backward under `loss_spec` against a
/// one-channel target, with footprint culling disabled.
inline FdReport tomo_fd_check(const Scene& scene, const Camera& cam, const Image& target,
                              const LossSpec& loss_spec, const FdTolerances& tol = {}, int threads = 0) {
  if (scene.size() > 32 || cam.width > 64 || cam.height > 64)
    throw ValidationError("tomo_fd_check: limited to 32 primitives and 64x64 images");
  RenderOptions opt = RenderOptions::smooth();
  opt.threads = threads;
  Image d;
  evaluate_loss(tomo_forward(scene, cam, opt), target, loss_spec, &d);
  const SceneGrad grad = tomo_backward(scene, cam, d, opt);
  auto loss = [&](const Scene& s) { return evaluate_loss(tomo_forward(s, cam, opt), target, loss_spec); };
  return fd_compare(scene, grad.params, loss, RenderMode::analytic, tol);
}

// ---------------------------------------------------------------------------
// Phantoms

enum class PhantomShape { ellipsoid, gaussian };

/// Constant density inside an ellipsoid with the given semi-axes, or a
/// Gaussian blob of peak `density` with the given per-axis std. deviations.
struct PhantomComponent {
  PhantomShape shape = PhantomShape::ellipsoid;
  Vec3 center = Vec3::Zero();
  Vec3 axes = Vec3::Ones();
  Vec4 rotation = Vec4(1, 0, 0, 0);
  double density = 1.0;
};

struct Phantom {
  std::vector<PhantomComponent> components;

  /// Densities of overlapping components add.
  double density(const Vec3& x) const {
    double sum = 0.0;
    for (const auto& c : components) {
      const Vec3 local = rotation_matrix(c.rotation).transpose() * (x - c.center);
      const double r2 = local.cwiseQuotient(c.axes).squaredNorm();
      if (c.shape == PhantomShape::ellipsoid) {
        if (r2 <= 1.0) sum += c.density;
      } else {
        sum += c.density * std::exp(-0.5 * r2);
      }
    }
    return sum;
  }

  /// Exact line integral along the full ray.
  double line_integral(const Ray& ray) const {
    double sum = 0.0;
    for (const auto& c : components) {
      const Mat3 rt = rotation_matrix(c.rotation).transpose();
      if (c.shape == PhantomShape::gaussian) {
        Gaussian3D g;
        g.mean = c.center;
        g.scale = c.axes;
        g.rotation = c.rotation;
        sum += optical_depth(project_to_ray(g, ray), c.density);
        continue;
      }
      const Vec3 o = (rt * (ray.origin - c.center)).cwiseQuotient(c.axes);
      const Vec3 d = (rt * ray.direction).cwiseQuotient(c.axes);
      const double a = d.squaredNorm(), b = o.dot(d), cc = o.squaredNorm() - 1.0;
      const double disc = b * b - a * cc;
      if (disc > 0.0) sum += c.density * 2.0 * std::sqrt(disc) / a;
    }
    return sum;
  }

  /// True when `x` lies inside a component (3 sigma for blobs).
  bool contains(const Vec3& x) const {
    for (const auto& c : components) {
      const Vec3 local = rotation_matrix(c.rotation).transpose() * (x - c.center);
      const double r2 = local.cwiseQuotient(c.axes).squaredNorm();
      if (r2 <= (c.shape == PhantomShape::ellipsoid ? 1.0 : 9.0)) return true;
    }
    return false;
  }

  static Phantom gaussian_blob() {
    Phantom p;
    PhantomComponent c;
    c.shape = PhantomShape::gaussian;
    c.center = Vec3(0.05, -0.03, 0.02);
    c.axes = Vec3(0.32, 0.24, 0.2);
    c.rotation = Vec4(0.95, 0.1, 0.2, 0.15).normalized();
    c.density = 1.0;
    p.components.push_back(c);
    return p;
  }

  static Phantom nested_ellipsoids() {
    Phantom p;
    PhantomComponent outer;
    outer.axes = Vec3(0.75, 0.6, 0.5);
    outer.rotation = Vec4(0.98, 0.0, 0.0, 0.2).normalized();
    outer.density = 0.5;
    PhantomComponent inner;
    inner.center = Vec3(0.2, 0.05, 0.0);
    inner.axes = Vec3(0.3, 0.25, 0.25);
    inner.density = 0.5;
    PhantomComponent small;
    small.center = Vec3(-0.35, -0.1, 0.1);
    small.axes = Vec3(0.15, 0.15, 0.18);
    small.density = 0.3;
    p.components = {outer, inner, small};
    return p;
  }
};

struct TomoGeometry {
  int width = 64;
  int height = 64;
  double source_distance = 4.0;
  /// Half-width of the field of view at the rotation axis.
  double field_half_width = 1.1;
  bool parallel_beam = false;
  /// Angular range of the circular trajectory around the z axis.
  double arc_degrees = 360.0;
  double noise_sigma = 0.0;
  std::uint64_t seed = 0;

  std::vector<std::string> problems() const {
    std::vector<std::string> p;
    if (width < 1 || height < 1) p.push_back("geometry: width and height must be >= 1");
    if (!(source_distance > 0.0)) p.push_back("geometry: source_distance must be > 0");
    if (!(field_half_width > 0.0)) p.push_back("geometry: field_half_width must be > 0");
    if (!(arc_degrees > 0.0)) p.push_back("geometry: arc_degrees must be > 0");
    if (!(noise_sigma >= 0.0)) p.push_back("geometry: noise_sigma must be >= 0");
    return p;
  }
};

inline std::vector<Camera> circular_trajectory(int n_views, const TomoGeometry& g) {
  std::vector<Camera> cams;
  const double arc = g.arc_degrees * std::numbers::pi / 180.0;
  const bool full = std::abs(g.arc_degrees - 360.0) < 1e-9;
  for (int i = 0; i < n_views; ++i) {
    const double phi = arc * i / (full ? n_views : std::max(1, n_views - 1));
    const Vec3 eye(g.source_distance * std::cos(phi), g.source_distance * std::sin(phi), 0.0);
    const double focal = 0.5 * g.width * g.source_distance / g.field_half_width;
    Camera c = Camera::look_at(g.width, g.height, focal, eye, Vec3::Zero(), Vec3(0, 0, 1));
    if (g.parallel_beam) {
      c.model = CameraModel::orthographic;
      c.fx = c.fy = 0.5 * g.width / g.field_half_width;
    }
    cams.push_back(c);
  }
  return cams;
}

inline std::vector<Projection> make_phantom_projections(const Phantom& phantom, int n_views,
                                                        const TomoGeometry& geo) {
  if (n_views < 1) throw ValidationError("projections: n_views must be >= 1");
  if (const auto p = geo.problems(); !p.empty()) throw ValidationError(p.front());
  std::vector<Projection> out;
  CounterRng noise(geo.seed, 0x70);
  for (const Camera& cam : circular_trajectory(n_views, geo)) {
    if (!geo.parallel_beam && phantom.contains(cam.center()))
      throw ValidationError("projections: source position lies inside the phantom");
    Projection p{cam, Image(cam.width, cam.height, 1)};
    for (int y = 0; y < cam.height; ++y)
      for (int x = 0; x < cam.width; ++x) {
        double v = phantom.line_integral(cam.pixel_ray(x, y));
        if (geo.noise_sigma > 0.0) v += geo.noise_sigma * noise.normal();
        p.image.at(x, y) = v;
      }
    out.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Density grids

struct GridSpec {
  int n = 64;
  Vec3 lo = Vec3::Constant(-1.0);
  Vec3 hi = Vec3::Constant(1.0);

  Vec3 voxel_size() const { return (hi - lo) / n; }
  Vec3 center(int i, int j, int k) const {
    return lo + voxel_size().cwiseProduct(Vec3(i + 0.5, j + 0.5, k + 0.5));
  }
};

struct DensityGrid {
  GridSpec spec;
  std::vector<double> values;  // x fastest

  double& at(int i, int j, int k) { return values[(static_cast<std::size_t>(k) * spec.n + j) * spec.n + i]; }
  double at(int i, int j, int k) const {
    return values[(static_cast<std::size_t>(k) * spec.n + j) * spec.n + i];
  }
  double max_value() const { return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end()); }
};

inline DensityGrid voxelize(const Phantom& phantom, const GridSpec& spec, int threads = 0) {
  DensityGrid g{spec, std::vector<double>(static_cast<std::size_t>(spec.n) * spec.n * spec.n, 0.0)};
  parallel_for(spec.n, threads, [&](int k) {
    for (int j = 0; j < spec.n; ++j)
      for (int i = 0; i < spec.n; ++i) g.at(i, j, k) = phantom.density(spec.center(i, j, k));
  });
  return g;
}

inline constexpr double kVoxelCullMahalanobis2 = 25.0;

/// sigma(x) = sum kappa_i G_i(x) at voxel centers; terms beyond 5 sigma
/// (Mahalanobis) of a primitive are skipped.
inline DensityGrid voxelize(const Scene& scene, const GridSpec& spec, int threads = 0,
                            bool exhaustive = false) {
  struct Item {
    Vec3 mean;
    Mat3 inv;
    double kappa;
    Vec3 half;  // axis-aligned half extent of the 5 sigma ellipsoid
  };
  std::vector<Item> items;
  for (const Gaussian3D& g : scene.gaussians) {
    const Covariance cv = covariance(g);
    const Vec3 half = (kVoxelCullMahalanobis2 * cv.matrix.diagonal()).cwiseSqrt();
    items.push_back({g.mean, cv.inverse, density_kappa(g.theta, g.scale), half});
  }
  DensityGrid grid{spec, std::vector<double>(static_cast<std::size_t>(spec.n) * spec.n * spec.n, 0.0)};
  const Vec3 vs = spec.voxel_size();
  auto index_range = [&](double lo, double hi, int axis, int& a, int& b) {
    a = std::max(0, static_cast<int>(std::floor((lo - spec.lo[axis]) / vs[axis] - 0.5)));
    b = std::min(spec.n - 1, static_cast<int>(std::ceil((hi - spec.lo[axis]) / vs[axis] - 0.5)));
  };
  parallel_for(spec.n, threads, [&](int k) {
    const double z = spec.center(0, 0, k).z();
    for (const Item& it : items) {
      int i0 = 0, i1 = spec.n - 1, j0 = 0, j1 = spec.n - 1;
      if (!exhaustive) {
        if (std::abs(z - it.mean.z()) > it.half.z()) continue;
        index_range(it.mean.x() - it.half.x(), it.mean.x() + it.half.x(), 0, i0, i1);
        index_range(it.mean.y() - it.half.y(), it.mean.y() + it.half.y(), 1, j0, j1);
      }
      for (int j = j0; j <= j1; ++j)
        for (int i = i0; i <= i1; ++i) {
          const Vec3 d = spec.center(i, j, k) - it.mean;
          const double m2 = d.dot(it.inv * d);
          if (!exhaustive && m2 > kVoxelCullMahalanobis2) continue;
          grid.at(i, j, k) += it.kappa * std::exp(-0.5 * m2);
        }
    }
  });
  return grid;
}

/// PSNR with the reference maximum as peak.
inline double psnr3d(const DensityGrid& x, const DensityGrid& ref) {
  if (x.values.size() != ref.values.size()) throw ValidationError("psnr3d: grid sizes differ");
  double s = 0.0;
  for (std::size_t i = 0; i < x.values.size(); ++i) s += std::pow(x.values[i] - ref.values[i], 2);
  return psnr_from_mse(s / x.values.size(), ref.max_value());
}

/// Mean 2D SSIM over every slice along each of the three axes, with both
/// grids scaled by the reference maximum.
inline double ssim3d(const DensityGrid& x, const DensityGrid& ref) {
  if (x.values.size() != ref.values.size()) throw ValidationError("ssim3d: grid sizes differ");
  const int n = ref.spec.n;
  const double peak = ref.max_value() > 0.0 ? ref.max_value() : 1.0;
  double sum = 0.0;
  int count = 0;
  Image a(n, n, 1), b(n, n, 1);
  for (int axis = 0; axis < 3; ++axis) {
    for (int s = 0; s < n; ++s) {
      for (int v = 0; v < n; ++v)
        for (int u = 0; u < n; ++u) {
          int idx[3];
          idx[axis] = s;
          idx[(axis + 1) % 3] = u;
          idx[(axis + 2) % 3] = v;
          a.at(u, v) = x.at(idx[0], idx[1], idx[2]) / peak;
          b.at(u, v) = ref.at(idx[0], idx[1], idx[2]) / peak;
        }
      sum += ssim(a, b);
      ++count;
    }
  }
  return sum / count;
}

// ---------------------------------------------------------------------------
// Reconstruction

enum class TomoInit { random, lattice };

struct TomoConfig {
  TrainConfig train = [] {
    TrainConfig t;
    t.iterations = 2000;
    t.max_primitives = 1000;
    // theta sits near 0.05 for tomography densities, where 0.03 steps oscillate.
    t.lr_theta = 1e-3;
    t.densify = false;
    return t;
  }();
  TomoInit init = TomoInit::lattice;
  /// Lattice init rounds this down to a cube.
  int init_count = 512;
  /// 0: half the lattice spacing (random init uses 0.12).
  double init_scale = 0.0;
  /// Initial theta; the density is then rescaled so the mean rendered
  /// projection matches the data.
  double init_theta = 0.05;
  Vec3 init_lo = Vec3::Constant(-0.7);
  Vec3 init_hi = Vec3::Constant(0.7);
  GridSpec grid;

  std::vector<std::string> problems() const {
    auto p = train.problems();
    if (init_count < 1) p.push_back("init_count must be >= 1");
    if (!(init_scale >= 0.0)) p.push_back("init_scale must be >= 0");
    if (!(init_theta >= 0.0 && init_theta <= 1.0)) p.push_back("init_theta must be in [0, 1]");
    if (!(init_lo.array() < init_hi.array()).all()) p.push_back("init_lo must be below init_hi");
    if (grid.n < 1) p.push_back("grid.n must be >= 1");
    if (!(grid.lo.array() < grid.hi.array()).all()) p.push_back("grid.lo must be below grid.hi");
    return p;
  }
};

struct TomoReport {
  std::vector<double> loss;
  std::vector<int> primitive_count;
  double psnr3d = 0.0;
  double ssim3d = 0.0;
  double projection_mse = 0.0;
};

struct TomoResult {
  Scene scene;
  DensityGrid grid;
  TomoReport report;
  std::vector<DensifyEvent> events;
};

inline Scene tomo_initial_scene(const TomoConfig& cfg) {
  Scene s;
  auto add = [&](const Vec3& mean, double scale) {
    Gaussian3D g;
    g.mean = mean;
    g.scale = Vec3::Constant(scale);
    g.theta = cfg.init_theta;
    g.color = Vec3::Ones();
    s.gaussians.push_back(g);
  };
  if (cfg.init == TomoInit::random) {
    CounterRng rng(cfg.train.seed, 0x7030);
    const double scale = cfg.init_scale > 0.0 ? cfg.init_scale : 0.12;
    for (int i = 0; i < cfg.init_count; ++i) {
      Vec3 m;
      for (int k = 0; k < 3; ++k) m[k] = rng.uniform(cfg.init_lo[k], cfg.init_hi[k]);
      add(m, scale);
    }
    return s;
  }
  int n = 1;
  while ((n + 1) * (n + 1) * (n + 1) <= cfg.init_count) ++n;
  const Vec3 step = (cfg.init_hi - cfg.init_lo) / n;
  const double scale = cfg.init_scale > 0.0 ? cfg.init_scale : 0.5 * step.minCoeff();
  for (int k = 0; k < n; ++k)
    for (int j = 0; j < n; ++j)
      for (int i = 0; i < n; ++i)
        add(cfg.init_lo + step.cwiseProduct(Vec3(i + 0.5, j + 0.5, k + 0.5)), scale);
  return s;
}

/// Scales every kappa by mean(data) / mean(rendered) over the projections.
inline void calibrate_density(Scene& scene, const std::vector<Projection>& projections,
                              const RenderOptions& opt) {
  double data = 0.0, model = 0.0;
  for (const Projection& p : projections) {
    const Image r = tomo_forward(scene, p.camera, opt);
    for (std::size_t i = 0; i < r.size(); ++i) {
      data += p.image.data[i];
      model += r.data[i];
    }
  }
  if (!(model > 0.0) || !(data > 0.0)) return;
  const double f = data / model;
  for (Gaussian3D& g : scene.gaussians) {
    bool clamped = false;
    g.theta = solve_theta(f * density_kappa(g.theta, g.scale), g.scale, clamped);
  }
}

/// Fits a mixture to the projections. When `reference` is given the
/// fitted density is compared against it on cfg.grid.
inline TomoResult reconstruct(const std::vector<Projection>& projections, const TomoConfig& cfg,
                              const DensityGrid* reference = nullptr) {
  if (const auto p = cfg.problems(); !p.empty()) {
    std::string msg = "invalid tomography config:";
    for (const auto& s : p) msg += "\n  " + s;
    throw ValidationError(msg);
  }
  if (projections.size() < 2) throw ValidationError("reconstruct: at least 2 projections are required");
  const TrainConfig& tc = cfg.train;
  // Images are scaled by the largest measurement so SSIM constants apply.
  double peak = 0.0;
  std::vector<Camera> cams;
  for (const Projection& p : projections) {
    if (p.image.channels != 1 || p.image.width != p.camera.width || p.image.height != p.camera.height)
      throw ValidationError("reconstruct: projection image does not match its camera");
    for (double v : p.image.data) peak = std::max(peak, v);
    cams.push_back(p.camera);
  }
  if (!(peak > 0.0)) peak = 1.0;
  const double extent = (tc.scene_extent > 0.0 ? tc.scene_extent : camera_extent(cams, Vec3::Zero())) *
                        tc.scene_extent_multiplier;
  const RenderOptions opt = tomo_render_options(tc.threads);
  TomoResult res;
  res.scene = tomo_initial_scene(cfg);
  calibrate_density(res.scene, projections, opt);
  OptimizerState state = OptimizerState::for_scene(res.scene);
  const int densify_until = tc.densify_until > 0 ? tc.densify_until : tc.iterations;
  std::vector<Image> targets;
  for (const Projection& p : projections) {
    Image t = p.image;
    for (double& v : t.data) v /= peak;
    targets.push_back(std::move(t));
  }
  Scene last_good = res.scene;
  for (int it = 0; it < tc.iterations; ++it) {
    const std::size_t v = static_cast<std::size_t>(it) % projections.size();
    const Camera& cam = projections[v].camera;
    Image rendered = tomo_forward(res.scene, cam, opt);
    for (double& x : rendered.data) x /= peak;
    Image d;
    const double loss = evaluate_loss(rendered, targets[v], tc.loss, &d);
    if (!std::isfinite(loss))
      throw DivergenceError("reconstruct: loss became non-finite at iteration " + std::to_string(it), last_good, it);
    last_good = res.scene;
    res.report.loss.push_back(loss);
    for (double& x : d.data) x /= peak;
    const SceneGrad grad = tomo_backward(res.scene, cam, d, opt);
    step(res.scene, state, grad, RenderMode::analytic, tc, it, extent);
    const int done = it + 1;
    if (tc.densify && done % tc.densify_interval == 0 && done < densify_until) {
      auto ev = densify_and_prune(res.scene, state, RenderMode::analytic, tc, done, extent);
      res.events.insert(res.events.end(), ev.begin(), ev.end());
    }
    res.report.primitive_count.push_back(static_cast<int>(res.scene.size()));
  }
  double err = 0.0;
  std::size_t count = 0;
  for (const Projection& p : projections) {
    const Image r = tomo_forward(res.scene, p.camera, opt);
    for (std::size_t i = 0; i < r.size(); ++i) err += std::pow(r.data[i] - p.image.data[i], 2);
    count += r.size();
  }
  res.report.projection_mse = err / count;
  res.grid = voxelize(res.scene, cfg.grid, tc.threads);
  if (reference) {
    res.report.psnr3d = psnr3d(res.grid, *reference);
    res.report.ssim3d = ssim3d(res.grid, *reference);
  }
  return res;
}

}  // namespace volgauss
