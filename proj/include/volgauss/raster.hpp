#pragma once

// Tile-based forward rasterizer. Primitives are culled and binned into
// 16x16 tiles, each tile list is depth sorted once, and every pixel
// composites its tile's primitives front to back with either the analytic
// (integrated) alpha or the splatting alpha.

#include "volgauss/camera.hpp"
#include "volgauss/core.hpp"
#include "volgauss/image.hpp"
#include "volgauss/parallel.hpp"
#include "volgauss/scene.hpp"
#include "volgauss/splat.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

namespace volgauss {

enum class RenderMode { analytic, splat };
enum class SortOrder { view_depth, ray_gamma };

inline const char* to_string(RenderMode m) { return m == RenderMode::analytic ? "analytic" : "splat"; }

struct RenderOptions {
  int tile_size = 16;
  double alpha_max = 0.99;
  /// Splat contributions below this are skipped.
  double splat_alpha_min = 1.0 / 255.0;
  /// Early termination on running transmittance; 0 disables it.
  double transmittance_min = 1e-4;
  /// Analytic footprint: a tile is skipped only where the primitive's
  /// optical depth provably stays below this value.
  double analytic_bin_epsilon = 1e-5;
  /// Every visible primitive in every tile. Used by finite differences so
  /// that footprints cannot change under perturbation.
  bool full_coverage = false;
  /// ray_gamma re-sorts each pixel's list by the per-ray 1D mean (analytic
  /// mode only).
  SortOrder sort = SortOrder::view_depth;
  int threads = 0;

  /// Settings that make the forward pass a smooth function of the scene.
  static RenderOptions smooth() {
    RenderOptions o;
    o.splat_alpha_min = 0.0;
    o.transmittance_min = 0.0;
    o.full_coverage = true;
    return o;
  }
};

/// Per-camera data for one primitive.
struct PreparedPrimitive {
  bool visible = false;
  Vec3 mean = Vec3::Zero();
  Mat3 cov = Mat3::Identity();
  Mat3 inverse_cov = Mat3::Identity();
  double kappa = 0.0;
  Vec3 color = Vec3::Zero();
  double opacity = 0.0;
  double depth = 0.0;
  Splat2D splat;
  // Screen-space footprint in continuous pixel coordinates.
  bool full_screen = false;
  double u_min = 0.0, u_max = 0.0, v_min = 0.0, v_max = 0.0;
  // Circle used by the splat footprint.
  bool circular = false;
  double radius = 0.0;
};

namespace detail {

/// Bounding box of the projection of {x : (x-mu)^T Sigma^-1 (x-mu) <= r2}.
/// Returns false when the ellipsoid reaches the camera plane, in which case
/// the projection is unbounded.
inline bool ellipsoid_screen_box(const Vec3& view_mean, const Mat3& view_cov, double r2,
                                 const Camera& cam, PreparedPrimitive& p) {
  if (cam.model == CameraModel::orthographic) {
    const double hx = std::sqrt(r2 * view_cov(0, 0)) * cam.fx;
    const double hy = std::sqrt(r2 * view_cov(1, 1)) * cam.fy;
    const Vec2 c = project_point(view_mean, cam);
    p.u_min = c.x() - hx;
    p.u_max = c.x() + hx;
    p.v_min = c.y() - hy;
    p.v_max = c.y() + hy;
    return true;
  }
  const double z_extent = std::sqrt(r2 * view_cov(2, 2));
  if (view_mean.z() - z_extent <= 1e-9 * std::max(1.0, view_mean.z())) return false;
  Mat3 k = Mat3::Identity();
  k(0, 0) = cam.fx;
  k(1, 1) = cam.fy;
  k(0, 2) = cam.cx;
  k(1, 2) = cam.cy;
  const Mat3 dual = k * (r2 * view_cov - view_mean * view_mean.transpose()) * k.transpose();
  const double c33 = dual(2, 2);
  if (!(c33 < 0.0)) return false;
  auto range = [&](int i, double& lo, double& hi) {
    const double disc = std::max(0.0, dual(i, 2) * dual(i, 2) - dual(i, i) * c33);
    const double a = (dual(i, 2) + std::sqrt(disc)) / c33;
    const double b = (dual(i, 2) - std::sqrt(disc)) / c33;
    lo = std::min(a, b);
    hi = std::max(a, b);
  };
  range(0, p.u_min, p.u_max);
  range(1, p.v_min, p.v_max);
  const double pad = 1e-7 * (1.0 + std::abs(p.u_max) + std::abs(p.v_max));
  p.u_min -= pad;
  p.u_max += pad;
  p.v_min -= pad;
  p.v_max += pad;
  return true;
}

}  // namespace detail

/// Squared Mahalanobis radius outside of which the optical depth of the
/// primitive is below epsilon on every ray.
inline double analytic_footprint_r2(double kappa, const Vec3& scale, double epsilon) {
  const double bound = kappa * kSqrt2Pi * floored_scale(scale).maxCoeff();
  if (!(epsilon > 0.0)) return std::numeric_limits<double>::infinity();
  return std::max(9.0, 2.0 * std::log(std::max(bound / epsilon, 1.0)));
}

inline std::vector<PreparedPrimitive> prepare_primitives(const Scene& scene, const Camera& cam,
                                                         RenderMode mode,
                                                         const RenderOptions& opt) {
  std::vector<PreparedPrimitive> out(scene.size());
  for (std::size_t i = 0; i < scene.size(); ++i) {
    const Gaussian3D& g = scene.gaussians[i];
    PreparedPrimitive& p = out[i];
    const Vec3 view_mean = cam.to_camera(g.mean);
    p.depth = view_mean.z();
    if (!(p.depth > cam.z_near)) continue;
    const Covariance cv = covariance(g);
    p.visible = true;
    p.mean = g.mean;
    p.cov = cv.matrix;
    p.inverse_cov = cv.inverse;
    p.color = g.color;
    p.opacity = g.splat_opacity;
    p.kappa = density_kappa(g.theta, g.scale);
    if (mode == RenderMode::splat) {
      p.splat = *splat_project(g.mean, cv.matrix, cam);
      const Eigen::SelfAdjointEigenSolver<Mat2> eig(p.splat.cov2d, Eigen::EigenvaluesOnly);
      p.circular = true;
      p.radius = 3.0 * std::sqrt(std::max(eig.eigenvalues().maxCoeff(), 0.0));
      p.u_min = p.splat.mean2d.x() - p.radius;
      p.u_max = p.splat.mean2d.x() + p.radius;
      p.v_min = p.splat.mean2d.y() - p.radius;
      p.v_max = p.splat.mean2d.y() + p.radius;
    } else if (opt.full_coverage) {
      p.full_screen = true;
    } else {
      const double r2 = analytic_footprint_r2(p.kappa, g.scale, opt.analytic_bin_epsilon);
      const Mat3 view_cov = cam.rotation * cv.matrix * cam.rotation.transpose();
      p.full_screen = !std::isfinite(r2) || !detail::ellipsoid_screen_box(view_mean, view_cov, r2, cam, p);
    }
    if (opt.full_coverage) p.full_screen = true;
  }
  return out;
}

struct TileEntry {
  std::uint32_t index = 0;
  double depth = 0.0;
};

struct TileGrid {
  int tile_size = 16;
  int tiles_x = 0;
  int tiles_y = 0;
  std::vector<std::vector<TileEntry>> lists;

  int tile_count() const { return tiles_x * tiles_y; }
  const std::vector<TileEntry>& at(int tx, int ty) const { return lists[ty * tiles_x + tx]; }
  const std::vector<TileEntry>& for_pixel(int px, int py) const {
    return at(px / tile_size, py / tile_size);
  }
};

/// Lists sorted ascending by view depth of the mean, ties by index.
inline TileGrid bin_tiles(const std::vector<PreparedPrimitive>& prims, const Camera& cam,
                          int tile_size) {
  TileGrid grid;
  grid.tile_size = tile_size;
  grid.tiles_x = (cam.width + tile_size - 1) / tile_size;
  grid.tiles_y = (cam.height + tile_size - 1) / tile_size;
  grid.lists.resize(grid.tile_count());
  for (std::uint32_t i = 0; i < prims.size(); ++i) {
    const PreparedPrimitive& p = prims[i];
    if (!p.visible) continue;
    int tx0 = 0, tx1 = grid.tiles_x - 1, ty0 = 0, ty1 = grid.tiles_y - 1;
    if (!p.full_screen) {
      // Pixel centers c = px + 0.5 inside [u_min, u_max].
      const double big = 4.0 * std::max(cam.width, cam.height) + 4.0;
      auto first = [&](double lo) { return static_cast<int>(std::ceil(std::clamp(lo, -big, big) - 0.5)); };
      auto last = [&](double hi) { return static_cast<int>(std::floor(std::clamp(hi, -big, big) - 0.5)); };
      const int px0 = std::max(0, first(p.u_min)), px1 = std::min(cam.width - 1, last(p.u_max));
      const int py0 = std::max(0, first(p.v_min)), py1 = std::min(cam.height - 1, last(p.v_max));
      if (px0 > px1 || py0 > py1) continue;
      tx0 = px0 / tile_size;
      tx1 = px1 / tile_size;
      ty0 = py0 / tile_size;
      ty1 = py1 / tile_size;
    }
    for (int ty = ty0; ty <= ty1; ++ty) {
      for (int tx = tx0; tx <= tx1; ++tx) {
        if (p.circular && !p.full_screen) {
          // Closest pixel center of the tile to the circle center.
          const double lo_x = tx * tile_size + 0.5;
          const double hi_x = std::min((tx + 1) * tile_size, cam.width) - 0.5;
          const double lo_y = ty * tile_size + 0.5;
          const double hi_y = std::min((ty + 1) * tile_size, cam.height) - 0.5;
          const double dx = std::clamp(p.splat.mean2d.x(), lo_x, hi_x) - p.splat.mean2d.x();
          const double dy = std::clamp(p.splat.mean2d.y(), lo_y, hi_y) - p.splat.mean2d.y();
          if (dx * dx + dy * dy > p.radius * p.radius) continue;
        }
        grid.lists[ty * grid.tiles_x + tx].push_back({i, p.depth});
      }
    }
  }
  for (auto& list : grid.lists) {
    std::stable_sort(list.begin(), list.end(),
                     [](const TileEntry& a, const TileEntry& b) { return a.depth < b.depth; });
  }
  return grid;
}

inline TileGrid bin_tiles(const Scene& scene, const Camera& cam, RenderMode mode,
                          const RenderOptions& opt = {}) {
  return bin_tiles(prepare_primitives(scene, cam, mode, opt), cam, opt.tile_size);
}

inline TileGrid bin_tiles(const Scene& scene, const Camera& cam, int tile_size) {
  RenderOptions opt;
  opt.tile_size = tile_size;
  return bin_tiles(scene, cam, RenderMode::analytic, opt);
}

// ---------------------------------------------------------------------------
// Compositing

struct Contribution {
  double alpha = 0.0;
  Vec3 color = Vec3::Zero();
};

struct CompositeResult {
  Vec3 color = Vec3::Zero();
  double transmittance = 1.0;
  int used = 0;
};

/// Front-to-back accumulation. Stops once the running transmittance falls
/// below `transmittance_min` (after adding the contribution that crossed it).
class Compositor {
 public:
  explicit Compositor(double transmittance_min = 1e-4) : t_min_(transmittance_min) {}

  void add(double alpha, const Vec3& color) {
    result_.color += color * (alpha * result_.transmittance);
    result_.transmittance *= 1.0 - alpha;
    ++result_.used;
  }
  bool done() const { return result_.transmittance < t_min_; }
  double transmittance() const { return result_.transmittance; }

  CompositeResult finish(const Vec3& background) const {
    CompositeResult r = result_;
    r.color += background * r.transmittance;
    return r;
  }

 private:
  double t_min_;
  CompositeResult result_;
};

inline CompositeResult composite_pixel(std::span<const Contribution> sorted, const Vec3& background,
                                       double transmittance_min = 1e-4) {
  Compositor comp(transmittance_min);
  for (const Contribution& c : sorted) {
    comp.add(c.alpha, c.color);
    if (comp.done()) break;
  }
  return comp.finish(background);
}

// ---------------------------------------------------------------------------
// Per-pixel evaluation shared by the forward and backward passes

struct PixelSample {
  std::uint32_t index = 0;
  std::uint32_t slot = 0;  // position in the tile list
  double alpha = 0.0;
  bool clamped = false;
  // analytic
  RayQuadratic quad;
  double tau = 0.0;
  // splat
  Vec2 delta = Vec2::Zero();
  double falloff = 0.0;
};

inline Vec2 pixel_center(int px, int py) { return {px + 0.5, py + 0.5}; }

inline PixelSample evaluate_sample(const PreparedPrimitive& p, std::uint32_t index, const Ray& ray,
                                   const Vec2& pixel, RenderMode mode, const RenderOptions& opt) {
  PixelSample s;
  s.index = index;
  if (mode == RenderMode::analytic) {
    s.quad = ray_quadratic(p.mean, p.inverse_cov, ray);
    s.tau = optical_depth(s.quad.ray_gaussian(), p.kappa);
    const double raw = -std::expm1(-s.tau);
    s.clamped = raw > opt.alpha_max;
    s.alpha = s.clamped ? opt.alpha_max : raw;
  } else {
    s.delta = pixel - p.splat.mean2d;
    s.falloff = std::exp(-0.5 * s.delta.dot(p.splat.conic * s.delta));
    const double raw = p.opacity * s.falloff;
    s.clamped = raw > opt.alpha_max;
    s.alpha = s.clamped ? opt.alpha_max : raw;
  }
  return s;
}

/// Fills `out` with the contributions composited at this pixel, in order.
inline void gather_pixel(const std::vector<PreparedPrimitive>& prims,
                         std::span<const TileEntry> list, int px, int py, const Camera& cam,
                         RenderMode mode, const RenderOptions& opt, std::vector<PixelSample>& out) {
  out.clear();
  const Ray ray = cam.pixel_ray(px, py);
  const Vec2 pixel = pixel_center(px, py);
  const bool skips = mode == RenderMode::splat;
  double transmittance = 1.0;
  if (mode == RenderMode::analytic && opt.sort == SortOrder::ray_gamma) {
    for (std::uint32_t j = 0; j < list.size(); ++j) {
      out.push_back(evaluate_sample(prims[list[j].index], list[j].index, ray, pixel, mode, opt));
      out.back().slot = j;
    }
    std::stable_sort(out.begin(), out.end(), [](const PixelSample& a, const PixelSample& b) {
      return a.quad.gamma() < b.quad.gamma();
    });
    std::size_t keep = 0;
    for (; keep < out.size(); ++keep) {
      transmittance *= 1.0 - out[keep].alpha;
      if (transmittance < opt.transmittance_min) {
        ++keep;
        break;
      }
    }
    out.resize(keep);
    return;
  }
  for (std::uint32_t j = 0; j < list.size(); ++j) {
    PixelSample s = evaluate_sample(prims[list[j].index], list[j].index, ray, pixel, mode, opt);
    s.slot = j;
    if (skips && s.alpha < opt.splat_alpha_min) continue;
    transmittance *= 1.0 - s.alpha;
    out.push_back(s);
    if (transmittance < opt.transmittance_min) break;
  }
}

struct RenderOutput {
  Image color;
  std::vector<double> final_transmittance;
  std::vector<int> contributions;

  int width() const { return color.width; }
  int height() const { return color.height; }
};

namespace detail {

/// Runs fn(px, py) over every pixel, parallel over tiles.
template <typename Fn>
void for_each_tile_pixel(const Camera& cam, const TileGrid& grid, int threads, Fn&& fn) {
  parallel_for(grid.tile_count(), threads, [&](int t) {
    const int tx = t % grid.tiles_x, ty = t / grid.tiles_x;
    const int x1 = std::min(cam.width, (tx + 1) * grid.tile_size);
    const int y1 = std::min(cam.height, (ty + 1) * grid.tile_size);
    for (int py = ty * grid.tile_size; py < y1; ++py)
      for (int px = tx * grid.tile_size; px < x1; ++px) fn(t, px, py);
  });
}

}  // namespace detail

inline RenderOutput render(const Scene& scene, const Camera& cam, RenderMode mode,
                           const RenderOptions& opt = {}) {
  cam.validate();
  const auto prims = prepare_primitives(scene, cam, mode, opt);
  const TileGrid grid = bin_tiles(prims, cam, opt.tile_size);
  RenderOutput out;
  out.color = Image(cam.width, cam.height, 3);
  out.final_transmittance.assign(cam.pixel_count(), 1.0);
  out.contributions.assign(cam.pixel_count(), 0);
  std::vector<std::vector<PixelSample>> scratch(grid.tile_count());
  detail::for_each_tile_pixel(cam, grid, opt.threads, [&](int t, int px, int py) {
    auto& samples = scratch[t];
    gather_pixel(prims, grid.for_pixel(px, py), px, py, cam, mode, opt, samples);
    Compositor comp(0.0);
    for (const PixelSample& s : samples) comp.add(s.alpha, prims[s.index].color);
    const CompositeResult r = comp.finish(scene.background);
    const std::size_t k = static_cast<std::size_t>(py) * cam.width + px;
    for (int c = 0; c < 3; ++c) out.color.at(px, py, c) = r.color[c];
    out.final_transmittance[k] = r.transmittance;
    out.contributions[k] = r.used;
  });
  return out;
}

}  // namespace volgauss
