#pragma once

// Reverse-mode gradients of the rasterized image with respect to every
// primitive parameter, derived by hand through the compositing recursion,
// the closed-form transmittance, the ray projection and the density
// reparameterization (analytic mode) or the EWA projection (splat mode).
//
// The forward pass is replayed per pixel with the same culling, skipping and
// termination rules, so skipped contributions receive exactly zero gradient.
// Per-tile accumulators are reduced in tile order, which keeps the result
// independent of the thread count.

#include "volgauss/camera.hpp"
#include "volgauss/core.hpp"
#include "volgauss/errors.hpp"
#include "volgauss/image.hpp"
#include "volgauss/parallel.hpp"
#include "volgauss/raster.hpp"
#include "volgauss/scene.hpp"

#include <cmath>
#include <span>
#include <string>
#include <vector>

namespace volgauss {

struct ParamGrad {
  Vec3 d_mean = Vec3::Zero();
  Vec3 d_scale = Vec3::Zero();
  Vec4 d_rotation = Vec4::Zero();  // tangent to the unit quaternion
  double d_theta = 0.0;
  double d_opacity = 0.0;
  Vec3 d_color = Vec3::Zero();
  double position_grad_norm = 0.0;  // |d_mean|, world space
};

struct SceneGrad {
  std::vector<ParamGrad> params;
  std::vector<char> visible;  // in front of the camera for this view
  Vec3 d_background = Vec3::Zero();
};

/// Per-primitive partials before the chain through scales and rotation.
struct RawGrad {
  Vec3 d_mean = Vec3::Zero();
  Mat3 d_inverse_cov = Mat3::Zero();  // analytic: dL/dP, P = Sigma^-1
  double d_kappa = 0.0;
  Vec3 d_color = Vec3::Zero();
  Vec2 d_mean2d = Vec2::Zero();  // splat
  Mat2 d_conic = Mat2::Zero();
  double d_opacity = 0.0;

  RawGrad& operator+=(const RawGrad& o) {
    d_mean += o.d_mean;
    d_inverse_cov += o.d_inverse_cov;
    d_kappa += o.d_kappa;
    d_color += o.d_color;
    d_mean2d += o.d_mean2d;
    d_conic += o.d_conic;
    d_opacity += o.d_opacity;
    return *this;
  }
};

/// Accumulates dL/dtau of an analytic sample into the ray-space partials.
inline void accumulate_optical_depth_grad(RawGrad& acc, const RayQuadratic& q, const Vec3& dir,
                                          double kappa, double tau, double g_tau) {
  const double beta = 1.0 / std::sqrt(q.a);
  acc.d_kappa += g_tau * kSqrt2Pi * beta * q.peak();
  if (tau == 0.0) return;
  const double gl = g_tau * tau;  // d/d(log tau)
  const double g_a = gl * (-0.5 / q.a - 0.5 * q.b * q.b / (q.a * q.a));
  const double g_b = gl * (q.b / q.a);
  const double g_c = -0.5 * gl;
  acc.d_mean += g_b * q.p_dir + 2.0 * g_c * q.p_offset;
  const Mat3 md = q.offset * dir.transpose();
  acc.d_inverse_cov += g_a * dir * dir.transpose() + 0.5 * g_b * (md + md.transpose()) +
                       g_c * q.offset * q.offset.transpose();
  (void)kappa;
}

/// dL/dq for q = (w, x, y, z), given dL/dR of the normalized rotation,
/// projected onto the tangent space of the unit sphere.
inline Vec4 quaternion_grad(const Vec4& q_raw, const Mat3& d_r) {
  const double norm = q_raw.norm();
  const Vec4 q = q_raw / norm;
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 dw, dx, dy, dz;
  dw << 0, -2 * z, 2 * y, 2 * z, 0, -2 * x, -2 * y, 2 * x, 0;
  dx << 0, 2 * y, 2 * z, 2 * y, -4 * x, -2 * w, 2 * z, 2 * w, -4 * x;
  dy << -4 * y, 2 * x, 2 * w, 2 * x, 0, 2 * z, -2 * w, 2 * z, -4 * y;
  dz << -4 * z, -2 * w, 2 * x, 2 * w, -4 * z, 2 * y, 2 * x, 2 * y, 0;
  Vec4 g(d_r.cwiseProduct(dw).sum(), d_r.cwiseProduct(dx).sum(), d_r.cwiseProduct(dy).sum(),
         d_r.cwiseProduct(dz).sum());
  g -= g.dot(q) * q;
  return g / norm;
}

inline Vec3 scale_mask(const Vec3& s) {
  return Vec3(s[0] >= kMinScale, s[1] >= kMinScale, s[2] >= kMinScale);
}

/// Chains the analytic partials (mean, P, kappa, color) to the parameters.
inline ParamGrad finalize_analytic(const Gaussian3D& g, const RawGrad& raw) {
  ParamGrad out;
  const Vec3 s = floored_scale(g.scale);
  const Mat3 r = rotation_matrix(g.rotation);
  out.d_mean = raw.d_mean;
  out.d_color = raw.d_color;
  const double log_term = theta_log_term(g.theta);
  out.d_theta = raw.d_kappa * kThetaGain / (1.0 - kThetaGain * g.theta) * mean_inverse_scale(g.scale);
  Vec3 ds = Vec3::Zero();
  for (int k = 0; k < 3; ++k) ds[k] = raw.d_kappa * log_term / 3.0 * (-1.0 / (s[k] * s[k]));
  // P = M M^T with M = R diag(1/s).
  const Mat3 sym = 0.5 * (raw.d_inverse_cov + raw.d_inverse_cov.transpose());
  const Mat3 m = r * s.cwiseInverse().asDiagonal();
  const Mat3 dm = 2.0 * sym * m;
  Mat3 dr;
  for (int k = 0; k < 3; ++k) {
    const double d_inv = r.col(k).dot(dm.col(k));
    ds[k] += -d_inv / (s[k] * s[k]);
    dr.col(k) = dm.col(k) / s[k];
  }
  out.d_scale = ds.cwiseProduct(scale_mask(g.scale));
  out.d_rotation = quaternion_grad(g.rotation, dr);
  out.position_grad_norm = out.d_mean.norm();
  return out;
}

/// Chains the splat partials (mean2d, conic, opacity, color) to the parameters.
inline ParamGrad finalize_splat(const Gaussian3D& g, const RawGrad& raw, const Camera& cam) {
  ParamGrad out;
  out.d_color = raw.d_color;
  out.d_opacity = raw.d_opacity;
  const Vec3 s = floored_scale(g.scale);
  const Mat3 r = rotation_matrix(g.rotation);
  const Mat3 sigma = r * s.cwiseAbs2().asDiagonal() * r.transpose();
  const SplatGeometry geo = splat_geometry(g.mean, cam);
  const Mat23 t = geo.jacobian * cam.rotation;
  Mat2 cov2d = t * sigma * t.transpose();
  cov2d(0, 0) += kSplatDilation;
  cov2d(1, 1) += kSplatDilation;
  const Mat2 conic = cov2d.inverse();
  const Mat2 d_conic = 0.5 * (raw.d_conic + raw.d_conic.transpose());
  const Mat2 d_cov2d = -conic * d_conic * conic;
  const Mat3 d_sigma = t.transpose() * d_cov2d * t;
  const Mat23 d_t = 2.0 * d_cov2d * t * sigma;
  const Mat23 d_j = d_t * cam.rotation.transpose();

  const Vec3& v = geo.view_mean;
  Vec3 d_view = Vec3::Zero();
  if (cam.model == CameraModel::orthographic) {
    d_view.x() += raw.d_mean2d.x() * cam.fx;
    d_view.y() += raw.d_mean2d.y() * cam.fy;
  } else {
    const double tz = v.z(), tz2 = tz * tz, tz3 = tz2 * tz;
    // Entries (0,0) and (1,1): f / tz.
    d_view.z() += -d_j(0, 0) * cam.fx / tz2 - d_j(1, 1) * cam.fy / tz2;
    // Entries (0,2) and (1,2): -f t' / tz^2 with t' the frustum-clamped x, y.
    auto third_column = [&](int row, double focal, double coord, bool clamped, double limit) {
      if (!clamped) {
        d_view[row] += d_j(row, 2) * (-focal / tz2);
        d_view.z() += d_j(row, 2) * (2.0 * focal * coord / tz3);
      } else {
        const double lim = coord / tz > 0.0 ? limit : -limit;
        d_view.z() += d_j(row, 2) * (focal * lim / tz2);
      }
    };
    third_column(0, cam.fx, v.x(), geo.clamped_x, geo.limit_x);
    third_column(1, cam.fy, v.y(), geo.clamped_y, geo.limit_y);
    d_view.x() += raw.d_mean2d.x() * cam.fx / tz;
    d_view.z() += -raw.d_mean2d.x() * cam.fx * v.x() / tz2;
    d_view.y() += raw.d_mean2d.y() * cam.fy / tz;
    d_view.z() += -raw.d_mean2d.y() * cam.fy * v.y() / tz2;
  }
  out.d_mean = cam.rotation.transpose() * d_view;

  // Sigma = M M^T with M = R diag(s).
  const Mat3 m = r * s.asDiagonal();
  const Mat3 dm = 2.0 * 0.5 * (d_sigma + d_sigma.transpose()) * m;
  Vec3 ds;
  Mat3 dr;
  for (int k = 0; k < 3; ++k) {
    ds[k] = r.col(k).dot(dm.col(k));
    dr.col(k) = dm.col(k) * s[k];
  }
  out.d_scale = ds.cwiseProduct(scale_mask(g.scale));
  out.d_rotation = quaternion_grad(g.rotation, dr);
  out.position_grad_norm = out.d_mean.norm();
  return out;
}

namespace detail {

inline void require_finite(std::span<const double> values, const char* what) {
  for (std::size_t i = 0; i < values.size(); ++i)
    if (!std::isfinite(values[i]))
      throw NumericalError(std::string("backward: non-finite upstream gradient in ") + what +
                           " at element " + std::to_string(i));
}

/// Reduces per-tile accumulators in tile order.
inline std::vector<RawGrad> reduce_tiles(const TileGrid& grid,
                                         const std::vector<std::vector<RawGrad>>& local,
                                         std::size_t count) {
  std::vector<RawGrad> total(count);
  for (int t = 0; t < grid.tile_count(); ++t) {
    const auto& list = grid.lists[t];
    for (std::size_t j = 0; j < list.size(); ++j) total[list[j].index] += local[t][j];
  }
  return total;
}

}  // namespace detail

/// Gradient of a scalar loss given dL/d(color) (3 channels) and optionally
/// dL/d(final transmittance). `forward` must come from render() with the
/// same scene, camera, mode and options.
inline SceneGrad backward(const Scene& scene, const Camera& cam, RenderMode mode,
                          const RenderOutput& forward, const Image& d_color,
                          std::span<const double> d_transmittance = {},
                          const RenderOptions& opt = {}) {
  if (forward.width() != cam.width || forward.height() != cam.height)
    throw ValidationError("backward: forward output does not match camera");
  if (d_color.width != cam.width || d_color.height != cam.height || d_color.channels != 3)
    throw ValidationError("backward: upstream gradient must be HxWx3");
  if (!d_transmittance.empty() && d_transmittance.size() != static_cast<std::size_t>(cam.pixel_count()))
    throw ValidationError("backward: transmittance gradient must be HxW");
  detail::require_finite(d_color.data, "color");
  detail::require_finite(d_transmittance, "transmittance");

  const auto prims = prepare_primitives(scene, cam, mode, opt);
  const TileGrid grid = bin_tiles(prims, cam, opt.tile_size);
  std::vector<std::vector<RawGrad>> local(grid.tile_count());
  std::vector<Vec3> tile_background(grid.tile_count(), Vec3::Zero());

  parallel_for(grid.tile_count(), opt.threads, [&](int t) {
    const auto& list = grid.lists[t];
    auto& acc = local[t];
    acc.assign(list.size(), RawGrad{});
    std::vector<PixelSample> samples;
    std::vector<double> before;
    const int tx = t % grid.tiles_x, ty = t / grid.tiles_x;
    const int x1 = std::min(cam.width, (tx + 1) * grid.tile_size);
    const int y1 = std::min(cam.height, (ty + 1) * grid.tile_size);
    for (int py = ty * grid.tile_size; py < y1; ++py) {
      for (int px = tx * grid.tile_size; px < x1; ++px) {
        gather_pixel(prims, list, px, py, cam, mode, opt, samples);
        before.resize(samples.size());
        double trans = 1.0;
        for (std::size_t i = 0; i < samples.size(); ++i) {
          before[i] = trans;
          trans *= 1.0 - samples[i].alpha;
        }
        const std::size_t k = static_cast<std::size_t>(py) * cam.width + px;
        const Vec3 g(d_color.at(px, py, 0), d_color.at(px, py, 1), d_color.at(px, py, 2));
        const double g_t = d_transmittance.empty() ? 0.0 : d_transmittance[k];
        tile_background[t] += g * trans;
        Vec3 behind = scene.background;  // color composited behind sample i
        double behind_t = 1.0;           // transmittance behind sample i
        const Ray ray = cam.pixel_ray(px, py);
        for (std::size_t ii = samples.size(); ii-- > 0;) {
          const PixelSample& s = samples[ii];
          const PreparedPrimitive& p = prims[s.index];
          RawGrad& a = acc[s.slot];
          a.d_color += g * (s.alpha * before[ii]);
          const double d_alpha = before[ii] * (g.dot(p.color - behind) - g_t * behind_t);
          behind = p.color * s.alpha + (1.0 - s.alpha) * behind;
          behind_t *= 1.0 - s.alpha;
          if (s.clamped) continue;
          if (mode == RenderMode::analytic) {
            const double g_tau = d_alpha * std::exp(-s.tau);
            accumulate_optical_depth_grad(a, s.quad, ray.direction, p.kappa, s.tau, g_tau);
          } else {
            a.d_opacity += d_alpha * s.falloff;
            const double g_q = d_alpha * (-0.5 * p.opacity * s.falloff);
            a.d_mean2d += g_q * (-2.0 * (p.splat.conic * s.delta));
            a.d_conic += g_q * s.delta * s.delta.transpose();
          }
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
    out.params[i] = mode == RenderMode::analytic ? finalize_analytic(scene.gaussians[i], total[i])
                                                 : finalize_splat(scene.gaussians[i], total[i], cam);
  }
  for (const Vec3& b : tile_background) out.d_background += b;
  return out;
}

}  // namespace volgauss
