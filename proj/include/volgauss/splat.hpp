#pragma once

// EWA splatting baseline: affine projection of a 3D Gaussian to a 2D screen
// space Gaussian and the 2D opacity falloff.

#include "volgauss/camera.hpp"
#include "volgauss/core.hpp"

#include <optional>

namespace volgauss {

inline constexpr double kSplatDilation = 0.3;
inline constexpr double kFrustumClampFactor = 1.3;

struct Splat2D {
  Vec2 mean2d = Vec2::Zero();
  Mat2 cov2d = Mat2::Identity();  // dilated
  Mat2 conic = Mat2::Identity();  // inverse of cov2d
  double depth = 0.0;
};

/// Intermediate quantities of the projection, reused by the gradient.
struct SplatGeometry {
  Vec3 view_mean;       // camera-space mean
  Mat23 jacobian;       // d(pixel)/d(camera point), evaluated at the clamped mean
  bool clamped_x = false;
  bool clamped_y = false;
  double limit_x = 0.0;
  double limit_y = 0.0;
};

inline SplatGeometry splat_geometry(const Vec3& world_mean, const Camera& cam) {
  SplatGeometry geo;
  geo.view_mean = cam.to_camera(world_mean);
  if (cam.model == CameraModel::orthographic) {
    geo.jacobian << cam.fx, 0.0, 0.0, 0.0, cam.fy, 0.0;
    return geo;
  }
  const double tz = geo.view_mean.z();
  geo.limit_x = kFrustumClampFactor * 0.5 * cam.width / cam.fx;
  geo.limit_y = kFrustumClampFactor * 0.5 * cam.height / cam.fy;
  const double rx = geo.view_mean.x() / tz;
  const double ry = geo.view_mean.y() / tz;
  geo.clamped_x = rx < -geo.limit_x || rx > geo.limit_x;
  geo.clamped_y = ry < -geo.limit_y || ry > geo.limit_y;
  const double tx = std::clamp(rx, -geo.limit_x, geo.limit_x) * tz;
  const double ty = std::clamp(ry, -geo.limit_y, geo.limit_y) * tz;
  geo.jacobian << cam.fx / tz, 0.0, -cam.fx * tx / (tz * tz), 0.0, cam.fy / tz,
      -cam.fy * ty / (tz * tz);
  return geo;
}

/// Pixel position of a camera-space point.
inline Vec2 project_point(const Vec3& p, const Camera& cam) {
  if (cam.model == CameraModel::orthographic)
    return {cam.fx * p.x() + cam.cx, cam.fy * p.y() + cam.cy};
  return {cam.fx * p.x() / p.z() + cam.cx, cam.fy * p.y() / p.z() + cam.cy};
}

/// Returns nullopt when the mean is not in front of the near plane.
inline std::optional<Splat2D> splat_project(const Vec3& mean, const Mat3& cov3d,
                                            const Camera& cam) {
  const SplatGeometry geo = splat_geometry(mean, cam);
  if (!(geo.view_mean.z() > cam.z_near)) return std::nullopt;
  const Mat23 t = geo.jacobian * cam.rotation;
  Splat2D s;
  s.mean2d = project_point(geo.view_mean, cam);
  s.cov2d = t * cov3d * t.transpose();
  s.cov2d(0, 0) += kSplatDilation;
  s.cov2d(1, 1) += kSplatDilation;
  s.conic = s.cov2d.inverse();
  s.depth = geo.view_mean.z();
  return s;
}

inline std::optional<Splat2D> splat_project(const Gaussian3D& g, const Camera& cam) {
  return splat_project(g.mean, covariance(g).matrix, cam);
}

/// o * exp(-1/2 delta^T cov^-1 delta), clamped to alpha_max.
inline double splat_alpha(const Splat2D& s, double opacity, const Vec2& pixel,
                          double alpha_max = 0.99) {
  const Vec2 delta = pixel - s.mean2d;
  const double power = -0.5 * delta.dot(s.conic * delta);
  return std::min(alpha_max, opacity * std::exp(power));
}

}  // namespace volgauss
