#pragma once

// Gaussian and ray mathematics: covariance factorization, density
// reparameterization, projection of a 3D Gaussian onto a ray and the closed
// form transmittance across it.

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numbers>

namespace volgauss {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat23 = Eigen::Matrix<double, 2, 3>;

inline constexpr double kMinScale = 1e-7;
inline constexpr double kThetaGain = 0.99;
inline constexpr double kSqrt2Pi = 2.50662827463100050242;
inline constexpr double kSqrtHalfPi = 1.25331413731550025121;

/// A single primitive. `rotation` is a quaternion stored as (w, x, y, z).
/// `theta` drives the analytic density; `splat_opacity` is only read by the
/// splatting baseline.
struct Gaussian3D {
  Vec3 mean = Vec3::Zero();
  Vec3 scale = Vec3::Ones();
  Vec4 rotation = Vec4(1.0, 0.0, 0.0, 0.0);
  double theta = 0.0;
  Vec3 color = Vec3::Zero();
  double splat_opacity = 0.0;
};

inline Vec4 normalized_quaternion(const Vec4& q) {
  const double n = q.norm();
  return n > 0.0 ? Vec4(q / n) : Vec4(1.0, 0.0, 0.0, 0.0);
}

/// Rotation matrix of the (normalized) quaternion q = (w, x, y, z).
inline Mat3 rotation_matrix(const Vec4& q_raw) {
  const Vec4 q = normalized_quaternion(q_raw);
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  Mat3 r;
  r << 1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y),
      2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x),
      2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y);
  return r;
}

inline Vec3 floored_scale(const Vec3& s) { return s.cwiseMax(kMinScale); }

struct Covariance {
  Mat3 matrix;
  Mat3 inverse;
};

/// R diag(s^2) R^T and its inverse R diag(1/s^2) R^T.
inline Covariance covariance(const Gaussian3D& g) {
  const Mat3 r = rotation_matrix(g.rotation);
  const Vec3 s = floored_scale(g.scale);
  const Mat3 m = r * s.asDiagonal();
  const Mat3 m_inv = r * s.cwiseInverse().asDiagonal();
  Covariance c;
  c.matrix = m * m.transpose();
  c.inverse = m_inv * m_inv.transpose();
  return c;
}

/// -log(1 - 0.99 theta), the scale-free part of the density.
inline double theta_log_term(double theta) { return -std::log1p(-kThetaGain * theta); }

inline double mean_inverse_scale(const Vec3& scale) {
  const Vec3 s = floored_scale(scale);
  return (1.0 / s[0] + 1.0 / s[1] + 1.0 / s[2]) / 3.0;
}

/// Density kappa from the bounded parameter theta and the scales.
inline double density_kappa(double theta, const Vec3& scale) {
  return theta_log_term(theta) * mean_inverse_scale(scale);
}

/// Largest kappa reachable (theta = 1) for the given scales.
inline double kappa_ceiling(const Vec3& scale) { return density_kappa(1.0, scale); }

/// Inverse of density_kappa in theta for fixed scales. May exceed 1 when the
/// target is above the ceiling; callers decide how to clamp.
inline double theta_for_kappa(double kappa, const Vec3& scale) {
  const double log_term = kappa / mean_inverse_scale(scale);
  return -std::expm1(-log_term) / kThetaGain;
}

/// Unnormalized Gaussian value exp(-1/2 (x-mu)^T P (x-mu)).
inline double gaussian_value(const Vec3& mean, const Mat3& inverse_cov, const Vec3& x) {
  const Vec3 delta = x - mean;
  return std::exp(-0.5 * delta.dot(inverse_cov * delta));
}

inline double gaussian_value(const Gaussian3D& g, const Vec3& x) {
  return gaussian_value(g.mean, covariance(g).inverse, x);
}

struct Ray {
  Vec3 origin = Vec3::Zero();
  Vec3 direction = Vec3::UnitZ();

  Vec3 at(double t) const { return origin + t * direction; }
};

inline Ray make_ray(const Vec3& origin, const Vec3& direction) {
  return Ray{origin, direction.normalized()};
}

/// The 3D Gaussian restricted to a ray: peak * exp(-(t-gamma)^2 / (2 beta^2)).
struct RayGaussian1D {
  double peak = 0.0;
  double gamma = 0.0;
  double beta = 1.0;

  double value(double t) const {
    const double u = (t - gamma) / beta;
    return peak * std::exp(-0.5 * u * u);
  }
};

/// Quadratic-form pieces shared by the forward pass and its gradient:
/// a = d^T P d, b = (mu-o)^T P d, c = (mu-o)^T P (mu-o).
struct RayQuadratic {
  double a = 1.0;
  double b = 0.0;
  double c = 0.0;
  Vec3 offset = Vec3::Zero();      // mu - o
  Vec3 p_dir = Vec3::Zero();       // P d
  Vec3 p_offset = Vec3::Zero();    // P (mu - o)

  double gamma() const { return b / a; }
  double beta() const { return 1.0 / std::sqrt(a); }
  double residual() const { return std::max(0.0, c - b * b / a); }
  double peak() const { return std::exp(-0.5 * residual()); }
  RayGaussian1D ray_gaussian() const { return {peak(), gamma(), beta()}; }
};

inline RayQuadratic ray_quadratic(const Vec3& mean, const Mat3& inverse_cov, const Ray& ray) {
  RayQuadratic q;
  q.offset = mean - ray.origin;
  q.p_dir = inverse_cov * ray.direction;
  q.p_offset = inverse_cov * q.offset;
  q.a = ray.direction.dot(q.p_dir);
  q.b = q.offset.dot(q.p_dir);
  q.c = q.offset.dot(q.p_offset);
  return q;
}

inline RayGaussian1D project_to_ray(const Vec3& mean, const Mat3& inverse_cov, const Ray& ray) {
  return ray_quadratic(mean, inverse_cov, ray).ray_gaussian();
}

inline RayGaussian1D project_to_ray(const Gaussian3D& g, const Ray& ray) {
  return project_to_ray(g.mean, covariance(g).inverse, ray);
}

/// Integral of kappa * g(t) over the whole line.
inline double optical_depth(const RayGaussian1D& g1d, double kappa) {
  return kappa * g1d.peak * kSqrt2Pi * g1d.beta;
}

inline double transmittance(const RayGaussian1D& g1d, double kappa) {
  return std::exp(-optical_depth(g1d, kappa));
}

/// 1 - transmittance, evaluated without cancellation for small depths.
inline double analytic_alpha(const RayGaussian1D& g1d, double kappa) {
  return -std::expm1(-optical_depth(g1d, kappa));
}

/// Transmittance across [t_near, t_far] only.
inline double transmittance_finite(const RayGaussian1D& g1d, double kappa, double t_near,
                                   double t_far) {
  if (t_near == t_far) return 1.0;
  const double scale = std::numbers::sqrt2 * g1d.beta;
  const double mass = std::erf((t_far - g1d.gamma) / scale) - std::erf((t_near - g1d.gamma) / scale);
  return std::exp(-kappa * g1d.peak * kSqrtHalfPi * g1d.beta * mass);
}

}  // namespace volgauss
