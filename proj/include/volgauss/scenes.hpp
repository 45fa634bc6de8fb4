#pragma once

// Generated test scenes shared by the CLI samples and the acceptance runs.

#include "volgauss/camera.hpp"
#include "volgauss/core.hpp"
#include "volgauss/rng.hpp"
#include "volgauss/scene.hpp"

#include <cmath>
#include <vector>

namespace volgauss {

/// Primitives stacked in depth so that their 4 sigma slabs along z are
/// disjoint: every pixel ray (direction z > 0) meets them in view-depth
/// order and never in two at once, up to tails beyond 4 sigma.
/// theta is lowered where needed so that no ray's optical depth through a
/// primitive exceeds `max_depth`; above -ln(0.01) the alpha clamp binds.
inline Scene layered_scene(std::uint64_t seed, int count, double lateral = 0.7, double z_start = 3.0,
                           double max_depth = 4.0) {
  CounterRng rng(seed, 0x1a7e);
  Scene s;
  s.background = Vec3(rng.uniform(0, 0.3), rng.uniform(0, 0.3), rng.uniform(0, 0.3));
  double z = z_start;
  double prev_extent = 0.0;
  for (int i = 0; i < count; ++i) {
    Gaussian3D g;
    for (int k = 0; k < 3; ++k) g.scale[k] = rng.uniform(0.04, 0.18);
    Vec4 q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    g.rotation = q / q.norm();
    const double extent = 4.0 * std::sqrt(covariance(g).matrix(2, 2));
    z += prev_extent + extent;
    prev_extent = extent;
    const double reach = lateral * z / z_start;
    g.mean = Vec3(rng.uniform(-reach, reach) * 0.5, rng.uniform(-reach, reach) * 0.5, z);
    g.theta = rng.uniform(0.3, 0.95);
    // Peak optical depth over all rays: kappa sqrt(2 pi) along the longest axis.
    const double peak_kappa = max_depth / (kSqrt2Pi * g.scale.maxCoeff());
    g.theta = std::min(g.theta, theta_for_kappa(peak_kappa, g.scale));
    g.color = Vec3(rng.uniform(), rng.uniform(), rng.uniform());
    g.splat_opacity = rng.uniform(0.3, 0.9);
    s.gaussians.push_back(g);
  }
  return s;
}

/// A thin tilted slab whose mean is nearer than a small Gaussian that it
/// passes behind: the per-primitive order is wrong on part of the image.
inline Scene overlapping_pair_scene() {
  Scene s;
  Gaussian3D big;
  big.mean = Vec3(0, 0, 4.0);
  big.scale = Vec3(1.5, 0.6, 0.05);
  const double half = -0.5 * 0.9;  // about y
  big.rotation = Vec4(std::cos(half), 0, std::sin(half), 0);
  big.theta = 0.9;
  big.color = Vec3(1, 0, 0);
  big.splat_opacity = 0.9;
  Gaussian3D small;
  small.mean = Vec3(0.6, 0, 4.3);
  small.scale = Vec3::Constant(0.15);
  small.theta = 0.9;
  small.color = Vec3(0, 0, 1);
  small.splat_opacity = 0.9;
  s.gaussians = {big, small};
  return s;
}

/// One Gaussian on the optical axis at `depth`, z-scale multiplied by `z_factor`.
inline Scene on_axis_scene(double z_factor, double depth = 5.0, double scale = 0.3, double theta = 0.4) {
  Scene s;
  Gaussian3D g;
  g.mean = Vec3(0, 0, depth);
  g.scale = Vec3(scale, scale, scale * z_factor);
  g.theta = theta;
  g.splat_opacity = 0.6;
  g.color = Vec3(1, 0.8, 0.3);
  s.gaussians.push_back(g);
  return s;
}

}  // namespace volgauss
