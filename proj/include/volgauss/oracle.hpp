#pragma once

// Reference renderers. The ray marcher integrates the exact mixture field
// numerically, so it carries none of the rasterizer's separability or
// sorting assumptions; exact_sorted_composite keeps the analytic alphas but
// orders them per ray.

#include "volgauss/camera.hpp"
#include "volgauss/core.hpp"
#include "volgauss/image.hpp"
#include "volgauss/parallel.hpp"
#include "volgauss/raster.hpp"
#include "volgauss/rng.hpp"
#include "volgauss/scene.hpp"

#include <algorithm>
#include <optional>
#include <utility>
#include <vector>

namespace volgauss {

struct FieldSample {
  double density = 0.0;
  Vec3 color = Vec3::Zero();
};

/// sigma(x) = sum kappa_i G_i(x) and the density-weighted color.
class MixtureField {
 public:
  explicit MixtureField(const Scene& scene) : background_(scene.background) {
    items_.reserve(scene.size());
    for (const Gaussian3D& g : scene.gaussians)
      items_.push_back({g.mean, covariance(g).inverse, density_kappa(g.theta, g.scale), g.color});
  }

  FieldSample operator()(const Vec3& x) const { return evaluate(x, all_indices()); }

  FieldSample evaluate(const Vec3& x, std::span<const std::uint32_t> subset) const {
    FieldSample s;
    Vec3 weighted = Vec3::Zero();
    for (std::uint32_t i : subset) {
      const Item& it = items_[i];
      const double d = it.kappa * gaussian_value(it.mean, it.inverse_cov, x);
      s.density += d;
      weighted += d * it.color;
    }
    s.color = s.density > 0.0 ? Vec3(weighted / s.density) : background_;
    return s;
  }

  std::size_t size() const { return items_.size(); }
  const Vec3& mean(std::size_t i) const { return items_[i].mean; }
  const Mat3& inverse_cov(std::size_t i) const { return items_[i].inverse_cov; }
  double kappa(std::size_t i) const { return items_[i].kappa; }

 private:
  struct Item {
    Vec3 mean;
    Mat3 inverse_cov;
    double kappa;
    Vec3 color;
  };

  std::vector<std::uint32_t> all_indices() const {
    std::vector<std::uint32_t> idx(items_.size());
    for (std::uint32_t i = 0; i < idx.size(); ++i) idx[i] = i;
    return idx;
  }

  std::vector<Item> items_;
  Vec3 background_;
};

inline FieldSample mixture_field(const Scene& scene, const Vec3& x) { return MixtureField(scene)(x); }

struct MarchConfig {
  int step_count = 10000;
  /// Explicit bounds; when absent the union of [gamma - 8 beta, gamma + 8 beta]
  /// over the primitives touching the ray is marched.
  std::optional<double> t_min;
  std::optional<double> t_max;
  bool stratified = false;
  std::uint64_t seed = 0;
  /// Primitives whose optical depth along the ray is below this are dropped.
  double negligible_depth = 1e-15;
  double support_sigmas = 8.0;

  void validate() const {
    if (step_count < 2) throw ValidationError("march: step_count must be >= 2");
    if (t_min.has_value() != t_max.has_value())
      throw ValidationError("march: t_min and t_max must be given together");
    if (t_min && !(*t_min < *t_max)) throw ValidationError("march: t_min must be < t_max");
  }
};

struct MarchResult {
  Vec3 color = Vec3::Zero();
  double transmittance = 1.0;
};

inline MarchResult raymarch(const MixtureField& field, const Vec3& background, const Ray& ray,
                            const MarchConfig& cfg, std::uint64_t ray_id = 0) {
  std::vector<std::uint32_t> relevant;
  std::vector<std::pair<double, double>> spans;
  for (std::uint32_t i = 0; i < field.size(); ++i) {
    const RayGaussian1D g = project_to_ray(field.mean(i), field.inverse_cov(i), ray);
    if (optical_depth(g, field.kappa(i)) <= cfg.negligible_depth) continue;
    relevant.push_back(i);
    spans.emplace_back(g.gamma - cfg.support_sigmas * g.beta, g.gamma + cfg.support_sigmas * g.beta);
  }
  MarchResult out;
  if (relevant.empty()) {
    out.color = background;
    return out;
  }
  if (cfg.t_min) {
    spans.assign(1, {*cfg.t_min, *cfg.t_max});
  } else {
    std::sort(spans.begin(), spans.end());
    std::vector<std::pair<double, double>> merged;
    for (const auto& s : spans) {
      if (!merged.empty() && s.first <= merged.back().second)
        merged.back().second = std::max(merged.back().second, s.second);
      else
        merged.push_back(s);
    }
    spans = std::move(merged);
  }
  double total = 0.0;
  for (const auto& s : spans) total += s.second - s.first;

  CounterRng rng(cfg.seed, ray_id);
  double transmittance = 1.0;
  Vec3 color = Vec3::Zero();
  for (const auto& [a, b] : spans) {
    const int n = std::max(1, static_cast<int>(std::llround(cfg.step_count * (b - a) / total)));
    const double dt = (b - a) / n;
    for (int k = 0; k < n; ++k) {
      const double offset = cfg.stratified ? rng.uniform() : 0.5;
      const FieldSample f = field.evaluate(ray.at(a + (k + offset) * dt), relevant);
      const double alpha = -std::expm1(-f.density * dt);
      color += transmittance * alpha * f.color;
      transmittance *= 1.0 - alpha;
    }
  }
  out.color = color + transmittance * background;
  out.transmittance = transmittance;
  return out;
}

inline MarchResult raymarch(const Scene& scene, const Ray& ray, const MarchConfig& cfg) {
  cfg.validate();
  return raymarch(MixtureField(scene), scene.background, ray, cfg);
}

inline RenderOutput raymarch_image(const Scene& scene, const Camera& cam, const MarchConfig& cfg,
                                   int threads = 0) {
  cam.validate();
  cfg.validate();
  const MixtureField field(scene);
  RenderOutput out;
  out.color = Image(cam.width, cam.height, 3);
  out.final_transmittance.assign(cam.pixel_count(), 1.0);
  out.contributions.assign(cam.pixel_count(), 0);
  parallel_for(cam.height, threads, [&](int py) {
    for (int px = 0; px < cam.width; ++px) {
      const std::uint64_t id = static_cast<std::uint64_t>(py) * cam.width + px;
      const MarchResult r = raymarch(field, scene.background, cam.pixel_ray(px, py), cfg, id);
      for (int c = 0; c < 3; ++c) out.color.at(px, py, c) = r.color[c];
      out.final_transmittance[id] = r.transmittance;
    }
  });
  return out;
}

/// Analytic alphas of every primitive composited in per-ray gamma order.
inline MarchResult exact_sorted_composite(const Scene& scene, const Ray& ray,
                                          const RenderOptions& opt = {}) {
  struct Item {
    double gamma;
    double alpha;
    std::uint32_t index;
  };
  std::vector<Item> items;
  for (std::uint32_t i = 0; i < scene.size(); ++i) {
    const Gaussian3D& g = scene.gaussians[i];
    const RayGaussian1D g1 = project_to_ray(g, ray);
    const double alpha = std::min(opt.alpha_max, analytic_alpha(g1, density_kappa(g.theta, g.scale)));
    items.push_back({g1.gamma, alpha, i});
  }
  std::stable_sort(items.begin(), items.end(),
                   [](const Item& a, const Item& b) { return a.gamma < b.gamma; });
  Compositor comp(opt.transmittance_min);
  for (const Item& it : items) {
    comp.add(it.alpha, scene.gaussians[it.index].color);
    if (comp.done()) break;
  }
  const CompositeResult r = comp.finish(scene.background);
  return {r.color, r.transmittance};
}

/// Image-level variant: same tile lists as the rasterizer, per-pixel order.
inline RenderOutput render_exact_sorted(const Scene& scene, const Camera& cam, RenderOptions opt = {}) {
  opt.sort = SortOrder::ray_gamma;
  return render(scene, cam, RenderMode::analytic, opt);
}

struct ImageDifference {
  double max_abs = 0.0;
  double mean_abs = 0.0;
  int argmax_x = 0;
  int argmax_y = 0;
  Image per_pixel;  // max over channels
};

inline ImageDifference image_difference(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw ValidationError("image_difference: shape mismatch");
  ImageDifference d;
  d.per_pixel = Image(a.width, a.height, 1);
  double sum = 0.0;
  for (int y = 0; y < a.height; ++y) {
    for (int x = 0; x < a.width; ++x) {
      double m = 0.0;
      for (int c = 0; c < a.channels; ++c) {
        const double e = std::abs(a.at(x, y, c) - b.at(x, y, c));
        m = std::max(m, e);
        sum += e;
      }
      d.per_pixel.at(x, y) = m;
      if (m > d.max_abs) {
        d.max_abs = m;
        d.argmax_x = x;
        d.argmax_y = y;
      }
    }
  }
  d.mean_abs = a.size() ? sum / static_cast<double>(a.size()) : 0.0;
  return d;
}

}  // namespace volgauss
