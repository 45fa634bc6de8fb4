#pragma once

#include "volgauss/errors.hpp"
#include "volgauss/image.hpp"
#include "volgauss/metrics.hpp"

#include <cmath>
#include <string>

namespace volgauss {

enum class LossKind { l1, l2, dssim, mixed };

/// mixed = (1 - lambda) L1 + lambda (1 - SSIM)
struct LossSpec {
  LossKind kind = LossKind::mixed;
  double lambda = 0.2;
};

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "l1") return LossKind::l1;
  if (s == "l2") return LossKind::l2;
  if (s == "dssim") return LossKind::dssim;
  if (s == "mixed") return LossKind::mixed;
  throw ValidationError("unknown loss kind '" + s + "' (expected l1, l2, dssim or mixed)");
}

inline const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::l1: return "l1";
    case LossKind::l2: return "l2";
    case LossKind::dssim: return "dssim";
    case LossKind::mixed: return "mixed";
  }
  return "?";
}

/// Loss value; fills `grad` with dL/d(rendered) when non-null.
inline double evaluate_loss(const Image& rendered, const Image& target, const LossSpec& spec,
                            Image* grad = nullptr) {
  if (!rendered.same_shape(target)) throw ValidationError("loss: image shapes differ");
  const double n = static_cast<double>(rendered.size());
  if (grad) *grad = Image(rendered.width, rendered.height, rendered.channels);
  double value = 0.0;
  double l1_weight = 0.0, l2_weight = 0.0, ssim_weight = 0.0;
  switch (spec.kind) {
    case LossKind::l1: l1_weight = 1.0; break;
    case LossKind::l2: l2_weight = 1.0; break;
    case LossKind::dssim: ssim_weight = 1.0; break;
    case LossKind::mixed:
      l1_weight = 1.0 - spec.lambda;
      ssim_weight = spec.lambda;
      break;
  }
  if (l1_weight > 0.0 || l2_weight > 0.0) {
    double l1 = 0.0, l2 = 0.0;
    for (std::size_t i = 0; i < rendered.size(); ++i) {
      const double d = rendered.data[i] - target.data[i];
      l1 += std::abs(d);
      l2 += d * d;
      if (grad) {
        const double sign = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
        grad->data[i] += (l1_weight * sign + l2_weight * 2.0 * d) / n;
      }
    }
    value += (l1_weight * l1 + l2_weight * l2) / n;
  }
  if (ssim_weight > 0.0) {
    Image g;
    const double s = ssim(rendered, target, grad ? &g : nullptr);
    value += ssim_weight * (1.0 - s);
    if (grad)
      for (std::size_t i = 0; i < rendered.size(); ++i) grad->data[i] -= ssim_weight * g.data[i];
  }
  return value;
}

}  // namespace volgauss
