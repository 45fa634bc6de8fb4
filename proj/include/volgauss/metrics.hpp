#pragma once

// Image metrics. SSIM uses an 11x11 Gaussian window (sigma 1.5) with zero
// padding and the usual constants for a [0, 1] data range; the mean SSIM is
// differentiable and its gradient is provided for the training loss.

#include "volgauss/errors.hpp"
#include "volgauss/image.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <vector>

namespace volgauss {

inline constexpr int kSsimWindow = 11;
inline constexpr double kSsimSigma = 1.5;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

inline double mse(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw ValidationError("mse: image shapes differ");
  if (a.size() == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    sum += d * d;
  }
  return sum / static_cast<double>(a.size());
}

/// 10 log10(peak^2 / MSE); infinite for identical images.
inline double psnr_from_mse(double mse_value, double peak = 1.0) {
  if (mse_value <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse_value);
}

inline double psnr(const Image& a, const Image& b, double peak = 1.0) {
  return psnr_from_mse(mse(a, b), peak);
}

inline std::array<double, kSsimWindow> ssim_kernel() {
  std::array<double, kSsimWindow> k{};
  double sum = 0.0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double x = i - kSsimWindow / 2;
    k[i] = std::exp(-x * x / (2.0 * kSsimSigma * kSsimSigma));
    sum += k[i];
  }
  for (double& v : k) v /= sum;
  return k;
}

/// Separable Gaussian filter of a single-channel plane, zero padded.
/// The filter is symmetric, so it is also its own adjoint.
inline std::vector<double> gaussian_filter(const std::vector<double>& plane, int w, int h) {
  static const auto k = ssim_kernel();
  constexpr int r = kSsimWindow / 2;
  std::vector<double> tmp(plane.size(), 0.0), out(plane.size(), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) {
        const int xx = x + i;
        if (xx >= 0 && xx < w) s += k[i + r] * plane[y * w + xx];
      }
      tmp[y * w + x] = s;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int i = -r; i <= r; ++i) {
        const int yy = y + i;
        if (yy >= 0 && yy < h) s += k[i + r] * tmp[yy * w + x];
      }
      out[y * w + x] = s;
    }
  return out;
}

/// Mean SSIM over pixels and channels. When `grad` is non-null it receives
/// d(mean SSIM)/d(x).
inline double ssim(const Image& x, const Image& y, Image* grad = nullptr) {
  if (!x.same_shape(y)) throw ValidationError("ssim: image shapes differ");
  const int w = x.width, h = x.height, n = w * h;
  if (n == 0) return 1.0;
  if (grad) *grad = Image(w, h, x.channels);
  const double total = static_cast<double>(x.size());
  double sum = 0.0;
  std::vector<double> px(n), py(n), pxx(n), pyy(n), pxy(n);
  for (int c = 0; c < x.channels; ++c) {
    for (int i = 0; i < n; ++i) {
      px[i] = x.data[static_cast<std::size_t>(i) * x.channels + c];
      py[i] = y.data[static_cast<std::size_t>(i) * y.channels + c];
      pxx[i] = px[i] * px[i];
      pyy[i] = py[i] * py[i];
      pxy[i] = px[i] * py[i];
    }
    const auto mx = gaussian_filter(px, w, h), my = gaussian_filter(py, w, h);
    const auto exx = gaussian_filter(pxx, w, h), eyy = gaussian_filter(pyy, w, h);
    const auto exy = gaussian_filter(pxy, w, h);
    std::vector<double> d_mu(n), d_exx(n), d_exy(n);
    for (int i = 0; i < n; ++i) {
      const double sxx = exx[i] - mx[i] * mx[i];
      const double syy = eyy[i] - my[i] * my[i];
      const double sxy = exy[i] - mx[i] * my[i];
      const double a1 = 2.0 * mx[i] * my[i] + kSsimC1, a2 = 2.0 * sxy + kSsimC2;
      const double b1 = mx[i] * mx[i] + my[i] * my[i] + kSsimC1, b2 = sxx + syy + kSsimC2;
      const double s = a1 * a2 / (b1 * b2);
      sum += s;
      if (grad) {
        const double inv = 1.0 / (b1 * b2);
        d_mu[i] = 2.0 * my[i] * (a2 - a1) * inv - 2.0 * mx[i] * s / b1 + 2.0 * mx[i] * s / b2;
        d_exx[i] = -s / b2;
        d_exy[i] = 2.0 * a1 * inv;
      }
    }
    if (grad) {
      const auto g_mu = gaussian_filter(d_mu, w, h);
      const auto g_xx = gaussian_filter(d_exx, w, h);
      const auto g_xy = gaussian_filter(d_exy, w, h);
      for (int i = 0; i < n; ++i)
        grad->data[static_cast<std::size_t>(i) * x.channels + c] =
            (g_mu[i] + 2.0 * px[i] * g_xx[i] + py[i] * g_xy[i]) / total;
    }
  }
  return sum / total;
}

struct ImageMetrics {
  double mse = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
};

inline ImageMetrics image_metrics(const Image& a, const Image& reference) {
  ImageMetrics m;
  m.mse = mse(a, reference);
  m.psnr = psnr_from_mse(m.mse);
  m.ssim = ssim(a, reference);
  return m;
}

}  // namespace volgauss
