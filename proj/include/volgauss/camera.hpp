#pragma once

#include "volgauss/core.hpp"
#include "volgauss/errors.hpp"

#include <string>

namespace volgauss {

enum class CameraModel { pinhole, orthographic };

/// Pinhole (or parallel-beam) camera. Camera space looks down +z with +x to
/// the right and +y down the image. Pixel (i, j) has its center at
/// continuous image coordinate (i + 0.5, j + 0.5). For the orthographic
/// model fx, fy are pixels per world unit.
struct Camera {
  int width = 0;
  int height = 0;
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  Mat3 rotation = Mat3::Identity();  // world -> camera
  Vec3 translation = Vec3::Zero();
  double z_near = 0.01;
  CameraModel model = CameraModel::pinhole;

  Vec3 to_camera(const Vec3& world) const { return rotation * world + translation; }
  Vec3 center() const { return -(rotation.transpose() * translation); }
  int pixel_count() const { return width * height; }

  /// Ray through the center of pixel (px, py).
  Ray pixel_ray(int px, int py) const {
    const double u = (px + 0.5 - cx) / fx;
    const double v = (py + 0.5 - cy) / fy;
    if (model == CameraModel::orthographic) {
      const Vec3 origin_cam(u, v, 0.0);
      return Ray{rotation.transpose() * (origin_cam - translation),
                 rotation.transpose().col(2)};
    }
    return Ray{center(), (rotation.transpose() * Vec3(u, v, 1.0)).normalized()};
  }

  void validate() const {
    std::string bad;
    if (width <= 0 || height <= 0) bad += " width/height must be positive;";
    if (!(fx > 0.0) || !(fy > 0.0)) bad += " fx, fy must be positive;";
    if (!(cx >= 0.0 && cx < width)) bad += " cx outside [0, width);";
    if (!(cy >= 0.0 && cy < height)) bad += " cy outside [0, height);";
    if (!(z_near > 0.0)) bad += " z_near must be positive;";
    if (!(rotation * rotation.transpose()).isApprox(Mat3::Identity(), 1e-9))
      bad += " rotation is not orthonormal;";
    if (!bad.empty()) throw ValidationError("invalid camera:" + bad);
  }

  /// Camera at the origin looking down world +z.
  static Camera simple(int width, int height, double focal) {
    Camera c;
    c.width = width;
    c.height = height;
    c.fx = c.fy = focal;
    c.cx = 0.5 * width;
    c.cy = 0.5 * height;
    return c;
  }

  /// `up` points toward the top of the image.
  static Camera look_at(int width, int height, double focal, const Vec3& eye,
                        const Vec3& target, const Vec3& up) {
    Camera c = simple(width, height, focal);
    const Vec3 forward = (target - eye).normalized();
    const Vec3 right = forward.cross(up).normalized();
    const Vec3 down = forward.cross(right);
    c.rotation.row(0) = right.transpose();
    c.rotation.row(1) = down.transpose();
    c.rotation.row(2) = forward.transpose();
    c.translation = -(c.rotation * eye);
    return c;
  }
};

}  // namespace volgauss
