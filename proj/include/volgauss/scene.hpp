#pragma once

#include "volgauss/core.hpp"

#include <vector>

namespace volgauss {

struct Scene {
  std::vector<Gaussian3D> gaussians;
  Vec3 background = Vec3::Zero();

  bool empty() const { return gaussians.empty(); }
  std::size_t size() const { return gaussians.size(); }
};

}  // namespace volgauss
