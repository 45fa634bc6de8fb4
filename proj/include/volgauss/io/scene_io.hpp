#pragma once

#include "volgauss/camera.hpp"
#include "volgauss/io/json_io.hpp"
#include "volgauss/scene.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace volgauss::io {

inline constexpr const char* kSceneFormat = "volgauss-scene";
inline constexpr const char* kCameraFormat = "volgauss-camera";
inline constexpr int kFormatVersion = 1;

template <>
struct EnumNames<CameraModel> {
  static std::span<const std::pair<const char*, CameraModel>> list() {
    static constexpr std::pair<const char*, CameraModel> names[] = {{"pinhole", CameraModel::pinhole}, {"orthographic", CameraModel::orthographic}};
    return names;
  }
};

struct SceneFile {
  Scene scene;
  std::vector<Camera> cameras;
};

// ---------------------------------------------------------------------------
// Cameras

inline json camera_to_json(const Camera& c) {
  json j;
  j["width"] = c.width;
  j["height"] = c.height;
  j["model"] = enum_name(c.model);
  j["fx"] = c.fx;
  j["fy"] = c.fy;
  j["cx"] = c.cx;
  j["cy"] = c.cy;
  j["rotation"] = to_json(c.rotation);
  j["translation"] = to_json(c.translation);
  j["z_near"] = c.z_near;
  return j;
}

/// Either explicit "rotation"/"translation" (world to camera) or a
/// "look_at" object {eye, target, up}. "focal" sets fx = fy; cx, cy default
/// to the image center.
inline Camera read_camera(ObjectReader r) {
  Camera c;
  r.require("width");
  r.require("height");
  r.read("width", c.width);
  r.read("height", c.height);
  r.read("model", c.model);
  double focal = 0.0;
  r.read("focal", focal);
  if (r.has("focal") && (r.has("fx") || r.has("fy")))
    r.problems().add(r.path("focal"), "give either focal or fx/fy, not both");
  if (!r.has("focal") && !r.has("fx")) r.problems().add(r.path("fx"), "required field is missing (or give focal)");
  c.fx = focal;
  r.read("fx", c.fx);
  c.fy = c.fx;
  r.read("fy", c.fy);
  c.cx = 0.5 * c.width;
  c.cy = 0.5 * c.height;
  r.read("cx", c.cx);
  r.read("cy", c.cy);
  r.read("z_near", c.z_near);
  if (r.has("look_at")) {
    if (r.has("rotation") || r.has("translation"))
      r.problems().add(r.path("look_at"), "give either look_at or rotation/translation, not both");
    ObjectReader la = r.child("look_at");
    Vec3 eye = Vec3::Zero(), target = Vec3::UnitZ(), up = -Vec3::UnitY();
    la.require("eye");
    la.require("target");
    la.read("eye", eye);
    la.read("target", target);
    la.read("up", up);
    la.finish();
    const Vec3 fwd = target - eye;
    if (!(fwd.norm() > 0.0) || !(fwd.normalized().cross(up).norm() > 1e-9)) {
      r.problems().add(r.path("look_at"), "eye, target and up are degenerate");
    } else {
      const Camera p = Camera::look_at(c.width, c.height, 1.0, eye, target, up);
      c.rotation = p.rotation;
      c.translation = p.translation;
    }
  } else {
    r.read("rotation", c.rotation);
    r.read("translation", c.translation);
  }
  try {
    if (r.problems().empty()) c.validate();
  } catch (const ValidationError& e) {
    r.problems().add(r.location().empty() ? "camera" : r.location(), e.what());
  }
  r.finish();
  return c;
}

inline std::vector<Camera> read_cameras(ObjectReader& r, const char* key) {
  std::vector<Camera> out;
  const json* list = r.get(key);
  if (!list) return out;
  if (!list->is_array()) {
    r.problems().add(r.path(key), "expected an array of cameras");
    return out;
  }
  for (std::size_t i = 0; i < list->size(); ++i)
    out.push_back(read_camera(ObjectReader(&(*list)[i], r.path(key) + "[" + std::to_string(i) + "]",
                                           r.problems(), r.tag())));
  return out;
}

/// A camera file holds one camera or a "cameras" list.
inline std::vector<Camera> parse_camera_file(const std::string& text, const std::string& source) {
  const json j = parse_json(text, source);
  Problems problems(source);
  ObjectReader r(&j, "", problems, std::string(kCameraFormat) + " v1");
  std::vector<Camera> cams;
  check_header(r, kCameraFormat, kFormatVersion);
  if (r.has("cameras")) {
    cams = read_cameras(r, "cameras");
    r.finish();
    if (cams.empty() && problems.empty()) problems.add("cameras", "list is empty");
  } else {
    // Single camera: its fields sit next to the header.
    json body = j;
    body.erase("format");
    body.erase("version");
    cams.push_back(read_camera(ObjectReader(&body, "", problems, r.tag())));
  }
  problems.throw_if_any();
  return cams;
}

inline std::vector<Camera> load_camera_file(const std::string& path) {
  return parse_camera_file(read_text_file(path), path);
}

inline std::string camera_file_text(const std::vector<Camera>& cams) {
  json j = header(kCameraFormat, kFormatVersion);
  if (cams.size() == 1) {
    const json cam = camera_to_json(cams[0]);
    for (auto& [k, v] : cam.items()) j[k] = v;
  } else {
    json list = json::array();
    for (const Camera& c : cams) list.push_back(camera_to_json(c));
    j["cameras"] = list;
  }
  return dump(j);
}

// ---------------------------------------------------------------------------
// Scenes

inline json gaussian_to_json(const Gaussian3D& g) {
  json j;
  j["mean"] = to_json(g.mean);
  j["scale"] = to_json(g.scale);
  j["rotation"] = to_json(g.rotation);
  j["theta"] = g.theta;
  j["color"] = to_json(g.color);
  j["splat_opacity"] = g.splat_opacity;
  return j;
}

inline Gaussian3D read_gaussian(ObjectReader r) {
  Gaussian3D g;
  r.require("mean");
  r.require("scale");
  r.read("mean", g.mean);
  r.read("scale", g.scale);
  r.read("rotation", g.rotation);
  r.read("theta", g.theta);
  r.read("color", g.color);
  r.read("splat_opacity", g.splat_opacity);
  if (!(g.scale.array() > 0.0).all()) r.problems().add(r.path("scale"), "components must be > 0");
  if (!(g.rotation.norm() > 0.0)) r.problems().add(r.path("rotation"), "quaternion must be non-zero");
  if (!(g.theta >= 0.0 && g.theta <= 1.0)) r.problems().add(r.path("theta"), "must be in [0, 1]");
  if (!(g.splat_opacity >= 0.0 && g.splat_opacity <= 1.0))
    r.problems().add(r.path("splat_opacity"), "must be in [0, 1]");
  r.finish();
  return g;
}

inline json scene_to_json(const SceneFile& f) {
  json j = header(kSceneFormat, kFormatVersion);
  j["background"] = to_json(f.scene.background);
  json list = json::array();
  for (const Gaussian3D& g : f.scene.gaussians) list.push_back(gaussian_to_json(g));
  j["gaussians"] = list;
  if (!f.cameras.empty()) {
    json cams = json::array();
    for (const Camera& c : f.cameras) cams.push_back(camera_to_json(c));
    j["cameras"] = cams;
  }
  return j;
}

inline SceneFile read_scene(const json& j, const std::string& source) {
  Problems problems(source);
  ObjectReader r(&j, "", problems, std::string(kSceneFormat) + " v1");
  check_header(r, kSceneFormat, kFormatVersion);
  SceneFile f;
  r.read("background", f.scene.background);
  r.require("gaussians");
  if (const json* list = r.get("gaussians")) {
    if (!list->is_array()) {
      problems.add("gaussians", "expected an array");
    } else {
      for (std::size_t i = 0; i < list->size(); ++i)
        f.scene.gaussians.push_back(
            read_gaussian(ObjectReader(&(*list)[i], "gaussians[" + std::to_string(i) + "]", problems, r.tag())));
    }
  }
  f.cameras = read_cameras(r, "cameras");
  r.finish();
  problems.throw_if_any();
  return f;
}

inline SceneFile parse_scene(const std::string& text, const std::string& source) {
  return read_scene(parse_json(text, source), source);
}

inline std::string scene_text(const SceneFile& f) {
  auto finite = [](const auto& v) { return v.allFinite(); };
  for (std::size_t i = 0; i < f.scene.size(); ++i) {
    const Gaussian3D& g = f.scene.gaussians[i];
    if (!finite(g.mean) || !finite(g.scale) || !finite(g.rotation) || !finite(g.color) ||
        !std::isfinite(g.theta) || !std::isfinite(g.splat_opacity))
      throw NumericalError("scene: primitive " + std::to_string(i) + " has non-finite parameters");
  }
  return dump(scene_to_json(f));
}

inline SceneFile load_scene(const std::string& path) { return parse_scene(read_text_file(path), path); }

inline void save_scene(const std::string& path, const SceneFile& f) { write_text_file(path, scene_text(f)); }

}  // namespace volgauss::io
