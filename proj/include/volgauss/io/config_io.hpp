#pragma once

// Config documents for the fit, tomo and gradcheck commands. Each struct
// has one field list used for both reading and writing, so anything that
// can be set can also be echoed into a report.

#include "volgauss/fd_check.hpp"
#include "volgauss/io/scene_io.hpp"
#include "volgauss/optim.hpp"
#include "volgauss/tomo.hpp"

#include <string>
#include <vector>

namespace volgauss::io {

inline constexpr const char* kConfigFormat = "volgauss-config";

template <>
struct EnumNames<LossKind> {
  static std::span<const std::pair<const char*, LossKind>> list() {
    static constexpr std::pair<const char*, LossKind> names[] = {{"l1", LossKind::l1}, {"l2", LossKind::l2}, {"dssim", LossKind::dssim}, {"mixed", LossKind::mixed}};
    return names;
  }
};
template <>
struct EnumNames<SortOrder> {
  static std::span<const std::pair<const char*, SortOrder>> list() {
    static constexpr std::pair<const char*, SortOrder> names[] = {{"view_depth", SortOrder::view_depth}, {"ray_gamma", SortOrder::ray_gamma}};
    return names;
  }
};
template <>
struct EnumNames<RenderMode> {
  static std::span<const std::pair<const char*, RenderMode>> list() {
    static constexpr std::pair<const char*, RenderMode> names[] = {{"analytic", RenderMode::analytic}, {"splat", RenderMode::splat}};
    return names;
  }
};
template <>
struct EnumNames<TomoInit> {
  static std::span<const std::pair<const char*, TomoInit>> list() {
    static constexpr std::pair<const char*, TomoInit> names[] = {{"lattice", TomoInit::lattice}, {"random", TomoInit::random}};
    return names;
  }
};
template <>
struct EnumNames<PhantomShape> {
  static std::span<const std::pair<const char*, PhantomShape>> list() {
    static constexpr std::pair<const char*, PhantomShape> names[] = {{"ellipsoid", PhantomShape::ellipsoid}, {"gaussian", PhantomShape::gaussian}};
    return names;
  }
};

// ---------------------------------------------------------------------------
// Jobs

struct FitViewSpec {
  std::string target;  // .pfm or .png, relative to the config file
  Camera camera;
};

struct FitJob {
  /// disk, shapes, or views (targets listed in the config)
  std::string protocol = "disk";
  TrainConfig train;
  DiskProtocol disk;
  ShapesProtocol shapes;
  SlabInit init;  // views protocol without --scene
  std::vector<FitViewSpec> views;
  Vec3 background = Vec3::Zero();
};

struct TomoJob {
  /// blob, ellipsoids, or custom (components below)
  std::string phantom = "blob";
  std::vector<PhantomComponent> components;
  int views = 8;
  TomoGeometry geometry;
  TomoConfig reconstruct;

  Phantom make_phantom() const {
    if (phantom == "blob") return Phantom::gaussian_blob();
    if (phantom == "ellipsoids") return Phantom::nested_ellipsoids();
    return Phantom{components};
  }
};

using GradcheckJob = GradcheckConfig;

// ---------------------------------------------------------------------------
// Field lists

template <typename V>
void fields(V& v, RenderOptions& o) {
  v("tile_size", o.tile_size);
  v("alpha_max", o.alpha_max);
  v("splat_alpha_min", o.splat_alpha_min);
  v("transmittance_min", o.transmittance_min);
  v("analytic_bin_epsilon", o.analytic_bin_epsilon);
  v("full_coverage", o.full_coverage);
  v("sort", o.sort);
}

template <typename V>
void fields(V& v, LossSpec& o) {
  v("kind", o.kind);
  v("lambda", o.lambda);
}

template <typename V>
void fields(V& v, TrainConfig& o) {
  v("iterations", o.iterations);
  v("lr_position_init", o.lr_position_init);
  v("lr_position_final", o.lr_position_final);
  v("lr_theta", o.lr_theta);
  v("lr_opacity", o.lr_opacity);
  v("lr_color", o.lr_color);
  v("lr_scale", o.lr_scale);
  v("lr_rotation", o.lr_rotation);
  v("adam_beta1", o.adam_beta1);
  v("adam_beta2", o.adam_beta2);
  v("adam_eps", o.adam_eps);
  v("densify", o.densify);
  v("densify_interval", o.densify_interval);
  v("densify_until", o.densify_until);
  v("split_grad_threshold", o.split_grad_threshold);
  v("clone_grad_threshold", o.clone_grad_threshold);
  v("percent_dense", o.percent_dense);
  v("split_children", o.split_children);
  v("split_scale_divisor", o.split_scale_divisor);
  v("high_kappa_fraction", o.high_kappa_fraction);
  v("prune_theta_min", o.prune_theta_min);
  v("prune_scale_fraction", o.prune_scale_fraction);
  v("prune_scale_after", o.prune_scale_after);
  v("max_primitives", o.max_primitives);
  v("scene_extent", o.scene_extent);
  v("scene_extent_multiplier", o.scene_extent_multiplier);
  v("opacity_reset_interval", o.opacity_reset_interval);
  v("seed", o.seed);
  v("threads", o.threads);
  v.section("loss", o.loss);
  v.section("render", o.render);
}

template <typename V>
void fields(V& v, DiskProtocol& o) {
  v("size", o.size);
  v("radius", o.radius);
  v("focal", o.focal);
  v("depth", o.depth);
  v("init_scale_pixels", o.init_scale_pixels);
  v("iterations", o.iterations);
}

template <typename V>
void fields(V& v, ShapesProtocol& o) {
  v("size", o.size);
  v("count", o.count);
  v("focal", o.focal);
  v("depth", o.depth);
  v("iterations", o.iterations);
}

template <typename V>
void fields(V& v, SlabInit& o) {
  v("count", o.count);
  v("depth", o.depth);
  v("thickness", o.thickness);
  v("color", o.color);
  v("theta", o.theta);
  v("opacity", o.opacity);
  v("scale_pixels", o.scale_pixels);
  v("centered", o.centered);
}

template <typename V>
void fields(V& v, TomoGeometry& o) {
  v("width", o.width);
  v("height", o.height);
  v("source_distance", o.source_distance);
  v("field_half_width", o.field_half_width);
  v("parallel_beam", o.parallel_beam);
  v("arc_degrees", o.arc_degrees);
  v("noise_sigma", o.noise_sigma);
  v("seed", o.seed);
}

template <typename V>
void fields(V& v, GridSpec& o) {
  v("n", o.n);
  v("lo", o.lo);
  v("hi", o.hi);
}

template <typename V>
void fields(V& v, TomoConfig& o) {
  v("init", o.init);
  v("init_count", o.init_count);
  v("init_scale", o.init_scale);
  v("init_theta", o.init_theta);
  v("init_lo", o.init_lo);
  v("init_hi", o.init_hi);
  v.section("grid", o.grid);
  v.section("train", o.train);
}

template <typename V>
void fields(V& v, PhantomComponent& o) {
  v("shape", o.shape);
  v("center", o.center);
  v("axes", o.axes);
  v("rotation", o.rotation);
  v("density", o.density);
}

template <typename V>
void fields(V& v, GradcheckJob& o) {
  v("scenes", o.scenes);
  v("primitives", o.primitives);
  v("size", o.size);
  v("spread", o.spread);
  v("analytic", o.analytic);
  v("splat", o.splat);
  v("tolerance", o.tolerance);
  v("min_pass_fraction", o.min_pass_fraction);
  v("l2_check", o.l2_check);
  v("l2_tolerance", o.l2_tolerance);
  v.section("loss", o.loss);
}

struct ReadVisitor {
  ObjectReader& r;
  template <typename T>
  void operator()(const char* key, T& value) {
    r.read(key, value);
  }
  template <typename S>
  void section(const char* key, S& s) {
    ObjectReader child = r.child(key);
    ReadVisitor v{child};
    fields(v, s);
    child.finish();
  }
};

struct WriteVisitor {
  json& j;
  template <typename T>
  void operator()(const char* key, const T& value) {
    if constexpr (std::is_enum_v<T>)
      j[key] = enum_name(value);
    else if constexpr (requires { value.rows(); })
      j[key] = to_json(value);
    else
      j[key] = value;
  }
  template <typename S>
  void section(const char* key, S& s) {
    json child = json::object();
    WriteVisitor v{child};
    fields(v, s);
    j[key] = child;
  }
};

template <typename S>
json to_json_fields(S s) {
  json j = json::object();
  WriteVisitor v{j};
  fields(v, s);
  return j;
}

template <typename S>
void read_section(ObjectReader& parent, const char* key, S& s) {
  ReadVisitor v{parent};
  v.section(key, s);
}

/// Semantic checks reported under `path`.
inline void add_all(Problems& p, const std::string& path, const std::vector<std::string>& list) {
  for (const auto& s : list) p.add(path, s);
}

inline std::vector<std::string> render_problems(const RenderOptions& o) {
  std::vector<std::string> p;
  if (o.tile_size < 1) p.push_back("render.tile_size must be >= 1");
  if (!(o.alpha_max > 0.0 && o.alpha_max < 1.0)) p.push_back("render.alpha_max must be in (0, 1)");
  if (!(o.splat_alpha_min >= 0.0 && o.splat_alpha_min < 1.0)) p.push_back("render.splat_alpha_min must be in [0, 1)");
  if (!(o.transmittance_min >= 0.0 && o.transmittance_min < 1.0))
    p.push_back("render.transmittance_min must be in [0, 1)");
  if (!(o.analytic_bin_epsilon > 0.0)) p.push_back("render.analytic_bin_epsilon must be > 0");
  return p;
}

inline void check_train(Problems& p, const std::string& path, const TrainConfig& t) {
  add_all(p, path, t.problems());
  add_all(p, path, render_problems(t.render));
}

// ---------------------------------------------------------------------------
// Documents

inline ObjectReader open_config(const json& j, Problems& problems, const std::string& command) {
  ObjectReader r(&j, "", problems, std::string(kConfigFormat) + " v1");
  check_header(r, kConfigFormat, kFormatVersion);
  std::string cmd;
  r.require("command");
  r.read("command", cmd);
  if (r.has("command") && cmd != command)
    problems.add("command", "config is for '" + cmd + "', not '" + command + "'");
  return r;
}

inline json config_header(const std::string& command) {
  json j = header(kConfigFormat, kFormatVersion);
  j["command"] = command;
  return j;
}

inline FitJob parse_fit_job(const std::string& text, const std::string& source) {
  const json j = parse_json(text, source);
  Problems problems(source);
  ObjectReader r = open_config(j, problems, "fit");
  FitJob job;
  r.read("protocol", job.protocol);
  if (job.protocol != "disk" && job.protocol != "shapes" && job.protocol != "views")
    problems.add("protocol", "expected disk, shapes or views");
  read_section(r, "train", job.train);
  read_section(r, "disk", job.disk);
  read_section(r, "shapes", job.shapes);
  read_section(r, "init", job.init);
  r.read("background", job.background);
  if (const json* views = r.get("views")) {
    if (!views->is_array()) {
      problems.add("views", "expected an array");
    } else {
      for (std::size_t i = 0; i < views->size(); ++i) {
        ObjectReader vr(&(*views)[i], "views[" + std::to_string(i) + "]", problems, r.tag());
        FitViewSpec spec;
        vr.require("target");
        vr.require("camera");
        vr.read("target", spec.target);
        if (vr.has("camera")) spec.camera = read_camera(vr.child("camera"));
        vr.finish();
        job.views.push_back(spec);
      }
    }
  }
  r.finish();
  if (job.protocol == "views" && job.views.empty() && problems.empty())
    problems.add("views", "the views protocol needs at least one view");
  check_train(problems, "train", job.train);
  auto positive = [&](const std::string& path, double v) {
    if (!(v > 0.0)) problems.add(path, "must be > 0");
  };
  auto in_unit = [&](const std::string& path, double v) {
    if (!(v >= 0.0 && v <= 1.0)) problems.add(path, "must be in [0, 1]");
  };
  positive("disk.size", job.disk.size);
  positive("disk.radius", job.disk.radius);
  positive("disk.focal", job.disk.focal);
  positive("disk.depth", job.disk.depth);
  positive("disk.init_scale_pixels", job.disk.init_scale_pixels);
  if (job.disk.iterations < 0) problems.add("disk.iterations", "must be >= 0");
  positive("shapes.size", job.shapes.size);
  positive("shapes.count", job.shapes.count);
  positive("shapes.focal", job.shapes.focal);
  positive("shapes.depth", job.shapes.depth);
  if (job.shapes.iterations < 0) problems.add("shapes.iterations", "must be >= 0");
  positive("init.count", job.init.count);
  positive("init.depth", job.init.depth);
  in_unit("init.theta", job.init.theta);
  in_unit("init.opacity", job.init.opacity);
  if (!(job.init.scale_pixels >= 0.0)) problems.add("init.scale_pixels", "must be >= 0");
  problems.throw_if_any();
  return job;
}

inline json fit_job_to_json(const FitJob& job) {
  json j = config_header("fit");
  j["protocol"] = job.protocol;
  j["train"] = to_json_fields(job.train);
  j["disk"] = to_json_fields(job.disk);
  j["shapes"] = to_json_fields(job.shapes);
  j["init"] = to_json_fields(job.init);
  j["background"] = to_json(job.background);
  if (!job.views.empty()) {
    json views = json::array();
    for (const auto& v : job.views) views.push_back({{"target", v.target}, {"camera", camera_to_json(v.camera)}});
    j["views"] = views;
  }
  return j;
}

inline TomoJob parse_tomo_job(const std::string& text, const std::string& source) {
  const json j = parse_json(text, source);
  Problems problems(source);
  ObjectReader r = open_config(j, problems, "tomo");
  TomoJob job;
  r.read("phantom", job.phantom);
  if (job.phantom != "blob" && job.phantom != "ellipsoids" && job.phantom != "custom")
    problems.add("phantom", "expected blob, ellipsoids or custom");
  r.read("views", job.views);
  read_section(r, "geometry", job.geometry);
  read_section(r, "reconstruct", job.reconstruct);
  if (const json* comps = r.get("components")) {
    if (!comps->is_array()) {
      problems.add("components", "expected an array");
    } else {
      for (std::size_t i = 0; i < comps->size(); ++i) {
        ObjectReader cr(&(*comps)[i], "components[" + std::to_string(i) + "]", problems, r.tag());
        PhantomComponent c;
        ReadVisitor v{cr};
        fields(v, c);
        cr.finish();
        if (!(c.axes.array() > 0.0).all()) problems.add(cr.location() + ".axes", "components must be > 0");
        if (!(c.density >= 0.0)) problems.add(cr.location() + ".density", "must be >= 0");
        if (!(c.rotation.norm() > 0.0)) problems.add(cr.location() + ".rotation", "quaternion must be non-zero");
        c.rotation.normalize();
        job.components.push_back(c);
      }
    }
  }
  r.finish();
  if (job.phantom == "custom" && job.components.empty() && problems.empty())
    problems.add("components", "a custom phantom needs at least one component");
  if (job.views < 2) problems.add("views", "must be >= 2");
  add_all(problems, "geometry", job.geometry.problems());
  add_all(problems, "reconstruct", job.reconstruct.problems());
  add_all(problems, "reconstruct.train", render_problems(job.reconstruct.train.render));
  problems.throw_if_any();
  return job;
}

inline json tomo_job_to_json(const TomoJob& job) {
  json j = config_header("tomo");
  j["phantom"] = job.phantom;
  j["views"] = job.views;
  j["geometry"] = to_json_fields(job.geometry);
  j["reconstruct"] = to_json_fields(job.reconstruct);
  if (!job.components.empty()) {
    json comps = json::array();
    for (const auto& c : job.components) comps.push_back(to_json_fields(c));
    j["components"] = comps;
  }
  return j;
}

inline GradcheckJob parse_gradcheck_job(const std::string& text, const std::string& source) {
  const json j = parse_json(text, source);
  Problems problems(source);
  ObjectReader r = open_config(j, problems, "gradcheck");
  GradcheckJob job;
  ReadVisitor v{r};
  fields(v, job);
  r.finish();
  add_all(problems, "(root)", job.problems());
  if (!(job.loss.lambda >= 0.0 && job.loss.lambda <= 1.0)) problems.add("loss.lambda", "must be in [0, 1]");
  problems.throw_if_any();
  return job;
}

inline json gradcheck_job_to_json(const GradcheckJob& job) {
  json j = config_header("gradcheck");
  const json body = to_json_fields(job);
  for (auto& [k, v] : body.items()) j[k] = v;
  return j;
}

}  // namespace volgauss::io
