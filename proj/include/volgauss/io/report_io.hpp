#pragma once

#include "volgauss/io/scene_io.hpp"
#include "volgauss/optim.hpp"

#include <cmath>
#include <string>
#include <vector>

namespace volgauss::io {

inline constexpr const char* kEventLogFormat = "volgauss-events";
inline constexpr const char* kCheckpointFormat = "volgauss-checkpoint";

template <>
struct EnumNames<DensifyKind> {
  static std::span<const std::pair<const char*, DensifyKind>> list() {
    static constexpr std::pair<const char*, DensifyKind> names[] = {{"split", DensifyKind::split},
            {"clone", DensifyKind::clone},
            {"prune", DensifyKind::prune},
            {"clamp", DensifyKind::clamp}};
    return names;
  }
};

/// JSON has no inf/nan; PSNR of identical images is written as null.
inline json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json metrics_to_json(const ImageMetrics& m) {
  return {{"mse", m.mse}, {"psnr", number_or_null(m.psnr)}, {"ssim", m.ssim}};
}

inline json fit_report_to_json(const FitReport& r, std::size_t loss_stride = 1) {
  json j;
  json loss = json::array();
  for (std::size_t i = 0; i < r.loss.size(); i += std::max<std::size_t>(1, loss_stride)) {
    loss.push_back({{"iteration", i}, {"loss", r.loss[i]}, {"primitives", r.primitive_count[i]}});
  }
  j["loss_curve"] = loss;
  j["final_loss"] = r.loss.empty() ? json(nullptr) : json(r.loss.back());
  j["primitive_count"] = r.primitive_count.empty() ? 0 : r.primitive_count.back();
  json views = json::array();
  for (const auto& m : r.final_metrics) views.push_back(metrics_to_json(m));
  j["views"] = views;
  j["mean"] = metrics_to_json(r.mean_metrics);
  return j;
}

// ---------------------------------------------------------------------------
// Densification event log

inline json event_to_json(const DensifyEvent& e) {
  json j;
  j["iteration"] = e.iteration;
  j["kind"] = enum_name(e.kind);
  j["reason"] = e.reason;
  j["parent"] = e.parent;
  j["parent_theta"] = e.parent_theta;
  j["parent_scale"] = to_json(e.parent_scale);
  json ids = json::array(), thetas = json::array(), scales = json::array();
  for (std::size_t i = 0; i < e.children.size(); ++i) {
    ids.push_back(e.children[i]);
    thetas.push_back(e.child_theta[i]);
    scales.push_back(to_json(e.child_scale[i]));
  }
  j["children"] = ids;
  j["child_theta"] = thetas;
  j["child_scale"] = scales;
  if (e.kind == DensifyKind::clamp) j["target_kappa"] = e.target_kappa;
  return j;
}

/// Events plus what a replay needs to judge them.
struct EventLog {
  std::string mode = "analytic";
  double extent = 0.0;
  double prune_theta_min = 0.0;
  double prune_scale_fraction = 0.0;
  int prune_scale_after = 0;
  std::vector<DensifyEvent> events;

  static EventLog of(const std::vector<DensifyEvent>& events, RenderMode mode, const TrainConfig& cfg,
                     double extent) {
    return {to_string(mode), extent, cfg.prune_theta_min, cfg.prune_scale_fraction, cfg.prune_scale_after, events};
  }
};

inline std::string event_log_text(const EventLog& log) {
  json j = header(kEventLogFormat, kFormatVersion);
  j["mode"] = log.mode;
  j["extent"] = log.extent;
  j["prune_theta_min"] = log.prune_theta_min;
  j["prune_scale_fraction"] = log.prune_scale_fraction;
  j["prune_scale_after"] = log.prune_scale_after;
  json list = json::array();
  for (const auto& e : log.events) list.push_back(event_to_json(e));
  j["events"] = list;
  return dump(j);
}

inline EventLog parse_event_log(const std::string& text, const std::string& source) {
  const json j = parse_json(text, source);
  Problems problems(source);
  ObjectReader r(&j, "", problems, std::string(kEventLogFormat) + " v1");
  check_header(r, kEventLogFormat, kFormatVersion);
  EventLog log;
  r.read("mode", log.mode);
  r.read("extent", log.extent);
  r.read("prune_theta_min", log.prune_theta_min);
  r.read("prune_scale_fraction", log.prune_scale_fraction);
  r.read("prune_scale_after", log.prune_scale_after);
  auto& out = log.events;
  if (const json* list = r.get("events"); list && list->is_array()) {
    for (std::size_t i = 0; i < list->size(); ++i) {
      ObjectReader er(&(*list)[i], "events[" + std::to_string(i) + "]", problems, r.tag());
      DensifyEvent e;
      er.read("iteration", e.iteration);
      er.read("kind", e.kind);
      er.read("reason", e.reason);
      er.read("parent", e.parent);
      er.read("parent_theta", e.parent_theta);
      er.read("parent_scale", e.parent_scale);
      er.read("target_kappa", e.target_kappa);
      const json* ids = er.get("children");
      const json* thetas = er.get("child_theta");
      const json* scales = er.get("child_scale");
      if (!ids || !thetas || !scales || !ids->is_array() || ids->size() != thetas->size() ||
          ids->size() != scales->size()) {
        problems.add(er.location(), "children, child_theta and child_scale must be equal-length arrays");
      } else {
        for (std::size_t k = 0; k < ids->size(); ++k) {
          Vec3 s;
          if (!(*ids)[k].is_number_unsigned() || !(*thetas)[k].is_number() ||
              !ObjectReader::read_vector((*scales)[k], s)) {
            problems.add(er.location() + ".children[" + std::to_string(k) + "]", "malformed child entry");
            continue;
          }
          e.children.push_back((*ids)[k].get<std::uint64_t>());
          e.child_theta.push_back((*thetas)[k].get<double>());
          e.child_scale.push_back(s);
        }
      }
      er.finish();
      out.push_back(std::move(e));
    }
  } else {
    problems.add("events", "expected an array");
  }
  r.finish();
  problems.throw_if_any();
  return log;
}

// ---------------------------------------------------------------------------
// Checkpoint: scene plus optimizer moments

struct Checkpoint {
  SceneFile scene;
  OptimizerState state;
  std::string mode = "analytic";
  int iteration = 0;
  double extent = 0.0;
};

inline std::string checkpoint_text(const Checkpoint& c) {
  json j = header(kCheckpointFormat, kFormatVersion);
  j["mode"] = c.mode;
  j["iteration"] = c.iteration;
  j["extent"] = c.extent;
  j["scene"] = scene_to_json(c.scene);
  json opt;
  opt["step"] = c.state.step;
  opt["next_id"] = c.state.next_id;
  json prims = json::array();
  for (const PrimitiveState& p : c.state.prims) {
    json q;
    q["id"] = p.id;
    q["m"] = p.m;
    q["v"] = p.v;
    q["color_feature"] = to_json(p.color_feature);
    q["grad_accum"] = p.grad_accum;
    q["grad_count"] = p.grad_count;
    prims.push_back(q);
  }
  opt["primitives"] = prims;
  j["optimizer"] = opt;
  return dump(j);
}

inline Checkpoint parse_checkpoint(const std::string& text, const std::string& source) {
  const json j = parse_json(text, source);
  Problems problems(source);
  ObjectReader r(&j, "", problems, std::string(kCheckpointFormat) + " v1");
  check_header(r, kCheckpointFormat, kFormatVersion);
  Checkpoint c;
  r.read("mode", c.mode);
  r.read("iteration", c.iteration);
  r.read("extent", c.extent);
  r.require("scene");
  if (const json* s = r.get("scene")) {
    try {
      c.scene = read_scene(*s, source + " (scene)");
    } catch (const ValidationError& e) {
      problems.add("scene", e.what());
    }
  }
  ObjectReader opt = r.child("optimizer");
  opt.read("step", c.state.step);
  opt.read("next_id", c.state.next_id);
  if (const json* prims = opt.get("primitives"); prims && prims->is_array()) {
    for (std::size_t i = 0; i < prims->size(); ++i) {
      ObjectReader pr(&(*prims)[i], "optimizer.primitives[" + std::to_string(i) + "]", problems, r.tag());
      PrimitiveState p;
      pr.read("id", p.id);
      for (const char* key : {"m", "v"}) {
        auto& arr = key[0] == 'm' ? p.m : p.v;
        const json* a = pr.get(key);
        if (!a || !a->is_array() || a->size() != arr.size()) {
          problems.add(pr.path(key), "expected " + std::to_string(arr.size()) + " numbers");
          continue;
        }
        for (std::size_t k = 0; k < arr.size(); ++k) arr[k] = (*a)[k].get<double>();
      }
      pr.read("color_feature", p.color_feature);
      pr.read("grad_accum", p.grad_accum);
      pr.read("grad_count", p.grad_count);
      pr.finish();
      c.state.prims.push_back(p);
    }
  } else if (opt.present()) {
    problems.add("optimizer.primitives", "expected an array");
  }
  opt.finish();
  r.finish();
  if (problems.empty() && c.state.prims.size() != c.scene.scene.size())
    problems.add("optimizer.primitives", "count does not match the scene");
  problems.throw_if_any();
  return c;
}

}  // namespace volgauss::io
