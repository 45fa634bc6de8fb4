// volgauss command-line front end.
//
// Exit codes: 0 success, 1 invalid input, 2 numerical failure (divergence,
// non-finite values, or a failed gradient check).

#include "volgauss/fd_check.hpp"
#include "volgauss/io/config_io.hpp"
#include "volgauss/io/grid_io.hpp"
#include "volgauss/io/image_io.hpp"
#include "volgauss/io/report_io.hpp"
#include "volgauss/io/scene_io.hpp"
#include "volgauss/optim.hpp"
#include "volgauss/oracle.hpp"
#include "volgauss/parallel.hpp"
#include "volgauss/tomo.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace volgauss;
using io::json;

namespace {

struct Options {
  std::string scene;
  std::string camera;
  std::string mode;
  std::string config;
  std::string out = ".";
  std::optional<std::uint64_t> seed;
  int threads = 0;
  int steps = 10000;
  std::vector<std::string> images;
  std::vector<std::string> references;
};

/// Wall-clock phases, written next to the outputs but never into them.
class Timings {
 public:
  template <typename Fn>
  auto time(const std::string& name, Fn&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    if constexpr (std::is_void_v<decltype(fn())>) {
      fn();
      record(name, t0);
    } else {
      auto r = fn();
      record(name, t0);
      return r;
    }
  }

  void write(const fs::path& dir, int threads) const {
    json j = timings_;
    j["threads"] = resolve_threads(threads);
    io::write_text_file((dir / "timings.json").string(), io::dump(j));
  }

 private:
  void record(const std::string& name, std::chrono::steady_clock::time_point t0) {
    timings_[name + "_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }
  json timings_ = json::object();
};

RenderMode parse_mode(const std::string& s) { return s == "splat" ? RenderMode::splat : RenderMode::analytic; }

std::vector<RenderMode> selected_modes(const Options& o) {
  if (o.mode.empty()) return {RenderMode::analytic, RenderMode::splat};
  return {parse_mode(o.mode)};
}

fs::path out_dir(const Options& o) {
  const fs::path dir(o.out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ValidationError(o.out + ": cannot create output directory: " + ec.message());
  return dir;
}

void write_image_pair(const fs::path& dir, const std::string& stem, const Image& im) {
  io::write_pfm((dir / (stem + ".pfm")).string(), im);
  io::write_png((dir / (stem + ".png")).string(), im);
}

/// Scales a non-negative image by its maximum for viewing.
Image normalized(const Image& im) {
  Image out = im;
  double m = 0.0;
  for (double v : im.data) m = std::max(m, v);
  if (m > 0.0)
    for (double& v : out.data) v /= m;
  return out;
}

std::string indexed(const std::string& stem, std::size_t i, std::size_t n) {
  return n == 1 ? stem : stem + "_" + std::to_string(i);
}

io::SceneFile load_scene_option(const Options& o) {
  if (o.scene.empty()) throw ValidationError("--scene is required");
  return io::load_scene(o.scene);
}

std::vector<Camera> cameras_for(const Options& o, const io::SceneFile& f) {
  if (!o.camera.empty()) return io::load_camera_file(o.camera);
  if (!f.cameras.empty()) return f.cameras;
  throw ValidationError("no camera: pass --camera or list cameras in the scene file");
}

void warn_if_nothing_in_front(const Scene& scene, const Camera& cam, std::size_t index) {
  if (scene.empty()) return;
  for (const Gaussian3D& g : scene.gaussians)
    if (cam.to_camera(g.mean).z() > cam.z_near) return;
  std::cerr << "warning: camera " << index << ": every primitive is behind the camera; rendering background\n";
}

// ---------------------------------------------------------------------------

// Thread counts go to timings.json; reports stay identical across them.
json without_threads(json j) {
  if (!j.is_object()) return j;
  j.erase("threads");
  for (auto& [key, value] : j.items()) value = without_threads(value);
  return j;
}

int cmd_render(const Options& o) {
  Timings t;
  const fs::path dir = out_dir(o);
  const io::SceneFile f = load_scene_option(o);
  const std::vector<Camera> cams = cameras_for(o, f);
  const RenderMode mode = parse_mode(o.mode);
  RenderOptions opt;
  opt.threads = o.threads;
  for (std::size_t i = 0; i < cams.size(); ++i) {
    warn_if_nothing_in_front(f.scene, cams[i], i);
    const RenderOutput r = t.time("render", [&] { return render(f.scene, cams[i], mode, opt); });
    write_image_pair(dir, indexed("render", i, cams.size()), r.color);
  }
  std::cout << "rendered " << cams.size() << " view(s), " << f.scene.size() << " primitives, mode "
            << to_string(mode) << "\n";
  t.write(dir, o.threads);
  return 0;
}

int cmd_compare(const Options& o) {
  Timings t;
  const fs::path dir = out_dir(o);
  const io::SceneFile f = load_scene_option(o);
  const std::vector<Camera> cams = cameras_for(o, f);
  const Camera& cam = cams.front();
  warn_if_nothing_in_front(f.scene, cam, 0);
  RenderOptions opt;
  opt.threads = o.threads;
  MarchConfig march;
  march.step_count = o.steps;

  const std::vector<std::pair<std::string, Image>> renders = {
      {"analytic", t.time("analytic", [&] { return render(f.scene, cam, RenderMode::analytic, opt).color; })},
      {"splat", t.time("splat", [&] { return render(f.scene, cam, RenderMode::splat, opt).color; })},
      {"raymarch", t.time("raymarch", [&] { return raymarch_image(f.scene, cam, march, o.threads).color; })},
      {"exact_sorted", t.time("exact_sorted", [&] { return render_exact_sorted(f.scene, cam, opt).color; })},
  };
  for (const auto& [name, im] : renders) write_image_pair(dir, name, im);

  const std::pair<int, int> pairs[] = {{0, 2}, {3, 2}, {1, 2}, {0, 3}, {0, 1}};
  json table = json::array();
  std::printf("%-14s %-14s %12s %12s  %s\n", "a", "b", "max_abs", "mean_abs", "argmax");
  for (const auto& [a, b] : pairs) {
    const ImageDifference d = image_difference(renders[a].second, renders[b].second);
    const std::string stem = "diff_" + renders[a].first + "_" + renders[b].first;
    io::write_pfm((dir / (stem + ".pfm")).string(), d.per_pixel);
    io::write_png((dir / (stem + ".png")).string(), normalized(d.per_pixel));
    table.push_back({{"a", renders[a].first},
                     {"b", renders[b].first},
                     {"max_abs", d.max_abs},
                     {"mean_abs", d.mean_abs},
                     {"argmax", {d.argmax_x, d.argmax_y}},
                     {"difference_image", stem + ".pfm"}});
    std::printf("%-14s %-14s %12.3e %12.3e  (%d, %d)\n", renders[a].first.c_str(), renders[b].first.c_str(),
                d.max_abs, d.mean_abs, d.argmax_x, d.argmax_y);
  }
  json report;
  report["primitives"] = f.scene.size();
  report["width"] = cam.width;
  report["height"] = cam.height;
  report["raymarch_steps"] = o.steps;
  report["pairs"] = table;
  io::write_text_file((dir / "compare.json").string(), io::dump(report));
  t.write(dir, o.threads);
  return 0;
}

io::FitJob load_fit_job(const Options& o) {
  return o.config.empty() ? io::FitJob{} : io::parse_fit_job(io::read_text_file(o.config), o.config);
}

io::FitJob effective_fit_job(const Options& o) {
  io::FitJob job = load_fit_job(o);
  if (o.seed) job.train.seed = *o.seed;
  job.train.threads = o.threads;
  // The fixed protocols compare modes on an identical schedule.
  if (job.protocol == "disk") {
    job.train.iterations = job.disk.iterations;
    job.train.densify = false;
  } else if (job.protocol == "shapes") {
    job.train.iterations = job.shapes.iterations;
    job.train.densify = false;
  }
  return job;
}

FitSetup fit_setup(const io::FitJob& job, const Options& o) {
  if (job.protocol == "disk") return disk_setup(job.disk, job.train.seed);
  if (job.protocol == "shapes") return shapes_setup(job.shapes, job.train.seed);
  FitSetup f;
  const fs::path base = o.config.empty() ? fs::path(".") : fs::path(o.config).parent_path();
  for (const io::FitViewSpec& v : job.views) {
    const fs::path p = fs::path(v.target).is_absolute() ? fs::path(v.target) : base / v.target;
    Image target = io::to_rgb(io::read_image(p.string()));
    if (target.width != v.camera.width || target.height != v.camera.height)
      throw ValidationError(p.string() + ": image size does not match its camera");
    f.views.push_back({v.camera, std::move(target)});
  }
  if (!o.scene.empty()) {
    f.init = io::load_scene(o.scene).scene;
  } else {
    f.init = init_slab(f.views.front().camera, job.init, job.train.seed);
    f.init.background = job.background;
  }
  for (const Gaussian3D& g : f.init.gaussians) f.focus += g.mean;
  if (!f.init.empty()) f.focus /= static_cast<double>(f.init.size());
  return f;
}

int cmd_fit(const Options& o) {
  Timings t;
  const fs::path dir = out_dir(o);
  const io::FitJob job = effective_fit_job(o);
  const FitSetup setup = fit_setup(job, o);
  std::vector<Camera> cams;
  for (const FitView& v : setup.views) cams.push_back(v.camera);
  for (std::size_t i = 0; i < setup.views.size(); ++i)
    io::write_png((dir / (indexed("target", i, setup.views.size()) + ".png")).string(), setup.views[i].target);

  json report;
  report["config"] = without_threads(io::fit_job_to_json(job));
  json modes = json::object();
  std::vector<std::pair<RenderMode, double>> mse;
  for (RenderMode mode : selected_modes(o)) {
    const std::string name = to_string(mode);
    FitResult res;
    try {
      res = t.time("fit_" + name, [&] { return fit_image(setup.init, setup.views, job.train, mode, setup.focus); });
    } catch (const DivergenceError& e) {
      io::Checkpoint c;
      c.scene = {e.last_good(), cams};
      c.state = OptimizerState::for_scene(e.last_good());
      c.mode = name;
      c.iteration = e.iteration();
      io::write_text_file((dir / ("checkpoint_" + name + "_last_good.json")).string(), io::checkpoint_text(c));
      throw;
    }
    io::save_scene((dir / ("scene_" + name + ".json")).string(), {res.scene, cams});
    io::write_text_file((dir / ("events_" + name + ".json")).string(),
                        io::event_log_text(io::EventLog::of(res.events, mode, job.train, res.extent)));
    io::Checkpoint c{{res.scene, cams}, res.state, name, job.train.iterations, res.extent};
    io::write_text_file((dir / ("checkpoint_" + name + ".json")).string(), io::checkpoint_text(c));
    RenderOptions opt = job.train.render;
    opt.threads = o.threads;
    for (std::size_t i = 0; i < setup.views.size(); ++i)
      write_image_pair(dir, indexed("render_" + name, i, setup.views.size()),
                       render(res.scene, setup.views[i].camera, mode, opt).color);
    json r = io::fit_report_to_json(res.report, std::max(1, job.train.iterations / 200));
    r["events"] = res.events.size();
    modes[name] = r;
    const ImageMetrics& m = res.report.mean_metrics;
    std::printf("%-8s final MSE %.6e  PSNR %.3f dB  SSIM %.5f  primitives %zu\n", name.c_str(), m.mse, m.psnr,
                m.ssim, res.scene.size());
    mse.emplace_back(mode, m.mse);
  }
  report["modes"] = modes;
  if (mse.size() == 2) {
    const double ratio = mse[1].second > 0.0 ? mse[0].second / mse[1].second : 0.0;
    report["comparison"] = {{"analytic_over_splat_mse", ratio}, {"analytic_mse_lower", mse[0].second < mse[1].second}};
    std::printf("analytic/splat MSE ratio %.4f\n", ratio);
  }
  io::write_text_file((dir / "fit_report.json").string(), io::dump(report));
  t.write(dir, o.threads);
  return 0;
}

io::TomoJob effective_tomo_job(const Options& o) {
  io::TomoJob job = o.config.empty() ? io::TomoJob{} : io::parse_tomo_job(io::read_text_file(o.config), o.config);
  if (o.seed) {
    job.geometry.seed = *o.seed;
    job.reconstruct.train.seed = *o.seed;
  }
  job.reconstruct.train.threads = o.threads;
  return job;
}

int cmd_tomo(const Options& o) {
  Timings t;
  const fs::path dir = out_dir(o);
  const io::TomoJob job = effective_tomo_job(o);
  const Phantom phantom = job.make_phantom();
  const auto projections =
      t.time("projections", [&] { return make_phantom_projections(phantom, job.views, job.geometry); });
  const DensityGrid reference =
      t.time("voxelize_phantom", [&] { return voxelize(phantom, job.reconstruct.grid, o.threads); });
  const TomoResult res = t.time("reconstruct", [&] { return reconstruct(projections, job.reconstruct, &reference); });

  const fs::path proj_dir = dir / "projections";
  fs::create_directories(proj_dir);
  for (std::size_t i = 0; i < projections.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "view_%03zu", i);
    io::write_pfm((proj_dir / (std::string(name) + ".pfm")).string(), projections[i].image);
    io::write_png((proj_dir / (std::string(name) + ".png")).string(), normalized(projections[i].image));
  }
  io::write_grid((dir / "reconstruction.raw").string(), (dir / "reconstruction.txt").string(), res.grid);
  io::write_grid((dir / "reference.raw").string(), (dir / "reference.txt").string(), reference);
  io::save_scene((dir / "scene.json").string(), {res.scene, {}});

  json report;
  report["config"] = without_threads(io::tomo_job_to_json(job));
  report["psnr3d"] = io::number_or_null(res.report.psnr3d);
  report["ssim3d"] = res.report.ssim3d;
  report["projection_mse"] = res.report.projection_mse;
  report["final_loss"] = res.report.loss.empty() ? json(nullptr) : json(res.report.loss.back());
  report["primitives"] = res.scene.size();
  json curve = json::array();
  const std::size_t stride = std::max<std::size_t>(1, res.report.loss.size() / 200);
  for (std::size_t i = 0; i < res.report.loss.size(); i += stride)
    curve.push_back({{"iteration", i}, {"loss", res.report.loss[i]}});
  report["loss_curve"] = curve;
  io::write_text_file((dir / "tomo_report.json").string(), io::dump(report));
  std::printf("3D PSNR: %.3f dB\n3D SSIM: %.5f\nprimitives: %zu\n", res.report.psnr3d, res.report.ssim3d,
              res.scene.size());
  t.write(dir, o.threads);
  return 0;
}

int cmd_gradcheck(const Options& o) {
  Timings t;
  const fs::path dir = out_dir(o);
  const io::GradcheckJob job =
      o.config.empty() ? io::GradcheckJob{} : io::parse_gradcheck_job(io::read_text_file(o.config), o.config);
  const std::uint64_t seed = o.seed.value_or(0);
  const GradcheckOutcome out = t.time("gradcheck", [&] { return run_gradcheck(job, seed, o.threads); });
  json runs = json::array();
  std::size_t passed = 0;
  for (const GradcheckRun& r : out.runs) {
    json failures = json::array();
    for (const FdEntry& e : r.report.entries)
      if (!e.pass)
        failures.push_back({{"primitive", e.primitive},
                            {"parameter", e.parameter},
                            {"component", e.component},
                            {"analytic", e.analytic},
                            {"numeric", e.numeric},
                            {"rel_error", e.rel_error}});
    runs.push_back({{"scene", r.scene},
                    {"mode", to_string(r.mode)},
                    {"loss", to_string(r.loss.kind)},
                    {"tolerance", r.report.tolerance},
                    {"strict", r.strict},
                    {"parameters", r.report.entries.size()},
                    {"pass_fraction", r.report.pass_fraction()},
                    {"max_rel_error", r.report.max_rel_error()},
                    {"pass", r.pass()},
                    {"failures", failures}});
    passed += r.pass();
  }
  json report;
  report["config"] = without_threads(io::gradcheck_job_to_json(job));
  report["seed"] = seed;
  report["runs"] = runs;
  report["suite_pass_fraction"] = out.suite_fraction();
  report["min_pass_fraction"] = out.min_pass_fraction;
  report["all_pass"] = out.all_pass();
  io::write_text_file((dir / "gradcheck_report.json").string(), io::dump(report));
  std::printf("gradcheck: suite pass fraction %.4f (needs %.4f), %zu/%zu runs pass%s\n", out.suite_fraction(),
              out.min_pass_fraction, passed, out.runs.size(), out.all_pass() ? "" : " (FAILED)");
  t.write(dir, o.threads);
  return out.all_pass() ? 0 : 2;
}

int cmd_metrics(const Options& o) {
  if (o.images.empty()) throw ValidationError("--image is required");
  if (o.references.size() != 1 && o.references.size() != o.images.size())
    throw ValidationError("give one --reference, or one per --image");
  json rows = json::array();
  ImageMetrics mean;
  for (std::size_t i = 0; i < o.images.size(); ++i) {
    const std::string& ref_path = o.references[o.references.size() == 1 ? 0 : i];
    Image a = io::read_image(o.images[i]);
    Image b = io::read_image(ref_path);
    if (a.channels != b.channels) {
      a = io::to_rgb(a);
      b = io::to_rgb(b);
    }
    if (!a.same_shape(b)) throw ValidationError(o.images[i] + ": size differs from " + ref_path);
    const ImageMetrics m = image_metrics(a, b);
    std::printf("%s vs %s: MSE %.6e  PSNR %.3f dB  SSIM %.5f\n", o.images[i].c_str(), ref_path.c_str(), m.mse, m.psnr,
                m.ssim);
    json row = io::metrics_to_json(m);
    row["image"] = o.images[i];
    row["reference"] = ref_path;
    rows.push_back(row);
    mean.mse += m.mse / o.images.size();
    mean.ssim += m.ssim / o.images.size();
  }
  mean.psnr = psnr_from_mse(mean.mse);
  if (o.images.size() > 1) std::printf("mean: MSE %.6e  PSNR %.3f dB  SSIM %.5f\n", mean.mse, mean.psnr, mean.ssim);
  json report;
  report["images"] = rows;
  report["mean"] = io::metrics_to_json(mean);
  io::write_text_file((out_dir(o) / "metrics.json").string(), io::dump(report));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Volumetric Gaussian renderer, fitter and tomography tool"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--out", o.out, "Output directory")->capture_default_str();
    sub->add_option("--threads", o.threads, "Worker threads (0: VOLGAUSS_THREADS or all cores)")
        ->check(CLI::NonNegativeNumber);
    sub->add_option("--seed", o.seed, "Seed overriding the config");
  };
  auto scene_camera = [&](CLI::App* sub) {
    sub->add_option("--scene", o.scene, "Scene file")->check(CLI::ExistingFile);
    sub->add_option("--camera", o.camera, "Camera file (default: cameras in the scene file)")->check(CLI::ExistingFile);
  };
  auto mode = [&](CLI::App* sub) {
    sub->add_option("--mode", o.mode, "Render mode")->check(CLI::IsMember({"analytic", "splat"}));
  };
  auto config = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Config file (default: built-in protocol)")->check(CLI::ExistingFile);
  };

  CLI::App* render_cmd = app.add_subcommand("render", "Render a scene to render.pfm and render.png");
  scene_camera(render_cmd);
  mode(render_cmd);
  common(render_cmd);
  CLI::App* compare_cmd = app.add_subcommand("compare", "Rasterizers against the ray-marching reference");
  scene_camera(compare_cmd);
  common(compare_cmd);
  compare_cmd->add_option("--steps", o.steps, "Ray-marching steps per ray")->check(CLI::Range(2, 100000000));
  CLI::App* fit_cmd = app.add_subcommand("fit", "Fit primitives to target images");
  config(fit_cmd);
  mode(fit_cmd);
  fit_cmd->add_option("--scene", o.scene, "Initial scene for the views protocol")->check(CLI::ExistingFile);
  common(fit_cmd);
  CLI::App* tomo_cmd = app.add_subcommand("tomo", "Reconstruct a phantom from simulated projections");
  config(tomo_cmd);
  common(tomo_cmd);
  CLI::App* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of the backward pass");
  config(grad_cmd);
  common(grad_cmd);
  CLI::App* metrics_cmd = app.add_subcommand("metrics", "PSNR, SSIM and MSE of image pairs");
  metrics_cmd->add_option("--image", o.images, "Image (.pfm or .png), repeatable")->check(CLI::ExistingFile);
  metrics_cmd->add_option("--reference", o.references, "Reference image, repeatable")->check(CLI::ExistingFile);
  metrics_cmd->add_option("--out", o.out, "Output directory for metrics.json")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (render_cmd->parsed()) return cmd_render(o);
    if (compare_cmd->parsed()) return cmd_compare(o);
    if (fit_cmd->parsed()) return cmd_fit(o);
    if (tomo_cmd->parsed()) return cmd_tomo(o);
    if (grad_cmd->parsed()) return cmd_gradcheck(o);
    if (metrics_cmd->parsed()) return cmd_metrics(o);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
