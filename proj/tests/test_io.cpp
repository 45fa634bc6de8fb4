#include "test_support.hpp"
#include "volgauss/io/config_io.hpp"
#include "volgauss/io/grid_io.hpp"
#include "volgauss/io/image_io.hpp"
#include "volgauss/io/report_io.hpp"
#include "volgauss/io/scene_io.hpp"

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>

namespace volgauss {
namespace {

namespace fs = std::filesystem;

fs::path temp_dir() {
  const fs::path p = fs::temp_directory_path() / ("volgauss_io_" + std::to_string(::getpid()));
  fs::create_directories(p);
  return p;
}

std::string error_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

bool same(const Gaussian3D& a, const Gaussian3D& b) {
  return a.mean == b.mean && a.scale == b.scale && a.rotation == b.rotation && a.theta == b.theta &&
         a.color == b.color && a.splat_opacity == b.splat_opacity;
}

TEST(SceneFile, RoundTripThousandScenes) {
  CounterRng rng(7);
  for (int trial = 0; trial < 1000; ++trial) {
    io::SceneFile f;
    f.scene = testing::random_scene(rng, static_cast<int>(rng.uniform(0, 12)), 2.0);
    // Awkward values too: subnormal, negative zero, long mantissas.
    if (trial % 7 == 0 && !f.scene.empty()) {
      f.scene.gaussians[0].mean.x() = -0.0;
      f.scene.gaussians[0].mean.y() = 4.9e-324;
      f.scene.gaussians[0].theta = 1.0 / 3.0;
    }
    if (trial % 11 == 0) f.cameras.push_back(Camera::look_at(20, 10, 12.5, Vec3(1, 2, 3), Vec3::Zero(), Vec3::UnitZ()));
    const std::string text = io::scene_text(f);
    const io::SceneFile g = io::parse_scene(text, "mem");
    ASSERT_EQ(g.scene.size(), f.scene.size());
    EXPECT_EQ(g.scene.background, f.scene.background);
    for (std::size_t i = 0; i < f.scene.size(); ++i) EXPECT_TRUE(same(f.scene.gaussians[i], g.scene.gaussians[i])) << trial;
    ASSERT_EQ(g.cameras.size(), f.cameras.size());
    for (std::size_t i = 0; i < f.cameras.size(); ++i) {
      EXPECT_EQ(g.cameras[i].rotation, f.cameras[i].rotation);
      EXPECT_EQ(g.cameras[i].translation, f.cameras[i].translation);
      EXPECT_EQ(g.cameras[i].fx, f.cameras[i].fx);
    }
    EXPECT_EQ(io::scene_text(g), text);
    if (trial % 7 == 0 && !f.scene.empty()) {
      EXPECT_TRUE(std::signbit(g.scene.gaussians[0].mean.x()));
    }
  }
}

TEST(SceneFile, UnknownFieldRejectedWithVersion) {
  const std::string text = R"({"format":"volgauss-scene","version":1,"gaussians":[
    {"mean":[0,0,1],"scale":[1,1,1],"opacty":0.5}]})";
  const std::string msg = error_of([&] { io::parse_scene(text, "s.json"); });
  EXPECT_NE(msg.find("gaussians[0].opacty"), std::string::npos) << msg;
  EXPECT_NE(msg.find("unknown field (volgauss-scene v1)"), std::string::npos) << msg;
}

TEST(SceneFile, EveryProblemListed) {
  const std::string text = R"({"format":"volgauss-scene","version":1,"background":[0,0],
    "gaussians":[{"mean":[0,0,1],"scale":[1,-1,1]},{"scale":[1,1,1],"theta":3}]})";
  const std::string msg = error_of([&] { io::parse_scene(text, "s.json"); });
  EXPECT_NE(msg.find("background"), std::string::npos) << msg;
  EXPECT_NE(msg.find("gaussians[0].scale"), std::string::npos) << msg;
  EXPECT_NE(msg.find("gaussians[1].mean: required"), std::string::npos) << msg;
  EXPECT_NE(msg.find("gaussians[1].theta"), std::string::npos) << msg;
  EXPECT_NE(msg.find("4 problem(s)"), std::string::npos) << msg;
}

TEST(SceneFile, VersionAndFormatChecked) {
  EXPECT_NE(error_of([] { io::parse_scene(R"({"format":"volgauss-scene","version":2,"gaussians":[]})", "s"); })
                .find("unsupported version 2"),
            std::string::npos);
  EXPECT_NE(error_of([] { io::parse_scene(R"({"format":"other","version":1,"gaussians":[]})", "s"); })
                .find("format"),
            std::string::npos);
}

TEST(SceneFile, SyntaxErrorNamesLine) {
  const std::string text = "{\n  \"format\": \"volgauss-scene\",\n  \"version\": 1,\n  \"gaussians\": [,]\n}";
  const std::string msg = error_of([&] { io::parse_scene(text, "bad.json"); });
  EXPECT_EQ(msg.rfind("bad.json:4:", 0), 0u) << msg;
}

TEST(SceneFile, EmptySceneParses) {
  const io::SceneFile f =
      io::parse_scene(R"({"format":"volgauss-scene","version":1,"background":[0.2,0.4,0.6],"gaussians":[]})", "s");
  EXPECT_TRUE(f.scene.empty());
  EXPECT_EQ(f.scene.background, Vec3(0.2, 0.4, 0.6));
}

TEST(CameraFile, LookAtAndExplicitAgree) {
  const auto from_look = io::parse_camera_file(R"({"format":"volgauss-camera","version":1,
    "width":32,"height":24,"focal":30,"look_at":{"eye":[3,0,0],"target":[0,0,0],"up":[0,0,1]}})",
                                               "c");
  ASSERT_EQ(from_look.size(), 1u);
  const Camera ref = Camera::look_at(32, 24, 30, Vec3(3, 0, 0), Vec3::Zero(), Vec3::UnitZ());
  EXPECT_EQ(from_look[0].rotation, ref.rotation);
  const auto back = io::parse_camera_file(io::camera_file_text(from_look), "c2");
  EXPECT_EQ(back[0].translation, ref.translation);
  EXPECT_EQ(back[0].cx, 16.0);
  const auto two = io::parse_camera_file(io::camera_file_text({ref, Camera::simple(8, 8, 8)}), "c3");
  EXPECT_EQ(two.size(), 2u);
}

TEST(CameraFile, InvalidCameraReported) {
  const std::string msg = error_of([] {
    io::parse_camera_file(R"({"format":"volgauss-camera","version":1,"width":0,"height":8,"focal":1,"zoom":2})", "c");
  });
  EXPECT_NE(msg.find("zoom"), std::string::npos) << msg;
  EXPECT_NE(msg.find("width"), std::string::npos) << msg;
}

TEST(ImageIo, PfmRoundTripIsFloatExact) {
  CounterRng rng(8);
  for (int c : {1, 3}) {
    Image im(7, 5, c);
    for (double& v : im.data) v = static_cast<float>(rng.uniform(-2, 2));
    const Image back = io::parse_pfm(io::pfm_bytes(im), "mem");
    ASSERT_TRUE(back.same_shape(im));
    EXPECT_EQ(back.data, im.data);
    EXPECT_EQ(io::pfm_bytes(back), io::pfm_bytes(im));
  }
  EXPECT_THROW(io::parse_pfm("P6\n1 1\n255\n", "x"), ValidationError);
  EXPECT_THROW(io::parse_pfm("PF\n4 4\n-1.0\nabc", "x"), ValidationError);
}

TEST(ImageIo, PfmStoresTopRowLast) {
  Image im(1, 2, 1);
  im.at(0, 0) = 1.0;  // top
  im.at(0, 1) = 2.0;
  const std::string b = io::pfm_bytes(im);
  float first = 0;
  std::memcpy(&first, b.data() + b.size() - 2 * sizeof(float), sizeof(float));
  EXPECT_EQ(first, 2.0f);
}

TEST(ImageIo, PngRoundTrip) {
  const fs::path dir = temp_dir();
  Image im(9, 4, 3);
  for (std::size_t i = 0; i < im.size(); ++i) im.data[i] = static_cast<double>(i % 256) / 255.0;
  im.data[0] = -1.0;
  im.data[1] = 2.0;
  const std::string path = (dir / "a.png").string();
  io::write_png(path, im);
  const Image back = io::read_image(path);
  ASSERT_TRUE(back.same_shape(im));
  EXPECT_EQ(back.data[0], 0.0);
  EXPECT_EQ(back.data[1], 1.0);
  for (std::size_t i = 2; i < im.size(); ++i) EXPECT_NEAR(back.data[i], im.data[i], 1e-12);
  EXPECT_THROW(io::read_image((dir / "a.bmp").string()), ValidationError);
  EXPECT_THROW(io::read_png((dir / "missing.png").string()), ValidationError);
}

TEST(GridIo, RoundTrip) {
  const fs::path dir = temp_dir();
  GridSpec spec;
  spec.n = 6;
  spec.lo = Vec3(-1, -2, -3);
  spec.hi = Vec3(1, 2, 3.5);
  DensityGrid g = voxelize(Phantom::nested_ellipsoids(), spec);
  g.at(1, 2, 3) = 0.123;
  io::write_grid((dir / "g.raw").string(), (dir / "g.txt").string(), g, 2.0);
  EXPECT_EQ(fs::file_size(dir / "g.raw"), 6u * 6 * 6 * 4);
  const DensityGrid back = io::read_grid((dir / "g.raw").string(), (dir / "g.txt").string());
  EXPECT_EQ(back.spec.n, 6);
  EXPECT_EQ(back.spec.lo, spec.lo);
  EXPECT_EQ(back.spec.hi, spec.hi);
  for (std::size_t i = 0; i < g.values.size(); ++i) EXPECT_NEAR(back.values[i], g.values[i], 1e-7);
}

TEST(ConfigFile, FitJobRoundTrip) {
  io::FitJob job;
  job.protocol = "shapes";
  job.train.lr_theta = 0.02;
  job.train.loss.kind = LossKind::l2;
  job.train.render.sort = SortOrder::ray_gamma;
  job.shapes.count = 123;
  const std::string text = io::dump(io::fit_job_to_json(job));
  const io::FitJob back = io::parse_fit_job(text, "cfg");
  EXPECT_EQ(back.protocol, "shapes");
  EXPECT_EQ(back.train.lr_theta, 0.02);
  EXPECT_EQ(back.train.loss.kind, LossKind::l2);
  EXPECT_EQ(back.train.render.sort, SortOrder::ray_gamma);
  EXPECT_EQ(back.shapes.count, 123);
  EXPECT_EQ(io::dump(io::fit_job_to_json(back)), text);
}

TEST(ConfigFile, ValidationListsEveryBadField) {
  const std::string text = R"({"format":"volgauss-config","version":1,"command":"fit",
    "protocol":"disk","train":{"lr_theta":-1,"densify_interval":0,"loss":{"kind":"huber"},"bogus":1},
    "disk":{"radius":"big"}})";
  const std::string msg = error_of([&] { io::parse_fit_job(text, "cfg"); });
  for (const char* needle : {"train.loss.kind", "train.bogus", "disk.radius", "lr_theta must be > 0",
                             "densify_interval must be >= 1"})
    EXPECT_NE(msg.find(needle), std::string::npos) << needle << "\n" << msg;
}

TEST(ConfigFile, WrongCommandRejected) {
  const std::string msg =
      error_of([] { io::parse_tomo_job(R"({"format":"volgauss-config","version":1,"command":"fit"})", "cfg"); });
  EXPECT_NE(msg.find("not 'tomo'"), std::string::npos) << msg;
}

TEST(ConfigFile, TomoJobDefaultsAndCustomPhantom) {
  const io::TomoJob job = io::parse_tomo_job(R"({"format":"volgauss-config","version":1,"command":"tomo",
    "phantom":"custom","views":5,"components":[{"shape":"ellipsoid","axes":[0.5,0.4,0.3],"density":2}],
    "reconstruct":{"grid":{"n":16},"train":{"iterations":10}}})",
                                             "cfg");
  EXPECT_EQ(job.views, 5);
  EXPECT_EQ(job.reconstruct.grid.n, 16);
  EXPECT_EQ(job.reconstruct.train.iterations, 10);
  EXPECT_EQ(job.reconstruct.train.lr_theta, TomoConfig{}.train.lr_theta);
  const Phantom ph = job.make_phantom();
  EXPECT_NEAR(ph.line_integral(make_ray(Vec3(0, 0, -2), Vec3::UnitZ())), 2 * 0.3 * 2, 1e-14);
  const io::TomoJob back = io::parse_tomo_job(io::dump(io::tomo_job_to_json(job)), "cfg2");
  EXPECT_EQ(back.components.size(), 1u);
}

TEST(ConfigFile, GradcheckDefaults) {
  const io::GradcheckJob job =
      io::parse_gradcheck_job(R"({"format":"volgauss-config","version":1,"command":"gradcheck"})", "cfg");
  EXPECT_EQ(job.scenes, 10);
  EXPECT_EQ(job.size, 32);
  EXPECT_NE(error_of([] {
              io::parse_gradcheck_job(R"({"format":"volgauss-config","version":1,"command":"gradcheck","size":100})",
                                      "cfg");
            }).find("size"),
            std::string::npos);
}

TEST(EventLog, RoundTrip) {
  DensifyEvent split;
  split.iteration = 200;
  split.reason = "gradient";
  split.parent = 4;
  split.parent_theta = 0.3;
  split.parent_scale = Vec3(0.1, 0.2, 0.3);
  split.children = {9, 10};
  split.child_theta = {0.1, 0.2};
  split.child_scale = {Vec3::Ones(), Vec3::Constant(2)};
  DensifyEvent prune;
  prune.kind = DensifyKind::prune;
  prune.reason = "theta";
  TrainConfig cfg;
  const io::EventLog log = io::EventLog::of({split, prune}, RenderMode::splat, cfg, 3.5);
  const io::EventLog back = io::parse_event_log(io::event_log_text(log), "ev");
  EXPECT_EQ(back.mode, "splat");
  EXPECT_EQ(back.extent, 3.5);
  ASSERT_EQ(back.events.size(), 2u);
  EXPECT_EQ(back.events[0].children, split.children);
  EXPECT_EQ(back.events[0].child_scale[1], Vec3::Constant(2));
  EXPECT_EQ(back.events[1].kind, DensifyKind::prune);
}

TEST(Checkpoint, RoundTrip) {
  CounterRng rng(9);
  io::Checkpoint c;
  c.scene.scene = testing::random_scene(rng, 4);
  c.state = OptimizerState::for_scene(c.scene.scene);
  c.state.step = 17;
  c.state.prims[2].m[5] = 1.0 / 7.0;
  c.state.prims[3].v[13] = 1e-300;
  c.iteration = 17;
  c.extent = 2.25;
  const io::Checkpoint back = io::parse_checkpoint(io::checkpoint_text(c), "ck");
  EXPECT_EQ(back.state.step, 17);
  EXPECT_EQ(back.state.next_id, c.state.next_id);
  EXPECT_EQ(back.state.prims[2].m, c.state.prims[2].m);
  EXPECT_EQ(back.state.prims[3].v, c.state.prims[3].v);
  EXPECT_EQ(back.state.prims[1].color_feature, c.state.prims[1].color_feature);
  EXPECT_EQ(io::checkpoint_text(back), io::checkpoint_text(c));
}

}  // namespace
}  // namespace volgauss
