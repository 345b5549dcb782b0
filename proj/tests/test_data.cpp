#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "imf/kdtree.hpp"
#include "imf/ply_io.hpp"
#include "imf/registration.hpp"
#include "imf/scene.hpp"

using namespace imf;

namespace {

std::string tmp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

double dist(const Vec3& a, const Vec3& b) {
  return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) +
                   (a[2] - b[2]) * (a[2] - b[2]));
}

}  // namespace

TEST_CASE("a noiseless plane satisfies its plane equation exactly") {
  SceneConfig cfg;
  cfg.planes = 1;
  cfg.boxes = 0;
  cfg.spheres = 0;
  cfg.points_per_primitive = 100;
  cfg.noise_sigma = 0.0;
  cfg.grid_layout = true;
  cfg.seed = 7;
  PointCloud cloud = generate_scene(cfg);
  REQUIRE(cloud.size() == 100);
  for (const Vec3& p : cloud.xyz) CHECK(p[2] == 0.0);
}

TEST_CASE("random-layout planes stay exactly planar along their normal") {
  SceneConfig cfg;
  cfg.planes = 3;
  cfg.boxes = 0;
  cfg.spheres = 0;
  cfg.points_per_primitive = 50;
  cfg.noise_sigma = 0.0;
  cfg.grid_layout = false;
  cfg.seed = 8;
  PointCloud cloud = generate_scene(cfg);
  for (int prim = 0; prim < 3; ++prim) {
    bool planar = false;
    for (int axis = 0; axis < 3; ++axis) {
      double lo = 1e300, hi = -1e300;
      for (int i = prim * 50; i < (prim + 1) * 50; ++i) {
        lo = std::min(lo, cloud.xyz[i][axis]);
        hi = std::max(hi, cloud.xyz[i][axis]);
      }
      if (hi - lo == 0.0) planar = true;
    }
    CHECK(planar);
  }
}

TEST_CASE("ambiguous mode emits congruent primitives with distinct colors") {
  SceneConfig cfg;
  cfg.planes = 2;
  cfg.boxes = 0;
  cfg.spheres = 0;
  cfg.texture = TextureMode::ambiguous_structure;
  cfg.points_per_primitive = 60;
  cfg.noise_sigma = 0.002;
  cfg.seed = 9;
  PointCloud cloud = generate_scene(cfg);
  std::vector<Vec3> a(cloud.xyz.begin(), cloud.xyz.begin() + 60);
  std::vector<Vec3> b(cloud.xyz.begin() + 60, cloud.xyz.end());
  RigidTransform T = kabsch(a, b);
  double worst = 0.0;
  for (int i = 0; i < 60; ++i) worst = std::max(worst, dist(T.apply(a[i]), b[i]));
  CHECK(worst < 6 * cfg.noise_sigma + 1e-9);
  CHECK(cloud.rgb[0] != cloud.rgb[60]);
}

TEST_CASE("scene generation is seed deterministic") {
  SceneConfig cfg;
  cfg.seed = 11;
  cfg.noise_sigma = 0.01;
  cfg.grid_layout = false;
  PointCloud a = generate_scene(cfg);
  PointCloud b = generate_scene(cfg);
  CHECK(a.xyz == b.xyz);
  CHECK(a.rgb == b.rgb);
}

TEST_CASE("pinhole projection closed forms") {
  CameraIntrinsics cam;
  cam.fx = cam.fy = 100.0;
  cam.cx = cam.cy = 50.0;
  auto on_axis = project_point({0, 0, 1}, cam);
  CHECK(on_axis[0] == 50.0);
  CHECK(on_axis[1] == 50.0);

  auto uv = project_point({1, 2, 2}, cam);
  CHECK(uv[0] == 100.0);
  CHECK(uv[1] == 150.0);

  auto near = project_point({0.4, -0.2, 1.0}, cam);
  auto far = project_point({0.4, -0.2, 2.0}, cam);
  CHECK(far[0] - cam.cx == doctest::Approx((near[0] - cam.cx) / 2).epsilon(1e-12));
  CHECK(far[1] - cam.cy == doctest::Approx((near[1] - cam.cy) / 2).epsilon(1e-12));

  CHECK_THROWS_AS(project_point({0, 0, -1}, cam), Error);
  CHECK_THROWS_AS(project_point({0, 0, 0}, cam), Error);
}

TEST_CASE("projection and back-projection are inverse") {
  CameraIntrinsics cam;
  cam.fx = 123.0;
  cam.fy = 141.0;
  cam.cx = 81.5;
  cam.cy = 60.25;
  Rng rng(12);
  for (int i = 0; i < 50; ++i) {
    Vec3 p{rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.5, 3.0)};
    auto [u, v] = project_point(p, cam);
    Vec3 q = back_project(u, v, p[2], cam);
    CHECK(dist(p, q) < 1e-12);
  }
}

TEST_CASE("single point renders a splat at the principal point") {
  PointCloud cloud;
  cloud.xyz.push_back({0, 0, 0});
  cloud.rgb.push_back({255, 0, 0});
  CameraIntrinsics cam;
  cam.width = 16;
  cam.height = 16;
  cam.fx = cam.fy = 10.0;
  cam.cx = cam.cy = 8.0;
  RigidTransform w2c = look_at({0, 0, -1}, {0, 0, 0}, {0, 1, 0});
  RenderResult r = render_image(cloud, w2c, cam, 0);
  CHECK(r.points_drawn == 1);
  CHECK_FALSE(r.empty_warning);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      if (y == 8 && x == 8) {
        CHECK(r.image.at(y, x, 0) == 1.0);
        CHECK(r.image.at(y, x, 1) == 0.0);
      } else {
        CHECK(r.image.at(y, x, 0) == 0.5);
      }
    }
}

TEST_CASE("z-buffer keeps the nearer point on a shared ray") {
  PointCloud cloud;
  cloud.xyz.push_back({0, 0, 2.0});  // farther, green
  cloud.rgb.push_back({0, 255, 0});
  cloud.xyz.push_back({0, 0, 1.0});  // nearer, blue
  cloud.rgb.push_back({0, 0, 255});
  CameraIntrinsics cam;
  cam.width = 8;
  cam.height = 8;
  cam.fx = cam.fy = 4.0;
  cam.cx = cam.cy = 4.0;
  RenderResult r = render_image(cloud, RigidTransform::identity(), cam, 0);
  CHECK(r.image.at(4, 4, 2) == 1.0);
  CHECK(r.image.at(4, 4, 1) == 0.0);
}

TEST_CASE("no visible points sets the warning flag") {
  PointCloud cloud;
  cloud.xyz.push_back({0, 0, -5.0});
  cloud.rgb.push_back({10, 20, 30});
  CameraIntrinsics cam;
  cam.width = 8;
  cam.height = 8;
  RenderResult r = render_image(cloud, RigidTransform::identity(), cam, 1);
  CHECK(r.empty_warning);
  CHECK(r.points_drawn == 0);
}

TEST_CASE("reprojected points land on pixels of their own color class") {
  SceneConfig cfg;
  cfg.planes = 4;
  cfg.boxes = 0;
  cfg.spheres = 0;
  cfg.texture = TextureMode::ambiguous_structure;
  cfg.points_per_primitive = 300;
  cfg.grid_layout = true;
  cfg.seed = 13;
  PointCloud cloud = generate_scene(cfg);

  Vec3 centroid{0, 0, 0};
  for (const Vec3& p : cloud.xyz)
    for (int k = 0; k < 3; ++k) centroid[k] += p[k] / cloud.size();
  Vec3 eye{centroid[0] + 0.3, centroid[1] + 0.4, centroid[2] + 1.5};
  RigidTransform w2c = look_at(eye, centroid);
  CameraIntrinsics cam = fit_camera(cloud.xyz, w2c, 160, 120);
  RenderResult r = render_image(cloud, w2c, cam, 1);

  int64_t hits = 0, considered = 0;
  for (int64_t i = 0; i < cloud.size(); ++i) {
    Vec3 c = w2c.apply(cloud.xyz[i]);
    if (c[2] <= 0) continue;
    auto [u, v] = project_point(c, cam);
    int px = static_cast<int>(std::lround(u));
    int py = static_cast<int>(std::lround(v));
    if (px < 0 || px >= cam.width || py < 0 || py >= cam.height) continue;
    ++considered;
    bool match = true;
    for (int ch = 0; ch < 3; ++ch)
      if (std::fabs(r.image.at(py, px, ch) - cloud.rgb[i][ch] / 255.0) > 1e-9)
        match = false;
    if (match) ++hits;
  }
  REQUIRE(considered > 1000);
  CHECK(static_cast<double>(hits) / considered >= 0.95);
}

TEST_CASE("full overlap with zero motion gives identical fragments") {
  SceneConfig scfg;
  scfg.seed = 14;
  scfg.points_per_primitive = 200;
  PointCloud scene = generate_scene(scfg);
  PairConfig pcfg;
  pcfg.overlap_fraction = 1.0;
  pcfg.transform_magnitude_deg = 0.0;
  pcfg.translation_magnitude_m = 0.0;
  pcfg.seed = 15;
  RegistrationPair pair = make_pair(scene, pcfg);
  CHECK(pair.src_cloud.xyz == pair.dst_cloud.xyz);
  CHECK(pair.src_cloud.rgb == pair.dst_cloud.rgb);
  CHECK(pair.gt.orthonormality_error() == 0.0);
  for (int i = 0; i < 3; ++i) CHECK(pair.gt.t[i] == 0.0);
  CHECK(pair.overlap_fraction == 1.0);
}

TEST_CASE("requested overlap 0.2 is measured within tolerance") {
  SceneConfig scfg;
  scfg.planes = 6;
  scfg.boxes = 2;
  scfg.spheres = 2;
  scfg.points_per_primitive = 300;
  scfg.grid_layout = false;
  scfg.extent = 1.2;
  scfg.seed = 16;
  PointCloud scene = generate_scene(scfg);
  PairConfig pcfg;
  pcfg.overlap_fraction = 0.2;
  pcfg.seed = 17;
  RegistrationPair pair = make_pair(scene, pcfg);
  double measured = voxel_overlap(
      PointCloud{apply_transform(pair.src_cloud.xyz, pair.gt), pair.src_cloud.rgb},
      pair.dst_cloud, pcfg.overlap_voxel);
  CHECK(pair.overlap_fraction >= 0.15);
  CHECK(pair.overlap_fraction <= 0.25);
  CHECK(measured == doctest::Approx(pair.overlap_fraction).epsilon(1e-12));
}

TEST_CASE("ground truth maps source points onto shared scene points") {
  SceneConfig scfg;
  scfg.seed = 18;
  scfg.points_per_primitive = 250;
  PointCloud scene = generate_scene(scfg);
  PairConfig pcfg;
  pcfg.overlap_fraction = 0.5;
  pcfg.seed = 19;
  RegistrationPair pair = make_pair(scene, pcfg);

  std::vector<Vec3> mapped = apply_transform(pair.src_cloud.xyz, pair.gt);
  std::vector<double> flat;
  for (const Vec3& p : pair.dst_cloud.xyz)
    flat.insert(flat.end(), p.begin(), p.end());
  KdTree tree(flat.data(), pair.dst_cloud.size(), 3);
  int64_t close = 0;
  for (const Vec3& p : mapped)
    if (tree.nearest(p.data()).dist <= 2 * pcfg.overlap_voxel) ++close;
  int64_t min_n = std::min(pair.src_cloud.size(), pair.dst_cloud.size());
  CHECK(static_cast<double>(close) >=
        0.8 * pair.overlap_fraction * static_cast<double>(min_n));
}

TEST_CASE("PLY round trip preserves coordinates and colors") {
  SceneConfig cfg;
  cfg.seed = 20;
  cfg.noise_sigma = 0.01;
  PointCloud cloud = generate_scene(cfg);
  std::string path = tmp_path("imf_test_roundtrip.ply");
  ply_write(path, cloud);
  PointCloud back = ply_read(path);
  REQUIRE(back.size() == cloud.size());
  for (int64_t i = 0; i < cloud.size(); ++i) {
    CHECK(dist(back.xyz[i], cloud.xyz[i]) < 1e-6);
    CHECK(back.rgb[i] == cloud.rgb[i]);
  }
  std::filesystem::remove(path);
}

TEST_CASE("golden three-vertex PLY parses to exact values") {
  std::string path = tmp_path("imf_test_golden.ply");
  atomic_write(path,
               "ply\nformat ascii 1.0\ncomment golden fixture\n"
               "element vertex 3\n"
               "property float x\nproperty float y\nproperty float z\n"
               "property uchar red\nproperty uchar green\nproperty uchar blue\n"
               "end_header\n"
               "1.5 -2.25 0.125 255 0 7\n"
               "0 0 0 1 2 3\n"
               "-10.5 3 0.75 0 128 255\n");
  PointCloud cloud = ply_read(path);
  REQUIRE(cloud.size() == 3);
  CHECK(cloud.xyz[0] == Vec3{1.5, -2.25, 0.125});
  CHECK(cloud.rgb[0] == std::array<uint8_t, 3>{255, 0, 7});
  CHECK(cloud.xyz[2] == Vec3{-10.5, 3.0, 0.75});
  CHECK(cloud.rgb[2] == std::array<uint8_t, 3>{0, 128, 255});
  std::filesystem::remove(path);
}

TEST_CASE("malformed PLY and PPM inputs raise parse errors with offsets") {
  std::string path = tmp_path("imf_test_bad.ply");
  atomic_write(path, "ply\nformat ascii 1.0\nelement vertex 2\n"
                     "property float x\nproperty float y\nproperty float z\n"
                     "property uchar red\nproperty uchar green\nproperty uchar blue\n"
                     "end_header\n1 2 3 0 0 0\n");
  try {
    ply_read(path);
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(e.category == ErrorCategory::parse);
    CHECK(std::string(e.what()).find("at byte") != std::string::npos);
  }
  std::filesystem::remove(path);

  std::string ppm = tmp_path("imf_test_bad.ppm");
  atomic_write(ppm, "P5\n8 8\n255\n");
  CHECK_THROWS_AS(ppm_read(ppm), Error);
  std::filesystem::remove(ppm);
}

TEST_CASE("PPM round trip is exact and loading center-crops to /8") {
  Image img;
  img.width = 16;
  img.height = 8;
  img.pixels.resize(16 * 8 * 3);
  Rng rng(21);
  for (auto& p : img.pixels)
    p = static_cast<double>(rng.uniform_int(256)) / 255.0;
  std::string path = tmp_path("imf_test_rt.ppm");
  ppm_write(path, img);
  Image back = ppm_read(path);
  CHECK(back.width == 16);
  CHECK(back.height == 8);
  CHECK(back.pixels == img.pixels);
  std::filesystem::remove(path);

  // 18x10 center-crops to 16x8
  Image odd;
  odd.width = 18;
  odd.height = 10;
  odd.pixels.assign(18 * 10 * 3, 0.0);
  // mark the crop origin pixel (1,1) in the source
  odd.pixels[(1 * 18 + 1) * 3 + 0] = 1.0;
  std::string path2 = tmp_path("imf_test_crop.ppm");
  ppm_write(path2, odd);
  Image cropped = ppm_read(path2);
  CHECK(cropped.width == 16);
  CHECK(cropped.height == 8);
  CHECK(cropped.at(0, 0, 0) == 1.0);
  std::filesystem::remove(path2);
}
