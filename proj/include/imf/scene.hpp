#pragma once

#include <array>
#include <cstdint>

#include "imf/image.hpp"
#include "imf/registration.hpp"

namespace imf {

struct PointCloud {
  std::vector<Vec3> xyz;
  std::vector<std::array<uint8_t, 3>> rgb;
  int64_t size() const { return static_cast<int64_t>(xyz.size()); }
};

struct CameraIntrinsics {
  double fx = 100.0, fy = 100.0;
  double cx = 80.0, cy = 60.0;
  int width = 160, height = 120;
};

// u = fx * X/Z + cx, v = fy * Y/Z + cy. Camera frame: X right, Y down,
// Z forward; points with Z <= 0 are behind the camera.
std::array<double, 2> project_point(const Vec3& p_cam, const CameraIntrinsics& cam);
Vec3 back_project(double u, double v, double z, const CameraIntrinsics& cam);

enum class TextureMode { distinct_color, ambiguous_structure };

struct SceneConfig {
  int planes = 3;
  int boxes = 1;
  int spheres = 1;
  TextureMode texture = TextureMode::distinct_color;
  int points_per_primitive = 400;
  double noise_sigma = 0.0;  // meters
  double extent = 1.0;       // placement half-range, meters
  // ambiguous_structure: congruent primitives share an exact local point
  // template; grid layout tiles them coplanar, random scatters poses.
  bool grid_layout = true;
  double primitive_size = 0.4;  // meters, edge/radius scale
  int color_offset = 0;         // palette shift, for composing scenes
  uint64_t seed = 0;
};

// Concatenate two clouds (used to compose, e.g., ambiguous tiles with
// distinct landmark primitives).
PointCloud merge_clouds(const PointCloud& a, const PointCloud& b);

PointCloud generate_scene(const SceneConfig& cfg);

struct RenderResult {
  Image image;
  int64_t points_drawn = 0;
  bool empty_warning = false;
};

// Transform to camera frame, project visible points, z-buffer per pixel,
// splat color over a square of the given radius. Background is mid-gray.
RenderResult render_image(const PointCloud& cloud,
                          const RigidTransform& world_to_cam,
                          const CameraIntrinsics& cam, int splat_radius);

// world_to_cam transform with +Z toward target and +Y down.
RigidTransform look_at(const Vec3& eye, const Vec3& target,
                       const Vec3& up = {0, 0, 1});

// Square-pixel focal fit: largest f that keeps every point of the cloud
// inside the image with the given pixel margin.
CameraIntrinsics fit_camera(const std::vector<Vec3>& pts_world,
                            const RigidTransform& world_to_cam, int width,
                            int height, double margin_px = 4.0);

struct RegistrationPair {
  PointCloud src_cloud;
  PointCloud dst_cloud;
  Image src_image;
  Image dst_image;
  RigidTransform gt;  // maps src points into the dst frame
  double overlap_fraction = 0.0;
};

struct PairConfig {
  double overlap_fraction = 0.5;
  double transform_magnitude_deg = 30.0;
  double translation_magnitude_m = 0.3;
  int image_width = 160;   // divisible by 8
  int image_height = 120;  // divisible by 8
  int splat_radius = 1;
  double overlap_voxel = 0.05;  // voxel size for overlap measurement
  // KITTI-style partial texture: the camera covers only a sub-volume.
  bool partial_view = false;
  uint64_t seed = 0;
};

// Crop two overlapping slabs hitting the requested voxel overlap within
// +-0.05, move the source by a seeded rigid motion, render one image per
// fragment from a camera facing it, and store the exact ground truth.
RegistrationPair make_pair(const PointCloud& scene, const PairConfig& cfg);

// Voxel-set overlap |A ^ B| / min(|A|,|B|) at the given cell size.
double voxel_overlap(const PointCloud& a, const PointCloud& b, double cell);

}  // namespace imf
