#include "imf/scene.hpp"

#include <algorithm>
#include <cmath>

#include "imf/rng.hpp"
#include "imf/sparse.hpp"

namespace imf {

std::array<double, 2> project_point(const Vec3& p_cam,
                                    const CameraIntrinsics& cam) {
  require(p_cam[2] > 0.0, ErrorCategory::contract,
          "project_point: point behind camera (Z = ", p_cam[2], ")");
  return {cam.fx * p_cam[0] / p_cam[2] + cam.cx,
          cam.fy * p_cam[1] / p_cam[2] + cam.cy};
}

Vec3 back_project(double u, double v, double z, const CameraIntrinsics& cam) {
  return {(u - cam.cx) * z / cam.fx, (v - cam.cy) * z / cam.fy, z};
}

namespace {

std::array<uint8_t, 3> hsv_to_rgb(double h, double s, double v) {
  double r = 0, g = 0, b = 0;
  double i = std::floor(h * 6.0);
  double f = h * 6.0 - i;
  double p = v * (1 - s), q = v * (1 - f * s), t = v * (1 - (1 - f) * s);
  switch (static_cast<int>(i) % 6) {
    case 0: r = v; g = t; b = p; break;
    case 1: r = q; g = v; b = p; break;
    case 2: r = p; g = v; b = t; break;
    case 3: r = p; g = q; b = v; break;
    case 4: r = t; g = p; b = v; break;
    case 5: r = v; g = p; b = q; break;
  }
  auto to8 = [](double x) {
    return static_cast<uint8_t>(std::lround(std::clamp(x, 0.0, 1.0) * 255.0));
  };
  return {to8(r), to8(g), to8(b)};
}

std::array<uint8_t, 3> palette_color(int k) {
  double hue = std::fmod(0.05 + k * 0.61803398875, 1.0);
  return hsv_to_rgb(hue, 0.85, 0.95);
}

enum class PrimClass { plane, box, sphere };

// Local-frame surface samples for one primitive.
std::vector<Vec3> sample_template(PrimClass cls, int n, double size, Rng& rng) {
  std::vector<Vec3> pts(n);
  switch (cls) {
    case PrimClass::plane: {
      double h = size / 2;
      for (auto& p : pts) p = {rng.uniform(-h, h), rng.uniform(-h, h), 0.0};
      break;
    }
    case PrimClass::box: {
      double hx = size / 2, hy = size * 0.35, hz = size * 0.3;
      for (auto& p : pts) {
        int face = static_cast<int>(rng.uniform_int(6));
        double u = rng.uniform(-1, 1), v = rng.uniform(-1, 1);
        switch (face) {
          case 0: p = {hx, u * hy, v * hz}; break;
          case 1: p = {-hx, u * hy, v * hz}; break;
          case 2: p = {u * hx, hy, v * hz}; break;
          case 3: p = {u * hx, -hy, v * hz}; break;
          case 4: p = {u * hx, v * hy, hz}; break;
          case 5: p = {u * hx, v * hy, -hz}; break;
        }
      }
      break;
    }
    case PrimClass::sphere: {
      double r = size / 2;
      for (auto& p : pts) {
        double z = rng.uniform(-1, 1);
        double phi = rng.uniform(0, 2 * M_PI);
        double s = std::sqrt(std::max(0.0, 1 - z * z));
        p = {r * s * std::cos(phi), r * s * std::sin(phi), r * z};
      }
      break;
    }
  }
  return pts;
}

// Yaw about z keeps the local z coordinate exact; the axis permutation then
// selects the plane normal without arithmetic.
Vec3 yaw_and_orient(const Vec3& p, double yaw, int orient) {
  double c = std::cos(yaw), s = std::sin(yaw);
  Vec3 q{c * p[0] - s * p[1], s * p[0] + c * p[1], p[2]};
  switch (orient % 3) {
    case 0: return q;                    // normal +z
    case 1: return {q[0], q[2], q[1]};   // normal +y
    default: return {q[2], q[0], q[1]};  // normal +x
  }
}

}  // namespace

PointCloud generate_scene(const SceneConfig& cfg) {
  int total = cfg.planes + cfg.boxes + cfg.spheres;
  require(total >= 1, ErrorCategory::config,
          "generate_scene: at least one primitive required");
  require(cfg.points_per_primitive >= 1, ErrorCategory::config,
          "generate_scene: points_per_primitive must be >= 1");
  Rng rng(derive_seed(cfg.seed, 0x5ce11eULL));
  PointCloud cloud;
  cloud.xyz.reserve(static_cast<size_t>(total) * cfg.points_per_primitive);
  cloud.rgb.reserve(cloud.xyz.capacity());

  bool ambiguous = cfg.texture == TextureMode::ambiguous_structure;
  // Shared per-class templates make primitives exactly congruent.
  std::array<std::vector<Vec3>, 3> shared;
  if (ambiguous) {
    Rng trng(derive_seed(cfg.seed, 1));
    shared[0] = sample_template(PrimClass::plane, cfg.points_per_primitive,
                                cfg.primitive_size, trng);
    shared[1] = sample_template(PrimClass::box, cfg.points_per_primitive,
                                cfg.primitive_size, trng);
    shared[2] = sample_template(PrimClass::sphere, cfg.points_per_primitive,
                                cfg.primitive_size, trng);
  }

  int grid_cols = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(total))));
  double pitch = cfg.primitive_size * 1.5;

  int prim_index = 0;
  auto emit = [&](PrimClass cls, int class_id) {
    std::vector<Vec3> local;
    if (ambiguous) {
      local = shared[class_id];
    } else {
      Rng trng(derive_seed(cfg.seed, 100 + prim_index));
      local = sample_template(cls, cfg.points_per_primitive,
                              cfg.primitive_size * rng.uniform(0.8, 1.2), trng);
    }
    double yaw;
    int orient;
    Vec3 t;
    if (cfg.grid_layout) {
      yaw = 0.0;
      orient = 0;
      int gi = prim_index / grid_cols, gj = prim_index % grid_cols;
      double z0 = cls == PrimClass::plane ? 0.0
                  : cls == PrimClass::box ? cfg.primitive_size * 0.3
                                          : cfg.primitive_size * 0.5;
      t = {gj * pitch, gi * pitch, z0};
      rng.uniform();  // keep stream use uniform across layouts
    } else {
      yaw = rng.uniform(0, 2 * M_PI);
      orient = cls == PrimClass::plane ? static_cast<int>(rng.uniform_int(3)) : 0;
      t = {rng.uniform(-cfg.extent, cfg.extent),
           rng.uniform(-cfg.extent, cfg.extent),
           rng.uniform(0.0, cfg.extent * 0.6)};
    }
    std::array<uint8_t, 3> color = palette_color(cfg.color_offset + prim_index);
    Rng nrng(derive_seed(cfg.seed, 5000 + prim_index));
    for (const Vec3& lp : local) {
      Vec3 wp = yaw_and_orient(lp, yaw, orient);
      for (int k = 0; k < 3; ++k)
        wp[k] += t[k] + cfg.noise_sigma * nrng.normal();
      cloud.xyz.push_back(wp);
      cloud.rgb.push_back(color);
    }
    ++prim_index;
  };

  for (int i = 0; i < cfg.planes; ++i) emit(PrimClass::plane, 0);
  for (int i = 0; i < cfg.boxes; ++i) emit(PrimClass::box, 1);
  for (int i = 0; i < cfg.spheres; ++i) emit(PrimClass::sphere, 2);
  return cloud;
}

PointCloud merge_clouds(const PointCloud& a, const PointCloud& b) {
  PointCloud out = a;
  out.xyz.insert(out.xyz.end(), b.xyz.begin(), b.xyz.end());
  out.rgb.insert(out.rgb.end(), b.rgb.begin(), b.rgb.end());
  return out;
}

RigidTransform look_at(const Vec3& eye, const Vec3& target, const Vec3& up) {
  auto sub = [](const Vec3& a, const Vec3& b) {
    return Vec3{a[0] - b[0], a[1] - b[1], a[2] - b[2]};
  };
  auto dot = [](const Vec3& a, const Vec3& b) {
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
  };
  auto cross = [](const Vec3& a, const Vec3& b) {
    return Vec3{a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
                a[0] * b[1] - a[1] * b[0]};
  };
  auto norm = [&](Vec3 v) {
    double n = std::sqrt(dot(v, v));
    require(n > 1e-12, ErrorCategory::contract, "look_at: degenerate direction");
    return Vec3{v[0] / n, v[1] / n, v[2] / n};
  };
  Vec3 fwd = norm(sub(target, eye));
  Vec3 u = up;
  if (std::fabs(dot(fwd, norm(u))) > 0.999) u = {0, 1, 0};
  // y_cam points down: remove the forward component from -up.
  Vec3 down{-u[0] + dot(u, fwd) * fwd[0], -u[1] + dot(u, fwd) * fwd[1],
            -u[2] + dot(u, fwd) * fwd[2]};
  down = norm(down);
  Vec3 right = cross(down, fwd);

  RigidTransform T;
  T.r = {{{right[0], right[1], right[2]},
          {down[0], down[1], down[2]},
          {fwd[0], fwd[1], fwd[2]}}};
  // t = -R * eye
  for (int i = 0; i < 3; ++i)
    T.t[i] = -(T.r[i][0] * eye[0] + T.r[i][1] * eye[1] + T.r[i][2] * eye[2]);
  return T;
}

CameraIntrinsics fit_camera(const std::vector<Vec3>& pts_world,
                            const RigidTransform& world_to_cam, int width,
                            int height, double margin_px) {
  require(!pts_world.empty(), ErrorCategory::contract, "fit_camera: no points");
  double max_xz = 1e-9, max_yz = 1e-9;
  for (const Vec3& p : pts_world) {
    Vec3 c = world_to_cam.apply(p);
    if (c[2] <= 1e-6) continue;
    max_xz = std::max(max_xz, std::fabs(c[0] / c[2]));
    max_yz = std::max(max_yz, std::fabs(c[1] / c[2]));
  }
  CameraIntrinsics cam;
  cam.width = width;
  cam.height = height;
  cam.cx = width / 2.0;
  cam.cy = height / 2.0;
  double f = std::min((width / 2.0 - margin_px) / max_xz,
                      (height / 2.0 - margin_px) / max_yz);
  cam.fx = cam.fy = f;
  return cam;
}

RenderResult render_image(const PointCloud& cloud,
                          const RigidTransform& world_to_cam,
                          const CameraIntrinsics& cam, int splat_radius) {
  require(cloud.size() > 0, ErrorCategory::contract,
          "render_image: empty cloud");
  RenderResult res;
  res.image.width = cam.width;
  res.image.height = cam.height;
  res.image.pixels.assign(static_cast<size_t>(cam.width) * cam.height * 3, 0.5);
  std::vector<double> depth(static_cast<size_t>(cam.width) * cam.height,
                            std::numeric_limits<double>::infinity());

  for (int64_t i = 0; i < cloud.size(); ++i) {
    Vec3 c = world_to_cam.apply(cloud.xyz[i]);
    if (c[2] <= 1e-9) continue;
    auto [u, v] = project_point(c, cam);
    int px = static_cast<int>(std::lround(u));
    int py = static_cast<int>(std::lround(v));
    if (px < -splat_radius || px >= cam.width + splat_radius ||
        py < -splat_radius || py >= cam.height + splat_radius)
      continue;
    bool touched = false;
    for (int dy = -splat_radius; dy <= splat_radius; ++dy) {
      int y = py + dy;
      if (y < 0 || y >= cam.height) continue;
      for (int dx = -splat_radius; dx <= splat_radius; ++dx) {
        int x = px + dx;
        if (x < 0 || x >= cam.width) continue;
        size_t at = static_cast<size_t>(y) * cam.width + x;
        if (c[2] < depth[at]) {
          depth[at] = c[2];
          for (int ch = 0; ch < 3; ++ch)
            res.image.pixels[at * 3 + ch] = cloud.rgb[i][ch] / 255.0;
          touched = true;
        }
      }
    }
    if (touched) ++res.points_drawn;
  }
  res.empty_warning = res.points_drawn == 0;
  return res;
}

double voxel_overlap(const PointCloud& a, const PointCloud& b, double cell) {
  auto cells = [cell](const PointCloud& c) {
    std::vector<Coord> v(c.xyz.size());
    for (size_t i = 0; i < c.xyz.size(); ++i) v[i] = quantize(c.xyz[i], cell);
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
    return v;
  };
  std::vector<Coord> ca = cells(a), cb = cells(b);
  if (ca.empty() || cb.empty()) return 0.0;
  std::vector<Coord> inter;
  std::set_intersection(ca.begin(), ca.end(), cb.begin(), cb.end(),
                        std::back_inserter(inter));
  return static_cast<double>(inter.size()) /
         static_cast<double>(std::min(ca.size(), cb.size()));
}

namespace {

PointCloud crop_slab(const PointCloud& cloud, const Vec3& axis, double lo,
                     double hi) {
  PointCloud out;
  for (int64_t i = 0; i < cloud.size(); ++i) {
    double s = cloud.xyz[i][0] * axis[0] + cloud.xyz[i][1] * axis[1] +
               cloud.xyz[i][2] * axis[2];
    if (s >= lo && s <= hi) {
      out.xyz.push_back(cloud.xyz[i]);
      out.rgb.push_back(cloud.rgb[i]);
    }
  }
  return out;
}

RigidTransform random_motion(Rng& rng, double max_deg, double max_t) {
  double u = rng.uniform(-1, 1), phi = rng.uniform(0, 2 * M_PI);
  double sq = std::sqrt(std::max(0.0, 1 - u * u));
  Vec3 axis{sq * std::cos(phi), sq * std::sin(phi), u};
  double ang = rng.uniform(0.0, max_deg) * M_PI / 180.0;
  double c = std::cos(ang), s = std::sin(ang), ic = 1 - c;
  RigidTransform T;
  T.r = {{{c + axis[0] * axis[0] * ic, axis[0] * axis[1] * ic - axis[2] * s,
           axis[0] * axis[2] * ic + axis[1] * s},
          {axis[1] * axis[0] * ic + axis[2] * s, c + axis[1] * axis[1] * ic,
           axis[1] * axis[2] * ic - axis[0] * s},
          {axis[2] * axis[0] * ic - axis[1] * s,
           axis[2] * axis[1] * ic + axis[0] * s, c + axis[2] * axis[2] * ic}}};
  T.t = {rng.uniform(-max_t, max_t), rng.uniform(-max_t, max_t),
         rng.uniform(-max_t, max_t)};
  return T;
}

Image render_fragment(const PointCloud& frag, const PairConfig& cfg, Rng& rng) {
  Vec3 centroid{0, 0, 0};
  for (const Vec3& p : frag.xyz)
    for (int k = 0; k < 3; ++k) centroid[k] += p[k];
  for (int k = 0; k < 3; ++k) centroid[k] /= static_cast<double>(frag.size());
  double radius = 1e-6;
  for (const Vec3& p : frag.xyz) {
    double d = std::sqrt((p[0] - centroid[0]) * (p[0] - centroid[0]) +
                         (p[1] - centroid[1]) * (p[1] - centroid[1]) +
                         (p[2] - centroid[2]) * (p[2] - centroid[2]));
    radius = std::max(radius, d);
  }
  double phi = rng.uniform(0, 2 * M_PI);
  Vec3 dir{0.6 * std::cos(phi), 0.6 * std::sin(phi), 1.0};
  double dn = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
  for (int k = 0; k < 3; ++k) dir[k] /= dn;
  Vec3 eye{centroid[0] + dir[0] * radius * 2.6,
           centroid[1] + dir[1] * radius * 2.6,
           centroid[2] + dir[2] * radius * 2.6};
  RigidTransform w2c = look_at(eye, centroid);

  std::vector<Vec3> fit_pts = frag.xyz;
  if (cfg.partial_view) {
    // Cover only the lower-x half of the fragment.
    double lo = 1e300, hi = -1e300;
    for (const Vec3& p : frag.xyz) {
      lo = std::min(lo, p[0]);
      hi = std::max(hi, p[0]);
    }
    double mid = (lo + hi) / 2;
    fit_pts.clear();
    for (const Vec3& p : frag.xyz)
      if (p[0] <= mid) fit_pts.push_back(p);
    if (fit_pts.empty()) fit_pts = frag.xyz;
  }
  CameraIntrinsics cam =
      fit_camera(fit_pts, w2c, cfg.image_width, cfg.image_height);
  return render_image(frag, w2c, cam, cfg.splat_radius).image;
}

}  // namespace

RegistrationPair make_pair(const PointCloud& scene, const PairConfig& cfg) {
  require(cfg.overlap_fraction > 0.0 && cfg.overlap_fraction <= 1.0,
          ErrorCategory::contract, "make_pair: overlap_fraction must be in (0,1]");
  require(cfg.image_width % 8 == 0 && cfg.image_height % 8 == 0,
          ErrorCategory::config, "make_pair: image dimensions must be /8");
  require(scene.size() >= 40, ErrorCategory::contract,
          "make_pair: scene too small");
  Rng rng(derive_seed(cfg.seed, 0x9a12ULL));

  double theta = rng.uniform(0, 2 * M_PI);
  Vec3 axis{std::cos(theta), std::sin(theta), 0.0};
  double smin = 1e300, smax = -1e300;
  for (const Vec3& p : scene.xyz) {
    double s = p[0] * axis[0] + p[1] * axis[1] + p[2] * axis[2];
    smin = std::min(smin, s);
    smax = std::max(smax, s);
  }
  double range = smax - smin;
  double w = range * 0.5;
  double center = (smin + smax) / 2;

  auto crops_at = [&](double delta) {
    double a_lo = center - delta / 2 - w / 2, a_hi = center - delta / 2 + w / 2;
    double b_lo = center + delta / 2 - w / 2, b_hi = center + delta / 2 + w / 2;
    return std::pair<PointCloud, PointCloud>{
        crop_slab(scene, axis, a_lo, a_hi), crop_slab(scene, axis, b_lo, b_hi)};
  };

  double best_delta = 0.0, best_err = 1e300, best_overlap = 0.0;
  double lo = 0.0, hi = range - w;
  for (int it = 0; it < 48; ++it) {
    double mid = (lo + hi) / 2;
    auto [a, b] = crops_at(mid);
    double ov = (a.size() == 0 || b.size() == 0)
                    ? 0.0
                    : voxel_overlap(a, b, cfg.overlap_voxel);
    double err = std::fabs(ov - cfg.overlap_fraction);
    if (err < best_err) {
      best_err = err;
      best_delta = mid;
      best_overlap = ov;
    }
    if (ov > cfg.overlap_fraction)
      lo = mid;
    else
      hi = mid;
  }
  // delta = 0 gives identical fragments; prefer it when full overlap is asked.
  if (cfg.overlap_fraction >= 1.0) {
    best_delta = 0.0;
    best_overlap = 1.0;
    best_err = 0.0;
  }
  require(best_err <= 0.045, ErrorCategory::contract,
          "make_pair: requested overlap ", cfg.overlap_fraction,
          " unreachable for this scene (best ", best_overlap, ")");

  auto [frag_a, frag_b] = crops_at(best_delta);
  require(frag_a.size() >= 20 && frag_b.size() >= 20, ErrorCategory::contract,
          "make_pair: fragment too small");

  RigidTransform motion = random_motion(rng, cfg.transform_magnitude_deg,
                                        cfg.translation_magnitude_m);
  if (cfg.transform_magnitude_deg == 0.0 && cfg.translation_magnitude_m == 0.0)
    motion = RigidTransform::identity();

  RegistrationPair pair;
  pair.dst_cloud = std::move(frag_b);
  pair.src_cloud.xyz = apply_transform(frag_a.xyz, motion);
  pair.src_cloud.rgb = frag_a.rgb;
  pair.gt = motion.inverse();
  pair.overlap_fraction = best_overlap;
  pair.src_image = render_fragment(pair.src_cloud, cfg, rng);
  pair.dst_image = render_fragment(pair.dst_cloud, cfg, rng);
  return pair;
}

}  // namespace imf
