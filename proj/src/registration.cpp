#include "imf/registration.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "imf/kdtree.hpp"
#include "imf/rng.hpp"

namespace imf {

RigidTransform RigidTransform::inverse() const {
  RigidTransform inv;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) inv.r[i][j] = r[j][i];
  for (int i = 0; i < 3; ++i)
    inv.t[i] = -(inv.r[i][0] * t[0] + inv.r[i][1] * t[1] + inv.r[i][2] * t[2]);
  return inv;
}

RigidTransform RigidTransform::after(const RigidTransform& first) const {
  RigidTransform out;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += r[i][k] * first.r[k][j];
      out.r[i][j] = s;
    }
  Vec3 ft = first.t;
  Vec3 rt = {r[0][0] * ft[0] + r[0][1] * ft[1] + r[0][2] * ft[2],
             r[1][0] * ft[0] + r[1][1] * ft[1] + r[1][2] * ft[2],
             r[2][0] * ft[0] + r[2][1] * ft[1] + r[2][2] * ft[2]};
  for (int i = 0; i < 3; ++i) out.t[i] = rt[i] + t[i];
  return out;
}

double RigidTransform::orthonormality_error() const {
  double worst = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += r[k][i] * r[k][j];
      worst = std::max(worst, std::fabs(s - (i == j ? 1.0 : 0.0)));
    }
  return worst;
}

double RigidTransform::determinant() const {
  return r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1]) -
         r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0]) +
         r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
}

std::vector<Vec3> apply_transform(const std::vector<Vec3>& points,
                                  const RigidTransform& T) {
  std::vector<Vec3> out(points.size());
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < static_cast<int64_t>(points.size()); ++i)
    out[i] = T.apply(points[i]);
  return out;
}

CorrespondenceSet match_descriptors(const Tensor& a, const Tensor& b,
                                    bool mutual_only) {
  require(a.ndim() == 2 && b.ndim() == 2, ErrorCategory::dimension,
          "match_descriptors expects 2-D fields");
  require(a.shape[1] == b.shape[1], ErrorCategory::dimension,
          "descriptor width mismatch ", a.shape_str(), " vs ", b.shape_str());
  require(a.shape[0] > 0 && b.shape[0] > 0, ErrorCategory::contract,
          "match_descriptors on empty field");
  int64_t ma = a.shape[0], mb = b.shape[0], dim = a.shape[1];
  KdTree tree_b(b.values.data(), mb, dim);
  KdTree tree_a(a.values.data(), ma, dim);

  std::vector<Correspondence> fwd(ma);
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < ma; ++i) {
    auto r = tree_b.nearest(a.values.data() + i * dim);
    fwd[i] = {static_cast<int32_t>(i), static_cast<int32_t>(r.index), r.dist,
              false};
  }
  std::vector<int64_t> back(mb);
#pragma omp parallel for schedule(static)
  for (int64_t j = 0; j < mb; ++j)
    back[j] = tree_a.nearest(b.values.data() + j * dim).index;
  for (auto& c : fwd) c.mutual = back[c.dst] == c.src;

  CorrespondenceSet out;
  if (mutual_only) {
    for (auto& c : fwd)
      if (c.mutual) out.pairs.push_back(c);
  } else {
    out.pairs = std::move(fwd);
  }
  return out;
}

RigidTransform kabsch(const std::vector<Vec3>& src, const std::vector<Vec3>& dst,
                      const std::vector<double>* weights) {
  require(src.size() == dst.size(), ErrorCategory::dimension,
          "kabsch point count mismatch ", src.size(), " vs ", dst.size());
  require(src.size() >= 3, ErrorCategory::contract,
          "kabsch needs at least 3 points, got ", src.size());
  if (weights)
    require(weights->size() == src.size(), ErrorCategory::dimension,
            "kabsch weight count mismatch");

  int64_t n = static_cast<int64_t>(src.size());
  double wsum = 0.0;
  Eigen::Vector3d cs = Eigen::Vector3d::Zero(), cd = Eigen::Vector3d::Zero();
  for (int64_t i = 0; i < n; ++i) {
    double w = weights ? (*weights)[i] : 1.0;
    wsum += w;
    cs += w * Eigen::Vector3d(src[i][0], src[i][1], src[i][2]);
    cd += w * Eigen::Vector3d(dst[i][0], dst[i][1], dst[i][2]);
  }
  require(wsum > 0.0, ErrorCategory::contract, "kabsch: nonpositive total weight");
  cs /= wsum;
  cd /= wsum;

  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  for (int64_t i = 0; i < n; ++i) {
    double w = weights ? (*weights)[i] : 1.0;
    Eigen::Vector3d s(src[i][0], src[i][1], src[i][2]);
    Eigen::Vector3d d(dst[i][0], dst[i][1], dst[i][2]);
    h += w * (s - cs) * (d - cd).transpose();
  }

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d& sv = svd.singularValues();
  require(sv(0) > 0.0 && sv(1) > 1e-12 * sv(0), ErrorCategory::degeneracy,
          "kabsch: cross-covariance rank < 2 (collinear or coincident points)");

  Eigen::Matrix3d u = svd.matrixU(), v = svd.matrixV();
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  d(2, 2) = (v * u.transpose()).determinant() < 0 ? -1.0 : 1.0;
  Eigen::Matrix3d r = v * d * u.transpose();
  Eigen::Vector3d t = cd - r * cs;

  RigidTransform out;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) out.r[i][j] = r(i, j);
    out.t[i] = t(i);
  }
  return out;
}

namespace {

double sq_dist(const Vec3& a, const Vec3& b) {
  double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

struct Sampled {
  bool ok = false;
  RigidTransform model;
};

Sampled fit_sample(const CorrespondenceSet& corrs,
                   const std::vector<int64_t>& order,
                   const std::vector<Vec3>& src_xyz,
                   const std::vector<Vec3>& dst_xyz, int sample_size,
                   uint64_t seed, int64_t iter) {
  Rng rng(derive_seed(seed, static_cast<uint64_t>(iter)));
  std::vector<int64_t> pick =
      rng.sample_indices(static_cast<int64_t>(order.size()), sample_size);
  std::vector<Vec3> s(sample_size), d(sample_size);
  for (int k = 0; k < sample_size; ++k) {
    const Correspondence& c = corrs.pairs[order[pick[k]]];
    s[k] = src_xyz[c.src];
    d[k] = dst_xyz[c.dst];
  }
  Sampled out;
  try {
    out.model = kabsch(s, d);
    out.ok = true;
  } catch (const Error&) {
    out.ok = false;  // degenerate sample, skip this iteration
  }
  return out;
}

int64_t count_inliers(const CorrespondenceSet& corrs,
                      const std::vector<Vec3>& src_xyz,
                      const std::vector<Vec3>& dst_xyz,
                      const RigidTransform& model, double inlier_dist) {
  double r2 = inlier_dist * inlier_dist;
  int64_t n = 0;
  for (const Correspondence& c : corrs.pairs)
    if (sq_dist(model.apply(src_xyz[c.src]), dst_xyz[c.dst]) <= r2) ++n;
  return n;
}

}  // namespace

RansacResult ransac_register(const CorrespondenceSet& corrs,
                             const std::vector<Vec3>& src_xyz,
                             const std::vector<Vec3>& dst_xyz,
                             const RansacParams& params) {
  RansacResult res;
  res.iterations = params.iterations;
  if (corrs.size() < params.sample_size) return res;  // failure, not a crash

  // Canonical ordering makes sampling invariant to the input order.
  std::vector<int64_t> order(corrs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    const Correspondence &ca = corrs.pairs[a], &cb = corrs.pairs[b];
    if (ca.src != cb.src) return ca.src < cb.src;
    if (ca.dst != cb.dst) return ca.dst < cb.dst;
    return ca.dist < cb.dist;
  });

  std::vector<int64_t> counts(params.iterations, -1);
#pragma omp parallel for schedule(static)
  for (int64_t it = 0; it < params.iterations; ++it) {
    Sampled s = fit_sample(corrs, order, src_xyz, dst_xyz, params.sample_size,
                           params.seed, it);
    if (!s.ok) continue;
    counts[it] =
        count_inliers(corrs, src_xyz, dst_xyz, s.model, params.inlier_dist);
  }

  int64_t best_it = -1, best_count = -1;
  for (int64_t it = 0; it < params.iterations; ++it)
    if (counts[it] > best_count) {
      best_count = counts[it];
      best_it = it;
    }
  if (best_it < 0 || best_count < params.sample_size) return res;

  RigidTransform model = fit_sample(corrs, order, src_xyz, dst_xyz,
                                    params.sample_size, params.seed, best_it)
                             .model;
  double r2 = params.inlier_dist * params.inlier_dist;
  std::vector<int64_t> inliers;
  std::vector<Vec3> s, d;
  // Walk in canonical order so the refit sums (and hence the result bits)
  // do not depend on the caller's correspondence order.
  for (int64_t oi : order) {
    const Correspondence& c = corrs.pairs[oi];
    if (sq_dist(model.apply(src_xyz[c.src]), dst_xyz[c.dst]) <= r2) {
      inliers.push_back(oi);
      s.push_back(src_xyz[c.src]);
      d.push_back(dst_xyz[c.dst]);
    }
  }
  std::sort(inliers.begin(), inliers.end());
  RigidTransform refined = model;
  if (static_cast<int>(s.size()) >= params.sample_size) {
    try {
      refined = kabsch(s, d);
    } catch (const Error&) {
      refined = model;  // collinear inlier set; keep the sampled model
    }
  }
  res.success = true;
  res.transform = refined;
  res.inliers = std::move(inliers);
  res.best_iteration = best_it;
  return res;
}

}  // namespace imf
