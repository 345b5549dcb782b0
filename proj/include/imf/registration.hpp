#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "imf/tensor.hpp"

namespace imf {

using Vec3 = std::array<double, 3>;

struct RigidTransform {
  std::array<std::array<double, 3>, 3> r{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
  Vec3 t{0, 0, 0};

  static RigidTransform identity() { return {}; }
  Vec3 apply(const Vec3& p) const {
    return {r[0][0] * p[0] + r[0][1] * p[1] + r[0][2] * p[2] + t[0],
            r[1][0] * p[0] + r[1][1] * p[1] + r[1][2] * p[2] + t[1],
            r[2][0] * p[0] + r[2][1] * p[1] + r[2][2] * p[2] + t[2]};
  }
  RigidTransform inverse() const;
  // Returns the transform applying `first`, then this.
  RigidTransform after(const RigidTransform& first) const;
  // max |R^T R - I| and det for invariant checks
  double orthonormality_error() const;
  double determinant() const;
};

std::vector<Vec3> apply_transform(const std::vector<Vec3>& points,
                                  const RigidTransform& T);

struct Correspondence {
  int32_t src = -1;
  int32_t dst = -1;
  double dist = 0.0;  // descriptor distance
  bool mutual = false;
};

struct CorrespondenceSet {
  std::vector<Correspondence> pairs;
  int64_t size() const { return static_cast<int64_t>(pairs.size()); }
};

// Nearest neighbor of every row of a among the rows of b under Euclidean
// descriptor distance (exact kd-tree search, ties to the lower index).
// mutual_only keeps only mutually-nearest pairs.
CorrespondenceSet match_descriptors(const Tensor& a, const Tensor& b,
                                    bool mutual_only);

// Weighted least-squares rigid fit via cross-covariance SVD with determinant
// correction. weights, when given, has one entry per point.
RigidTransform kabsch(const std::vector<Vec3>& src, const std::vector<Vec3>& dst,
                      const std::vector<double>* weights = nullptr);

struct RansacParams {
  int64_t iterations = 2000;
  double inlier_dist = 0.1;  // meters, matches the tau_1 default
  int sample_size = 3;
  uint64_t seed = 0;
};

struct RansacResult {
  bool success = false;
  RigidTransform transform;
  std::vector<int64_t> inliers;  // indices into the caller's correspondence list
  int64_t best_iteration = -1;
  int64_t iterations = 0;
};

// Seeded RANSAC over the correspondences. Iterations are independent and may
// run in parallel; the winner is the highest inlier count with the lowest
// iteration index, so results do not depend on thread count. Sampling is done
// over a canonical ordering of the correspondences, making the result
// invariant to the input order as well.
RansacResult ransac_register(const CorrespondenceSet& corrs,
                             const std::vector<Vec3>& src_xyz,
                             const std::vector<Vec3>& dst_xyz,
                             const RansacParams& params);

}  // namespace imf
