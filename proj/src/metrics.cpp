#include "imf/metrics.hpp"

#include <cmath>
#include <limits>

namespace imf {

std::vector<double> anchor_match_distances(
    const std::vector<int32_t>& anchors, const CorrespondenceSet& matches,
    const RigidTransform& gt, const std::vector<Vec3>& src_xyz,
    const std::vector<Vec3>& dst_xyz) {
  require(!anchors.empty(), ErrorCategory::contract,
          "inlier_ratio: empty anchor set");
  std::vector<int32_t> match_of(src_xyz.size(), -1);
  for (const Correspondence& c : matches.pairs) match_of[c.src] = c.dst;

  std::vector<double> out(anchors.size());
  for (size_t i = 0; i < anchors.size(); ++i) {
    int32_t a = anchors[i];
    int32_t m = match_of[a];
    if (m < 0) {
      out[i] = std::numeric_limits<double>::infinity();
      continue;
    }
    Vec3 expect = gt.apply(src_xyz[a]);
    const Vec3& got = dst_xyz[m];
    double dx = expect[0] - got[0], dy = expect[1] - got[1],
           dz = expect[2] - got[2];
    out[i] = std::sqrt(dx * dx + dy * dy + dz * dz);
  }
  return out;
}

double inlier_ratio_from_distances(const std::vector<double>& dists,
                                   double tau1) {
  int64_t n = 0;
  for (double d : dists)
    if (d <= tau1) ++n;
  return static_cast<double>(n) / static_cast<double>(dists.size());
}

double inlier_ratio(const std::vector<int32_t>& anchors,
                    const CorrespondenceSet& matches, const RigidTransform& gt,
                    double tau1, const std::vector<Vec3>& src_xyz,
                    const std::vector<Vec3>& dst_xyz) {
  return inlier_ratio_from_distances(
      anchor_match_distances(anchors, matches, gt, src_xyz, dst_xyz), tau1);
}

double feature_match_recall(const std::vector<double>& ratios, double tau2) {
  require(!ratios.empty(), ErrorCategory::contract,
          "feature_match_recall: empty ratio list");
  int64_t n = 0;
  for (double r : ratios)
    if (r > tau2) ++n;
  return static_cast<double>(n) / static_cast<double>(ratios.size());
}

std::vector<CurvePoint> fmr_vs_tau2(const std::vector<double>& ratios,
                                    const std::vector<double>& taus) {
  std::vector<CurvePoint> curve;
  curve.reserve(taus.size());
  for (double t : taus) curve.push_back({t, feature_match_recall(ratios, t)});
  return curve;
}

std::vector<CurvePoint> fmr_vs_tau1(
    const std::vector<std::vector<double>>& per_pair_dists,
    const std::vector<double>& taus, double tau2) {
  std::vector<CurvePoint> curve;
  curve.reserve(taus.size());
  for (double t : taus) {
    std::vector<double> ratios;
    ratios.reserve(per_pair_dists.size());
    for (const auto& d : per_pair_dists)
      ratios.push_back(inlier_ratio_from_distances(d, t));
    curve.push_back({t, feature_match_recall(ratios, tau2)});
  }
  return curve;
}

double population_std(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  return std::sqrt(var / static_cast<double>(values.size()));
}

TransformErrors transform_errors(const RigidTransform& est,
                                 const RigidTransform& gt) {
  TransformErrors e;
  double dx = est.t[0] - gt.t[0], dy = est.t[1] - gt.t[1],
         dz = est.t[2] - gt.t[2];
  e.rte_m = std::sqrt(dx * dx + dy * dy + dz * dz);
  // Relative rotation R = R_gt^T R_est; angle = arccos((tr - 1)/2). Computed
  // as atan2(|skew(R)|/2, (tr-1)/2), which is the same angle but keeps full
  // precision near 0 where arccos loses ~1e-6 deg to rounding.
  double rel[3][3];
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += gt.r[k][i] * est.r[k][j];
      rel[i][j] = s;
    }
  double c = (rel[0][0] + rel[1][1] + rel[2][2] - 1.0) / 2.0;
  double sx = (rel[2][1] - rel[1][2]) / 2.0;
  double sy = (rel[0][2] - rel[2][0]) / 2.0;
  double sz = (rel[1][0] - rel[0][1]) / 2.0;
  double s = std::sqrt(sx * sx + sy * sy + sz * sz);
  e.rre_deg = std::atan2(s, c) * 180.0 / M_PI;
  return e;
}

double success_rate(const std::vector<PairResult>& results, double rte_max,
                    double rre_max) {
  require(!results.empty(), ErrorCategory::contract,
          "success_rate: empty result list");
  int64_t n = 0;
  for (const PairResult& r : results)
    if (r.registered && r.rte_m <= rte_max && r.rre_deg <= rre_max) ++n;
  return static_cast<double>(n) / static_cast<double>(results.size());
}

}  // namespace imf
