#pragma once

#include <vector>

#include "imf/registration.hpp"

namespace imf {

struct PairResult {
  double inlier_ratio = 0.0;
  bool matched = false;  // inlier_ratio > tau2
  double rte_m = 0.0;
  double rre_deg = 0.0;
  bool success = false;  // rte <= rte_max && rre <= rre_max
  bool registered = false;  // RANSAC produced a model
};

// Distance between each anchor's matched target point and the ground-truth
// position of the anchor; +inf when the anchor has no match. The inlier
// ratio at tau_1 is the fraction of these distances <= tau_1.
std::vector<double> anchor_match_distances(
    const std::vector<int32_t>& anchors, const CorrespondenceSet& matches,
    const RigidTransform& gt, const std::vector<Vec3>& src_xyz,
    const std::vector<Vec3>& dst_xyz);

double inlier_ratio_from_distances(const std::vector<double>& dists, double tau1);

double inlier_ratio(const std::vector<int32_t>& anchors,
                    const CorrespondenceSet& matches, const RigidTransform& gt,
                    double tau1, const std::vector<Vec3>& src_xyz,
                    const std::vector<Vec3>& dst_xyz);

// Fraction of pairs with inlier_ratio strictly greater than tau2.
double feature_match_recall(const std::vector<double>& ratios, double tau2);

struct CurvePoint {
  double threshold = 0.0;
  double value = 0.0;
};

// FMR as a function of tau2 at fixed per-pair ratios.
std::vector<CurvePoint> fmr_vs_tau2(const std::vector<double>& ratios,
                                    const std::vector<double>& taus);

// FMR as a function of tau1: per-pair ratios are recomputed from the stored
// anchor distances, then thresholded at tau2.
std::vector<CurvePoint> fmr_vs_tau1(
    const std::vector<std::vector<double>>& per_pair_dists,
    const std::vector<double>& taus, double tau2);

// Population standard deviation; the per-scene "Std" column aggregates
// per-scene FMR values with this.
double population_std(const std::vector<double>& values);

struct TransformErrors {
  double rte_m = 0.0;
  double rre_deg = 0.0;
};

// RTE = |t_est - t_gt|; RRE = arccos(clamp((trace(R_gt^T R_est) - 1)/2)).
TransformErrors transform_errors(const RigidTransform& est,
                                 const RigidTransform& gt);

double success_rate(const std::vector<PairResult>& results, double rte_max,
                    double rre_max);

}  // namespace imf
