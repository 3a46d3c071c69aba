#pragma once

#include "cellmatch/common.hpp"

#include <functional>
#include <span>
#include <vector>

namespace cellmatch {

struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  // this ∘ first: apply `first`, then this.
  RigidTransform after(const RigidTransform& first) const;
  RigidTransform inverse() const;
};

struct AffineTransform {
  Mat3 linear = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  Vec3 apply(const Vec3& p) const { return linear * p + translation; }
  AffineTransform after(const AffineTransform& first) const;
  static AffineTransform from_rigid(const RigidTransform& r) { return {r.rotation, r.translation}; }
};

struct Ellipsoid {
  Vec3 centroid = Vec3::Zero();
  // Descending; two standard deviations along each principal axis.
  Vec3 radii = Vec3::Zero();
  // Columns are the principal axes matching `radii`.
  Mat3 axes = Mat3::Identity();
};

inline constexpr double kRadiusScale = 2.0;

// PCA fit. Throws DegenerateCloud if fewer than 4 points or the covariance is
// rank deficient.
Ellipsoid fit_ellipsoid(std::span<const Vec3> points);

struct PrealignResult {
  Worm aligned;
  RigidTransform tf;
};

// Moves the centroid cloud into the canonical frame: barycenter at the origin,
// x along the longest principal axis with non-negative third moment, y normal
// to the best left-right mirror plane, z with non-negative third moment.
PrealignResult prealign(const Worm& worm);

// Canonical rotation for a point cloud (rows = new axes); exposed for tests.
RigidTransform canonical_pose(std::span<const Vec3> points);

// Ordinary least squares fit of dst ≈ A·src + t. Throws DegenerateCloud if
// fewer than 4 pairs or src is (numerically) coplanar.
AffineTransform least_squares_affine(std::span<const Vec3> src, std::span<const Vec3> dst);

// Σ‖A(src_k) − dst_k‖².
double affine_residual(const AffineTransform& tf, std::span<const Vec3> src, std::span<const Vec3> dst);

// Applies the transform to centroids only; radii are kept.
Worm transform_worm(const Worm& worm, const AffineTransform& tf);
Worm transform_worm(const Worm& worm, const RigidTransform& tf);

// Matches the current worm against a fixed reference. Pairs are
// (reference index, worm index).
using ReferenceMatcher = std::function<Matching(const Worm&)>;

struct RealignResult {
  Worm aligned;
  AffineTransform composed;
  std::vector<double> residuals;
};

inline constexpr int kRollHypotheses = 12;

// Rotations about x in 30° steps, each with and without a head-tail flip
// (180° about z); identity first.
std::vector<Mat3> pose_hypotheses();

// Hypothesis for the (prealigned) worm whose matching against the reference
// has the lowest mean squared centroid distance; the first wins ties.
Mat3 best_pose_hypothesis(const Worm& worm, std::span<const Vec3> reference_points, const ReferenceMatcher& matcher);

// Alternates matching and affine refitting `iterations` times, optionally
// starting from best_pose_hypothesis. Throws NoMatches if a round yields
// fewer than 4 correspondences.
RealignResult realign(const Worm& worm, std::span<const Vec3> reference_points, const ReferenceMatcher& matcher,
                      int iterations, bool resolve_pose = false);

}  // namespace cellmatch
