#include "cellmatch/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

namespace cellmatch {

namespace {

Vec3 mean_of(std::span<const Vec3> points) {
  Vec3 m = Vec3::Zero();
  for (const auto& p : points) m += p;
  return m / static_cast<double>(points.size());
}

Mat3 scatter_of(std::span<const Vec3> points, const Vec3& mean) {
  Mat3 s = Mat3::Zero();
  for (const auto& p : points) {
    const Vec3 d = p - mean;
    s += d * d.transpose();
  }
  return s;
}

struct Pca {
  Vec3 mean;
  Vec3 eigenvalues;  // descending
  Mat3 axes;         // columns match eigenvalues
};

Pca principal_axes(std::span<const Vec3> points) {
  if (points.size() < 4) throw Error(ErrorKind::DegenerateCloud, "need at least 4 points");
  Pca out;
  out.mean = mean_of(points);
  const Mat3 cov = scatter_of(points, out.mean) / static_cast<double>(points.size());
  Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  const Vec3 ev = eig.eigenvalues();
  if (!(ev[2] > 0.0) || ev[0] <= 1e-12 * ev[2])
    throw Error(ErrorKind::DegenerateCloud, "covariance rank < 3");
  for (int k = 0; k < 3; ++k) {
    out.eigenvalues[k] = ev[2 - k];
    out.axes.col(k) = eig.eigenvectors().col(2 - k);
  }
  return out;
}

double third_moment(std::span<const Vec3> centered, const Vec3& axis) {
  double m = 0.0;
  for (const auto& p : centered) {
    const double v = p.dot(axis);
    m += v * v * v;
  }
  return m;
}

// Gaussian-kernel overlap between a cloud and its mirror image across the
// plane with unit normal u(θ) = cosθ·e2 + sinθ·e3.
class MirrorScore {
 public:
  MirrorScore(std::vector<Vec3> centered, const Vec3& e2, const Vec3& e3) : pts_(std::move(centered)), e2_(e2), e3_(e3) {
    double nn_sum = 0.0;
    for (std::size_t i = 0; i < pts_.size(); ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < pts_.size(); ++j)
        if (i != j) best = std::min(best, (pts_[i] - pts_[j]).squaredNorm());
      nn_sum += std::sqrt(best);
    }
    const double h = 0.5 * nn_sum / static_cast<double>(pts_.size());
    inv_two_h2_ = 1.0 / (2.0 * h * h);
  }

  Vec3 normal(double theta) const { return std::cos(theta) * e2_ + std::sin(theta) * e3_; }

  double value(double theta) const {
    const Vec3 u = normal(theta);
    double s = 0.0;
    for (const auto& pj : pts_) {
      const Vec3 mj = pj - 2.0 * u.dot(pj) * u;
      for (const auto& pi : pts_) s += std::exp(-(pi - mj).squaredNorm() * inv_two_h2_);
    }
    return s;
  }

  double derivative(double theta) const {
    const Vec3 u = normal(theta);
    const Vec3 du = -std::sin(theta) * e2_ + std::cos(theta) * e3_;
    double s = 0.0;
    for (const auto& pj : pts_) {
      const double uj = u.dot(pj);
      const Vec3 mj = pj - 2.0 * uj * u;
      // d/dθ of (pi - mj) = 2[(du·pj) u + (u·pj) du]
      const Vec3 dd = 2.0 * (du.dot(pj) * u + uj * du);
      for (const auto& pi : pts_) {
        const Vec3 d = pi - mj;
        s += std::exp(-d.squaredNorm() * inv_two_h2_) * (-2.0 * inv_two_h2_) * d.dot(dd);
      }
    }
    return s;
  }

 private:
  std::vector<Vec3> pts_;
  Vec3 e2_, e3_;
  double inv_two_h2_ = 1.0;
};

double best_mirror_angle(const MirrorScore& score) {
  constexpr int kCandidates = 36;
  constexpr double kStep = 2.0 * std::numbers::pi / kCandidates;
  int best = 0;
  double best_value = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < kCandidates; ++k) {
    const double v = score.value(k * kStep);
    if (v > best_value + 1e-12 * std::abs(best_value)) {
      best_value = v;
      best = k;
    }
  }
  // Golden-section refinement on [θ* − step, θ* + step].
  const double gr = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = best * kStep - kStep;
  double b = best * kStep + kStep;
  double c = b - gr * (b - a);
  double d = a + gr * (b - a);
  double fc = score.value(c);
  double fd = score.value(d);
  for (int it = 0; it < 60 && b - a > 1e-9; ++it) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - gr * (b - a);
      fc = score.value(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + gr * (b - a);
      fd = score.value(d);
    }
  }
  double theta = 0.5 * (a + b);
  // Polish with bisection on the derivative where it brackets a maximum.
  double lo = theta - 1e-4;
  double hi = theta + 1e-4;
  double dlo = score.derivative(lo);
  double dhi = score.derivative(hi);
  if (dlo > 0.0 && dhi < 0.0) {
    for (int it = 0; it < 80; ++it) {
      const double mid = 0.5 * (lo + hi);
      const double dm = score.derivative(mid);
      if (dm > 0.0) lo = mid; else hi = mid;
    }
    theta = 0.5 * (lo + hi);
  }
  return theta;
}

}  // namespace

RigidTransform RigidTransform::after(const RigidTransform& first) const {
  return {rotation * first.rotation, rotation * first.translation + translation};
}

RigidTransform RigidTransform::inverse() const {
  const Mat3 rt = rotation.transpose();
  return {rt, -(rt * translation)};
}

AffineTransform AffineTransform::after(const AffineTransform& first) const {
  return {linear * first.linear, linear * first.translation + translation};
}

Ellipsoid fit_ellipsoid(std::span<const Vec3> points) {
  const Pca pca = principal_axes(points);
  Ellipsoid e;
  e.centroid = pca.mean;
  e.axes = pca.axes;
  for (int k = 0; k < 3; ++k) e.radii[k] = kRadiusScale * std::sqrt(pca.eigenvalues[k]);
  return e;
}

RigidTransform canonical_pose(std::span<const Vec3> points) {
  const Pca pca = principal_axes(points);
  std::vector<Vec3> centered;
  centered.reserve(points.size());
  for (const auto& p : points) centered.push_back(p - pca.mean);

  Vec3 ex = pca.axes.col(0);
  if (third_moment(centered, ex) < 0.0) ex = -ex;
  const Vec3 e2 = pca.axes.col(1);
  const Vec3 e3 = ex.cross(e2);

  const MirrorScore score(centered, e2, e3);
  const double theta = best_mirror_angle(score);
  Vec3 ey = score.normal(theta);
  Vec3 ez = ex.cross(ey);
  if (third_moment(centered, ez) < 0.0) {
    ey = -ey;
    ez = -ez;
  }

  RigidTransform tf;
  tf.rotation.row(0) = ex.transpose();
  tf.rotation.row(1) = ey.transpose();
  tf.rotation.row(2) = ez.transpose();
  tf.translation = -(tf.rotation * pca.mean);
  return tf;
}

PrealignResult prealign(const Worm& worm) {
  const auto pts = worm.centroids();
  const RigidTransform tf = canonical_pose(pts);
  Worm aligned = transform_worm(worm, tf);
  // Pin the barycenter exactly; the rotation round-off is far below this.
  Vec3 bary = Vec3::Zero();
  for (const auto& n : aligned.nuclei) bary += n.centroid;
  bary /= static_cast<double>(aligned.nuclei.size());
  for (auto& n : aligned.nuclei) n.centroid -= bary;
  RigidTransform out = tf;
  out.translation -= bary;
  return {std::move(aligned), out};
}

AffineTransform least_squares_affine(std::span<const Vec3> src, std::span<const Vec3> dst) {
  if (src.size() != dst.size()) throw Error(ErrorKind::InvalidArgument, "src/dst size mismatch");
  if (src.size() < 4) throw Error(ErrorKind::DegenerateCloud, "need at least 4 correspondences");
  const Vec3 ms = mean_of(src);
  const Vec3 md = mean_of(dst);
  Mat3 ss = Mat3::Zero();
  Mat3 ds = Mat3::Zero();
  for (std::size_t k = 0; k < src.size(); ++k) {
    const Vec3 s = src[k] - ms;
    ss += s * s.transpose();
    ds += (dst[k] - md) * s.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Mat3> eig(ss);
  const Vec3 ev = eig.eigenvalues();
  if (!(ev[2] > 0.0) || ev[0] <= 1e-12 * ev[2]) throw Error(ErrorKind::DegenerateCloud, "normal matrix singular");
  // Normal equations M·SS = DS, solved through the symmetric factorization.
  AffineTransform tf;
  tf.linear = ss.ldlt().solve(ds.transpose()).transpose();
  tf.translation = md - tf.linear * ms;
  return tf;
}

double affine_residual(const AffineTransform& tf, std::span<const Vec3> src, std::span<const Vec3> dst) {
  double r = 0.0;
  for (std::size_t k = 0; k < src.size(); ++k) r += (tf.apply(src[k]) - dst[k]).squaredNorm();
  return r;
}

Worm transform_worm(const Worm& worm, const AffineTransform& tf) {
  Worm out = worm;
  for (auto& n : out.nuclei) n.centroid = tf.apply(n.centroid);
  return out;
}

Worm transform_worm(const Worm& worm, const RigidTransform& tf) {
  return transform_worm(worm, AffineTransform::from_rigid(tf));
}

std::vector<Mat3> pose_hypotheses() {
  std::vector<Mat3> out;
  const Mat3 head_tail = Vec3(-1, -1, 1).asDiagonal();
  for (const Mat3& base : {Mat3(Mat3::Identity()), head_tail})
    for (int k = 0; k < kRollHypotheses; ++k) {
      const double angle = 2.0 * std::numbers::pi * k / kRollHypotheses;
      out.push_back(Eigen::AngleAxisd(angle, Vec3::UnitX()).toRotationMatrix() * base);
    }
  return out;
}

Mat3 best_pose_hypothesis(const Worm& worm, std::span<const Vec3> reference_points, const ReferenceMatcher& matcher) {
  Mat3 best = Mat3::Identity();
  double best_score = std::numeric_limits<double>::infinity();
  for (const Mat3& flip : pose_hypotheses()) {
    const Worm cur = transform_worm(worm, AffineTransform{flip, Vec3::Zero()});
    const Matching m = matcher(cur);
    if (m.size() == 0) continue;
    double score = 0.0;
    for (const auto& [ref, own] : m.pairs)
      score += (reference_points[static_cast<std::size_t>(ref)] - cur.nuclei.at(static_cast<std::size_t>(own)).centroid)
                   .squaredNorm();
    score /= static_cast<double>(m.size());
    if (score < best_score) {
      best_score = score;
      best = flip;
    }
  }
  return best;
}

RealignResult realign(const Worm& worm, std::span<const Vec3> reference_points, const ReferenceMatcher& matcher,
                      int iterations, bool resolve_pose) {
  if (iterations < 1) throw Error(ErrorKind::InvalidArgument, "iterations must be >= 1");
  RealignResult result{worm, AffineTransform{}, {}};
  if (resolve_pose) {
    result.composed = AffineTransform{best_pose_hypothesis(worm, reference_points, matcher), Vec3::Zero()};
    result.aligned = transform_worm(worm, result.composed);
  }
  for (int it = 0; it < iterations; ++it) {
    const Matching m = matcher(result.aligned);
    if (m.size() < 4)
      throw Error(ErrorKind::NoMatches, "realignment round " + std::to_string(it) + " produced " +
                                            std::to_string(m.size()) + " correspondences");
    std::vector<Vec3> src, dst;
    src.reserve(m.size());
    dst.reserve(m.size());
    for (const auto& [ref, own] : m.pairs) {
      dst.push_back(reference_points[static_cast<std::size_t>(ref)]);
      src.push_back(result.aligned.nuclei.at(static_cast<std::size_t>(own)).centroid);
    }
    const AffineTransform step = least_squares_affine(src, dst);
    result.residuals.push_back(affine_residual(step, src, dst));
    result.composed = step.after(result.composed);
    result.aligned = transform_worm(worm, result.composed);
  }
  return result;
}

}  // namespace cellmatch
