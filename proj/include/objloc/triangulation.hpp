#pragma once

// Per-track landmark estimation. Each track has a single unknown (its 3D
// point) and the camera poses are held fixed, so the per-object factor graph
// collapses to a 3-parameter nonlinear least-squares problem.

#include "objloc/core.hpp"

#include <algorithm>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace objloc {

/// Keeps tracks with strictly more than n_min detections, in input order.
inline std::vector<Track> filter_tracks(const std::vector<Track>& tracks, int n_min) {
  if (n_min < 1) throw std::invalid_argument("filter_tracks: n_min must be >= 1");
  std::vector<Track> out;
  std::copy_if(tracks.begin(), tracks.end(), std::back_inserter(out),
               [n_min](const Track& t) { return static_cast<int>(t.detections.size()) > n_min; });
  return out;
}

namespace detail {

inline const Pose& pose_for(const PoseLookup& poses, int frame) {
  auto it = poses.find(frame);
  if (it == poses.end()) throw std::invalid_argument("no pose for frame " + std::to_string(frame));
  return it->second;
}

}  // namespace detail

/// Midpoint triangulation: the point minimizing the summed squared distance
/// to every back-projected detection ray. Empty when all rays are parallel
/// (within 1e-8 rad), i.e. the normal equations are rank deficient.
inline std::optional<Vec3> initial_guess(const Track& track, const PoseLookup& poses,
                                         const CameraIntrinsics& k) {
  if (track.detections.empty()) return std::nullopt;
  Mat3 lhs = Mat3::Zero();
  Vec3 rhs = Vec3::Zero();
  Vec3 first_ray = Vec3::Zero();
  double max_sin = 0;
  for (const Detection& d : track.detections) {
    const Pose& pose = detail::pose_for(poses, d.frame_index);
    const Vec3 ray = pixel_ray(pose, k, d.centroid);
    if (first_ray.isZero()) first_ray = ray;
    max_sin = std::max(max_sin, first_ray.cross(ray).norm());
    const Mat3 perp = Mat3::Identity() - ray * ray.transpose();
    lhs += perp;
    rhs += perp * pose.translation;
  }
  if (max_sin < 1e-8) return std::nullopt;
  Eigen::SelfAdjointEigenSolver<Mat3> eig(lhs);
  if (eig.eigenvalues()(0) <= 1e-12 * eig.eigenvalues()(2)) return std::nullopt;
  return lhs.ldlt().solve(rhs);
}

/// Reprojection residual (projected - observed) and its 2x3 Jacobian with
/// respect to the odometry-frame point. Empty when the point is behind the
/// camera.
struct ReprojectionTerm {
  Vec2 residual;
  Eigen::Matrix<double, 2, 3> jacobian;
};

inline std::optional<ReprojectionTerm> reprojection_term(const Pose& pose, const CameraIntrinsics& k,
                                                         const Vec3& point, const Vec2& observed) {
  const Vec3 pc = to_camera(pose, point);
  if (pc.z() <= kMinDepth) return std::nullopt;
  const double iz = 1.0 / pc.z();
  ReprojectionTerm term;
  term.residual = Vec2(k.fx * pc.x() * iz + k.cx, k.fy * pc.y() * iz + k.cy) - observed;
  Eigen::Matrix<double, 2, 3> d_proj;
  d_proj << k.fx * iz, 0, -k.fx * pc.x() * iz * iz,
            0, k.fy * iz, -k.fy * pc.y() * iz * iz;
  term.jacobian = d_proj * pose.rotation.transpose();
  return term;
}

enum class RefineStatus { Converged, Diverged };

/// Why a refinement was declared diverged.
enum class DivergeReason { None, IterationCap, BehindCameras, CostIncrease, ResidualFloor };

struct RefineResult {
  RefineStatus status = RefineStatus::Diverged;
  DivergeReason reason = DivergeReason::None;
  Landmark landmark;
  double initial_cost = 0;
  double final_cost = 0;
  double rms_px = 0;  // per-detection reprojection RMS at the solution
  int iterations = 0;

  bool converged() const { return status == RefineStatus::Converged; }
};

struct RefineOptions {
  int max_iterations = 50;
  double step_tol = 1e-8;
  double relative_cost_tol = 1e-10;
  int max_consecutive_increases = 5;
  /// Converged tracks whose reprojection RMS exceeds this many pixels are
  /// reported as diverged. Static objects stay at the pixel-noise level;
  /// moving ones cannot.
  double max_rms_px = 5.0;
};

namespace detail {

struct CostEval {
  bool valid = false;   // false if any detection is behind its camera
  bool any_in_front = false;
  double cost = 0;
  Eigen::Matrix3d jtj = Eigen::Matrix3d::Zero();
  Vec3 jtr = Vec3::Zero();
};

inline CostEval evaluate_cost(const Track& track, const PoseLookup& poses, const CameraIntrinsics& k,
                              const Vec3& x, bool with_jacobian) {
  CostEval ev;
  ev.valid = true;
  for (const Detection& d : track.detections) {
    const auto term = reprojection_term(pose_for(poses, d.frame_index), k, x, d.centroid);
    if (!term) {
      ev.valid = false;
      continue;
    }
    ev.any_in_front = true;
    ev.cost += term->residual.squaredNorm();
    if (with_jacobian) {
      ev.jtj += term->jacobian.transpose() * term->jacobian;
      ev.jtr += term->jacobian.transpose() * term->residual;
    }
  }
  return ev;
}

}  // namespace detail

/// Damped Gauss-Newton on the summed squared reprojection error.
///
/// Plain Gauss-Newton steps are tried first; a rejected step switches to
/// Levenberg damping until a step is accepted. The covariance is
/// s^2 (J^T J)^-1 with s^2 = cost / max(1, 2n - 3).
inline RefineResult refine(const Track& track, const PoseLookup& poses, const CameraIntrinsics& k,
                           const Vec3& guess, const RefineOptions& opt = {}) {
  if (!guess.allFinite()) throw std::invalid_argument("refine: guess must be finite");
  RefineResult result;
  result.landmark.landmark_id = track.track_id;
  result.landmark.position = guess;

  Vec3 x = guess;
  auto ev = detail::evaluate_cost(track, poses, k, x, true);
  if (!ev.valid) {
    result.reason = DivergeReason::BehindCameras;
    return result;
  }
  result.initial_cost = ev.cost;
  result.final_cost = ev.cost;

  double lambda = 0;
  int increases = 0;
  bool converged = ev.cost == 0.0;
  int it = 0;
  while (!converged && it < opt.max_iterations) {
    ++it;
    Mat3 h = ev.jtj;
    if (lambda > 0) h.diagonal() += lambda * ev.jtj.diagonal();
    const Vec3 step = h.ldlt().solve(-ev.jtr);
    if (!step.allFinite()) {
      lambda = lambda > 0 ? lambda * 10 : 1e-4;
      if (++increases >= opt.max_consecutive_increases) {
        result.reason = DivergeReason::CostIncrease;
        break;
      }
      continue;
    }
    // Reduction predicted by the local quadratic model. At the minimum both
    // it and the step vanish, and the measured cost difference is rounding
    // noise that must not count as an increase.
    const double predicted = -(2.0 * ev.jtr.dot(step) + step.dot(ev.jtj * step));
    if (step.norm() < opt.step_tol || predicted <= opt.relative_cost_tol * ev.cost) {
      converged = true;
      break;
    }
    const Vec3 candidate = x + step;
    const auto trial = detail::evaluate_cost(track, poses, k, candidate, true);
    if (!trial.any_in_front) {
      result.reason = DivergeReason::BehindCameras;
      result.iterations = it;
      result.landmark.position = x;
      return result;
    }
    if (!trial.valid || trial.cost > ev.cost) {
      // Rejected: damp harder.
      lambda = lambda > 0 ? lambda * 10 : 1e-4;
      if (++increases >= opt.max_consecutive_increases) {
        result.reason = DivergeReason::CostIncrease;
        break;
      }
      continue;
    }
    increases = 0;
    const double rel_change = ev.cost > 0 ? (ev.cost - trial.cost) / ev.cost : 0.0;
    x = candidate;
    ev = trial;
    lambda = lambda > 1e-4 ? lambda / 10 : 0.0;
    if (step.norm() < opt.step_tol || rel_change < opt.relative_cost_tol || ev.cost == 0.0)
      converged = true;
  }

  result.iterations = it;
  result.final_cost = ev.cost;
  result.landmark.position = x;
  const int n = static_cast<int>(track.detections.size());
  result.rms_px = n > 0 ? std::sqrt(ev.cost / n) : 0.0;

  if (!converged) {
    if (result.reason == DivergeReason::None) result.reason = DivergeReason::IterationCap;
    return result;
  }

  const double s2 = ev.cost / std::max(1, 2 * n - 3);
  Mat3 cov = s2 * ev.jtj.inverse();
  cov = 0.5 * (cov + cov.transpose()).eval();
  result.landmark.covariance = cov;

  if (result.rms_px > opt.max_rms_px) {
    result.reason = DivergeReason::ResidualFloor;
    return result;
  }
  if (!cov.allFinite()) {
    result.reason = DivergeReason::CostIncrease;
    return result;
  }
  result.status = RefineStatus::Converged;
  return result;
}

enum class TrackOutcome { Landmark, DiscardedShort, Degenerate, Diverged };

struct BuildMapResult {
  ObjectMap map;
  int discarded_short = 0;
  int discarded_degenerate = 0;
  int discarded_diverged = 0;
  /// Per input track, in input order.
  std::vector<std::pair<int, TrackOutcome>> outcomes;

  bool empty_warning() const { return map.landmarks.empty(); }

  /// `landmarks=<n> discarded_diverged=<n> discarded_short=<n>`; degenerate
  /// tracks failed to triangulate and are counted with the diverged ones.
  std::string summary() const {
    return "landmarks=" + std::to_string(map.landmarks.size()) +
           " discarded_diverged=" + std::to_string(discarded_diverged + discarded_degenerate) +
           " discarded_short=" + std::to_string(discarded_short);
  }
};

/// Triangulates every track independently. Landmarks are ordered by id, so
/// the result does not depend on the input track order.
inline BuildMapResult build_map(const std::vector<Track>& tracks, const PoseLookup& poses,
                                const CameraIntrinsics& k, const Hyperparameters& params,
                                const std::string& agent_id) {
  BuildMapResult out;
  out.map.agent_id = agent_id;
  RefineOptions opt;
  opt.max_rms_px = params.max_reprojection_rms;
  for (const Track& t : tracks) {
    if (static_cast<int>(t.detections.size()) <= params.n_min) {
      ++out.discarded_short;
      out.outcomes.emplace_back(t.track_id, TrackOutcome::DiscardedShort);
      continue;
    }
    const auto guess = initial_guess(t, poses, k);
    if (!guess) {
      ++out.discarded_degenerate;
      out.outcomes.emplace_back(t.track_id, TrackOutcome::Degenerate);
      continue;
    }
    const RefineResult r = refine(t, poses, k, *guess, opt);
    if (!r.converged()) {
      ++out.discarded_diverged;
      out.outcomes.emplace_back(t.track_id, TrackOutcome::Diverged);
      continue;
    }
    out.map.landmarks.push_back(r.landmark);
    out.outcomes.emplace_back(t.track_id, TrackOutcome::Landmark);
  }
  std::sort(out.map.landmarks.begin(), out.map.landmarks.end(),
            [](const Landmark& a, const Landmark& b) { return a.landmark_id < b.landmark_id; });
  return out;
}

}  // namespace objloc
