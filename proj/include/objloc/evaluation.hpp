#pragma once

// Precision / recall harness over submap-pair outcomes.
//
// A submap pair "overlaps" when the voxel IoU of its two point sets, both
// expressed in a common ground-truth frame, exceeds theta_overlap; such a
// pair is expected to yield a correct transform. A hypothesis is correct
// when its residual against the ground truth is within the roll/pitch, yaw
// and translation gates.

#include "objloc/alignment.hpp"
#include "objloc/core.hpp"
#include "objloc/submap.hpp"

#include <array>
#include <chrono>
#include <cmath>
#include <set>
#include <vector>

namespace objloc {

/// Voxel-occupancy IoU of two point sets. Empty input gives 0.
inline double submap_iou(const std::vector<Vec3>& a, const std::vector<Vec3>& b, double voxel) {
  if (!(voxel > 0)) throw std::invalid_argument("submap_iou: voxel must be > 0");
  if (a.empty() || b.empty()) return 0.0;
  auto cells = [voxel](const std::vector<Vec3>& pts) {
    std::set<std::array<long long, 3>> out;
    for (const Vec3& p : pts)
      out.insert({static_cast<long long>(std::floor(p.x() / voxel)), static_cast<long long>(std::floor(p.y() / voxel)),
                  static_cast<long long>(std::floor(p.z() / voxel))});
    return out;
  };
  const auto ca = cells(a);
  const auto cb = cells(b);
  std::size_t inter = 0;
  for (const auto& c : ca) inter += cb.count(c);
  const std::size_t uni = ca.size() + cb.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

inline double submap_iou(const Submap& a, const Submap& b, double voxel) {
  return submap_iou(a.points, b.points, voxel);
}

enum class Verdict { Correct, Incorrect };

/// Residual of `estimate` against `truth` (both map_a -> map_b).
inline RigidTransform residual_transform(const RigidTransform& estimate, const RigidTransform& truth) {
  return estimate.compose(truth.inverse());
}

inline Verdict classify(const RigidTransform& estimate, const RigidTransform& truth, const Hyperparameters& params) {
  const RigidTransform r = residual_transform(estimate, truth);
  const EulerAngles e = transform_angles(r);
  const bool ok = std::abs(e.roll) < params.theta_rp && std::abs(e.pitch) < params.theta_rp &&
                  std::abs(e.yaw) < params.theta_yaw && r.translation.norm() < params.t_max;
  return ok ? Verdict::Correct : Verdict::Incorrect;
}

inline Verdict classify(const AlignmentHypothesis& h, const RigidTransform& truth, const Hyperparameters& params) {
  return classify(h.transform, truth, params);
}

/// Everything the precision/recall sweep needs about one submap pair.
struct PairOutcome {
  int source_submap = 0;
  int target_submap = 0;
  double iou = 0;
  int cardinality = 0;
  bool has_transform = false;
  bool attitude_ok = false;  // survives online pruning apart from the |S| gate
  bool correct = false;
  double seconds = 0;
};

struct EvaluationRun {
  std::vector<PairOutcome> outcomes;
  std::vector<double> runtimes;  // one per distinct correspondence search
};

/// Runs the correspondence search over all submap pairs and scores each pair
/// against the ground-truth transform `truth` (map_a -> map_b).
inline EvaluationRun evaluate_pairs(const ObjectMap& map_a, const ObjectMap& map_b, const RigidTransform& truth,
                                    const Hyperparameters& params, int threads = 1) {
  const SubmapPair subs = make_submaps(map_a, map_b, params);
  EvaluationRun run;
  const auto results = compare_all(subs.a, subs.b, params, threads, &run.runtimes);
  const RigidTransform b_to_a = truth.inverse();

  std::vector<std::vector<Vec3>> b_in_a;
  for (const Submap& s : subs.b) {
    std::vector<Vec3> pts;
    for (const Vec3& p : s.points) pts.push_back(b_to_a.apply(p));
    b_in_a.push_back(std::move(pts));
  }

  for (std::size_t ia = 0; ia < subs.a.size(); ++ia) {
    for (std::size_t ib = 0; ib < subs.b.size(); ++ib) {
      const SubmapComparison& c = results[ia * subs.b.size() + ib];
      PairOutcome o;
      o.source_submap = subs.a[ia].id;
      o.target_submap = subs.b[ib].id;
      o.iou = submap_iou(subs.a[ia].points, b_in_a[ib], params.voxel());
      o.cardinality = static_cast<int>(c.inliers.size());
      o.has_transform = c.transform.has_value();
      o.seconds = c.seconds;
      if (o.has_transform) {
        AlignmentHypothesis h = make_hypothesis(c, o.source_submap, o.target_submap);
        const PruneDecision d = prune(h, params);
        o.attitude_ok = d != PruneDecision::RejectAttitude && d != PruneDecision::RejectYaw;
        o.correct = classify(h, truth, params) == Verdict::Correct;
      }
      run.outcomes.push_back(o);
    }
  }
  return run;
}

struct PrecisionRecallRow {
  int s_max = 0;
  double precision = 1.0;
  double recall = 0.0;
  int hypothesized = 0;
  int correct = 0;
  int overlapping_pairs = 0;
  int recovered = 0;                 // correct, hypothesized and overlapping
  bool precision_undefined = false;  // nothing hypothesized; precision reported as 1
  bool recall_undefined = false;     // no overlapping pairs; recall reported as 0
};

inline std::vector<PrecisionRecallRow> precision_recall(const std::vector<PairOutcome>& outcomes,
                                                        const Hyperparameters& params,
                                                        const std::vector<int>& s_max_sweep) {
  std::vector<PrecisionRecallRow> rows;
  for (int s : s_max_sweep) {
    PrecisionRecallRow row;
    row.s_max = s;
    for (const PairOutcome& o : outcomes) {
      const bool overlapping = o.iou > params.theta_overlap;
      const bool hyp = o.has_transform && o.attitude_ok && o.cardinality > s;
      row.overlapping_pairs += overlapping;
      row.hypothesized += hyp;
      row.correct += hyp && o.correct;
      row.recovered += hyp && o.correct && overlapping;
    }
    row.precision_undefined = row.hypothesized == 0;
    row.precision = row.hypothesized ? static_cast<double>(row.correct) / row.hypothesized : 1.0;
    row.recall_undefined = row.overlapping_pairs == 0;
    row.recall = row.overlapping_pairs ? static_cast<double>(row.recovered) / row.overlapping_pairs : 0.0;
    rows.push_back(row);
  }
  return rows;
}

struct TimingStats {
  double mean = 0;
  double stddev = 0;
  std::size_t samples = 0;
};

inline TimingStats timing_stats(const std::vector<double>& xs) {
  TimingStats t;
  t.samples = xs.size();
  if (xs.empty()) return t;
  for (double x : xs) t.mean += x;
  t.mean /= static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0;
    for (double x : xs) ss += (x - t.mean) * (x - t.mean);
    t.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return t;
}

/// Wall-clock of one correspondence search step (build_affinity +
/// densest_clique + arun) per submap pair, over `repeats` repetitions of up
/// to `max_pairs` pairs. Map loading and submap generation are excluded.
inline TimingStats timing(const ObjectMap& map_a, const ObjectMap& map_b, const Hyperparameters& params, int repeats,
                          std::size_t max_pairs = 16) {
  if (repeats < 3) throw std::invalid_argument("timing: repeats must be >= 3");
  const SubmapPair subs = make_submaps(map_a, map_b, params);
  std::vector<double> samples;
  for (int r = 0; r < repeats; ++r) {
    std::size_t done = 0;
    for (const Submap& a : subs.a) {
      for (const Submap& b : subs.b) {
        if (done++ >= max_pairs) break;
        const auto start = std::chrono::steady_clock::now();
        const SubmapComparison c = compare_submaps(a, b, params);
        (void)c;
        samples.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());
      }
      if (done >= max_pairs) break;
    }
  }
  return timing_stats(samples);
}

}  // namespace objloc
