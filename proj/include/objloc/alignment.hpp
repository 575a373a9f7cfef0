#pragma once

// Frame alignment between two object maps from submap correspondences.

#include "objloc/association.hpp"
#include "objloc/core.hpp"
#include "objloc/submap.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <map>
#include <numeric>
#include <optional>
#include <thread>
#include <vector>

namespace objloc {

/// Least-squares rigid transform with b_k ~ R a_k + t (Arun, Huang and
/// Blostein): centroid subtraction, SVD of the 3x3 cross-covariance, and a
/// sign flip of the last singular direction when the result would be a
/// reflection. Empty for collinear or coincident point sets.
inline std::optional<RigidTransform> arun(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("arun: point sets differ in size");
  if (a.size() < 3) throw std::invalid_argument("arun: need at least 3 correspondences");
  const double n = static_cast<double>(a.size());
  Vec3 ca = Vec3::Zero(), cb = Vec3::Zero();
  for (std::size_t k = 0; k < a.size(); ++k) {
    ca += a[k];
    cb += b[k];
  }
  ca /= n;
  cb /= n;
  Mat3 h = Mat3::Zero();
  for (std::size_t k = 0; k < a.size(); ++k) h += (a[k] - ca) * (b[k] - cb).transpose();

  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (!(sv(0) > 0) || sv(1) < 1e-9 * sv(0)) return std::nullopt;
  const Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  if ((v * u.transpose()).determinant() < 0) d(2, 2) = -1;
  RigidTransform t;
  t.rotation = v * d * u.transpose();
  t.translation = cb - t.rotation * ca;
  return t;
}

/// Sum of squared residuals of `t` over the correspondences.
inline double alignment_cost(const RigidTransform& t, const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  double c = 0;
  for (std::size_t k = 0; k < a.size(); ++k) c += (t.apply(a[k]) - b[k]).squaredNorm();
  return c;
}

/// A candidate map_a -> map_b transform and the inlier set behind it.
struct AlignmentHypothesis {
  RigidTransform transform;  // maps map_a coordinates into map_b's frame
  std::vector<Association> inliers;
  int cardinality = 0;
  int source_submap = 0;  // submap id in map_a
  int target_submap = 0;  // submap id in map_b
  EulerAngles angles;
};

enum class PruneDecision { Keep, RejectAttitude, RejectYaw, RejectCardinality };

inline const char* to_string(PruneDecision d) {
  switch (d) {
    case PruneDecision::Keep: return "keep";
    case PruneDecision::RejectAttitude: return "reject(attitude)";
    case PruneDecision::RejectYaw: return "reject(yaw)";
    case PruneDecision::RejectCardinality: return "reject(cardinality)";
  }
  return "?";
}

/// Roll/pitch beyond theta_rp is dynamically infeasible for the platforms
/// considered; |S| must exceed s_max. Yaw is only gated when prune_yaw is set.
inline PruneDecision prune(const AlignmentHypothesis& h, const Hyperparameters& params) {
  const EulerAngles e = transform_angles(h.transform);
  if (std::abs(e.roll) > params.theta_rp || std::abs(e.pitch) > params.theta_rp)
    return PruneDecision::RejectAttitude;
  if (params.prune_yaw && std::abs(e.yaw) > params.theta_yaw) return PruneDecision::RejectYaw;
  if (h.cardinality <= params.s_max) return PruneDecision::RejectCardinality;
  return PruneDecision::Keep;
}

/// Outcome of one submap-pair correspondence search.
struct SubmapComparison {
  std::vector<Association> inliers;
  std::optional<RigidTransform> transform;  // set when |inliers| >= 3 and non-degenerate
  double seconds = 0;
};

/// build_affinity -> densest_clique -> arun for one submap pair.
inline SubmapComparison compare_submaps(const Submap& a, const Submap& b, const Hyperparameters& params) {
  const auto start = std::chrono::steady_clock::now();
  SubmapComparison out;
  const AffinityProblem prob = build_affinity(a, b, params);
  out.inliers = densest_clique(prob.affinity, prob.associations);
  if (out.inliers.size() >= 3) {
    std::vector<Vec3> pa, pb;
    for (const auto& as : out.inliers) {
      pa.push_back(a.points[static_cast<std::size_t>(as.index_a)]);
      pb.push_back(b.points[static_cast<std::size_t>(as.index_b)]);
    }
    out.transform = arun(pa, pb);
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

/// Submaps of both maps after inlier filtering.
struct SubmapPair {
  std::vector<Submap> a;
  std::vector<Submap> b;
};

/// Maps with fewer than two landmarks are used unfiltered.
inline ObjectMap filter_for_submaps(const ObjectMap& map, const Hyperparameters& params) {
  if (map.landmarks.size() < 2) return map;
  return mahalanobis_filter(map, params.omega_percentile).map;
}

inline SubmapPair make_submaps(const ObjectMap& map_a, const ObjectMap& map_b, const Hyperparameters& params) {
  return {generate_submaps(filter_for_submaps(map_a, params), params),
          generate_submaps(filter_for_submaps(map_b, params), params)};
}

/// Compares every submap of `a` with every submap of `b`; result is indexed
/// [ia * b.size() + ib]. Pairs with identical landmark memberships share one
/// solve (the search only depends on the point sets). Work is spread over
/// `threads` workers; the result does not depend on the thread count.
inline std::vector<SubmapComparison> compare_all(const std::vector<Submap>& a, const std::vector<Submap>& b,
                                                 const Hyperparameters& params, int threads = 1,
                                                 std::vector<double>* solve_seconds = nullptr) {
  auto key_of = [](const Submap& s) {
    std::vector<int> k = s.landmark_ids;
    std::sort(k.begin(), k.end());
    return k;
  };
  // Points of equal-membership submaps are identical up to ordering;
  // canonicalise the order so shared solves are exact.
  auto canonical = [](const Submap& s) {
    Submap c = s;
    std::vector<std::size_t> idx(s.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto x, auto y) { return s.landmark_ids[x] < s.landmark_ids[y]; });
    for (std::size_t k = 0; k < idx.size(); ++k) {
      c.landmark_ids[k] = s.landmark_ids[idx[k]];
      c.points[k] = s.points[idx[k]];
    }
    return c;
  };
  auto unique_of = [&](const std::vector<Submap>& subs, std::vector<int>& slot) {
    std::map<std::vector<int>, int> seen;
    std::vector<Submap> uniq;
    slot.resize(subs.size());
    for (std::size_t i = 0; i < subs.size(); ++i) {
      auto [it, fresh] = seen.emplace(key_of(subs[i]), static_cast<int>(uniq.size()));
      if (fresh) uniq.push_back(canonical(subs[i]));
      slot[i] = it->second;
    }
    return uniq;
  };
  std::vector<int> slot_a, slot_b;
  const auto ua = unique_of(a, slot_a);
  const auto ub = unique_of(b, slot_b);

  std::vector<SubmapComparison> solved(ua.size() * ub.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < solved.size(); i = next++)
      solved[i] = compare_submaps(ua[i / ub.size()], ub[i % ub.size()], params);
  };
  const int nthreads = std::max(1, std::min<int>(threads, static_cast<int>(solved.size())));
  std::vector<std::thread> pool;
  for (int t = 1; t < nthreads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (solve_seconds)
    for (const auto& c : solved) solve_seconds->push_back(c.seconds);

  // Translate inlier indices back into each submap's own point order.
  auto index_map = [](const Submap& s) {
    std::vector<std::size_t> idx(s.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto x, auto y) { return s.landmark_ids[x] < s.landmark_ids[y]; });
    return idx;  // canonical position -> original position
  };
  std::vector<SubmapComparison> out(a.size() * b.size());
  for (std::size_t ia = 0; ia < a.size(); ++ia) {
    const auto ma = index_map(a[ia]);
    for (std::size_t ib = 0; ib < b.size(); ++ib) {
      const auto mb = index_map(b[ib]);
      SubmapComparison c =
          solved[static_cast<std::size_t>(slot_a[ia]) * ub.size() + static_cast<std::size_t>(slot_b[ib])];
      for (auto& as : c.inliers) {
        as.index_a = static_cast<int>(ma[static_cast<std::size_t>(as.index_a)]);
        as.index_b = static_cast<int>(mb[static_cast<std::size_t>(as.index_b)]);
      }
      std::sort(c.inliers.begin(), c.inliers.end());
      out[ia * b.size() + ib] = std::move(c);
    }
  }
  return out;
}

inline AlignmentHypothesis make_hypothesis(const SubmapComparison& c, int source, int target) {
  AlignmentHypothesis h;
  h.transform = c.transform.value_or(RigidTransform{});
  h.inliers = c.inliers;
  h.cardinality = static_cast<int>(c.inliers.size());
  h.source_submap = source;
  h.target_submap = target;
  h.angles = transform_angles(h.transform);
  return h;
}

/// All kept hypotheses over the all-to-all submap comparison, sorted by
/// cardinality (descending), then source and target submap id.
inline std::vector<AlignmentHypothesis> align_maps(const ObjectMap& map_a, const ObjectMap& map_b,
                                                   const Hyperparameters& params, int threads = 1) {
  if (map_a.landmarks.empty() || map_b.landmarks.empty())
    throw std::invalid_argument("align_maps: maps must be non-empty");
  const SubmapPair subs = make_submaps(map_a, map_b, params);
  const auto results = compare_all(subs.a, subs.b, params, threads);
  std::vector<AlignmentHypothesis> kept;
  for (std::size_t ia = 0; ia < subs.a.size(); ++ia) {
    for (std::size_t ib = 0; ib < subs.b.size(); ++ib) {
      const SubmapComparison& c = results[ia * subs.b.size() + ib];
      if (!c.transform) continue;
      AlignmentHypothesis h = make_hypothesis(c, subs.a[ia].id, subs.b[ib].id);
      if (prune(h, params) == PruneDecision::Keep) kept.push_back(std::move(h));
    }
  }
  std::stable_sort(kept.begin(), kept.end(), [](const AlignmentHypothesis& x, const AlignmentHypothesis& y) {
    if (x.cardinality != y.cardinality) return x.cardinality > y.cardinality;
    if (x.source_submap != y.source_submap) return x.source_submap < y.source_submap;
    return x.target_submap < y.target_submap;
  });
  return kept;
}

}  // namespace objloc
