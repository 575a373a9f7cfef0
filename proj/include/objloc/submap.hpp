#pragma once

// Inlier filtering and geometric submap partitioning of an object map.

#include "objloc/core.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace objloc {

struct Submap {
  int id = 0;               // index in the generated list
  Vec2 center = Vec2::Zero();  // grid-cell center on the x-y plane
  std::vector<int> landmark_ids;
  std::vector<Vec3> points;  // points[k] is the position of landmark_ids[k]

  std::size_t size() const { return points.size(); }
};

/// Linear-interpolation percentile of `values` (p in [0, 100]).
inline double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw std::invalid_argument("percentile of an empty set");
  std::sort(values.begin(), values.end());
  const double rank = std::clamp(p, 0.0, 100.0) / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (rank - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

struct FilterResult {
  ObjectMap map;
  std::vector<double> distances;       // per input landmark
  bool euclidean_fallback = false;     // sample covariance was singular
};

/// Keeps landmarks whose Mahalanobis distance to the landmark distribution
/// is within the omega-th percentile of all such distances. A singular
/// sample covariance falls back to Euclidean distance to the mean.
inline FilterResult mahalanobis_filter(const ObjectMap& map, double omega_percentile) {
  const auto n = map.landmarks.size();
  if (n < 2) throw std::invalid_argument("mahalanobis_filter: need at least 2 landmarks");
  if (!(omega_percentile > 0 && omega_percentile <= 100))
    throw std::invalid_argument("mahalanobis_filter: omega must be in (0, 100]");

  Vec3 mean = Vec3::Zero();
  for (const auto& lm : map.landmarks) mean += lm.position;
  mean /= static_cast<double>(n);
  Mat3 cov = Mat3::Zero();
  for (const auto& lm : map.landmarks) {
    const Vec3 d = lm.position - mean;
    cov += d * d.transpose();
  }
  cov /= static_cast<double>(n - 1);

  FilterResult out;
  Eigen::SelfAdjointEigenSolver<Mat3> eig(cov);
  const auto ev = eig.eigenvalues();
  out.euclidean_fallback = !(ev(0) > 1e-12 * std::max(1.0, ev(2)));
  const Mat3 info = out.euclidean_fallback ? Mat3::Identity() : cov.inverse().eval();

  out.distances.reserve(n);
  for (const auto& lm : map.landmarks) {
    const Vec3 d = lm.position - mean;
    out.distances.push_back(std::sqrt(std::max(0.0, d.dot(info * d))));
  }
  const double cutoff = percentile(out.distances, omega_percentile);
  out.map.agent_id = map.agent_id;
  out.map.frame_label = map.frame_label;
  for (std::size_t i = 0; i < n; ++i)
    if (out.distances[i] <= cutoff) out.map.landmarks.push_back(map.landmarks[i]);
  return out;
}

/// Number of grid centers along one axis spanning [lo, hi] with step `step`.
inline int grid_count(double lo, double hi, double step) {
  return static_cast<int>(std::floor((hi - lo) / step + 1e-9)) + 1;
}

/// Sliding-window submaps. Centers form a grid with step `overlap` over the
/// x-y bounding box (min corner to max corner inclusive). Each center,
/// lifted to the mean landmark height, takes its n_max nearest landmarks
/// (ties by id). Submaps with at most s_max landmarks can never pass the
/// cardinality gate and are dropped.
inline std::vector<Submap> generate_submaps(const ObjectMap& map, const Hyperparameters& params) {
  std::vector<Submap> out;
  if (map.landmarks.empty()) return out;

  // Landmarks in id order make selection independent of input order.
  std::vector<Landmark> lms = map.landmarks;
  std::sort(lms.begin(), lms.end(),
            [](const Landmark& a, const Landmark& b) { return a.landmark_id < b.landmark_id; });

  double min_x = lms[0].position.x(), max_x = min_x;
  double min_y = lms[0].position.y(), max_y = min_y;
  double mean_z = 0;
  for (const auto& lm : lms) {
    min_x = std::min(min_x, lm.position.x());
    max_x = std::max(max_x, lm.position.x());
    min_y = std::min(min_y, lm.position.y());
    max_y = std::max(max_y, lm.position.y());
    mean_z += lm.position.z();
  }
  mean_z /= static_cast<double>(lms.size());

  const int nx = grid_count(min_x, max_x, params.overlap);
  const int ny = grid_count(min_y, max_y, params.overlap);
  const auto take = std::min<std::size_t>(static_cast<std::size_t>(params.n_max), lms.size());
  if (take <= static_cast<std::size_t>(params.s_max)) return out;

  std::vector<std::pair<double, std::size_t>> dist(lms.size());
  for (int iy = 0; iy < ny; ++iy) {
    for (int ix = 0; ix < nx; ++ix) {
      const Vec3 c(min_x + ix * params.overlap, min_y + iy * params.overlap, mean_z);
      for (std::size_t i = 0; i < lms.size(); ++i) dist[i] = {(lms[i].position - c).norm(), i};
      // Indices follow id order, so pair comparison breaks ties by id.
      std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(take), dist.end());
      Submap s;
      s.id = static_cast<int>(out.size());
      s.center = c.head<2>();
      for (std::size_t k = 0; k < take; ++k) {
        s.landmark_ids.push_back(lms[dist[k].second].landmark_id);
        s.points.push_back(lms[dist[k].second].position);
      }
      out.push_back(std::move(s));
    }
  }
  return out;
}

}  // namespace objloc
