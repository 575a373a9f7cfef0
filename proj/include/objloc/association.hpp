#pragma once

// Weighted geometric-consistency graph between two submaps and the densest
// consistent clique over it.
//
// Every candidate association (a point of submap A paired with a point of
// submap B) is a graph vertex. Two associations are consistent when the
// distance between their A-side points matches the distance between their
// B-side points; rigid motions preserve distances, so true matches form a
// clique. Edge weights come from consistency_score().

#include "objloc/core.hpp"
#include "objloc/submap.hpp"

#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace objloc {

struct Association {
  int index_a = 0;  // point index in submap A
  int index_b = 0;  // point index in submap B

  friend bool operator==(const Association&, const Association&) = default;
  friend auto operator<=>(const Association&, const Association&) = default;
};

/// Raised when the candidate set is larger than the configured cap, which
/// means the submap parameters are mis-set for this map density.
class SizeLimitError : public std::length_error {
 public:
  using std::length_error::length_error;
};

/// Symmetric n x n affinity over candidate associations: unit diagonal,
/// off-diagonal weights in [0, 1], zero meaning "inconsistent". Stored
/// sparse with both triangles present; every stored entry is positive.
class AffinityMatrix {
 public:
  using Sparse = Eigen::SparseMatrix<double>;

  AffinityMatrix() = default;
  explicit AffinityMatrix(Sparse m) : m_(std::move(m)) {
    m_.makeCompressed();
    pattern_ = m_;
    for (int k = 0; k < pattern_.outerSize(); ++k)
      for (Sparse::InnerIterator it(pattern_, k); it; ++it) it.valueRef() = 1.0;
  }

  /// From a dense symmetric matrix; the diagonal is forced to 1.
  static AffinityMatrix from_dense(const Eigen::MatrixXd& d) {
    std::vector<Eigen::Triplet<double>> trip;
    for (int c = 0; c < d.cols(); ++c)
      for (int r = 0; r < d.rows(); ++r)
        if (r == c) trip.emplace_back(r, c, 1.0);
        else if (d(r, c) > 0) trip.emplace_back(r, c, d(r, c));
    Sparse s(d.rows(), d.cols());
    s.setFromTriplets(trip.begin(), trip.end());
    return AffinityMatrix(std::move(s));
  }

  int size() const { return static_cast<int>(m_.rows()); }
  double operator()(int p, int q) const { return m_.coeff(p, q); }
  const Sparse& matrix() const { return m_; }
  /// Binary consistency pattern (1 where the affinity is positive).
  const Sparse& pattern() const { return pattern_; }
  Eigen::MatrixXd dense() const { return Eigen::MatrixXd(m_); }

 private:
  Sparse m_;
  Sparse pattern_;
};

/// exp(-x^2 / (2 sigma^2)) for |x| <= epsilon, else 0.
inline double consistency_score(double x, double sigma, double epsilon) {
  if (std::abs(x) > epsilon) return 0.0;
  return std::exp(-0.5 * x * x / (sigma * sigma));
}

struct AffinityProblem {
  std::vector<Association> associations;
  AffinityMatrix affinity;
};

/// All-to-all candidates between two submaps, weighted by pairwise-distance
/// consistency. Pairs sharing an endpoint, and pairs whose two points lie
/// closer than gamma within either map, get zero affinity.
inline AffinityProblem build_affinity(const std::vector<Vec3>& pts_a, const std::vector<Vec3>& pts_b,
                                      const Hyperparameters& params) {
  const int m = static_cast<int>(pts_a.size());
  const int n = static_cast<int>(pts_b.size());
  if (m == 0 || n == 0) throw std::invalid_argument("build_affinity: both submaps must be non-empty");
  const long long count = static_cast<long long>(m) * n;
  if (count > params.candidate_cap)
    throw SizeLimitError("build_affinity: " + std::to_string(count) + " candidate associations exceed cap " +
                         std::to_string(params.candidate_cap));

  AffinityProblem out;
  out.associations.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.associations.push_back({i, j});

  Eigen::MatrixXd dist_b(n, n);
  for (int j = 0; j < n; ++j)
    for (int l = 0; l < n; ++l) dist_b(j, l) = (pts_b[j] - pts_b[l]).norm();

  std::vector<Eigen::Triplet<double>> trip;
  for (int p = 0; p < count; ++p) trip.emplace_back(p, p, 1.0);
  for (int i = 0; i < m; ++i) {
    for (int k = i + 1; k < m; ++k) {
      const double da = (pts_a[i] - pts_a[k]).norm();
      if (da < params.gamma) continue;
      for (int j = 0; j < n; ++j) {
        for (int l = 0; l < n; ++l) {
          if (j == l) continue;
          const double db = dist_b(j, l);
          if (db < params.gamma) continue;
          const double w = consistency_score(da - db, params.sigma, params.epsilon);
          if (w <= 0) continue;
          const int p = i * n + j;
          const int q = k * n + l;
          trip.emplace_back(p, q, w);
          trip.emplace_back(q, p, w);
        }
      }
    }
  }
  AffinityMatrix::Sparse s(count, count);
  s.setFromTriplets(trip.begin(), trip.end());
  out.affinity = AffinityMatrix(std::move(s));
  return out;
}

inline AffinityProblem build_affinity(const Submap& a, const Submap& b, const Hyperparameters& params) {
  return build_affinity(a.points, b.points, params);
}

/// u^T A u / u^T u for the indicator vector of `nodes`.
inline double clique_density(const AffinityMatrix& a, const std::vector<int>& nodes) {
  if (nodes.empty()) return 0.0;
  double total = 0;
  for (int p : nodes)
    for (int q : nodes) total += a(p, q);
  return total / static_cast<double>(nodes.size());
}

/// True when every pair of `nodes` has positive affinity.
inline bool is_consistent_set(const AffinityMatrix& a, const std::vector<int>& nodes) {
  for (std::size_t x = 0; x < nodes.size(); ++x)
    for (std::size_t y = x + 1; y < nodes.size(); ++y)
      if (!(a(nodes[x], nodes[y]) > 0)) return false;
  return true;
}

struct CliqueOptions {
  int power_iterations = 100;
  int max_outer = 200;
  int max_inner = 500;
  double penalty_growth = 1.4;
  double tol_u = 1e-8;
  double tol_f = 1e-10;
  bool local_refinement = true;
  int seeded_restarts = 16;      // extra local searches, each seeded with one top entry of u
  int seeded_pair_restarts = 8;  // ... and with each consistent pair among this many top entries
};

namespace detail {

/// Incremental bookkeeping for a candidate clique S: w = A s, cnt = P s.
struct CliqueState {
  const AffinityMatrix* a;
  Eigen::VectorXd w;
  Eigen::VectorXi cnt;
  std::vector<char> in;
  int k = 0;
  double total = 0;  // s^T A s

  explicit CliqueState(const AffinityMatrix& aff)
      : a(&aff), w(Eigen::VectorXd::Zero(aff.size())), cnt(Eigen::VectorXi::Zero(aff.size())),
        in(static_cast<std::size_t>(aff.size()), 0) {}

  double density() const { return k ? total / k : 0.0; }
  bool addable(int j) const { return !in[j] && cnt[j] == k; }

  void add(int j) {
    total += 2 * w[j] + 1;
    update(j, +1);
    in[j] = 1;
    ++k;
  }
  void remove(int i) {
    total -= 2 * w[i] - 1;
    update(i, -1);
    in[i] = 0;
    --k;
  }

  std::vector<int> members() const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(in.size()); ++i)
      if (in[i]) out.push_back(i);
    return out;
  }

 private:
  void update(int j, int sign) {
    for (AffinityMatrix::Sparse::InnerIterator it(a->matrix(), j); it; ++it) {
      w[it.row()] += sign * it.value();
      cnt[it.row()] += sign;
    }
  }
};

/// Add / remove / swap moves until the density of S is a local maximum.
/// Adds that keep the density are accepted so ties favour larger sets.
inline void refine_clique(CliqueState& s) {
  const int n = s.a->size();
  const double eps = 1e-12;
  for (int pass = 0; pass < 4 * n + 16; ++pass) {
    const double d = s.density();
    int best_add = -1;
    double best_add_d = -std::numeric_limits<double>::infinity();
    for (int j = 0; j < n; ++j) {
      if (!s.addable(j)) continue;
      const double nd = (s.total + 2 * s.w[j] + 1) / (s.k + 1);
      if (nd > best_add_d + eps) {
        best_add_d = nd;
        best_add = j;
      }
    }
    if (best_add >= 0 && best_add_d >= d - eps) {
      s.add(best_add);
      continue;
    }
    int best_rm = -1;
    double best_rm_d = d + eps;
    if (s.k > 1) {
      for (int i = 0; i < n; ++i) {
        if (!s.in[i]) continue;
        const double nd = (s.total - 2 * s.w[i] + 1) / (s.k - 1);
        if (nd > best_rm_d) {
          best_rm_d = nd;
          best_rm = i;
        }
      }
    }
    int swap_in = -1, swap_out = -1;
    double best_sw_d = std::max(d, best_rm_d) + eps;
    if (s.k > 0) {
      for (int j = 0; j < n; ++j) {
        if (s.in[j] || s.cnt[j] != s.k - 1) continue;
        // Exactly one member conflicts with j: find it.
        int conflict = -1;
        if (s.k == 1) {
          for (int i = 0; i < n && conflict < 0; ++i)
            if (s.in[i]) conflict = i;
        } else {
          for (int i = 0; i < n; ++i) {
            if (s.in[i] && s.a->pattern().coeff(i, j) == 0.0) {
              conflict = i;
              break;
            }
          }
        }
        const double nd = (s.total - 2 * s.w[conflict] + 2 * s.w[j] + 2) / s.k;
        if (nd > best_sw_d) {
          best_sw_d = nd;
          swap_in = j;
          swap_out = conflict;
        }
      }
    }
    if (swap_in >= 0) {
      s.remove(swap_out);
      s.add(swap_in);
    } else if (best_rm >= 0) {
      s.remove(best_rm);
    } else {
      break;
    }
  }
}

}  // namespace detail

/// Densest consistent clique, as indices into the affinity matrix (sorted).
///
/// The binary problem max u^T A u / u^T u s.t. u_p u_q = 0 where A_pq = 0 is
/// relaxed to the unit sphere in the non-negative orthant. The objective
/// u^T (A - d * Pbar) u, with Pbar the indicator of inconsistent pairs, is
/// maximized by projected gradient ascent while the penalty d grows
/// geometrically until the support of u is a consistent set. The
/// continuous solution is rounded by admitting associations greedily in
/// decreasing order of u, then polished with add/remove/swap moves.
inline std::vector<int> densest_clique_indices(const AffinityMatrix& aff, const CliqueOptions& opt = {}) {
  const int n = aff.size();
  if (n == 0) return {};
  const auto& A = aff.matrix();
  const auto& P = aff.pattern();

  // Principal eigenvector estimate from the uniform vector.
  Eigen::VectorXd u = Eigen::VectorXd::Constant(n, 1.0 / std::sqrt(static_cast<double>(n)));
  for (int it = 0; it < opt.power_iterations; ++it) {
    Eigen::VectorXd next = A * u;
    const double norm = next.norm();
    if (!(norm > 0)) break;
    next /= norm;
    const double change = (next - u).norm();
    u = next;
    if (change < 1e-12) break;
  }
  u = u.cwiseMax(0.0);
  u.normalize();

  // Md v = A v - d (sum(v) 1 - P v)
  auto apply_md = [&](const Eigen::VectorXd& v, double d) -> Eigen::VectorXd {
    Eigen::VectorXd out = A * v;
    if (d > 0) out -= d * (Eigen::VectorXd::Constant(n, v.sum()) - P * v);
    return out;
  };
  auto support_consistent = [&](const Eigen::VectorXd& v) {
    Eigen::VectorXd ind = (v.array() > opt.tol_u).cast<double>();
    const double k = ind.sum();
    const Eigen::VectorXd hits = P * ind;
    for (int i = 0; i < n; ++i)
      if (ind[i] > 0 && hits[i] < k - 0.5) return false;
    return true;
  };

  double d = 0;
  double step = 1.0;
  for (int outer = 0; outer < opt.max_outer; ++outer) {
    Eigen::VectorXd g = apply_md(u, d);
    double f = u.dot(g);
    for (int inner = 0; inner < opt.max_inner; ++inner) {
      const Eigen::VectorXd grad = g - f * u;  // tangent to the sphere
      if (grad.norm() < opt.tol_u) break;
      Eigen::VectorXd cand;
      Eigen::VectorXd cand_g;
      double cand_f = f;
      bool accepted = false;
      for (int ls = 0; ls < 30; ++ls) {
        cand = (u + step * grad).cwiseMax(0.0);
        const double norm = cand.norm();
        if (norm > 0) {
          cand /= norm;
          cand_g = apply_md(cand, d);
          cand_f = cand.dot(cand_g);
          if (cand_f >= f) {
            accepted = true;
            break;
          }
        }
        step *= 0.5;
      }
      if (!accepted) break;
      const double gain = cand_f - f;
      const double moved = (cand - u).norm();
      u = std::move(cand);
      g = std::move(cand_g);
      f = cand_f;
      step = std::min(step * 2.0, 1e6);
      if (gain < opt.tol_f || moved < opt.tol_u) break;
    }

    if (support_consistent(u)) break;

    if (d == 0) {
      // Smallest penalty at which some violating support entry stops
      // gaining from the ascent direction.
      const Eigen::VectorXd au = A * u;
      const Eigen::VectorXd pbar_u = Eigen::VectorXd::Constant(n, u.sum()) - P * u;
      double d0 = std::numeric_limits<double>::infinity();
      for (int i = 0; i < n; ++i)
        if (u[i] > opt.tol_u && pbar_u[i] > opt.tol_u) d0 = std::min(d0, au[i] / pbar_u[i]);
      d = std::isfinite(d0) && d0 > 0 ? d0 : 1e-3;
    } else {
      d *= opt.penalty_growth;
    }
  }

  // Greedy rounding in decreasing u.
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int x, int y) { return u[x] > u[y]; });
  detail::CliqueState best(aff);
  for (int j : order) {
    if (!best.addable(j)) continue;
    if (best.k > 0 && (best.total + 2 * best.w[j] + 1) / (best.k + 1) < best.density() - 1e-12) continue;
    best.add(j);
  }
  if (opt.local_refinement) detail::refine_clique(best);
  // Extra local searches seeded from the top entries of u guard against a
  // relaxation that spreads its mass over two overlapping near-optimal sets.
  auto consider = [&](detail::CliqueState& s) {
    detail::refine_clique(s);
    const double tol = 1e-12 * std::max(1.0, best.density());
    if (s.density() > best.density() + tol || (s.density() >= best.density() - tol && s.k > best.k))
      best = std::move(s);
  };
  const int restarts = opt.local_refinement ? std::min(n, opt.seeded_restarts) : 0;
  for (int r = 0; r < restarts; ++r) {
    detail::CliqueState s(aff);
    s.add(order[static_cast<std::size_t>(r)]);
    consider(s);
  }
  const int pairs = opt.local_refinement ? std::min(n, opt.seeded_pair_restarts) : 0;
  for (int r1 = 0; r1 < pairs; ++r1) {
    for (int r2 = r1 + 1; r2 < pairs; ++r2) {
      const int x = order[static_cast<std::size_t>(r1)];
      const int y = order[static_cast<std::size_t>(r2)];
      if (!(aff(x, y) > 0)) continue;
      detail::CliqueState s(aff);
      s.add(x);
      s.add(y);
      consider(s);
    }
  }
  return best.members();
}

inline std::vector<Association> densest_clique(const AffinityMatrix& aff, const std::vector<Association>& assoc,
                                               const CliqueOptions& opt = {}) {
  if (static_cast<int>(assoc.size()) != aff.size())
    throw std::invalid_argument("densest_clique: association count does not match affinity size");
  std::vector<Association> out;
  for (int idx : densest_clique_indices(aff, opt)) out.push_back(assoc[static_cast<std::size_t>(idx)]);
  return out;
}

/// Raised by the exhaustive solver above its size limit.
class TooLargeError : public std::length_error {
 public:
  using std::length_error::length_error;
};

/// Exhaustive densest consistent set (n <= 20). Ties go to the larger set,
/// then to the lexicographically first index list.
inline std::vector<int> densest_clique_exact_indices(const AffinityMatrix& aff) {
  const int n = aff.size();
  if (n > 20) throw TooLargeError("densest_clique_exact: n = " + std::to_string(n) + " > 20");
  if (n == 0) return {};
  const Eigen::MatrixXd a = aff.dense();

  std::vector<int> best;
  double best_density = -1;
  std::vector<int> cur;

  // Depth-first over increasing index lists visits sets in lexicographic
  // order, so the first set found wins exact ties.
  auto visit = [&](auto&& self, int start, double total) -> void {
    for (int j = start; j < n; ++j) {
      bool ok = true;
      double add = 1.0;
      for (int i : cur) {
        if (!(a(i, j) > 0)) {
          ok = false;
          break;
        }
        add += 2 * a(i, j);
      }
      if (!ok) continue;
      cur.push_back(j);
      const double t = total + add;
      const double dens = t / static_cast<double>(cur.size());
      const double tol = 1e-12 * std::max(1.0, dens);
      if (dens > best_density + tol ||
          (std::abs(dens - best_density) <= tol && cur.size() > best.size())) {
        best_density = dens;
        best = cur;
      }
      self(self, j + 1, t);
      cur.pop_back();
    }
  };
  visit(visit, 0, 0.0);
  return best;
}

inline std::vector<Association> densest_clique_exact(const AffinityMatrix& aff,
                                                     const std::vector<Association>& assoc) {
  if (static_cast<int>(assoc.size()) != aff.size())
    throw std::invalid_argument("densest_clique_exact: association count does not match affinity size");
  std::vector<Association> out;
  for (int idx : densest_clique_exact_indices(aff)) out.push_back(assoc[static_cast<std::size_t>(idx)]);
  return out;
}

}  // namespace objloc
