#include "objloc/association.hpp"

#include "test_support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

using namespace objloc;

namespace {

// Bitmask brute force, independent of the DFS oracle: best density, then
// larger cardinality, then smallest index list.
std::vector<int> brute_force(const Eigen::MatrixXd& a) {
  const int n = static_cast<int>(a.rows());
  std::vector<int> best;
  double best_d = -1;
  for (unsigned mask = 1; mask < (1u << n); ++mask) {
    std::vector<int> s;
    for (int i = 0; i < n; ++i)
      if (mask & (1u << i)) s.push_back(i);
    bool ok = true;
    double total = 0;
    for (int p : s)
      for (int q : s) {
        ok = ok && a(p, q) > 0;
        total += a(p, q);
      }
    if (!ok) continue;
    const double d = total / static_cast<double>(s.size());
    const double tol = 1e-12 * std::max(1.0, d);
    if (d > best_d + tol || (std::abs(d - best_d) <= tol && (s.size() > best.size() ||
                                                             (s.size() == best.size() && s < best)))) {
      best_d = d;
      best = s;
    }
  }
  return best;
}

double dense_density(const Eigen::MatrixXd& a, const std::vector<int>& s) {
  double total = 0;
  for (int p : s)
    for (int q : s) total += a(p, q);
  return s.empty() ? 0.0 : total / static_cast<double>(s.size());
}

Eigen::MatrixXd random_graph(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(0, 1);
  const double p = 0.2 + 0.6 * u(rng);
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      if (u(rng) < p) a(i, j) = a(j, i) = 0.05 + 0.95 * u(rng);
  return a;
}

// Two small submaps related by a rigid motion with noise, partial overlap
// and clutter; at most 12 candidate associations.
Eigen::MatrixXd geometric_instance(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> size(2, 4);
  const int m = size(rng);
  const int n = std::uniform_int_distribution<int>(2, 12 / m)(rng);
  const auto base = gen::separated_points(rng, m + n, 3.0, 0.3);
  const RigidTransform t{rot_z(std::uniform_real_distribution<double>(-3, 3)(rng)), gen::random_vec(rng, -5, 5)};
  std::normal_distribution<double> noise(0, 0.03);
  std::vector<Vec3> a(base.begin(), base.begin() + m);
  std::vector<Vec3> b;
  for (int k = 0; k < n; ++k) {
    const Vec3& src = base[static_cast<std::size_t>(k < m ? k : m + k)];
    const double x = noise(rng);
    const double y = noise(rng);
    const double z = noise(rng);
    b.push_back(t.apply(src) + Vec3(x, y, z));
  }
  return build_affinity(a, b, Hyperparameters{}).affinity.dense();
}

}  // namespace

TEST(ConsistencyScore, Values) {
  EXPECT_EQ(consistency_score(0.0, 0.05, 0.1), 1.0);
  EXPECT_NEAR(consistency_score(0.1, 0.05, 0.1), std::exp(-2.0), 1e-12);
  EXPECT_NEAR(consistency_score(0.1, 0.05, 0.1), 0.135335, 1e-6);
  EXPECT_EQ(consistency_score(0.1001, 0.05, 0.1), 0.0);
  EXPECT_EQ(consistency_score(-0.1001, 0.05, 0.1), 0.0);
}

TEST(ConsistencyScore, ZeroOutsideEpsilonAndSymmetric) {
  for (int i = 0; i < 1000; ++i) {
    const double x = -1.0 + 2.0 * i / 999.0;
    const double s = consistency_score(x, 0.05, 0.1);
    if (std::abs(x) > 0.1) {
      EXPECT_EQ(s, 0.0);
    } else {
      EXPECT_NEAR(s, std::exp(-x * x / (2 * 0.05 * 0.05)), 1e-15);
    }
    EXPECT_EQ(s, consistency_score(-x, 0.05, 0.1));
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 1.0);
  }
}

TEST(BuildAffinity, IdenticalSubmapsGiveAllOnesAmongCorrectPairs) {
  const std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}, {0, 2, 0}};
  const auto prob = build_affinity(pts, pts, Hyperparameters{});
  ASSERT_EQ(prob.associations.size(), 9u);
  const int correct[3] = {0, 4, 8};  // (0,0), (1,1), (2,2)
  for (int p : correct) {
    EXPECT_EQ(prob.associations[p].index_a, prob.associations[p].index_b);
    for (int q : correct) EXPECT_EQ(prob.affinity(p, q), 1.0);
  }
}

TEST(BuildAffinity, GammaSuppressesClosePairs) {
  const std::vector<Vec3> a{{0, 0, 0}, {0.05, 0, 0}, {3, 0, 0}};
  const auto prob = build_affinity(a, a, Hyperparameters{});
  // (0,0) and (1,1): A-side points 0.05 apart, below gamma.
  EXPECT_EQ(prob.affinity(0, 4), 0.0);
  EXPECT_GT(prob.affinity(0, 8), 0.0);
  // Same rule on the B side only.
  const std::vector<Vec3> wide{{0, 0, 0}, {1, 0, 0}, {3, 0, 0}};
  const auto one_sided = build_affinity(wide, a, Hyperparameters{});
  EXPECT_EQ(one_sided.affinity(0, 4), 0.0);
}

TEST(BuildAffinity, SharedEndpointIsInconsistent) {
  const std::vector<Vec3> a{{0, 0, 0}, {1, 0, 0}};
  const std::vector<Vec3> b{{0, 0, 0}, {1, 0, 0}, {1, 0, 0.0001}};
  const auto prob = build_affinity(a, b, Hyperparameters{});
  // (0 -> 1) and (0 -> 2) share source 0.
  EXPECT_EQ(prob.affinity(1, 2), 0.0);
  // (0 -> 0) and (1 -> 0) share target 0.
  EXPECT_EQ(prob.affinity(0, 3), 0.0);
}

TEST(BuildAffinity, StructuralInvariants) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 30; ++trial) {
    const auto a = gen::separated_points(rng, 6, 5.0, 0.05);
    const auto b = gen::separated_points(rng, 5, 5.0, 0.05);
    const Eigen::MatrixXd m = build_affinity(a, b, Hyperparameters{}).affinity.dense();
    EXPECT_EQ(m, m.transpose());
    EXPECT_TRUE((m.diagonal().array() == 1.0).all());
    EXPECT_GE(m.minCoeff(), 0.0);
    EXPECT_LE(m.maxCoeff(), 1.0);
  }
}

TEST(BuildAffinity, InvariantUnderRigidMotionOfOneSide) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 30; ++trial) {
    const auto a = gen::separated_points(rng, 7, 4.0, 0.2);
    const auto b = gen::separated_points(rng, 7, 4.0, 0.2);
    const RigidTransform t{gen::random_rotation(rng), gen::random_vec(rng, -50, 50)};
    std::vector<Vec3> moved;
    for (const auto& p : b) moved.push_back(t.apply(p));
    const Eigen::MatrixXd m0 = build_affinity(a, b, Hyperparameters{}).affinity.dense();
    const Eigen::MatrixXd m1 = build_affinity(a, moved, Hyperparameters{}).affinity.dense();
    EXPECT_LT((m0 - m1).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(BuildAffinity, SizeLimit) {
  const std::vector<Vec3> a(101, Vec3::Zero());
  const std::vector<Vec3> b(100, Vec3::Zero());
  EXPECT_THROW(build_affinity(a, b, Hyperparameters{}), SizeLimitError);
  Hyperparameters p;
  p.candidate_cap = 20000;
  EXPECT_NO_THROW(build_affinity(a, b, p));
  EXPECT_THROW(build_affinity({}, b, Hyperparameters{}), std::invalid_argument);
}

TEST(DensestClique, CompleteGraph) {
  const auto aff = AffinityMatrix::from_dense(Eigen::MatrixXd::Ones(4, 4));
  const auto s = densest_clique_indices(aff);
  EXPECT_EQ(s, (std::vector<int>{0, 1, 2, 3}));
  EXPECT_DOUBLE_EQ(clique_density(aff, s), 4.0);
}

TEST(DensestClique, PrefersLargerOfTwoGroups) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(5, 5);
  for (int i : {0, 2, 4})
    for (int j : {0, 2, 4}) a(i, j) = 1;
  a(1, 3) = a(3, 1) = 1;
  const auto aff = AffinityMatrix::from_dense(a);
  EXPECT_EQ(densest_clique_indices(aff), (std::vector<int>{0, 2, 4}));
  EXPECT_EQ(brute_force(a), (std::vector<int>{0, 2, 4}));
}

TEST(DensestClique, RecoversTrueAssociationsAmongOutliers) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = gen::separated_points(rng, 12, 6.0, 0.5);
    const RigidTransform t{gen::random_rotation(rng), gen::random_vec(rng, -20, 20)};
    std::vector<Vec3> b;
    for (int k = 0; k < 8; ++k) b.push_back(t.apply(a[k]));
    for (int k = 0; k < 4; ++k) b.push_back(gen::random_vec(rng, -20, 20));
    // 8 true associations k -> k plus 4 outliers 8+k -> 8+(k+1)%4.
    std::vector<Association> assoc;
    for (int k = 0; k < 8; ++k) assoc.push_back({k, k});
    for (int k = 0; k < 4; ++k) assoc.push_back({8 + k, 8 + (k + 1) % 4});
    const Hyperparameters p;
    Eigen::MatrixXd m = Eigen::MatrixXd::Identity(12, 12);
    for (int x = 0; x < 12; ++x)
      for (int y = 0; y < 12; ++y) {
        if (x == y) continue;
        const auto &u = assoc[x], &v = assoc[y];
        if (u.index_a == v.index_a || u.index_b == v.index_b) continue;
        const double da = (a[u.index_a] - a[v.index_a]).norm();
        const double db = (b[u.index_b] - b[v.index_b]).norm();
        if (da < p.gamma || db < p.gamma) continue;
        m(x, y) = consistency_score(da - db, p.sigma, p.epsilon);
      }
    const auto aff = AffinityMatrix::from_dense(m);
    std::vector<Association> expected(assoc.begin(), assoc.begin() + 8);
    EXPECT_EQ(densest_clique_exact(aff, assoc), expected);
    EXPECT_EQ(densest_clique(aff, assoc), expected);
  }
}

TEST(DensestCliqueExact, EmptyGraphPicksFirst) {
  const auto aff = AffinityMatrix::from_dense(Eigen::MatrixXd::Identity(5, 5));
  EXPECT_EQ(densest_clique_exact_indices(aff), std::vector<int>{0});
  EXPECT_DOUBLE_EQ(clique_density(aff, {0}), 1.0);
}

TEST(DensestCliqueExact, TriangleWithPendants) {
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(5, 5);
  for (int i : {1, 2, 3})
    for (int j : {1, 2, 3}) a(i, j) = 1;
  a(0, 1) = a(1, 0) = 0.6;  // pendant on the triangle
  a(3, 4) = a(4, 3) = 0.6;  // pendant on the triangle
  const auto aff = AffinityMatrix::from_dense(a);
  EXPECT_EQ(densest_clique_exact_indices(aff), (std::vector<int>{1, 2, 3}));
  EXPECT_EQ(densest_clique_indices(aff), (std::vector<int>{1, 2, 3}));
}

TEST(DensestCliqueExact, TooLarge) {
  const auto aff = AffinityMatrix::from_dense(Eigen::MatrixXd::Identity(21, 21));
  EXPECT_THROW(densest_clique_exact_indices(aff), TooLargeError);
  EXPECT_NO_THROW(densest_clique_exact_indices(AffinityMatrix::from_dense(Eigen::MatrixXd::Identity(20, 20))));
}

TEST(DensestCliqueExact, AgreesWithBruteForce) {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 300; ++trial) {
    const int n = std::uniform_int_distribution<int>(1, 12)(rng);
    const Eigen::MatrixXd a = trial % 2 ? random_graph(rng, n) : geometric_instance(rng);
    const auto aff = AffinityMatrix::from_dense(a);
    EXPECT_EQ(densest_clique_exact_indices(aff), brute_force(a)) << "trial " << trial;
  }
}

TEST(DensestClique, CloseToExactOnRandomInstances) {
  std::mt19937_64 rng(15);
  int same_cardinality = 0;
  const int trials = 500;
  for (int trial = 0; trial < trials; ++trial) {
    const int n = std::uniform_int_distribution<int>(1, 12)(rng);
    const Eigen::MatrixXd a = trial % 2 ? random_graph(rng, n) : geometric_instance(rng);
    const auto aff = AffinityMatrix::from_dense(a);
    const auto approx = densest_clique_indices(aff);
    const auto exact = brute_force(a);
    ASSERT_TRUE(is_consistent_set(aff, approx));
    EXPECT_GE(dense_density(a, approx), 0.95 * dense_density(a, exact)) << "trial " << trial;
    same_cardinality += approx.size() == exact.size();
  }
  EXPECT_GE(same_cardinality, trials * 9 / 10);
}

TEST(DensestClique, AlwaysFeasibleAndAtLeastOne) {
  std::mt19937_64 rng(16);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = std::uniform_int_distribution<int>(1, 120)(rng);
    const auto aff = AffinityMatrix::from_dense(random_graph(rng, n));
    const auto s = densest_clique_indices(aff);
    ASSERT_FALSE(s.empty());
    EXPECT_TRUE(is_consistent_set(aff, s));
    EXPECT_GE(clique_density(aff, s), 1.0);
  }
  EXPECT_TRUE(densest_clique_indices(AffinityMatrix::from_dense(Eigen::MatrixXd(0, 0))).empty());
}

TEST(DensestClique, SymmetricInSubmapOrder) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = gen::separated_points(rng, 10, 5.0, 0.3);
    const RigidTransform t{gen::random_rotation(rng), gen::random_vec(rng, -10, 10)};
    std::vector<Vec3> b;
    for (int k = 0; k < 7; ++k) b.push_back(t.apply(a[k]));
    for (const auto& p : gen::separated_points(rng, 3, 5.0, 0.3)) b.push_back(t.apply(p + Vec3(6, 0, 0)));
    const auto ab = build_affinity(a, b, Hyperparameters{});
    const auto ba = build_affinity(b, a, Hyperparameters{});
    const auto s_ab = densest_clique(ab.affinity, ab.associations);
    const auto s_ba = densest_clique(ba.affinity, ba.associations);
    ASSERT_EQ(s_ab.size(), s_ba.size());
    std::set<std::pair<int, int>> x, y;
    for (const auto& s : s_ab) x.insert({s.index_a, s.index_b});
    for (const auto& s : s_ba) y.insert({s.index_b, s.index_a});
    EXPECT_EQ(x, y);
    EXPECT_GE(s_ab.size(), 7u);
  }
}

TEST(DensestClique, InvariantUnderRigidMotion) {
  std::mt19937_64 rng(18);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = gen::separated_points(rng, 9, 5.0, 0.3);
    auto b = a;
    std::shuffle(b.begin(), b.end(), rng);
    b.resize(6);
    const RigidTransform t{gen::random_rotation(rng), gen::random_vec(rng, -100, 100)};
    std::vector<Vec3> moved;
    for (const auto& p : b) moved.push_back(t.apply(p));
    const auto p0 = build_affinity(a, b, Hyperparameters{});
    const auto p1 = build_affinity(a, moved, Hyperparameters{});
    EXPECT_EQ(densest_clique(p0.affinity, p0.associations), densest_clique(p1.affinity, p1.associations));
  }
}
