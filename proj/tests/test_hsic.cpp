#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "simrec/gradcheck.hpp"
#include "simrec/hsic.hpp"
#include "simrec/rng.hpp"

using namespace simrec;

namespace {

Matrix random_points(std::size_t m, std::size_t d, Rng& rng, double lo = -2,
                     double hi = 2) {
  Matrix x(m, d);
  for (std::size_t i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(lo, hi);
  return x;
}

// Eigenvalues of a small symmetric matrix by cyclic Jacobi rotations.
// Independent of the library's linear algebra; used as the PSD oracle.
std::vector<double> jacobi_eigenvalues(Matrix a) {
  const std::size_t n = a.rows();
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) off += a(i, j) * a(i, j);
    if (off < 1e-24) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a(p, q)) < 1e-18) continue;
        const double theta = (a(q, q) - a(p, p)) / (2 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1));
        const double c = 1 / std::sqrt(t * t + 1);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
      }
  }
  std::vector<double> ev(n);
  for (std::size_t i = 0; i < n; ++i) ev[i] = a(i, i);
  return ev;
}

// Brute-force expansion of tr(K P L P) / (m-1)^2 with explicit loops.
double hsic_expanded_oracle(const Matrix& k, const Matrix& l) {
  const std::size_t m = k.rows();
  const double md = static_cast<double>(m);
  double t1 = 0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) t1 += k(i, j) * l(i, j);
  double t2 = 0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t r = 0; r < m; ++r) t2 += k(i, j) * l(j, r);
  double sk = 0, sl = 0;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      sk += k(i, j);
      sl += l(i, j);
    }
  const double tr = t1 - 2.0 / md * t2 + sk * sl / (md * md);
  return tr / ((md - 1) * (md - 1));
}

}  // namespace

TEST_CASE("rbf kernel values", "[hsic]") {
  const std::vector<double> u = {1.0, 2.0, 3.0};
  REQUIRE(rbf_kernel(u, u, 0.7) == 1.0);

  // ||u - v||^2 = sigma^2 -> exp(-1)
  const std::vector<double> a = {0.0, 0.0};
  const std::vector<double> b = {2.0, 0.0};
  REQUIRE(rbf_kernel(a, b, 2.0) == Catch::Approx(std::exp(-1.0)).margin(1e-15));

  // monotonically increasing in sigma for fixed distinct points
  double prev = rbf_kernel(a, b, 0.5);
  for (double sigma : {1.0, 2.0, 4.0, 8.0, 64.0}) {
    const double v = rbf_kernel(a, b, sigma);
    REQUIRE(v > prev);
    prev = v;
  }
  REQUIRE(prev < 1.0);
  REQUIRE_THROWS_AS(rbf_kernel(a, b, 0.0), Error);
  REQUIRE_THROWS_AS(rbf_kernel(a, u, 1.0), Error);
}

TEST_CASE("gram matrix structure", "[hsic]") {
  Rng rng(1, "test");
  const Matrix one = random_points(1, 3, rng);
  const Matrix g1 = gram(one, 1.0);
  REQUIRE(g1.rows() == 1);
  REQUIRE(g1(0, 0) == 1.0);

  Matrix dup = random_points(3, 2, rng);
  for (std::size_t c = 0; c < 2; ++c) dup(2, c) = dup(0, c);
  const Matrix gd = gram(dup, 1.3);
  REQUIRE(gd(0, 2) == Catch::Approx(1.0).margin(1e-15));

  const Matrix x = random_points(5, 4, rng);
  const Matrix g = gram(x, 2.0);
  for (std::size_t i = 0; i < 5; ++i) {
    REQUIRE(g(i, i) == 1.0);
    for (std::size_t j = 0; j < 5; ++j) {
      REQUIRE(std::abs(g(i, j) - g(j, i)) <= 1e-15);
      REQUIRE(g(i, j) > 0.0);
      REQUIRE(g(i, j) <= 1.0);
    }
  }
  const auto ev = jacobi_eigenvalues(g);
  for (double e : ev) REQUIRE(e >= -1e-10);  // PSD
}

TEST_CASE("median bandwidth", "[hsic]") {
  REQUIRE(median_bandwidth(Matrix::from_rows({{0.0}, {3.0}}), 1e-8) == 3.0);
  REQUIRE(median_bandwidth(Matrix::from_rows({{1.5}, {1.5}, {1.5}}), 1e-8) == 1e-8);
  // {0, 1, 2}: pairwise distances {1, 2, 1}, median 1
  REQUIRE(median_bandwidth(Matrix::from_rows({{0.0}, {1.0}, {2.0}}), 1e-8) == 1.0);
}

TEST_CASE("hsic m=2 closed form", "[hsic]") {
  Rng rng(2, "test");
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix u = random_points(2, 3, rng);
    const Matrix v = random_points(2, 3, rng);
    const double su = rng.uniform(0.5, 3.0), sv = rng.uniform(0.5, 3.0);
    const double a = rbf_kernel(u.row(0), u.row(1), su);
    const double b = rbf_kernel(v.row(0), v.row(1), sv);
    const double h = hsic_from_grams(gram(u, su), gram(v, sv));
    REQUIRE(std::abs(h - (1 - a) * (1 - b)) <= 1e-12);
  }
}

TEST_CASE("hsic of a constant sample is zero", "[hsic]") {
  Rng rng(3, "test");
  const Matrix u = random_points(6, 2, rng);
  Matrix v(6, 2);
  for (std::size_t i = 0; i < 6; ++i) {
    v(i, 0) = 0.4;
    v(i, 1) = -1.1;
  }
  REQUIRE(std::abs(empirical_hsic(u, v, KernelConfig::fixed(1.0))) <= 1e-12);
}

TEST_CASE("hsic equals the expanded-sum oracle", "[hsic]") {
  Rng rng(4, "test");
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t m = 2 + static_cast<std::size_t>(rng.uniform_int(15));
    const Matrix u = random_points(m, 3, rng);
    const Matrix v = random_points(m, 2, rng);
    const Matrix ku = gram(u, 1.4);
    const Matrix kv = gram(v, 0.9);
    const double fast = hsic_from_grams(ku, kv);
    const double slow = hsic_expanded_oracle(ku, kv);
    REQUIRE(std::abs(fast - slow) <= 1e-10);
  }
}

TEST_CASE("hsic symmetry, permutation invariance, self-positivity", "[hsic]") {
  Rng rng(5, "test");
  const KernelConfig cfg = KernelConfig::median();
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t m = 5 + static_cast<std::size_t>(rng.uniform_int(8));
    const Matrix u = random_points(m, 3, rng);
    const Matrix v = random_points(m, 3, rng);
    REQUIRE(std::abs(empirical_hsic(u, v, cfg) - empirical_hsic(v, u, cfg)) <= 1e-12);

    std::vector<std::size_t> perm(m);
    for (std::size_t i = 0; i < m; ++i) perm[i] = i;
    rng.shuffle(perm);
    Matrix up(m, 3), vp(m, 3);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t c = 0; c < 3; ++c) {
        up(i, c) = u(perm[i], c);
        vp(i, c) = v(perm[i], c);
      }
    REQUIRE(std::abs(empirical_hsic(up, vp, cfg) - empirical_hsic(u, v, cfg)) <= 1e-12);

    REQUIRE(empirical_hsic(u, u, cfg) > 0.0);
  }
  REQUIRE_THROWS_AS(empirical_hsic(random_points(1, 2, rng), random_points(1, 2, rng), cfg),
                    Error);
}

TEST_CASE("independence sanity via permutation null (scaled down)", "[hsic]") {
  const std::size_t m = 256;
  const int n_perms = 100;
  int dependent_extreme = 0;
  int independent_below = 0;
  const int trials = 5;
  const KernelConfig cfg = KernelConfig::median();
  for (int trial = 0; trial < trials; ++trial) {
    Rng rng(9000 + trial, "test");
    Matrix u(m, 1), v(m, 1);
    for (std::size_t i = 0; i < m; ++i) {
      u(i, 0) = rng.uniform(-1, 1);
      v(i, 0) = rng.uniform(-1, 1);
    }
    const Matrix ku = gram(u, bandwidth(u, cfg));
    const Matrix kv = gram(v, bandwidth(v, cfg));
    auto permuted_hsic = [&](const std::vector<std::size_t>& perm) {
      Matrix lp(m, m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) lp(i, j) = kv(perm[i], perm[j]);
      return hsic_from_grams(ku, lp);
    };
    std::vector<std::size_t> perm(m);
    for (std::size_t i = 0; i < m; ++i) perm[i] = i;

    std::vector<double> null_stats;
    for (int p = 0; p < n_perms; ++p) {
      rng.shuffle(perm);
      null_stats.push_back(permuted_hsic(perm));
    }
    std::sort(null_stats.begin(), null_stats.end());
    const double q95 = null_stats[static_cast<std::size_t>(0.95 * n_perms)];
    const double q99 = null_stats[static_cast<std::size_t>(0.99 * n_perms)];

    if (hsic_from_grams(ku, kv) < q95) independent_below += 1;
    if (hsic_from_grams(ku, ku) > q99) dependent_extreme += 1;
  }
  REQUIRE(independent_below >= trials - 1);
  REQUIRE(dependent_extreme == trials);
}

TEST_CASE("weighted_corr_loss trivial and compositional cases", "[hsic]") {
  Rng rng(6, "test");
  const std::size_t m = 6, d = 3;
  std::vector<Matrix> interests;
  for (std::size_t i = 0; i < m; ++i) interests.push_back(random_points(2, d, rng));
  const std::vector<double> ones(m, 1.0);
  const KernelConfig cfg = KernelConfig::median();

  REQUIRE(weighted_corr_loss(interests, ones, 0.0, cfg) == 0.0);

  std::vector<Matrix> single;
  for (std::size_t i = 0; i < m; ++i) single.push_back(random_points(1, d, rng));
  REQUIRE(weighted_corr_loss(single, ones, 1.0, cfg) == 0.0);

  // c = 2 with unit weights: exactly lambda * HSIC of the two interest stacks
  Matrix u(m, d), v(m, d);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t c = 0; c < d; ++c) {
      u(i, c) = interests[i](0, c);
      v(i, c) = interests[i](1, c);
    }
  const double direct = empirical_hsic(u, v, cfg);
  const double lam = 2.5;
  REQUIRE(weighted_corr_loss(interests, ones, lam, cfg) ==
          Catch::Approx(lam * direct).margin(1e-15));
  REQUIRE(interest_hsic_sum(interests, cfg) == Catch::Approx(direct).margin(1e-15));
}

TEST_CASE("corr_loss_grad_weights matches finite differences", "[hsic]") {
  Rng rng(7, "test");
  const std::size_t m = 4, c = 2, d = 3;
  std::vector<Matrix> interests;
  for (std::size_t i = 0; i < m; ++i) interests.push_back(random_points(c, d, rng));
  std::vector<double> w = {1.0, 0.7, 0.9, 0.4};
  const double lam = 1.5;

  SECTION("lambda = 0 gives the zero vector") {
    const auto g = corr_loss_grad_weights(interests, w, 0.0, KernelConfig::median());
    for (double v : g) REQUIRE(v == 0.0);
  }

  SECTION("fixed bandwidth: full finite-difference agreement") {
    const KernelConfig cfg = KernelConfig::fixed(1.3);
    const auto g = corr_loss_grad_weights(interests, w, lam, cfg);
    Matrix wm(1, m);
    for (std::size_t i = 0; i < m; ++i) wm(0, i) = w[i];
    auto loss = [&](const Matrix& weights) {
      std::vector<double> wv(weights.data(), weights.data() + m);
      return weighted_corr_loss(interests, wv, lam, cfg);
    };
    const Matrix fd = finite_diff_grad(loss, wm, 1e-5);
    for (std::size_t i = 0; i < m; ++i) {
      const double denom = std::max(std::abs(fd(0, i)), 1e-8);
      REQUIRE(std::abs(g[i] - fd(0, i)) / denom <= 1e-4);
    }
  }

  SECTION("median bandwidth: agreement with sigmas frozen at current weights") {
    const KernelConfig cfg = KernelConfig::median();
    const auto sigmas = interest_bandwidths(interests, w, cfg);
    const auto g = corr_loss_grad_weights(interests, w, lam, cfg);
    Matrix wm(1, m);
    for (std::size_t i = 0; i < m; ++i) wm(0, i) = w[i];
    auto loss = [&](const Matrix& weights) {
      std::vector<double> wv(weights.data(), weights.data() + m);
      return corr_loss_with_sigmas(interests, wv, lam, sigmas);
    };
    const Matrix fd = finite_diff_grad(loss, wm, 1e-5);
    for (std::size_t i = 0; i < m; ++i) {
      const double denom = std::max(std::abs(fd(0, i)), 1e-8);
      REQUIRE(std::abs(g[i] - fd(0, i)) / denom <= 1e-4);
    }
  }

  SECTION("duplicated samples get identical gradient entries") {
    interests[2] = interests[0];
    w[2] = w[0];
    const auto g = corr_loss_grad_weights(interests, w, lam, KernelConfig::fixed(1.1));
    REQUIRE(std::abs(g[0] - g[2]) <= 1e-12);
  }

  SECTION("threaded gradient is bit-identical to serial") {
    const KernelConfig cfg = KernelConfig::median();
    const auto g1 = corr_loss_grad_weights(interests, w, lam, cfg, 1);
    const auto g4 = corr_loss_grad_weights(interests, w, lam, cfg, 4);
    REQUIRE(g1 == g4);
  }
}

TEST_CASE("update_weights projection and steps", "[hsic]") {
  const std::vector<double> w = {1.0, 0.5};
  auto zero_grad = [](const std::vector<double>& cur) {
    return std::vector<double>(cur.size(), 0.0);
  };
  REQUIRE(update_weights(w, zero_grad, 0.1, 3, 0.0, 1.0) == w);

  auto big_grad = [](const std::vector<double>& cur) {
    return std::vector<double>(cur.size(), 100.0);
  };
  const auto clipped = update_weights({1.0}, big_grad, 0.1, 1, 0.0, 1.0);
  REQUIRE(clipped[0] == 0.0);

  auto small_grad = [](const std::vector<double>& cur) {
    return std::vector<double>(cur.size(), 0.25);
  };
  const auto one = update_weights({0.8}, small_grad, 0.1, 1, 0.0, 1.0);
  REQUIRE(one[0] == 0.8 - 0.1 * 0.25);

  REQUIRE_THROWS_AS(update_weights({1.0}, zero_grad, 0.1, 1, 1.0, 0.0), Error);
}
