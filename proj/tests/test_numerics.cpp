#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "simrec/gradcheck.hpp"
#include "simrec/matrix.hpp"
#include "simrec/optim.hpp"
#include "simrec/rng.hpp"

using namespace simrec;

namespace {
Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng, double lo, double hi) {
  Matrix m(r, c);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}
}  // namespace

TEST_CASE("matrix products match explicit index sums", "[matrix]") {
  Rng rng(7, "test");
  const Matrix a = random_matrix(5, 3, rng, -2, 2);
  const Matrix b = random_matrix(3, 4, rng, -2, 2);
  const Matrix c = matmul(a, b);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      double s = 0;
      for (std::size_t k = 0; k < 3; ++k) s += a(i, k) * b(k, j);
      REQUIRE(c(i, j) == Catch::Approx(s).margin(1e-14));
    }
  const Matrix bt = transpose(b);
  const Matrix c2 = matmul_nt(a, bt);
  const Matrix at = transpose(a);
  const Matrix c3 = matmul_tn(at, b);
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t j = 0; j < 4; ++j) {
      REQUIRE(c2(i, j) == Catch::Approx(c(i, j)).margin(1e-14));
      REQUIRE(c3(i, j) == Catch::Approx(c(i, j)).margin(1e-14));
    }
  REQUIRE_THROWS_AS(matmul(a, a), Error);
}

TEST_CASE("softmax_rows hand cases", "[matrix]") {
  const Matrix s1 = softmax_rows(Matrix::from_rows({{0.0, 0.0}}));
  REQUIRE(s1(0, 0) == Catch::Approx(0.5).margin(1e-15));
  REQUIRE(s1(0, 1) == Catch::Approx(0.5).margin(1e-15));

  const Matrix s2 = softmax_rows(Matrix::from_rows({{std::log(2.0), 0.0}}));
  REQUIRE(s2(0, 0) == Catch::Approx(2.0 / 3.0).margin(1e-15));
  REQUIRE(s2(0, 1) == Catch::Approx(1.0 / 3.0).margin(1e-15));
}

TEST_CASE("softmax_rows shift invariance and normalization", "[matrix]") {
  Rng rng(3, "test");
  for (int trial = 0; trial < 100; ++trial) {
    Matrix m = random_matrix(4, 7, rng, -50, 50);
    const Matrix s = softmax_rows(m);
    for (std::size_t i = 0; i < s.rows(); ++i) {
      double sum = 0;
      for (std::size_t j = 0; j < s.cols(); ++j) {
        REQUIRE(s(i, j) >= 0.0);
        sum += s(i, j);
      }
      REQUIRE(std::abs(sum - 1.0) <= 1e-12);
    }
    const double shift = rng.uniform(-30, 30);
    Matrix shifted = m;
    for (std::size_t i = 0; i < shifted.size(); ++i) shifted.data()[i] += shift;
    const Matrix s2 = softmax_rows(shifted);
    for (std::size_t i = 0; i < s.size(); ++i)
      REQUIRE(s2.data()[i] == Catch::Approx(s.data()[i]).margin(1e-12));
  }
}

TEST_CASE("pcg32 determinism and stream separation", "[rng]") {
  Rng a(123, "init");
  Rng b(123, "init");
  for (int i = 0; i < 100; ++i) REQUIRE(a.next_u32() == b.next_u32());

  Rng c(123, "negatives");
  Rng d(123, "init");
  int diff = 0;
  for (int i = 0; i < 16; ++i) diff += c.next_u32() != d.next_u32();
  REQUIRE(diff > 0);

  Rng e(55, "x");
  e.next_u32();
  Rng f = Rng::from_state(e.state(), e.inc());
  for (int i = 0; i < 50; ++i) REQUIRE(e.next_u32() == f.next_u32());
}

TEST_CASE("uniform and uniform_int ranges", "[rng]") {
  Rng rng(9, "test");
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
  }
  std::vector<std::size_t> buckets(8, 0);
  for (int i = 0; i < 80000; ++i) buckets[rng.uniform_int(8)] += 1;
  for (std::size_t b : buckets) {
    REQUIRE(b > 8000);
    REQUIRE(b < 12000);
  }
}

TEST_CASE("sample_without_replacement properties", "[rng]") {
  Rng rng(4, "test");
  for (int trial = 0; trial < 200; ++trial) {
    const auto sample = rng.sample_without_replacement(50, 10, 17);
    REQUIRE(sample.size() == 10);
    std::set<std::uint32_t> seen(sample.begin(), sample.end());
    REQUIRE(seen.size() == 10);
    REQUIRE(seen.count(17) == 0);
    for (auto v : sample) REQUIRE(v < 50);
  }
  // exhaustive case: everything except the excluded id
  const auto all = rng.sample_without_replacement(20, 19, 3);
  std::set<std::uint32_t> seen(all.begin(), all.end());
  REQUIRE(seen.size() == 19);
  REQUIRE(seen.count(3) == 0);
  REQUIRE_THROWS_AS(rng.sample_without_replacement(20, 20, 3), Error);
}

TEST_CASE("glorot_uniform bounds and determinism", "[optim]") {
  Rng r1(11, "init");
  const Matrix small = glorot_uniform(2, 4, r1);
  for (std::size_t i = 0; i < small.size(); ++i) {
    REQUIRE(small.data()[i] >= -1.0);  // b = sqrt(6/6) = 1
    REQUIRE(small.data()[i] <= 1.0);
  }

  Rng r2(11, "init");
  const double b64 = std::sqrt(6.0 / 128.0);  // 0.21650635...
  const Matrix m64 = glorot_uniform(64, 64, r2);
  for (std::size_t i = 0; i < m64.size(); ++i)
    REQUIRE(std::abs(m64.data()[i]) <= b64);

  Rng r3(11, "init");
  Rng r4(11, "init");
  REQUIRE(bitwise_equal(glorot_uniform(8, 8, r3), glorot_uniform(8, 8, r4)));

  Rng r5(11, "init");
  REQUIRE_THROWS_AS(glorot_uniform(0, 4, r5), Error);
}

TEST_CASE("glorot_uniform moments over 1e6 draws", "[optim]") {
  Rng rng(2024, "init");
  const std::size_t n = 1000;
  const Matrix m = glorot_uniform(n, n, rng);
  const double b = std::sqrt(6.0 / (2.0 * n));
  double mean = 0;
  for (std::size_t i = 0; i < m.size(); ++i) mean += m.data()[i];
  mean /= static_cast<double>(m.size());
  double var = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double d = m.data()[i] - mean;
    var += d * d;
  }
  var /= static_cast<double>(m.size());
  REQUIRE(std::abs(mean) <= 0.05 * b);           // mean -> 0
  REQUIRE(std::abs(var - b * b / 3.0) <= 0.05 * b * b / 3.0);
}

TEST_CASE("adam first step closed form", "[optim]") {
  Matrix p(1, 1, 0.0);
  Matrix g(1, 1, 1.0);
  AdamState st(1, 1);
  adam_step(p, g, st, 0.001);
  // mhat = g, vhat = g^2 on the first step: delta = -lr * g / (|g| + eps)
  REQUIRE(p(0, 0) == Catch::Approx(-0.001).margin(1e-10));
  REQUIRE(st.step == 1);
}

TEST_CASE("adam zero gradient and sign properties", "[optim]") {
  Matrix p(2, 2, 0.5);
  const Matrix before = p;
  Matrix g(2, 2, 0.0);
  AdamState st(2, 2);
  adam_step(p, g, st, 0.01);
  REQUIRE(bitwise_equal(p, before));

  Rng rng(5, "test");
  for (int trial = 0; trial < 20; ++trial) {
    Matrix p1(1, 1, rng.uniform(-1, 1));
    const double gv = rng.uniform(-2, 2);
    if (gv == 0) continue;
    Matrix g1(1, 1, gv);
    AdamState s1(1, 1);
    const double before_v = p1(0, 0);
    adam_step(p1, g1, s1, 0.001);
    const double delta = p1(0, 0) - before_v;
    REQUIRE(delta * gv < 0.0);  // sign(delta) = -sign(g)
  }
}

TEST_CASE("adam determinism and shape check", "[optim]") {
  Rng rng(6, "test");
  Matrix p1 = random_matrix(3, 4, rng, -1, 1);
  Matrix p2 = p1;
  const Matrix g = random_matrix(3, 4, rng, -1, 1);
  AdamState s1(3, 4), s2(3, 4);
  for (int i = 0; i < 5; ++i) {
    adam_step(p1, g, s1, 0.01);
    adam_step(p2, g, s2, 0.01);
  }
  REQUIRE(bitwise_equal(p1, p2));
  REQUIRE(bitwise_equal(s1.m, s2.m));
  REQUIRE(bitwise_equal(s1.v, s2.v));

  Matrix bad(4, 3);
  REQUIRE_THROWS_AS(adam_step(p1, bad, s1, 0.01), Error);
}

TEST_CASE("finite_diff_grad oracle cases", "[optim]") {
  // f(x) = x^2 at 3
  Matrix x(1, 1, 3.0);
  auto square = [](const Matrix& m) { return m(0, 0) * m(0, 0); };
  const Matrix g = finite_diff_grad(square, x, 1e-5);
  REQUIRE(std::abs(g(0, 0) - 6.0) <= 1e-8);

  // constant f -> zero gradient
  auto constant = [](const Matrix&) { return 42.0; };
  const Matrix gz = finite_diff_grad(constant, x, 1e-5);
  REQUIRE(gz(0, 0) == 0.0);

  // f(x) = exp(x) at 0
  Matrix x0(1, 1, 0.0);
  auto expf = [](const Matrix& m) { return std::exp(m(0, 0)); };
  const Matrix ge = finite_diff_grad(expf, x0, 1e-5);
  REQUIRE(std::abs(ge(0, 0) - 1.0) <= 1e-9);

  // quadratics are differentiated exactly up to rounding
  Rng rng(8, "test");
  Matrix xa = random_matrix(2, 3, rng, -2, 2);
  auto quad = [](const Matrix& m) {
    double s = 0;
    for (std::size_t i = 0; i < m.size(); ++i) s += m.data()[i] * m.data()[i];
    return s;
  };
  const Matrix gq = finite_diff_grad(quad, xa, 1e-5);
  for (std::size_t i = 0; i < xa.size(); ++i)
    REQUIRE(std::abs(gq.data()[i] - 2.0 * xa.data()[i]) <= 1e-9);

  REQUIRE_THROWS_AS(finite_diff_grad(square, x, 0.0), Error);
}
