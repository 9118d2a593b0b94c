#pragma once

#include <cmath>
#include <cstdint>

#include "simrec/error.hpp"
#include "simrec/matrix.hpp"
#include "simrec/rng.hpp"

namespace simrec {

// Entries i.i.d. uniform on [-b, b], b = sqrt(6 / (rows + cols)).
inline Matrix glorot_uniform(std::size_t rows, std::size_t cols, Rng& rng) {
  if (rows == 0 || cols == 0) throw Error("glorot_uniform: zero dimension");
  const double b = std::sqrt(6.0 / static_cast<double>(rows + cols));
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-b, b);
  return m;
}

struct AdamState {
  Matrix m, v;
  std::int64_t step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  AdamState() = default;
  AdamState(std::size_t rows, std::size_t cols) : m(rows, cols), v(rows, cols) {}
};

// One Adam update with bias correction, in place.
inline void adam_step(Matrix& param, const Matrix& grad, AdamState& state, double lr) {
  if (!param.same_shape(grad) || !param.same_shape(state.m))
    throw Error("adam_step: shape mismatch");
  state.step += 1;
  const double b1 = state.beta1, b2 = state.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  double* p = param.data();
  const double* g = grad.data();
  double* m = state.m.data();
  double* v = state.v.data();
  for (std::size_t i = 0; i < param.size(); ++i) {
    m[i] = b1 * m[i] + (1.0 - b1) * g[i];
    v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
    const double mhat = m[i] / c1;
    const double vhat = v[i] / c2;
    p[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
  }
}

}  // namespace simrec
