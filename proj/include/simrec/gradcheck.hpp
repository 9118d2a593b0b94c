#pragma once

#include "simrec/error.hpp"
#include "simrec/matrix.hpp"

namespace simrec {

// Central-difference gradient of a scalar function of a matrix:
// (f(x + h e_i) - f(x - h e_i)) / 2h per entry. Verification oracle for the
// hand-derived gradients; O(2 * size) evaluations of f.
template <typename F>
Matrix finite_diff_grad(F&& f, Matrix x, double h) {
  if (!(h > 0.0)) throw Error("finite_diff_grad: h must be positive");
  Matrix g(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x.data()[i];
    x.data()[i] = orig + h;
    const double fp = f(static_cast<const Matrix&>(x));
    x.data()[i] = orig - h;
    const double fm = f(static_cast<const Matrix&>(x));
    x.data()[i] = orig;
    g.data()[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

}  // namespace simrec
