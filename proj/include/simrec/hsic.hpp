#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "simrec/error.hpp"
#include "simrec/matrix.hpp"
#include "simrec/parallel.hpp"

namespace simrec {

// RBF bandwidth selection: a fixed sigma, or the median of pairwise
// Euclidean distances (lower median, floored to keep sigma positive when all
// points coincide).
struct KernelConfig {
  enum class Mode { Median, Fixed };
  Mode mode = Mode::Median;
  double sigma = 1.0;
  double median_floor = 1e-8;

  static KernelConfig fixed(double sigma) {
    if (!(sigma > 0.0)) throw Error("KernelConfig: sigma must be positive");
    return {Mode::Fixed, sigma, 1e-8};
  }
  static KernelConfig median(double floor = 1e-8) {
    if (!(floor > 0.0)) throw Error("KernelConfig: floor must be positive");
    return {Mode::Median, 1.0, floor};
  }
};

// k(u, v) = exp(-||u - v||^2 / sigma^2)
inline double rbf_kernel(std::span<const double> u, std::span<const double> v,
                         double sigma) {
  if (u.size() != v.size()) throw Error("rbf_kernel: length mismatch");
  if (!(sigma > 0.0)) throw Error("rbf_kernel: sigma must be positive");
  double d2 = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double d = u[i] - v[i];
    d2 += d * d;
  }
  return std::exp(-d2 / (sigma * sigma));
}

// Gram matrix of the m row vectors of X: symmetric, unit diagonal.
inline Matrix gram(const Matrix& x, double sigma) {
  const std::size_t m = x.rows();
  Matrix k(m, m);
  for (std::size_t i = 0; i < m; ++i) {
    k(i, i) = 1.0;
    for (std::size_t j = i + 1; j < m; ++j) {
      const double v = rbf_kernel(x.row(i), x.row(j), sigma);
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

// Lower median of the m(m-1)/2 pairwise Euclidean distances of X's rows,
// bounded below by `floor`.
inline double median_bandwidth(const Matrix& x, double floor) {
  const std::size_t m = x.rows();
  if (m < 2) throw Error("median_bandwidth: need at least 2 points");
  std::vector<double> d;
  d.reserve(m * (m - 1) / 2);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) {
      double d2 = 0.0;
      for (std::size_t c = 0; c < x.cols(); ++c) {
        const double t = x(i, c) - x(j, c);
        d2 += t * t;
      }
      d.push_back(std::sqrt(d2));
    }
  const std::size_t mid = (d.size() - 1) / 2;
  std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(mid), d.end());
  return std::max(d[mid], floor);
}

inline double bandwidth(const Matrix& x, const KernelConfig& cfg) {
  return cfg.mode == KernelConfig::Mode::Fixed ? cfg.sigma
                                               : median_bandwidth(x, cfg.median_floor);
}

// (m-1)^-2 tr(K P L P) with P = I - (1/m) 1 1^T, evaluated in O(m^2) via
// tr(K P L P) = sum_ij K_ij L_ij - (2/m) sum_j rK_j rL_j + (sum K)(sum L)/m^2
// where rK_j are row sums.
inline double hsic_from_grams(const Matrix& k, const Matrix& l) {
  const std::size_t m = k.rows();
  if (m < 2) throw Error("hsic: need at least 2 samples");
  if (k.cols() != m || l.rows() != m || l.cols() != m)
    throw Error("hsic: gram matrices must be square and same size");
  double s1 = 0.0, s2 = 0.0, sk = 0.0, sl = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    double rk = 0.0, rl = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double kij = k(i, j), lij = l(i, j);
      s1 += kij * lij;
      rk += kij;
      rl += lij;
    }
    s2 += rk * rl;
    sk += rk;
    sl += rl;
  }
  const double md = static_cast<double>(m);
  const double tr = s1 - 2.0 * s2 / md + sk * sl / (md * md);
  return tr / ((md - 1.0) * (md - 1.0));
}

// Empirical HSIC of two aligned samples (rows of U and V).
inline double empirical_hsic(const Matrix& u, const Matrix& v, const KernelConfig& cfg) {
  if (u.rows() != v.rows()) throw Error("empirical_hsic: sample counts differ");
  if (u.rows() < 2) throw Error("empirical_hsic: need at least 2 samples");
  return hsic_from_grams(gram(u, bandwidth(u, cfg)), gram(v, bandwidth(v, cfg)));
}

namespace detail {

// Rows i -> w_i * interests[i][row j, :].
inline Matrix weighted_interest_rows(const std::vector<Matrix>& interests,
                                     const std::vector<double>& w, std::size_t j) {
  const std::size_t m = interests.size();
  const std::size_t d = interests[0].cols();
  Matrix out(m, d);
  for (std::size_t i = 0; i < m; ++i) {
    auto src = interests[i].row(j);
    auto dst = out.row(i);
    for (std::size_t c = 0; c < d; ++c) dst[c] = w[i] * src[c];
  }
  return out;
}

inline void check_interest_batch(const std::vector<Matrix>& interests,
                                 const std::vector<double>& w) {
  if (interests.size() != w.size())
    throw Error("interest batch: weight count mismatch");
  if (interests.size() < 2) throw Error("interest batch: need at least 2 samples");
  for (const auto& m : interests)
    if (!m.same_shape(interests[0]))
      throw Error("interest batch: inconsistent interest shapes");
}

}  // namespace detail

// Per-interest bandwidths evaluated on the re-weighted vectors.
inline std::vector<double> interest_bandwidths(const std::vector<Matrix>& interests,
                                               const std::vector<double>& w,
                                               const KernelConfig& cfg) {
  detail::check_interest_batch(interests, w);
  const std::size_t c = interests[0].rows();
  std::vector<double> sigmas(c);
  for (std::size_t j = 0; j < c; ++j)
    sigmas[j] = bandwidth(detail::weighted_interest_rows(interests, w, j), cfg);
  return sigmas;
}

// sum_{j<k} lambda * HSIC({w_i M_i[j,:]}, {w_i M_i[k,:]}) with one fixed
// bandwidth per interest.
inline double corr_loss_with_sigmas(const std::vector<Matrix>& interests,
                                    const std::vector<double>& w, double lambda,
                                    const std::vector<double>& sigmas) {
  detail::check_interest_batch(interests, w);
  const std::size_t c = interests[0].rows();
  if (lambda == 0.0 || c < 2) return 0.0;
  std::vector<Matrix> grams(c);
  for (std::size_t j = 0; j < c; ++j)
    grams[j] = gram(detail::weighted_interest_rows(interests, w, j), sigmas[j]);
  double total = 0.0;
  for (std::size_t j = 0; j < c; ++j)
    for (std::size_t k = j + 1; k < c; ++k)
      total += hsic_from_grams(grams[j], grams[k]);
  return lambda * total;
}

// Weighted correlation estimation loss over a batch of per-sample interest
// matrices (each c x d). Bandwidths follow cfg, recomputed on the
// re-weighted vectors.
inline double weighted_corr_loss(const std::vector<Matrix>& interests,
                                 const std::vector<double>& w, double lambda,
                                 const KernelConfig& cfg) {
  detail::check_interest_batch(interests, w);
  if (lambda == 0.0 || interests[0].rows() < 2) return 0.0;
  return corr_loss_with_sigmas(interests, w, lambda,
                               interest_bandwidths(interests, w, cfg));
}

// Unweighted pairwise HSIC sum (the diagnostic curve quantity).
inline double interest_hsic_sum(const std::vector<Matrix>& interests,
                                const KernelConfig& cfg) {
  return weighted_corr_loss(interests, std::vector<double>(interests.size(), 1.0),
                            1.0, cfg);
}

// Exact gradient of weighted_corr_loss w.r.t. the sample weights, with
// bandwidths held constant at their current values.
//
// For one pair (j, k): HSIC = (m-1)^-2 tr(K P L P). Only row/column i of K
// depends on w_i, and dK_ib/dw_i = K_ib * (-2 (u_i - u_b) . x_i / sigma_j^2)
// with u = w x. Hence
//   dHSIC/dw_i = (m-1)^-2 * 2 * sum_b [ (PLP)_ib dK_ib/dw_i
//                                     + (PKP)_ib dL_ib/dw_i ].
inline std::vector<double> corr_loss_grad_weights(const std::vector<Matrix>& interests,
                                                  const std::vector<double>& w,
                                                  double lambda, const KernelConfig& cfg,
                                                  int threads = 1) {
  detail::check_interest_batch(interests, w);
  const std::size_t m = interests.size();
  const std::size_t c = interests[0].rows();
  const std::size_t d = interests[0].cols();
  std::vector<double> grad(m, 0.0);
  if (lambda == 0.0 || c < 2) return grad;

  const std::vector<double> sigmas = interest_bandwidths(interests, w, cfg);

  // Raw (unweighted) and re-weighted rows per interest, plus grams and
  // doubly-centered grams.
  std::vector<Matrix> raw(c), wtd(c), grams(c), centered(c);
  for (std::size_t j = 0; j < c; ++j) {
    raw[j] = detail::weighted_interest_rows(interests, std::vector<double>(m, 1.0), j);
    wtd[j] = detail::weighted_interest_rows(interests, w, j);
    grams[j] = gram(wtd[j], sigmas[j]);
    // (P G P)_ib = G_ib - rowmean_i - rowmean_b + grandmean
    const Matrix& g = grams[j];
    std::vector<double> rowmean(m, 0.0);
    double grand = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t b = 0; b < m; ++b) s += g(i, b);
      rowmean[i] = s / static_cast<double>(m);
      grand += s;
    }
    grand /= static_cast<double>(m) * static_cast<double>(m);
    centered[j] = Matrix(m, m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t b = 0; b < m; ++b)
        centered[j](i, b) = g(i, b) - rowmean[i] - rowmean[b] + grand;
  }

  const double norm = 1.0 / ((static_cast<double>(m) - 1.0) * (static_cast<double>(m) - 1.0));
  for (std::size_t j = 0; j < c; ++j) {
    for (std::size_t k = j + 1; k < c; ++k) {
      // contribution of dK/dw (interest j) against PLP, and of dL/dw
      // (interest k) against PKP
      for (int side = 0; side < 2; ++side) {
        const std::size_t a = side == 0 ? j : k;
        const std::size_t o = side == 0 ? k : j;
        const Matrix& ka = grams[a];
        const Matrix& co = centered[o];
        const Matrix& x = raw[a];
        const Matrix& u = wtd[a];
        const double inv_s2 = 1.0 / (sigmas[a] * sigmas[a]);
        std::vector<double> part(m, 0.0);
        parallel_for(m, threads, [&](std::size_t i) {
          double acc = 0.0;
          for (std::size_t b = 0; b < m; ++b) {
            if (b == i) continue;
            double du = 0.0;  // (u_i - u_b) . x_i
            auto ui = u.row(i), ub = u.row(b), xi = x.row(i);
            for (std::size_t cc = 0; cc < d; ++cc) du += (ui[cc] - ub[cc]) * xi[cc];
            const double dk = ka(i, b) * (-2.0 * du * inv_s2);
            acc += co(i, b) * dk;
          }
          part[i] = 2.0 * norm * acc;
        });
        for (std::size_t i = 0; i < m; ++i) grad[i] += lambda * part[i];
      }
    }
  }
  return grad;
}

// `steps` projected gradient-descent updates w <- clip(w - lr * grad, lo, hi),
// recomputing the gradient before each step.
inline std::vector<double> update_weights(
    std::vector<double> w,
    const std::function<std::vector<double>(const std::vector<double>&)>& grad_fn,
    double lr, std::size_t steps, double lo, double hi) {
  if (lo > hi) throw Error("update_weights: invalid bounds");
  if (steps < 1) throw Error("update_weights: need at least one step");
  for (std::size_t s = 0; s < steps; ++s) {
    const std::vector<double> g = grad_fn(w);
    if (g.size() != w.size()) throw Error("update_weights: gradient size mismatch");
    for (std::size_t i = 0; i < w.size(); ++i)
      w[i] = std::clamp(w[i] - lr * g[i], lo, hi);
  }
  return w;
}

}  // namespace simrec
