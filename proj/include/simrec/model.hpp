#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "simrec/error.hpp"
#include "simrec/hsic.hpp"
#include "simrec/matrix.hpp"
#include "simrec/optim.hpp"
#include "simrec/parallel.hpp"
#include "simrec/rng.hpp"

namespace simrec {

struct Hyperparams {
  std::size_t d = 64;        // item embedding size
  std::size_t d_hat = 0;     // attention hidden size; 0 means 4*d
  std::size_t c = 2;         // number of interests
  std::size_t T = 20;        // maximum context length
  std::size_t vocab = 0;     // item count, set from the dataset
  double lambda = 1.0;       // de-correlation importance
  std::size_t negatives = 10;
  double lr = 1e-3;
  double lr_omega = 10.0;    // sample-weight update learning rate
  std::size_t omega_steps = 1;
  std::size_t batch = 128;
  KernelConfig kernel{};

  std::size_t attention_dim() const { return d_hat == 0 ? 4 * d : d_hat; }

  void validate() const {
    if (d < 1 || c < 1 || T < 1 || vocab < 1 || batch < 1)
      throw Error("hyperparams: d, c, T, vocab, batch must all be >= 1");
    if (lambda < 0.0) throw Error("hyperparams: lambda must be >= 0");
    if (negatives < 1 || negatives > vocab - 1)
      throw Error("hyperparams: negatives must be in [1, vocab-1]");
    if (!(lr > 0.0) || !(lr_omega > 0.0))
      throw Error("hyperparams: learning rates must be positive");
    if (omega_steps < 1) throw Error("hyperparams: omega_steps must be >= 1");
  }
};

// All trainable tensors.
struct ModelParams {
  Matrix item_emb;  // vocab x d
  Matrix pos_emb;   // T x d
  Matrix attn_w1;   // d_hat x d
  Matrix attn_w2;   // c x d_hat
};

// Cached intermediates of one forward pass, enough to evaluate the loss and
// run the manual backward pass.
struct ForwardTrace {
  std::vector<std::uint32_t> items;  // context actually used (after truncation)
  Matrix E;                          // t x d input embeddings
  Matrix A;                          // c x t attention (rows sum to 1)
  Matrix M;                          // c x d interest matrix
  std::size_t selected = 0;          // argmax interest index
  std::uint32_t target = 0;
  std::vector<std::uint32_t> candidates;  // [0] = target, then negatives
  std::vector<double> logits;             // scores over candidates
};

struct Gradients {
  Matrix d_item_emb;  // dense vocab x d (only touched rows are nonzero)
  Matrix d_pos_emb;   // T x d
  Matrix d_attn_w1;   // d_hat x d
  Matrix d_attn_w2;   // c x d_hat
};

// Row i = item_emb[items[i]] + pos_emb[i], keeping the most recent T items
// when the context is longer.
inline Matrix embed_sequence(std::span<const std::uint32_t> items,
                             const ModelParams& params, const Hyperparams& hp) {
  if (items.empty()) throw Error("embed_sequence: empty context");
  const std::size_t start = items.size() > hp.T ? items.size() - hp.T : 0;
  const std::size_t t = items.size() - start;
  Matrix e(t, hp.d);
  for (std::size_t i = 0; i < t; ++i) {
    const std::uint32_t id = items[start + i];
    if (id >= hp.vocab) throw Error("embed_sequence: item id out of range");
    auto v = params.item_emb.row(id);
    auto p = params.pos_emb.row(i);
    auto dst = e.row(i);
    for (std::size_t c = 0; c < hp.d; ++c) dst[c] = v[c] + p[c];
  }
  return e;
}

// A = softmax_rows(W2 tanh(W1 E^T)), M = A E.
inline std::pair<Matrix, Matrix> extract_interests(const Matrix& e,
                                                   const ModelParams& params) {
  Matrix z = matmul_nt(params.attn_w1, e);  // d_hat x t
  for (std::size_t i = 0; i < z.size(); ++i) z.data()[i] = std::tanh(z.data()[i]);
  const Matrix a = softmax_rows(matmul(params.attn_w2, z));  // c x t
  return {a, matmul(a, e)};
}

// Index of the interest scoring the target embedding highest (ties to the
// lowest index) and a verbatim copy of that row.
inline std::pair<std::size_t, std::vector<double>> select_interest(
    const Matrix& m, std::span<const double> target_emb) {
  std::size_t best = 0;
  double best_score = dot(m.row(0), target_emb);
  for (std::size_t j = 1; j < m.rows(); ++j) {
    const double s = dot(m.row(j), target_emb);
    if (s > best_score) {
      best = j;
      best_score = s;
    }
  }
  auto r = m.row(best);
  return {best, std::vector<double>(r.begin(), r.end())};
}

inline ForwardTrace forward_with_candidates(std::span<const std::uint32_t> items,
                                            std::uint32_t target,
                                            std::vector<std::uint32_t> candidates,
                                            const ModelParams& params,
                                            const Hyperparams& hp) {
  if (target >= hp.vocab) throw Error("forward: target id out of range");
  ForwardTrace tr;
  tr.E = embed_sequence(items, params, hp);
  const std::size_t start = items.size() > hp.T ? items.size() - hp.T : 0;
  tr.items.assign(items.begin() + static_cast<std::ptrdiff_t>(start), items.end());
  auto [a, m] = extract_interests(tr.E, params);
  tr.A = std::move(a);
  tr.M = std::move(m);
  auto [sel, r] = select_interest(tr.M, params.item_emb.row(target));
  tr.selected = sel;
  tr.target = target;
  tr.candidates = std::move(candidates);
  tr.logits.resize(tr.candidates.size());
  for (std::size_t k = 0; k < tr.candidates.size(); ++k) {
    if (tr.candidates[k] >= hp.vocab) throw Error("forward: candidate id out of range");
    tr.logits[k] = dot(std::span<const double>(r),
                       params.item_emb.row(tr.candidates[k]));
  }
  return tr;
}

// Samples `hp.negatives` uniform negatives without replacement from
// vocab \ {target}; candidate 0 is the target.
inline ForwardTrace forward(std::span<const std::uint32_t> items, std::uint32_t target,
                            const ModelParams& params, const Hyperparams& hp,
                            Rng& rng) {
  if (hp.negatives > hp.vocab - 1)
    throw Error("forward: negatives exceed vocab - 1");
  std::vector<std::uint32_t> cands;
  cands.reserve(hp.negatives + 1);
  cands.push_back(target);
  auto negs = rng.sample_without_replacement(static_cast<std::uint32_t>(hp.vocab),
                                             hp.negatives, target);
  cands.insert(cands.end(), negs.begin(), negs.end());
  return forward_with_candidates(items, target, std::move(cands), params, hp);
}

// -log softmax(logits)[target], target at candidate index 0. With uniform
// negative sampling the proposal correction is a constant shift and cancels.
inline double sample_loss(const ForwardTrace& tr) {
  double mx = tr.logits[0];
  for (double l : tr.logits) mx = std::max(mx, l);
  double sum = 0.0;
  for (double l : tr.logits) sum += std::exp(l - mx);
  return mx + std::log(sum) - tr.logits[0];
}

inline double weighted_batch_loss(std::span<const ForwardTrace> traces,
                                  std::span<const double> weights) {
  if (traces.size() != weights.size())
    throw Error("weighted_batch_loss: length mismatch");
  double total = 0.0;
  for (std::size_t i = 0; i < traces.size(); ++i)
    total += weights[i] * sample_loss(traces[i]);
  return total;
}

namespace detail {

// Per-sample gradient with the item-embedding rows kept sparse.
struct SampleGrad {
  std::vector<std::pair<std::uint32_t, std::vector<double>>> item_rows;
  Matrix d_pos;  // t x d
  Matrix d_w1;
  Matrix d_w2;

  std::vector<double>& row_for(std::uint32_t id, std::size_t d) {
    for (auto& [rid, row] : item_rows)
      if (rid == id) return row;
    item_rows.emplace_back(id, std::vector<double>(d, 0.0));
    return item_rows.back().second;
  }
};

inline SampleGrad backward_one(const ForwardTrace& tr, double weight,
                               const ModelParams& params, const Hyperparams& hp) {
  const std::size_t t = tr.items.size();
  const std::size_t d = hp.d;
  const std::size_t dh = hp.attention_dim();
  SampleGrad g;
  g.d_pos = Matrix(t, d);
  g.d_w1 = Matrix(dh, d);
  g.d_w2 = Matrix(hp.c, dh);
  if (weight == 0.0) return g;

  // softmax over candidates; dlogit_k = w * (p_k - [k == 0])
  const std::size_t n = tr.logits.size();
  std::vector<double> p(n);
  double mx = tr.logits[0];
  for (double l : tr.logits) mx = std::max(mx, l);
  double sum = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    p[k] = std::exp(tr.logits[k] - mx);
    sum += p[k];
  }
  std::vector<double> dlogit(n);
  for (std::size_t k = 0; k < n; ++k)
    dlogit[k] = weight * (p[k] / sum - (k == 0 ? 1.0 : 0.0));

  // R = M[selected]; logits_k = R . V[cand_k]
  auto r = tr.M.row(tr.selected);
  std::vector<double> d_r(d, 0.0);
  for (std::size_t k = 0; k < n; ++k) {
    auto v = params.item_emb.row(tr.candidates[k]);
    auto& dv = g.row_for(tr.candidates[k], d);
    for (std::size_t c = 0; c < d; ++c) {
      d_r[c] += dlogit[k] * v[c];
      dv[c] += dlogit[k] * r[c];
    }
  }

  // M = A E; only row `selected` of M receives gradient.
  // dA[sel, tau] = dR . E[tau];  dE[tau] += A[sel, tau] * dR
  Matrix d_e(t, d);
  std::vector<double> d_a(t);
  for (std::size_t tau = 0; tau < t; ++tau) {
    d_a[tau] = dot(std::span<const double>(d_r), tr.E.row(tau));
    auto de = d_e.row(tau);
    const double asel = tr.A(tr.selected, tau);
    for (std::size_t c = 0; c < d; ++c) de[c] += asel * d_r[c];
  }

  // softmax backward within the selected row:
  // dS[tau] = A[tau] * (dA[tau] - sum_t' dA[t'] A[t'])
  double inner = 0.0;
  for (std::size_t tau = 0; tau < t; ++tau) inner += d_a[tau] * tr.A(tr.selected, tau);
  std::vector<double> d_s(t);
  for (std::size_t tau = 0; tau < t; ++tau)
    d_s[tau] = tr.A(tr.selected, tau) * (d_a[tau] - inner);

  // Recompute H = tanh(W1 E^T) (not stored in the trace).
  Matrix h = matmul_nt(params.attn_w1, tr.E);  // dh x t
  for (std::size_t i = 0; i < h.size(); ++i) h.data()[i] = std::tanh(h.data()[i]);

  // S = W2 H; only the selected row of S has gradient.
  // dW2[sel, :] = sum_tau dS[tau] H[:, tau];  dH[:, tau] = W2[sel, :]^T dS[tau]
  auto w2sel = params.attn_w2.row(tr.selected);
  auto dw2sel = g.d_w2.row(tr.selected);
  for (std::size_t i = 0; i < dh; ++i) {
    const double* hi = h.data() + i * t;
    double acc = 0.0;
    for (std::size_t tau = 0; tau < t; ++tau) acc += d_s[tau] * hi[tau];
    dw2sel[i] = acc;
  }
  // dZ = dH * (1 - H^2); dW1 = dZ E; dE += dZ^T W1
  for (std::size_t i = 0; i < dh; ++i) {
    const double* hi = h.data() + i * t;
    auto w1i = params.attn_w1.row(i);
    auto dw1i = g.d_w1.row(i);
    for (std::size_t tau = 0; tau < t; ++tau) {
      const double dz = w2sel[i] * d_s[tau] * (1.0 - hi[tau] * hi[tau]);
      if (dz == 0.0) continue;
      auto e_row = tr.E.row(tau);
      auto de = d_e.row(tau);
      for (std::size_t c = 0; c < d; ++c) {
        dw1i[c] += dz * e_row[c];
        de[c] += dz * w1i[c];
      }
    }
  }

  // E rows feed both the item embedding of the context item and the
  // position embedding of the slot.
  for (std::size_t tau = 0; tau < t; ++tau) {
    auto de = d_e.row(tau);
    auto& dv = g.row_for(tr.items[tau], d);
    auto dp = g.d_pos.row(tau);
    for (std::size_t c = 0; c < d; ++c) {
      dv[c] += de[c];
      dp[c] += de[c];
    }
  }
  return g;
}

}  // namespace detail

// Exact gradients of weighted_batch_loss w.r.t. all four tensors. The argmax
// interest selection is treated as a constant of the forward pass. Per-sample
// gradients are computed independently (parallelizable) and reduced in sample
// order, so the result does not depend on the thread count.
inline Gradients backward(std::span<const ForwardTrace> traces,
                          std::span<const double> weights, const ModelParams& params,
                          const Hyperparams& hp, int threads = 1) {
  if (traces.size() != weights.size()) throw Error("backward: length mismatch");
  const std::size_t dh = hp.attention_dim();
  Gradients g{Matrix(hp.vocab, hp.d), Matrix(hp.T, hp.d), Matrix(dh, hp.d),
              Matrix(hp.c, dh)};
  std::vector<detail::SampleGrad> per_sample(traces.size());
  parallel_for(traces.size(), threads, [&](std::size_t i) {
    per_sample[i] = detail::backward_one(traces[i], weights[i], params, hp);
  });
  for (const auto& sg : per_sample) {
    for (const auto& [id, row] : sg.item_rows) {
      auto dst = g.d_item_emb.row(id);
      for (std::size_t c = 0; c < row.size(); ++c) dst[c] += row[c];
    }
    for (std::size_t tau = 0; tau < sg.d_pos.rows(); ++tau) {
      auto dst = g.d_pos_emb.row(tau);
      auto src = sg.d_pos.row(tau);
      for (std::size_t c = 0; c < src.size(); ++c) dst[c] += src[c];
    }
    g.d_attn_w1.add_scaled(sg.d_w1, 1.0);
    g.d_attn_w2.add_scaled(sg.d_w2, 1.0);
  }
  return g;
}

}  // namespace simrec
