#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "simrec/data.hpp"
#include "simrec/error.hpp"
#include "simrec/io_util.hpp"
#include "simrec/model.hpp"
#include "simrec/parallel.hpp"

namespace simrec {

// Matching-stage retrieval: each interest row proposes its top items by inner
// product, the union is re-ranked by the maximum score over interests,
// context items are excluded, ties break to the lower item id.
inline std::vector<std::uint32_t> retrieve_top_p(const ModelParams& params,
                                                 const Hyperparams& hp,
                                                 std::span<const std::uint32_t> context,
                                                 std::size_t p) {
  if (context.empty()) throw Error("retrieve_top_p: empty context");
  if (p < 1 || p > hp.vocab) throw Error("retrieve_top_p: p out of range");
  const Matrix e = embed_sequence(context, params, hp);
  const auto [a, m] = extract_interests(e, params);
  const Matrix scores = matmul_nt(m, params.item_emb);  // c x vocab

  std::vector<bool> in_context(hp.vocab, false);
  std::size_t ctx_distinct = 0;
  for (std::uint32_t id : context)
    if (!in_context[id]) {
      in_context[id] = true;
      ++ctx_distinct;
    }

  // Per-row shortlists large enough that exclusion cannot starve the union.
  const std::size_t k = std::min<std::size_t>(hp.vocab, p + ctx_distinct);
  auto better = [](std::pair<double, std::uint32_t> x, std::pair<double, std::uint32_t> y) {
    return x.first > y.first || (x.first == y.first && x.second < y.second);
  };
  std::vector<bool> in_union(hp.vocab, false);
  std::vector<std::uint32_t> unioned;
  std::vector<std::pair<double, std::uint32_t>> row(hp.vocab);
  for (std::size_t j = 0; j < hp.c; ++j) {
    for (std::uint32_t i = 0; i < hp.vocab; ++i) row[i] = {scores(j, i), i};
    std::partial_sort(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(k),
                      row.end(), better);
    for (std::size_t i = 0; i < k; ++i)
      if (!in_union[row[i].second]) {
        in_union[row[i].second] = true;
        unioned.push_back(row[i].second);
      }
  }

  std::vector<std::pair<double, std::uint32_t>> final_ranked;
  final_ranked.reserve(unioned.size());
  for (std::uint32_t id : unioned) {
    if (in_context[id]) continue;
    double best = scores(0, id);
    for (std::size_t j = 1; j < hp.c; ++j) best = std::max(best, scores(j, id));
    final_ranked.emplace_back(best, id);
  }
  std::sort(final_ranked.begin(), final_ranked.end(), better);
  if (final_ranked.size() > p) final_ranked.resize(p);
  std::vector<std::uint32_t> out;
  out.reserve(final_ranked.size());
  for (const auto& [s, id] : final_ranked) out.push_back(id);
  return out;
}

namespace detail {
inline std::size_t hits_in_top(std::span<const std::uint32_t> recommended,
                               std::span<const std::uint32_t> truth_sorted,
                               std::size_t p) {
  const std::size_t top = std::min(p, recommended.size());
  std::size_t hits = 0;
  for (std::size_t r = 0; r < top; ++r)
    if (std::binary_search(truth_sorted.begin(), truth_sorted.end(), recommended[r]))
      ++hits;
  return hits;
}
}  // namespace detail

// |top-p n truth| / |truth|; 0 for empty truth.
inline double recall_at(std::span<const std::uint32_t> recommended,
                        std::span<const std::uint32_t> truth_sorted, std::size_t p) {
  if (truth_sorted.empty()) return 0.0;
  return static_cast<double>(detail::hits_in_top(recommended, truth_sorted, p)) /
         static_cast<double>(truth_sorted.size());
}

// DCG over hit ranks r (1-indexed) of 1/log2(r+1), normalized by the ideal
// DCG of min(p, |truth|) consecutive hits.
inline double ndcg_at(std::span<const std::uint32_t> recommended,
                      std::span<const std::uint32_t> truth_sorted, std::size_t p) {
  if (truth_sorted.empty()) return 0.0;
  const std::size_t top = std::min(p, recommended.size());
  double dcg = 0.0;
  for (std::size_t r = 1; r <= top; ++r)
    if (std::binary_search(truth_sorted.begin(), truth_sorted.end(),
                           recommended[r - 1]))
      dcg += 1.0 / std::log2(static_cast<double>(r) + 1.0);
  double idcg = 0.0;
  const std::size_t ideal = std::min(p, truth_sorted.size());
  for (std::size_t r = 1; r <= ideal; ++r)
    idcg += 1.0 / std::log2(static_cast<double>(r) + 1.0);
  return idcg > 0.0 ? dcg / idcg : 0.0;
}

// Per-user hit indicator.
inline double hr_at(std::span<const std::uint32_t> recommended,
                    std::span<const std::uint32_t> truth_sorted, std::size_t p) {
  return detail::hits_in_top(recommended, truth_sorted, p) > 0 ? 1.0 : 0.0;
}

struct MetricsEntry {
  SplitKind split;
  EnvTag env = EnvTag::None;
  std::size_t p;
  double recall, ndcg, hr;
  std::size_t users;
};

struct MetricsReport {
  std::vector<MetricsEntry> entries;

  double get(SplitKind s, std::size_t p, double MetricsEntry::* field,
             EnvTag env = EnvTag::None) const {
    for (const auto& e : entries)
      if (e.split == s && e.p == p && e.env == env) return e.*field;
    throw Error("metrics: entry not found");
  }
};

// Evaluates one split with the prefix protocol. Users with empty ground
// truth are skipped. With by_env set, reports one entry group per
// environment tag; otherwise a single group per p.
inline MetricsReport evaluate(const ModelParams& params, const Hyperparams& hp,
                              const Dataset& ds, SplitKind split,
                              const std::vector<std::size_t>& p_list, int threads = 1,
                              bool by_env = false) {
  const std::vector<std::size_t> users = ds.split_indices(split);
  if (users.empty()) throw Error("evaluate: empty split");
  std::size_t p_max = 0;
  for (std::size_t p : p_list) p_max = std::max(p_max, p);

  struct UserRow {
    bool counted = false;
    EnvTag env = EnvTag::None;
    std::vector<double> recall, ndcg, hr;
  };
  std::vector<UserRow> rows(users.size());
  parallel_for(users.size(), threads, [&](std::size_t i) {
    const UserSequence& seq = ds.sequences[users[i]];
    if (seq.items.size() < 5) return;
    const EvalExample ex = eval_examples(seq, hp.T);
    if (ex.truth.empty()) return;
    const auto ranked = retrieve_top_p(params, hp, ex.context, p_max);
    UserRow& row = rows[i];
    row.counted = true;
    row.env = by_env ? ds.env[users[i]] : EnvTag::None;
    for (std::size_t p : p_list) {
      row.recall.push_back(recall_at(ranked, ex.truth, p));
      row.ndcg.push_back(ndcg_at(ranked, ex.truth, p));
      row.hr.push_back(hr_at(ranked, ex.truth, p));
    }
  });

  std::vector<EnvTag> groups;
  for (const auto& row : rows)
    if (row.counted && std::find(groups.begin(), groups.end(), row.env) == groups.end())
      groups.push_back(row.env);
  std::sort(groups.begin(), groups.end(), [](EnvTag a, EnvTag b) {
    return static_cast<int>(a) < static_cast<int>(b);
  });

  MetricsReport report;
  for (EnvTag g : groups) {
    for (std::size_t pi = 0; pi < p_list.size(); ++pi) {
      MetricsEntry e{split, g, p_list[pi], 0.0, 0.0, 0.0, 0};
      for (const auto& row : rows) {
        if (!row.counted || row.env != g) continue;
        e.recall += row.recall[pi];
        e.ndcg += row.ndcg[pi];
        e.hr += row.hr[pi];
        e.users += 1;
      }
      if (e.users > 0) {
        e.recall /= static_cast<double>(e.users);
        e.ndcg /= static_cast<double>(e.users);
        e.hr /= static_cast<double>(e.users);
      }
      report.entries.push_back(e);
    }
  }
  return report;
}

inline std::string metrics_csv(const MetricsReport& report) {
  bool with_env = false;
  for (const auto& e : report.entries)
    if (e.env != EnvTag::None) with_env = true;
  std::string out = with_env ? "split,p,recall,ndcg,hr,n_users,env\n"
                             : "split,p,recall,ndcg,hr,n_users\n";
  for (const auto& e : report.entries) {
    out += split_name(e.split);
    out += ',';
    out += std::to_string(e.p);
    out += ',';
    out += fmt_double(e.recall);
    out += ',';
    out += fmt_double(e.ndcg);
    out += ',';
    out += fmt_double(e.hr);
    out += ',';
    out += std::to_string(e.users);
    if (with_env) {
      out += ',';
      out += env_name(e.env);
    }
    out += '\n';
  }
  return out;
}

// Step-indexed training diagnostics: unweighted pairwise HSIC of the current
// batch, plus the validation Recall@50 at steps where it was computed.
struct CurveLog {
  struct Point {
    std::uint64_t step;
    double hsic;
    std::optional<double> recall50;
  };
  std::vector<Point> points;

  void append(std::uint64_t step, double hsic) {
    if (!points.empty() && step <= points.back().step)
      throw Error("curve log: steps must be strictly increasing");
    points.push_back({step, hsic, std::nullopt});
  }
  void attach_recall(double recall50) {
    if (points.empty()) throw Error("curve log: no point to attach to");
    points.back().recall50 = recall50;
  }
};

inline std::string curve_csv(const CurveLog& log) {
  std::string out = "step,hsic,recall50\n";
  for (const auto& pt : log.points) {
    out += std::to_string(pt.step);
    out += ',';
    out += fmt_double(pt.hsic);
    out += ',';
    if (pt.recall50) out += fmt_double(*pt.recall50);
    out += '\n';
  }
  return out;
}

// Fixed 20-bin histogram over [0, 1]; the last bin includes 1.0.
struct WeightHistogram {
  static constexpr std::size_t kBins = 20;
  std::vector<std::size_t> counts = std::vector<std::size_t>(kBins, 0);

  void add(double v) {
    auto bin = static_cast<std::size_t>(std::clamp(v, 0.0, 1.0) * kBins);
    if (bin >= kBins) bin = kBins - 1;
    counts[bin] += 1;
  }
  std::size_t total() const {
    std::size_t t = 0;
    for (std::size_t c : counts) t += c;
    return t;
  }
};

inline std::string histogram_csv(const WeightHistogram& h) {
  std::string out = "bin_lo,bin_hi,count\n";
  for (std::size_t b = 0; b < WeightHistogram::kBins; ++b) {
    out += fmt_double(static_cast<double>(b) / WeightHistogram::kBins);
    out += ',';
    out += fmt_double(static_cast<double>(b + 1) / WeightHistogram::kBins);
    out += ',';
    out += std::to_string(h.counts[b]);
    out += '\n';
  }
  return out;
}

}  // namespace simrec
