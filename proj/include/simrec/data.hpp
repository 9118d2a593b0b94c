#pragma once

#include <algorithm>
#include <cmath>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "simrec/error.hpp"
#include "simrec/io_util.hpp"
#include "simrec/rng.hpp"

namespace simrec {

struct Interaction {
  std::uint64_t user;
  std::uint64_t item;  // original id
  std::int64_t ts;
};

// Items ordered by timestamp ascending, ties broken by input order.
struct UserSequence {
  std::uint64_t user;
  std::vector<std::uint32_t> items;  // dense ids
};

enum class SplitKind { None, Train, Valid, Test };
enum class EnvTag { None, InDist, Ood };

inline const char* split_name(SplitKind s) {
  switch (s) {
    case SplitKind::Train: return "train";
    case SplitKind::Valid: return "valid";
    case SplitKind::Test: return "test";
    default: return "none";
  }
}

inline const char* env_name(EnvTag e) {
  switch (e) {
    case EnvTag::InDist: return "in_dist";
    case EnvTag::Ood: return "ood";
    default: return "";
  }
}

struct Dataset {
  std::vector<UserSequence> sequences;  // sorted by user id
  std::vector<SplitKind> split;         // parallel to sequences
  std::vector<EnvTag> env;              // parallel to sequences
  std::vector<std::uint64_t> item_ids;  // dense id -> original id
  std::uint32_t vocab = 0;

  std::size_t user_count() const { return sequences.size(); }

  std::optional<std::size_t> index_of(std::uint64_t user) const {
    auto it = std::lower_bound(sequences.begin(), sequences.end(), user,
                               [](const UserSequence& s, std::uint64_t u) {
                                 return s.user < u;
                               });
    if (it == sequences.end() || it->user != user) return std::nullopt;
    return static_cast<std::size_t>(it - sequences.begin());
  }

  std::vector<std::size_t> split_indices(SplitKind s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < sequences.size(); ++i)
      if (split[i] == s) out.push_back(i);
    return out;
  }

  bool has_env_tags() const {
    for (EnvTag e : env)
      if (e != EnvTag::None) return true;
    return false;
  }
};

// --- interactions file: `user_id,item_id,timestamp` per line -------------

namespace detail {
inline bool parse_interaction(std::string_view line, Interaction& out) {
  const auto fields = split_csv(line);
  return fields.size() == 3 && parse_int(fields[0], out.user) &&
         parse_int(fields[1], out.item) && parse_int(fields[2], out.ts);
}
}  // namespace detail

// Loads an interactions file. Users with fewer than min_len interactions are
// dropped; item ids are densely re-indexed (sorted original ids), and the
// original ids are kept in Dataset::item_ids. An optional header line is
// detected and skipped.
inline Dataset load_interactions(const std::string& path, std::size_t min_len = 5) {
  const std::string text = read_file(path);
  struct Row {
    std::int64_t ts;
    std::size_t order;
    std::uint64_t item;
  };
  std::map<std::uint64_t, std::vector<Row>> by_user;
  bool saw_any = false;
  std::size_t order = 0;
  for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    Interaction it{};
    if (!detail::parse_interaction(line, it)) {
      if (!saw_any && line_no == 1) return;  // header
      throw DataError(path + ":" + std::to_string(line_no) + ": malformed line");
    }
    saw_any = true;
    by_user[it.user].push_back({it.ts, order++, it.item});
  });
  if (!saw_any) throw DataError(path + ": no interactions found");

  for (auto it = by_user.begin(); it != by_user.end();) {
    if (it->second.size() < min_len)
      it = by_user.erase(it);
    else
      ++it;
  }

  std::vector<std::uint64_t> originals;
  for (const auto& [user, rows] : by_user)
    for (const Row& r : rows) originals.push_back(r.item);
  std::sort(originals.begin(), originals.end());
  originals.erase(std::unique(originals.begin(), originals.end()), originals.end());
  std::unordered_map<std::uint64_t, std::uint32_t> dense;
  dense.reserve(originals.size());
  for (std::uint32_t i = 0; i < originals.size(); ++i) dense[originals[i]] = i;

  Dataset ds;
  ds.item_ids = std::move(originals);
  ds.vocab = static_cast<std::uint32_t>(ds.item_ids.size());
  for (auto& [user, rows] : by_user) {
    std::stable_sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
      return a.ts < b.ts;
    });
    UserSequence seq{user, {}};
    seq.items.reserve(rows.size());
    for (const Row& r : rows) seq.items.push_back(dense[r.item]);
    ds.sequences.push_back(std::move(seq));
  }
  ds.split.assign(ds.sequences.size(), SplitKind::None);
  ds.env.assign(ds.sequences.size(), EnvTag::None);
  return ds;
}

// Canonical write-back: original item ids, ordinal timestamps.
inline void write_interactions(const Dataset& ds, const std::string& path) {
  std::string out;
  for (const auto& seq : ds.sequences)
    for (std::size_t i = 0; i < seq.items.size(); ++i) {
      out += std::to_string(seq.user);
      out += ',';
      out += std::to_string(ds.item_ids[seq.items[i]]);
      out += ',';
      out += std::to_string(i);
      out += '\n';
    }
  write_file(path, out);
}

// --- split file: `user_id,split[,env]` ------------------------------------

inline void write_split_file(const Dataset& ds, const std::string& path) {
  const bool with_env = ds.has_env_tags();
  std::string out;
  for (std::size_t i = 0; i < ds.sequences.size(); ++i) {
    if (ds.split[i] == SplitKind::None) continue;
    out += std::to_string(ds.sequences[i].user);
    out += ',';
    out += split_name(ds.split[i]);
    if (with_env) {
      out += ',';
      out += env_name(ds.env[i]);
    }
    out += '\n';
  }
  write_file(path, out);
}

inline void read_split_file(Dataset& ds, const std::string& path) {
  const std::string text = read_file(path);
  bool saw_any = false;
  for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    const auto fields = split_csv(line);
    std::uint64_t user = 0;
    if (fields.size() < 2 || fields.size() > 3 || !parse_int(fields[0], user)) {
      if (!saw_any && line_no == 1) return;  // header
      throw DataError(path + ":" + std::to_string(line_no) + ": malformed line");
    }
    saw_any = true;
    const auto idx = ds.index_of(user);
    if (!idx)
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": unknown user " + std::to_string(user));
    SplitKind s;
    if (fields[1] == "train")
      s = SplitKind::Train;
    else if (fields[1] == "valid")
      s = SplitKind::Valid;
    else if (fields[1] == "test")
      s = SplitKind::Test;
    else
      throw DataError(path + ":" + std::to_string(line_no) + ": unknown split '" +
                      std::string(fields[1]) + "'");
    ds.split[*idx] = s;
    if (fields.size() == 3 && !fields[2].empty()) {
      if (fields[2] == "in_dist")
        ds.env[*idx] = EnvTag::InDist;
      else if (fields[2] == "ood")
        ds.env[*idx] = EnvTag::Ood;
      else
        throw DataError(path + ":" + std::to_string(line_no) + ": unknown env '" +
                        std::string(fields[2]) + "'");
    }
  });
  if (!saw_any) throw DataError(path + ": no split assignments found");
}

// --- similarity and splitting ---------------------------------------------

inline std::vector<std::uint32_t> distinct_items(const UserSequence& seq) {
  std::vector<std::uint32_t> v = seq.items;
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

// |a n b| / |a u b| over sorted unique id vectors; 0 when both empty.
inline double jaccard(std::span<const std::uint32_t> a, std::span<const std::uint32_t> b) {
  if (a.empty() && b.empty()) return 0.0;
  std::size_t inter = 0, i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    if (a[i] < b[j])
      ++i;
    else if (b[j] < a[i])
      ++j;
    else {
      ++inter;
      ++i;
      ++j;
    }
  }
  const std::size_t uni = a.size() + b.size() - inter;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

namespace detail {
inline std::size_t rounded(double x) {
  return static_cast<std::size_t>(std::llround(x));
}
}  // namespace detail

// OOD split: grow a user group U1 by greedy Jaccard similarity against the
// union item set of the already selected users, starting from a random seed
// user, until half the users are selected. The test set is a 10% sample of
// U1; validation and training are 10% / 80% samples of the remainder U2.
// Users left over carry SplitKind::None and take no part in the experiment.
inline void ood_split(Dataset& ds, std::uint64_t seed) {
  const std::size_t n = ds.user_count();
  if (n < 10) throw DataError("ood_split: need at least 10 users");
  Rng rng(seed, "splits");

  std::vector<std::vector<std::uint32_t>> sets(n);
  for (std::size_t i = 0; i < n; ++i) sets[i] = distinct_items(ds.sequences[i]);

  std::vector<bool> in_u1(n, false);
  std::vector<bool> in_union(ds.vocab, false);
  std::size_t union_size = 0;
  auto add_user = [&](std::size_t idx) {
    in_u1[idx] = true;
    for (std::uint32_t it : sets[idx])
      if (!in_union[it]) {
        in_union[it] = true;
        ++union_size;
      }
  };

  const std::size_t target = (n + 1) / 2;
  add_user(static_cast<std::size_t>(rng.uniform_int(n)));
  for (std::size_t picked = 1; picked < target; ++picked) {
    double best = -1.0;
    std::size_t best_idx = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (in_u1[i]) continue;
      std::size_t inter = 0;
      for (std::uint32_t it : sets[i])
        if (in_union[it]) ++inter;
      const std::size_t uni = sets[i].size() + union_size - inter;
      const double j = uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
      if (j > best) {  // ties keep the lowest user id (ascending scan)
        best = j;
        best_idx = i;
      }
    }
    add_user(best_idx);
  }

  std::vector<std::size_t> u1, u2;
  for (std::size_t i = 0; i < n; ++i) (in_u1[i] ? u1 : u2).push_back(i);

  std::fill(ds.split.begin(), ds.split.end(), SplitKind::None);
  rng.shuffle(u1);
  rng.shuffle(u2);
  const std::size_t n_test = std::max<std::size_t>(1, detail::rounded(0.1 * static_cast<double>(u1.size())));
  const std::size_t n_valid = std::max<std::size_t>(1, detail::rounded(0.1 * static_cast<double>(u2.size())));
  std::size_t n_train = detail::rounded(0.8 * static_cast<double>(u2.size()));
  n_train = std::min(n_train, u2.size() - n_valid);
  for (std::size_t i = 0; i < n_test; ++i) ds.split[u1[i]] = SplitKind::Test;
  for (std::size_t i = 0; i < n_valid; ++i) ds.split[u2[i]] = SplitKind::Valid;
  for (std::size_t i = 0; i < n_train; ++i) ds.split[u2[n_valid + i]] = SplitKind::Train;
}

// Uniform user-level 8:1:1 partition.
inline void random_split(Dataset& ds, std::uint64_t seed) {
  const std::size_t n = ds.user_count();
  if (n < 10) throw DataError("random_split: need at least 10 users");
  Rng rng(seed, "splits");
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  rng.shuffle(idx);
  const std::size_t n_train = detail::rounded(0.8 * static_cast<double>(n));
  const std::size_t n_valid = detail::rounded(0.1 * static_cast<double>(n));
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n_train)
      ds.split[idx[i]] = SplitKind::Train;
    else if (i < n_train + n_valid)
      ds.split[idx[i]] = SplitKind::Valid;
    else
      ds.split[idx[i]] = SplitKind::Test;
  }
}

// --- training / evaluation examples ---------------------------------------

struct SampleKey {
  std::uint64_t user;
  std::uint64_t cut;
  friend auto operator<=>(const SampleKey&, const SampleKey&) = default;
};

struct TrainingExample {
  std::vector<std::uint32_t> context;
  std::uint32_t target = 0;
  SampleKey key{};
};

// cut ~ uniform over [1, len-1]; target = items[cut];
// context = items[max(0, cut - T) .. cut).
inline TrainingExample make_training_example(const UserSequence& seq, Rng& rng,
                                             std::size_t T) {
  const std::size_t len = seq.items.size();
  if (len < 2) throw DataError("make_training_example: sequence shorter than 2");
  const std::size_t cut = 1 + static_cast<std::size_t>(rng.uniform_int(len - 1));
  TrainingExample ex;
  const std::size_t start = cut > T ? cut - T : 0;
  ex.context.assign(seq.items.begin() + static_cast<std::ptrdiff_t>(start),
                    seq.items.begin() + static_cast<std::ptrdiff_t>(cut));
  ex.target = seq.items[cut];
  ex.key = {seq.user, cut};
  return ex;
}

struct EvalExample {
  std::vector<std::uint32_t> context;
  std::vector<std::uint32_t> truth;  // sorted unique
};

// Prefix protocol: the first ceil(0.8 * len) items (last T of them) form the
// context; the remaining items are the ground truth.
inline EvalExample eval_examples(const UserSequence& seq, std::size_t T) {
  const std::size_t len = seq.items.size();
  if (len < 5) throw DataError("eval_examples: sequence shorter than 5");
  const std::size_t n_ctx = (4 * len + 4) / 5;  // ceil(0.8 * len)
  EvalExample ex;
  const std::size_t start = n_ctx > T ? n_ctx - T : 0;
  ex.context.assign(seq.items.begin() + static_cast<std::ptrdiff_t>(start),
                    seq.items.begin() + static_cast<std::ptrdiff_t>(n_ctx));
  ex.truth.assign(seq.items.begin() + static_cast<std::ptrdiff_t>(n_ctx),
                  seq.items.end());
  std::sort(ex.truth.begin(), ex.truth.end());
  ex.truth.erase(std::unique(ex.truth.begin(), ex.truth.end()), ex.truth.end());
  return ex;
}

// --- synthetic stable/noisy-interest generator -----------------------------

// Items are partitioned into stable and noisy topic pools. Each user has a
// stable topic s and a noisy topic n; with probability rho (per environment)
// n is the topic paired with s, otherwise uniform over the other noisy
// topics. Sequence items come from s's pool with probability stable_frac,
// else from n's pool; the final item is always from s's pool. Train/valid
// users use rho_train, test users rho_test, so the stable->noisy coupling
// can be strengthened in training and removed at test time.
struct SyntheticConfig {
  std::size_t stable_topics = 4;
  std::size_t noisy_topics = 4;
  std::size_t items_per_topic = 50;
  std::size_t train_users = 2000;
  std::size_t valid_users = 250;
  std::size_t test_users = 500;
  std::size_t seq_len = 20;
  double stable_frac = 0.6;  // pi
  double rho_train = 0.9;
  double rho_test = 0.0;
  std::uint64_t seed = 1;

  std::uint32_t vocab() const {
    return static_cast<std::uint32_t>((stable_topics + noisy_topics) * items_per_topic);
  }

  void validate() const {
    if (stable_topics == 0 || noisy_topics == 0 || items_per_topic == 0)
      throw Error("synthetic: topic counts and pool size must be >= 1");
    if (stable_topics != noisy_topics)
      throw Error("synthetic: paired coupling requires equal topic counts");
    if (noisy_topics < 2 && (rho_train < 1.0 || rho_test < 1.0))
      throw Error("synthetic: rho < 1 needs at least 2 noisy topics");
    if (seq_len < 2) throw Error("synthetic: seq_len must be >= 2");
    auto in01 = [](double x) { return x >= 0.0 && x <= 1.0; };
    if (!in01(stable_frac) || !in01(rho_train) || !in01(rho_test))
      throw Error("synthetic: stable_frac and rho must lie in [0, 1]");
    if (train_users == 0 || valid_users == 0 || test_users == 0)
      throw Error("synthetic: all user counts must be >= 1");
  }
};

struct SyntheticUserInfo {
  std::uint64_t user;
  std::uint32_t stable_topic;
  std::uint32_t noisy_topic;
  EnvTag env;
};

struct SyntheticResult {
  Dataset dataset;
  std::vector<SyntheticUserInfo> sidecar;
};

inline SyntheticResult generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed, "synthetic");
  SyntheticResult res;
  Dataset& ds = res.dataset;
  ds.vocab = cfg.vocab();
  ds.item_ids.resize(ds.vocab);
  for (std::uint32_t i = 0; i < ds.vocab; ++i) ds.item_ids[i] = i;

  const auto ipt = static_cast<std::uint32_t>(cfg.items_per_topic);
  auto stable_pool_item = [&](std::uint32_t topic) {
    return topic * ipt + static_cast<std::uint32_t>(rng.uniform_int(ipt));
  };
  auto noisy_pool_item = [&](std::uint32_t topic) {
    return (static_cast<std::uint32_t>(cfg.stable_topics) + topic) * ipt +
           static_cast<std::uint32_t>(rng.uniform_int(ipt));
  };

  const std::size_t total = cfg.train_users + cfg.valid_users + cfg.test_users;
  for (std::uint64_t u = 0; u < total; ++u) {
    SplitKind sp = u < cfg.train_users                     ? SplitKind::Train
                   : u < cfg.train_users + cfg.valid_users ? SplitKind::Valid
                                                           : SplitKind::Test;
    const EnvTag env = sp == SplitKind::Test ? EnvTag::Ood : EnvTag::InDist;
    const double rho = env == EnvTag::Ood ? cfg.rho_test : cfg.rho_train;

    const auto s = static_cast<std::uint32_t>(rng.uniform_int(cfg.stable_topics));
    std::uint32_t nt;
    if (rng.uniform() < rho) {
      nt = s;  // paired topic
    } else {
      const auto off = static_cast<std::uint32_t>(rng.uniform_int(cfg.noisy_topics - 1));
      nt = off < s ? off : off + 1;
    }

    UserSequence seq{u, {}};
    seq.items.reserve(cfg.seq_len);
    for (std::size_t pos = 0; pos + 1 < cfg.seq_len; ++pos) {
      const bool from_stable = rng.uniform() < cfg.stable_frac;
      seq.items.push_back(from_stable ? stable_pool_item(s) : noisy_pool_item(nt));
    }
    seq.items.push_back(stable_pool_item(s));  // target is always stable

    ds.sequences.push_back(std::move(seq));
    ds.split.push_back(sp);
    ds.env.push_back(env);
    res.sidecar.push_back({u, s, nt, env});
  }
  return res;
}

// Ground-truth sidecar: `user_id,stable_topic,noisy_topic,env`.
inline void write_sidecar(const SyntheticResult& res, const std::string& path) {
  std::string out;
  for (const auto& info : res.sidecar) {
    out += std::to_string(info.user);
    out += ',';
    out += std::to_string(info.stable_topic);
    out += ',';
    out += std::to_string(info.noisy_topic);
    out += ',';
    out += env_name(info.env);
    out += '\n';
  }
  write_file(path, out);
}

}  // namespace simrec
