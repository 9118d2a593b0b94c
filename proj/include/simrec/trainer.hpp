#pragma once

#include <cstdint>
#include <iostream>
#include <limits>
#include <span>
#include <vector>

#include "simrec/checkpoint.hpp"
#include "simrec/data.hpp"
#include "simrec/error.hpp"
#include "simrec/eval.hpp"
#include "simrec/hsic.hpp"
#include "simrec/model.hpp"
#include "simrec/optim.hpp"

namespace simrec {

inline constexpr std::uint64_t kNoPatience = std::numeric_limits<std::uint64_t>::max();

struct TrainOptions {
  std::uint64_t seed = 42;
  std::size_t eval_every = 0;  // batches between validations; 0 = once per epoch
  std::uint64_t patience = 3;  // validations without improvement before stopping
  std::uint64_t max_epochs = 10;
  int threads = 1;
  bool reweight = true;  // the sample-weight (de-correlation) path switch
  double weight_min = 0.0;
  double weight_max = 1.0;
};

struct TrainState {
  Hyperparams hp;
  ModelParams params;
  AdamState adam_item, adam_pos, adam_w1, adam_w2;
  WeightTable weights;
  Rng rng_negatives, rng_batching;
  std::uint64_t q = 0;      // batch-iteration counter
  std::uint64_t epoch = 0;  // completed epochs
  double best_metric = -1.0;
  std::uint64_t patience_left = 0;
};

// Fresh state: all four tensors glorot-initialized from the "init" stream,
// empty weight table (implicit 1.0), zeroed optimizer state.
inline TrainState init_state(const Hyperparams& hp_in, std::size_t vocab,
                             std::uint64_t seed) {
  TrainState st;
  st.hp = hp_in;
  st.hp.vocab = vocab;
  st.hp.validate();
  const std::size_t dh = st.hp.attention_dim();
  Rng init(seed, "init");
  st.params.item_emb = glorot_uniform(vocab, st.hp.d, init);
  st.params.pos_emb = glorot_uniform(st.hp.T, st.hp.d, init);
  st.params.attn_w1 = glorot_uniform(dh, st.hp.d, init);
  st.params.attn_w2 = glorot_uniform(st.hp.c, dh, init);
  st.adam_item = AdamState(vocab, st.hp.d);
  st.adam_pos = AdamState(st.hp.T, st.hp.d);
  st.adam_w1 = AdamState(dh, st.hp.d);
  st.adam_w2 = AdamState(st.hp.c, dh);
  st.rng_negatives = Rng(seed, "negatives");
  st.rng_batching = Rng(seed, "batching");
  return st;
}

inline Checkpoint checkpoint_from_state(const TrainState& st) {
  return {st.hp,          st.params,       st.adam_item, st.adam_pos,
          st.adam_w1,     st.adam_w2,      st.weights,   st.rng_negatives,
          st.rng_batching, st.q,           st.epoch,     st.best_metric,
          st.patience_left};
}

inline TrainState state_from_checkpoint(const Checkpoint& ck) {
  TrainState st;
  st.hp = ck.hp;
  st.params = ck.params;
  st.adam_item = ck.adam_item;
  st.adam_pos = ck.adam_pos;
  st.adam_w1 = ck.adam_w1;
  st.adam_w2 = ck.adam_w2;
  st.weights = ck.weights;
  st.rng_negatives = ck.rng_negatives;
  st.rng_batching = ck.rng_batching;
  st.q = ck.q;
  st.epoch = ck.epoch;
  st.best_metric = ck.best_metric;
  st.patience_left = ck.patience_left;
  return st;
}

struct StepInfo {
  double main_loss = 0.0;        // weighted batch loss before the theta update
  double hsic_unweighted = 0.0;  // pairwise HSIC of the batch (omega ignored)
  bool omega_updated = false;
  std::size_t batch_size = 0;
};

// One alternating step: (a) forward all samples, (b) one Adam update of the
// model on the weighted main loss with the weights from before this step,
// (c) recompute the interest matrices under the updated model and take the
// projected gradient step(s) on the sample weights. Batches smaller than 2
// skip (c) because HSIC needs at least two samples.
inline StepInfo train_step(TrainState& st, std::span<const TrainingExample> batch,
                           const TrainOptions& opt) {
  const Hyperparams& hp = st.hp;
  StepInfo info;
  info.batch_size = batch.size();

  // Negative sampling is serial in batch order; the heavy per-sample work
  // fans out without touching the rng.
  std::vector<std::vector<std::uint32_t>> candidates(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    candidates[i].reserve(hp.negatives + 1);
    candidates[i].push_back(batch[i].target);
    auto negs = st.rng_negatives.sample_without_replacement(
        static_cast<std::uint32_t>(hp.vocab), hp.negatives, batch[i].target);
    candidates[i].insert(candidates[i].end(), negs.begin(), negs.end());
  }
  std::vector<ForwardTrace> traces(batch.size());
  parallel_for(batch.size(), opt.threads, [&](std::size_t i) {
    traces[i] = forward_with_candidates(batch[i].context, batch[i].target,
                                        candidates[i], st.params, hp);
  });

  std::vector<double> w(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) w[i] = st.weights.get(batch[i].key);

  info.main_loss = weighted_batch_loss(traces, w);
  const Gradients g = backward(traces, w, st.params, hp, opt.threads);
  adam_step(st.params.item_emb, g.d_item_emb, st.adam_item, hp.lr);
  adam_step(st.params.pos_emb, g.d_pos_emb, st.adam_pos, hp.lr);
  adam_step(st.params.attn_w1, g.d_attn_w1, st.adam_w1, hp.lr);
  adam_step(st.params.attn_w2, g.d_attn_w2, st.adam_w2, hp.lr);
  if (!st.params.item_emb.all_finite() || !st.params.pos_emb.all_finite() ||
      !st.params.attn_w1.all_finite() || !st.params.attn_w2.all_finite())
    throw NumericalError("train_step: non-finite parameter after update");

  // Interest matrices under the updated model, for the weight update and the
  // (unweighted) HSIC diagnostic.
  std::vector<Matrix> interests(batch.size());
  parallel_for(batch.size(), opt.threads, [&](std::size_t i) {
    const Matrix e = embed_sequence(batch[i].context, st.params, hp);
    interests[i] = extract_interests(e, st.params).second;
  });

  if (batch.size() >= 2) {
    info.hsic_unweighted = interest_hsic_sum(interests, hp.kernel);
    if (opt.reweight) {
      auto grad_fn = [&](const std::vector<double>& cur) {
        return corr_loss_grad_weights(interests, cur, hp.lambda, hp.kernel,
                                      opt.threads);
      };
      const std::vector<double> updated = update_weights(
          w, grad_fn, hp.lr_omega, hp.omega_steps, opt.weight_min, opt.weight_max);
      for (std::size_t i = 0; i < batch.size(); ++i)
        st.weights.set(batch[i].key, updated[i]);
      info.omega_updated = true;
    }
  } else if (opt.reweight) {
    std::cerr << "warning: batch of size " << batch.size()
              << " skips the sample-weight update (needs >= 2)\n";
  }

  st.q += 1;
  return info;
}

struct FitResult {
  Checkpoint best;       // best validation Recall@50 seen in this run
  bool improved = false; // whether best improved over the starting metric
  CurveLog curves;
  TrainState last;       // state after the final step (resume point)
};

namespace detail {

inline FitResult fit_loop(const Dataset& ds, TrainState st, const TrainOptions& opt) {
  const std::vector<std::size_t> train_idx = ds.split_indices(SplitKind::Train);
  if (train_idx.empty()) throw Error("fit: empty training split");
  if (ds.split_indices(SplitKind::Valid).empty())
    throw Error("fit: empty validation split");

  FitResult res;
  const double starting_metric = st.best_metric;
  res.best = checkpoint_from_state(st);
  bool fresh = st.q == 0;
  if (fresh) st.patience_left = opt.patience;

  auto validate = [&](bool attach) {
    const MetricsReport rep =
        evaluate(st.params, st.hp, ds, SplitKind::Valid, {50}, opt.threads);
    const double r50 = rep.get(SplitKind::Valid, 50, &MetricsEntry::recall);
    if (attach) res.curves.attach_recall(r50);
    if (r50 > st.best_metric) {
      st.best_metric = r50;
      st.patience_left = opt.patience;
      res.best = checkpoint_from_state(st);
    } else if (opt.patience != kNoPatience && st.patience_left > 0) {
      st.patience_left -= 1;
    }
  };

  if (st.epoch >= opt.max_epochs) {
    res.last = std::move(st);
    return res;
  }
  if (fresh) validate(false);  // seed the best with the initial model

  while (st.epoch < opt.max_epochs && st.patience_left > 0) {
    std::vector<TrainingExample> examples;
    examples.reserve(train_idx.size());
    for (std::size_t idx : train_idx) {
      if (ds.sequences[idx].items.size() < 2) continue;
      examples.push_back(make_training_example(ds.sequences[idx], st.rng_batching,
                                               st.hp.T));
    }
    if (examples.empty()) throw Error("fit: no trainable sequences");
    st.rng_batching.shuffle(examples);

    for (std::size_t off = 0; off < examples.size() && st.patience_left > 0;
         off += st.hp.batch) {
      const std::size_t len = std::min(st.hp.batch, examples.size() - off);
      const StepInfo info =
          train_step(st, {examples.data() + off, len}, opt);
      res.curves.append(st.q, info.hsic_unweighted);
      if (opt.eval_every > 0 && st.q % opt.eval_every == 0) validate(true);
    }
    st.epoch += 1;
    if (opt.eval_every == 0 && st.patience_left > 0) validate(true);
  }

  res.improved = st.best_metric > starting_metric;
  res.last = std::move(st);
  return res;
}

}  // namespace detail

// Alternating training with validation-driven early stopping. Returns the
// checkpoint with the best recorded validation Recall@50 (the initial model
// counts as a candidate), the diagnostic curves, and the final state.
inline FitResult fit(const Dataset& ds, const Hyperparams& hp, const TrainOptions& opt) {
  return detail::fit_loop(ds, init_state(hp, ds.vocab, opt.seed), opt);
}

// Continues a run from a resume checkpoint. max_epochs counts total epochs
// including those already completed. FitResult.best reflects improvements
// made during this continuation.
inline FitResult fit_resume(const Dataset& ds, const Checkpoint& ck,
                            const TrainOptions& opt) {
  if (ck.hp.vocab != ds.vocab)
    throw Error("fit_resume: checkpoint vocab does not match dataset");
  return detail::fit_loop(ds, state_from_checkpoint(ck), opt);
}

}  // namespace simrec
