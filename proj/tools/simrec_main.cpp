// simrec: de-correlated multi-interest sequential recommender.
//
// Subcommands: generate (synthetic benchmark), split (ood/random user
// splits), train (alternating weighted training), evaluate (top-p metrics).
// Every command is deterministic given its config, seed and input files.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "simrec/simrec.hpp"

#ifndef SIMREC_BUILD_ID
#define SIMREC_BUILD_ID "unknown"
#endif

namespace fs = std::filesystem;
using namespace simrec;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

struct ModelOptions {
  Hyperparams hp;
  std::string kernel_mode = "median";
  double sigma = 1.0;
  double kernel_floor = 1e-8;

  // CLI11 options, kept so explicit use can be detected on `evaluate`
  std::map<std::string, CLI::Option*> opts;

  void attach(CLI::App* cmd) {
    opts["d"] = cmd->add_option("--d", hp.d, "item embedding size")
                    ->capture_default_str();
    opts["d-hat"] = cmd->add_option("--d-hat", hp.d_hat,
                                    "attention hidden size (0 = 4*d)")
                        ->capture_default_str();
    opts["interests"] = cmd->add_option("--interests", hp.c, "number of interests")
                            ->capture_default_str();
    opts["max-len"] = cmd->add_option("--max-len", hp.T, "maximum context length")
                          ->capture_default_str();
    cmd->add_option("--lambda", hp.lambda, "de-correlation importance")
        ->capture_default_str();
    cmd->add_option("--negatives", hp.negatives, "sampled-softmax negatives")
        ->capture_default_str();
    cmd->add_option("--lr", hp.lr, "learning rate")->capture_default_str();
    cmd->add_option("--lr-omega", hp.lr_omega, "sample-weight learning rate")
        ->capture_default_str();
    cmd->add_option("--omega-steps", hp.omega_steps,
                    "weight-update steps per batch")
        ->capture_default_str();
    cmd->add_option("--batch", hp.batch, "batch size")->capture_default_str();
    cmd->add_option("--kernel", kernel_mode, "RBF bandwidth mode: median|fixed")
        ->check(CLI::IsMember({"median", "fixed"}))
        ->capture_default_str();
    cmd->add_option("--sigma", sigma, "fixed RBF bandwidth")->capture_default_str();
    cmd->add_option("--kernel-floor", kernel_floor, "median bandwidth floor")
        ->capture_default_str();
  }

  Hyperparams resolve() const {
    Hyperparams out = hp;
    out.kernel = kernel_mode == "fixed" ? KernelConfig::fixed(sigma)
                                        : KernelConfig::median(kernel_floor);
    return out;
  }
};

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    throw DataError("cannot create output directory: " + dir);
}

std::string manifest_text(const std::string& command,
                          const std::vector<std::pair<std::string, std::string>>& kv) {
  std::string out;
  out += "command = " + command + "\n";
  out += "build_id = " + std::string(SIMREC_BUILD_ID) + "\n";
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

std::vector<std::pair<std::string, std::string>> hyperparam_manifest(
    const Hyperparams& hp) {
  return {
      {"d", std::to_string(hp.d)},
      {"d_hat", std::to_string(hp.attention_dim())},
      {"interests", std::to_string(hp.c)},
      {"max_len", std::to_string(hp.T)},
      {"vocab", std::to_string(hp.vocab)},
      {"lambda", fmt_double(hp.lambda)},
      {"negatives", std::to_string(hp.negatives)},
      {"lr", fmt_double(hp.lr)},
      {"lr_omega", fmt_double(hp.lr_omega)},
      {"omega_steps", std::to_string(hp.omega_steps)},
      {"batch", std::to_string(hp.batch)},
      {"kernel",
       hp.kernel.mode == KernelConfig::Mode::Fixed ? "fixed" : "median"},
      {"sigma", fmt_double(hp.kernel.sigma)},
      {"kernel_floor", fmt_double(hp.kernel.median_floor)},
  };
}

// --- generate ---------------------------------------------------------------

struct GenerateArgs {
  SyntheticConfig cfg;
  std::string out_dir;
};

void run_generate(const GenerateArgs& args) {
  args.cfg.validate();
  ensure_dir(args.out_dir);
  const SyntheticResult res = generate_synthetic(args.cfg);
  write_interactions(res.dataset, args.out_dir + "/interactions.csv");
  write_split_file(res.dataset, args.out_dir + "/splits.csv");
  write_sidecar(res, args.out_dir + "/topics.csv");
  std::cout << "generated " << res.dataset.user_count() << " users, vocab "
            << res.dataset.vocab << " -> " << args.out_dir << "\n";
}

// --- split ------------------------------------------------------------------

struct SplitArgs {
  std::string data;
  std::string mode = "random";
  std::string out;
  std::size_t min_len = 5;
  std::uint64_t seed = 42;
};

void run_split(const SplitArgs& args) {
  Dataset ds = load_interactions(args.data, args.min_len);
  if (args.mode == "ood")
    ood_split(ds, args.seed);
  else
    random_split(ds, args.seed);
  write_split_file(ds, args.out);
  std::cout << "split " << ds.user_count() << " users ("
            << ds.split_indices(SplitKind::Train).size() << " train, "
            << ds.split_indices(SplitKind::Valid).size() << " valid, "
            << ds.split_indices(SplitKind::Test).size() << " test) -> " << args.out
            << "\n";
}

// --- train ------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string split_file;
  std::string out_dir;
  std::string resume;
  std::size_t min_len = 5;
  TrainOptions opt;
  std::uint64_t patience = 3;
  bool no_reweight = false;
};

void run_train(const TrainArgs& args, const ModelOptions& model) {
  Hyperparams hp = model.resolve();
  TrainOptions opt = args.opt;
  opt.patience = args.patience == 0 ? kNoPatience : args.patience;
  opt.reweight = !args.no_reweight;

  Dataset ds = load_interactions(args.data, args.min_len);
  read_split_file(ds, args.split_file);
  ensure_dir(args.out_dir);

  FitResult res;
  if (!args.resume.empty()) {
    const Checkpoint ck = load_checkpoint(args.resume);
    res = fit_resume(ds, ck, opt);
  } else {
    hp.vocab = ds.vocab;
    hp.validate();
    res = fit(ds, hp, opt);
  }

  const std::string best_path = args.out_dir + "/best.ckpt";
  if (args.resume.empty() || res.improved || !fs::exists(best_path))
    save_checkpoint(res.best, best_path);
  save_checkpoint(checkpoint_from_state(res.last), args.out_dir + "/last.ckpt");
  write_file(args.out_dir + "/curves.csv", curve_csv(res.curves));

  WeightHistogram hist;
  for (const auto& [key, w] : res.last.weights.sorted_entries()) hist.add(w);
  write_file(args.out_dir + "/weights_hist.csv", histogram_csv(hist));

  auto kv = hyperparam_manifest(res.last.hp);
  kv.emplace_back("data", args.data);
  kv.emplace_back("split_file", args.split_file);
  kv.emplace_back("out", args.out_dir);
  kv.emplace_back("resume", args.resume.empty() ? "-" : args.resume);
  kv.emplace_back("min_len", std::to_string(args.min_len));
  kv.emplace_back("seed", std::to_string(opt.seed));
  kv.emplace_back("eval_every", std::to_string(opt.eval_every));
  kv.emplace_back("patience", std::to_string(args.patience));
  kv.emplace_back("max_epochs", std::to_string(opt.max_epochs));
  kv.emplace_back("threads", std::to_string(opt.threads));
  kv.emplace_back("reweight", opt.reweight ? "on" : "off");
  write_file(args.out_dir + "/manifest.txt", manifest_text("train", kv));

  std::cout << "trained " << res.last.epoch << " epochs (" << res.last.q
            << " steps), best validation recall@50 = "
            << fmt_double(res.last.best_metric) << " -> " << args.out_dir << "\n";
}

// --- evaluate ---------------------------------------------------------------

struct EvaluateArgs {
  std::string checkpoint;
  std::string data;
  std::string split_file;
  std::string out;
  std::vector<std::string> splits = {"test"};
  std::vector<std::size_t> p_list = {20, 50};
  std::size_t min_len = 5;
  int threads = 1;
};

void run_evaluate(const EvaluateArgs& args, const ModelOptions& model) {
  const Checkpoint ck = load_checkpoint(args.checkpoint);

  // Explicit model-shape flags must agree with the checkpoint.
  auto mismatch = [&](const char* name, std::size_t given, std::size_t stored) {
    if (model.opts.count(name) && model.opts.at(name)->count() > 0 && given != stored)
      throw Error(std::string("checkpoint/config hyperparameter mismatch: --") +
                  name + " = " + std::to_string(given) + " but checkpoint has " +
                  std::to_string(stored));
  };
  mismatch("d", model.hp.d, ck.hp.d);
  mismatch("d-hat", model.hp.d_hat, ck.hp.d_hat);
  mismatch("interests", model.hp.c, ck.hp.c);
  mismatch("max-len", model.hp.T, ck.hp.T);

  Dataset ds = load_interactions(args.data, args.min_len);
  read_split_file(ds, args.split_file);
  if (ds.vocab != ck.hp.vocab)
    throw DataError("dataset vocab " + std::to_string(ds.vocab) +
                    " does not match checkpoint vocab " + std::to_string(ck.hp.vocab));

  MetricsReport all;
  for (const std::string& name : args.splits) {
    SplitKind sk;
    if (name == "train")
      sk = SplitKind::Train;
    else if (name == "valid")
      sk = SplitKind::Valid;
    else if (name == "test")
      sk = SplitKind::Test;
    else
      throw Error("unknown split '" + name + "'");
    const MetricsReport rep = evaluate(ck.params, ck.hp, ds, sk, args.p_list,
                                       args.threads, ds.has_env_tags());
    all.entries.insert(all.entries.end(), rep.entries.begin(), rep.entries.end());
  }
  const std::string csv = metrics_csv(all);
  if (args.out.empty())
    std::cout << csv;
  else
    write_file(args.out, csv);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"de-correlated multi-interest sequential recommender"};
  app.require_subcommand(1);
  app.set_config("--config", "", "config file (key = value lines, one section per subcommand)")
      ->envname("SIMREC_CONFIG");
  app.allow_config_extras(false);

  GenerateArgs gen;
  CLI::App* cgen = app.add_subcommand("generate", "write a synthetic benchmark dataset");
  cgen->add_option("--out", gen.out_dir, "output directory")->required();
  cgen->add_option("--stable-topics", gen.cfg.stable_topics)->capture_default_str();
  cgen->add_option("--noisy-topics", gen.cfg.noisy_topics)->capture_default_str();
  cgen->add_option("--items-per-topic", gen.cfg.items_per_topic)->capture_default_str();
  cgen->add_option("--train-users", gen.cfg.train_users)->capture_default_str();
  cgen->add_option("--valid-users", gen.cfg.valid_users)->capture_default_str();
  cgen->add_option("--test-users", gen.cfg.test_users)->capture_default_str();
  cgen->add_option("--seq-len", gen.cfg.seq_len)->capture_default_str();
  cgen->add_option("--stable-frac", gen.cfg.stable_frac)->capture_default_str();
  cgen->add_option("--rho-train", gen.cfg.rho_train)->capture_default_str();
  cgen->add_option("--rho-test", gen.cfg.rho_test)->capture_default_str();
  cgen->add_option("--seed", gen.cfg.seed)->capture_default_str();

  SplitArgs sp;
  CLI::App* csplit = app.add_subcommand("split", "assign train/valid/test users");
  csplit->add_option("--data", sp.data, "interactions file")->required();
  csplit->add_option("--mode", sp.mode, "ood|random")
      ->check(CLI::IsMember({"ood", "random"}))
      ->capture_default_str();
  csplit->add_option("--out", sp.out, "split file to write")->required();
  csplit->add_option("--min-len", sp.min_len)->capture_default_str();
  csplit->add_option("--seed", sp.seed)->capture_default_str();

  TrainArgs tr;
  ModelOptions train_model;
  CLI::App* ctrain = app.add_subcommand("train", "train a model");
  ctrain->add_option("--data", tr.data, "interactions file")->required();
  ctrain->add_option("--split-file", tr.split_file, "split assignments")->required();
  ctrain->add_option("--out", tr.out_dir, "output directory")->required();
  ctrain->add_option("--resume", tr.resume, "checkpoint to resume from");
  ctrain->add_option("--min-len", tr.min_len)->capture_default_str();
  train_model.attach(ctrain);
  ctrain->add_option("--seed", tr.opt.seed)->capture_default_str();
  ctrain->add_option("--eval-every", tr.opt.eval_every,
                     "batches between validations (0 = per epoch)")
      ->capture_default_str();
  ctrain->add_option("--patience", tr.patience,
                     "validations without improvement before stopping (0 = never)")
      ->capture_default_str();
  ctrain->add_option("--max-epochs", tr.opt.max_epochs)->capture_default_str();
  ctrain->add_option("--threads", tr.opt.threads, "worker threads (1 = serial)")
      ->capture_default_str();
  ctrain->add_flag("--no-reweight", tr.no_reweight,
                   "disable the sample-weight (de-correlation) path");

  EvaluateArgs ev;
  ModelOptions eval_model;
  CLI::App* ceval = app.add_subcommand("evaluate", "compute retrieval metrics");
  ceval->add_option("--checkpoint", ev.checkpoint, "model checkpoint")->required();
  ceval->add_option("--data", ev.data, "interactions file")->required();
  ceval->add_option("--split-file", ev.split_file, "split assignments")->required();
  ceval->add_option("--out", ev.out, "metrics CSV (stdout when omitted)");
  ceval->add_option("--splits", ev.splits, "splits to evaluate")
      ->delimiter(',')
      ->capture_default_str();
  ceval->add_option("--p", ev.p_list, "cutoffs")->delimiter(',')->capture_default_str();
  ceval->add_option("--min-len", ev.min_len)->capture_default_str();
  ceval->add_option("--threads", ev.threads)->capture_default_str();
  eval_model.attach(ceval);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (cgen->parsed()) run_generate(gen);
    if (csplit->parsed()) run_split(sp);
    if (ctrain->parsed()) run_train(tr, train_model);
    if (ceval->parsed()) run_evaluate(ev, eval_model);
    return kExitOk;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const CheckpointError& e) {
    std::cerr << "checkpoint error: " << e.what() << "\n";
    return kExitData;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}
