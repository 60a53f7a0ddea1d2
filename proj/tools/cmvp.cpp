// Copyright 2026 The cmvp Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end. Uses only the C interface of libcmvp.

#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cmvp/cmvp.h"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitVerifyFailed = 2;

struct CliError {
  std::string message;
};

void check(int status, const char* what) {
  if (status != CMVP_OK) {
    throw CliError{std::string(what) + ": " + cmvp_status_name(status) + ": " + cmvp_last_error()};
  }
}

struct ConfigDeleter {
  void operator()(cmvp_config* p) const { cmvp_config_free(p); }
};
struct DatasetDeleter {
  void operator()(cmvp_dataset* p) const { cmvp_dataset_free(p); }
};
struct RunDeleter {
  void operator()(cmvp_run* p) const { cmvp_run_free(p); }
};
using ConfigPtr = std::unique_ptr<cmvp_config, ConfigDeleter>;
using DatasetPtr = std::unique_ptr<cmvp_dataset, DatasetDeleter>;
using RunPtr = std::unique_ptr<cmvp_run, RunDeleter>;

std::string take_string(char* s) {
  std::string out = s ? s : "";
  cmvp_free(s);
  return out;
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::string mode;
  std::optional<int> threads;
};

ConfigPtr load_config(const Common& c) {
  if (c.config.empty()) throw CliError{"--config is required"};
  cmvp_config* raw = nullptr;
  check(cmvp_config_load(c.config.c_str(), &raw), "loading config");
  ConfigPtr cfg(raw);
  if (c.seed) check(cmvp_config_set_seed(cfg.get(), *c.seed), "--seed");
  if (!c.mode.empty()) check(cmvp_config_set_mode(cfg.get(), c.mode.c_str()), "--mode");
  if (c.threads) check(cmvp_config_set_threads(cfg.get(), *c.threads), "--threads");
  return cfg;
}

void make_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw CliError{"cannot create " + dir + ": " + ec.message()};
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw CliError{"cannot write " + path.string()};
}

struct Datasets {
  DatasetPtr train;
  DatasetPtr holdout;  // may be null
};

Datasets obtain_data(const cmvp_config* cfg, const std::string& data_dir) {
  Datasets d;
  cmvp_dataset* raw = nullptr;
  if (!data_dir.empty()) {
    check(cmvp_dataset_load((fs::path(data_dir) / "train.mcrd").string().c_str(), &raw), "loading train.mcrd");
    d.train.reset(raw);
    const fs::path held = fs::path(data_dir) / "holdout.mcrd";
    if (fs::exists(held)) {
      check(cmvp_dataset_load(held.string().c_str(), &raw), "loading holdout.mcrd");
      d.holdout.reset(raw);
    }
    return d;
  }
  cmvp_dataset* held = nullptr;
  check(cmvp_dataset_generate(cfg, &raw, &held), "generating data");
  d.train.reset(raw);
  d.holdout.reset(held);
  return d;
}

int cmd_generate(const Common& c) {
  auto cfg = load_config(c);
  make_dir(c.out);
  auto data = obtain_data(cfg.get(), "");
  check(cmvp_dataset_save(data.train.get(), (fs::path(c.out) / "train.mcrd").string().c_str()), "saving");
  check(cmvp_dataset_save(data.holdout.get(), (fs::path(c.out) / "holdout.mcrd").string().c_str()), "saving");
  char* json = nullptr;
  check(cmvp_config_to_json(cfg.get(), &json), "config");
  write_text(fs::path(c.out) / "config.json", take_string(json));
  int agents = 0, classes = 0;
  size_t objects = 0;
  check(cmvp_dataset_shape(data.train.get(), &agents, &classes, &objects), "shape");
  std::printf("wrote %s (agents=%d classes=%d objects=%zu)\n", c.out.c_str(), agents, classes, objects);
  return kExitOk;
}

void print_eval(const cmvp_eval& e) {
  std::printf("acc=%.4f cross_abs_cos=%.4f within_abs_cos=%.4f mean_d_gr=%.4f max_d_gr=%.4f", e.acc,
              e.cross_class_abs_cos, e.within_class_abs_cos, e.mean_subspace_distance, e.max_subspace_distance);
  if (e.has_sis) std::printf(" sis=%.4f", e.sis);
  std::printf(" dis=%.4f fr=%.4g\n", e.dis, e.fisher_ratio);
}

int cmd_train(const Common& c, const std::string& data_dir) {
  auto cfg = load_config(c);
  make_dir(c.out);
  auto data = obtain_data(cfg.get(), data_dir);
  cmvp_run* raw = nullptr;
  check(cmvp_run_create(cfg.get(), data.train.get(), data.holdout.get(), &raw), "initializing run");
  RunPtr run(raw);
  check(cmvp_run_execute(run.get(), (fs::path(c.out) / "checkpoints").string().c_str()), "training");
  check(cmvp_run_write_log(run.get(), (fs::path(c.out) / "rounds.jsonl").string().c_str(), 0), "log");
  check(cmvp_run_write_log(run.get(), (fs::path(c.out) / "timing.jsonl").string().c_str(), 1), "log");
  int rounds = 0, holds = 0;
  check(cmvp_run_rounds(run.get(), &rounds), "rounds");
  check(cmvp_run_bounds_hold(run.get(), &holds), "bounds");
  std::printf("rounds=%d trace_bound=%s\n", rounds, holds ? "held" : "VIOLATED");
  const cmvp_dataset* eval_set = data.holdout ? data.holdout.get() : data.train.get();
  cmvp_eval e{};
  char* json = nullptr;
  const int st = cmvp_run_evaluate(run.get(), eval_set, &e, &json);
  if (st == CMVP_METRIC_UNAVAILABLE) {
    check(cmvp_run_evaluate(run.get(), data.train.get(), &e, &json), "evaluation");
  } else {
    check(st, "evaluation");
  }
  write_text(fs::path(c.out) / "summary.json", take_string(json));
  print_eval(e);
  return holds ? kExitOk : kExitVerifyFailed;
}

int cmd_report(const Common& c, const std::string& data_dir, std::string checkpoint) {
  auto cfg = load_config(c);
  make_dir(c.out);
  auto data = obtain_data(cfg.get(), data_dir);
  if (checkpoint.empty()) checkpoint = (fs::path(c.out) / "checkpoints" / "final").string();
  cmvp_run* raw = nullptr;
  check(cmvp_run_load_checkpoint(checkpoint.c_str(), data.train.get(), data.holdout.get(), &raw),
        "loading checkpoint");
  RunPtr run(raw);
  struct Target {
    const char* name;
    const cmvp_dataset* ds;
  };
  std::vector<Target> targets{{"train", data.train.get()}};
  if (data.holdout) targets.push_back({"holdout", data.holdout.get()});
  for (const auto& t : targets) {
    cmvp_eval e{};
    char* json = nullptr;
    const int st = cmvp_run_evaluate(run.get(), t.ds, &e, &json);
    if (st == CMVP_METRIC_UNAVAILABLE) {
      std::printf("%s: unavailable (%s)\n", t.name, cmvp_last_error());
      continue;
    }
    check(st, "evaluation");
    write_text(fs::path(c.out) / (std::string("report_") + t.name + ".json"), take_string(json));
    check(cmvp_run_export_heatmap(run.get(), t.ds, (fs::path(c.out) / (std::string("heatmap_") + t.name)).string().c_str()),
          "heatmap");
    std::printf("%s: ", t.name);
    print_eval(e);
  }
  return kExitOk;
}

int cmd_verify(const std::string& suite, std::uint64_t seed, int instances, int trials, const std::string& out) {
  bool ok = true;
  const bool all = suite == "all";
  if (!all && suite != "trace" && suite != "monotonicity" && suite != "consistency")
    throw CliError{"--suite must be all, trace, monotonicity or consistency"};
  if (all || suite == "trace") {
    cmvp_certification s{};
    check(cmvp_verify_trace_bound(instances, seed, &s), "trace bound");
    std::printf("trace_bound instances=%d violations=%d worst_relative_slack=%.3e\n", s.instances, s.violations,
                s.worst_relative_slack);
    ok &= s.violations == 0;
  }
  if (all || suite == "monotonicity") {
    cmvp_certification s{};
    check(cmvp_verify_monotonicity(instances, seed, &s), "monotonicity");
    std::printf("monotonicity instances=%d violations=%d worst_excess=%.3e\n", s.instances, s.violations,
                s.worst_excess);
    ok &= s.violations == 0;
  }
  if (all || suite == "consistency") {
    cmvp_consistency s{};
    char* report = nullptr;
    check(cmvp_verify_consistency(seed, trials, &s, &report), "consistency");
    const std::string text = take_string(report);
    if (!out.empty()) {
      make_dir(out);
      write_text(fs::path(out) / "consistency.txt", text);
    }
    const bool slope_ok = s.slope >= 0.8 && s.slope <= 1.2;
    const bool exact_ok = s.zero_noise_distance <= 1e-10;
    std::printf("consistency trials=%d violations=%d slope=%.4f beta=%.4f constant=%.4f zero_noise_d_gr=%.3e\n",
                s.trials, s.violations, s.slope, s.beta, s.constant, s.zero_noise_distance);
    ok &= s.violations == 0 && slope_ok && exact_ok;
  }
  std::printf("%s\n", ok ? "verification passed" : "verification FAILED");
  return ok ? kExitOk : kExitVerifyFailed;
}

struct CostArgs {
  std::uint64_t agents = 0, dim = 0, samples = 0;
  std::vector<std::uint64_t> local_rank, fused_rank;
  std::uint64_t classes = 0;
  bool measure = false;
};

std::vector<std::uint64_t> expand(const std::vector<std::uint64_t>& v, std::uint64_t classes, const char* name) {
  if (v.size() == 1) return std::vector<std::uint64_t>(classes, v.front());
  if (v.size() != classes) throw CliError{std::string(name) + " needs one value or one per class"};
  return v;
}

int cmd_cost(const Common& c, CostArgs a) {
  if (!c.config.empty()) {
    auto cfg = load_config(c);
    std::uint64_t agents = 0, dim = 0, samples = 0;
    std::size_t classes = 0;
    std::vector<std::uint64_t> p(4096), big_p(4096);
    check(cmvp_config_cost_shape(cfg.get(), &agents, &dim, &samples, p.data(), big_p.data(), p.size(), &classes),
          "config shape");
    p.resize(classes);
    big_p.resize(classes);
    if (a.agents == 0) a.agents = agents;
    if (a.dim == 0) a.dim = dim;
    if (a.samples == 0) a.samples = samples;
    if (a.classes == 0) a.classes = classes;
    if (a.local_rank.empty()) a.local_rank = p;
    if (a.fused_rank.empty()) a.fused_rank = big_p;
  }
  if (a.agents == 0 || a.dim == 0 || a.classes == 0 || a.local_rank.empty() || a.fused_rank.empty())
    throw CliError{"cost needs --config or --agents, --dim, --samples, --classes, --local-rank, --fused-rank"};
  const auto p = expand(a.local_rank, a.classes, "--local-rank");
  const auto big_p = expand(a.fused_rank, a.classes, "--fused-rank");
  std::uint64_t flops = 0;
  check(cmvp_cost_estimate(a.agents, a.dim, a.samples, p.data(), big_p.data(), p.size(), &flops), "cost");
  std::printf("agents=%" PRIu64 " dim=%" PRIu64 " samples=%" PRIu64 " classes=%" PRIu64 "\n", a.agents, a.dim,
              a.samples, a.classes);
  std::printf("predicted_flops=%" PRIu64 "\n", flops);
  if (a.measure) {
    double seconds = 0.0;
    check(cmvp_cost_measure(a.agents, a.dim, a.samples, p.data(), big_p.data(), p.size(),
                            c.seed.value_or(0), &seconds),
          "measure");
    std::printf("measured_seconds=%.6f\n", seconds);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Distributed multi-view subspace learning simulator"};
  app.require_subcommand(1);

  Common common;
  const auto add_common = [&](CLI::App* sub, bool with_mode) {
    sub->add_option("--config", common.config, "Run configuration (JSON)");
    sub->add_option("--seed", common.seed, "Override the config seed");
    sub->add_option("--out", common.out, "Output directory");
    if (with_mode) {
      sub->add_option("--mode", common.mode, "encoder or direct")->check(CLI::IsMember({"encoder", "direct"}));
      sub->add_option("--threads", common.threads, "Worker threads (results do not depend on it)")
          ->check(CLI::PositiveNumber);
    }
  };

  auto* generate = app.add_subcommand("generate", "Generate a synthetic multi-view dataset");
  add_common(generate, false);

  std::string data_dir;
  auto* train = app.add_subcommand("train", "Train all agents and write logs and checkpoints");
  add_common(train, true);
  train->add_option("--data", data_dir, "Directory with train.mcrd [and holdout.mcrd]");

  std::string suite = "all";
  int instances = 200, trials = 50;
  std::uint64_t verify_seed = 0;
  std::string verify_out;
  auto* verify = app.add_subcommand("verify", "Run the numerical certification suites");
  verify->add_option("--suite", suite, "all, trace, monotonicity or consistency");
  verify->add_option("--seed", verify_seed, "Seed of the random instances");
  verify->add_option("--instances", instances, "Random instances per certification")->check(CLI::PositiveNumber);
  verify->add_option("--trials", trials, "Trials per noise level")->check(CLI::PositiveNumber);
  verify->add_option("--out", verify_out, "Directory for the consistency table");
  verify->add_option("--threads", common.threads, "Accepted for uniformity; suites are single-threaded");

  std::string checkpoint;
  auto* report = app.add_subcommand("report", "Metrics and heatmaps from a checkpoint");
  add_common(report, true);
  report->add_option("--data", data_dir, "Directory with train.mcrd [and holdout.mcrd]");
  report->add_option("--checkpoint", checkpoint, "Checkpoint directory (default <out>/checkpoints/final)");

  CostArgs cost_args;
  auto* cost = app.add_subcommand("cost", "Per-round truncated SVD cost estimate");
  add_common(cost, false);
  cost->add_option("--agents", cost_args.agents, "N");
  cost->add_option("--dim", cost_args.dim, "d");
  cost->add_option("--samples", cost_args.samples, "M, total samples over all agents");
  cost->add_option("--classes", cost_args.classes, "K");
  cost->add_option("--local-rank", cost_args.local_rank, "p_k (one value or one per class)");
  cost->add_option("--fused-rank", cost_args.fused_rank, "P_k (one value or one per class)");
  cost->add_flag("--measure", cost_args.measure, "Also time one round on random features");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitError;
  }

  try {
    if (generate->parsed()) return cmd_generate(common);
    if (train->parsed()) return cmd_train(common, data_dir);
    if (verify->parsed()) return cmd_verify(suite, verify_seed, instances, trials, verify_out);
    if (report->parsed()) return cmd_report(common, data_dir, checkpoint);
    if (cost->parsed()) return cmd_cost(common, cost_args);
  } catch (const CliError& e) {
    std::fprintf(stderr, "error: %s\n", e.message.c_str());
    return kExitError;
  }
  return kExitError;
}
