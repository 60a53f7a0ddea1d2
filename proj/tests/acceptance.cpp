// Copyright 2026 The cmvp Authors
// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: one PASS/FAIL line per criterion, exit 2 if any fails.

#include <CLI11.hpp>
#include <json.hpp>

#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <regex>
#include <sstream>
#include <string>
#include <vector>

#include "cmvp/fusion.hpp"
#include "cmvp/orchestrator.hpp"
#include "cmvp/theory.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using namespace cmvp;

namespace {

struct Outcome {
  int id = 0;
  bool pass = false;
  double seconds = 0.0;
  double limit = 0.0;  // 0: no runtime limit
  std::string detail;
};

class Stopwatch {
 public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string run_command(const std::string& cmd, int& status) {
  std::string out;
  FILE* pipe = popen((cmd + " 2>&1").c_str(), "r");
  if (!pipe) {
    status = -1;
    return out;
  }
  std::array<char, 512> buf{};
  while (std::fgets(buf.data(), buf.size(), pipe)) out += buf.data();
  const int raw = pclose(pipe);
  status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  return out;
}

// Every training run in the suite reports its per-round bound checks here.
struct BoundLedger {
  int rounds = 0;
  int agent_checks = 0;
  int violations = 0;
  double worst_relative_slack = std::numeric_limits<double>::infinity();

  void check(double slack, double bound, bool holds) {
    ++agent_checks;
    if (!holds) ++violations;
    worst_relative_slack = std::min(worst_relative_slack, slack / std::max(1.0, bound));
  }

  void add(const RunState& s) {
    for (const auto& r : s.history) {
      ++rounds;
      for (const auto& a : r.agents) check(a.slack, a.bound, a.bound_holds);
    }
  }

  // rounds.jsonl written by the CLI
  void add_log(const fs::path& path) {
    std::ifstream in(path);
    for (std::string line; std::getline(in, line);) {
      if (line.empty()) continue;
      const auto rec = nlohmann::json::parse(line);
      ++rounds;
      for (const auto& a : rec.at("agents"))
        check(a.at("slack").get<double>(), a.at("bound").get<double>(), a.at("bound_holds").get<bool>());
    }
  }
};

struct TrainResult {
  EvalSummary eval;
  double seconds = 0.0;
  int rounds = 0;
};

TrainResult train_and_evaluate(const RunConfig& cfg, BoundLedger& ledger) {
  Stopwatch sw;
  const auto data = generate_synthetic(cfg);
  auto state = initialize_run(cfg, data.train, &data.holdout);
  run(state);
  ledger.add(state);
  TrainResult out;
  out.eval = evaluate(state, data.holdout);
  out.rounds = state.round;
  out.seconds = sw.seconds();
  return out;
}

double mean(const std::vector<double>& v) {
  return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// ---------------------------------------------------------------------------

constexpr std::uint64_t kCertSeed = 20260101;

Outcome criterion2() {
  Outcome o{2};
  o.limit = 10;
  Stopwatch sw;
  const auto s = certify_rate_monotonicity(200, kCertSeed);
  o.seconds = sw.seconds();
  o.pass = s.instances >= 200 && s.violations == 0 && s.worst_excess <= kMonotonicityTol;
  o.detail = "instances=" + std::to_string(s.instances) + " violations=" + std::to_string(s.violations) +
             " worst_excess=" + fmt("%.3e", s.worst_excess);
  return o;
}

Outcome criterion3() {
  Outcome o{3};
  o.limit = 120;
  Stopwatch sw;
  ConsistencyParams params;  // N=4, d=32, R=8, r_i=4
  params.noise_grid.insert(params.noise_grid.begin(), 0.0);
  params.trials = 50;
  params.seed = 7;
  const auto rep = fusion_consistency_experiment(params);
  o.seconds = sw.seconds();
  const double zero = rep.max_distance.front();
  o.pass = rep.violations == 0 && rep.slope >= 0.8 && rep.slope <= 1.2 && zero <= 1e-10 &&
           rep.trials.size() == 300u;
  o.detail = "trials=" + std::to_string(rep.trials.size()) + " violations=" + std::to_string(rep.violations) +
             " slope=" + fmt("%.4f", rep.slope) + " beta=" + fmt("%.4f", rep.beta) +
             " zero_noise_d_gr=" + fmt("%.2e", zero);
  return o;
}

Outcome criterion4() {
  Outcome o{4};
  o.limit = 60;
  Stopwatch sw;
  double worst_features = 0.0, worst_params = 0.0;
  const int seeds = 20;
  for (int s = 0; s < seeds; ++s) {
    const auto seed = static_cast<std::uint64_t>(1000 + s);
    // features
    const Index d = 4 + s % 5;
    const Index m = 10 + s % 7;
    const int k = 1 + s % 3;
    const Matrix z = test::unit_columns(seed, d, m);
    std::vector<int> labels(static_cast<std::size_t>(m));
    for (Index j = 0; j < m; ++j) labels[static_cast<std::size_t>(j)] = static_cast<int>(j % k);
    const MembershipPartition part(labels, k);
    std::vector<ProjectionOperator> proj;
    for (int c = 0; c < k; ++c)
      proj.emplace_back(OrthonormalBasis(test::random_orthonormal(seed * 31 + c, d, 1 + c % (d - 1))));
    const RateConfig cfg{0.5, d};
    const double lambda = 0.1 * (s % 4);
    const auto f = [&](const Matrix& x) { return local_loss(x, part, proj, lambda, cfg).total; };
    worst_features = std::max(worst_features,
                              test::relative_error(local_loss_gradient(z, part, proj, lambda, cfg),
                                                   test::central_difference(f, z, 1e-5)));
    // encoder parameters
    EncoderSpec spec;
    spec.input_dim = 5;
    spec.hidden = {6, 4};
    spec.output_dim = 3;
    const Matrix x = test::gaussian(seed + 7, 5, 6);
    // The loss is undefined where every hidden unit of a sample is dead; redraw
    // the initialization until the network's output can be normalized.
    EncoderParams params;
    for (std::uint64_t draw = 0;; ++draw) {
      params = init_encoder(spec, seed + 100000 * draw);
      for (std::size_t l = 0; l + 1 < params.layers.size(); ++l) params.layers[l].bias.setConstant(0.1);
      if (test::code_of([&] { forward(params, x); }) == ErrorCode::kOk) break;
    }
    const MembershipPartition part2(std::vector<int>{0, 1, 0, 1, 1, 0}, 2);
    const std::vector<ProjectionOperator> proj2{
        ProjectionOperator(OrthonormalBasis(test::random_orthonormal(seed + 11, 3, 1))),
        ProjectionOperator(OrthonormalBasis(test::random_orthonormal(seed + 13, 3, 2)))};
    worst_params = std::max(worst_params,
                            test::encoder_gradient_error(params, x, part2, proj2, 1.0, RateConfig{0.5, 3}, 1e-6));
  }
  o.seconds = sw.seconds();
  o.pass = worst_features <= 1e-5 && worst_params <= 1e-4;
  o.detail = "seeds=" + std::to_string(seeds) + " features_rel_err=" + fmt("%.2e", worst_features) +
             " params_rel_err=" + fmt("%.2e", worst_params);
  return o;
}

Outcome criterion5(const RunConfig& cfg, BoundLedger& ledger, TrainResult& result) {
  Outcome o{5};
  o.limit = 300;
  result = train_and_evaluate(cfg, ledger);
  o.seconds = result.seconds;
  const auto& e = result.eval;
  const double worst = *std::max_element(e.class_subspace_distance.begin(), e.class_subspace_distance.end());
  o.pass = e.acc >= 0.9 && e.cosine.cross_class <= 0.15 && e.cosine.within_class <= 0.9 && worst <= 0.2;
  o.detail = "rounds=" + std::to_string(result.rounds) + " acc=" + fmt("%.4f", e.acc) +
             " cross_abs_cos=" + fmt("%.4f", e.cosine.cross_class) +
             " within_abs_cos=" + fmt("%.4f", e.cosine.within_class) + " d_gr=[";
  for (std::size_t k = 0; k < e.class_subspace_distance.size(); ++k)
    o.detail += (k ? "," : "") + fmt("%.4f", e.class_subspace_distance[k]);
  o.detail += "]";
  return o;
}

Outcome criterion6(const RunConfig& cfg, BoundLedger& ledger, const TrainResult& base) {
  Outcome o{6};
  Stopwatch sw;
  std::vector<double> coop, indep;
  for (std::uint64_t s = 0; s < 5; ++s) {
    RunConfig c = cfg;
    c.seed = cfg.seed + s;
    coop.push_back(s == 0 ? mean(base.eval.class_subspace_distance)
                          : mean(train_and_evaluate(c, ledger).eval.class_subspace_distance));
    c.lambda_schedule = {{1, 0.0}};
    indep.push_back(mean(train_and_evaluate(c, ledger).eval.class_subspace_distance));
  }
  o.seconds = sw.seconds();
  o.pass = mean(indep) > mean(coop);
  o.detail = "mean_d_gr lambda_sched=" + fmt("%.4f", mean(coop)) + " lambda0=" + fmt("%.4f", mean(indep)) +
             " (5 seeds)";
  return o;
}

Outcome criterion7(const std::string& cli, const std::string& config, const fs::path& out, BoundLedger& ledger) {
  Outcome o{7};
  Stopwatch sw;
  bool ok = true;
  std::string detail;
  for (const char* mode : {"encoder", "direct"}) {
    std::vector<std::string> logs;
    for (int threads : {1, 3}) {
      const fs::path dir = out / ("determinism_" + std::string(mode) + "_t" + std::to_string(threads));
      int status = 0;
      run_command(cli + " train --config " + config + " --mode " + mode + " --threads " +
                      std::to_string(threads) + " --out " + dir.string(),
                  status);
      // exit 2 flags a bound violation, which criterion 1 accounts for
      if (status != 0 && status != 2) ok = false;
      if (threads == 1) ledger.add_log(dir / "rounds.jsonl");
      logs.push_back(slurp(dir / "rounds.jsonl"));
    }
    const bool same = !logs[0].empty() && logs[0] == logs[1];
    ok = ok && same;
    detail += std::string(detail.empty() ? "" : " ") + mode + "=" + (same ? "identical" : "DIFFERENT") + "(" +
              std::to_string(logs[0].size()) + "B)";
  }
  o.seconds = sw.seconds();
  o.pass = ok;
  o.detail = detail;
  return o;
}

Outcome criterion8(const std::string& cli) {
  Outcome o{8};
  Stopwatch sw;
  struct Case {
    std::uint64_t n, d, m, k, p, big_p;
  };
  const std::vector<Case> cases{{6, 64, 4800, 10, 10, 16}, {1, 5, 7, 1, 1, 1}, {3, 16, 480, 4, 4, 6}};
  bool ok = true;
  for (const auto& c : cases) {
    // hand arithmetic
    std::uint64_t expect = 0;
    for (std::uint64_t k = 0; k < c.k; ++k) expect += c.m * c.d * c.p + c.n * c.d * c.p * c.big_p;
    int status = 0;
    const auto text = run_command(cli + " cost --agents " + std::to_string(c.n) + " --dim " + std::to_string(c.d) +
                                      " --samples " + std::to_string(c.m) + " --classes " + std::to_string(c.k) +
                                      " --local-rank " + std::to_string(c.p) + " --fused-rank " +
                                      std::to_string(c.big_p),
                                  status);
    std::smatch match;
    const bool found = std::regex_search(text, match, std::regex("predicted_flops=([0-9]+)"));
    const bool equal = status == 0 && found && std::stoull(match[1]) == expect;
    ok = ok && equal;
    o.detail += (o.detail.empty() ? "" : " ") + std::to_string(expect) + (equal ? "=ok" : "=MISMATCH");
  }
  o.seconds = sw.seconds();
  o.pass = ok;
  return o;
}

Outcome criterion9() {
  Outcome o{9};
  o.limit = 10;
  Stopwatch sw;
  Rng rng(99);
  int roundtrip_fail = 0, corrupt_accepted = 0, fuzz_other = 0, fuzz_accepted = 0;
  auto random_message = [&](std::uint64_t seed) {
    const Index d = 1 + static_cast<Index>(seed % 24);
    const Index p = 1 + static_cast<Index>((seed / 24) % static_cast<std::uint64_t>(d));
    BasisMessage m;
    m.agent_id = static_cast<std::uint32_t>(seed * 2654435761u);
    m.class_id = static_cast<std::uint32_t>(seed % 7);
    m.round = static_cast<std::uint32_t>(seed);
    m.basis = OrthonormalBasis(test::random_orthonormal(seed, d, p));
    m.singular_values = test::gaussian(seed + 1, p, 1).col(0).cwiseAbs();
    return m;
  };
  auto rejects = [](const std::vector<std::uint8_t>& b) {
    try {
      deserialize_basis(b);
    } catch (const Error& e) {
      return e.code() == ErrorCode::kCorruptMessage;
    }
    return false;
  };
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto msg = random_message(s);
    const auto bytes = serialize_basis(msg);
    const auto back = deserialize_basis(bytes);
    if (serialize_basis(back) != bytes || back.agent_id != msg.agent_id || back.round != msg.round)
      ++roundtrip_fail;
    // structural corruption
    std::vector<std::vector<std::uint8_t>> bad;
    bad.emplace_back(bytes.begin(), bytes.begin() + static_cast<long>(s % bytes.size()));
    auto b = bytes;
    b[s % 4] ^= 0x20;
    bad.push_back(b);
    b = bytes;
    b[4] = 7;
    bad.push_back(b);
    b = bytes;
    b.push_back(0);
    bad.push_back(b);
    b = bytes;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    std::memcpy(b.data() + kBasisHeaderBytes + 8 * (s % static_cast<std::uint64_t>(msg.basis.dim())), &nan, 8);
    bad.push_back(b);
    b = bytes;
    const double two = 2.0;
    std::memcpy(b.data() + kBasisHeaderBytes, &two, 8);
    bad.push_back(b);
    for (const auto& x : bad)
      if (!rejects(x)) ++corrupt_accepted;
  }
  for (int t = 0; t < 1000; ++t) {
    auto bytes = serialize_basis(random_message(static_cast<std::uint64_t>(t) + 500));
    const int edits = 1 + static_cast<int>(rng.uniform() * 8);
    for (int e = 0; e < edits; ++e) {
      const double kind = rng.uniform();
      const auto pos = static_cast<std::size_t>(rng.uniform() * static_cast<double>(bytes.size()));
      if (kind < 0.6 && !bytes.empty()) {
        bytes[std::min(pos, bytes.size() - 1)] = static_cast<std::uint8_t>(rng.uniform() * 256);
      } else if (kind < 0.8) {
        bytes.resize(std::min(pos, bytes.size()));
      } else {
        bytes.insert(bytes.begin() + static_cast<long>(std::min(pos, bytes.size())),
                     static_cast<std::uint8_t>(rng.uniform() * 256));
      }
    }
    try {
      const auto m = deserialize_basis(bytes);
      if (OrthonormalBasis::orthonormality_error(m.basis.matrix()) > 1e-8) ++fuzz_other;
      ++fuzz_accepted;
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kCorruptMessage) ++fuzz_other;
    } catch (...) {
      ++fuzz_other;
    }
  }
  o.seconds = sw.seconds();
  o.pass = roundtrip_fail == 0 && corrupt_accepted == 0 && fuzz_other == 0;
  o.detail = "roundtrip_fail=" + std::to_string(roundtrip_fail) + " corrupt_accepted=" +
             std::to_string(corrupt_accepted) + " fuzz=1000 fuzz_unexpected=" + std::to_string(fuzz_other) +
             " fuzz_valid=" + std::to_string(fuzz_accepted);
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cmvp acceptance suite"};
  std::string out = "acceptance_out", cli, config;
  app.add_option("--out", out, "Scratch directory");
  app.add_option("--cli", cli, "Path to the cmvp executable")->required();
  app.add_option("--config", config, "End-to-end run configuration")->required();
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(out);

  std::vector<Outcome> results;
  auto note = [&](const Outcome& o) {
    std::cerr << "[acceptance] criterion " << o.id << " done in " << fmt("%.1f", o.seconds) << " s\n";
    results.push_back(o);
  };

  try {
    const RunConfig cfg = load_run_config(config);
    BoundLedger ledger;

    Stopwatch sw1;
    const auto cert = certify_trace_bound(200, kCertSeed);
    const double cert_seconds = sw1.seconds();

    note(criterion2());
    note(criterion3());
    note(criterion4());
    TrainResult base;
    note(criterion5(cfg, ledger, base));
    note(criterion6(cfg, ledger, base));
    note(criterion7(cli, config, out, ledger));
    note(criterion8(cli));
    note(criterion9());

    Outcome c1{1};
    c1.limit = 30;
    c1.seconds = cert_seconds;
    c1.pass = cert.instances >= 200 && cert.violations == 0 && cert.worst_relative_slack >= -1e-8 &&
              ledger.violations == 0 && ledger.worst_relative_slack >= -1e-8;
    c1.detail = "instances=" + std::to_string(cert.instances) + " violations=" + std::to_string(cert.violations) +
                " worst_relative_slack=" + fmt("%.3e", cert.worst_relative_slack) +
                " training_rounds=" + std::to_string(ledger.rounds) + " agent_checks=" +
                std::to_string(ledger.agent_checks) + " training_violations=" + std::to_string(ledger.violations) +
                " training_worst_relative_slack=" + fmt("%.3e", ledger.worst_relative_slack);
    results.insert(results.begin(), c1);
  } catch (const std::exception& e) {
    std::cerr << "acceptance aborted: " << e.what() << "\n";
    return 1;
  }

  bool all = true;
  std::ofstream summary(fs::path(out) / "acceptance.txt");
  for (auto& o : results) {
    const bool in_time = o.limit <= 0 || o.seconds < o.limit;
    const bool pass = o.pass && in_time;
    all = all && pass;
    std::string line = "criterion " + std::to_string(o.id) + ": " + (pass ? "PASS" : "FAIL") + "  " + o.detail +
                       "  time=" + fmt("%.2f", o.seconds) + "s";
    if (o.limit > 0) line += fmt(" (limit %.0fs)", o.limit);
    if (!in_time) line += " TOO SLOW";
    std::cout << line << "\n";
    summary << line << "\n";
  }
  std::cout << (all ? "acceptance: all criteria passed" : "acceptance: FAILED") << std::endl;
  return all ? 0 : 2;
}
