// Copyright 2026 The cmvp Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmvp/orchestrator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <exception>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "byte_io.hpp"
#include "cmvp/theory.hpp"

namespace cmvp {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

namespace {

Index pick_rank(const std::vector<Index>& ranks, int k) {
  return ranks.size() == 1 ? ranks.front() : ranks.at(static_cast<std::size_t>(k));
}

}  // namespace

Index RunConfig::local_rank_of(int k) const { return pick_rank(local_rank, k); }
Index RunConfig::fused_rank_of(int k) const { return pick_rank(fused_rank, k); }

std::vector<LambdaStage> RunConfig::effective_schedule() const {
  if (!lambda_schedule.empty()) return lambda_schedule;
  // Last third of the rounds at 100.
  const int switch_round = rounds > 0 ? (2 * rounds + 2) / 3 + 1 : 1;
  return {{1, 1.0}, {switch_round, 100.0}};
}

double RunConfig::lambda_at(int round) const {
  double value = 0.0;
  for (const auto& stage : effective_schedule()) {
    if (round >= stage.start_round) value = stage.lambda;
  }
  return value;
}

void RunConfig::validate() const {
  const auto bad = [](const std::string& what) { fail(ErrorCode::kConfigError, what); };
  if (agents < 1) bad("agents must be positive");
  if (classes < 1) bad("classes must be positive");
  if (feature_dim < 1) bad("feature_dim must be positive");
  if (rounds < 0) bad("rounds must be non-negative");
  if (batch_size < 1) bad("batch_size must be positive");
  if (threads < 1) bad("threads must be positive");
  if (!(epsilon_sq > 0.0) || !std::isfinite(epsilon_sq)) bad("epsilon_sq must be positive");
  if (!(learning_rate > 0.0)) bad("learning_rate must be positive");
  if (weight_decay < 0.0) bad("weight_decay must be non-negative");
  if (!(direct_step > 0.0)) bad("direct_step must be positive");
  if (inner_steps && *inner_steps < 0) bad("inner_steps must be non-negative");
  if (early_stop_window < 0 || checkpoint_every < 0) bad("negative window or checkpoint cadence");
  for (const auto& h : hidden)
    if (h < 1) bad("hidden sizes must be positive");
  if (!agent_hidden.empty() && static_cast<int>(agent_hidden.size()) != agents)
    bad("agent_hidden needs one entry per agent");
  for (const auto* ranks : {&local_rank, &fused_rank}) {
    if (ranks->size() != 1 && static_cast<int>(ranks->size()) != classes)
      bad("ranks need one entry or one per class");
  }
  FusionConfig fc{feature_dim, {}, {}};
  for (int k = 0; k < classes; ++k) {
    fc.local_rank.push_back(local_rank_of(k));
    fc.fused_rank.push_back(fused_rank_of(k));
  }
  fc.validate(agents);
  int previous = 0;
  for (const auto& stage : lambda_schedule) {
    if (stage.start_round <= previous) bad("lambda schedule thresholds must increase from 1");
    if (!(stage.lambda >= 0.0) || !std::isfinite(stage.lambda)) bad("lambda must be non-negative");
    previous = stage.start_round;
  }
}

namespace {

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

std::vector<Index> read_ranks(const json& j) {
  if (j.is_array()) return j.get<std::vector<Index>>();
  return {j.get<Index>()};
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  RunConfig cfg;
  try {
    const json j = json::parse(json_text);
    if (!j.is_object()) fail(ErrorCode::kConfigError, "config must be a JSON object");
    static const char* kKnown[] = {"agents", "classes", "feature_dim", "hidden", "agent_hidden",
                                   "local_rank", "fused_rank", "epsilon_sq", "lambda_schedule",
                                   "inner_steps", "batch_size", "rounds", "learning_rate",
                                   "weight_decay", "optimizer", "seed", "mode", "direct_step",
                                   "threads", "early_stop", "checkpoint_every", "data"};
    for (const auto& [key, _] : j.items()) {
      if (std::find(std::begin(kKnown), std::end(kKnown), key) == std::end(kKnown))
        fail(ErrorCode::kConfigError, "unknown config key '" + key + "'");
    }
    read_opt(j, "agents", cfg.agents);
    read_opt(j, "classes", cfg.classes);
    read_opt(j, "feature_dim", cfg.feature_dim);
    read_opt(j, "hidden", cfg.hidden);
    read_opt(j, "agent_hidden", cfg.agent_hidden);
    cfg.local_rank = j.contains("local_rank") ? read_ranks(j.at("local_rank")) : std::vector<Index>{10};
    cfg.fused_rank = j.contains("fused_rank") ? read_ranks(j.at("fused_rank")) : std::vector<Index>{16};
    read_opt(j, "epsilon_sq", cfg.epsilon_sq);
    if (j.contains("lambda_schedule")) {
      for (const auto& stage : j.at("lambda_schedule")) {
        if (!stage.is_array() || stage.size() != 2)
          fail(ErrorCode::kConfigError, "lambda_schedule entries are [start_round, lambda]");
        cfg.lambda_schedule.push_back({stage[0].get<int>(), stage[1].get<double>()});
      }
    }
    if (j.contains("inner_steps") && !j.at("inner_steps").is_null())
      cfg.inner_steps = j.at("inner_steps").get<int>();
    read_opt(j, "batch_size", cfg.batch_size);
    read_opt(j, "rounds", cfg.rounds);
    read_opt(j, "learning_rate", cfg.learning_rate);
    read_opt(j, "weight_decay", cfg.weight_decay);
    if (j.contains("optimizer")) {
      const auto tag = j.at("optimizer").get<std::string>();
      if (tag == "adam") cfg.optimizer = OptimizerMethod::kAdam;
      else if (tag == "sgd") cfg.optimizer = OptimizerMethod::kSgd;
      else fail(ErrorCode::kConfigError, "optimizer must be adam or sgd");
    }
    read_opt(j, "seed", cfg.seed);
    if (j.contains("mode")) {
      const auto tag = j.at("mode").get<std::string>();
      if (tag == "encoder") cfg.mode = TrainMode::kEncoder;
      else if (tag == "direct") cfg.mode = TrainMode::kDirect;
      else fail(ErrorCode::kConfigError, "mode must be encoder or direct");
    }
    read_opt(j, "direct_step", cfg.direct_step);
    read_opt(j, "threads", cfg.threads);
    if (j.contains("early_stop")) {
      const auto& es = j.at("early_stop");
      read_opt(es, "tolerance", cfg.early_stop_tolerance);
      read_opt(es, "window", cfg.early_stop_window);
    }
    read_opt(j, "checkpoint_every", cfg.checkpoint_every);
    if (j.contains("data")) {
      const auto& d = j.at("data");
      auto& dc = cfg.data;
      read_opt(d, "latent_dim", dc.latent_dim);
      read_opt(d, "class_dims", dc.class_dims);
      read_opt(d, "agent_ranks", dc.agent_ranks);
      read_opt(d, "objects_per_class", dc.objects_per_class);
      read_opt(d, "holdout_per_class", dc.holdout_per_class);
      read_opt(d, "view_dim", dc.view_dim);
      read_opt(d, "noise_sigma", dc.noise_sigma);
      read_opt(d, "identity_views", dc.identity_views);
      read_opt(d, "beta_min", dc.beta_min);
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfigError, std::string("config parse error: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  const auto bytes = detail::read_file_bytes(path);
  return parse_run_config(std::string(bytes.begin(), bytes.end()));
}

std::string run_config_to_json(const RunConfig& cfg) {
  json j;
  j["agents"] = cfg.agents;
  j["classes"] = cfg.classes;
  j["feature_dim"] = cfg.feature_dim;
  j["hidden"] = cfg.hidden;
  if (!cfg.agent_hidden.empty()) j["agent_hidden"] = cfg.agent_hidden;
  j["local_rank"] = cfg.local_rank;
  j["fused_rank"] = cfg.fused_rank;
  j["epsilon_sq"] = cfg.epsilon_sq;
  json schedule = json::array();
  for (const auto& s : cfg.lambda_schedule) schedule.push_back({s.start_round, s.lambda});
  if (!cfg.lambda_schedule.empty()) j["lambda_schedule"] = schedule;
  if (cfg.inner_steps) j["inner_steps"] = *cfg.inner_steps;
  j["batch_size"] = cfg.batch_size;
  j["rounds"] = cfg.rounds;
  j["learning_rate"] = cfg.learning_rate;
  j["weight_decay"] = cfg.weight_decay;
  j["optimizer"] = cfg.optimizer == OptimizerMethod::kAdam ? "adam" : "sgd";
  j["seed"] = cfg.seed;
  j["mode"] = cfg.mode == TrainMode::kEncoder ? "encoder" : "direct";
  j["direct_step"] = cfg.direct_step;
  j["threads"] = cfg.threads;
  j["early_stop"] = {{"tolerance", cfg.early_stop_tolerance}, {"window", cfg.early_stop_window}};
  j["checkpoint_every"] = cfg.checkpoint_every;
  const auto& d = cfg.data;
  j["data"] = {{"latent_dim", d.latent_dim},           {"class_dims", d.class_dims},
               {"agent_ranks", d.agent_ranks},         {"objects_per_class", d.objects_per_class},
               {"holdout_per_class", d.holdout_per_class}, {"view_dim", d.view_dim},
               {"noise_sigma", d.noise_sigma},         {"identity_views", d.identity_views},
               {"beta_min", d.beta_min}};
  return j.dump(2) + "\n";
}

SyntheticSplit generate_synthetic(const RunConfig& cfg) {
  cfg.validate();
  const auto& dc = cfg.data;
  const Index latent = dc.latent_dim > 0 ? dc.latent_dim : cfg.feature_dim;
  std::vector<Index> class_dims = dc.class_dims;
  if (class_dims.empty()) {
    class_dims.assign(static_cast<std::size_t>(cfg.classes),
                      std::max<Index>(1, latent / (2 * cfg.classes)));
  }
  if (static_cast<int>(class_dims.size()) != cfg.classes)
    fail(ErrorCode::kConfigError, "data.class_dims needs one entry per class");
  Index total = 0;
  for (Index c : class_dims) total += c;
  std::vector<Index> ranks = dc.agent_ranks;
  if (ranks.empty()) ranks.assign(static_cast<std::size_t>(cfg.agents), total);
  if (static_cast<int>(ranks.size()) != cfg.agents)
    fail(ErrorCode::kConfigError, "data.agent_ranks needs one entry per agent");

  SyntheticSplit out;
  out.truth = generate_ground_truth(latent, class_dims, cfg.agents, ranks, derive_seed(cfg.seed, 1),
                                    dc.beta_min);
  DatasetParams params;
  params.objects_per_class = dc.objects_per_class + dc.holdout_per_class;
  params.view_dim = dc.view_dim;
  params.noise_sigma = dc.noise_sigma;
  params.identity_views = dc.identity_views;
  const MultiViewDataset full = generate_dataset(out.truth, params, derive_seed(cfg.seed, 2));
  auto split = split_holdout(full, dc.holdout_per_class);
  out.train = std::move(split.first);
  out.holdout = std::move(split.second);
  return out;
}

// ---------------------------------------------------------------------------
// Records

double RoundRecord::mean_total_loss() const {
  if (agents.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& a : agents) sum += a.loss.total;
  return sum / static_cast<double>(agents.size());
}

bool RoundRecord::bound_holds() const {
  return std::all_of(agents.begin(), agents.end(), [](const AgentRecord& a) { return a.bound_holds; });
}

std::string round_record_to_json(const RoundRecord& rec, bool include_timing) {
  json j;
  j["round"] = rec.round;
  j["lambda"] = rec.lambda;
  json agents = json::array();
  for (const auto& a : rec.agents) {
    agents.push_back({{"rate_expand", a.loss.rate_expand},
                      {"rate_compress", a.loss.rate_compress},
                      {"projection_penalty", a.loss.projection_penalty},
                      {"total", a.loss.total},
                      {"residual", a.residual},
                      {"residual_per_class", a.residual_per_class},
                      {"bound", a.bound},
                      {"slack", a.slack},
                      {"bound_holds", a.bound_holds}});
  }
  j["agents"] = std::move(agents);
  if (!rec.fused_distance.empty()) j["fused_distance"] = rec.fused_distance;
  j["rank_deficient"] = rec.rank_deficient;
  j["skipped_class"] = rec.skipped_class;
  if (include_timing) j["wall_seconds"] = rec.wall_seconds;
  return j.dump();
}

// ---------------------------------------------------------------------------
// Run state

namespace {

std::vector<BasisMessage> extract_messages(const RunConfig& cfg, int agent, const Matrix& z,
                                           const MembershipPartition& part, std::uint32_t round) {
  std::vector<BasisMessage> out;
  for (int k = 0; k < cfg.classes; ++k) {
    BasisMessage msg;
    msg.agent_id = static_cast<std::uint32_t>(agent);
    msg.class_id = static_cast<std::uint32_t>(k);
    msg.round = round;
    if (part.count(k) > 0) {
      auto local = extract_local_basis(part.select(z, k), cfg.local_rank_of(k));
      msg.basis = std::move(local.basis);
      msg.singular_values = std::move(local.singular_values);
    }
    // An empty basis marks a class the agent did not observe.
    out.push_back(std::move(msg));
  }
  return out;
}

Matrix current_features(const RunState& state, const AgentState& a) {
  if (state.cfg.mode == TrainMode::kDirect) return a.features.matrix();
  return forward(a.encoder, a.data.samples).matrix();
}

Matrix select_columns(const Matrix& m, std::span<const Index> cols) {
  Matrix out(m.rows(), static_cast<Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Index>(j)) = m.col(cols[j]);
  return out;
}

void train_agent(const RunConfig& cfg, AgentState& a, std::span<const ProjectionOperator> projectors,
                 double lambda) {
  const Index m = a.data.sample_count();
  const Index batch = std::min(cfg.batch_size, m);
  const int steps = cfg.inner_steps ? *cfg.inner_steps
                                    : static_cast<int>((m + cfg.batch_size - 1) / cfg.batch_size);
  const RateConfig rate = cfg.rate();
  std::vector<Index> order;
  Index cursor = m;  // forces a shuffle on the first step
  for (int s = 0; s < steps; ++s) {
    if (cursor + batch > m) {
      order = a.shuffle_rng.permutation(m);
      cursor = 0;
    }
    const std::span<const Index> cols(order.data() + cursor, static_cast<std::size_t>(batch));
    cursor += batch;
    std::vector<int> labels(cols.size());
    for (std::size_t j = 0; j < cols.size(); ++j)
      labels[j] = a.data.labels[static_cast<std::size_t>(cols[j])];
    const MembershipPartition part(std::move(labels), cfg.classes);

    if (cfg.mode == TrainMode::kDirect) {
      const FeatureMatrix zb(select_columns(a.features.matrix(), cols));
      const Matrix g = local_loss_gradient(zb.matrix(), part, projectors, lambda, rate);
      const FeatureMatrix updated = direct_feature_step(zb, g, cfg.direct_step);
      Matrix all = a.features.matrix();
      for (std::size_t j = 0; j < cols.size(); ++j) all.col(cols[j]) = updated.matrix().col(static_cast<Index>(j));
      a.features = FeatureMatrix(std::move(all));
    } else {
      ForwardCache cache;
      const FeatureMatrix zb = forward(a.encoder, select_columns(a.data.samples, cols), &cache);
      const Matrix g = local_loss_gradient(zb.matrix(), part, projectors, lambda, rate);
      const EncoderParams grads = backward(a.encoder, cache, g);
      optimizer_step(a.optimizer, a.encoder, grads);
    }
  }
}

/// Runs fn(agent_index) for every agent on `threads` workers with a static
/// round-robin assignment; rethrows the failure of the lowest agent index.
template <typename Fn>
void for_each_agent(int agents, int threads, Fn fn) {
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(agents));
  const int workers = std::max(1, std::min(threads, agents));
  const auto work = [&](int w) {
    for (int i = w; i < agents; i += workers) {
      try {
        fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::optional<FusedBasis> fuse_class(const RunState& state, int k) {
  std::vector<BasisMessage> msgs;
  for (const auto& msg : state.pending) {
    if (static_cast<int>(msg.class_id) != k) continue;
    if (msg.basis.dim() == 0) return std::nullopt;  // every agent must report the class
    msgs.push_back(msg);
  }
  if (static_cast<int>(msgs.size()) != state.cfg.agents) return std::nullopt;
  const Matrix concat = concatenate_bases(msgs);
  const Index rank = std::min<Index>(state.cfg.fused_rank_of(k), concat.cols());
  return fuse_bases(concat, rank);
}

}  // namespace

RunState initialize_run(const RunConfig& cfg, const MultiViewDataset& train,
                        const MultiViewDataset* holdout) {
  cfg.validate();
  train.validate();
  if (train.agent_count() != cfg.agents)
    fail(ErrorCode::kConfigError, "dataset has " + std::to_string(train.agent_count()) +
                                      " agents, config expects " + std::to_string(cfg.agents));
  if (train.class_count != cfg.classes)
    fail(ErrorCode::kConfigError, "dataset class count does not match config");
  if (holdout) {
    holdout->validate();
    if (holdout->agent_count() != cfg.agents || holdout->class_count != cfg.classes)
      fail(ErrorCode::kConfigError, "holdout set does not match config");
  }

  RunState state;
  state.cfg = cfg;
  if (holdout) state.holdout = *holdout;
  const RateConfig rate = cfg.rate();
  rate.validate();
  for (int i = 0; i < cfg.agents; ++i) {
    AgentState a;
    a.id = i;
    a.data = train.agents[static_cast<std::size_t>(i)];
    a.partition = membership_from_labels(a.data.labels, cfg.classes);
    for (int k = 0; k < cfg.classes; ++k) {
      const Index mk = a.partition.count(k);
      if (mk > 0 && mk < cfg.local_rank_of(k))
        fail(ErrorCode::kConfigError, "agent " + std::to_string(i) + " has fewer class-" +
                                          std::to_string(k) + " samples than p_k");
    }
    a.shuffle_rng = Rng(derive_seed(cfg.seed, 2000 + static_cast<std::uint64_t>(i)));
    a.init_seed = derive_seed(cfg.seed, 3000 + static_cast<std::uint64_t>(i));
    if (cfg.mode == TrainMode::kEncoder) {
      EncoderSpec spec;
      spec.input_dim = a.data.view_dim();
      spec.hidden = cfg.agent_hidden.empty() ? cfg.hidden : cfg.agent_hidden[static_cast<std::size_t>(i)];
      spec.output_dim = cfg.feature_dim;
      a.encoder = init_encoder(spec, a.init_seed);
      a.optimizer = make_optimizer(a.encoder, cfg.optimizer, cfg.learning_rate, cfg.weight_decay);
    } else {
      // Fixed random linear read-out of the samples as the starting point.
      Rng rng(a.init_seed);
      const Matrix map = rng.gaussian(cfg.feature_dim, a.data.view_dim(), 1.0);
      a.features = FeatureMatrix::normalized(map * a.data.samples);
    }
    state.agents.push_back(std::move(a));
  }

  state.fused.assign(static_cast<std::size_t>(cfg.classes), std::nullopt);
  state.projectors.assign(static_cast<std::size_t>(cfg.classes), ProjectionOperator::identity(cfg.feature_dim));
  for (const auto& a : state.agents) {
    auto msgs = extract_messages(cfg, a.id, current_features(state, a), a.partition, 0);
    for (auto& m : msgs) state.pending.push_back(std::move(m));
  }
  return state;
}

std::vector<std::optional<FusedBasis>> current_fusion(const RunState& state) {
  std::vector<std::optional<FusedBasis>> out;
  for (int k = 0; k < state.cfg.classes; ++k) {
    auto fused = fuse_class(state, k);
    if (!fused && state.fused[static_cast<std::size_t>(k)]) {
      fused = FusedBasis{*state.fused[static_cast<std::size_t>(k)], Vector(), false};
    }
    out.push_back(std::move(fused));
  }
  return out;
}

std::vector<ProjectionOperator> current_projectors(const RunState& state) {
  std::vector<ProjectionOperator> out;
  for (const auto& f : current_fusion(state)) {
    out.push_back(f ? ProjectionOperator(f->basis) : ProjectionOperator::identity(state.cfg.feature_dim));
  }
  return out;
}

std::vector<FeatureMatrix> agent_features(const RunState& state, const MultiViewDataset& ds) {
  require(ds.agent_count() == state.cfg.agents, ErrorCode::kDimensionMismatch,
          "dataset agent count does not match the run");
  std::vector<FeatureMatrix> out;
  for (int i = 0; i < state.cfg.agents; ++i) {
    const auto& a = state.agents[static_cast<std::size_t>(i)];
    if (state.cfg.mode == TrainMode::kDirect) {
      if (ds.agents[static_cast<std::size_t>(i)].sample_count() != a.features.sample_count())
        fail(ErrorCode::kMetricUnavailable, "direct mode has features for training samples only");
      out.push_back(a.features);
    } else {
      out.push_back(forward(a.encoder, ds.agents[static_cast<std::size_t>(i)].samples));
    }
  }
  return out;
}

std::vector<double> fused_subspace_distances(const RunState& state, const MultiViewDataset& ds) {
  const auto fusion = current_fusion(state);
  const auto features = agent_features(state, ds);
  std::vector<double> out;
  for (int k = 0; k < state.cfg.classes; ++k) {
    const auto& fk = fusion[static_cast<std::size_t>(k)];
    if (!fk) {
      out.push_back(1.0);
      continue;
    }
    double sum = 0.0;
    int used = 0;
    for (int i = 0; i < state.cfg.agents; ++i) {
      const auto part = membership_from_labels(ds.agents[static_cast<std::size_t>(i)].labels, state.cfg.classes);
      const Index p = std::min({state.cfg.local_rank_of(k), part.count(k), fk->basis.dim()});
      if (p == 0) continue;
      const auto local = extract_local_basis(part.select(features[static_cast<std::size_t>(i)].matrix(), k), p);
      sum += containment_distance(fk->basis, local.basis);
      ++used;
    }
    out.push_back(used ? sum / used : 1.0);
  }
  return out;
}

namespace {

// The samples each agent trains on, as one dataset.
MultiViewDataset training_set(const RunState& state) {
  MultiViewDataset ds;
  ds.class_count = state.cfg.classes;
  std::uint32_t max_obj = 0;
  for (const auto& a : state.agents) {
    ds.agents.push_back(a.data);
    for (auto o : a.data.object_ids) max_obj = std::max(max_obj, o + 1);
  }
  ds.object_labels.assign(max_obj, 0);
  for (const auto& a : state.agents)
    for (std::size_t j = 0; j < a.data.labels.size(); ++j) ds.object_labels[a.data.object_ids[j]] = a.data.labels[j];
  return ds;
}

}  // namespace

const RoundRecord& run_round(RunState& state) {
  const auto start = std::chrono::steady_clock::now();
  const RunConfig& cfg = state.cfg;
  const int round = state.round + 1;
  RoundRecord rec;
  rec.round = round;
  rec.lambda = cfg.lambda_at(round);

  // (1) fuse the previous round's messages
  rec.rank_deficient.assign(static_cast<std::size_t>(cfg.classes), false);
  rec.skipped_class.assign(static_cast<std::size_t>(cfg.classes), false);
  for (int k = 0; k < cfg.classes; ++k) {
    const auto uk = static_cast<std::size_t>(k);
    auto fused = fuse_class(state, k);
    if (fused) {
      rec.rank_deficient[uk] = fused->rank_deficient;
      state.projectors[uk] = ProjectionOperator(fused->basis);
      state.fused[uk] = std::move(fused->basis);
    } else {
      rec.skipped_class[uk] = true;
    }
  }

  // (2) local training, (3) extraction
  std::vector<std::vector<BasisMessage>> messages(static_cast<std::size_t>(cfg.agents));
  rec.agents.resize(static_cast<std::size_t>(cfg.agents));
  for_each_agent(cfg.agents, cfg.threads, [&](int i) {
    auto& a = state.agents[static_cast<std::size_t>(i)];
    train_agent(cfg, a, state.projectors, rec.lambda);
    const Matrix z = current_features(state, a);
    messages[static_cast<std::size_t>(i)] =
        extract_messages(cfg, i, z, a.partition, static_cast<std::uint32_t>(round));

    // (4) per-agent metrics
    AgentRecord& out = rec.agents[static_cast<std::size_t>(i)];
    const RateConfig rate = cfg.rate();
    out.loss = local_loss(z, a.partition, state.projectors, rec.lambda, rate);
    const TraceBoundReport tb = check_trace_bound(z, a.partition, state.projectors, rate);
    out.residual = tb.residual;
    out.residual_per_class = tb.residual_per_class;
    out.bound = tb.bound;
    out.slack = tb.slack;
    out.bound_holds = tb.holds();
  });
  state.pending.clear();
  for (auto& list : messages)
    for (auto& m : list) state.pending.push_back(std::move(m));
  state.round = round;

  if (state.holdout) {
    // direct mode only has features for the training samples
    rec.fused_distance = cfg.mode == TrainMode::kDirect ? fused_subspace_distances(state, training_set(state))
                                                        : fused_subspace_distances(state, *state.holdout);
  }

  for (const auto& a : rec.agents) {
    if (!std::isfinite(a.loss.total) || !std::isfinite(a.slack))
      fail(ErrorCode::kNumericalFailure, "non-finite round metrics in round " + std::to_string(round));
  }
  rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  state.loss_trail.push_back(rec.mean_total_loss());
  state.history.push_back(std::move(rec));
  return state.history.back();
}

namespace {

bool should_stop(const RunState& state) {
  const auto& cfg = state.cfg;
  const int w = cfg.early_stop_window;
  const auto& trail = state.loss_trail;
  if (w == 0 || static_cast<int>(trail.size()) <= w) return false;
  // Never stop before the last schedule stage had a full window.
  const int last_stage = cfg.effective_schedule().back().start_round;
  if (state.round < last_stage + w) return false;
  const double now = trail.back();
  const double then = trail[trail.size() - 1 - static_cast<std::size_t>(w)];
  return std::abs(now - then) / std::max(1.0, std::abs(then)) < cfg.early_stop_tolerance;
}

}  // namespace

void run(RunState& state, const std::string& checkpoint_dir) {
  namespace fs = std::filesystem;
  while (state.round < state.cfg.rounds && !state.converged) {
    run_round(state);
    state.converged = should_stop(state);
    const int every = state.cfg.checkpoint_every;
    if (!checkpoint_dir.empty() && every > 0 && state.round % every == 0) {
      write_checkpoint(state, (fs::path(checkpoint_dir) / ("round_" + std::to_string(state.round))).string());
    }
  }
  if (!checkpoint_dir.empty()) write_checkpoint(state, (fs::path(checkpoint_dir) / "final").string());
}

// ---------------------------------------------------------------------------
// Evaluation

EvalSummary evaluate(const RunState& state, const MultiViewDataset& ds) {
  const auto features = agent_features(state, ds);
  const auto projectors = current_projectors(state);
  const auto fusion = current_fusion(state);

  EvalSummary s;
  std::vector<LabeledFeatures> labeled;
  std::size_t hits = 0, total = 0;
  for (int i = 0; i < state.cfg.agents; ++i) {
    const auto& samples = ds.agents[static_cast<std::size_t>(i)];
    const auto cls = nearest_subspace_classify(features[static_cast<std::size_t>(i)].matrix(), projectors,
                                               &samples.labels);
    for (std::size_t j = 0; j < samples.labels.size(); ++j) hits += cls.predicted[j] == samples.labels[j];
    total += samples.labels.size();
    labeled.push_back({features[static_cast<std::size_t>(i)].matrix(), samples.labels, samples.object_ids});
  }
  s.acc = total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
  const auto stats = sis_dis_fisher(labeled);
  s.sis = stats.sis;
  s.dis = stats.dis;
  s.fisher_ratio = stats.fisher_ratio;
  s.cosine = block_cosine_stats(cosine_similarity_matrix(labeled));
  s.class_subspace_distance = fused_subspace_distances(state, ds);
  for (const auto& f : fusion) s.fused_rank_deficient.push_back(f && f->rank_deficient);
  return s;
}

std::string eval_summary_to_json(const EvalSummary& s) {
  json j;
  j["acc"] = s.acc;
  j["sis"] = s.sis ? json(*s.sis) : json(nullptr);
  j["dis"] = s.dis;
  j["fisher_ratio"] = std::isfinite(s.fisher_ratio) ? json(s.fisher_ratio) : json("inf");
  j["within_class_abs_cos"] = s.cosine.within_class;
  j["cross_class_abs_cos"] = s.cosine.cross_class;
  j["class_subspace_distance"] = s.class_subspace_distance;
  j["fused_rank_deficient"] = s.fused_rank_deficient;
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  detail::write_file_bytes(path.string(),
                           std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text(const std::filesystem::path& path) {
  const auto bytes = detail::read_file_bytes(path.string());
  return std::string(bytes.begin(), bytes.end());
}

}  // namespace

void write_checkpoint(const RunState& state, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIoError, "cannot create " + dir + ": " + ec.message());
  const fs::path root(dir);
  write_text(root / "config.json", run_config_to_json(state.cfg));

  json st;
  st["round"] = state.round;
  st["converged"] = state.converged;
  json carried = json::array();
  for (const auto& f : state.fused) carried.push_back(f.has_value());
  st["fused_in_force"] = carried;
  st["loss_trail"] = state.loss_trail;
  json agents = json::array();
  for (const auto& a : state.agents)
    agents.push_back({{"shuffle_rng", a.shuffle_rng.save_state()}, {"optimizer_step", a.optimizer.step}});
  st["agents"] = agents;
  write_text(root / "state.json", st.dump(2) + "\n");

  // Only non-empty messages are serializable; absent classes are implied.
  std::vector<BasisMessage> pending;
  for (const auto& m : state.pending)
    if (m.basis.dim() > 0) pending.push_back(m);
  write_basis_file((root / "messages.mcrb").string(), pending);

  std::vector<BasisMessage> fused;
  for (int k = 0; k < state.cfg.classes; ++k) {
    const auto& f = state.fused[static_cast<std::size_t>(k)];
    if (!f) continue;
    fused.push_back({kFusedAgentId, static_cast<std::uint32_t>(k), static_cast<std::uint32_t>(state.round), *f,
                     Vector::Zero(f->dim())});
  }
  write_basis_file((root / "fused.mcrb").string(), fused);

  if (state.cfg.mode == TrainMode::kEncoder) {
    for (const auto& a : state.agents) {
      const std::string stem = "agent_" + std::to_string(a.id);
      save_encoder(a.encoder, (root / (stem + ".enc")).string());
      if (!a.optimizer.first_moment.layers.empty()) {
        save_encoder(a.optimizer.first_moment, (root / (stem + ".m1.enc")).string());
        save_encoder(a.optimizer.second_moment, (root / (stem + ".m2.enc")).string());
      }
    }
  } else {
    MultiViewDataset feats = training_set(state);
    for (std::size_t i = 0; i < feats.agents.size(); ++i) feats.agents[i].samples = state.agents[i].features.matrix();
    save_dataset(feats, (root / "features.mcrd").string());
  }
}

RunState load_checkpoint(const std::string& dir, const MultiViewDataset& train,
                         const MultiViewDataset* holdout) {
  namespace fs = std::filesystem;
  const fs::path root(dir);
  const RunConfig cfg = parse_run_config(read_text(root / "config.json"));
  RunState state = initialize_run(cfg, train, holdout);
  json st;
  try {
    st = json::parse(read_text(root / "state.json"));
  } catch (const json::exception& e) {
    fail(ErrorCode::kIoError, std::string("bad state.json: ") + e.what());
  }
  json agent_st;
  try {
    state.round = st.at("round").get<int>();
    state.converged = st.at("converged").get<bool>();
    state.loss_trail = st.at("loss_trail").get<std::vector<double>>();
    agent_st = st.at("agents");
  } catch (const json::exception& e) {
    fail(ErrorCode::kIoError, std::string("bad state.json: ") + e.what());
  }
  if (!agent_st.is_array() || agent_st.size() != state.agents.size())
    fail(ErrorCode::kIoError, "state.json agent count mismatch");
  if (state.round < 0 || state.loss_trail.size() != static_cast<std::size_t>(state.round))
    fail(ErrorCode::kIoError, "state.json round and loss trail disagree");
  for (auto& a : state.agents) {
    const auto& entry = agent_st[static_cast<std::size_t>(a.id)];
    if (!entry.is_object() || !entry.contains("shuffle_rng") || !entry["shuffle_rng"].is_string() ||
        !a.shuffle_rng.restore_state(entry["shuffle_rng"].get<std::string>()))
      fail(ErrorCode::kIoError, "bad shuffle state in state.json");
  }

  if (cfg.mode == TrainMode::kEncoder) {
    for (auto& a : state.agents) {
      a.encoder = load_encoder((root / ("agent_" + std::to_string(a.id) + ".enc")).string());
      if (a.encoder.input_dim() != a.data.view_dim() || a.encoder.output_dim() != cfg.feature_dim)
        fail(ErrorCode::kConfigError, "checkpoint encoder does not match the dataset");
      a.optimizer = make_optimizer(a.encoder, cfg.optimizer, cfg.learning_rate, cfg.weight_decay);
      if (!a.optimizer.first_moment.layers.empty()) {
        const std::string stem = "agent_" + std::to_string(a.id);
        auto m1 = load_encoder((root / (stem + ".m1.enc")).string());
        auto m2 = load_encoder((root / (stem + ".m2.enc")).string());
        if (m1.parameter_count() != a.encoder.parameter_count() ||
            m2.parameter_count() != a.encoder.parameter_count())
          fail(ErrorCode::kConfigError, "checkpoint optimizer state does not match the encoder");
        a.optimizer.first_moment = std::move(m1);
        a.optimizer.second_moment = std::move(m2);
      }
      const auto& step = agent_st[static_cast<std::size_t>(a.id)].value("optimizer_step", json());
      if (!step.is_number_unsigned()) fail(ErrorCode::kIoError, "bad optimizer step in state.json");
      a.optimizer.step = step.get<std::uint64_t>();
    }
  } else {
    const auto feats = load_dataset((root / "features.mcrd").string());
    if (feats.agent_count() != cfg.agents) fail(ErrorCode::kConfigError, "checkpoint agent count mismatch");
    for (auto& a : state.agents) {
      const auto& m = feats.agents[static_cast<std::size_t>(a.id)].samples;
      if (m.cols() != a.data.sample_count() || m.rows() != cfg.feature_dim)
        fail(ErrorCode::kConfigError, "checkpoint features do not match the dataset");
      a.features = FeatureMatrix(m);
    }
  }

  state.fused.assign(static_cast<std::size_t>(cfg.classes), std::nullopt);
  for (auto& m : read_basis_file((root / "fused.mcrb").string())) {
    if (m.class_id >= static_cast<std::uint32_t>(cfg.classes) || m.basis.ambient_dim() != cfg.feature_dim)
      fail(ErrorCode::kCorruptMessage, "fused basis does not match the config");
    const auto k = m.class_id;
    state.projectors[k] = ProjectionOperator(m.basis);
    state.fused[k] = std::move(m.basis);
  }
  // Pending messages come back per (agent, class); classes an agent lacks stay empty.
  for (auto& m : state.pending) m.basis = OrthonormalBasis(), m.singular_values = Vector();
  for (auto& m : read_basis_file((root / "messages.mcrb").string())) {
    if (m.agent_id >= static_cast<std::uint32_t>(cfg.agents) || m.class_id >= static_cast<std::uint32_t>(cfg.classes))
      fail(ErrorCode::kCorruptMessage, "message does not match the config");
    auto& slot = state.pending[m.agent_id * static_cast<std::size_t>(cfg.classes) + m.class_id];
    slot = std::move(m);
  }
  for (auto& m : state.pending) m.round = static_cast<std::uint32_t>(state.round);
  return state;
}

}  // namespace cmvp
