// Copyright 2026 The cmvp Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef CMVP_ORCHESTRATOR_HPP
#define CMVP_ORCHESTRATOR_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cmvp/coding_rate.hpp"
#include "cmvp/encoder.hpp"
#include "cmvp/fusion.hpp"
#include "cmvp/metrics.hpp"
#include "cmvp/rng.hpp"
#include "cmvp/synth_data.hpp"

namespace cmvp {

enum class TrainMode { kEncoder, kDirect };

struct LambdaStage {
  int start_round = 1;  // first round (1-based) using this value
  double lambda = 0.0;
};

/// Synthetic data used by `generate` and by runs without an external dataset.
struct DataConfig {
  Index latent_dim = 0;               // 0: feature_dim
  std::vector<Index> class_dims;      // empty: feature_dim / (2K) per class, at least 1
  std::vector<Index> agent_ranks;     // empty: every agent covers the whole of S*
  Index objects_per_class = 40;       // training objects
  Index holdout_per_class = 10;       // extra objects kept for evaluation
  Index view_dim = 0;                 // 0: latent_dim
  double noise_sigma = 0.0;
  bool identity_views = false;
  double beta_min = kDefaultBetaMin;
};

struct RunConfig {
  int agents = 0;
  int classes = 0;
  Index feature_dim = 0;
  std::vector<Index> hidden{64, 64};
  std::vector<std::vector<Index>> agent_hidden;  // optional per-agent override
  std::vector<Index> local_rank;                 // p_k, one entry or one per class
  std::vector<Index> fused_rank;                 // P_k, one entry or one per class
  double epsilon_sq = 0.5;
  std::vector<LambdaStage> lambda_schedule;      // empty: 1.0, then 100.0 for the last third
  std::optional<int> inner_steps;                // unset: ceil(m_i / batch)
  Index batch_size = 128;
  int rounds = 0;
  double learning_rate = 1e-3;
  double weight_decay = 1e-5;
  OptimizerMethod optimizer = OptimizerMethod::kAdam;
  std::uint64_t seed = 0;
  TrainMode mode = TrainMode::kEncoder;
  double direct_step = 0.05;
  int threads = 1;
  double early_stop_tolerance = 1e-6;
  int early_stop_window = 10;                    // 0 disables early stopping
  int checkpoint_every = 0;                      // 0: final checkpoint only
  DataConfig data;

  void validate() const;
  double lambda_at(int round) const;
  std::vector<LambdaStage> effective_schedule() const;
  Index local_rank_of(int k) const;
  Index fused_rank_of(int k) const;
  RateConfig rate() const { return {epsilon_sq, feature_dim}; }
};

RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::string& path);
std::string run_config_to_json(const RunConfig& cfg);

/// Builds ground truth and the train/holdout split described by cfg.data.
struct SyntheticSplit {
  GroundTruth truth;
  MultiViewDataset train;
  MultiViewDataset holdout;
};
SyntheticSplit generate_synthetic(const RunConfig& cfg);

struct AgentRecord {
  LocalLossValue loss;
  double residual = 0.0;                 // eps_i
  std::vector<double> residual_per_class;  // eps_{i,k}
  double bound = 0.0;
  double slack = 0.0;
  bool bound_holds = true;
};

struct RoundRecord {
  int round = 0;
  double lambda = 0.0;
  std::vector<AgentRecord> agents;
  std::vector<double> fused_distance;     // per class; empty without holdout data
  std::vector<bool> rank_deficient;       // per class, fusion used this round
  std::vector<bool> skipped_class;        // per class, projector carried over
  double wall_seconds = 0.0;              // not part of the deterministic log

  double mean_total_loss() const;
  bool bound_holds() const;
};

/// One JSON object per line. Timing is opt-in so logs compare byte-for-byte.
std::string round_record_to_json(const RoundRecord& rec, bool include_timing = false);

struct AgentState {
  int id = 0;
  AgentSamples data;
  MembershipPartition partition;
  EncoderParams encoder;           // encoder mode
  OptimizerState optimizer;
  FeatureMatrix features;          // direct mode: the optimized variables
  Rng shuffle_rng{0};
  std::uint64_t init_seed = 0;
};

struct RunState {
  RunConfig cfg;
  std::vector<AgentState> agents;
  std::vector<BasisMessage> pending;               // agent-major, one per (agent, class)
  std::vector<std::optional<OrthonormalBasis>> fused;  // in force for the next round
  std::vector<ProjectionOperator> projectors;
  std::optional<MultiViewDataset> holdout;
  std::vector<RoundRecord> history;
  std::vector<double> loss_trail;  // mean total loss per completed round, kept across resumes
  int round = 0;
  bool converged = false;
};

RunState initialize_run(const RunConfig& cfg, const MultiViewDataset& train,
                        const MultiViewDataset* holdout = nullptr);

/// Fuse, train, extract, record. Appends to state.history and returns the record.
const RoundRecord& run_round(RunState& state);

/// Rounds until cfg.rounds or early stop; writes checkpoints under
/// checkpoint_dir when non-empty.
void run(RunState& state, const std::string& checkpoint_dir = {});

/// Features of every agent for the given samples (direct mode: own training features only).
std::vector<FeatureMatrix> agent_features(const RunState& state, const MultiViewDataset& ds);

/// Fusion of the pending messages, falling back to the basis in force for
/// classes that cannot be fused. Entries without any basis stay empty.
std::vector<std::optional<FusedBasis>> current_fusion(const RunState& state);
std::vector<ProjectionOperator> current_projectors(const RunState& state);

/// Per class: mean over agents of the containment distance between the fused
/// basis and the top-p_k left singular subspace of the agent's class features.
std::vector<double> fused_subspace_distances(const RunState& state, const MultiViewDataset& ds);

EvalSummary evaluate(const RunState& state, const MultiViewDataset& ds);
std::string eval_summary_to_json(const EvalSummary& s);

/// Directory with config.json, state.json, messages.mcrb, fused.mcrb and
/// agent_<i>.enc plus Adam moments agent_<i>.m1.enc and agent_<i>.m2.enc
/// (encoder mode) or features.mcrd (direct mode).
void write_checkpoint(const RunState& state, const std::string& dir);
RunState load_checkpoint(const std::string& dir, const MultiViewDataset& train,
                         const MultiViewDataset* holdout = nullptr);

}  // namespace cmvp

#endif  // CMVP_ORCHESTRATOR_HPP
