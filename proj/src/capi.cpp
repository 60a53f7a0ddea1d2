// Copyright 2026 The cmvp Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmvp/cmvp.h"

#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <new>
#include <string>

#include "byte_io.hpp"
#include "cmvp/fusion.hpp"
#include "cmvp/metrics.hpp"
#include "cmvp/orchestrator.hpp"
#include "cmvp/theory.hpp"

struct cmvp_config {
  cmvp::RunConfig cfg;
};

struct cmvp_dataset {
  cmvp::MultiViewDataset ds;
};

struct cmvp_run {
  cmvp::RunState state;
};

namespace {

thread_local std::string g_last_error;

template <typename Fn>
int guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return CMVP_OK;
  } catch (const cmvp::Error& e) {
    g_last_error = e.what();
    return static_cast<int>(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return CMVP_INTERNAL_ERROR;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return CMVP_INTERNAL_ERROR;
  } catch (...) {
    g_last_error = "unknown failure";
    return CMVP_INTERNAL_ERROR;
  }
}

void need(const void* p, const char* what) {
  if (!p) cmvp::fail(cmvp::ErrorCode::kInvalidArgument, std::string(what) + " is null");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.data(), s.size() + 1);
  return out;
}

cmvp::CostConfig cost_config(uint64_t agents, uint64_t d, uint64_t m, const uint64_t* p,
                             const uint64_t* big_p, size_t classes) {
  if (classes > 0) {
    need(p, "local_rank");
    need(big_p, "fused_rank");
  }
  cmvp::CostConfig cfg{agents, d, m, {}, {}};
  cfg.local_rank.assign(p, p + classes);
  cfg.fused_rank.assign(big_p, big_p + classes);
  return cfg;
}

}  // namespace

extern "C" {

const char* cmvp_last_error(void) { return g_last_error.c_str(); }

const char* cmvp_status_name(int status) {
  if (status == CMVP_INTERNAL_ERROR) return "InternalError";
  if (status < 0 || status > CMVP_INVALID_ARGUMENT) return "Unknown";
  return cmvp::error_code_name(static_cast<cmvp::ErrorCode>(status));
}

void cmvp_free(void* ptr) { std::free(ptr); }

int cmvp_config_load(const char* path, cmvp_config** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new cmvp_config{cmvp::load_run_config(path)};
  });
}

int cmvp_config_parse(const char* json_text, cmvp_config** out) {
  return guarded([&] {
    need(json_text, "json_text");
    need(out, "out");
    *out = new cmvp_config{cmvp::parse_run_config(json_text)};
  });
}

int cmvp_config_set_seed(cmvp_config* cfg, uint64_t seed) {
  return guarded([&] {
    need(cfg, "cfg");
    cfg->cfg.seed = seed;
  });
}

int cmvp_config_set_threads(cmvp_config* cfg, int threads) {
  return guarded([&] {
    need(cfg, "cfg");
    if (threads < 1) cmvp::fail(cmvp::ErrorCode::kConfigError, "threads must be positive");
    cfg->cfg.threads = threads;
  });
}

int cmvp_config_set_mode(cmvp_config* cfg, const char* mode) {
  return guarded([&] {
    need(cfg, "cfg");
    need(mode, "mode");
    const std::string m(mode);
    if (m == "encoder") cfg->cfg.mode = cmvp::TrainMode::kEncoder;
    else if (m == "direct") cfg->cfg.mode = cmvp::TrainMode::kDirect;
    else cmvp::fail(cmvp::ErrorCode::kConfigError, "mode must be encoder or direct");
  });
}

int cmvp_config_to_json(const cmvp_config* cfg, char** out) {
  return guarded([&] {
    need(cfg, "cfg");
    need(out, "out");
    *out = dup_string(cmvp::run_config_to_json(cfg->cfg));
  });
}

void cmvp_config_free(cmvp_config* cfg) { delete cfg; }

int cmvp_dataset_generate(const cmvp_config* cfg, cmvp_dataset** train, cmvp_dataset** holdout) {
  return guarded([&] {
    need(cfg, "cfg");
    need(train, "train");
    auto split = cmvp::generate_synthetic(cfg->cfg);
    auto* tr = new cmvp_dataset{std::move(split.train)};
    if (holdout) *holdout = new cmvp_dataset{std::move(split.holdout)};
    *train = tr;
  });
}

int cmvp_dataset_save(const cmvp_dataset* ds, const char* path) {
  return guarded([&] {
    need(ds, "ds");
    need(path, "path");
    cmvp::save_dataset(ds->ds, path);
  });
}

int cmvp_dataset_load(const char* path, cmvp_dataset** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    *out = new cmvp_dataset{cmvp::load_dataset(path)};
  });
}

int cmvp_dataset_shape(const cmvp_dataset* ds, int* agents, int* classes, size_t* objects) {
  return guarded([&] {
    need(ds, "ds");
    if (agents) *agents = ds->ds.agent_count();
    if (classes) *classes = ds->ds.class_count;
    if (objects) *objects = ds->ds.object_count();
  });
}

void cmvp_dataset_free(cmvp_dataset* ds) { delete ds; }

int cmvp_run_create(const cmvp_config* cfg, const cmvp_dataset* train, const cmvp_dataset* holdout,
                    cmvp_run** out) {
  return guarded([&] {
    need(cfg, "cfg");
    need(train, "train");
    need(out, "out");
    *out = new cmvp_run{cmvp::initialize_run(cfg->cfg, train->ds, holdout ? &holdout->ds : nullptr)};
  });
}

int cmvp_run_step(cmvp_run* run, int* bound_holds) {
  return guarded([&] {
    need(run, "run");
    const auto& rec = cmvp::run_round(run->state);
    if (bound_holds) *bound_holds = rec.bound_holds() ? 1 : 0;
  });
}

int cmvp_run_execute(cmvp_run* run, const char* checkpoint_dir) {
  return guarded([&] {
    need(run, "run");
    cmvp::run(run->state, checkpoint_dir ? checkpoint_dir : "");
  });
}

int cmvp_run_rounds(const cmvp_run* run, int* rounds_completed) {
  return guarded([&] {
    need(run, "run");
    need(rounds_completed, "rounds_completed");
    *rounds_completed = run->state.round;
  });
}

int cmvp_run_bounds_hold(const cmvp_run* run, int* all_hold) {
  return guarded([&] {
    need(run, "run");
    need(all_hold, "all_hold");
    *all_hold = 1;
    for (const auto& rec : run->state.history)
      if (!rec.bound_holds()) *all_hold = 0;
  });
}

int cmvp_run_write_log(const cmvp_run* run, const char* path, int include_timing) {
  return guarded([&] {
    need(run, "run");
    need(path, "path");
    std::string text;
    for (const auto& rec : run->state.history) {
      text += cmvp::round_record_to_json(rec, include_timing != 0);
      text += '\n';
    }
    cmvp::detail::write_file_bytes(
        path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  });
}

int cmvp_run_checkpoint(const cmvp_run* run, const char* dir) {
  return guarded([&] {
    need(run, "run");
    need(dir, "dir");
    cmvp::write_checkpoint(run->state, dir);
  });
}

int cmvp_run_load_checkpoint(const char* dir, const cmvp_dataset* train, const cmvp_dataset* holdout,
                             cmvp_run** out) {
  return guarded([&] {
    need(dir, "dir");
    need(train, "train");
    need(out, "out");
    *out = new cmvp_run{cmvp::load_checkpoint(dir, train->ds, holdout ? &holdout->ds : nullptr)};
  });
}

void cmvp_run_free(cmvp_run* run) { delete run; }

int cmvp_run_evaluate(const cmvp_run* run, const cmvp_dataset* ds, cmvp_eval* out, char** json_out) {
  return guarded([&] {
    need(run, "run");
    need(ds, "ds");
    const auto s = cmvp::evaluate(run->state, ds->ds);
    if (out) {
      *out = cmvp_eval{};
      out->acc = s.acc;
      out->has_sis = s.sis.has_value() ? 1 : 0;
      out->sis = s.sis.value_or(0.0);
      out->dis = s.dis;
      out->fisher_ratio = s.fisher_ratio;
      out->within_class_abs_cos = s.cosine.within_class;
      out->cross_class_abs_cos = s.cosine.cross_class;
      double sum = 0.0, worst = 0.0;
      for (double v : s.class_subspace_distance) {
        sum += v;
        worst = std::max(worst, v);
      }
      out->mean_subspace_distance =
          s.class_subspace_distance.empty() ? 0.0 : sum / static_cast<double>(s.class_subspace_distance.size());
      out->max_subspace_distance = worst;
      for (bool b : s.fused_rank_deficient) out->any_rank_deficient |= b ? 1 : 0;
    }
    if (json_out) *json_out = dup_string(cmvp::eval_summary_to_json(s));
  });
}

int cmvp_run_export_heatmap(const cmvp_run* run, const cmvp_dataset* ds, const char* prefix) {
  return guarded([&] {
    need(run, "run");
    need(ds, "ds");
    need(prefix, "prefix");
    const auto features = cmvp::agent_features(run->state, ds->ds);
    std::vector<cmvp::LabeledFeatures> labeled;
    for (std::size_t i = 0; i < features.size(); ++i) {
      labeled.push_back({features[i].matrix(), ds->ds.agents[i].labels, ds->ds.agents[i].object_ids});
    }
    cmvp::export_heatmap(cmvp::cosine_similarity_matrix(labeled), prefix);
  });
}

namespace {

int certification(bool trace, int instances, uint64_t seed, cmvp_certification* out) {
  return guarded([&] {
    need(out, "out");
    if (instances < 1) cmvp::fail(cmvp::ErrorCode::kInvalidCount, "instances must be positive");
    const auto s = trace ? cmvp::certify_trace_bound(instances, seed)
                         : cmvp::certify_rate_monotonicity(instances, seed);
    *out = {s.instances, s.violations, s.worst_relative_slack, s.worst_excess};
  });
}

}  // namespace

int cmvp_verify_trace_bound(int instances, uint64_t seed, cmvp_certification* out) {
  return certification(true, instances, seed, out);
}

int cmvp_verify_monotonicity(int instances, uint64_t seed, cmvp_certification* out) {
  return certification(false, instances, seed, out);
}

int cmvp_verify_consistency(uint64_t seed, int trials_per_level, cmvp_consistency* out, char** report_out) {
  return guarded([&] {
    need(out, "out");
    if (trials_per_level < 1) cmvp::fail(cmvp::ErrorCode::kInvalidCount, "trials must be positive");
    cmvp::ConsistencyParams params;
    params.seed = seed;
    params.trials = trials_per_level;
    params.noise_grid.insert(params.noise_grid.begin(), 0.0);
    const auto rep = cmvp::fusion_consistency_experiment(params);
    *out = cmvp_consistency{};
    out->trials = static_cast<int>(rep.trials.size());
    out->violations = rep.violations;
    out->slope = rep.slope;
    out->beta = rep.beta;
    out->lipschitz = rep.lipschitz;
    out->constant = rep.constant;
    out->zero_noise_distance = rep.max_distance.front();
    out->projector_formula_gap = rep.projector_formula_gap;
    if (report_out) *report_out = dup_string(cmvp::format_consistency_report(rep));
  });
}

int cmvp_cost_estimate(uint64_t agents, uint64_t feature_dim, uint64_t total_samples,
                       const uint64_t* local_rank, const uint64_t* fused_rank, size_t classes,
                       uint64_t* out) {
  return guarded([&] {
    need(out, "out");
    *out = cmvp::fusion_cost_estimate(
        cost_config(agents, feature_dim, total_samples, local_rank, fused_rank, classes));
  });
}

int cmvp_config_cost_shape(const cmvp_config* cfg, uint64_t* agents, uint64_t* feature_dim,
                           uint64_t* total_samples, uint64_t* local_rank, uint64_t* fused_rank,
                           size_t capacity, size_t* classes) {
  return guarded([&] {
    need(cfg, "cfg");
    need(agents, "agents");
    need(feature_dim, "feature_dim");
    need(total_samples, "total_samples");
    need(classes, "classes");
    const auto& c = cfg->cfg;
    const auto k = static_cast<size_t>(c.classes);
    if (capacity < k) cmvp::fail(cmvp::ErrorCode::kInvalidArgument, "rank buffers too small");
    need(local_rank, "local_rank");
    need(fused_rank, "fused_rank");
    *agents = static_cast<uint64_t>(c.agents);
    *feature_dim = static_cast<uint64_t>(c.feature_dim);
    *total_samples = static_cast<uint64_t>(c.agents) * k * static_cast<uint64_t>(c.data.objects_per_class);
    *classes = k;
    for (int j = 0; j < c.classes; ++j) {
      local_rank[j] = static_cast<uint64_t>(c.local_rank_of(j));
      fused_rank[j] = static_cast<uint64_t>(c.fused_rank_of(j));
    }
  });
}

int cmvp_cost_measure(uint64_t agents, uint64_t feature_dim, uint64_t total_samples,
                      const uint64_t* local_rank, const uint64_t* fused_rank, size_t classes,
                      uint64_t seed, double* seconds) {
  return guarded([&] {
    need(seconds, "seconds");
    *seconds = cmvp::measure_fusion_seconds(
        cost_config(agents, feature_dim, total_samples, local_rank, fused_rank, classes), seed);
  });
}

int cmvp_basis_serialize(const cmvp_basis_header* header, const double* basis,
                         const double* singular_values, uint8_t** out, size_t* size) {
  return guarded([&] {
    need(header, "header");
    need(out, "out");
    need(size, "size");
    const auto d = static_cast<cmvp::Index>(header->dim);
    const auto p = static_cast<cmvp::Index>(header->rank);
    if (d * p > 0) need(basis, "basis");
    if (p > 0) need(singular_values, "singular_values");
    cmvp::BasisMessage msg;
    msg.agent_id = header->agent_id;
    msg.class_id = header->class_id;
    msg.round = header->round;
    msg.basis = cmvp::OrthonormalBasis(Eigen::Map<const cmvp::Matrix>(basis, d, p), false);
    msg.singular_values = Eigen::Map<const cmvp::Vector>(singular_values, p);
    const auto bytes = cmvp::serialize_basis(msg);
    auto* buf = static_cast<uint8_t*>(std::malloc(bytes.size()));
    if (!buf) throw std::bad_alloc();
    std::memcpy(buf, bytes.data(), bytes.size());
    *out = buf;
    *size = bytes.size();
  });
}

int cmvp_basis_deserialize(const uint8_t* bytes, size_t size, cmvp_basis_header* header, double* basis,
                           size_t basis_capacity, double* singular_values, size_t values_capacity) {
  return guarded([&] {
    need(header, "header");
    if (size > 0) need(bytes, "bytes");
    const auto msg = cmvp::deserialize_basis(std::span<const std::uint8_t>(bytes, size));
    const auto d = msg.basis.ambient_dim();
    const auto p = msg.basis.dim();
    *header = {msg.agent_id, msg.class_id, msg.round, static_cast<uint32_t>(d), static_cast<uint32_t>(p)};
    if (basis) {
      if (basis_capacity < static_cast<size_t>(d * p))
        cmvp::fail(cmvp::ErrorCode::kInvalidArgument, "basis buffer too small");
      std::memcpy(basis, msg.basis.matrix().data(), sizeof(double) * static_cast<size_t>(d * p));
    }
    if (singular_values) {
      if (values_capacity < static_cast<size_t>(p))
        cmvp::fail(cmvp::ErrorCode::kInvalidArgument, "singular value buffer too small");
      std::memcpy(singular_values, msg.singular_values.data(), sizeof(double) * static_cast<size_t>(p));
    }
  });
}

}  // extern "C"
