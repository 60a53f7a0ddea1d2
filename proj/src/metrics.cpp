// Copyright 2026 The cmvp Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmvp/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <tuple>

#include "byte_io.hpp"
#include "cmvp/fusion.hpp"
#include "cmvp/rng.hpp"

namespace cmvp {

namespace {

void check_agent(const LabeledFeatures& a) {
  const auto m = static_cast<std::size_t>(a.features.cols());
  require(a.labels.size() == m && a.object_ids.size() == m, ErrorCode::kDimensionMismatch,
          "labels/object ids do not match feature count");
}

}  // namespace

SimilarityMatrix cosine_similarity_matrix(std::span<const LabeledFeatures> agents) {
  SimilarityMatrix sim;
  Index d = -1;
  for (std::size_t i = 0; i < agents.size(); ++i) {
    check_agent(agents[i]);
    if (d < 0) d = agents[i].features.rows();
    require(agents[i].features.rows() == d, ErrorCode::kDimensionMismatch,
            "agents disagree on feature dimension");
    for (Index j = 0; j < agents[i].features.cols(); ++j) {
      sim.order.push_back({agents[i].labels[static_cast<std::size_t>(j)],
                           agents[i].object_ids[static_cast<std::size_t>(j)], static_cast<int>(i), j});
    }
  }
  std::stable_sort(sim.order.begin(), sim.order.end(), [](const SampleKey& a, const SampleKey& b) {
    return std::tie(a.label, a.object_id, a.agent) < std::tie(b.label, b.object_id, b.agent);
  });
  Matrix pooled(std::max<Index>(d, 0), static_cast<Index>(sim.order.size()));
  for (std::size_t c = 0; c < sim.order.size(); ++c) {
    const auto& key = sim.order[c];
    pooled.col(static_cast<Index>(c)) = agents[static_cast<std::size_t>(key.agent)].features.col(key.column);
  }
  sim.values = pooled.transpose() * pooled;
  sim.values = 0.5 * (sim.values + sim.values.transpose()).eval();
  return sim;
}

BlockCosine block_cosine_stats(const SimilarityMatrix& sim) {
  double within = 0.0, cross = 0.0;
  std::size_t n_within = 0, n_cross = 0;
  const auto n = sim.order.size();
  for (std::size_t a = 0; a < n; ++a) {
    for (std::size_t b = a + 1; b < n; ++b) {
      const double v = std::abs(sim.values(static_cast<Index>(a), static_cast<Index>(b)));
      if (sim.order[a].label == sim.order[b].label) {
        within += v;
        ++n_within;
      } else {
        cross += v;
        ++n_cross;
      }
    }
  }
  return {n_within ? within / static_cast<double>(n_within) : 0.0,
          n_cross ? cross / static_cast<double>(n_cross) : 0.0};
}

Classification nearest_subspace_classify(const Matrix& z,
                                         std::span<const ProjectionOperator> projectors,
                                         const std::vector<int>* truth) {
  require(!projectors.empty(), ErrorCode::kInvalidArgument, "need at least one class projector");
  for (const auto& p : projectors) {
    require(p.dim() == z.rows(), ErrorCode::kDimensionMismatch, "projector dimension mismatch");
  }
  Classification out;
  out.predicted.resize(static_cast<std::size_t>(z.cols()));
  for (Index j = 0; j < z.cols(); ++j) {
    int best = 0;
    double best_energy = -1.0;
    for (std::size_t k = 0; k < projectors.size(); ++k) {
      const double e = z.col(j).dot(projectors[k].matrix() * z.col(j));
      if (e > best_energy) {
        best_energy = e;
        best = static_cast<int>(k);
      }
    }
    out.predicted[static_cast<std::size_t>(j)] = best;
  }
  if (truth) {
    require(truth->size() == out.predicted.size(), ErrorCode::kDimensionMismatch,
            "truth labels do not match sample count");
    std::size_t hits = 0;
    for (std::size_t j = 0; j < truth->size(); ++j) hits += (*truth)[j] == out.predicted[j];
    out.accuracy = truth->empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(truth->size());
  }
  return out;
}

double same_object_similarity(std::span<const LabeledFeatures> agents) {
  // object id -> (agent, column) views
  std::map<std::uint32_t, std::vector<std::pair<std::size_t, Index>>> views;
  for (std::size_t i = 0; i < agents.size(); ++i) {
    check_agent(agents[i]);
    for (Index j = 0; j < agents[i].features.cols(); ++j) {
      views[agents[i].object_ids[static_cast<std::size_t>(j)]].emplace_back(i, j);
    }
  }
  double sum = 0.0;
  std::size_t pairs = 0;
  for (const auto& [obj, list] : views) {
    for (std::size_t a = 0; a < list.size(); ++a) {
      for (std::size_t b = a + 1; b < list.size(); ++b) {
        if (list[a].first == list[b].first) continue;
        sum += agents[list[a].first].features.col(list[a].second).dot(
            agents[list[b].first].features.col(list[b].second));
        ++pairs;
      }
    }
  }
  if (pairs == 0) fail(ErrorCode::kMetricUnavailable, "no object is observed by two agents");
  return sum / static_cast<double>(pairs);
}

ViewStatistics sis_dis_fisher(std::span<const LabeledFeatures> agents) {
  require(!agents.empty(), ErrorCode::kInvalidArgument, "no features given");
  ViewStatistics out;
  try {
    out.sis = same_object_similarity(agents);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kMetricUnavailable) throw;
  }

  // DIS: per agent, same class, different objects; then the mean over agents.
  double dis_sum = 0.0;
  std::size_t dis_agents = 0;
  for (const auto& a : agents) {
    double sum = 0.0;
    std::size_t pairs = 0;
    for (Index p = 0; p < a.features.cols(); ++p) {
      for (Index q = p + 1; q < a.features.cols(); ++q) {
        const auto sp = static_cast<std::size_t>(p);
        const auto sq = static_cast<std::size_t>(q);
        if (a.labels[sp] != a.labels[sq] || a.object_ids[sp] == a.object_ids[sq]) continue;
        sum += a.features.col(p).dot(a.features.col(q));
        ++pairs;
      }
    }
    if (pairs > 0) {
      dis_sum += sum / static_cast<double>(pairs);
      ++dis_agents;
    }
  }
  out.dis = dis_agents ? dis_sum / static_cast<double>(dis_agents) : 0.0;

  // Fisher ratio: tr(S_between) / tr(S_within) over the pooled features.
  const Index d = agents.front().features.rows();
  std::map<int, std::pair<Vector, std::size_t>> class_sums;
  Vector total = Vector::Zero(d);
  std::size_t count = 0;
  for (const auto& a : agents) {
    require(a.features.rows() == d, ErrorCode::kDimensionMismatch, "feature dimension mismatch");
    for (Index j = 0; j < a.features.cols(); ++j) {
      auto& entry = class_sums[a.labels[static_cast<std::size_t>(j)]];
      if (entry.first.size() == 0) entry.first = Vector::Zero(d);
      entry.first += a.features.col(j);
      ++entry.second;
      total += a.features.col(j);
      ++count;
    }
  }
  require(count > 0, ErrorCode::kInvalidArgument, "no samples for the Fisher ratio");
  const Vector mean = total / static_cast<double>(count);
  double between = 0.0, within = 0.0;
  std::map<int, Vector> class_means;
  for (const auto& [label, entry] : class_sums) {
    class_means[label] = entry.first / static_cast<double>(entry.second);
    between += static_cast<double>(entry.second) * (class_means[label] - mean).squaredNorm();
  }
  for (const auto& a : agents) {
    for (Index j = 0; j < a.features.cols(); ++j) {
      within += (a.features.col(j) - class_means[a.labels[static_cast<std::size_t>(j)]]).squaredNorm();
    }
  }
  // Relative cutoff: identical features leave only round-off in the within scatter.
  out.fisher_ratio = within <= 1e-24 * static_cast<double>(count)
                         ? std::numeric_limits<double>::infinity()
                         : between / within;
  return out;
}

double containment_distance(const OrthonormalBasis& fused, const OrthonormalBasis& sub) {
  require(fused.ambient_dim() == sub.ambient_dim(), ErrorCode::kDimensionMismatch,
          "ambient dimensions differ");
  require(sub.dim() <= fused.dim(), ErrorCode::kDimensionMismatch,
          "subspace larger than the fused subspace");
  if (sub.dim() == 0) return 0.0;
  const Matrix& f = fused.matrix();
  const Matrix off = sub.matrix() - f * (f.transpose() * sub.matrix());
  return std::min(1.0, spectral_norm(off));
}

std::uint64_t fusion_cost_estimate(const CostConfig& cfg) {
  require(cfg.local_rank.size() == cfg.fused_rank.size(), ErrorCode::kConfigError,
          "per-class rank lists differ in length");
  const auto mul = [](std::uint64_t a, std::uint64_t b) {
    if (a != 0 && b > std::numeric_limits<std::uint64_t>::max() / a) {
      fail(ErrorCode::kInvalidArgument, "cost estimate overflows 64 bits");
    }
    return a * b;
  };
  const auto add = [](std::uint64_t a, std::uint64_t b) {
    if (b > std::numeric_limits<std::uint64_t>::max() - a) {
      fail(ErrorCode::kInvalidArgument, "cost estimate overflows 64 bits");
    }
    return a + b;
  };
  std::uint64_t total = 0;
  for (std::size_t k = 0; k < cfg.local_rank.size(); ++k) {
    const std::uint64_t local = mul(mul(cfg.total_samples, cfg.feature_dim), cfg.local_rank[k]);
    const std::uint64_t fused =
        mul(mul(mul(cfg.agents, cfg.feature_dim), cfg.local_rank[k]), cfg.fused_rank[k]);
    total = add(total, add(local, fused));
  }
  return total;
}

double measure_fusion_seconds(const CostConfig& cfg, std::uint64_t seed) {
  require(cfg.agents >= 1 && cfg.feature_dim >= 1 && !cfg.local_rank.empty(),
          ErrorCode::kConfigError, "cost config needs agents, dimension and classes");
  const auto classes = static_cast<std::uint64_t>(cfg.local_rank.size());
  const auto per_class = static_cast<Index>(std::max<std::uint64_t>(1, cfg.total_samples / (cfg.agents * classes)));
  const auto d = static_cast<Index>(cfg.feature_dim);
  Rng rng(seed);
  std::vector<Matrix> features;
  for (std::uint64_t i = 0; i < cfg.agents * classes; ++i) features.push_back(rng.gaussian(d, per_class));

  const auto start = std::chrono::steady_clock::now();
  for (std::uint64_t k = 0; k < classes; ++k) {
    const auto p = std::min<Index>({static_cast<Index>(cfg.local_rank[k]), d, per_class});
    std::vector<BasisMessage> msgs;
    for (std::uint64_t i = 0; i < cfg.agents; ++i) {
      auto local = extract_local_basis(features[static_cast<std::size_t>(i * classes + k)], p);
      msgs.push_back({static_cast<std::uint32_t>(i), static_cast<std::uint32_t>(k), 0,
                      std::move(local.basis), std::move(local.singular_values)});
    }
    const Matrix concat = concatenate_bases(msgs);
    const auto fused_p = std::min<Index>({static_cast<Index>(cfg.fused_rank[k]), concat.rows(), concat.cols()});
    fuse_bases(concat, fused_p);
  }
  const auto stop = std::chrono::steady_clock::now();
  return std::chrono::duration<double>(stop - start).count();
}

std::vector<std::uint8_t> heatmap_ppm(const Matrix& values) {
  const std::string header = "P6\n" + std::to_string(values.cols()) + " " +
                             std::to_string(values.rows()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + static_cast<std::size_t>(values.size()) * 3);
  const auto level = [](double t) {
    return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(t, 0.0, 1.0)));
  };
  for (Index i = 0; i < values.rows(); ++i) {
    for (Index j = 0; j < values.cols(); ++j) {
      const double v = std::clamp(values(i, j), -1.0, 1.0);
      if (v < 0.0) {
        out.push_back(level(1.0 + v));
        out.push_back(level(1.0 + v));
        out.push_back(255);
      } else {
        out.push_back(255);
        out.push_back(level(1.0 - v));
        out.push_back(level(1.0 - v));
      }
    }
  }
  return out;
}

std::string heatmap_text(const Matrix& values) {
  std::string out;
  char buf[32];
  for (Index i = 0; i < values.rows(); ++i) {
    for (Index j = 0; j < values.cols(); ++j) {
      if (j > 0) out += ',';
      std::snprintf(buf, sizeof buf, "%.17g", values(i, j));
      out += buf;
    }
    out += '\n';
  }
  return out;
}

void export_heatmap(const SimilarityMatrix& sim, const std::string& prefix) {
  const std::string text = heatmap_text(sim.values);
  detail::write_file_bytes(prefix + ".txt", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  detail::write_file_bytes(prefix + ".ppm", heatmap_ppm(sim.values));
}

Matrix import_heatmap_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIoError, "cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream fields(line);
    std::string tok;
    while (std::getline(fields, tok, ',')) {
      char* end = nullptr;
      const double v = std::strtod(tok.c_str(), &end);
      if (end == tok.c_str() || *end != '\0') fail(ErrorCode::kIoError, "bad number in " + path);
      row.push_back(v);
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      fail(ErrorCode::kIoError, "ragged matrix in " + path);
    }
    rows.push_back(std::move(row));
  }
  Matrix out(static_cast<Index>(rows.size()), rows.empty() ? 0 : static_cast<Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) out(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  return out;
}

}  // namespace cmvp
