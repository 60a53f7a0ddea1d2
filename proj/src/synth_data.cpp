// Copyright 2026 The cmvp Authors
// SPDX-License-Identifier: Apache-2.0

#include "cmvp/synth_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "byte_io.hpp"
#include "cmvp/rng.hpp"

namespace cmvp {

namespace {

Matrix random_orthonormal(Rng& rng, Index rows, Index cols) {
  const Matrix g = rng.gaussian(rows, cols);
  Eigen::HouseholderQR<Matrix> qr(g);
  return qr.householderQ() * Matrix::Identity(rows, cols);
}

}  // namespace

Index GroundTruth::class_offset(int k) const {
  require(k >= 0 && k < class_count(), ErrorCode::kInvalidArgument, "class index out of range");
  Index off = 0;
  for (int j = 0; j < k; ++j) off += class_dims[static_cast<std::size_t>(j)];
  return off;
}

OrthonormalBasis GroundTruth::class_basis(int k) const {
  return OrthonormalBasis(
      global_basis.matrix().middleCols(class_offset(k), class_dims[static_cast<std::size_t>(k)]),
      /*canonicalize=*/false);
}

Matrix GroundTruth::coverage_matrix() const {
  Index cols = 0;
  for (const auto& o : coverage) cols += o.cols();
  Matrix m(global_dim(), cols);
  Index c = 0;
  for (const auto& o : coverage) {
    m.middleCols(c, o.cols()) = o;
    c += o.cols();
  }
  return m;
}

GroundTruth generate_ground_truth(Index d, const std::vector<Index>& class_dims, int agent_count,
                                  const std::vector<Index>& agent_ranks, std::uint64_t seed,
                                  double beta_min) {
  require(!class_dims.empty(), ErrorCode::kInvalidCount, "need at least one class");
  require(agent_count >= 1, ErrorCode::kInvalidCount, "need at least one agent");
  require(agent_ranks.size() == static_cast<std::size_t>(agent_count), ErrorCode::kInvalidCount,
          "need one rank per agent");
  Index global_dim = 0;
  for (Index c : class_dims) {
    require(c >= 1, ErrorCode::kInvalidCount, "class dimensions must be positive");
    global_dim += c;
  }
  require(global_dim <= d, ErrorCode::kInvalidCount, "sum of class dimensions exceeds d");
  Index rank_total = 0;
  for (Index r : agent_ranks) {
    require(r >= 1 && r <= global_dim, ErrorCode::kInvalidCount, "agent ranks must lie in [1, R]");
    rank_total += r;
  }
  if (rank_total < global_dim) {
    fail(ErrorCode::kCoverageInfeasible,
         "agent ranks sum to " + std::to_string(rank_total) + " < R = " + std::to_string(global_dim));
  }

  Rng basis_rng(derive_seed(seed, 1));
  GroundTruth gt;
  gt.class_dims = class_dims;
  gt.global_basis = OrthonormalBasis(random_orthonormal(basis_rng, d, global_dim));

  Rng coverage_rng(derive_seed(seed, 2));
  for (int attempt = 1; attempt <= kCoverageAttempts; ++attempt) {
    gt.coverage.clear();
    for (Index r : agent_ranks) {
      // A full-rank agent sees all of S*; the identity is the canonical coefficient basis.
      if (r == global_dim) {
        gt.coverage.push_back(Matrix::Identity(global_dim, global_dim));
      } else {
        gt.coverage.push_back(random_orthonormal(coverage_rng, global_dim, r));
      }
    }
    const Vector s = thin_svd(gt.coverage_matrix()).singular_values;
    gt.beta = s(global_dim - 1);
    gt.attempts = attempt;
    if (gt.beta >= beta_min) break;
    if (attempt == kCoverageAttempts) {
      std::ostringstream msg;
      msg << "coverage sigma_R >= " << beta_min << " not reached in " << kCoverageAttempts
          << " attempts (last " << gt.beta << ")";
      fail(ErrorCode::kCoverageInfeasible, msg.str());
    }
  }

  for (const auto& o : gt.coverage) {
    gt.agent_bases.emplace_back(gt.global_basis.matrix() * o, /*canonicalize=*/false);
  }
  return gt;
}

void MultiViewDataset::validate() const {
  require(class_count >= 1, ErrorCode::kInvalidCount, "dataset needs at least one class");
  require(!agents.empty(), ErrorCode::kInvalidCount, "dataset needs at least one agent");
  for (int label : object_labels) {
    require(label >= 0 && label < class_count, ErrorCode::kInvalidPartition,
            "object label out of range");
  }
  for (const auto& a : agents) {
    const auto m = static_cast<std::size_t>(a.sample_count());
    require(a.labels.size() == m && a.object_ids.size() == m, ErrorCode::kInvalidCount,
            "sample, label and alignment counts differ");
    require(a.samples.allFinite(), ErrorCode::kInvalidMatrix, "non-finite sample entries");
    for (std::size_t j = 0; j < m; ++j) {
      const std::uint32_t obj = a.object_ids[j];
      require(obj < object_labels.size(), ErrorCode::kInvalidCount, "object id out of range");
      require(object_labels[obj] == a.labels[j], ErrorCode::kInvalidPartition,
              "sample label disagrees with its object's label");
    }
  }
}

MultiViewDataset generate_dataset(const GroundTruth& gt, const DatasetParams& params,
                                  std::uint64_t seed) {
  require(params.objects_per_class >= 1, ErrorCode::kInvalidCount,
          "objects_per_class must be positive");
  require(params.noise_sigma >= 0.0 && std::isfinite(params.noise_sigma),
          ErrorCode::kInvalidArgument, "noise_sigma must be non-negative");
  const Index d = gt.ambient_dim();
  const Index view_dim = params.view_dim == 0 ? d : params.view_dim;
  require(view_dim >= 1, ErrorCode::kInvalidCount, "view_dim must be positive");
  require(!params.identity_views || view_dim == d, ErrorCode::kInvalidArgument,
          "identity views need view_dim == d");

  const int classes = gt.class_count();
  const Index objects = params.objects_per_class * classes;

  MultiViewDataset ds;
  ds.class_count = classes;
  ds.object_labels.resize(static_cast<std::size_t>(objects));

  Rng object_rng(derive_seed(seed, 11));
  Matrix latent(d, objects);
  for (int k = 0; k < classes; ++k) {
    const OrthonormalBasis block = gt.class_basis(k);
    const double scale = 1.0 / std::sqrt(static_cast<double>(block.dim()));
    for (Index t = 0; t < params.objects_per_class; ++t) {
      const Index obj = k * params.objects_per_class + t;
      latent.col(obj) = block.matrix() * object_rng.gaussian(block.dim(), 1, scale);
      ds.object_labels[static_cast<std::size_t>(obj)] = k;
    }
  }

  for (int i = 0; i < gt.agent_count(); ++i) {
    Matrix view_map;
    if (params.identity_views) {
      view_map = Matrix::Identity(d, d);
    } else {
      Rng view_rng(derive_seed(seed, 100 + static_cast<std::uint64_t>(i)));
      view_map = view_rng.gaussian(view_dim, d, 1.0 / std::sqrt(static_cast<double>(d)));
    }
    AgentSamples a;
    a.samples = view_map * latent;
    if (params.noise_sigma > 0.0) {
      Rng noise_rng(derive_seed(seed, 1000 + static_cast<std::uint64_t>(i)));
      a.samples += noise_rng.gaussian(view_dim, objects, params.noise_sigma);
    }
    a.labels = ds.object_labels;
    a.object_ids.resize(static_cast<std::size_t>(objects));
    std::iota(a.object_ids.begin(), a.object_ids.end(), 0u);
    ds.agents.push_back(std::move(a));
  }
  return ds;
}

std::pair<MultiViewDataset, MultiViewDataset> split_holdout(const MultiViewDataset& ds,
                                                            Index holdout_per_class) {
  ds.validate();
  require(holdout_per_class >= 0, ErrorCode::kInvalidCount, "holdout count must be >= 0");
  // Last `holdout_per_class` object ids of each class go to the test side.
  std::vector<std::vector<std::uint32_t>> by_class(static_cast<std::size_t>(ds.class_count));
  for (std::size_t obj = 0; obj < ds.object_labels.size(); ++obj) {
    by_class[static_cast<std::size_t>(ds.object_labels[obj])].push_back(static_cast<std::uint32_t>(obj));
  }
  std::vector<bool> held(ds.object_labels.size(), false);
  for (const auto& ids : by_class) {
    require(static_cast<Index>(ids.size()) > holdout_per_class, ErrorCode::kInvalidCount,
            "holdout would leave a class without training objects");
    for (std::size_t j = ids.size() - static_cast<std::size_t>(holdout_per_class); j < ids.size(); ++j) {
      held[ids[j]] = true;
    }
  }

  MultiViewDataset train, test;
  train.class_count = test.class_count = ds.class_count;
  train.object_labels = test.object_labels = ds.object_labels;
  for (const auto& a : ds.agents) {
    std::vector<Index> keep_train, keep_test;
    for (Index j = 0; j < a.sample_count(); ++j) {
      (held[a.object_ids[static_cast<std::size_t>(j)]] ? keep_test : keep_train).push_back(j);
    }
    auto take = [&a](const std::vector<Index>& idx) {
      AgentSamples out;
      out.samples.resize(a.view_dim(), static_cast<Index>(idx.size()));
      for (std::size_t c = 0; c < idx.size(); ++c) {
        out.samples.col(static_cast<Index>(c)) = a.samples.col(idx[c]);
        out.labels.push_back(a.labels[static_cast<std::size_t>(idx[c])]);
        out.object_ids.push_back(a.object_ids[static_cast<std::size_t>(idx[c])]);
      }
      return out;
    };
    train.agents.push_back(take(keep_train));
    test.agents.push_back(take(keep_test));
  }
  return {std::move(train), std::move(test)};
}

MembershipPartition membership_from_labels(const std::vector<int>& labels, int class_count) {
  return MembershipPartition(labels, class_count);
}

std::vector<std::uint8_t> encode_dataset(const MultiViewDataset& ds) {
  ds.validate();
  detail::ByteWriter w;
  w.raw("MCRD");
  w.u16(1);
  w.u32(static_cast<std::uint32_t>(ds.agent_count()));
  w.u32(static_cast<std::uint32_t>(ds.class_count));
  w.u32(static_cast<std::uint32_t>(ds.object_count()));
  for (int label : ds.object_labels) w.u32(static_cast<std::uint32_t>(label));
  for (const auto& a : ds.agents) {
    w.u32(static_cast<std::uint32_t>(a.view_dim()));
    w.u32(static_cast<std::uint32_t>(a.sample_count()));
    for (Index j = 0; j < a.sample_count(); ++j)
      for (Index i = 0; i < a.view_dim(); ++i) w.f64(a.samples(i, j));
    for (int label : a.labels) w.u32(static_cast<std::uint32_t>(label));
    for (std::uint32_t obj : a.object_ids) w.u32(obj);
  }
  return std::move(w.bytes());
}

MultiViewDataset decode_dataset(const std::vector<std::uint8_t>& bytes) {
  detail::ByteReader r(bytes, ErrorCode::kIoError);
  r.expect_tag("MCRD");
  const std::uint16_t version = r.u16();
  require(version == 1, ErrorCode::kIoError, "unsupported dataset file version");
  MultiViewDataset ds;
  const std::uint32_t agents = r.u32();
  ds.class_count = static_cast<int>(r.u32());
  const std::uint32_t objects = r.u32();
  r.need_items(objects, 4);
  ds.object_labels.resize(objects);
  for (auto& label : ds.object_labels) label = static_cast<int>(r.u32());
  for (std::uint32_t i = 0; i < agents; ++i) {
    AgentSamples a;
    const std::uint32_t view_dim = r.u32();
    const std::uint32_t m = r.u32();
    r.need_items(static_cast<std::uint64_t>(view_dim) * m, 8);
    a.samples.resize(view_dim, m);
    for (std::uint32_t j = 0; j < m; ++j)
      for (std::uint32_t row = 0; row < view_dim; ++row) a.samples(row, j) = r.f64();
    r.need_items(2ull * m, 4);
    a.labels.resize(m);
    for (auto& label : a.labels) label = static_cast<int>(r.u32());
    a.object_ids.resize(m);
    for (auto& obj : a.object_ids) obj = r.u32();
    ds.agents.push_back(std::move(a));
  }
  require(r.at_end(), ErrorCode::kIoError, "trailing bytes in dataset file");
  ds.validate();
  return ds;
}

void save_dataset(const MultiViewDataset& ds, const std::string& path) {
  detail::write_file_bytes(path, encode_dataset(ds));
}

MultiViewDataset load_dataset(const std::string& path) {
  return decode_dataset(detail::read_file_bytes(path));
}

AgentSamples read_delimited_agent(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIoError, "cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    for (char& c : line) {
      if (c == ',' || c == ';' || c == '\t') c = ' ';
    }
    std::istringstream fields(line);
    std::vector<double> row;
    std::string tok;
    while (fields >> tok) {
      double v = 0.0;
      const auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (ec != std::errc() || ptr != tok.data() + tok.size()) {
        fail(ErrorCode::kIoError, path + ":" + std::to_string(line_no) + ": bad number '" + tok + "'");
      }
      row.push_back(v);
    }
    if (row.empty()) continue;
    if (row.size() < 3 || (!rows.empty() && row.size() != rows.front().size())) {
      fail(ErrorCode::kIoError, path + ":" + std::to_string(line_no) + ": inconsistent column count");
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) fail(ErrorCode::kInvalidCount, "no samples in " + path);

  AgentSamples a;
  const auto dim = static_cast<Index>(rows.front().size() - 2);
  a.samples.resize(dim, static_cast<Index>(rows.size()));
  for (std::size_t j = 0; j < rows.size(); ++j) {
    for (Index i = 0; i < dim; ++i) a.samples(i, static_cast<Index>(j)) = rows[j][static_cast<std::size_t>(i)];
    const double label = rows[j][static_cast<std::size_t>(dim)];
    const double obj = rows[j][static_cast<std::size_t>(dim) + 1];
    if (label < 0 || obj < 0 || label != std::floor(label) || obj != std::floor(obj)) {
      fail(ErrorCode::kIoError, path + ": label and object id must be non-negative integers");
    }
    a.labels.push_back(static_cast<int>(label));
    a.object_ids.push_back(static_cast<std::uint32_t>(obj));
  }
  return a;
}

MultiViewDataset load_delimited_dataset(const std::vector<std::string>& agent_paths,
                                        int class_count) {
  MultiViewDataset ds;
  ds.class_count = class_count;
  std::uint32_t max_obj = 0;
  for (const auto& path : agent_paths) {
    ds.agents.push_back(read_delimited_agent(path));
    for (std::uint32_t obj : ds.agents.back().object_ids) max_obj = std::max(max_obj, obj);
  }
  require(!ds.agents.empty(), ErrorCode::kInvalidCount, "no agent files given");
  ds.object_labels.assign(static_cast<std::size_t>(max_obj) + 1, -1);
  for (const auto& a : ds.agents) {
    for (std::size_t j = 0; j < a.labels.size(); ++j) {
      int& slot = ds.object_labels[a.object_ids[j]];
      if (slot == -1) slot = a.labels[j];
      require(slot == a.labels[j], ErrorCode::kInvalidPartition,
              "same object carries different labels across agents");
    }
  }
  // Ids never referenced get class 0; they have no samples.
  for (int& label : ds.object_labels) {
    if (label == -1) label = 0;
  }
  ds.validate();
  return ds;
}

}  // namespace cmvp
