// Copyright 2026 The cmvp Authors
// SPDX-License-Identifier: Apache-2.0

// Exercises the shared library only through its C interface.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "cmvp/cmvp.h"

namespace {

namespace fs = std::filesystem;

constexpr const char* kTiny = R"({
  "agents": 2, "classes": 2, "feature_dim": 6, "hidden": [32],
  "local_rank": 2, "fused_rank": 3, "rounds": 4, "batch_size": 4,
  "learning_rate": 0.01, "seed": 9,
  "lambda_schedule": [[1, 1.0], [3, 10.0]],
  "data": {"class_dims": [2, 2], "objects_per_class": 5, "holdout_per_class": 2, "noise_sigma": 0.01}
})";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

struct Fixture {
  cmvp_config* cfg = nullptr;
  cmvp_dataset* train = nullptr;
  cmvp_dataset* holdout = nullptr;

  Fixture() {
    EXPECT_EQ(cmvp_config_parse(kTiny, &cfg), CMVP_OK) << cmvp_last_error();
    EXPECT_EQ(cmvp_dataset_generate(cfg, &train, &holdout), CMVP_OK) << cmvp_last_error();
  }
  ~Fixture() {
    cmvp_dataset_free(train);
    cmvp_dataset_free(holdout);
    cmvp_config_free(cfg);
  }
};

TEST(CApi, StatusNamesAndErrors) {
  EXPECT_STREQ(cmvp_status_name(CMVP_OK), "Ok");
  EXPECT_STRNE(cmvp_status_name(CMVP_CORRUPT_MESSAGE), "");
  cmvp_config* cfg = nullptr;
  EXPECT_EQ(cmvp_config_parse("{bad", &cfg), CMVP_CONFIG_ERROR);
  EXPECT_EQ(cfg, nullptr);
  EXPECT_STRNE(cmvp_last_error(), "");
  EXPECT_EQ(cmvp_config_parse(kTiny, nullptr), CMVP_INVALID_ARGUMENT);
  EXPECT_EQ(cmvp_config_load("/nonexistent/x.json", &cfg), CMVP_IO_ERROR);
}

TEST(CApi, ConfigOverrides) {
  Fixture f;
  EXPECT_EQ(cmvp_config_set_mode(f.cfg, "direct"), CMVP_OK);
  EXPECT_EQ(cmvp_config_set_mode(f.cfg, "sideways"), CMVP_CONFIG_ERROR);
  EXPECT_EQ(cmvp_config_set_threads(f.cfg, 0), CMVP_CONFIG_ERROR);
  EXPECT_EQ(cmvp_config_set_threads(f.cfg, 2), CMVP_OK);
  EXPECT_EQ(cmvp_config_set_seed(f.cfg, 77), CMVP_OK);
  char* json = nullptr;
  ASSERT_EQ(cmvp_config_to_json(f.cfg, &json), CMVP_OK);
  const std::string text(json);
  cmvp_free(json);
  EXPECT_NE(text.find("\"direct\""), std::string::npos);
  EXPECT_NE(text.find("77"), std::string::npos);
}

TEST(CApi, DatasetShapeAndFiles) {
  Fixture f;
  int agents = 0, classes = 0;
  size_t objects = 0;
  ASSERT_EQ(cmvp_dataset_shape(f.train, &agents, &classes, &objects), CMVP_OK);
  EXPECT_EQ(agents, 2);
  EXPECT_EQ(classes, 2);
  EXPECT_EQ(objects, 14u);
  const auto path = (fs::temp_directory_path() / "cmvp_capi_ds.mcrd").string();
  ASSERT_EQ(cmvp_dataset_save(f.train, path.c_str()), CMVP_OK);
  cmvp_dataset* back = nullptr;
  ASSERT_EQ(cmvp_dataset_load(path.c_str(), &back), CMVP_OK);
  const auto copy = (fs::temp_directory_path() / "cmvp_capi_ds2.mcrd").string();
  ASSERT_EQ(cmvp_dataset_save(back, copy.c_str()), CMVP_OK);
  EXPECT_EQ(slurp(path), slurp(copy));
  cmvp_dataset_free(back);
  fs::remove(path);
  fs::remove(copy);
  EXPECT_EQ(cmvp_dataset_load(path.c_str(), &back), CMVP_IO_ERROR);
}

TEST(CApi, RunLifecycle) {
  Fixture f;
  cmvp_run* run = nullptr;
  ASSERT_EQ(cmvp_run_create(f.cfg, f.train, f.holdout, &run), CMVP_OK) << cmvp_last_error();
  int holds = 0;
  ASSERT_EQ(cmvp_run_step(run, &holds), CMVP_OK);
  EXPECT_EQ(holds, 1);
  const auto dir = fs::temp_directory_path() / "cmvp_capi_run";
  fs::remove_all(dir);
  ASSERT_EQ(cmvp_run_execute(run, (dir / "ck").string().c_str()), CMVP_OK);
  int rounds = 0;
  cmvp_run_rounds(run, &rounds);
  EXPECT_EQ(rounds, 4);
  cmvp_run_bounds_hold(run, &holds);
  EXPECT_EQ(holds, 1);
  ASSERT_EQ(cmvp_run_write_log(run, (dir / "log.jsonl").string().c_str(), 0), CMVP_OK);
  const std::string log = slurp(dir / "log.jsonl");
  EXPECT_EQ(std::count(log.begin(), log.end(), '\n'), 4);
  EXPECT_EQ(log.find("wall"), std::string::npos);

  cmvp_eval eval{};
  char* json = nullptr;
  ASSERT_EQ(cmvp_run_evaluate(run, f.holdout, &eval, &json), CMVP_OK);
  EXPECT_NE(std::string(json).find("acc"), std::string::npos);
  cmvp_free(json);
  EXPECT_GE(eval.acc, 0.0);
  EXPECT_EQ(eval.has_sis, 1);
  EXPECT_LE(eval.max_subspace_distance, 1.0);
  ASSERT_EQ(cmvp_run_export_heatmap(run, f.holdout, (dir / "hm").string().c_str()), CMVP_OK);
  EXPECT_TRUE(fs::exists(dir / "hm.ppm"));

  cmvp_run* resumed = nullptr;
  ASSERT_EQ(cmvp_run_load_checkpoint((dir / "ck" / "final").string().c_str(), f.train, f.holdout, &resumed),
            CMVP_OK)
      << cmvp_last_error();
  cmvp_eval again{};
  ASSERT_EQ(cmvp_run_evaluate(resumed, f.holdout, &again, nullptr), CMVP_OK);
  EXPECT_EQ(std::memcmp(&eval, &again, sizeof eval), 0);
  cmvp_run_free(resumed);
  cmvp_run_free(run);
  fs::remove_all(dir);
}

TEST(CApi, Verification) {
  cmvp_certification c{};
  ASSERT_EQ(cmvp_verify_trace_bound(20, 1, &c), CMVP_OK);
  EXPECT_EQ(c.instances, 20);
  EXPECT_EQ(c.violations, 0);
  ASSERT_EQ(cmvp_verify_monotonicity(20, 1, &c), CMVP_OK);
  EXPECT_EQ(c.violations, 0);
  cmvp_consistency k{};
  ASSERT_EQ(cmvp_verify_consistency(2, 4, &k, nullptr), CMVP_OK);
  EXPECT_EQ(k.trials, 24);
  EXPECT_EQ(k.violations, 0);
  EXPECT_LE(k.zero_noise_distance, 1e-10);
}

TEST(CApi, Cost) {
  const std::vector<uint64_t> p(10, 10), big_p(10, 16);
  uint64_t flops = 0;
  ASSERT_EQ(cmvp_cost_estimate(6, 64, 4800, p.data(), big_p.data(), 10, &flops), CMVP_OK);
  EXPECT_EQ(flops, 31334400u);
  Fixture f;
  uint64_t agents = 0, dim = 0, samples = 0, lp[4], fp[4];
  size_t classes = 0;
  ASSERT_EQ(cmvp_config_cost_shape(f.cfg, &agents, &dim, &samples, lp, fp, 4, &classes), CMVP_OK);
  EXPECT_EQ(agents, 2u);
  EXPECT_EQ(dim, 6u);
  EXPECT_EQ(samples, 20u);
  EXPECT_EQ(classes, 2u);
  EXPECT_EQ(fp[1], 3u);
  EXPECT_EQ(cmvp_config_cost_shape(f.cfg, &agents, &dim, &samples, lp, fp, 1, &classes), CMVP_INVALID_ARGUMENT);
  double seconds = -1.0;
  ASSERT_EQ(cmvp_cost_measure(2, 8, 40, lp, fp, 2, 3, &seconds), CMVP_OK);
  EXPECT_GE(seconds, 0.0);
}

TEST(CApi, BasisMessages) {
  // 3 x 2 orthonormal, column-major
  const double basis[6] = {1, 0, 0, 0, 0.6, 0.8};
  const double sv[2] = {2.0, 0.5};
  const cmvp_basis_header h{4, 1, 17, 3, 2};
  uint8_t* bytes = nullptr;
  size_t size = 0;
  ASSERT_EQ(cmvp_basis_serialize(&h, basis, sv, &bytes, &size), CMVP_OK);
  EXPECT_EQ(size, 26u + 6u * 8u + 2u * 8u);
  cmvp_basis_header back{};
  ASSERT_EQ(cmvp_basis_deserialize(bytes, size, &back, nullptr, 0, nullptr, 0), CMVP_OK);
  EXPECT_EQ(back.round, 17u);
  EXPECT_EQ(back.rank, 2u);
  double out_basis[6], out_sv[2];
  ASSERT_EQ(cmvp_basis_deserialize(bytes, size, &back, out_basis, 6, out_sv, 2), CMVP_OK);
  EXPECT_EQ(std::memcmp(out_basis, basis, sizeof basis), 0);
  EXPECT_EQ(std::memcmp(out_sv, sv, sizeof sv), 0);
  EXPECT_EQ(cmvp_basis_deserialize(bytes, size, &back, out_basis, 5, out_sv, 2), CMVP_INVALID_ARGUMENT);
  EXPECT_EQ(cmvp_basis_deserialize(bytes, size - 1, &back, nullptr, 0, nullptr, 0), CMVP_CORRUPT_MESSAGE);
  bytes[0] = 'N';
  EXPECT_EQ(cmvp_basis_deserialize(bytes, size, &back, nullptr, 0, nullptr, 0), CMVP_CORRUPT_MESSAGE);
  cmvp_free(bytes);
  const double skew[6] = {1, 0, 0, 1, 1, 0};
  EXPECT_NE(cmvp_basis_serialize(&h, skew, sv, &bytes, &size), CMVP_OK);
}

}  // namespace
