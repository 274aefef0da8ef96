// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeup/moeup.h"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

namespace {

using Json = nlohmann::json;
namespace fs = std::filesystem;

std::string take(char* s) {
  std::string out = s ? s : "";
  moeup_string_free(s);
  return out;
}

const char* kSmall = R"({
  "model": {"vocab": 16, "hidden": 8, "layers": 2, "heads": 2, "kv_heads": 1,
            "ffn_hidden": 8, "seq_len": 8},
  "gate": {"num_experts": 4, "top_k": 2},
  "seed": 3,
  "train": {"schedule": {"lr_max": 0.003, "lr_min": 0.00003, "warmup_steps": 2,
                         "total_steps": 10},
            "batch_sequences": 2},
  "eval": {"sequences": 4}
})";

class Dir {
 public:
  Dir() : path_(fs::temp_directory_path() / ("moeup_capi_" + std::to_string(counter_++) + "_" +
                                              std::to_string(::testing::UnitTest::GetInstance()->random_seed()))) {
    fs::remove_all(path_);
  }
  ~Dir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  static inline int counter_ = 0;
  fs::path path_;
};

TEST(CApi, StatusNamesAndErrors) {
  EXPECT_STREQ(moeup_status_name(MOEUP_ERR_FOLDING), "folding");
  char* out = nullptr;
  EXPECT_EQ(moeup_config_resolve(R"({"nope": 1})", nullptr, &out), MOEUP_ERR_CONFIG);
  EXPECT_EQ(out, nullptr);
  EXPECT_NE(std::string(moeup_last_error()).find("nope"), std::string::npos);
  EXPECT_EQ(moeup_config_resolve("{not json", nullptr, &out), MOEUP_ERR_CONFIG);
  EXPECT_EQ(moeup_config_resolve(nullptr, nullptr, nullptr), MOEUP_ERR_CONFIG);
  ASSERT_EQ(moeup_config_resolve(nullptr, nullptr, &out), MOEUP_OK);
  EXPECT_STREQ(moeup_last_error(), "");
  take(out);
}

TEST(CApi, LastErrorIsPerThread) {
  char* out = nullptr;
  ASSERT_EQ(moeup_config_resolve(R"({"nope": 1})", nullptr, &out), MOEUP_ERR_CONFIG);
  std::string other = "unset";
  std::thread([&] { other = moeup_last_error(); }).join();
  EXPECT_EQ(other, "");
  EXPECT_NE(std::string(moeup_last_error()), "");
}

TEST(CApi, ResolveMergesOverridesAndRoundTrips) {
  char* out = nullptr;
  ASSERT_EQ(moeup_config_resolve(kSmall, R"({"seed": 9, "model": {"layers": 3}})", &out),
            MOEUP_OK);
  const std::string resolved = take(out);
  const Json j = Json::parse(resolved);
  EXPECT_EQ(j["seed"], 9);
  EXPECT_EQ(j["model"]["layers"], 3);
  EXPECT_EQ(j["model"]["hidden"], 8);
  ASSERT_EQ(moeup_config_resolve(resolved.c_str(), nullptr, &out), MOEUP_OK);
  EXPECT_EQ(take(out), resolved);
}

TEST(CApi, ConfigKeysListEverySection) {
  char* out = nullptr;
  ASSERT_EQ(moeup_config_keys(&out), MOEUP_OK);
  const std::string keys = take(out);
  for (const char* k : {"seed = ", "model.hidden = ", "gate.capacity_factor = ",
                        "plan.attention.tp = ", "cost.convention = ", "upcycle.tp = ",
                        "train.schedule.lr_max = ", "train.optimizer.kind = ", "eval.sequences = ",
                        "ablate.axis = ", "flops.tokens = "}) {
    EXPECT_NE(keys.find(k), std::string::npos) << k;
  }
}

TEST(CApi, UpcycleSaveLoadAndLogits) {
  Dir dir;
  moeup_checkpoint* dense = nullptr;
  ASSERT_EQ(moeup_checkpoint_init_dense(kSmall, &dense), MOEUP_OK);
  moeup_checkpoint* moe = nullptr;
  ASSERT_EQ(moeup_upcycle(dense, kSmall, &moe), MOEUP_OK);
  char* info = nullptr;
  ASSERT_EQ(moeup_checkpoint_info(moe, &info), MOEUP_OK);
  const Json j = Json::parse(take(info));
  EXPECT_EQ(j["moe"]["gate"]["num_experts"], 4);

  const std::vector<int32_t> tokens{1, 2, 3, 4, 5};
  std::vector<double> a(5 * 16), b(5 * 16);
  ASSERT_EQ(moeup_checkpoint_logits(dense, tokens.data(), tokens.size(), a.data(), a.size()),
            MOEUP_OK);
  ASSERT_EQ(moeup_checkpoint_logits(moe, tokens.data(), tokens.size(), b.data(), b.size()),
            MOEUP_OK);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12 * (1 + std::abs(a[i])));
  EXPECT_EQ(moeup_checkpoint_logits(moe, tokens.data(), tokens.size(), b.data(), 3),
            MOEUP_ERR_CONFIG);

  ASSERT_EQ(moeup_checkpoint_save(moe, (dir.path() / "m").c_str()), MOEUP_OK);
  moeup_checkpoint* back = nullptr;
  ASSERT_EQ(moeup_checkpoint_load((dir.path() / "m").c_str(), &back), MOEUP_OK);
  char* report = nullptr;
  EXPECT_EQ(moeup_verify_equivalence(moe, back, &report), MOEUP_OK);
  EXPECT_TRUE(Json::parse(take(report))["equal"]);
  EXPECT_EQ(moeup_verify_equivalence(dense, moe, &report), MOEUP_ERR_IO);

  moeup_checkpoint* missing = nullptr;
  EXPECT_EQ(moeup_checkpoint_load((dir.path() / "none").c_str(), &missing), MOEUP_ERR_IO);
  EXPECT_EQ(missing, nullptr);
  moeup_checkpoint_free(back);
  moeup_checkpoint_free(moe);
  moeup_checkpoint_free(dense);
}

TEST(CApi, ShardedUpcycleMatchesWholeModel) {
  Dir dir;
  Json cfg = Json::parse(kSmall);
  cfg["upcycle"] = {{"tp", 2}, {"ep", 2}, {"shard_dir", (dir.path() / "shards").string()}};
  const std::string text = cfg.dump();
  moeup_checkpoint* dense = nullptr;
  ASSERT_EQ(moeup_checkpoint_init_dense(text.c_str(), &dense), MOEUP_OK);
  char* report = nullptr;
  ASSERT_EQ(moeup_upcycle_verify(dense, text.c_str(), &report), MOEUP_OK);
  const Json r = Json::parse(take(report));
  EXPECT_TRUE(r["equal"]);
  EXPECT_EQ(r["tp"], 2);
  moeup_checkpoint *sharded = nullptr, *full = nullptr;
  ASSERT_EQ(moeup_upcycle(dense, text.c_str(), &sharded), MOEUP_OK);
  EXPECT_TRUE(fs::exists(dir.path() / "shards" / "rank_3" / "shard.json"));
  ASSERT_EQ(moeup_upcycle(dense, kSmall, &full), MOEUP_OK);
  EXPECT_EQ(moeup_verify_equivalence(sharded, full, &report), MOEUP_OK);
  take(report);
  moeup_checkpoint_free(sharded);
  moeup_checkpoint_free(full);

  cfg["upcycle"] = {{"tp", 3}};
  EXPECT_EQ(moeup_upcycle(dense, cfg.dump().c_str(), &sharded), MOEUP_ERR_CONFIG);
  moeup_checkpoint_free(dense);
}

TEST(CApi, PlanAndFolding) {
  const char* folded = R"({"plan": {"world": 8, "node_size": 8,
      "attention": {"tp": 2, "cp": 2, "dp": 2, "pp": 1},
      "moe": {"etp": 1, "ep": 8, "edp": 1, "pp": 1}}})";
  char *report = nullptr, *table = nullptr;
  ASSERT_EQ(moeup_plan(folded, "tp,cp,ep", &report, &table), MOEUP_OK);
  const Json r = Json::parse(take(report));
  EXPECT_EQ(r["groups.ep.rank0"], Json({0, 1, 2, 3, 4, 5, 6, 7}));
  EXPECT_NE(take(table).find("ep"), std::string::npos);

  const char* wide = R"({"plan": {"world": 16, "node_size": 8, "attention": {"dp": 16},
      "moe": {"ep": 16}}, "gate": {"num_experts": 16}})";
  EXPECT_EQ(moeup_plan(wide, "tp", nullptr, nullptr), MOEUP_OK);
  EXPECT_EQ(moeup_plan(wide, "ep", &report, nullptr), MOEUP_ERR_FOLDING);
  EXPECT_NE(take(report), "");
  EXPECT_NE(std::string(moeup_last_error()).find("ep group"), std::string::npos);
  EXPECT_EQ(moeup_plan(wide, "xp", nullptr, nullptr), MOEUP_ERR_CONFIG);

  const char* tp3 = R"({"plan": {"world": 8, "attention": {"tp": 3}, "moe": {"ep": 8}}})";
  EXPECT_EQ(moeup_plan(tp3, nullptr, nullptr, nullptr), MOEUP_ERR_CONFIG);
  EXPECT_NE(std::string(moeup_last_error()).find("3*1*1*1 = 3 != world 8"), std::string::npos);
}

TEST(CApi, FlopsReportsRatioAndPublishedFigures) {
  char* report = nullptr;
  ASSERT_EQ(moeup_flops(nullptr, &report), MOEUP_OK);
  const Json r = Json::parse(take(report));
  EXPECT_NEAR(r["ratio"].get<double>(), 1.6, 0.15);
  EXPECT_NEAR(r["dense"]["total_params"].get<double>() / 8.0e9, 1.0, 0.01);
  EXPECT_EQ(r["published"]["moe_total_params"], 34.4e9);
  ASSERT_EQ(moeup_flops(R"({"flops": {"preset": "model"}})", &report), MOEUP_OK);
  EXPECT_FALSE(Json::parse(take(report)).contains("published"));
}

TEST(CApi, TrainEvalAndAblate) {
  Dir dir;
  fs::create_directories(dir.path());
  moeup_checkpoint* model = nullptr;
  ASSERT_EQ(moeup_checkpoint_init_dense(kSmall, &model), MOEUP_OK);
  double before = 0.0, after = 0.0;
  ASSERT_EQ(moeup_eval(model, kSmall, &before), MOEUP_OK);
  char* summary = nullptr;
  const fs::path csv = dir.path() / "m.csv";
  ASSERT_EQ(moeup_train(model, kSmall, "run", csv.c_str(), &summary), MOEUP_OK);
  EXPECT_EQ(Json::parse(take(summary))["steps"], 10);
  ASSERT_EQ(moeup_eval(model, kSmall, &after), MOEUP_OK);
  EXPECT_LT(after, before);
  std::ifstream in(csv);
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "step,run_id,loss,lr,drop_rate,load_entropy");

  Json cfg = Json::parse(kSmall);
  cfg["ablate"] = {{"axis", "cf"}, {"values", {1, "dropless"}}};
  ASSERT_EQ(moeup_ablate(model, cfg.dump().c_str(), (dir.path() / "abl").c_str(), &summary),
            MOEUP_OK);
  const Json s = Json::parse(take(summary));
  ASSERT_EQ(s["runs"].size(), 2u);
  EXPECT_EQ(s["runs"][1]["run_id"], "dropless");
  EXPECT_TRUE(fs::exists(dir.path() / "abl" / "cf1.csv"));
  EXPECT_TRUE(fs::exists(dir.path() / "abl" / "dropless.csv"));
  moeup_checkpoint_free(model);
}

TEST(CApi, NumericAbortKeepsGoodRows) {
  Dir dir;
  fs::create_directories(dir.path());
  Json cfg = Json::parse(kSmall);
  cfg["train"]["optimizer"] = {{"kind", "sgd"}, {"grad_clip", 0.0}};
  cfg["train"]["schedule"] = {{"lr_max", 1e300}, {"lr_min", 1e299}, {"warmup_steps", 1},
                              {"total_steps", 10}};
  moeup_checkpoint* model = nullptr;
  ASSERT_EQ(moeup_checkpoint_init_dense(kSmall, &model), MOEUP_OK);
  const fs::path csv = dir.path() / "m.csv";
  char* summary = nullptr;
  EXPECT_EQ(moeup_train(model, cfg.dump().c_str(), "boom", csv.c_str(), &summary),
            MOEUP_ERR_NUMERIC);
  EXPECT_EQ(summary, nullptr);
  EXPECT_NE(std::string(moeup_last_error()).find("last good step"), std::string::npos);
  std::ifstream in(csv);
  std::string line;
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_GE(rows, 2);
  moeup_checkpoint_free(model);
}

}  // namespace
