// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeup/moeup.h"

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "moeup/cli/run_config.hpp"
#include "moeup/model/checkpoint.hpp"
#include "moeup/model/transformer.hpp"
#include "moeup/plan/plan.hpp"
#include "moeup/train/train.hpp"
#include "moeup/upcycle/upcycle.hpp"

struct moeup_checkpoint {
  moeup::Checkpoint ckpt;
};

namespace {

using moeup::ErrorCode;
using moeup::Json;

thread_local std::string g_last_error;

moeup_status status_of(ErrorCode code) {
  switch (code) {
    case ErrorCode::kConfig:
    case ErrorCode::kDimension:
    case ErrorCode::kInput:
    case ErrorCode::kInvalidGate:
      return MOEUP_ERR_CONFIG;
    case ErrorCode::kIo:
    case ErrorCode::kChecksum:
    case ErrorCode::kLength:
    case ErrorCode::kTruncated:
    case ErrorCode::kVersion:
    case ErrorCode::kSchema:
      return MOEUP_ERR_IO;
    case ErrorCode::kMissingTile:
    case ErrorCode::kOverlappingTile:
    case ErrorCode::kReplicaMismatch:
    case ErrorCode::kVerify:
      return MOEUP_ERR_VERIFY;
    case ErrorCode::kFolding:
      return MOEUP_ERR_FOLDING;
    case ErrorCode::kNumeric:
      return MOEUP_ERR_NUMERIC;
    case ErrorCode::kOracleInvalid:
      return MOEUP_ERR_INTERNAL;
  }
  return MOEUP_ERR_INTERNAL;
}

template <typename Fn>
moeup_status guarded(Fn&& fn) {
  try {
    g_last_error.clear();
    fn();
    return MOEUP_OK;
  } catch (const moeup::Error& e) {
    g_last_error = std::string(moeup::error_code_name(e.code())) + ": " + e.what();
    return status_of(e.code());
  } catch (const Json::exception& e) {
    g_last_error = std::string("config: ") + e.what();
    return MOEUP_ERR_CONFIG;
  } catch (const std::filesystem::filesystem_error& e) {
    g_last_error = std::string("io: ") + e.what();
    return MOEUP_ERR_IO;
  } catch (const std::exception& e) {
    g_last_error = std::string("internal: ") + e.what();
    return MOEUP_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "internal: unknown exception";
    return MOEUP_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (p == nullptr) moeup::fail(ErrorCode::kConfig, std::string(what) + " must not be NULL");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (out == nullptr) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

void put(char** out, const std::string& s) {
  if (out != nullptr) *out = dup_string(s);
}

moeup::RunConfig parse_config(const char* config_json) {
  if (config_json == nullptr) return moeup::run_config_from_json(Json::object());
  return moeup::run_config_from_json(Json::parse(config_json));
}

std::vector<moeup::Shard> upcycled_shards(const moeup::Checkpoint& dense,
                                          const moeup::RunConfig& cfg) {
  const moeup::UpcycleOptions opts = cfg.upcycle_options();
  std::vector<moeup::Shard> out;
  for (const moeup::Shard& s : moeup::shard_dense(dense, cfg.upcycle.tp, cfg.upcycle.ep)) {
    out.push_back(moeup::upcycle_shard(s, opts));
  }
  return out;
}

Json equivalence_json(const moeup::EquivalenceReport& r) {
  Json j{{"equal", r.equal},
         {"tensors_compared", r.tensors_compared},
         {"differing_tensors", r.differing_tensors}};
  if (!r.equal) {
    j["first_tensor"] = r.first_tensor;
    j["first_index"] = r.first_index;
    j["a_value"] = r.a_value;
    j["b_value"] = r.b_value;
  }
  return j;
}

Json flops_side(const moeup::ParamCount& p, const moeup::FlopReport& f) {
  return Json{{"total_params", p.total},
              {"active_params", p.active},
              {"embedding_params", p.embedding},
              {"flops", f.total},
              {"matmul_flops", f.matmul},
              {"attention_flops", f.attention},
              {"formula", f.formula}};
}

Json run_summary(const moeup::RunMetrics& run) {
  Json j{{"run_id", run.run_id}, {"steps", run.steps.size()}};
  if (!run.steps.empty()) {
    j["step0_loss"] = run.steps.front().loss;
    j["final_loss"] = run.steps.back().loss;
    j["step0_drop_rate"] = run.steps.front().drop_rate;
    j["final_lr"] = run.steps.back().lr;
  }
  return j;
}

}  // namespace

extern "C" {

const char* moeup_version(void) { return "0.1.0"; }

const char* moeup_status_name(moeup_status status) {
  switch (status) {
    case MOEUP_OK: return "ok";
    case MOEUP_ERR_INTERNAL: return "internal";
    case MOEUP_ERR_CONFIG: return "config";
    case MOEUP_ERR_IO: return "io";
    case MOEUP_ERR_VERIFY: return "verify";
    case MOEUP_ERR_FOLDING: return "folding";
    case MOEUP_ERR_NUMERIC: return "numeric";
  }
  return "unknown";
}

const char* moeup_last_error(void) { return g_last_error.c_str(); }

void moeup_string_free(char* s) { std::free(s); }

moeup_status moeup_config_resolve(const char* file_json, const char* overrides_json,
                                  char** resolved_json) {
  return guarded([&] {
    require(resolved_json, "resolved_json");
    Json j = file_json ? Json::parse(file_json) : Json::object();
    if (overrides_json) j = moeup::merge_config(std::move(j), Json::parse(overrides_json));
    put(resolved_json, to_json(moeup::run_config_from_json(j)).dump(2));
  });
}

moeup_status moeup_config_keys(char** text) {
  return guarded([&] {
    require(text, "text");
    put(text, moeup::run_config_keys());
  });
}

moeup_status moeup_checkpoint_load(const char* dir, moeup_checkpoint** out) {
  return guarded([&] {
    require(dir, "dir");
    require(out, "out");
    *out = new moeup_checkpoint{moeup::load_checkpoint(dir)};
  });
}

moeup_status moeup_checkpoint_save(const moeup_checkpoint* ckpt, const char* dir) {
  return guarded([&] {
    require(ckpt, "ckpt");
    require(dir, "dir");
    moeup::save_checkpoint(ckpt->ckpt, dir);
  });
}

moeup_status moeup_checkpoint_init_dense(const char* config_json, moeup_checkpoint** out) {
  return guarded([&] {
    require(out, "out");
    const moeup::RunConfig cfg = parse_config(config_json);
    *out = new moeup_checkpoint{moeup::init_dense(cfg.model, cfg.seed, cfg.train.init_std)};
  });
}

void moeup_checkpoint_free(moeup_checkpoint* ckpt) { delete ckpt; }

moeup_status moeup_checkpoint_info(const moeup_checkpoint* ckpt, char** info_json) {
  return guarded([&] {
    require(ckpt, "ckpt");
    require(info_json, "info_json");
    const moeup::Checkpoint& c = ckpt->ckpt;
    Json moe = nullptr;
    if (c.moe) moe = Json{{"gate", to_json(c.moe->gate)}, {"layers", c.moe->layers}};
    put(info_json, Json{{"model", to_json(c.config)},
                        {"moe", moe},
                        {"dtype", moeup::dtype_name(c.dtype)},
                        {"param_count", c.param_count()},
                        {"tensors", c.tensors.size()}}
                       .dump(2));
  });
}

moeup_status moeup_checkpoint_logits(const moeup_checkpoint* ckpt, const int32_t* tokens,
                                     size_t n, double* out, size_t out_len) {
  return guarded([&] {
    require(ckpt, "ckpt");
    require(tokens, "tokens");
    require(out, "out");
    const std::vector<int> ids(tokens, tokens + n);
    const moeup::Tensor logits = moeup::forward_logits(ckpt->ckpt, ids);
    if (out_len != logits.numel()) {
      moeup::fail(ErrorCode::kConfig, "out_len " + std::to_string(out_len) + " != " +
                                          std::to_string(logits.numel()));
    }
    std::memcpy(out, logits.data().data(), out_len * sizeof(double));
  });
}

moeup_status moeup_upcycle(const moeup_checkpoint* dense, const char* config_json,
                           moeup_checkpoint** out) {
  return guarded([&] {
    require(dense, "dense");
    require(out, "out");
    const moeup::RunConfig cfg = parse_config(config_json);
    const std::string& shard_dir = cfg.upcycle.shard_dir;
    if (cfg.upcycle.tp * cfg.upcycle.ep == 1 && shard_dir.empty()) {
      *out = new moeup_checkpoint{moeup::upcycle_full(dense->ckpt, cfg.upcycle_options())};
      return;
    }
    const std::vector<moeup::Shard> shards = upcycled_shards(dense->ckpt, cfg);
    if (!shard_dir.empty()) {
      for (const moeup::Shard& s : shards) {
        moeup::save_shard(s, std::filesystem::path(shard_dir) /
                                 ("rank_" + std::to_string(s.spec.rank)));
      }
    }
    *out = new moeup_checkpoint{moeup::gather_moe(shards)};
  });
}

moeup_status moeup_upcycle_verify(const moeup_checkpoint* dense, const char* config_json,
                                  char** report_json) {
  return guarded([&] {
    require(dense, "dense");
    const moeup::RunConfig cfg = parse_config(config_json);
    const moeup::Checkpoint full = moeup::upcycle_full(dense->ckpt, cfg.upcycle_options());
    const moeup::Checkpoint gathered = moeup::gather_moe(upcycled_shards(dense->ckpt, cfg));
    const moeup::EquivalenceReport r = moeup::verify_equivalence(full, gathered);
    Json j = equivalence_json(r);
    j["tp"] = cfg.upcycle.tp;
    j["ep"] = cfg.upcycle.ep;
    put(report_json, j.dump(2));
    if (!r.equal) {
      moeup::fail(ErrorCode::kVerify, std::to_string(r.differing_tensors) +
                                          " tensors differ, first " + r.first_tensor + "[" +
                                          std::to_string(r.first_index) + "]");
    }
  });
}

moeup_status moeup_verify_equivalence(const moeup_checkpoint* a, const moeup_checkpoint* b,
                                      char** report_json) {
  return guarded([&] {
    require(a, "a");
    require(b, "b");
    const moeup::EquivalenceReport r = moeup::verify_equivalence(a->ckpt, b->ckpt);
    put(report_json, equivalence_json(r).dump(2));
    if (!r.equal) moeup::fail(ErrorCode::kVerify, "checkpoints differ at " + r.first_tensor);
  });
}

moeup_status moeup_plan(const char* config_json, const char* check_folding,
                        char** report_json, char** table_text) {
  return guarded([&] {
    const moeup::PlanInputs in = parse_config(config_json).plan_inputs();
    moeup::validate_plan(in.plan, in.model, &in.gate);
    const moeup::GroupMap groups = moeup::build_groups(in.plan);
    const moeup::CostReport report = moeup::plan_report(in, groups);
    if (report_json != nullptr) {
      Json j = Json::object();
      for (const moeup::MetricRecord& r : moeup::report_records(in, groups, report)) {
        j[r.metric] = r.value;
      }
      put(report_json, j.dump(2));
    }
    if (table_text != nullptr) {
      std::ostringstream os;
      moeup::write_report_table(os, in, groups, report);
      put(table_text, os.str());
    }
    if (check_folding == nullptr || *check_folding == '\0') return;
    std::string failing;
    std::stringstream list(check_folding);
    for (std::string kind; std::getline(list, kind, ',');) {
      if (kind.empty()) continue;
      const moeup::GroupKind k = moeup::parse_group_kind(kind);
      if (!report.intra_node[static_cast<std::size_t>(k)]) {
        const auto& g = groups.group(k, 0);
        failing += (failing.empty() ? "" : "; ") + kind + " group of rank 0 spans ranks " +
                   std::to_string(g.front()) + ".." + std::to_string(g.back()) +
                   " across nodes of " + std::to_string(in.plan.node_size);
      }
    }
    if (!failing.empty()) moeup::fail(ErrorCode::kFolding, "inter-node groups: " + failing);
  });
}

moeup_status moeup_flops(const char* config_json, char** report_json) {
  return guarded([&] {
    require(report_json, "report_json");
    const moeup::RunConfig cfg = parse_config(config_json);
    const moeup::ModelConfig model = cfg.flops_model();
    model.validate();
    moeup::MoESpec spec;
    spec.gate = cfg.gate;
    if (cfg.moe_layers) {
      spec.layers = *cfg.moe_layers;
    } else {
      for (std::size_t l = 0; l < model.layers; ++l) spec.layers.push_back(l);
    }
    const auto& f = cfg.flops;
    const moeup::ParamCount dp = moeup::count_params(model, std::nullopt);
    const moeup::ParamCount mp = moeup::count_params(model, spec);
    const moeup::FlopReport df = moeup::forward_flops(model, std::nullopt, f.tokens, f.convention,
                                                      f.include_attention_quadratic,
                                                      f.include_embedding);
    const moeup::FlopReport mf = moeup::forward_flops(model, spec, f.tokens, f.convention,
                                                      f.include_attention_quadratic,
                                                      f.include_embedding);
    Json j{{"preset", f.preset},
           {"tokens", f.tokens},
           {"convention", to_string(f.convention)},
           {"experts", spec.gate.num_experts},
           {"top_k", spec.gate.top_k},
           {"moe_layers", spec.layers.size()},
           {"dense", flops_side(dp, df)},
           {"moe", flops_side(mp, mf)},
           {"ratio", mf.total / df.total},
           {"param_ratio", static_cast<double>(mp.total) / static_cast<double>(dp.total)}};
    if (f.preset == "llama3-8b" && spec.gate.num_experts == 8 && spec.gate.top_k == 2) {
      j["published"] = {{"dense_total_params", 8.0e9},
                    {"moe_total_params", 34.4e9},
                    {"moe_active_params", 11.8e9},
                    {"dense_flops", 4.7e14},
                    {"moe_flops", 7.5e14},
                    {"ratio", 1.6},
                    {"note",
                     "the published 34.4B/11.8B parameter counts are not reproduced by "
                     "converting every layer of the standard Llama 3-8B dimensions; "
                     "computed values are reported alongside"}};
    }
    put(report_json, j.dump(2));
  });
}

moeup_status moeup_train(moeup_checkpoint* model, const char* config_json, const char* run_id,
                         const char* csv_path, char** summary_json) {
  return guarded([&] {
    require(model, "model");
    const moeup::RunConfig cfg = parse_config(config_json);
    const std::string id = run_id ? run_id : "train";
    std::ofstream csv;
    if (csv_path != nullptr) {
      csv.open(csv_path, std::ios::trunc);
      if (!csv) moeup::fail(ErrorCode::kIo, std::string("cannot write ") + csv_path);
      csv << moeup::kMetricsCsvHeader << '\n';
    }
    moeup::RunMetrics one;
    one.run_id = id;
    const moeup::RunMetrics run =
        moeup::train(model->ckpt, cfg.train_config(), id, [&](const moeup::StepMetrics& m) {
          if (!csv.is_open()) return;
          one.steps.assign(1, m);
          moeup::write_metrics_csv(csv, one, false);
          csv.flush();
        });
    put(summary_json, run_summary(run).dump(2));
  });
}

moeup_status moeup_eval(const moeup_checkpoint* model, const char* config_json,
                        double* perplexity) {
  return guarded([&] {
    require(model, "model");
    require(perplexity, "perplexity");
    const moeup::RunConfig cfg = parse_config(config_json);
    const moeup::TrainConfig t = cfg.train_config();
    const moeup::ModelConfig& m = model->ckpt.config;
    const std::size_t len = cfg.eval.seq_len ? cfg.eval.seq_len : m.seq_len;
    const moeup::SyntheticData data(t.blend, m.vocab, t.markov_branching);
    const auto seqs = data.eval_sequences(cfg.eval.sequences, len);
    *perplexity = moeup::eval_perplexity(model->ckpt, seqs);
  });
}

moeup_status moeup_ablate(const moeup_checkpoint* dense, const char* config_json,
                          const char* out_dir, char** summary_json) {
  return guarded([&] {
    require(dense, "dense");
    require(out_dir, "out_dir");
    const moeup::RunConfig cfg = parse_config(config_json);
    const moeup::TrainConfig t = cfg.train_config();
    moeup::Checkpoint base = dense->ckpt.clone();
    if (cfg.ablate.pretrain_steps > 0) {
      moeup::TrainConfig pre = t;
      pre.schedule.total_steps = cfg.ablate.pretrain_steps;
      pre.schedule.warmup_steps =
          std::min(pre.schedule.warmup_steps, cfg.ablate.pretrain_steps / 10);
      moeup::train(base, pre, "pretrain");
    }
    std::filesystem::create_directories(out_dir);
    const auto runs = moeup::ablate(base, cfg.upcycle_options(), t, cfg.ablate.spec);
    Json summary{{"axis", to_string(cfg.ablate.spec.axis)}, {"runs", Json::array()}};
    for (const moeup::RunMetrics& run : runs) {
      const std::filesystem::path path = std::filesystem::path(out_dir) / (run.run_id + ".csv");
      std::ofstream os(path, std::ios::trunc);
      if (!os) moeup::fail(ErrorCode::kIo, "cannot write " + path.string());
      moeup::write_metrics_csv(os, run);
      Json r = run_summary(run);
      r["csv"] = path.string();
      summary["runs"].push_back(r);
    }
    put(summary_json, summary.dump(2));
  });
}

}  // extern "C"
