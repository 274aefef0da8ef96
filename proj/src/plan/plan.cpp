// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeup/plan/plan.hpp"

#include <cstdio>
#include <iomanip>
#include <sstream>

#include "moeup/core/error.hpp"

namespace moeup {
namespace {

constexpr std::array<const char*, kNumGroupKinds> kKindNames{"tp", "cp", "dp", "pp",
                                                             "etp", "ep", "edp"};

std::string num(std::size_t v) { return std::to_string(v); }

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string join(const std::vector<std::size_t>& ranks) {
  std::string out = "{";
  for (std::size_t i = 0; i < ranks.size(); ++i) out += (i ? "," : "") + num(ranks[i]);
  return out + "}";
}

// Size and rank stride of each group kind under the documented nesting.
std::array<std::pair<std::size_t, std::size_t>, kNumGroupKinds> layout(const ParallelPlan& p) {
  const AttentionDims& a = p.attention;
  const MoEDims& m = p.moe;
  return {{{a.tp, 1},
           {a.cp, a.tp},
           {a.dp, a.tp * a.cp},
           {a.pp, a.tp * a.cp * a.dp},
           {m.etp, 1},
           {m.ep, m.etp},
           {m.edp, m.etp * m.ep}}};
}

}  // namespace

std::string to_string(Dispatcher d) {
  return d == Dispatcher::kAllToAll ? "alltoall" : "allgather";
}

Dispatcher parse_dispatcher(const std::string& text) {
  if (text == "alltoall") return Dispatcher::kAllToAll;
  if (text == "allgather") return Dispatcher::kAllGather;
  fail(ErrorCode::kConfig, "unknown dispatcher '" + text + "' (alltoall|allgather)");
}

std::string to_string(GroupKind kind) { return kKindNames[static_cast<std::size_t>(kind)]; }

GroupKind parse_group_kind(const std::string& text) {
  for (GroupKind k : kAllGroupKinds) {
    if (to_string(k) == text) return k;
  }
  fail(ErrorCode::kConfig, "unknown group kind '" + text + "' (tp|cp|dp|pp|etp|ep|edp)");
}

std::string to_string(FlopConvention c) { return c == FlopConvention::k2P ? "2P" : "6P"; }

FlopConvention parse_flop_convention(const std::string& text) {
  if (text == "2P" || text == "2p") return FlopConvention::k2P;
  if (text == "6P" || text == "6p") return FlopConvention::k6P;
  fail(ErrorCode::kConfig, "unknown FLOP convention '" + text + "' (2P|6P)");
}

Json to_json(const ParallelPlan& p) {
  Json j;
  j["world"] = p.world;
  j["node_size"] = p.node_size;
  j["attention"] = {{"tp", p.attention.tp}, {"cp", p.attention.cp},
                    {"dp", p.attention.dp}, {"pp", p.attention.pp}};
  j["moe"] = {{"etp", p.moe.etp}, {"ep", p.moe.ep}, {"edp", p.moe.edp}, {"pp", p.moe.pp}};
  j["vp"] = p.vp;
  j["microbatches"] = p.microbatches;
  j["dispatcher"] = to_string(p.dispatcher);
  return j;
}

ParallelPlan parallel_plan_from_json(const Json& j, ParallelPlan p) {
  JsonSection s(j, "plan");
  s.read("world", p.world);
  s.read("node_size", p.node_size);
  if (const Json* a = s.raw("attention")) {
    JsonSection as(*a, "plan.attention");
    as.read("tp", p.attention.tp);
    as.read("cp", p.attention.cp);
    as.read("dp", p.attention.dp);
    as.read("pp", p.attention.pp);
    as.finish();
  }
  if (const Json* m = s.raw("moe")) {
    JsonSection ms(*m, "plan.moe");
    ms.read("etp", p.moe.etp);
    ms.read("ep", p.moe.ep);
    ms.read("edp", p.moe.edp);
    ms.read("pp", p.moe.pp);
    ms.finish();
  }
  s.read("vp", p.vp);
  s.read("microbatches", p.microbatches);
  std::string dispatcher = to_string(p.dispatcher);
  s.read("dispatcher", dispatcher);
  p.dispatcher = parse_dispatcher(dispatcher);
  s.finish();
  return p;
}

void validate_plan(const ParallelPlan& p, const ModelConfig& model, const GateConfig* gate) {
  std::vector<std::string> errors;
  const std::pair<const char*, std::size_t> dims[] = {
      {"world", p.world},        {"node_size", p.node_size}, {"attention.tp", p.attention.tp},
      {"attention.cp", p.attention.cp}, {"attention.dp", p.attention.dp},
      {"attention.pp", p.attention.pp}, {"moe.etp", p.moe.etp}, {"moe.ep", p.moe.ep},
      {"moe.edp", p.moe.edp},    {"moe.pp", p.moe.pp},        {"vp", p.vp},
      {"microbatches", p.microbatches}};
  for (const auto& [name, value] : dims) {
    if (value < 1) errors.push_back(std::string(name) + " = 0, must be >= 1");
  }
  if (!errors.empty()) fail(ErrorCode::kConfig, "invalid plan: " + errors.front());

  const AttentionDims& a = p.attention;
  const MoEDims& m = p.moe;
  const std::size_t attn = a.tp * a.cp * a.dp * a.pp;
  if (attn != p.world) {
    errors.push_back("attention tp*cp*dp*pp = " + num(a.tp) + "*" + num(a.cp) + "*" + num(a.dp) +
                     "*" + num(a.pp) + " = " + num(attn) + " != world " + num(p.world));
  }
  const std::size_t moe = m.etp * m.ep * m.edp * m.pp;
  if (moe != p.world) {
    errors.push_back("moe etp*ep*edp*pp = " + num(m.etp) + "*" + num(m.ep) + "*" + num(m.edp) +
                     "*" + num(m.pp) + " = " + num(moe) + " != world " + num(p.world));
  }
  if (a.pp != m.pp) {
    errors.push_back("attention pp " + num(a.pp) + " != moe pp " + num(m.pp));
  }
  if (model.heads % a.tp != 0) {
    errors.push_back("heads " + num(model.heads) + " mod tp " + num(a.tp) + " = " +
                     num(model.heads % a.tp) + " != 0");
  }
  if (gate && gate->num_experts % m.ep != 0) {
    errors.push_back("num_experts " + num(gate->num_experts) + " mod ep " + num(m.ep) + " = " +
                     num(gate->num_experts % m.ep) + " != 0");
  }
  if (model.ffn_hidden % m.etp != 0) {
    errors.push_back("ffn_hidden " + num(model.ffn_hidden) + " mod etp " + num(m.etp) + " = " +
                     num(model.ffn_hidden % m.etp) + " != 0");
  }
  if (model.layers % (a.pp * p.vp) != 0) {
    errors.push_back("layers " + num(model.layers) + " mod pp*vp " + num(a.pp) + "*" +
                     num(p.vp) + " = " + num(model.layers % (a.pp * p.vp)) + " != 0");
  }
  if (!errors.empty()) {
    std::string msg = "invalid plan:";
    for (const auto& e : errors) msg += "\n  " + e;
    fail(ErrorCode::kConfig, msg);
  }
}

GroupMap build_groups(const ParallelPlan& plan) {
  const AttentionDims& a = plan.attention;
  const MoEDims& m = plan.moe;
  if (plan.world < 1 || a.tp * a.cp * a.dp * a.pp != plan.world ||
      m.etp * m.ep * m.edp * m.pp != plan.world || a.pp != m.pp) {
    fail(ErrorCode::kConfig, "build_groups: plan dimensions do not factor the world size");
  }
  GroupMap map;
  map.world = plan.world;
  const auto dims = layout(plan);
  for (std::size_t k = 0; k < kNumGroupKinds; ++k) {
    const auto [size, stride] = dims[k];
    map.group_of[k].assign(plan.world, 0);
    std::vector<std::uint8_t> placed(plan.world, 0);
    for (std::size_t r = 0; r < plan.world; ++r) {
      if (placed[r]) continue;
      const std::size_t base = r - ((r / stride) % size) * stride;
      std::vector<std::size_t> members;
      for (std::size_t i = 0; i < size; ++i) members.push_back(base + i * stride);
      for (std::size_t member : members) {
        placed[member] = 1;
        map.group_of[k][member] = map.groups[k].size();
      }
      map.groups[k].push_back(std::move(members));
    }
  }
  return map;
}

std::array<bool, kNumGroupKinds> intra_node_report(const GroupMap& groups,
                                                   std::size_t node_size) {
  if (node_size < 1) fail(ErrorCode::kConfig, "node_size must be >= 1");
  std::array<bool, kNumGroupKinds> out{};
  for (std::size_t k = 0; k < kNumGroupKinds; ++k) {
    bool intra = true;
    for (const auto& g : groups.groups[k]) {
      for (std::size_t r : g) intra = intra && (r / node_size == g.front() / node_size);
    }
    out[k] = intra;
  }
  return out;
}

ParamCount count_params(const ModelConfig& m, const std::optional<MoESpec>& moe) {
  const std::size_t d = m.hidden, kv = m.kv_heads * m.head_dim();
  const std::size_t attention = 2 * d * d + 2 * d * kv + 2 * d;  // wq wo wk wv + norms
  const std::size_t ffn = 3 * d * m.ffn_hidden;
  ParamCount c;
  c.embedding = m.vocab * d;
  c.total = c.active = 2 * m.vocab * d + d;
  for (std::size_t l = 0; l < m.layers; ++l) {
    c.total += attention;
    c.active += attention;
    if (moe && moe->contains(l)) {
      const std::size_t n = moe->gate.num_experts, k = moe->gate.top_k;
      const std::size_t router = n > 1 ? 2 * d * n : 0;
      c.expert += n * ffn;
      c.router += router;
      c.total += n * ffn + router;
      c.active += k * ffn + router;
    } else {
      c.total += ffn;
      c.active += ffn;
    }
  }
  return c;
}

FlopReport forward_flops(const ModelConfig& model, const std::optional<MoESpec>& moe,
                         std::size_t tokens, FlopConvention convention,
                         bool include_attention_quadratic, bool include_embedding) {
  if (tokens < 1) fail(ErrorCode::kInput, "forward_flops: tokens must be >= 1");
  const double mult = convention == FlopConvention::k2P ? 2.0 : 6.0;
  const ParamCount p = count_params(model, moe);
  const double t = static_cast<double>(tokens);
  FlopReport r;
  const std::size_t counted = include_embedding ? p.active : p.active - p.embedding;
  r.matmul = mult * static_cast<double>(counted) * t;
  const std::string m = convention == FlopConvention::k2P ? "2" : "6";
  r.formula = m + (include_embedding ? " * active_params * tokens"
                                     : " * (active_params - embedding_params) * tokens");
  if (include_attention_quadratic) {
    r.attention = mult * 2.0 * static_cast<double>(model.layers) *
                  static_cast<double>(model.hidden) * t * t;
    r.formula += " + " + m + " * 2 * layers * hidden * tokens^2";
  }
  r.total = r.matmul + r.attention;
  return r;
}

CommVolume comm_volume(const ParallelPlan& plan, const ModelConfig& model,
                       const GateConfig& gate, std::size_t tokens_per_rank,
                       double bytes) {
  const double t = static_cast<double>(tokens_per_rank);
  const double d = static_cast<double>(model.hidden);
  const double tp = static_cast<double>(plan.attention.tp);
  const double cp = static_cast<double>(plan.attention.cp);
  const double ep = static_cast<double>(plan.moe.ep);
  const double k = static_cast<double>(gate.top_k);
  CommVolume v;
  v.attention_tp = 2.0 * 2.0 * t * d * bytes * (tp - 1.0) / tp;
  v.cp_kv = 2.0 * t * d * bytes * (cp - 1.0) * static_cast<double>(model.kv_heads) /
            static_cast<double>(model.heads);
  v.alltoall = 2.0 * t * k * d * bytes * (ep - 1.0) / ep;
  v.allgather = 2.0 * t * (ep - 1.0) * d * bytes;
  v.moe_dispatch = plan.dispatcher == Dispatcher::kAllToAll ? v.alltoall : v.allgather;
  return v;
}

double pipeline_bubble(std::size_t pp, std::size_t vp, std::size_t microbatches) {
  if (pp < 1 || vp < 1 || microbatches < 1) {
    fail(ErrorCode::kConfig, "pipeline_bubble: pp, vp and microbatches must be >= 1");
  }
  const double p = static_cast<double>(pp);
  return (p - 1.0) / (static_cast<double>(vp * microbatches) + p - 1.0);
}

MemoryEstimate memory_estimate(const ParallelPlan& plan, const ModelConfig& model,
                               const std::optional<MoESpec>& moe, double bytes_per_param,
                               double optimizer_multiplier) {
  const ParamCount p = count_params(model, moe);
  const double pp = static_cast<double>(plan.attention.pp);
  const double other = static_cast<double>(p.total - p.expert - p.router);
  MemoryEstimate m;
  // Routers are replicated across tensor-parallel ranks.
  m.dense_params_local = other / (static_cast<double>(plan.attention.tp) * pp) +
                         static_cast<double>(p.router) / pp;
  m.expert_params_local = static_cast<double>(p.expert) /
                          (static_cast<double>(plan.moe.etp * plan.moe.ep) * pp);
  m.weights_and_grads = bytes_per_param * 2.0 * (m.dense_params_local + m.expert_params_local);
  m.optimizer = bytes_per_param * optimizer_multiplier *
                (m.dense_params_local / static_cast<double>(plan.attention.dp) +
                 m.expert_params_local / static_cast<double>(plan.moe.edp));
  m.total = m.weights_and_grads + m.optimizer;
  return m;
}

MoESpec PlanInputs::moe_spec() const {
  MoESpec spec{gate, {}};
  if (moe_layers) {
    spec.layers = *moe_layers;
  } else {
    for (std::size_t l = 0; l < model.layers; ++l) spec.layers.push_back(l);
  }
  return spec;
}

Json to_json(const PlanInputs& in) {
  Json j;
  j["plan"] = to_json(in.plan);
  j["model"] = to_json(in.model);
  j["gate"] = to_json(in.gate);
  j["moe_layers"] = in.moe_layers ? Json(*in.moe_layers) : Json("all");
  j["cost"] = {{"tokens_per_rank", in.cost.tokens_per_rank},
               {"bytes_per_param", in.cost.bytes_per_param},
               {"optimizer_multiplier", in.cost.optimizer_multiplier},
               {"convention", to_string(in.cost.convention)},
               {"include_attention_quadratic", in.cost.include_attention_quadratic},
               {"include_embedding", in.cost.include_embedding}};
  return j;
}

PlanInputs plan_inputs_from_json(const Json& j) {
  PlanInputs in;
  JsonSection s(j, "plan file");
  if (const Json* p = s.raw("plan")) in.plan = parallel_plan_from_json(*p);
  if (const Json* m = s.raw("model")) in.model = model_config_from_json(*m);
  if (const Json* g = s.raw("gate")) in.gate = gate_config_from_json(*g);
  if (const Json* l = s.raw("moe_layers")) in.moe_layers = parse_layer_set(*l, "moe_layers");
  if (const Json* c = s.raw("cost")) {
    JsonSection cs(*c, "cost");
    cs.read("tokens_per_rank", in.cost.tokens_per_rank);
    cs.read("bytes_per_param", in.cost.bytes_per_param);
    cs.read("optimizer_multiplier", in.cost.optimizer_multiplier);
    std::string convention = to_string(in.cost.convention);
    cs.read("convention", convention);
    in.cost.convention = parse_flop_convention(convention);
    cs.read("include_attention_quadratic", in.cost.include_attention_quadratic);
    cs.read("include_embedding", in.cost.include_embedding);
    cs.finish();
  }
  s.finish();
  in.model.validate();
  in.gate.validate();
  return in;
}

CostReport plan_report(const PlanInputs& in, const GroupMap& groups) {
  const MoESpec spec = in.moe_spec();
  CostReport r;
  r.intra_node = intra_node_report(groups, in.plan.node_size);
  r.comm = comm_volume(in.plan, in.model, in.gate, in.cost.tokens_per_rank, in.cost.bytes_per_param);
  r.params = count_params(in.model, spec);
  r.flops = forward_flops(in.model, spec, in.model.seq_len, in.cost.convention,
                          in.cost.include_attention_quadratic, in.cost.include_embedding);
  r.bubble = pipeline_bubble(in.plan.attention.pp, in.plan.vp, in.plan.microbatches);
  r.memory = memory_estimate(in.plan, in.model, spec, in.cost.bytes_per_param,
                             in.cost.optimizer_multiplier);
  return r;
}

std::vector<MetricRecord> report_records(const PlanInputs& in, const GroupMap& groups,
                                         const CostReport& r) {
  std::vector<MetricRecord> out;
  for (GroupKind kind : kAllGroupKinds) {
    const std::string k = to_string(kind);
    const auto& g = groups.of(kind);
    out.push_back({"groups." + k + ".size", g.front().size()});
    out.push_back({"groups." + k + ".count", g.size()});
    out.push_back({"groups." + k + ".rank0", groups.group(kind, 0)});
    out.push_back({"intra_node." + k, r.intra_node[static_cast<std::size_t>(kind)]});
  }
  out.push_back({"comm.attention_tp_bytes_per_layer", r.comm.attention_tp});
  out.push_back({"comm.cp_kv_bytes_per_layer", r.comm.cp_kv});
  out.push_back({"comm.alltoall_bytes_per_layer", r.comm.alltoall});
  out.push_back({"comm.allgather_bytes_per_layer", r.comm.allgather});
  out.push_back({"comm.dispatcher", to_string(in.plan.dispatcher)});
  out.push_back({"comm.moe_dispatch_bytes_per_layer", r.comm.moe_dispatch});
  out.push_back({"params.total", r.params.total});
  out.push_back({"params.active", r.params.active});
  out.push_back({"params.expert", r.params.expert});
  out.push_back({"flops.tokens", in.model.seq_len});
  out.push_back({"flops.convention", to_string(in.cost.convention)});
  out.push_back({"flops.forward", r.flops.total});
  out.push_back({"flops.formula", r.flops.formula});
  out.push_back({"pipeline.bubble", r.bubble});
  out.push_back({"memory.dense_params_per_rank", r.memory.dense_params_local});
  out.push_back({"memory.expert_params_per_rank", r.memory.expert_params_local});
  out.push_back({"memory.weights_grads_bytes", r.memory.weights_and_grads});
  out.push_back({"memory.optimizer_bytes", r.memory.optimizer});
  out.push_back({"memory.total_bytes", r.memory.total});
  return out;
}

void write_report_table(std::ostream& os, const PlanInputs& in, const GroupMap& groups,
                        const CostReport& r) {
  const ParallelPlan& p = in.plan;
  os << "plan: world " << p.world << ", node_size " << p.node_size << "\n"
     << "  attention tp" << p.attention.tp << " cp" << p.attention.cp << " dp" << p.attention.dp
     << " pp" << p.attention.pp << " | moe etp" << p.moe.etp << " ep" << p.moe.ep << " edp"
     << p.moe.edp << " pp" << p.moe.pp << " | vp " << p.vp << ", microbatches "
     << p.microbatches << ", dispatcher " << to_string(p.dispatcher) << "\n\n";
  os << std::left << std::setw(6) << "group" << std::setw(7) << "size" << std::setw(8)
     << "count" << std::setw(12) << "intra-node" << "group of rank 0\n";
  for (GroupKind kind : kAllGroupKinds) {
    const auto& g = groups.of(kind);
    os << std::setw(6) << to_string(kind) << std::setw(7) << g.front().size() << std::setw(8)
       << g.size() << std::setw(12) << (r.intra_node[static_cast<std::size_t>(kind)] ? "yes" : "no")
       << join(groups.group(kind, 0)) << "\n";
  }
  os << "\ncommunication (bytes per layer per rank, " << in.cost.tokens_per_rank
     << " tokens per rank)\n"
     << "  attention tp all-reduce  " << fmt(r.comm.attention_tp) << "\n"
     << "  cp kv exchange           " << fmt(r.comm.cp_kv) << "\n"
     << "  moe alltoall             " << fmt(r.comm.alltoall) << "\n"
     << "  moe allgather            " << fmt(r.comm.allgather) << "\n"
     << "\nparams  total " << r.params.total << "  active " << r.params.active << "  expert "
     << r.params.expert << "\n"
     << "forward FLOPs (" << in.model.seq_len << " tokens) " << fmt(r.flops.total) << "  = "
     << r.flops.formula << "\n"
     << "pipeline bubble " << fmt(r.bubble) << "\n"
     << "memory per rank " << fmt(r.memory.total) << " bytes (weights+grads "
     << fmt(r.memory.weights_and_grads) << ", optimizer " << fmt(r.memory.optimizer) << ")\n";
}

}  // namespace moeup
