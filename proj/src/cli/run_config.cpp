// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeup/cli/run_config.hpp"

#include <sstream>

namespace moeup {

namespace {

constexpr const char* kPlanKeys[] = {"plan", "model", "gate", "moe_layers", "cost"};

Json ablation_values_json(const AblationSpec& spec) {
  Json values = Json::array();
  for (const AblationValue& v : spec.values) {
    if (spec.axis == AblationAxis::kRouterType) {
      values.push_back(to_string(v.router_type));
    } else if (v.capacity_factor) {
      values.push_back(*v.capacity_factor);
    } else {
      values.push_back("dropless");
    }
  }
  return values;
}

std::vector<AblationValue> parse_ablation_values(AblationAxis axis, const Json& j) {
  if (!j.is_array() || j.empty()) fail(ErrorCode::kConfig, "ablate.values must be a non-empty list");
  std::vector<AblationValue> out;
  for (const Json& v : j) {
    AblationValue value;
    if (axis == AblationAxis::kRouterType) {
      if (!v.is_string()) fail(ErrorCode::kConfig, "ablate.values entries must be router names");
      value.router_type = parse_router_type(v.get<std::string>());
    } else if (v.is_string() && v.get<std::string>() == "dropless") {
      value.capacity_factor = std::nullopt;
    } else if (v.is_number() && v.get<double>() > 0.0) {
      value.capacity_factor = v.get<double>();
    } else {
      fail(ErrorCode::kConfig, "ablate.values entries must be positive numbers or \"dropless\"");
    }
    out.push_back(value);
  }
  return out;
}

void flatten(const Json& j, const std::string& prefix, std::ostringstream& os) {
  if (j.is_object() && !j.empty()) {
    for (auto it = j.begin(); it != j.end(); ++it) {
      flatten(it.value(), prefix.empty() ? it.key() : prefix + "." + it.key(), os);
    }
    return;
  }
  os << prefix << " = " << j.dump() << '\n';
}

}  // namespace

UpcycleOptions RunConfig::upcycle_options() const {
  UpcycleOptions o;
  o.gate = gate;
  o.moe_layers = moe_layers;
  o.router_seed = seed;
  o.router_std = upcycle.router_std;
  return o;
}

PlanInputs RunConfig::plan_inputs() const {
  PlanInputs in;
  in.plan = parallel;
  in.model = model;
  in.gate = gate;
  in.moe_layers = moe_layers;
  in.cost = cost;
  return in;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t = train.config;
  t.blend.seed += seed;
  t.noise_seed += seed;
  return t;
}

ModelConfig RunConfig::flops_model() const {
  return flops.preset == "llama3-8b" ? llama3_8b_config() : model;
}

Json to_json(const RunConfig& c) {
  Json j = to_json(c.plan_inputs());
  j["seed"] = c.seed;
  j["upcycle"] = {{"input", c.upcycle.input},   {"output", c.upcycle.output},
                  {"router_std", c.upcycle.router_std}, {"tp", c.upcycle.tp},
                  {"ep", c.upcycle.ep},         {"shard_dir", c.upcycle.shard_dir}};
  j["train"] = to_json(c.train.config);
  j["train"]["input"] = c.train.input;
  j["train"]["init_std"] = c.train.init_std;
  j["train"]["output"] = c.train.output;
  j["eval"] = {{"input", c.eval.input}, {"sequences", c.eval.sequences}, {"seq_len", c.eval.seq_len}};
  j["ablate"] = {{"input", c.ablate.input},
                 {"axis", to_string(c.ablate.spec.axis)},
                 {"values", ablation_values_json(c.ablate.spec)},
                 {"pretrain_steps", c.ablate.pretrain_steps}};
  j["flops"] = {{"preset", c.flops.preset},
                {"tokens", c.flops.tokens},
                {"convention", to_string(c.flops.convention)},
                {"include_attention_quadratic", c.flops.include_attention_quadratic},
                {"include_embedding", c.flops.include_embedding}};
  return j;
}

RunConfig run_config_from_json(const Json& j) {
  RunConfig c;
  c.ablate.spec.values = {{std::nullopt, RouterType::kMixtral}, {std::nullopt, RouterType::kSt}};
  JsonSection top(j, "config");
  Json plan_part = Json::object();
  for (const char* key : kPlanKeys) {
    if (const Json* v = top.raw(key)) plan_part[key] = *v;
  }
  const PlanInputs in = plan_inputs_from_json(plan_part);
  c.parallel = in.plan;
  c.model = in.model;
  c.gate = in.gate;
  c.moe_layers = in.moe_layers;
  c.cost = in.cost;
  top.read("seed", c.seed);

  if (const Json* u = top.raw("upcycle")) {
    JsonSection s(*u, "upcycle");
    s.read("input", c.upcycle.input);
    s.read("output", c.upcycle.output);
    s.read("router_std", c.upcycle.router_std);
    s.read("tp", c.upcycle.tp);
    s.read("ep", c.upcycle.ep);
    s.read("shard_dir", c.upcycle.shard_dir);
    s.finish();
    if (c.upcycle.tp == 0 || c.upcycle.ep == 0) fail(ErrorCode::kConfig, "upcycle.tp and upcycle.ep must be >= 1");
    if (!(c.upcycle.router_std >= 0.0)) fail(ErrorCode::kConfig, "upcycle.router_std must be >= 0");
  }
  if (const Json* t = top.raw("train")) {
    Json rest = *t;
    JsonSection s(*t, "train");
    s.read("input", c.train.input);
    s.read("init_std", c.train.init_std);
    s.read("output", c.train.output);
    for (const char* key : {"input", "init_std", "output"}) rest.erase(key);
    c.train.config = train_config_from_json(rest, c.train.config);
    if (!(c.train.init_std > 0.0)) fail(ErrorCode::kConfig, "train.init_std must be > 0");
  }
  if (const Json* e = top.raw("eval")) {
    JsonSection s(*e, "eval");
    s.read("input", c.eval.input);
    s.read("sequences", c.eval.sequences);
    s.read("seq_len", c.eval.seq_len);
    s.finish();
    if (c.eval.sequences == 0) fail(ErrorCode::kConfig, "eval.sequences must be >= 1");
  }
  if (const Json* a = top.raw("ablate")) {
    JsonSection s(*a, "ablate");
    s.read("input", c.ablate.input);
    std::string axis = to_string(c.ablate.spec.axis);
    s.read("axis", axis);
    c.ablate.spec.axis = parse_ablation_axis(axis);
    if (const Json* v = s.raw("values")) {
      c.ablate.spec.values = parse_ablation_values(c.ablate.spec.axis, *v);
    } else if (c.ablate.spec.axis == AblationAxis::kCapacityFactor) {
      c.ablate.spec.values = {{1.0, {}}, {2.0, {}}, {4.0, {}}, {std::nullopt, {}}};
    }
    s.read("pretrain_steps", c.ablate.pretrain_steps);
    s.finish();
  }
  if (const Json* f = top.raw("flops")) {
    JsonSection s(*f, "flops");
    s.read("preset", c.flops.preset);
    if (c.flops.preset != "llama3-8b" && c.flops.preset != "model") {
      fail(ErrorCode::kConfig, "flops.preset must be \"llama3-8b\" or \"model\"");
    }
    s.read("tokens", c.flops.tokens);
    std::string convention = to_string(c.flops.convention);
    s.read("convention", convention);
    c.flops.convention = parse_flop_convention(convention);
    s.read("include_attention_quadratic", c.flops.include_attention_quadratic);
    s.read("include_embedding", c.flops.include_embedding);
    s.finish();
    if (c.flops.tokens == 0) fail(ErrorCode::kConfig, "flops.tokens must be >= 1");
  }
  top.finish();
  return c;
}

Json merge_config(Json base, const Json& overrides) {
  if (!overrides.is_object()) return overrides;
  if (!base.is_object()) base = Json::object();
  for (auto it = overrides.begin(); it != overrides.end(); ++it) {
    base[it.key()] = merge_config(base.contains(it.key()) ? base[it.key()] : Json(), it.value());
  }
  return base;
}

std::string run_config_keys() {
  RunConfig defaults = run_config_from_json(Json::object());
  std::ostringstream os;
  flatten(to_json(defaults), "", os);
  return os.str();
}

}  // namespace moeup
