// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeup/train/train.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

#include "moeup/core/ops.hpp"

namespace moeup {

namespace {

// Stream ids above this bit are reserved for transition tables and held-out
// data so they never collide with per-step training streams.
constexpr std::uint64_t kTableStream = 1ull << 63;
constexpr std::uint64_t kEvalIndex = 1ull << 62;

std::uint64_t fnv1a(const std::string& s, std::uint64_t seed) {
  std::uint64_t h = 1469598103934665603ull ^ seed;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::size_t pick(std::span<const double> cumulative, double u) {
  const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
  return std::min<std::size_t>(it - cumulative.begin(), cumulative.size() - 1);
}

std::vector<double> normalised_cumulative(std::vector<double> w) {
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  double acc = 0.0;
  for (double& x : w) {
    acc += x;
    x = acc / total;
  }
  w.back() = 1.0;
  return w;
}

}  // namespace

void Schedule::validate() const {
  if (!(lr_min > 0.0) || !(lr_min <= lr_max) || !std::isfinite(lr_max)) {
    fail(ErrorCode::kConfig, "schedule needs 0 < lr_min <= lr_max, got lr_min " +
                                 std::to_string(lr_min) + ", lr_max " + std::to_string(lr_max));
  }
  if (warmup_steps >= total_steps) {
    fail(ErrorCode::kConfig, "schedule needs warmup_steps < total_steps, got " +
                                 std::to_string(warmup_steps) + " >= " +
                                 std::to_string(total_steps));
  }
}

double lr_at(std::size_t step, const Schedule& s) {
  s.validate();
  if (step > s.total_steps) {
    fail(ErrorCode::kInput, "step " + std::to_string(step) + " outside [0, " +
                                std::to_string(s.total_steps) + "]");
  }
  if (step < s.warmup_steps) {
    return s.lr_max * (static_cast<double>(step) / static_cast<double>(s.warmup_steps));
  }
  if (step == s.warmup_steps) return s.lr_max;
  if (step == s.total_steps) return s.lr_min;
  const double progress = static_cast<double>(step - s.warmup_steps) /
                          static_cast<double>(s.total_steps - s.warmup_steps);
  return s.lr_min + 0.5 * (s.lr_max - s.lr_min) * (1.0 + std::cos(std::numbers::pi * progress));
}

Json to_json(const Schedule& s) {
  return Json{{"lr_max", s.lr_max},
              {"lr_min", s.lr_min},
              {"warmup_steps", s.warmup_steps},
              {"total_steps", s.total_steps}};
}

Schedule schedule_from_json(const Json& j, Schedule s) {
  JsonSection sec(j, "schedule");
  sec.read("lr_max", s.lr_max);
  sec.read("lr_min", s.lr_min);
  sec.read("warmup_steps", s.warmup_steps);
  sec.read("total_steps", s.total_steps);
  sec.finish();
  s.validate();
  return s;
}

void BlendSpec::validate() const {
  if (sources.empty()) fail(ErrorCode::kConfig, "blend needs at least one source");
  for (const BlendSource& src : sources) {
    if (!(src.weight > 0.0) || !std::isfinite(src.weight)) {
      fail(ErrorCode::kConfig, "blend weight of '" + src.corpus + "' must be positive and finite");
    }
  }
}

Json to_json(const BlendSpec& b) {
  Json sources = Json::array();
  for (const BlendSource& s : b.sources) sources.push_back({{"corpus", s.corpus}, {"weight", s.weight}});
  return Json{{"sources", sources}, {"seed", b.seed}};
}

BlendSpec blend_spec_from_json(const Json& j, BlendSpec b) {
  JsonSection sec(j, "blend");
  if (const Json* sources = sec.raw("sources")) {
    if (!sources->is_array()) fail(ErrorCode::kConfig, "blend.sources must be a list");
    b.sources.clear();
    for (const Json& s : *sources) {
      BlendSource src;
      JsonSection ss(s, "blend.sources[]");
      ss.read("corpus", src.corpus);
      ss.read("weight", src.weight);
      ss.finish();
      b.sources.push_back(src);
    }
  }
  sec.read("seed", b.seed);
  sec.finish();
  b.validate();
  return b;
}

BlendSampler::BlendSampler(const BlendSpec& spec) : rng_(spec.seed, 0) {
  spec.validate();
  std::vector<double> w;
  for (const BlendSource& s : spec.sources) w.push_back(s.weight);
  cumulative_ = normalised_cumulative(std::move(w));
}

std::size_t BlendSampler::at(std::uint64_t i) const {
  if (cumulative_.size() == 1) return 0;
  return pick(cumulative_, rng_.uniform_at(i));
}

MarkovCorpus::MarkovCorpus(std::size_t vocab, std::uint64_t seed, std::size_t branching)
    : vocab_(vocab), seed_(seed) {
  if (vocab < 2) fail(ErrorCode::kConfig, "Markov corpus needs vocab >= 2");
  if (branching < 1 || branching > vocab) {
    fail(ErrorCode::kConfig, "Markov branching must be in [1, vocab]");
  }
  next_.resize(vocab);
  cumulative_.resize(vocab);
  for (std::size_t v = 0; v < vocab; ++v) {
    Rng rng(seed, kTableStream | v);
    std::vector<int> pool(vocab);
    std::iota(pool.begin(), pool.end(), 0);
    std::vector<double> w;
    for (std::size_t b = 0; b < branching; ++b) {
      const std::size_t j = b + rng.below(vocab - b);
      std::swap(pool[b], pool[j]);
      next_[v].push_back(pool[b]);
      w.push_back(1.0);
    }
    cumulative_[v] = normalised_cumulative(std::move(w));
  }
}

std::vector<int> MarkovCorpus::sample(std::size_t length, std::uint64_t stream) const {
  Rng rng(seed_, stream);
  std::vector<int> out;
  out.reserve(length);
  if (length == 0) return out;
  int tok = static_cast<int>(rng.below(vocab_));
  out.push_back(tok);
  while (out.size() < length) {
    const auto& row = cumulative_[tok];
    tok = next_[tok][pick(row, rng.uniform())];
    out.push_back(tok);
  }
  return out;
}

double MarkovCorpus::entropy_rate() const {
  std::vector<double> pi(vocab_, 1.0 / static_cast<double>(vocab_)), avg(vocab_, 0.0);
  const int iters = 2000;
  for (int it = 0; it < iters; ++it) {
    std::vector<double> nxt(vocab_, 0.0);
    for (std::size_t v = 0; v < vocab_; ++v) {
      double prev = 0.0;
      for (std::size_t b = 0; b < next_[v].size(); ++b) {
        nxt[next_[v][b]] += pi[v] * (cumulative_[v][b] - prev);
        prev = cumulative_[v][b];
      }
    }
    pi.swap(nxt);
    for (std::size_t v = 0; v < vocab_; ++v) avg[v] += pi[v] / iters;
  }
  double h = 0.0;
  for (std::size_t v = 0; v < vocab_; ++v) {
    double prev = 0.0;
    for (double c : cumulative_[v]) {
      const double p = c - prev;
      prev = c;
      if (p > 0.0) h -= avg[v] * p * std::log(p);
    }
  }
  return h;
}

SyntheticData::SyntheticData(const BlendSpec& blend, std::size_t vocab, std::size_t branching)
    : blend_(blend), sampler_(blend) {
  for (const BlendSource& s : blend.sources) {
    corpora_.emplace_back(vocab, fnv1a(s.corpus, blend.seed), branching);
  }
}

LmBatch SyntheticData::batch(std::uint64_t step, std::size_t sequences,
                             std::size_t seq_len, std::size_t dataset) const {
  if (sequences == 0 || seq_len == 0) fail(ErrorCode::kConfig, "empty batch shape");
  LmBatch b;
  b.inputs.sequences = sequences;
  b.inputs.seq_len = seq_len;
  b.inputs.tokens.reserve(sequences * seq_len);
  b.targets.reserve(sequences * seq_len);
  for (std::size_t j = 0; j < sequences; ++j) {
    std::uint64_t g = step * sequences + j;
    if (dataset > 0) g %= dataset;
    const std::size_t src = sampler_.at(g);
    const std::vector<int> seq = corpora_[src].sample(seq_len + 1, g);
    b.inputs.tokens.insert(b.inputs.tokens.end(), seq.begin(), seq.end() - 1);
    b.targets.insert(b.targets.end(), seq.begin() + 1, seq.end());
    b.sources.push_back(src);
  }
  return b;
}

std::vector<std::vector<int>> SyntheticData::eval_sequences(std::size_t count,
                                                            std::size_t seq_len) const {
  std::vector<std::vector<int>> out;
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t g = kEvalIndex + i;
    out.push_back(corpora_[sampler_.at(g)].sample(seq_len + 1, g));
  }
  return out;
}

std::string to_string(OptimizerKind k) {
  return k == OptimizerKind::kAdam ? "adam" : "sgd";
}

OptimizerKind parse_optimizer_kind(const std::string& text) {
  if (text == "adam") return OptimizerKind::kAdam;
  if (text == "sgd") return OptimizerKind::kSgdMomentum;
  fail(ErrorCode::kConfig, "unknown optimizer '" + text + "' (expected adam or sgd)");
}

Json to_json(const OptimizerConfig& o) {
  return Json{{"kind", to_string(o.kind)}, {"beta1", o.beta1},
              {"beta2", o.beta2},          {"eps", o.eps},
              {"momentum", o.momentum},    {"weight_decay", o.weight_decay},
              {"grad_clip", o.grad_clip}};
}

OptimizerConfig optimizer_config_from_json(const Json& j, OptimizerConfig o) {
  JsonSection sec(j, "optimizer");
  std::string kind = to_string(o.kind);
  sec.read("kind", kind);
  o.kind = parse_optimizer_kind(kind);
  sec.read("beta1", o.beta1);
  sec.read("beta2", o.beta2);
  sec.read("eps", o.eps);
  sec.read("momentum", o.momentum);
  sec.read("weight_decay", o.weight_decay);
  sec.read("grad_clip", o.grad_clip);
  sec.finish();
  if (!(o.beta1 >= 0.0 && o.beta1 < 1.0) || !(o.beta2 >= 0.0 && o.beta2 < 1.0) ||
      !(o.eps > 0.0) || !(o.momentum >= 0.0 && o.momentum < 1.0) ||
      !(o.weight_decay >= 0.0) || !(o.grad_clip >= 0.0)) {
    fail(ErrorCode::kConfig, "optimizer hyper-parameters out of range");
  }
  return o;
}

Optimizer::Optimizer(OptimizerConfig config, std::vector<Tensor> params)
    : config_(config), params_(std::move(params)) {
  for (const Tensor& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    if (config_.kind == OptimizerKind::kAdam) v_.emplace_back(p.numel(), 0.0);
  }
}

void Optimizer::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

double Optimizer::grad_norm() const {
  double sq = 0.0;
  for (const Tensor& p : params_) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) sq += g * g;
  }
  return std::sqrt(sq);
}

void Optimizer::step(double lr) {
  ++t_;
  double clip = 1.0;
  if (config_.grad_clip > 0.0) {
    const double norm = grad_norm();
    if (norm > config_.grad_clip) clip = config_.grad_clip / norm;
  }
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) continue;
    auto w = p.mutable_data();
    const auto g = p.grad();
    auto& m = m_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j] * clip;
      if (config_.kind == OptimizerKind::kAdam) {
        auto& v = v_[i];
        m[j] = config_.beta1 * m[j] + (1.0 - config_.beta1) * gj;
        v[j] = config_.beta2 * v[j] + (1.0 - config_.beta2) * gj * gj;
        const double update = (m[j] / bc1) / (std::sqrt(v[j] / bc2) + config_.eps);
        w[j] -= lr * (update + config_.weight_decay * w[j]);
      } else {
        m[j] = config_.momentum * m[j] + gj + config_.weight_decay * w[j];
        w[j] -= lr * m[j];
      }
    }
  }
}

Json to_json(const TrainConfig& t) {
  return Json{{"schedule", to_json(t.schedule)},
              {"optimizer", to_json(t.optimizer)},
              {"blend", to_json(t.blend)},
              {"batch_sequences", t.batch_sequences},
              {"seq_len", t.seq_len},
              {"markov_branching", t.markov_branching},
              {"dataset_sequences", t.dataset_sequences},
              {"noise_seed", t.noise_seed}};
}

TrainConfig train_config_from_json(const Json& j, TrainConfig t) {
  JsonSection sec(j, "train");
  if (const Json* s = sec.raw("schedule")) t.schedule = schedule_from_json(*s, t.schedule);
  if (const Json* o = sec.raw("optimizer")) t.optimizer = optimizer_config_from_json(*o, t.optimizer);
  if (const Json* b = sec.raw("blend")) t.blend = blend_spec_from_json(*b, t.blend);
  sec.read("batch_sequences", t.batch_sequences);
  sec.read("seq_len", t.seq_len);
  sec.read("markov_branching", t.markov_branching);
  sec.read("dataset_sequences", t.dataset_sequences);
  sec.read("noise_seed", t.noise_seed);
  sec.finish();
  if (t.batch_sequences == 0) fail(ErrorCode::kConfig, "train.batch_sequences must be >= 1");
  return t;
}

std::vector<double> RunMetrics::losses() const {
  std::vector<double> out;
  for (const StepMetrics& s : steps) out.push_back(s.loss);
  return out;
}

RunMetrics train(Checkpoint& model, const TrainConfig& cfg, const std::string& run_id,
                 const StepCallback& on_step) {
  cfg.schedule.validate();
  cfg.blend.validate();
  validate_checkpoint(model);
  const std::size_t seq_len = cfg.seq_len ? cfg.seq_len : model.config.seq_len;
  if (seq_len > model.config.seq_len) {
    fail(ErrorCode::kConfig, "train.seq_len " + std::to_string(seq_len) + " exceeds model seq_len " +
                                 std::to_string(model.config.seq_len));
  }
  if (cfg.batch_sequences == 0) fail(ErrorCode::kConfig, "train.batch_sequences must be >= 1");
  const SyntheticData data(cfg.blend, model.config.vocab, cfg.markov_branching);

  std::vector<Tensor> params;
  for (auto& [name, t] : model.tensors) {
    t.set_requires_grad(true);
    params.push_back(t);
  }
  Optimizer opt(cfg.optimizer, params);
  struct ResetGrad {
    std::vector<Tensor>& ps;
    ~ResetGrad() {
      for (Tensor& p : ps) {
        p.zero_grad();
        p.set_requires_grad(false);
      }
    }
  } reset{params};

  RunMetrics run;
  run.run_id = run_id;
  for (std::size_t step = 0; step < cfg.schedule.total_steps; ++step) {
    StepMetrics m;
    m.step = step;
    m.lr = lr_at(step, cfg.schedule);
    const LmBatch batch = data.batch(step, cfg.batch_sequences, seq_len, cfg.dataset_sequences);
    ForwardOptions fo;
    fo.training = true;
    fo.noise_seed = cfg.noise_seed;
    fo.noise_stream = step;
    const ForwardResult fr = forward(model, batch.inputs, fo);
    Tensor loss = cross_entropy(fr.logits, batch.targets);
    if (fr.aux_loss.defined()) loss = add(loss, fr.aux_loss);
    m.loss = loss.item();
    if (!std::isfinite(m.loss)) {
      fail(ErrorCode::kNumeric,
           "non-finite loss at step " + std::to_string(step) + " of run '" + run_id + "'; " +
               (step == 0 ? std::string("no good step") :
                            "last good step " + std::to_string(step - 1)));
    }
    for (const LayerRouting& r : fr.routing) {
      m.layer_drop_rate.push_back(r.stats.drop_rate());
      m.layer_load_entropy.push_back(r.stats.load_entropy());
    }
    if (!fr.routing.empty()) {
      const double n = static_cast<double>(fr.routing.size());
      m.drop_rate = std::accumulate(m.layer_drop_rate.begin(), m.layer_drop_rate.end(), 0.0) / n;
      m.load_entropy =
          std::accumulate(m.layer_load_entropy.begin(), m.layer_load_entropy.end(), 0.0) / n;
    }
    opt.zero_grad();
    loss.backward();
    if (!std::isfinite(opt.grad_norm())) {
      fail(ErrorCode::kNumeric, "non-finite gradient at step " + std::to_string(step) +
                                    " of run '" + run_id + "'; " +
                                    (step == 0 ? std::string("no good step") :
                                                 "last good step " + std::to_string(step - 1)));
    }
    opt.step(m.lr);
    if (on_step) on_step(m);
    run.steps.push_back(std::move(m));
  }
  return run;
}

double eval_perplexity(const Checkpoint& model, std::span<const std::vector<int>> sequences) {
  double nll = 0.0;
  std::size_t count = 0;
  for (const std::vector<int>& seq : sequences) {
    if (seq.size() < 2) continue;
    Batch b;
    b.tokens.assign(seq.begin(), seq.end() - 1);
    b.sequences = 1;
    b.seq_len = seq.size() - 1;
    const std::vector<int> targets(seq.begin() + 1, seq.end());
    const Tensor logits = forward(model, b).logits;
    nll += cross_entropy(logits, targets).item() * static_cast<double>(targets.size());
    count += targets.size();
  }
  if (count == 0) fail(ErrorCode::kInput, "perplexity needs at least one sequence of >= 2 tokens");
  return std::exp(nll / static_cast<double>(count));
}

void write_metrics_csv(std::ostream& os, const RunMetrics& run, bool header) {
  if (header) os << kMetricsCsvHeader << '\n';
  std::ostringstream line;
  line.precision(17);
  for (const StepMetrics& s : run.steps) {
    line.str("");
    line << s.step << ',' << run.run_id << ',' << s.loss << ',' << s.lr << ',' << s.drop_rate
         << ',' << s.load_entropy << '\n';
    os << line.str();
  }
}

std::string to_string(AblationAxis a) {
  return a == AblationAxis::kCapacityFactor ? "cf" : "router_type";
}

AblationAxis parse_ablation_axis(const std::string& text) {
  if (text == "cf") return AblationAxis::kCapacityFactor;
  if (text == "router_type") return AblationAxis::kRouterType;
  fail(ErrorCode::kConfig, "unknown ablation axis '" + text + "' (expected cf or router_type)");
}

std::string run_id(const AblationSpec& spec, const AblationValue& v) {
  if (spec.axis == AblationAxis::kRouterType) return to_string(v.router_type);
  if (!v.capacity_factor) return "dropless";
  std::ostringstream os;
  os << "cf" << *v.capacity_factor;
  return os.str();
}

std::vector<RunMetrics> ablate(const DenseCheckpoint& dense, const UpcycleOptions& base,
                               const TrainConfig& cfg, const AblationSpec& spec,
                               const StepCallback& on_step) {
  if (spec.values.empty()) fail(ErrorCode::kConfig, "ablation needs at least one value");
  std::vector<RunMetrics> runs;
  for (const AblationValue& v : spec.values) {
    UpcycleOptions opts = base;
    if (spec.axis == AblationAxis::kCapacityFactor) {
      opts.gate.capacity_factor = v.capacity_factor;
    } else {
      opts.gate.router_type = v.router_type;
    }
    opts.gate.validate();
    MoECheckpoint moe = upcycle_full(dense, opts);
    runs.push_back(train(moe, cfg, run_id(spec, v), on_step));
  }
  return runs;
}

std::vector<double> window_means(std::span<const double> values, std::size_t window) {
  if (window == 0) fail(ErrorCode::kInput, "window must be >= 1");
  std::vector<double> out;
  for (std::size_t i = 0; i + window <= values.size(); i += window) {
    out.push_back(std::accumulate(values.begin() + i, values.begin() + i + window, 0.0) /
                  static_cast<double>(window));
  }
  return out;
}

}  // namespace moeup
