// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line front end. Talks to the library only through moeup.h.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "moeup/moeup.h"

namespace fs = std::filesystem;
using Json = nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;

struct Failure {
  int code;
  std::string message;
};

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool force = false;
  std::string out;
};

[[noreturn]] void fail(int code, const std::string& message) { throw Failure{code, message}; }

void check(moeup_status s) {
  if (s != MOEUP_OK) fail(static_cast<int>(s), moeup_last_error());
}

// Owns a string returned by the library.
class LibString {
 public:
  LibString() = default;
  ~LibString() { moeup_string_free(p_); }
  LibString(const LibString&) = delete;
  LibString& operator=(const LibString&) = delete;
  char** out() { return &p_; }
  std::string str() const { return p_ ? p_ : ""; }

 private:
  char* p_ = nullptr;
};

class Checkpoint {
 public:
  Checkpoint() = default;
  ~Checkpoint() { moeup_checkpoint_free(p_); }
  Checkpoint(const Checkpoint&) = delete;
  Checkpoint& operator=(const Checkpoint&) = delete;
  moeup_checkpoint** out() { return &p_; }
  moeup_checkpoint* get() const { return p_; }

 private:
  moeup_checkpoint* p_ = nullptr;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(kExitIo, "cannot read config " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(kExitIo, "cannot write " + path.string());
  out << text;
  if (text.empty() || text.back() != '\n') out << '\n';
}

// Flags override file values, which override built-in defaults.
Json resolve(const Globals& g) {
  std::string file;
  if (!g.config_path.empty()) file = read_file(g.config_path);
  Json overrides = Json::object();
  if (g.seed) overrides["seed"] = *g.seed;
  LibString resolved;
  const std::string ov = overrides.dump();
  check(moeup_config_resolve(file.empty() ? nullptr : file.c_str(), ov.c_str(), resolved.out()));
  return Json::parse(resolved.str());
}

std::string config_text(const Json& cfg) { return cfg.dump(); }

void require_input(const std::string& path, const char* key) {
  if (path.empty()) fail(kExitConfig, std::string(key) + " is not set");
  if (!fs::exists(path)) fail(kExitIo, std::string(key) + ": no such path " + path);
}

// Returns the output location, refusing to replace anything without --force.
fs::path claim_output(const Globals& g, const std::string& configured, const char* key) {
  const std::string target = g.out.empty() ? configured : g.out;
  if (target.empty()) fail(kExitConfig, std::string("no output: pass --out or set ") + key);
  if (fs::exists(target)) {
    if (!g.force) fail(kExitIo, "output " + target + " exists; pass --force to overwrite");
    fs::remove_all(target);
  }
  return target;
}

void load(Checkpoint& ck, const std::string& path) { check(moeup_checkpoint_load(path.c_str(), ck.out())); }

int cmd_print_config(const Globals& g) {
  const Json cfg = resolve(g);
  if (!g.out.empty()) {
    const fs::path out = claim_output(g, "", "--out");
    write_file(out, cfg.dump(2));
  }
  std::cout << cfg.dump(2) << '\n';
  return 0;
}

int cmd_upcycle(const Globals& g, bool verify) {
  const Json cfg = resolve(g);
  const std::string input = cfg["upcycle"]["input"];
  require_input(input, "upcycle.input");
  const fs::path out = claim_output(g, cfg["upcycle"]["output"], "upcycle.output");
  Checkpoint dense, moe;
  load(dense, input);
  const std::string text = config_text(cfg);
  if (verify) {
    LibString report;
    const moeup_status s = moeup_upcycle_verify(dense.get(), text.c_str(), report.out());
    if (!report.str().empty()) std::cout << report.str() << '\n';
    check(s);
  }
  check(moeup_upcycle(dense.get(), text.c_str(), moe.out()));
  check(moeup_checkpoint_save(moe.get(), out.c_str()));
  LibString info;
  check(moeup_checkpoint_info(moe.get(), info.out()));
  const Json j = Json::parse(info.str());
  std::cout << "wrote " << out.string() << " (" << j["param_count"] << " params, "
            << j["tensors"] << " tensors)\n";
  return 0;
}

int cmd_plan(const Globals& g, const std::string& check_folding) {
  const Json cfg = resolve(g);
  std::optional<fs::path> out;
  if (!g.out.empty()) out = claim_output(g, "", "--out");
  LibString report, table;
  const std::string text = config_text(cfg);
  const moeup_status s = moeup_plan(text.c_str(), check_folding.empty() ? nullptr : check_folding.c_str(),
                                    report.out(), table.out());
  std::cout << table.str();
  if (out && !report.str().empty()) write_file(*out, report.str());
  check(s);
  return 0;
}

int cmd_train(const Globals& g) {
  const Json cfg = resolve(g);
  const std::string input = cfg["train"]["input"];
  Checkpoint model;
  if (input.empty()) {
    const std::string text = config_text(cfg);
    check(moeup_checkpoint_init_dense(text.c_str(), model.out()));
  } else {
    require_input(input, "train.input");
    load(model, input);
  }
  const fs::path out = claim_output(g, cfg["train"]["output"], "train.output");
  fs::create_directories(out);
  const std::string text = config_text(cfg);
  const fs::path csv = out / "metrics.csv";
  LibString summary;
  check(moeup_train(model.get(), text.c_str(), "train", csv.c_str(), summary.out()));
  check(moeup_checkpoint_save(model.get(), (out / "checkpoint").c_str()));
  write_file(out / "summary.json", summary.str());
  std::cout << summary.str() << '\n';
  return 0;
}

int cmd_eval(const Globals& g) {
  const Json cfg = resolve(g);
  const std::string input = cfg["eval"]["input"];
  require_input(input, "eval.input");
  std::optional<fs::path> out;
  if (!g.out.empty()) out = claim_output(g, "", "--out");
  Checkpoint model;
  load(model, input);
  double ppl = 0.0;
  const std::string text = config_text(cfg);
  check(moeup_eval(model.get(), text.c_str(), &ppl));
  const Json result{{"input", input}, {"perplexity", ppl}};
  if (out) write_file(*out, result.dump(2));
  std::cout << result.dump(2) << '\n';
  return 0;
}

int cmd_ablate(const Globals& g) {
  const Json cfg = resolve(g);
  const std::string input = cfg["ablate"]["input"];
  const std::string text = config_text(cfg);
  Checkpoint dense;
  if (input.empty()) {
    check(moeup_checkpoint_init_dense(text.c_str(), dense.out()));
  } else {
    require_input(input, "ablate.input");
    load(dense, input);
  }
  const fs::path out = claim_output(g, "", "--out");
  LibString summary;
  check(moeup_ablate(dense.get(), text.c_str(), out.c_str(), summary.out()));
  write_file(out / "summary.json", summary.str());
  std::cout << summary.str() << '\n';
  return 0;
}

int cmd_flops(const Globals& g) {
  const Json cfg = resolve(g);
  std::optional<fs::path> out;
  if (!g.out.empty()) out = claim_output(g, "", "--out");
  LibString report;
  const std::string text = config_text(cfg);
  check(moeup_flops(text.c_str(), report.out()));
  if (out) write_file(*out, report.str());
  std::cout << report.str() << '\n';
  return 0;
}

std::string keys_footer() {
  LibString keys;
  if (moeup_config_keys(keys.out()) != MOEUP_OK) return {};
  return "\nConfig keys (JSON file given by --config; flags override file values,\n"
         "file values override these defaults):\n" +
         keys.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Upcycle dense transformer checkpoints into mixture-of-experts models, plan "
               "their parallel layout and train them at desk scale."};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "JSON run config");
  app.add_option("--seed", g.seed, "Global seed; overrides the config's seed");
  app.add_flag("--force", g.force, "Overwrite existing outputs");
  app.add_option("--out", g.out, "Output path; overrides the config's output");
  const std::string footer = keys_footer();

  auto add = [&](const char* name, const char* help) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->fallthrough();
    sub->footer(footer);
    return sub;
  };
  bool verify = false;
  std::string check_folding;
  CLI::App* upcycle = add("upcycle", "Upcycle a dense checkpoint into an MoE checkpoint");
  upcycle->add_flag("--verify", verify,
                    "Compare whole-model and gathered sharded upcycling; exit 4 on any difference");
  CLI::App* plan = add("plan", "Print process groups and cost estimates of a parallel plan");
  plan->add_option("--check-folding", check_folding,
                   "Comma-separated group kinds that must stay inside one node; exit 5 otherwise");
  CLI::App* train = add("train", "Train a model on the synthetic blend");
  CLI::App* eval = add("eval", "Perplexity on held-out synthetic sequences");
  CLI::App* ablate = add("ablate", "Sweep capacity factor or router type over upcycled copies");
  CLI::App* flops = add("flops", "Parameter and forward FLOP counts, dense versus MoE");
  CLI::App* print = add("print-config", "Print the fully resolved config");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*upcycle) return cmd_upcycle(g, verify);
    if (*plan) return cmd_plan(g, check_folding);
    if (*train) return cmd_train(g);
    if (*eval) return cmd_eval(g);
    if (*ablate) return cmd_ablate(g);
    if (*flops) return cmd_flops(g);
    if (*print) return cmd_print_config(g);
  } catch (const Failure& f) {
    std::cerr << "moeup: " << f.message << '\n';
    return f.code;
  } catch (const Json::exception& e) {
    std::cerr << "moeup: " << e.what() << '\n';
    return kExitConfig;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "moeup: " << e.what() << '\n';
    return kExitIo;
  }
  return kExitConfig;
}
