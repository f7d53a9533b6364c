// tokenpose command line: gen-data, train, eval, infer, export-attention,
// params. Configuration comes from one JSON file plus --set key=value
// overrides; logs go to stderr, machine-readable results to stdout or --out.
// Links only the C API.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tokenpose/c_api.h"

namespace {

struct ConfigDeleter {
  void operator()(tkp_config* c) const { tkp_config_free(c); }
};
struct ModelDeleter {
  void operator()(tkp_model* m) const { tkp_model_free(m); }
};
using ConfigPtr = std::unique_ptr<tkp_config, ConfigDeleter>;
using ModelPtr = std::unique_ptr<tkp_model, ModelDeleter>;

[[noreturn]] void fail(tkp_status status) {
  std::cerr << "error (" << tkp_status_name(status) << "): " << tkp_last_error() << "\n";
  std::exit(1);
}

void check(tkp_status status) {
  if (status != TKP_OK) fail(status);
}

ConfigPtr make_config(const std::string& config_path,
                      const std::vector<std::string>& overrides) {
  tkp_config* raw = nullptr;
  if (config_path.empty())
    check(tkp_config_create(&raw));
  else
    check(tkp_config_load(config_path.c_str(), &raw));
  ConfigPtr cfg(raw);
  for (const auto& kv : overrides) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) {
      std::cerr << "error: --set expects key=value, got \"" << kv << "\"\n";
      std::exit(1);
    }
    check(tkp_config_set(cfg.get(), kv.substr(0, eq).c_str(), kv.substr(eq + 1).c_str()));
  }
  return cfg;
}

void emit(const char* text, const std::string& out_path) {
  if (!text) return;
  if (out_path.empty()) {
    std::cout << text << "\n";
  } else {
    std::ofstream out(out_path);
    if (!out) {
      std::cerr << "error: cannot write " << out_path << "\n";
      std::exit(1);
    }
    out << text << "\n";
    std::cerr << "wrote " << out_path << "\n";
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"token-based 2D pose estimation"};
  app.require_subcommand(1);

  std::string config_path, out_path, out_dir, checkpoint, annotations, sample_id;
  std::vector<std::string> overrides;
  app.add_option("-c,--config", config_path, "JSON configuration file")->capture_default_str();
  app.add_option("--set", overrides, "override config values, key=value (repeatable)");
  app.add_option("--out", out_path, "write machine-readable output here instead of stdout");

  auto* gen = app.add_subcommand("gen-data", "render a synthetic skeleton dataset");
  gen->add_option("--dir", out_dir, "output directory")->required();

  auto* train_cmd = app.add_subcommand("train", "train a model");
  train_cmd->add_option("--dir", out_dir, "run directory for checkpoints and logs")->required();
  std::string resume;
  train_cmd->add_option("--resume", resume, "checkpoint to resume from");

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint against annotations");
  eval_cmd->add_option("--checkpoint", checkpoint, "TKPZ checkpoint")->required();
  eval_cmd->add_option("--annotations", annotations, "annotation JSON")->required();

  auto* infer_cmd = app.add_subcommand("infer", "predict keypoints for annotated boxes");
  infer_cmd->add_option("--checkpoint", checkpoint, "TKPZ checkpoint")->required();
  infer_cmd->add_option("--annotations", annotations, "annotation JSON")->required();

  auto* export_cmd = app.add_subcommand("export-attention", "write attention maps and tables");
  export_cmd->add_option("--checkpoint", checkpoint, "TKPZ checkpoint")->required();
  export_cmd->add_option("--annotations", annotations, "annotation JSON")->required();
  export_cmd->add_option("--sample", sample_id, "sample id or index (default: first)");
  export_cmd->add_option("--dir", out_dir, "output directory")->required();

  auto* params_cmd = app.add_subcommand("params", "count trainable parameters");
  (void)params_cmd;

  CLI11_PARSE(app, argc, argv);

  if (gen->parsed()) {
    ConfigPtr cfg = make_config(config_path, overrides);
    char* summary = nullptr;
    check(tkp_generate_dataset(cfg.get(), out_dir.c_str(), &summary));
    emit(summary, out_path);
    tkp_string_free(summary);
  } else if (train_cmd->parsed()) {
    if (!resume.empty()) overrides.push_back("train.resume=" + resume);
    ConfigPtr cfg = make_config(config_path, overrides);
    char* summary = nullptr;
    check(tkp_train(cfg.get(), out_dir.c_str(), &summary));
    emit(summary, out_path);
    tkp_string_free(summary);
  } else if (eval_cmd->parsed()) {
    tkp_model* raw = nullptr;
    check(tkp_model_load(checkpoint.c_str(), &raw));
    ModelPtr model(raw);
    char* metrics = nullptr;
    check(tkp_evaluate(model.get(), annotations.c_str(), &metrics));
    emit(metrics, out_path);
    tkp_string_free(metrics);
  } else if (infer_cmd->parsed()) {
    tkp_model* raw = nullptr;
    check(tkp_model_load(checkpoint.c_str(), &raw));
    ModelPtr model(raw);
    char* results = nullptr;
    check(tkp_infer(model.get(), annotations.c_str(), &results));
    emit(results, out_path);
    tkp_string_free(results);
  } else if (export_cmd->parsed()) {
    tkp_model* raw = nullptr;
    check(tkp_model_load(checkpoint.c_str(), &raw));
    ModelPtr model(raw);
    char* manifest = nullptr;
    check(tkp_export_attention(model.get(), annotations.c_str(), sample_id.c_str(),
                               out_dir.c_str(), &manifest));
    emit(manifest, out_path);
    tkp_string_free(manifest);
  } else if (params_cmd->parsed()) {
    ConfigPtr cfg = make_config(config_path, overrides);
    uint64_t count = 0;
    check(tkp_count_params(cfg.get(), &count));
    char buf[64];
    std::snprintf(buf, sizeof buf, "{\n  \"params\": %llu\n}",
                  static_cast<unsigned long long>(count));
    emit(buf, out_path);
  }
  return 0;
}
