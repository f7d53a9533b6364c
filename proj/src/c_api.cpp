#include "tokenpose/c_api.h"

#include <cstdlib>
#include <cstring>
#include <string>

#include <json.hpp>

#include "tokenpose/harness.hpp"

using namespace tokenpose;

struct tkp_config {
  RunConfig cfg;
};

struct tkp_model {
  TokenPoseModel<float> model;
  RunConfig cfg;
};

namespace {

thread_local std::string g_last_error;

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

tkp_status status_from(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return TKP_ERROR_INVALID_ARGUMENT;
    case ErrorCode::shape_mismatch: return TKP_ERROR_SHAPE_MISMATCH;
    case ErrorCode::parse: return TKP_ERROR_PARSE;
    case ErrorCode::io: return TKP_ERROR_IO;
    case ErrorCode::incompatible_checkpoint: return TKP_ERROR_INCOMPATIBLE_CHECKPOINT;
    case ErrorCode::runtime: return TKP_ERROR_RUNTIME;
  }
  return TKP_ERROR_RUNTIME;
}

template <typename Fn>
tkp_status guarded(Fn&& fn) {
  try {
    fn();
    return TKP_OK;
  } catch (const Error& e) {
    g_last_error = e.what();
    return status_from(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return TKP_ERROR_RUNTIME;
  } catch (...) {
    g_last_error = "unknown error";
    return TKP_ERROR_RUNTIME;
  }
}

tkp_status require(bool ok, const char* what) {
  if (ok) return TKP_OK;
  g_last_error = std::string("null argument: ") + what;
  return TKP_ERROR_INVALID_ARGUMENT;
}

}  // namespace

extern "C" {

const char* tkp_version(void) { return "0.1.0"; }

const char* tkp_status_name(tkp_status status) {
  switch (status) {
    case TKP_OK: return "ok";
    case TKP_ERROR_INVALID_ARGUMENT: return "invalid_argument";
    case TKP_ERROR_SHAPE_MISMATCH: return "shape_mismatch";
    case TKP_ERROR_PARSE: return "parse_error";
    case TKP_ERROR_IO: return "io_error";
    case TKP_ERROR_INCOMPATIBLE_CHECKPOINT: return "incompatible_checkpoint";
    case TKP_ERROR_RUNTIME: return "runtime_error";
  }
  return "unknown";
}

const char* tkp_last_error(void) { return g_last_error.c_str(); }

void tkp_string_free(char* s) { std::free(s); }

tkp_status tkp_config_create(tkp_config** out) {
  if (auto s = require(out, "out")) return s;
  return guarded([&] { *out = new tkp_config{}; });
}

tkp_status tkp_config_load(const char* path, tkp_config** out) {
  if (auto s = require(path && out, "path/out")) return s;
  return guarded([&] { *out = new tkp_config{RunConfig::load(path)}; });
}

tkp_status tkp_config_parse(const char* json, tkp_config** out) {
  if (auto s = require(json && out, "json/out")) return s;
  return guarded([&] { *out = new tkp_config{RunConfig::from_json_string(json)}; });
}

tkp_status tkp_config_set(tkp_config* cfg, const char* key, const char* value) {
  if (auto s = require(cfg && key && value, "cfg/key/value")) return s;
  return guarded([&] { cfg->cfg.set(key, value); });
}

tkp_status tkp_config_dump(const tkp_config* cfg, char** out_json) {
  if (auto s = require(cfg && out_json, "cfg/out_json")) return s;
  return guarded([&] { *out_json = dup_string(cfg->cfg.to_json_string()); });
}

void tkp_config_free(tkp_config* cfg) { delete cfg; }

tkp_status tkp_count_params(const tkp_config* cfg, uint64_t* out_count) {
  if (auto s = require(cfg && out_count, "cfg/out_count")) return s;
  return guarded([&] {
    cfg->cfg.train.model.validate();
    *out_count = TokenPoseModel<float>::count_params(cfg->cfg.train.model);
  });
}

tkp_status tkp_generate_dataset(const tkp_config* cfg, const char* out_dir,
                                char** out_summary_json) {
  if (auto s = require(cfg && out_dir, "cfg/out_dir")) return s;
  return guarded([&] {
    std::string summary = generate_dataset(cfg->cfg, out_dir);
    if (out_summary_json) *out_summary_json = dup_string(summary);
  });
}

tkp_status tkp_train(const tkp_config* cfg, const char* out_dir, char** out_summary_json) {
  if (auto s = require(cfg && out_dir, "cfg/out_dir")) return s;
  return guarded([&] {
    TrainResult result = train(cfg->cfg, out_dir);
    nlohmann::json j = {{"checkpoint", result.checkpoint_path},
                        {"steps", result.steps},
                        {"epochs", result.log.size()}};
    if (!result.log.empty()) {
      j["final_train_loss"] = result.log.back().train_loss;
      if (result.log.back().val_pckh) j["final_val_pckh"] = *result.log.back().val_pckh;
    }
    if (out_summary_json) *out_summary_json = dup_string(j.dump(2));
  });
}

tkp_status tkp_model_load(const char* checkpoint_path, tkp_model** out) {
  if (auto s = require(checkpoint_path && out, "checkpoint_path/out")) return s;
  return guarded([&] {
    Checkpoint ckpt = Checkpoint::load(checkpoint_path);
    RunConfig cfg;
    TokenPoseModel<float> model = model_from_checkpoint(ckpt, &cfg);
    *out = new tkp_model{std::move(model), std::move(cfg)};
  });
}

tkp_status tkp_model_config(const tkp_model* model, char** out_json) {
  if (auto s = require(model && out_json, "model/out_json")) return s;
  return guarded([&] { *out_json = dup_string(model->cfg.to_json_string()); });
}

tkp_status tkp_evaluate(tkp_model* model, const char* annotations_path,
                        char** out_metrics_json) {
  if (auto s = require(model && annotations_path, "model/annotations_path")) return s;
  return guarded([&] {
    Dataset ds = load_annotations(annotations_path);
    EvalReport report = evaluate_model(model->model, ds, model->cfg.eval);
    if (out_metrics_json) *out_metrics_json = dup_string(report.to_json());
  });
}

tkp_status tkp_infer(tkp_model* model, const char* annotations_path, char** out_results_json) {
  if (auto s = require(model && annotations_path, "model/annotations_path")) return s;
  return guarded([&] {
    Dataset ds = load_annotations(annotations_path);
    std::string results = infer_to_json(model->model, ds, model->cfg.eval);
    if (out_results_json) *out_results_json = dup_string(results);
  });
}

tkp_status tkp_export_attention(tkp_model* model, const char* annotations_path,
                                const char* sample_id, const char* out_dir,
                                char** out_manifest_json) {
  if (auto s = require(model && annotations_path && out_dir, "model/annotations/out_dir"))
    return s;
  return guarded([&] {
    Dataset ds = load_annotations(annotations_path);
    std::size_t index = 0;
    if (sample_id && sample_id[0] != '\0') {
      bool found = false;
      for (std::size_t i = 0; i < ds.size(); ++i)
        if (ds.samples[i].id == sample_id) {
          index = i;
          found = true;
          break;
        }
      if (!found) {
        // also accept a bare numeric index
        char* end = nullptr;
        unsigned long v = std::strtoul(sample_id, &end, 10);
        if (end && *end == '\0' && v < ds.size())
          index = v;
        else
          throw InvalidArgument(std::string("no sample with id \"") + sample_id + "\"");
      }
    }
    std::string manifest = export_attention(model->model, ds, index, out_dir);
    if (out_manifest_json) *out_manifest_json = dup_string(manifest);
  });
}

void tkp_model_free(tkp_model* model) { delete model; }

}  // extern "C"
