#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <string>

#include "tokenpose/c_api.h"

namespace fs = std::filesystem;

namespace {

const char* kToyConfig = R"({
  "model": {"input_h": 32, "input_w": 32, "channels": 1, "patch_h": 8, "patch_w": 8,
            "embed_dim": 16, "num_layers": 1, "num_heads": 2, "num_keypoints": 8,
            "heatmap_h": 8, "heatmap_w": 8, "mlp_ratio": 2.0, "pe_mode": "sine2d",
            "fusion_layers": [], "stem": "none"},
  "train": {"base_lr": 0.001, "lr_drop_epochs": [], "epochs": 1, "batch_size": 4,
            "seed": 9, "checkpoint_every": 0, "sigma": 1.5},
  "data": {"skeleton": "stick8", "count": 4, "seed": 2, "img_h": 32, "img_w": 32,
           "channels": 1}
})";

std::string tmp_dir(const std::string& tag) {
  fs::path p = fs::temp_directory_path() / ("tkp_capi_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

}  // namespace

TEST_CASE("config lifecycle: parse, set, dump") {
  tkp_config* cfg = nullptr;
  REQUIRE(tkp_config_parse(kToyConfig, &cfg) == TKP_OK);
  CHECK(tkp_config_set(cfg, "train.base_lr", "0.01") == TKP_OK);
  CHECK(tkp_config_set(cfg, "no.such.key", "1") == TKP_ERROR_PARSE);
  CHECK(std::string(tkp_last_error()).find("no.such.key") != std::string::npos);

  char* json = nullptr;
  REQUIRE(tkp_config_dump(cfg, &json) == TKP_OK);
  CHECK(std::string(json).find("0.01") != std::string::npos);
  tkp_string_free(json);
  tkp_config_free(cfg);
}

TEST_CASE("config parse failures set status and message") {
  tkp_config* cfg = nullptr;
  CHECK(tkp_config_parse("{not json", &cfg) == TKP_ERROR_PARSE);
  CHECK(tkp_config_load("/no/such/file.json", &cfg) == TKP_ERROR_IO);
  CHECK(tkp_config_create(nullptr) == TKP_ERROR_INVALID_ARGUMENT);
  CHECK(std::strlen(tkp_last_error()) > 0);
}

TEST_CASE("param counting via the C surface") {
  tkp_config* cfg = nullptr;
  REQUIRE(tkp_config_create(&cfg) == TKP_OK);  // defaults = TokenPose-T
  uint64_t count = 0;
  REQUIRE(tkp_count_params(cfg, &count) == TKP_OK);
  CHECK(count > 5000000);
  CHECK(count < 7000000);
  tkp_config_free(cfg);
}

TEST_CASE("end-to-end through the shared library: gen, train, eval, infer, export") {
  std::string data_dir = tmp_dir("data");
  std::string run_dir = tmp_dir("run");
  std::string viz_dir = tmp_dir("viz");

  tkp_config* cfg = nullptr;
  REQUIRE(tkp_config_parse(kToyConfig, &cfg) == TKP_OK);

  char* summary = nullptr;
  REQUIRE(tkp_generate_dataset(cfg, data_dir.c_str(), &summary) == TKP_OK);
  CHECK(std::string(summary).find("annotations") != std::string::npos);
  tkp_string_free(summary);

  std::string annotations = data_dir + "/annotations.json";
  REQUIRE(tkp_config_set(cfg, "train.train_annotations", annotations.c_str()) == TKP_OK);

  char* train_summary = nullptr;
  REQUIRE(tkp_train(cfg, run_dir.c_str(), &train_summary) == TKP_OK);
  std::string ts = train_summary;
  tkp_string_free(train_summary);
  CHECK(ts.find("checkpoint") != std::string::npos);

  std::string ckpt = run_dir + "/checkpoint_final.tkpz";
  tkp_model* model = nullptr;
  REQUIRE(tkp_model_load(ckpt.c_str(), &model) == TKP_OK);

  char* model_cfg = nullptr;
  REQUIRE(tkp_model_config(model, &model_cfg) == TKP_OK);
  CHECK(std::string(model_cfg).find("\"embed_dim\": 16") != std::string::npos);
  tkp_string_free(model_cfg);

  char* metrics = nullptr;
  REQUIRE(tkp_evaluate(model, annotations.c_str(), &metrics) == TKP_OK);
  CHECK(std::string(metrics).find("pckh") != std::string::npos);
  tkp_string_free(metrics);

  char* results = nullptr;
  REQUIRE(tkp_infer(model, annotations.c_str(), &results) == TKP_OK);
  CHECK(std::string(results).find("keypoints") != std::string::npos);
  tkp_string_free(results);

  char* manifest = nullptr;
  REQUIRE(tkp_export_attention(model, annotations.c_str(), "", viz_dir.c_str(), &manifest) ==
          TKP_OK);
  CHECK(std::string(manifest).find("files") != std::string::npos);
  tkp_string_free(manifest);
  CHECK(fs::exists(fs::path(viz_dir) / "prior_matrix.json"));

  // error paths: bad checkpoint, bad sample id
  tkp_model* broken = nullptr;
  CHECK(tkp_model_load("/no/such.tkpz", &broken) == TKP_ERROR_IO);
  char* out = nullptr;
  CHECK(tkp_export_attention(model, annotations.c_str(), "not_a_sample", viz_dir.c_str(),
                             &out) == TKP_ERROR_INVALID_ARGUMENT);

  tkp_model_free(model);
  tkp_config_free(cfg);
  fs::remove_all(data_dir);
  fs::remove_all(run_dir);
  fs::remove_all(viz_dir);
}

TEST_CASE("status names cover the enum") {
  CHECK(std::string(tkp_status_name(TKP_OK)) == "ok");
  CHECK(std::string(tkp_status_name(TKP_ERROR_PARSE)) == "parse_error");
  CHECK(std::string(tkp_status_name(TKP_ERROR_INCOMPATIBLE_CHECKPOINT)) ==
        "incompatible_checkpoint");
  CHECK(std::strlen(tkp_version()) > 0);
}
