#ifndef TOKENPOSE_CONFIG_HPP
#define TOKENPOSE_CONFIG_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "tokenpose/errors.hpp"

namespace tokenpose {

enum class PeMode { none, learnable, sine2d };
enum class StemMode { none, conv_stem };

std::string to_string(PeMode mode);
std::string to_string(StemMode mode);
PeMode pe_mode_from_string(const std::string& s);
StemMode stem_mode_from_string(const std::string& s);

// Every architectural knob. Serializes to JSON with exactly these field names.
struct ModelConfig {
  std::size_t input_h = 256;
  std::size_t input_w = 192;
  std::size_t channels = 3;
  std::size_t patch_h = 16;
  std::size_t patch_w = 12;
  std::size_t embed_dim = 192;
  std::size_t num_layers = 12;
  std::size_t num_heads = 16;
  std::size_t num_keypoints = 17;
  std::size_t heatmap_h = 64;
  std::size_t heatmap_w = 48;
  double mlp_ratio = 4.0;
  PeMode pe_mode = PeMode::sine2d;
  std::vector<std::size_t> fusion_layers;  // empty = no fusion
  StemMode stem = StemMode::none;

  // stem-net always maps to this many channels at 1/4 resolution
  static constexpr std::size_t stem_out_channels = 64;
  static constexpr std::size_t stem_mid_channels = 32;

  void validate() const;

  // Token grid after the (optional) stem.
  std::size_t feature_h() const { return stem == StemMode::conv_stem ? input_h / 4 : input_h; }
  std::size_t feature_w() const { return stem == StemMode::conv_stem ? input_w / 4 : input_w; }
  std::size_t feature_c() const { return stem == StemMode::conv_stem ? stem_out_channels : channels; }
  std::size_t grid_h() const { return feature_h() / patch_h; }
  std::size_t grid_w() const { return feature_w() / patch_w; }
  std::size_t num_visual_tokens() const { return grid_h() * grid_w(); }
  std::size_t patch_dim() const { return patch_h * patch_w * feature_c(); }
  std::size_t head_dim() const { return embed_dim / num_heads; }
  std::size_t mlp_hidden() const {
    return static_cast<std::size_t>(mlp_ratio * static_cast<double>(embed_dim));
  }
  // Token width entering the heatmap head (k*d under fusion).
  std::size_t head_in_dim() const {
    return embed_dim * (fusion_layers.empty() ? 1 : fusion_layers.size());
  }
};

struct TrainConfig {
  double base_lr = 1e-3;
  std::vector<std::size_t> lr_drop_epochs = {200, 260};
  double lr_drop_factor = 0.1;
  std::size_t epochs = 300;
  std::size_t batch_size = 8;
  std::uint64_t seed = 42;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t checkpoint_every = 50;  // epochs; 0 = final only
  std::string train_annotations;
  std::string val_annotations;
  ModelConfig model;

  // artifact knobs beyond the core schedule
  std::size_t max_steps = 0;  // 0 = run all epochs
  double dropout = 0.0;
  double sigma = 2.0;  // target gaussian stddev, heatmap px
  std::size_t eval_every = 0;  // epochs between val metric passes; 0 = never
  bool flip_augment = false;
  std::string resume;  // checkpoint path
  std::size_t threads = 0;  // 0 = auto (TOKENPOSE_THREADS, then hw)

  void validate() const;
};

struct DataConfig {
  std::string skeleton = "coco17";  // or "stick8"
  std::size_t count = 64;
  std::uint64_t seed = 1;
  std::size_t img_h = 256;
  std::size_t img_w = 192;
  std::size_t channels = 3;
  double occlusion_prob = 0.0;

  void validate() const;
};

struct EvalConfig {
  std::string decode = "subpixel";  // or "argmax"
  double pckh_alpha = 0.5;
};

// The one JSON document the CLI consumes: {"model":…,"train":…,"data":…,"eval":…}
struct RunConfig {
  TrainConfig train;  // owns the ModelConfig
  DataConfig data;
  EvalConfig eval;

  void validate() const;

  static RunConfig from_json_string(const std::string& json);
  static RunConfig load(const std::string& path);
  std::string to_json_string(int indent = 2) const;
  // dotted-path override, e.g. set("train.base_lr", "1e-4")
  void set(const std::string& key, const std::string& value);
};

std::string model_config_to_json(const ModelConfig& cfg, int indent = 2);
ModelConfig model_config_from_json(const std::string& json);

}  // namespace tokenpose

#endif
