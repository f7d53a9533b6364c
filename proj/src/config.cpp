#include "tokenpose/config.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace tokenpose {

using nlohmann::json;

std::string to_string(PeMode mode) {
  switch (mode) {
    case PeMode::none: return "none";
    case PeMode::learnable: return "learnable";
    case PeMode::sine2d: return "sine2d";
  }
  return "none";
}

std::string to_string(StemMode mode) {
  return mode == StemMode::conv_stem ? "conv_stem" : "none";
}

PeMode pe_mode_from_string(const std::string& s) {
  if (s == "none") return PeMode::none;
  if (s == "learnable") return PeMode::learnable;
  if (s == "sine2d") return PeMode::sine2d;
  throw SchemaError("pe_mode: expected one of none|learnable|sine2d, got \"" + s + "\"");
}

StemMode stem_mode_from_string(const std::string& s) {
  if (s == "none") return StemMode::none;
  if (s == "conv_stem") return StemMode::conv_stem;
  throw SchemaError("stem: expected one of none|conv_stem, got \"" + s + "\"");
}

void ModelConfig::validate() const {
  if (input_h == 0 || input_w == 0 || channels == 0 || patch_h == 0 || patch_w == 0 ||
      embed_dim == 0 || num_heads == 0 || num_keypoints == 0 || heatmap_h == 0 || heatmap_w == 0)
    throw InvalidArgument("model config has a zero dimension");
  if (stem == StemMode::conv_stem && (input_h % 4 != 0 || input_w % 4 != 0))
    throw NonDivisiblePatch("conv_stem needs input divisible by 4, got " +
                            std::to_string(input_h) + "x" + std::to_string(input_w));
  if (feature_h() % patch_h != 0 || feature_w() % patch_w != 0)
    throw NonDivisiblePatch("feature map " + std::to_string(feature_h()) + "x" +
                            std::to_string(feature_w()) + " not divisible by patch " +
                            std::to_string(patch_h) + "x" + std::to_string(patch_w));
  if (embed_dim % num_heads != 0)
    throw IndivisibleHeads("embed_dim " + std::to_string(embed_dim) +
                           " not divisible by num_heads " + std::to_string(num_heads));
  if (mlp_ratio <= 0.0) throw InvalidArgument("mlp_ratio must be positive");
  std::size_t prev = 0;
  for (std::size_t l : fusion_layers) {
    if (l == 0 || l > num_layers)
      throw InvalidLayerIndex("fusion layer " + std::to_string(l) + " outside 1.." +
                              std::to_string(num_layers));
    if (l <= prev) throw InvalidLayerIndex("fusion_layers must be distinct and ascending");
    prev = l;
  }
}

void TrainConfig::validate() const {
  model.validate();
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (epochs < 1) throw InvalidArgument("epochs must be >= 1");
  std::size_t prev = 0;
  for (std::size_t e : lr_drop_epochs) {
    if (e >= epochs)
      throw InvalidArgument("lr_drop_epochs must be < epochs (" + std::to_string(e) + " >= " +
                            std::to_string(epochs) + ")");
    if (!(prev < e) && prev != 0)
      throw InvalidArgument("lr_drop_epochs must be ascending");
    prev = e;
  }
  if (lr_drop_factor <= 0.0 || lr_drop_factor > 1.0)
    throw InvalidArgument("lr_drop_factor must be in (0,1]");
  if (dropout < 0.0 || dropout >= 1.0) throw InvalidArgument("dropout must be in [0,1)");
  if (sigma <= 0.0) throw InvalidArgument("sigma must be positive");
}

void DataConfig::validate() const {
  if (count < 1) throw InvalidArgument("data.count must be >= 1");
  if (img_h == 0 || img_w == 0) throw InvalidArgument("data image dims must be positive");
  if (channels != 1 && channels != 3) throw InvalidArgument("data.channels must be 1 or 3");
  if (occlusion_prob < 0.0 || occlusion_prob > 1.0)
    throw InvalidArgument("occlusion_prob must be in [0,1]");
}

void RunConfig::validate() const {
  train.validate();
  data.validate();
  if (eval.decode != "subpixel" && eval.decode != "argmax")
    throw InvalidArgument("eval.decode must be subpixel or argmax");
  if (eval.pckh_alpha <= 0.0) throw InvalidArgument("eval.pckh_alpha must be positive");
}

namespace {

json model_to_json(const ModelConfig& m) {
  json j;
  j["input_h"] = m.input_h;
  j["input_w"] = m.input_w;
  j["channels"] = m.channels;
  j["patch_h"] = m.patch_h;
  j["patch_w"] = m.patch_w;
  j["embed_dim"] = m.embed_dim;
  j["num_layers"] = m.num_layers;
  j["num_heads"] = m.num_heads;
  j["num_keypoints"] = m.num_keypoints;
  j["heatmap_h"] = m.heatmap_h;
  j["heatmap_w"] = m.heatmap_w;
  j["mlp_ratio"] = m.mlp_ratio;
  j["pe_mode"] = to_string(m.pe_mode);
  j["fusion_layers"] = m.fusion_layers;
  j["stem"] = to_string(m.stem);
  return j;
}

template <typename T>
void read_field(const json& j, const char* key, T& out, const std::string& path) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw SchemaError(path + "." + key + ": " + e.what());
  }
}

ModelConfig model_from_json(const json& j, const std::string& path) {
  ModelConfig m;
  read_field(j, "input_h", m.input_h, path);
  read_field(j, "input_w", m.input_w, path);
  read_field(j, "channels", m.channels, path);
  read_field(j, "patch_h", m.patch_h, path);
  read_field(j, "patch_w", m.patch_w, path);
  read_field(j, "embed_dim", m.embed_dim, path);
  read_field(j, "num_layers", m.num_layers, path);
  read_field(j, "num_heads", m.num_heads, path);
  read_field(j, "num_keypoints", m.num_keypoints, path);
  read_field(j, "heatmap_h", m.heatmap_h, path);
  read_field(j, "heatmap_w", m.heatmap_w, path);
  read_field(j, "mlp_ratio", m.mlp_ratio, path);
  if (j.contains("pe_mode")) m.pe_mode = pe_mode_from_string(j.at("pe_mode").get<std::string>());
  read_field(j, "fusion_layers", m.fusion_layers, path);
  if (j.contains("stem")) m.stem = stem_mode_from_string(j.at("stem").get<std::string>());
  return m;
}

json train_to_json(const TrainConfig& t) {
  json j;
  j["base_lr"] = t.base_lr;
  j["lr_drop_epochs"] = t.lr_drop_epochs;
  j["lr_drop_factor"] = t.lr_drop_factor;
  j["epochs"] = t.epochs;
  j["batch_size"] = t.batch_size;
  j["seed"] = t.seed;
  j["adam_beta1"] = t.adam_beta1;
  j["adam_beta2"] = t.adam_beta2;
  j["adam_eps"] = t.adam_eps;
  j["checkpoint_every"] = t.checkpoint_every;
  j["train_annotations"] = t.train_annotations;
  j["val_annotations"] = t.val_annotations;
  j["max_steps"] = t.max_steps;
  j["dropout"] = t.dropout;
  j["sigma"] = t.sigma;
  j["eval_every"] = t.eval_every;
  j["flip_augment"] = t.flip_augment;
  j["resume"] = t.resume;
  j["threads"] = t.threads;
  return j;
}

TrainConfig train_from_json(const json& j, const std::string& path) {
  TrainConfig t;
  read_field(j, "base_lr", t.base_lr, path);
  read_field(j, "lr_drop_epochs", t.lr_drop_epochs, path);
  read_field(j, "lr_drop_factor", t.lr_drop_factor, path);
  read_field(j, "epochs", t.epochs, path);
  read_field(j, "batch_size", t.batch_size, path);
  read_field(j, "seed", t.seed, path);
  read_field(j, "adam_beta1", t.adam_beta1, path);
  read_field(j, "adam_beta2", t.adam_beta2, path);
  read_field(j, "adam_eps", t.adam_eps, path);
  read_field(j, "checkpoint_every", t.checkpoint_every, path);
  read_field(j, "train_annotations", t.train_annotations, path);
  read_field(j, "val_annotations", t.val_annotations, path);
  read_field(j, "max_steps", t.max_steps, path);
  read_field(j, "dropout", t.dropout, path);
  read_field(j, "sigma", t.sigma, path);
  read_field(j, "eval_every", t.eval_every, path);
  read_field(j, "flip_augment", t.flip_augment, path);
  read_field(j, "resume", t.resume, path);
  read_field(j, "threads", t.threads, path);
  return t;
}

json data_to_json(const DataConfig& d) {
  json j;
  j["skeleton"] = d.skeleton;
  j["count"] = d.count;
  j["seed"] = d.seed;
  j["img_h"] = d.img_h;
  j["img_w"] = d.img_w;
  j["channels"] = d.channels;
  j["occlusion_prob"] = d.occlusion_prob;
  return j;
}

DataConfig data_from_json(const json& j, const std::string& path) {
  DataConfig d;
  read_field(j, "skeleton", d.skeleton, path);
  read_field(j, "count", d.count, path);
  read_field(j, "seed", d.seed, path);
  read_field(j, "img_h", d.img_h, path);
  read_field(j, "img_w", d.img_w, path);
  read_field(j, "channels", d.channels, path);
  read_field(j, "occlusion_prob", d.occlusion_prob, path);
  return d;
}

json run_to_json(const RunConfig& c) {
  json j;
  j["model"] = model_to_json(c.train.model);
  j["train"] = train_to_json(c.train);
  j["data"] = data_to_json(c.data);
  j["eval"] = {{"decode", c.eval.decode}, {"pckh_alpha", c.eval.pckh_alpha}};
  return j;
}

RunConfig run_from_json(const json& j) {
  RunConfig c;
  if (j.contains("model")) c.train.model = model_from_json(j.at("model"), "model");
  if (j.contains("train")) {
    ModelConfig m = c.train.model;
    c.train = train_from_json(j.at("train"), "train");
    c.train.model = m;
  }
  if (j.contains("data")) c.data = data_from_json(j.at("data"), "data");
  if (j.contains("eval")) {
    read_field(j.at("eval"), "decode", c.eval.decode, "eval");
    read_field(j.at("eval"), "pckh_alpha", c.eval.pckh_alpha, "eval");
  }
  return c;
}

}  // namespace

RunConfig RunConfig::from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw SchemaError(std::string("config: ") + e.what());
  }
  return run_from_json(j);
}

RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json_string(ss.str());
}

std::string RunConfig::to_json_string(int indent) const {
  return run_to_json(*this).dump(indent);
}

void RunConfig::set(const std::string& key, const std::string& value) {
  json j = run_to_json(*this);
  std::string pointer = "/" + key;
  for (auto& ch : pointer)
    if (ch == '.') ch = '/';
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::exception&) {
    parsed = value;  // bare strings allowed without quotes
  }
  try {
    j.at(json::json_pointer(pointer)) = parsed;
  } catch (const json::exception&) {
    throw SchemaError("unknown config key \"" + key + "\"");
  }
  *this = run_from_json(j);
}

std::string model_config_to_json(const ModelConfig& cfg, int indent) {
  return model_to_json(cfg).dump(indent);
}

ModelConfig model_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw SchemaError(std::string("model config: ") + e.what());
  }
  return model_from_json(j, "model");
}

}  // namespace tokenpose
