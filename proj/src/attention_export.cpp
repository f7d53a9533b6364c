#include <algorithm>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "tokenpose/harness.hpp"
#include "tokenpose/image_io.hpp"

namespace fs = std::filesystem;

namespace tokenpose {

using nlohmann::json;

namespace {

// nearest-neighbour upsample of a grid to the model input resolution
std::vector<double> upsample_nearest(const std::vector<double>& grid, std::size_t gh,
                                     std::size_t gw, std::size_t oh, std::size_t ow) {
  std::vector<double> out(oh * ow);
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      std::size_t gy = y * gh / oh;
      std::size_t gx = x * gw / ow;
      out[y * ow + x] = grid[gy * gw + gx];
    }
  return out;
}

std::string sanitize(const std::string& name) {
  std::string s = name;
  for (char& c : s)
    if (!std::isalnum(static_cast<unsigned char>(c))) c = '_';
  return s;
}

}  // namespace

std::string export_attention(const TokenPoseModel<float>& model, Dataset& ds,
                             std::size_t sample_index, const std::string& out_dir,
                             std::size_t top_k) {
  NoGrad no_grad;
  if (sample_index >= ds.size())
    throw InvalidArgument("sample index " + std::to_string(sample_index) +
                          " outside dataset of size " + std::to_string(ds.size()));
  const ModelConfig& cfg = model.cfg;
  fs::create_directories(out_dir);

  const PoseSample& sample = ds.samples[sample_index];
  CropResult crop = crop_to_input(sample, ds.image(sample_index), cfg);
  ForwardOpts opts;
  opts.retain_attention = true;
  opts.retain_layers = true;
  auto fwd = model.forward(image_to_tensor<float>(crop.input), opts);

  std::size_t N = cfg.num_keypoints, L = cfg.num_visual_tokens(), S = N + L;
  std::size_t gh = cfg.grid_h(), gw = cfg.grid_w();
  std::size_t M = cfg.num_layers, H = cfg.num_heads;
  std::vector<std::string> names = ds.joint_names;
  if (names.size() != N) {
    names.clear();
    for (std::size_t i = 0; i < N; ++i) names.push_back("joint_" + std::to_string(i));
  }

  // head-averaged attention per layer
  std::vector<std::vector<double>> layer_attn(M, std::vector<double>(S * S, 0.0));
  for (const auto& rec : fwd.state.attention) {
    const auto& v = rec.matrix.values();
    auto& acc = layer_attn[rec.layer - 1];
    for (std::size_t i = 0; i < S * S; ++i) acc[i] += static_cast<double>(v[i]);
  }
  for (auto& acc : layer_attn)
    for (double& v : acc) v /= static_cast<double>(H);

  json manifest;
  manifest["sample_id"] = sample.id;
  manifest["layers"] = M;
  manifest["heads_averaged"] = H;
  manifest["grid"] = {gh, gw};
  json files = json::array();

  for (std::size_t l = 0; l < M; ++l) {
    const auto& A = layer_attn[l];
    // keypoint-to-visual maps on the patch grid, plus nearest upsample
    for (std::size_t i = 0; i < N; ++i) {
      std::vector<double> grid(L);
      for (std::size_t j = 0; j < L; ++j) grid[j] = A[i * S + N + j];
      std::string base = "attn_layer" + std::to_string(l + 1) + "_" + sanitize(names[i]);
      std::string grid_path = (fs::path(out_dir) / (base + "_grid.pgm")).string();
      std::string full_path = (fs::path(out_dir) / (base + ".pgm")).string();
      write_pgm16(grid_path, grid, gh, gw,
                  "keypoint-to-visual attention, layer " + std::to_string(l + 1) + ", " + names[i]);
      write_pgm16(full_path, upsample_nearest(grid, gh, gw, cfg.input_h, cfg.input_w),
                  cfg.input_h, cfg.input_w, "nearest-upsampled attention map");
      files.push_back(grid_path);
      files.push_back(full_path);
    }

    // keypoint-to-keypoint block, rows renormalized after dropping the visual
    // columns
    std::vector<double> kk(N * N);
    for (std::size_t i = 0; i < N; ++i) {
      double row_sum = 0.0;
      for (std::size_t j = 0; j < N; ++j) row_sum += A[i * S + j];
      for (std::size_t j = 0; j < N; ++j)
        kk[i * N + j] = row_sum > 0.0 ? A[i * S + j] / row_sum : 0.0;
    }
    std::string kk_base = "kk_layer" + std::to_string(l + 1);
    std::string kk_pgm = (fs::path(out_dir) / (kk_base + ".pgm")).string();
    write_pgm16(kk_pgm, kk, N, N,
                "keypoint-keypoint attention, rows renormalized over keypoint columns");
    json kk_json;
    kk_json["note"] =
        "rows renormalized to sum to 1 after excluding visual-token columns";
    kk_json["layer"] = l + 1;
    kk_json["keypoints"] = names;
    kk_json["matrix"] = json::array();
    for (std::size_t i = 0; i < N; ++i) {
      json row = json::array();
      for (std::size_t j = 0; j < N; ++j) row.push_back(kk[i * N + j]);
      kk_json["matrix"].push_back(row);
    }
    std::string kk_path = (fs::path(out_dir) / (kk_base + ".json")).string();
    std::ofstream(kk_path) << kk_json.dump(1) << "\n";
    files.push_back(kk_pgm);
    files.push_back(kk_path);
  }

  // top-k constraints from the final layer's raw scores, self excluded
  {
    const auto& A = layer_attn[M - 1];
    json table = json::array();
    for (std::size_t i = 0; i < N; ++i) {
      std::vector<std::size_t> idx;
      for (std::size_t j = 0; j < N; ++j)
        if (j != i) idx.push_back(j);
      std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        double va = A[i * S + a], vb = A[i * S + b];
        if (va != vb) return va > vb;
        return a < b;
      });
      json entry;
      entry["keypoint"] = names[i];
      entry["constraints"] = json::array();
      for (std::size_t r = 0; r < std::min(top_k, idx.size()); ++r)
        entry["constraints"].push_back(
            {{"keypoint", names[idx[r]]}, {"score", A[i * S + idx[r]]}});
      table.push_back(entry);
    }
    json top;
    top["note"] = "raw final-layer attention scores between keypoint tokens, self excluded";
    top["top_k"] = top_k;
    top["table"] = table;
    std::string path = (fs::path(out_dir) / "constraints.json").string();
    std::ofstream(path) << top.dump(1) << "\n";
    files.push_back(path);
  }

  // learned prior between the input keypoint tokens
  {
    Tensor<float> prior = keypoint_prior_matrix(model.keypoint_tokens);
    std::vector<double> p(prior.values().begin(), prior.values().end());
    std::string pgm = (fs::path(out_dir) / "prior_matrix.pgm").string();
    write_pgm16(pgm, p, N, N, "softmax-normalized keypoint token inner products");
    json pj;
    pj["note"] = "inner products of the input keypoint tokens, scaled by 1/sqrt(d), row softmax";
    pj["keypoints"] = names;
    pj["matrix"] = json::array();
    for (std::size_t i = 0; i < N; ++i) {
      json row = json::array();
      for (std::size_t j = 0; j < N; ++j) row.push_back(p[i * N + j]);
      pj["matrix"].push_back(row);
    }
    std::string path = (fs::path(out_dir) / "prior_matrix.json").string();
    std::ofstream(path) << pj.dump(1) << "\n";
    files.push_back(pgm);
    files.push_back(path);
  }

  manifest["files"] = files;
  std::string manifest_path = (fs::path(out_dir) / "manifest.json").string();
  std::ofstream(manifest_path) << manifest.dump(1) << "\n";
  return manifest.dump(2);
}

}  // namespace tokenpose
