#ifndef TOKENPOSE_HARNESS_HPP
#define TOKENPOSE_HARNESS_HPP

#include <optional>
#include <string>
#include <vector>

#include "tokenpose/checkpoint.hpp"
#include "tokenpose/data.hpp"
#include "tokenpose/metrics.hpp"
#include "tokenpose/model.hpp"
#include "tokenpose/optim.hpp"

// Training loop, checkpoint glue, evaluation driver and attention export —
// everything behind the CLI.

namespace tokenpose {

struct EpochRecord {
  std::size_t epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> val_pckh;
  std::optional<double> val_ap;
  std::optional<double> val_px_error;
};

struct TrainResult {
  std::string checkpoint_path;
  std::vector<EpochRecord> log;
  std::size_t steps = 0;
};

struct EvalReport {
  ApSummary ap;
  PckhResult pckh;
  bool has_pckh = false;
  double mean_px_error_input = 0.0;  // labeled joints, model-input pixels
  double mean_px_error_orig = 0.0;   // labeled joints, original-image pixels
  std::size_t instances = 0;
  std::string pckh_table;

  std::string to_json(int indent = 2) const;
};

// Checkpoint glue (parameters, optimizer moments, step counter, config
// snapshot). Entry names mirror TokenPoseModel::named_params.
Checkpoint make_checkpoint(const TokenPoseModel<float>& model, const AdamState<float>* opt,
                           std::uint64_t step, const std::string& config_json);
void load_checkpoint_into(const Checkpoint& ckpt, TokenPoseModel<float>& model,
                          AdamState<float>* opt, std::uint64_t* step);
TokenPoseModel<float> model_from_checkpoint(const Checkpoint& ckpt, RunConfig* cfg_out = nullptr);

// Deterministic seeded training; writes checkpoints and a JSON-lines metric
// log under out_dir.
TrainResult train(const RunConfig& cfg, const std::string& out_dir);

EvalReport evaluate_model(const TokenPoseModel<float>& model, Dataset& ds, const EvalConfig& eval);

// Per-sample predictions as COCO-results-style JSON (original image coords).
std::string infer_to_json(const TokenPoseModel<float>& model, Dataset& ds, const EvalConfig& eval);

// Synthetic dataset generation; returns a short JSON summary.
std::string generate_dataset(const RunConfig& cfg, const std::string& out_dir);

// Attention maps, keypoint-keypoint matrices, top-k constraint tables and the
// keypoint prior matrix for one sample; returns a JSON manifest.
std::string export_attention(const TokenPoseModel<float>& model, Dataset& ds,
                             std::size_t sample_index, const std::string& out_dir,
                             std::size_t top_k = 2);

}  // namespace tokenpose

#endif
