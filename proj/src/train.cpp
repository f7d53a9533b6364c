#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "tokenpose/harness.hpp"

namespace fs = std::filesystem;

namespace tokenpose {

using nlohmann::json;

namespace {

std::vector<std::uint32_t> to_dims(const Shape& s) {
  std::vector<std::uint32_t> d;
  for (auto v : s) d.push_back(static_cast<std::uint32_t>(v));
  return d;
}

std::size_t worker_count(const TrainConfig& cfg, std::size_t batch) {
  std::size_t n = cfg.threads;
  if (n == 0) {
    if (const char* env = std::getenv("TOKENPOSE_THREADS")) n = std::strtoul(env, nullptr, 10);
  }
  if (n == 0) n = std::thread::hardware_concurrency();
  if (n == 0) n = 1;
  return std::min(n, batch);
}

struct PreparedSample {
  Tensor<float> input;
  HeatmapSet<float> target;
  std::vector<int> visibility;
  Affine input_to_orig;
  std::vector<double> gt_in_x, gt_in_y;  // keypoints in input coords
};

PreparedSample prepare_sample(Dataset& ds, std::size_t index, const ModelConfig& mcfg,
                              double sigma, bool flip, Rng* flip_rng,
                              const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  const PoseSample& s = ds.samples[index];
  CropResult crop = crop_to_input(s, ds.image(index), mcfg);
  if (flip && flip_rng && flip_rng->uniform() < 0.5)
    flip_horizontal(crop.input, crop.kx, pairs, crop.ky, crop.v);

  PreparedSample out;
  out.input = image_to_tensor<float>(crop.input);
  out.input_to_orig = crop.input_to_orig;
  out.gt_in_x = crop.kx;
  out.gt_in_y = crop.ky;

  std::size_t n = crop.kx.size();
  double sx = static_cast<double>(mcfg.heatmap_w) / static_cast<double>(mcfg.input_w);
  double sy = static_cast<double>(mcfg.heatmap_h) / static_cast<double>(mcfg.input_h);
  std::vector<float> maps(n * mcfg.heatmap_h * mcfg.heatmap_w, 0.0f);
  out.visibility.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (crop.v[i] <= 0) continue;
    double hx = crop.kx[i] * sx;
    double hy = crop.ky[i] * sy;
    if (hx < 0.0 || hy < 0.0 || hx > static_cast<double>(mcfg.heatmap_w - 1) ||
        hy > static_cast<double>(mcfg.heatmap_h - 1))
      continue;  // target off the map: mask this keypoint
    out.visibility[i] = crop.v[i];
    Tensor<float> g = gaussian_target<float>(hx, hy, sigma, mcfg.heatmap_h, mcfg.heatmap_w);
    std::copy(g.values().begin(), g.values().end(),
              maps.begin() + i * mcfg.heatmap_h * mcfg.heatmap_w);
  }
  out.target.maps =
      Tensor<float>::from({n, mcfg.heatmap_h, mcfg.heatmap_w}, std::move(maps));
  return out;
}

}  // namespace

Checkpoint make_checkpoint(const TokenPoseModel<float>& model, const AdamState<float>* opt,
                           std::uint64_t step, const std::string& config_json) {
  Checkpoint ckpt;
  auto params = model.named_params();
  for (const auto& [name, t] : params) ckpt.add(name, to_dims(t.shape()), t.values());
  if (opt) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      ckpt.add("opt/m/" + params[i].first, to_dims(params[i].second.shape()), opt->m[i]);
      ckpt.add("opt/v/" + params[i].first, to_dims(params[i].second.shape()), opt->v[i]);
    }
  }
  ckpt.add("opt/step", {1}, {static_cast<float>(step)});
  ckpt.add_string("meta/config_json", config_json);
  return ckpt;
}

void load_checkpoint_into(const Checkpoint& ckpt, TokenPoseModel<float>& model,
                          AdamState<float>* opt, std::uint64_t* step) {
  auto params = model.named_params();
  for (auto& [name, t] : params) {
    const Checkpoint::Entry& e = ckpt.require(name);
    if (e.data.size() != t.numel())
      throw IncompatibleCheckpoint("entry \"" + name + "\" has " +
                                   std::to_string(e.data.size()) + " values, expected " +
                                   std::to_string(t.numel()));
    std::copy(e.data.begin(), e.data.end(), t.mutable_values().begin());
  }
  if (opt) {
    std::vector<Tensor<float>> tensors;
    for (auto& [name, t] : params) tensors.push_back(t);
    opt->init(tensors);
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto* m = ckpt.find("opt/m/" + params[i].first);
      const auto* v = ckpt.find("opt/v/" + params[i].first);
      if (m && v && m->data.size() == opt->m[i].size() && v->data.size() == opt->v[i].size()) {
        opt->m[i] = m->data;
        opt->v[i] = v->data;
      }
    }
    opt->step = static_cast<std::uint64_t>(ckpt.require("opt/step").data[0]);
  }
  if (step) *step = static_cast<std::uint64_t>(ckpt.require("opt/step").data[0]);
}

TokenPoseModel<float> model_from_checkpoint(const Checkpoint& ckpt, RunConfig* cfg_out) {
  RunConfig cfg = RunConfig::from_json_string(ckpt.get_string("meta/config_json"));
  TokenPoseModel<float> model = TokenPoseModel<float>::init(cfg.train.model, 0);
  load_checkpoint_into(ckpt, model, nullptr, nullptr);
  if (cfg_out) *cfg_out = cfg;
  return model;
}

EvalReport evaluate_model(const TokenPoseModel<float>& model, Dataset& ds,
                          const EvalConfig& eval) {
  NoGrad no_grad;
  if (ds.size() == 0) throw EmptyEvalSet("evaluate_model on empty dataset");
  DecodeMode mode = eval.decode == "argmax" ? DecodeMode::argmax : DecodeMode::subpixel;
  const ModelConfig& mcfg = model.cfg;

  std::vector<EvalInstance> instances;
  double err_in_sum = 0.0, err_orig_sum = 0.0;
  std::size_t err_n = 0;
  bool all_head_sizes = true;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const PoseSample& s = ds.samples[i];
    CropResult crop = crop_to_input(s, ds.image(i), mcfg);
    auto fwd = model.forward(image_to_tensor<float>(crop.input));
    DecodedPose pose = decode(fwd.heatmaps, mode, mcfg.input_h, mcfg.input_w);

    EvalInstance inst;
    inst.image_id = s.id;
    inst.gt_x = s.kx;
    inst.gt_y = s.ky;
    inst.visibility = s.v;
    inst.scale = s.scale();
    inst.k = ds.oks_k;
    inst.head_size = s.head_size;
    if (s.head_size <= 0.0) all_head_sizes = false;
    for (std::size_t j = 0; j < pose.x.size(); ++j) {
      auto [ox, oy] = crop.input_to_orig.apply(pose.x[j], pose.y[j]);
      inst.pred_x.push_back(ox);
      inst.pred_y.push_back(oy);
      inst.pred_score.push_back(pose.score[j]);
      if (s.v[j] > 0) {
        err_in_sum += std::hypot(pose.x[j] - crop.kx[j], pose.y[j] - crop.ky[j]);
        err_orig_sum += std::hypot(ox - s.kx[j], oy - s.ky[j]);
        ++err_n;
      }
    }
    instances.push_back(std::move(inst));
  }

  EvalReport report;
  report.instances = instances.size();
  report.ap = average_precision(instances);
  if (all_head_sizes) {
    report.pckh = pckh(instances, eval.pckh_alpha);
    report.has_pckh = true;
    report.pckh_table = format_pckh_table(report.pckh, ds.joint_names);
  }
  report.mean_px_error_input = err_n ? err_in_sum / static_cast<double>(err_n) : 0.0;
  report.mean_px_error_orig = err_n ? err_orig_sum / static_cast<double>(err_n) : 0.0;
  return report;
}

std::string EvalReport::to_json(int indent) const {
  json j;
  j["instances"] = instances;
  j["ap"] = {{"ap", ap.ap},
             {"ap50", ap.ap50},
             {"ap75", ap.ap75},
             {"ar", ap.ar},
             {"thresholds", ap.thresholds},
             {"per_threshold_ap", ap.per_threshold_ap}};
  if (has_pckh) {
    j["pckh"] = {{"mean", pckh.mean}, {"per_joint", pckh.per_joint}};
  }
  j["mean_px_error_input"] = mean_px_error_input;
  j["mean_px_error_orig"] = mean_px_error_orig;
  return j.dump(indent);
}

std::string infer_to_json(const TokenPoseModel<float>& model, Dataset& ds,
                          const EvalConfig& eval) {
  NoGrad no_grad;
  DecodeMode mode = eval.decode == "argmax" ? DecodeMode::argmax : DecodeMode::subpixel;
  json results = json::array();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const PoseSample& s = ds.samples[i];
    CropResult crop = crop_to_input(s, ds.image(i), model.cfg);
    auto fwd = model.forward(image_to_tensor<float>(crop.input));
    DecodedPose pose = decode(fwd.heatmaps, mode, model.cfg.input_h, model.cfg.input_w);
    json kp = json::array();
    double score_sum = 0.0;
    for (std::size_t j = 0; j < pose.x.size(); ++j) {
      auto [ox, oy] = crop.input_to_orig.apply(pose.x[j], pose.y[j]);
      kp.push_back(ox);
      kp.push_back(oy);
      kp.push_back(pose.score[j]);
      score_sum += pose.score[j];
    }
    results.push_back({{"image_id", s.id},
                       {"keypoints", kp},
                       {"score", score_sum / static_cast<double>(pose.x.size())}});
  }
  return results.dump(2);
}

std::string generate_dataset(const RunConfig& cfg, const std::string& out_dir) {
  SkeletonTemplate tpl = SkeletonTemplate::by_name(cfg.data.skeleton);
  auto samples = generate_synthetic(cfg.data.seed, cfg.data.count, tpl, cfg.data);
  save_dataset(samples, tpl, out_dir);
  json summary = {{"out_dir", out_dir},
                  {"annotations", (fs::path(out_dir) / "annotations.json").string()},
                  {"count", samples.size()},
                  {"skeleton", tpl.name},
                  {"joints", tpl.size()}};
  return summary.dump(2);
}

TrainResult train(const RunConfig& cfg, const std::string& out_dir) {
  cfg.validate();
  const TrainConfig& tc = cfg.train;
  const ModelConfig& mcfg = tc.model;
  if (tc.train_annotations.empty())
    throw InvalidArgument("train.train_annotations must point at a dataset");
  fs::create_directories(out_dir);

  Dataset train_ds = load_annotations(tc.train_annotations);
  if (train_ds.size() == 0) throw InvalidArgument("training dataset is empty");
  std::optional<Dataset> val_ds;
  if (!tc.val_annotations.empty()) val_ds = load_annotations(tc.val_annotations);

  TokenPoseModel<float> model = TokenPoseModel<float>::init(mcfg, tc.seed);
  auto named = model.named_params();
  std::vector<Tensor<float>> params;
  for (auto& [name, t] : named) params.push_back(t);
  AdamState<float> opt;
  opt.init(params);

  std::uint64_t step = 0;
  if (!tc.resume.empty()) {
    Checkpoint ckpt = Checkpoint::load(tc.resume);
    load_checkpoint_into(ckpt, model, &opt, &step);
    std::cerr << "[tokenpose] resumed from " << tc.resume << " at step " << step << "\n";
  }

  std::size_t n = train_ds.size();
  std::size_t steps_per_epoch = (n + tc.batch_size - 1) / tc.batch_size;
  std::size_t workers = worker_count(tc, tc.batch_size);

  // preload images so worker threads never touch the lazy loader
  for (std::size_t i = 0; i < n; ++i) train_ds.image(i);

  std::string config_json = cfg.to_json_string();
  std::ofstream log_out(fs::path(out_dir) / "train_log.jsonl",
                        step == 0 ? std::ios::trunc : std::ios::app);

  TrainResult result;
  std::size_t start_epoch = static_cast<std::size_t>(step) / steps_per_epoch;
  bool stop = tc.max_steps > 0 && step >= tc.max_steps;
  for (std::size_t epoch = start_epoch; epoch < tc.epochs && !stop; ++epoch) {
    double lr = lr_at(epoch, tc);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(mix_seed(tc.seed, epoch, 0x0bde7));
    shuffle_rng.shuffle(order.begin(), order.end());

    double epoch_loss = 0.0;
    std::size_t epoch_steps = 0;
    std::size_t batch_start = (static_cast<std::size_t>(step) % steps_per_epoch) * tc.batch_size;
    for (std::size_t b = batch_start; b < n && !stop; b += tc.batch_size) {
      std::size_t batch = std::min(tc.batch_size, n - b);
      std::vector<double> losses(batch, 0.0);
      std::vector<GradMap<float>> sinks(batch);

      auto run_slot = [&](std::size_t slot) {
        std::size_t idx = order[b + slot];
        Rng sample_rng(mix_seed(tc.seed, step, slot));
        PreparedSample ps =
            prepare_sample(train_ds, idx, mcfg, tc.sigma, tc.flip_augment, &sample_rng,
                           train_ds.flip_pairs);
        ForwardOpts fwd_opts;
        fwd_opts.training = true;
        fwd_opts.dropout = tc.dropout;
        fwd_opts.rng = &sample_rng;
        auto fwd = model.forward(ps.input, fwd_opts);
        Tensor<float> loss = mse_loss(fwd.heatmaps, ps.target, ps.visibility);
        losses[slot] = static_cast<double>(loss.item());
        Tensor<float> scaled = scale(loss, 1.0f / static_cast<float>(batch));
        backward(scaled, &sinks[slot]);
      };

      if (workers <= 1) {
        for (std::size_t slot = 0; slot < batch; ++slot) run_slot(slot);
      } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w)
          pool.emplace_back([&, w] {
            for (std::size_t slot = w; slot < batch; slot += workers) run_slot(slot);
          });
        for (auto& t : pool) t.join();
      }

      // fixed-order reduction keeps training bitwise reproducible
      std::vector<std::vector<float>> grads(params.size());
      for (std::size_t p = 0; p < params.size(); ++p)
        grads[p].assign(params[p].numel(), 0.0f);
      for (std::size_t slot = 0; slot < batch; ++slot)
        for (std::size_t p = 0; p < params.size(); ++p) {
          auto it = sinks[slot].find(params[p].node());
          if (it == sinks[slot].end()) continue;
          for (std::size_t j = 0; j < grads[p].size(); ++j) grads[p][j] += it->second[j];
        }
      std::vector<const std::vector<float>*> grad_ptrs;
      for (auto& g : grads) grad_ptrs.push_back(&g);
      adam_step(params, grad_ptrs, opt, lr, tc.adam_beta1, tc.adam_beta2, tc.adam_eps);

      double batch_loss = std::accumulate(losses.begin(), losses.end(), 0.0) /
                          static_cast<double>(batch);
      epoch_loss += batch_loss;
      ++epoch_steps;
      ++step;
      if (tc.max_steps > 0 && step >= tc.max_steps) stop = true;
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = epoch_steps ? epoch_loss / static_cast<double>(epoch_steps) : 0.0;
    if (val_ds && tc.eval_every > 0 && ((epoch + 1) % tc.eval_every == 0 || stop)) {
      EvalReport rep = evaluate_model(model, *val_ds, cfg.eval);
      if (rep.has_pckh) rec.val_pckh = rep.pckh.mean;
      rec.val_ap = rep.ap.ap;
      rec.val_px_error = rep.mean_px_error_orig;
    }
    result.log.push_back(rec);

    json line = {{"epoch", rec.epoch}, {"lr", rec.lr}, {"train_loss", rec.train_loss}};
    if (rec.val_pckh) line["val_pckh"] = *rec.val_pckh;
    if (rec.val_ap) line["val_ap"] = *rec.val_ap;
    if (rec.val_px_error) line["val_px_error"] = *rec.val_px_error;
    log_out << line.dump() << "\n";
    log_out.flush();

    if (tc.checkpoint_every > 0 && (epoch + 1) % tc.checkpoint_every == 0 && !stop) {
      Checkpoint ckpt = make_checkpoint(model, &opt, step, config_json);
      ckpt.save((fs::path(out_dir) / ("checkpoint_epoch" + std::to_string(epoch + 1) + ".tkpz"))
                    .string());
    }
  }

  result.steps = static_cast<std::size_t>(step);
  result.checkpoint_path = (fs::path(out_dir) / "checkpoint_final.tkpz").string();
  Checkpoint final_ckpt = make_checkpoint(model, &opt, step, config_json);
  final_ckpt.save(result.checkpoint_path);
  return result;
}

}  // namespace tokenpose
