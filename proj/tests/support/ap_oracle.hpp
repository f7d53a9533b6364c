#ifndef TOKENPOSE_TESTS_AP_ORACLE_HPP
#define TOKENPOSE_TESTS_AP_ORACLE_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "tokenpose/metrics.hpp"
#include "tokenpose/rng.hpp"

// Brute-force average-precision oracle: enumerates every injective
// prediction-to-GT assignment per image, picks the one preferred by the
// confidence-ordered lexicographic criterion, and integrates precision over
// the 101 recall points by direct scan. Kept independent of the library's
// greedy matcher and envelope interpolation.

namespace tokenpose::testing {

struct OracleAp {
  double ap = 0.0;
  std::vector<double> per_threshold;
};

inline OracleAp brute_force_ap(const std::vector<EvalInstance>& instances,
                               const std::vector<double>& thresholds) {
  std::vector<std::string> ids;
  std::vector<std::vector<const EvalInstance*>> images;
  for (const auto& inst : instances) {
    auto it = std::find(ids.begin(), ids.end(), inst.image_id);
    if (it == ids.end()) {
      ids.push_back(inst.image_id);
      images.emplace_back();
      it = ids.end() - 1;
    }
    images[static_cast<std::size_t>(it - ids.begin())].push_back(&inst);
  }

  std::size_t n_gt = 0;
  for (auto& img : images)
    for (auto* inst : img)
      if (std::any_of(inst->visibility.begin(), inst->visibility.end(),
                      [](int v) { return v > 0; }))
        ++n_gt;

  struct Det {
    double conf;
    std::size_t image, in_image;
  };
  std::vector<Det> dets;
  for (std::size_t i = 0; i < images.size(); ++i)
    for (std::size_t j = 0; j < images[i].size(); ++j)
      dets.push_back({images[i][j]->confidence(), i, j});
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Det& a, const Det& b) { return a.conf > b.conf; });

  OracleAp oracle;
  for (double t : thresholds) {
    std::map<std::pair<std::size_t, std::size_t>, bool> tp;
    for (std::size_t img = 0; img < images.size(); ++img) {
      std::vector<std::size_t> det_order;
      for (const auto& d : dets)
        if (d.image == img) det_order.push_back(d.in_image);
      std::size_t G = images[img].size();

      std::vector<int> best_assign;
      std::vector<std::pair<double, int>> best_sig;
      std::vector<int> assign(det_order.size(), -1);
      std::vector<char> used(G, 0);
      std::vector<std::pair<double, int>> sig(det_order.size(), {-1.0, 0});

      std::function<void(std::size_t)> recurse = [&](std::size_t di) {
        if (di == det_order.size()) {
          if (best_assign.empty() || sig > best_sig) {
            best_assign = assign;
            best_sig = sig;
          }
          return;
        }
        const EvalInstance* pred = images[img][det_order[di]];
        assign[di] = -1;
        sig[di] = {-1.0, 0};
        recurse(di + 1);
        for (std::size_t g = 0; g < G; ++g) {
          if (used[g]) continue;
          const EvalInstance* gt = images[img][g];
          if (std::none_of(gt->visibility.begin(), gt->visibility.end(),
                           [](int v) { return v > 0; }))
            continue;
          double score = oks_pair(*pred, *gt);
          if (score < t) continue;
          used[g] = 1;
          assign[di] = static_cast<int>(g);
          sig[di] = {score, -static_cast<int>(g)};
          recurse(di + 1);
          used[g] = 0;
        }
        assign[di] = -1;
        sig[di] = {-1.0, 0};
      };
      recurse(0);

      for (std::size_t di = 0; di < det_order.size(); ++di)
        tp[{img, det_order[di]}] = !best_assign.empty() && best_assign[di] >= 0;
    }

    std::vector<double> precision, recall;
    std::size_t tps = 0, fps = 0;
    for (const auto& d : dets) {
      tp[{d.image, d.in_image}] ? ++tps : ++fps;
      precision.push_back(static_cast<double>(tps) / static_cast<double>(tps + fps));
      recall.push_back(n_gt ? static_cast<double>(tps) / static_cast<double>(n_gt) : 0.0);
    }
    double acc = 0.0;
    for (int r = 0; r <= 100; ++r) {
      double target = static_cast<double>(r) / 100.0;
      double best = 0.0;
      for (std::size_t i = 0; i < precision.size(); ++i)
        if (recall[i] >= target) best = std::max(best, precision[i]);
      acc += best;
    }
    oracle.per_threshold.push_back(n_gt ? acc / 101.0 : 0.0);
  }
  double sum = 0.0;
  for (double v : oracle.per_threshold) sum += v;
  oracle.ap = sum / static_cast<double>(oracle.per_threshold.size());
  return oracle;
}

// random micro-set generator shared by the unit and acceptance suites
inline std::vector<EvalInstance> random_micro_set(Rng& rng) {
  std::vector<EvalInstance> set;
  std::size_t n_images = 1 + rng.index(3);
  for (std::size_t img = 0; img < n_images; ++img) {
    std::size_t n_inst = 1 + rng.index(4);
    for (std::size_t i = 0; i < n_inst; ++i) {
      EvalInstance inst;
      inst.image_id = "img" + std::to_string(img);
      for (int jn = 0; jn < 3; ++jn) {
        double x = rng.uniform(0, 60), y = rng.uniform(0, 60);
        inst.gt_x.push_back(x);
        inst.gt_y.push_back(y);
        double mag = rng.uniform(0.0, 12.0);
        inst.pred_x.push_back(x + rng.uniform(-mag, mag));
        inst.pred_y.push_back(y + rng.uniform(-mag, mag));
        inst.visibility.push_back(rng.uniform() < 0.15 ? 0 : 2);
      }
      if (std::none_of(inst.visibility.begin(), inst.visibility.end(),
                       [](int v) { return v > 0; }))
        inst.visibility[0] = 2;
      inst.pred_score.assign(3, rng.uniform(0.1, 1.0));
      inst.scale = rng.uniform(10, 40);
      inst.k.assign(3, 0.15);
      set.push_back(inst);
    }
  }
  return set;
}

}  // namespace tokenpose::testing

#endif
