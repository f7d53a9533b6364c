#ifndef TOKENPOSE_METRICS_HPP
#define TOKENPOSE_METRICS_HPP

#include <string>
#include <vector>

namespace tokenpose {

// One ground-truth pose paired with one predicted pose; AP matching still
// considers every prediction against every ground truth within an image.
struct EvalInstance {
  std::string image_id;
  std::vector<double> gt_x, gt_y;
  std::vector<int> visibility;  // >0 means labeled
  std::vector<double> pred_x, pred_y, pred_score;
  double scale = 0.0;          // s = sqrt(bbox area), pixels
  std::vector<double> k;       // per-keypoint falloff constants
  double head_size = -1.0;     // g, pixels; <=0 when absent

  // detection confidence for ranking: mean of per-keypoint scores
  double confidence() const;
};

// exp-weighted keypoint similarity, exactly
// sum_i exp(-d_i^2 / (2 s^2 k_i^2)) [v_i>0] / sum_i [v_i>0].
double oks(const EvalInstance& inst);

// OKS of an arbitrary (pred, gt) pairing drawn from two instances.
double oks_pair(const EvalInstance& pred_from, const EvalInstance& gt_from);

struct ApSummary {
  double ap = 0.0;    // mean over thresholds
  double ap50 = 0.0;  // threshold 0.50
  double ap75 = 0.0;  // threshold 0.75
  double ar = 0.0;    // mean final recall over thresholds
  std::vector<double> thresholds;
  std::vector<double> per_threshold_ap;
  std::vector<double> per_threshold_recall;
};

std::vector<double> default_oks_thresholds();  // {0.50, 0.55, ..., 0.95}

// COCO-protocol AP: greedy confidence-ordered matching per image, 101-point
// precision-recall interpolation, mean over thresholds.
ApSummary average_precision(const std::vector<EvalInstance>& instances,
                            const std::vector<double>& thresholds = default_oks_thresholds());

struct PckhResult {
  std::vector<double> per_joint;        // percent correct per joint index
  std::vector<std::size_t> per_joint_n;  // labeled joints counted
  double mean = 0.0;                     // percent over all labeled joints
};

// Joint correct iff |pred - gt| <= alpha * g (boundary inclusive).
PckhResult pckh(const std::vector<EvalInstance>& instances, double alpha = 0.5);

// MPII-style aligned text table (Hea/Sho/Elb/Wri/Hip/Kne/Ank/Mean), grouping
// joints by name.
std::string format_pckh_table(const PckhResult& result, const std::vector<std::string>& joint_names);

// The 17 COCO per-keypoint constants (k_i = 2 sigma_i), overridable per dataset.
const std::vector<double>& coco17_oks_k();
double default_oks_k();

}  // namespace tokenpose

#endif
