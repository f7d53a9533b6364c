#include "tokenpose/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "tokenpose/errors.hpp"

namespace tokenpose {

double EvalInstance::confidence() const {
  if (pred_score.empty()) return 0.0;
  double acc = 0.0;
  for (double s : pred_score) acc += s;
  return acc / static_cast<double>(pred_score.size());
}

namespace {

double oks_impl(const std::vector<double>& px, const std::vector<double>& py,
                const EvalInstance& gt) {
  if (gt.scale <= 0.0) throw InvalidArgument("oks requires object scale > 0");
  if (gt.k.size() != gt.gt_x.size())
    throw InvalidArgument("oks: per-keypoint constants do not match keypoint count");
  double num = 0.0;
  std::size_t visible = 0;
  for (std::size_t i = 0; i < gt.gt_x.size(); ++i) {
    if (gt.visibility[i] <= 0) continue;
    if (gt.k[i] <= 0.0) throw InvalidArgument("oks: k_i must be > 0");
    ++visible;
    double dx = px[i] - gt.gt_x[i];
    double dy = py[i] - gt.gt_y[i];
    double denom = 2.0 * gt.scale * gt.scale * gt.k[i] * gt.k[i];
    num += std::exp(-(dx * dx + dy * dy) / denom);
  }
  if (visible == 0) throw NoVisibleKeypoints("oks: instance has no visible keypoints");
  return num / static_cast<double>(visible);
}

}  // namespace

double oks(const EvalInstance& inst) { return oks_impl(inst.pred_x, inst.pred_y, inst); }

double oks_pair(const EvalInstance& pred_from, const EvalInstance& gt_from) {
  return oks_impl(pred_from.pred_x, pred_from.pred_y, gt_from);
}

std::vector<double> default_oks_thresholds() {
  std::vector<double> t;
  for (int i = 0; i < 10; ++i) t.push_back(0.50 + 0.05 * i);
  return t;
}

namespace {

struct Detection {
  double confidence;
  std::size_t image;    // index into image list
  std::size_t in_image; // instance index within the image
};

// 101-point interpolated AP from per-detection TP flags sorted by confidence.
double interpolate_ap(const std::vector<int>& tp_sorted, std::size_t n_gt) {
  if (n_gt == 0) return 0.0;
  std::vector<double> precision, recall;
  std::size_t tp = 0, fp = 0;
  for (int flag : tp_sorted) {
    if (flag)
      ++tp;
    else
      ++fp;
    precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(n_gt));
  }
  // precision envelope: max precision at recall >= r
  for (std::size_t i = precision.size(); i-- > 1;)
    precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double acc = 0.0;
  std::size_t j = 0;
  for (int r = 0; r <= 100; ++r) {
    double target = static_cast<double>(r) / 100.0;
    while (j < recall.size() && recall[j] < target) ++j;
    if (j < precision.size()) acc += precision[j];
  }
  return acc / 101.0;
}

}  // namespace

ApSummary average_precision(const std::vector<EvalInstance>& instances,
                            const std::vector<double>& thresholds) {
  if (instances.empty()) throw EmptyEvalSet("average_precision on empty instance list");
  if (thresholds.empty()) throw InvalidArgument("average_precision needs thresholds");

  // group by image id, preserving first-seen order
  std::vector<std::string> image_ids;
  std::vector<std::vector<const EvalInstance*>> images;
  {
    std::map<std::string, std::size_t> index;
    for (const auto& inst : instances) {
      auto it = index.find(inst.image_id);
      if (it == index.end()) {
        index.emplace(inst.image_id, images.size());
        image_ids.push_back(inst.image_id);
        images.emplace_back();
        it = index.find(inst.image_id);
      }
      images[it->second].push_back(&inst);
    }
  }

  std::size_t n_gt = 0;
  for (const auto& img : images)
    for (const auto* inst : img)
      if (std::any_of(inst->visibility.begin(), inst->visibility.end(),
                      [](int v) { return v > 0; }))
        ++n_gt;

  // all detections ranked by confidence (ties: insertion order)
  std::vector<Detection> dets;
  for (std::size_t ii = 0; ii < images.size(); ++ii)
    for (std::size_t jj = 0; jj < images[ii].size(); ++jj)
      dets.push_back({images[ii][jj]->confidence(), ii, jj});
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });

  ApSummary summary;
  summary.thresholds = thresholds;
  for (double t : thresholds) {
    std::vector<std::vector<int>> gt_used(images.size());
    for (std::size_t i = 0; i < images.size(); ++i) gt_used[i].assign(images[i].size(), 0);
    std::vector<int> tp_flags;
    std::size_t tp_count = 0;
    for (const auto& det : dets) {
      const EvalInstance* pred = images[det.image][det.in_image];
      // best eligible unmatched ground truth in this image
      double best = -1.0;
      std::size_t best_gt = 0;
      bool found = false;
      for (std::size_t g = 0; g < images[det.image].size(); ++g) {
        if (gt_used[det.image][g]) continue;
        const EvalInstance* gt = images[det.image][g];
        if (std::none_of(gt->visibility.begin(), gt->visibility.end(),
                         [](int v) { return v > 0; }))
          continue;
        double score = oks_pair(*pred, *gt);
        if (score >= t && score > best) {
          best = score;
          best_gt = g;
          found = true;
        }
      }
      if (found) {
        gt_used[det.image][best_gt] = 1;
        tp_flags.push_back(1);
        ++tp_count;
      } else {
        tp_flags.push_back(0);
      }
    }
    summary.per_threshold_ap.push_back(interpolate_ap(tp_flags, n_gt));
    summary.per_threshold_recall.push_back(
        n_gt == 0 ? 0.0 : static_cast<double>(tp_count) / static_cast<double>(n_gt));
  }

  summary.ap = std::accumulate(summary.per_threshold_ap.begin(), summary.per_threshold_ap.end(), 0.0) /
               static_cast<double>(summary.per_threshold_ap.size());
  summary.ar = std::accumulate(summary.per_threshold_recall.begin(),
                               summary.per_threshold_recall.end(), 0.0) /
               static_cast<double>(summary.per_threshold_recall.size());
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    if (std::fabs(thresholds[i] - 0.50) < 1e-12) summary.ap50 = summary.per_threshold_ap[i];
    if (std::fabs(thresholds[i] - 0.75) < 1e-12) summary.ap75 = summary.per_threshold_ap[i];
  }
  return summary;
}

PckhResult pckh(const std::vector<EvalInstance>& instances, double alpha) {
  if (instances.empty()) throw EmptyEvalSet("pckh on empty instance list");
  std::size_t n = instances[0].gt_x.size();
  PckhResult result;
  result.per_joint.assign(n, 0.0);
  result.per_joint_n.assign(n, 0);
  std::vector<std::size_t> correct(n, 0);
  for (const auto& inst : instances) {
    if (inst.head_size <= 0.0)
      throw MissingHeadSize("pckh requires head_size for every instance");
    for (std::size_t j = 0; j < n; ++j) {
      if (inst.visibility[j] <= 0) continue;  // unlabeled joints do not count
      ++result.per_joint_n[j];
      double dx = inst.pred_x[j] - inst.gt_x[j];
      double dy = inst.pred_y[j] - inst.gt_y[j];
      if (std::sqrt(dx * dx + dy * dy) <= alpha * inst.head_size) ++correct[j];
    }
  }
  std::size_t total = 0, total_correct = 0;
  for (std::size_t j = 0; j < n; ++j) {
    total += result.per_joint_n[j];
    total_correct += correct[j];
    result.per_joint[j] = result.per_joint_n[j] == 0
                              ? 0.0
                              : 100.0 * static_cast<double>(correct[j]) /
                                    static_cast<double>(result.per_joint_n[j]);
  }
  result.mean =
      total == 0 ? 0.0 : 100.0 * static_cast<double>(total_correct) / static_cast<double>(total);
  return result;
}

namespace {

std::string joint_group(const std::string& name) {
  auto has = [&](const char* s) { return name.find(s) != std::string::npos; };
  if (has("nose") || has("eye") || has("ear") || has("head")) return "Hea";
  if (has("shoulder") || has("neck") || has("chest")) return "Sho";
  if (has("elbow")) return "Elb";
  if (has("wrist") || has("hand")) return "Wri";
  if (has("hip") || has("pelvis")) return "Hip";
  if (has("knee")) return "Kne";
  if (has("ankle") || has("foot")) return "Ank";
  return name.size() > 3 ? name.substr(0, 3) : name;
}

}  // namespace

std::string format_pckh_table(const PckhResult& result, const std::vector<std::string>& joint_names) {
  static const char* order[] = {"Hea", "Sho", "Elb", "Wri", "Hip", "Kne", "Ank"};
  std::map<std::string, std::pair<double, std::size_t>> groups;  // weighted sums
  std::vector<std::string> extra_order;
  for (std::size_t j = 0; j < result.per_joint.size(); ++j) {
    std::string g = j < joint_names.size() ? joint_group(joint_names[j]) : std::to_string(j);
    auto [it, inserted] = groups.try_emplace(g, std::make_pair(0.0, std::size_t(0)));
    if (inserted && std::find(std::begin(order), std::end(order), g) == std::end(order))
      extra_order.push_back(g);
    it->second.first += result.per_joint[j] * static_cast<double>(result.per_joint_n[j]);
    it->second.second += result.per_joint_n[j];
  }
  std::vector<std::string> columns;
  for (const char* g : order)
    if (groups.count(g)) columns.push_back(g);
  for (const auto& g : extra_order) columns.push_back(g);

  std::ostringstream head, vals;
  for (const auto& c : columns) {
    head << c << "\t";
    const auto& [sum, count] = groups[c];
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.1f", count == 0 ? 0.0 : sum / static_cast<double>(count));
    vals << buf << "\t";
  }
  head << "Mean";
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.1f", result.mean);
  vals << buf;
  return head.str() + "\n" + vals.str() + "\n";
}

const std::vector<double>& coco17_oks_k() {
  // k_i = 2 * sigma_i with the COCO keypoint sigmas, in COCO keypoint order.
  static const std::vector<double> k = {0.052, 0.050, 0.050, 0.070, 0.070, 0.158,
                                        0.158, 0.144, 0.144, 0.124, 0.124, 0.214,
                                        0.214, 0.174, 0.174, 0.178, 0.178};
  return k;
}

double default_oks_k() { return 0.1; }

}  // namespace tokenpose
