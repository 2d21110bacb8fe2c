#include "bforge/eval.hpp"

#include <algorithm>
#include <set>

namespace bforge {

namespace {

struct Scored {
  double score;
  std::size_t image;
  const Detection* det;
};

double average_precision(std::vector<int> tp, std::size_t positives) {
  if (positives == 0) return 0.0;
  std::vector<double> recall, precision;
  double tps = 0, fps = 0;
  for (int hit : tp) {
    (hit ? tps : fps) += 1.0;
    recall.push_back(tps / static_cast<double>(positives));
    precision.push_back(tps / (tps + fps));
  }
  // Precision envelope, then sum precision over recall steps.
  for (std::size_t i = precision.size(); i-- > 1;) precision[i - 1] = std::max(precision[i - 1], precision[i]);
  double ap = 0.0, prev_recall = 0.0;
  for (std::size_t i = 0; i < recall.size(); ++i) {
    ap += (recall[i] - prev_recall) * precision[i];
    prev_recall = recall[i];
  }
  return ap;
}

}  // namespace

double map50(const std::vector<std::vector<Detection>>& detections, const std::vector<GroundTruthSet>& gts,
             double iou_thr) {
  if (detections.size() != gts.size()) throw InvalidInput("detections and ground truth cover different images");
  std::set<int> classes;
  for (const auto& g : gts) classes.insert(g.labels.begin(), g.labels.end());
  if (classes.empty()) return 0.0;

  double sum = 0.0;
  for (int cls : classes) {
    std::vector<Scored> pool;
    std::size_t positives = 0;
    std::vector<std::vector<bool>> taken(gts.size());
    for (std::size_t i = 0; i < gts.size(); ++i) {
      taken[i].assign(gts[i].size(), false);
      positives += static_cast<std::size_t>(std::count(gts[i].labels.begin(), gts[i].labels.end(), cls));
      for (const auto& d : detections[i])
        if (d.class_id == cls) pool.push_back({d.score, i, &d});
    }
    std::stable_sort(pool.begin(), pool.end(), [](const Scored& a, const Scored& b) { return a.score > b.score; });
    std::vector<int> tp;
    for (const auto& p : pool) {
      const auto& g = gts[p.image];
      double best = iou_thr;
      int best_k = -1;
      for (std::size_t k = 0; k < g.size(); ++k) {
        if (g.labels[k] != cls || taken[p.image][k]) continue;
        const double v = iou(p.det->box, g.boxes[k]);
        if (v >= best) {
          best = v;
          best_k = static_cast<int>(k);
        }
      }
      if (best_k >= 0) taken[p.image][static_cast<std::size_t>(best_k)] = true;
      tp.push_back(best_k >= 0 ? 1 : 0);
    }
    sum += average_precision(tp, positives);
  }
  return sum / static_cast<double>(classes.size());
}

bool rma_success(const std::vector<Detection>& dets, const Box& object, int target_class, double iou_thr) {
  return std::any_of(dets.begin(), dets.end(),
                     [&](const Detection& d) { return d.class_id == target_class && iou(d.box, object) >= iou_thr; });
}

bool true_detection(const std::vector<Detection>& dets, const Box& object, int original_class, double iou_thr) {
  return std::any_of(dets.begin(), dets.end(),
                     [&](const Detection& d) { return d.class_id == original_class && iou(d.box, object) >= iou_thr; });
}

bool oda_success(const std::vector<Detection>& dets, const Box& object, int original_class, double iou_thr) {
  return !true_detection(dets, object, original_class, iou_thr);
}

}  // namespace bforge
