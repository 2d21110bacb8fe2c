#pragma once

// Detection metrics: mAP@0.5 and the object-level attack metrics ASR / TDR / RmAP.

#include "bforge/attack.hpp"
#include "bforge/dataset.hpp"
#include "bforge/detector.hpp"

#include <optional>
#include <string>
#include <vector>

namespace bforge {

inline constexpr double kEvalIou = 0.5;

/// Per-class AP with all-point interpolation, averaged over classes present in the ground truth.
double map50(const std::vector<std::vector<Detection>>& detections, const std::vector<GroundTruthSet>& gts,
             double iou_thr = kEvalIou);

/// Some detection of `target_class` overlaps the object at IoU >= iou_thr.
bool rma_success(const std::vector<Detection>& dets, const Box& object, int target_class, double iou_thr = kEvalIou);

/// No detection of the object's own class overlaps it at IoU >= iou_thr.
bool oda_success(const std::vector<Detection>& dets, const Box& object, int original_class, double iou_thr = kEvalIou);

/// A detection of the object's own class overlaps it at IoU >= iou_thr.
bool true_detection(const std::vector<Detection>& dets, const Box& object, int original_class,
                    double iou_thr = kEvalIou);

struct MetricsReport {
  AttackMode mode = AttackMode::kRMA;
  double asr = 0.0;
  std::optional<double> tdr;
  double rmap = 0.0;
  double map50_clean = 0.0;
  double pre_mitigation_map = 0.0;
  std::size_t stamped_objects = 0;
  std::size_t clean_images = 0;
};

struct EvalSettings {
  double tau = 0.25;
  double nms_iou = 0.5;
  int rma_target_class = 0;
};

template <typename Scalar>
std::vector<Detection> detect(const DetectorParams<Scalar>& params, const Image& x, const EvalSettings& cfg) {
  return postprocess(forward(params, ImageT<Scalar>(x.template cast<Scalar>())), cfg.tau, cfg.nms_iou);
}

template <typename Scalar>
double clean_map(const DetectorParams<Scalar>& params, const Dataset& clean, const EvalSettings& cfg) {
  std::vector<std::vector<Detection>> dets;
  std::vector<GroundTruthSet> gts;
  for (const auto& s : clean) {
    dets.push_back(detect(params, s.image, cfg));
    gts.push_back(s.gt);
  }
  return map50(dets, gts);
}

/// Attack metrics over the stamped objects of a triggered set: {asr, tdr}.
template <typename Scalar>
std::pair<double, double> attack_rates(const DetectorParams<Scalar>& params,
                                       const std::vector<TriggeredSample>& triggered, AttackMode mode,
                                       const EvalSettings& cfg) {
  std::size_t hits = 0, true_hits = 0;
  for (const auto& t : triggered) {
    const auto dets = detect(params, t.sample.image, cfg);
    const auto obj = static_cast<std::size_t>(t.stamped_object);
    const Box& box = t.sample.gt.boxes[obj];
    const int label = t.sample.gt.labels[obj];
    const bool success = mode == AttackMode::kRMA ? rma_success(dets, box, cfg.rma_target_class)
                                                  : oda_success(dets, box, label);
    hits += success ? 1 : 0;
    true_hits += true_detection(dets, box, label) ? 1 : 0;
  }
  const double n = triggered.empty() ? 1.0 : static_cast<double>(triggered.size());
  return {static_cast<double>(hits) / n, static_cast<double>(true_hits) / n};
}

template <typename Scalar>
MetricsReport evaluate(const DetectorParams<Scalar>& params, const Dataset& clean_test,
                       const std::vector<TriggeredSample>& triggered_test, double pre_mitigation_map, AttackMode mode,
                       const EvalSettings& cfg) {
  if (!(pre_mitigation_map > 0.0)) throw InvalidReference("pre-mitigation mAP must be positive");
  MetricsReport r;
  r.mode = mode;
  r.map50_clean = clean_map(params, clean_test, cfg);
  r.pre_mitigation_map = pre_mitigation_map;
  r.rmap = r.map50_clean / pre_mitigation_map;
  const auto [asr, tdr] = attack_rates(params, triggered_test, mode, cfg);
  r.asr = asr;
  if (mode == AttackMode::kRMA) r.tdr = tdr;
  r.stamped_objects = triggered_test.size();
  r.clean_images = clean_test.size();
  return r;
}

}  // namespace bforge
