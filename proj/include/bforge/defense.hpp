#pragma once

// Adversarial fine-tuning defence: target selection, the recovery/suppression loss, the full
// objective and the alternating PGD / parameter-update loop.

#include "bforge/advgen.hpp"
#include "bforge/dataset.hpp"
#include "bforge/detector.hpp"
#include "bforge/error.hpp"
#include "bforge/margin.hpp"
#include "bforge/train.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace bforge {

enum class Selection { kRS, kFWS };
enum class AdvSource { kOriginal, kUpdated };

inline std::string to_string(Selection s) { return s == Selection::kRS ? "rs" : "fws"; }
inline std::string to_string(AdvSource s) { return s == AdvSource::kOriginal ? "original" : "updated"; }

inline Selection selection_from_string(const std::string& s) {
  if (s == "rs") return Selection::kRS;
  if (s == "fws") return Selection::kFWS;
  throw InvalidConfig("unknown selection '" + s + "'");
}

inline AdvSource adv_source_from_string(const std::string& s) {
  if (s == "original") return AdvSource::kOriginal;
  if (s == "updated") return AdvSource::kUpdated;
  throw InvalidConfig("unknown adversarial source '" + s + "'");
}

struct DefenseConfig {
  double lambda = 0.1;
  SurrogateConfig surrogate;
  PerturbationSpec perturbation;
  Selection selection = Selection::kFWS;
  bool use_def_loss = true;
  bool freeze_backbone = true;
  AdvSource adv_source = AdvSource::kOriginal;
  double fws_iou = 0.6;
  int epochs = 30;
  int batch_size = 16;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double grad_clip = 5.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(lambda >= 0.0)) throw InvalidConfig("lambda must be non-negative");
    if (!(fws_iou > 0.0 && fws_iou < 1.0)) throw InvalidConfig("fws_iou must lie in (0,1)");
    if (epochs < 0) throw InvalidConfig("epochs must be non-negative");
    if (batch_size < 1) throw InvalidConfig("batch_size must be positive");
    if (!(learning_rate > 0.0)) throw InvalidConfig("learning_rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidConfig("momentum must lie in [0,1)");
    if (!(weight_decay >= 0.0)) throw InvalidConfig("weight_decay must be non-negative");
    if (!(grad_clip >= 0.0)) throw InvalidConfig("grad_clip must be non-negative");
    surrogate.validate();
    perturbation.validate();
  }
};

struct SelectionOutcome {
  std::optional<int> i_star;
  std::vector<double> weights;  // one per object
  bool fallback = false;        // FWS fell back to uniform selection
};

namespace detail {

// Uniform double in [0,1) from the top 53 bits; identical on every platform.
inline double unit_draw(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline int draw_index(const std::vector<double>& weights, std::mt19937_64& rng) {
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  const double u = unit_draw(rng) * total;
  double acc = 0.0;
  int last = -1;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] <= 0.0) continue;
    acc += weights[i];
    last = static_cast<int>(i);
    if (u < acc) return last;
  }
  return last;
}

}  // namespace detail

/// Uniform choice of the target object.
inline SelectionOutcome select_target_rs(const GroundTruthSet& gt, std::mt19937_64& rng) {
  SelectionOutcome out;
  if (gt.empty()) return out;
  out.weights.assign(gt.size(), 1.0 / static_cast<double>(gt.size()));
  out.i_star = detail::draw_index(out.weights, rng);
  return out;
}

/// Selection weights over objects from clean detections: an object is a candidate when a
/// correct-class detection overlaps it at IoU > iou_thr and no wrong-class detection does;
/// its weight is proportional to that detection's confidence. All-zero when none qualifies.
inline std::vector<double> fws_weights(const std::vector<Detection>& dets, const GroundTruthSet& gt, double iou_thr) {
  std::vector<double> w(gt.size(), 0.0);
  for (std::size_t i = 0; i < gt.size(); ++i) {
    double conf = 0.0;
    bool confused = false;
    for (const auto& d : dets) {
      if (iou(d.box, gt.boxes[i]) <= iou_thr) continue;
      if (d.class_id == gt.labels[i])
        conf = std::max(conf, d.score);
      else
        confused = true;
    }
    if (!confused) w[i] = conf;
  }
  const double total = std::accumulate(w.begin(), w.end(), 0.0);
  if (total > 0.0)
    for (auto& v : w) v /= total;
  return w;
}

/// Confidence-weighted selection on the clean image, falling back to uniform selection.
template <typename Scalar>
SelectionOutcome select_target_fws(const DetectorParams<Scalar>& params, const std::type_identity_t<ImageT<Scalar>>& x,
                                   const GroundTruthSet& gt, const DefenseConfig& cfg, std::mt19937_64& rng) {
  if (gt.empty()) return {};
  const auto dets = postprocess(forward(params, x), cfg.surrogate.tau);
  auto w = fws_weights(dets, gt, cfg.fws_iou);
  if (std::accumulate(w.begin(), w.end(), 0.0) <= 0.0) {
    auto out = select_target_rs(gt, rng);
    out.fallback = true;
    return out;
  }
  SelectionOutcome out;
  out.i_star = detail::draw_index(w, rng);
  out.weights = std::move(w);
  return out;
}

/// Mean over J of l_rec + l_sup for the target class. Empty J contributes 0.
template <typename Scalar>
Scalar defense_loss(const PredictionSet<Scalar>& preds, const std::vector<Index>& j_set, int label,
                    const SurrogateConfig& cfg, PredictionGrad<Scalar>* grad = nullptr, Scalar weight = Scalar(1)) {
  if (j_set.empty()) return Scalar(0);
  const Scalar w = Scalar(1) / static_cast<Scalar>(j_set.size());
  Scalar total(0);
  for (Index j : j_set) {
    const VecX<Scalar> s = preds.scores.col(j);
    DefenseBranchGrad<Scalar> dg;
    const auto d = defense_branch_losses(s, label, cfg, grad ? &dg : nullptr);
    total += w * (d.rec + d.sup);
    if (grad) accumulate_score_grad(preds, j, VecX<Scalar>(dg.d_rec + dg.d_sup), weight * w, *grad);
  }
  return total;
}

template <typename Scalar>
struct FullLoss {
  Scalar od_clean{0};
  Scalar od_adv{0};
  Scalar def{0};  // unweighted mean L_DEF over J
  Scalar total{0};
};

/// L_OD(x) + L_OD(x') + lambda * mean_J L_DEF(x'). With use_def_loss off the last term is dropped.
/// Parameter gradients, scaled by `weight`, are added to `grads` when given.
template <typename Scalar>
FullLoss<Scalar> full_loss(const DetectorParams<Scalar>& params, const std::type_identity_t<ImageT<Scalar>>& x,
                           const std::type_identity_t<ImageT<Scalar>>& x_prime, const GroundTruthSet& gt,
                           const std::vector<Index>& j_set, int i_star, const DefenseConfig& cfg,
                           std::type_identity_t<ParamGrads<Scalar>>* grads = nullptr, Scalar weight = Scalar(1)) {
  const auto pi = assign_by_center(gt);
  FullLoss<Scalar> out;
  {
    ForwardCache<Scalar> cache;
    const auto preds = forward(params, x, grads ? &cache : nullptr);
    auto g = PredictionGrad<Scalar>::zeros_like(preds);
    out.od_clean = detection_loss(preds, gt, pi, grads ? &g : nullptr, weight).total();
    if (grads) backward(params, cache, g, grads, nullptr);
  }
  {
    ForwardCache<Scalar> cache;
    const auto preds = forward(params, x_prime, grads ? &cache : nullptr);
    auto g = PredictionGrad<Scalar>::zeros_like(preds);
    out.od_adv = detection_loss(preds, gt, pi, grads ? &g : nullptr, weight).total();
    const Scalar lambda = static_cast<Scalar>(cfg.lambda);
    if (cfg.use_def_loss && !j_set.empty()) {
      const int label = gt.labels[static_cast<std::size_t>(i_star)];
      out.def = defense_loss(preds, j_set, label, cfg.surrogate, grads ? &g : nullptr, weight * lambda);
    }
    if (grads) backward(params, cache, g, grads, nullptr);
  }
  out.total = out.od_clean + out.od_adv + (cfg.use_def_loss ? static_cast<Scalar>(cfg.lambda) * out.def : Scalar(0));
  return out;
}

struct MitigationEpoch {
  int epoch = 0;
  double od_clean = 0.0;
  double od_adv = 0.0;
  double def = 0.0;
  double gate_rma = std::numeric_limits<double>::quiet_NaN();  // mean g_rma over matched predictions (SBM)
  std::size_t used = 0;
  std::size_t skipped = 0;
};

namespace detail {

template <typename Scalar, typename SampleStep>
DetectorParams<Scalar> defense_loop(DetectorParams<Scalar> params, const Dataset& subset, const DefenseConfig& cfg,
                                    SampleStep&& sample_step,
                                    const std::function<void(const MitigationEpoch&)>& on_epoch) {
  cfg.validate();
  if (subset.empty()) throw TrainingError("clean subset is empty");
  SgdMomentum<Scalar> opt(params, cfg.momentum, cfg.weight_decay, cfg.grad_clip);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(subset.size());
  std::iota(order.begin(), order.end(), 0);
  const DetectorParams<Scalar> original = params;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    MitigationEpoch stats;
    stats.epoch = epoch;
    double gate_sum = 0.0;
    std::size_t gate_n = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      auto grads = ParamGrads<Scalar>::zeros_like(params);
      std::size_t used = 0;
      for (std::size_t k = start; k < end; ++k) {
        const auto r = sample_step(params, original, subset[order[k]], rng, grads);
        if (!r) {
          ++stats.skipped;
          continue;
        }
        ++used;
        const auto& [loss, gates] = *r;
        if (!std::isfinite(static_cast<double>(loss.total)))
          throw TrainingError("non-finite mitigation loss at epoch " + std::to_string(epoch));
        stats.od_clean += static_cast<double>(loss.od_clean);
        stats.od_adv += static_cast<double>(loss.od_adv);
        stats.def += static_cast<double>(loss.def);
        for (const auto& g : gates) {
          gate_sum += static_cast<double>(g.g_rma);
          ++gate_n;
        }
      }
      if (used == 0) {
        std::clog << "warning: epoch " << epoch << ": every sample in a batch was skipped\n";
        continue;
      }
      grads *= Scalar(1) / static_cast<Scalar>(used);
      opt.step(params, grads, cfg.learning_rate, cfg.freeze_backbone);
      stats.used += used;
    }
    if (stats.used > 0) {
      const double n = static_cast<double>(stats.used);
      stats.od_clean /= n;
      stats.od_adv /= n;
      stats.def /= n;
    }
    if (gate_n > 0) stats.gate_rma = gate_sum / static_cast<double>(gate_n);
    if (on_epoch) on_epoch(stats);
  }
  return params;
}

}  // namespace detail

/// Alternates target selection + PGD (inner) with one SGD step on L_FULL per batch (outer).
template <typename Scalar>
DetectorParams<Scalar> mitigate(const DetectorParams<Scalar>& theta_bd, const Dataset& clean_subset,
                                const DefenseConfig& cfg, const std::function<void(const MitigationEpoch&)>& on_epoch = {}) {
  using Result = std::optional<std::pair<FullLoss<Scalar>, std::vector<GatePair<Scalar>>>>;
  auto step = [&](const DetectorParams<Scalar>& theta, const DetectorParams<Scalar>& original, const Sample& s,
                  std::mt19937_64& rng, ParamGrads<Scalar>& grads) -> Result {
    const auto& source = cfg.adv_source == AdvSource::kOriginal ? original : theta;
    const ImageT<Scalar> x = s.image.template cast<Scalar>();
    const auto sel = cfg.selection == Selection::kRS ? select_target_rs(s.gt, rng)
                                                     : select_target_fws(source, x, s.gt, cfg, rng);
    if (!sel.i_star) return std::nullopt;
    const auto adv = pgd(source, x, s.gt, *sel.i_star, cfg.perturbation, cfg.surrogate);
    if (!adv) return std::nullopt;
    auto loss = full_loss(theta, x, adv->x_prime, s.gt, adv->j_set, *sel.i_star, cfg, &grads);
    return std::make_pair(loss, adv->branch_gates);
  };
  return detail::defense_loop(theta_bd, clean_subset, cfg, step, on_epoch);
}

/// Plain fine-tuning on L_OD(x) with the same loop, selection and optimizer settings.
template <typename Scalar>
DetectorParams<Scalar> ft_baseline(const DetectorParams<Scalar>& theta_bd, const Dataset& clean_subset,
                                   const DefenseConfig& cfg,
                                   const std::function<void(const MitigationEpoch&)>& on_epoch = {}) {
  using Result = std::optional<std::pair<FullLoss<Scalar>, std::vector<GatePair<Scalar>>>>;
  auto step = [&](const DetectorParams<Scalar>& theta, const DetectorParams<Scalar>&, const Sample& s,
                  std::mt19937_64&, ParamGrads<Scalar>& grads) -> Result {
    FullLoss<Scalar> loss;
    loss.od_clean = sample_detection_loss(theta, s, Scalar(1), &grads);
    loss.total = loss.od_clean;
    return std::make_pair(loss, std::vector<GatePair<Scalar>>{});
  };
  return detail::defense_loop(theta_bd, clean_subset, cfg, step, on_epoch);
}

}  // namespace bforge
