#pragma once

// Object-localized adversarial examples: box masks, the CLM/FLM/SBM objectives over the
// target-matched set, and sign-gradient PGD inside an l-inf ball.

#include "bforge/dataset.hpp"
#include "bforge/detector.hpp"
#include "bforge/error.hpp"
#include "bforge/gate.hpp"
#include "bforge/margin.hpp"

#include <cassert>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

namespace bforge {

enum class Objective { kCLM, kSBM, kFLM };

inline std::string to_string(Objective o) {
  switch (o) {
    case Objective::kCLM:
      return "clm";
    case Objective::kSBM:
      return "sbm";
    default:
      return "flm";
  }
}

inline Objective objective_from_string(const std::string& s) {
  if (s == "clm") return Objective::kCLM;
  if (s == "sbm") return Objective::kSBM;
  if (s == "flm") return Objective::kFLM;
  throw InvalidConfig("unknown objective '" + s + "'");
}

/// Whether PGD ascends (CLM, FLM) or descends (SBM) the objective.
inline bool maximizes(Objective o) { return o != Objective::kSBM; }

struct PerturbationSpec {
  double epsilon = 8.0 / 255.0;
  int steps = 30;
  double step_size = 2.0 / 255.0;
  Objective objective = Objective::kSBM;

  void validate() const {
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw InvalidConfig("epsilon must lie in [0,1]");
    if (steps < 0) throw InvalidConfig("steps must be non-negative");
    if (!(step_size > 0.0)) throw InvalidConfig("step_size must be positive");
  }
  /// True when a single step can overshoot the ball; callers may warn.
  bool step_exceeds_epsilon() const { return step_size > epsilon; }
};

/// Matching threshold used for J_{i*}.
inline constexpr double kMatchIou = 0.5;

template <typename Scalar>
struct AdvExample {
  ImageT<Scalar> x_prime;
  ImageT<Scalar> delta;
  std::vector<Index> j_set;
  std::vector<GatePair<Scalar>> branch_gates;  // SBM only, one per entry of j_set
  bool used_fallback = false;
};

/// 1 inside the integer-rounded box (half-open), 0 elsewhere; broadcast over channels.
template <typename Scalar = float>
ImageT<Scalar> box_mask(const Box& b) {
  const int x1 = static_cast<int>(std::lround(b.x1));
  const int y1 = static_cast<int>(std::lround(b.y1));
  const int x2 = static_cast<int>(std::lround(b.x2));
  const int y2 = static_cast<int>(std::lround(b.y2));
  if (x1 < 0 || y1 < 0 || x2 > kImageSize || y2 > kImageSize) throw InvalidInput("mask box leaves the image");
  if (x2 <= x1 || y2 <= y1) throw InvalidInput("mask box is empty");
  ImageT<Scalar> m = ImageT<Scalar>::Zero(kChannels, static_cast<Index>(kImageSize) * kImageSize);
  for (int y = y1; y < y2; ++y)
    for (int x = x1; x < x2; ++x) m.col(pixel_index(x, y)).setOnes();
  return m;
}

// ---------------------------------------------------------------------------
// Objectives on a fixed matched set.

/// Mean over J of the per-prediction class loss against `label`.
template <typename Scalar>
Scalar clm_value(const PredictionSet<Scalar>& preds, const std::vector<Index>& j_set, int label,
                 PredictionGrad<Scalar>* grad = nullptr) {
  if (j_set.empty()) throw InvalidInput("empty matched set");
  const Scalar w = Scalar(1) / static_cast<Scalar>(j_set.size());
  Scalar total(0);
  for (Index j : j_set) total += prediction_cls_loss(preds, j, label, grad, w);
  return total * w;
}

/// Mean over J of (1 - IoU) plus the per-prediction class loss.
template <typename Scalar>
Scalar flm_value(const PredictionSet<Scalar>& preds, const std::vector<Index>& j_set, const Box& target, int label,
                 PredictionGrad<Scalar>* grad = nullptr) {
  Scalar total = clm_value(preds, j_set, label, grad);
  const Scalar w = Scalar(1) / static_cast<Scalar>(j_set.size());
  const auto t = target.template cast<Scalar>();
  for (Index j : j_set) {
    std::array<Scalar, 4> d_iou{};
    total += w * (Scalar(1) - iou_with_grad(preds.boxes[static_cast<std::size_t>(j)], t, d_iou));
    if (grad) {
      std::array<Scalar, 4> d_box{};
      for (int k = 0; k < 4; ++k) d_box[k] = -w * d_iou[k];
      accumulate_box_grad(preds, j, d_box, *grad);
    }
  }
  return total;
}

/// Mean over J of the gated attack loss. Gates are recomputed from the live branch losses
/// and differentiated through.
template <typename Scalar>
Scalar sbm_value(const PredictionSet<Scalar>& preds, const std::vector<Index>& j_set, int label,
                 const SurrogateConfig& cfg, PredictionGrad<Scalar>* grad = nullptr,
                 std::vector<GatePair<Scalar>>* gates = nullptr) {
  if (j_set.empty()) throw InvalidInput("empty matched set");
  const Scalar w = Scalar(1) / static_cast<Scalar>(j_set.size());
  if (gates) gates->clear();
  Scalar total(0);
  for (Index j : j_set) {
    const VecX<Scalar> s = preds.scores.col(j);
    AttackBranchGrad<Scalar> bg;
    const auto br = attack_branch_losses(s, label, cfg, grad ? &bg : nullptr);
    const BranchLosses<Scalar> bl{br.rma, br.oda, br.con};
    AdvLossGrad<Scalar> ag;
    total += w * adv_loss(bl, grad ? &ag : nullptr);
    if (gates) gates->push_back(soft_gate(bl.a, bl.b));
    if (grad) {
      const VecX<Scalar> d_s = ag.d_a * bg.d_rma + ag.d_b * bg.d_oda + ag.d_c * bg.d_con;
      accumulate_score_grad(preds, j, d_s, w, *grad);
    }
  }
  return total;
}

/// Objective `o` on a fixed matched set.
template <typename Scalar>
Scalar objective_value(Objective o, const PredictionSet<Scalar>& preds, const std::vector<Index>& j_set,
                       const GroundTruthSet& gt, int i_star, const SurrogateConfig& cfg,
                       PredictionGrad<Scalar>* grad = nullptr, std::vector<GatePair<Scalar>>* gates = nullptr) {
  const int label = gt.labels[static_cast<std::size_t>(i_star)];
  switch (o) {
    case Objective::kCLM:
      return clm_value(preds, j_set, label, grad);
    case Objective::kFLM:
      return flm_value(preds, j_set, gt.boxes[static_cast<std::size_t>(i_star)], label, grad);
    default:
      return sbm_value(preds, j_set, label, cfg, grad, gates);
  }
}

// ---------------------------------------------------------------------------
// Detector-level objectives.

template <typename Scalar>
struct ObjectiveEval {
  Scalar value{0};
  std::vector<Index> j_set;
  std::vector<GatePair<Scalar>> gates;
  bool used_fallback = false;
};

/// J_{i*} on `preds`, falling back to `clean_j` when empty. nullopt when both are empty.
template <typename Scalar>
std::optional<std::pair<std::vector<Index>, bool>> resolve_matched_set(const PredictionSet<Scalar>& preds,
                                                                       const GroundTruthSet& gt, int i_star,
                                                                       const std::vector<Index>& clean_j) {
  auto j = target_matched_set(match(preds, gt, kMatchIou), i_star);
  if (!j.empty()) return std::make_pair(std::move(j), false);
  if (!clean_j.empty()) return std::make_pair(clean_j, true);
  return std::nullopt;
}

/// Evaluates the objective on x' with matching recomputed on x'. `d_input`, when given,
/// receives the gradient with respect to x'.
template <typename Scalar>
std::optional<ObjectiveEval<Scalar>> evaluate_objective(const DetectorParams<Scalar>& params,
                                                        const std::type_identity_t<ImageT<Scalar>>& x_prime,
                                                        const GroundTruthSet& gt, int i_star, Objective o,
                                                        const SurrogateConfig& cfg, const std::vector<Index>& clean_j,
                                                        std::type_identity_t<ImageT<Scalar>>* d_input = nullptr) {
  ForwardCache<Scalar> cache;
  const auto preds = forward(params, x_prime, d_input ? &cache : nullptr);
  auto resolved = resolve_matched_set(preds, gt, i_star, clean_j);
  if (!resolved) return std::nullopt;
  ObjectiveEval<Scalar> out;
  out.j_set = std::move(resolved->first);
  out.used_fallback = resolved->second;
  auto g = PredictionGrad<Scalar>::zeros_like(preds);
  out.value = objective_value(o, preds, out.j_set, gt, i_star, cfg, d_input ? &g : nullptr,
                              o == Objective::kSBM ? &out.gates : nullptr);
  if (d_input) backward(params, cache, g, nullptr, d_input);
  return out;
}

template <typename Scalar>
Scalar clm_objective(const DetectorParams<Scalar>& params, const std::type_identity_t<ImageT<Scalar>>& x_prime,
                     const GroundTruthSet& gt, int i_star, const std::vector<Index>& clean_j = {}) {
  const auto e = evaluate_objective(params, x_prime, gt, i_star, Objective::kCLM, SurrogateConfig{}, clean_j);
  if (!e) throw InvalidInput("no prediction matches the target object");
  return e->value;
}

template <typename Scalar>
Scalar flm_objective(const DetectorParams<Scalar>& params, const std::type_identity_t<ImageT<Scalar>>& x_prime,
                     const GroundTruthSet& gt, int i_star, const std::vector<Index>& clean_j = {}) {
  const auto e = evaluate_objective(params, x_prime, gt, i_star, Objective::kFLM, SurrogateConfig{}, clean_j);
  if (!e) throw InvalidInput("no prediction matches the target object");
  return e->value;
}

template <typename Scalar>
Scalar sbm_objective(const DetectorParams<Scalar>& params, const std::type_identity_t<ImageT<Scalar>>& x_prime,
                     const GroundTruthSet& gt, int i_star, const SurrogateConfig& cfg,
                     const std::vector<Index>& clean_j = {}) {
  const auto e = evaluate_objective(params, x_prime, gt, i_star, Objective::kSBM, cfg, clean_j);
  if (!e) throw InvalidInput("no prediction matches the target object");
  return e->value;
}

// ---------------------------------------------------------------------------
// PGD.

/// Sign-gradient PGD core. `grad_fn(x_prime)` returns the objective gradient at x_prime, or
/// nullopt to abort. Returns the final delta (x' - x), or nullopt when grad_fn aborted.
template <typename Scalar, typename GradFn>
std::optional<ImageT<Scalar>> sign_pgd(const ImageT<Scalar>& x, const ImageT<Scalar>& mask, const PerturbationSpec& spec,
                                       bool ascend, GradFn&& grad_fn) {
  spec.validate();
  const Scalar eps = static_cast<Scalar>(spec.epsilon);
  const Scalar alpha = static_cast<Scalar>(spec.step_size) * (ascend ? Scalar(1) : Scalar(-1));
  ImageT<Scalar> delta = ImageT<Scalar>::Zero(x.rows(), x.cols());
  for (int k = 0; k < spec.steps; ++k) {
    const ImageT<Scalar> x_prime = x + delta;
    std::optional<ImageT<Scalar>> g = grad_fn(x_prime);
    if (!g) return std::nullopt;
    const ImageT<Scalar> step = g->unaryExpr([](Scalar v) {
      return v > Scalar(0) ? Scalar(1) : (v < Scalar(0) ? Scalar(-1) : Scalar(0));
    });
    delta = (delta + alpha * step).cwiseMax(-eps).cwiseMin(eps).cwiseProduct(mask);
    delta = (x + delta).cwiseMax(Scalar(0)).cwiseMin(Scalar(1)) - x;
    assert(delta.cwiseAbs().maxCoeff() <= eps + Scalar(1e-6));
    assert((delta.array() * (Scalar(1) - mask.array())).abs().maxCoeff() == Scalar(0));
  }
  return delta;
}

/// K-step PGD on object `i_star`, restricted to its box. nullopt means the sample is skipped:
/// no prediction matches the object on the clean image.
template <typename Scalar>
std::optional<AdvExample<Scalar>> pgd(const DetectorParams<Scalar>& params, const std::type_identity_t<ImageT<Scalar>>& x,
                                      const GroundTruthSet& gt, int i_star, const PerturbationSpec& spec,
                                      const SurrogateConfig& cfg) {
  spec.validate();
  if (i_star < 0 || static_cast<std::size_t>(i_star) >= gt.size()) throw InvalidInput("target object index out of range");
  const auto clean_j = target_matched_set(match(forward(params, x), gt, kMatchIou), i_star);
  if (clean_j.empty()) return std::nullopt;

  const ImageT<Scalar> mask = box_mask<Scalar>(gt.boxes[static_cast<std::size_t>(i_star)]);
  auto delta = sign_pgd<Scalar>(x, mask, spec, maximizes(spec.objective),
                                [&](const ImageT<Scalar>& xp) -> std::optional<ImageT<Scalar>> {
                                  ImageT<Scalar> d;
                                  if (!evaluate_objective(params, xp, gt, i_star, spec.objective, cfg, clean_j, &d))
                                    return std::nullopt;
                                  return d;
                                });
  if (!delta) return std::nullopt;

  AdvExample<Scalar> out;
  out.delta = std::move(*delta);
  out.x_prime = x + out.delta;
  const auto e = evaluate_objective(params, out.x_prime, gt, i_star, spec.objective, cfg, clean_j);
  out.j_set = e->j_set;
  out.used_fallback = e->used_fallback;
  out.branch_gates = e->gates;
  return out;
}

}  // namespace bforge
