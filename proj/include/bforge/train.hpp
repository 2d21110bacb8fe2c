#pragma once

// Supervised training harness: mini-batch SGD with momentum on the detection loss.

#include "bforge/dataset.hpp"
#include "bforge/detector.hpp"
#include "bforge/error.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <vector>

namespace bforge {

struct TrainHparams {
  int epochs = 50;
  int batch_size = 16;
  double learning_rate = 0.05;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  // Global gradient-norm clip; 0 disables.
  double grad_clip = 5.0;
  // Loss multiplier for poisoned samples (adversary-controlled training).
  double poison_weight = 1.0;
  // Weight of the extra classification term on the cells of the attacked object
  // (forced-background region for ODA, relabeled object for RMA).
  double poison_focus_weight = 2.0;
  // Random horizontal/vertical flips of each sample.
  bool flip_augment = false;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs < 0) throw InvalidConfig("epochs must be non-negative");
    if (batch_size < 1) throw InvalidConfig("batch_size must be positive");
    if (!(learning_rate > 0.0)) throw InvalidConfig("learning_rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidConfig("momentum must lie in [0,1)");
    if (!(weight_decay >= 0.0)) throw InvalidConfig("weight_decay must be non-negative");
    if (!(poison_weight > 0.0)) throw InvalidConfig("poison_weight must be positive");
    if (!(poison_focus_weight >= 0.0)) throw InvalidConfig("poison_focus_weight must be non-negative");
  }
};

template <typename Scalar>
class SgdMomentum {
 public:
  SgdMomentum(const DetectorParams<Scalar>& params, double momentum, double weight_decay, double grad_clip)
      : velocity_(ParamGrads<Scalar>::zeros_like(params)),
        momentum_(static_cast<Scalar>(momentum)),
        weight_decay_(static_cast<Scalar>(weight_decay)),
        grad_clip_(static_cast<Scalar>(grad_clip)) {}

  /// Applies one update; layers in a frozen group are left bit-identical.
  void step(DetectorParams<Scalar>& params, const ParamGrads<Scalar>& grads, double lr, bool freeze_backbone) {
    Scalar scale(1);
    if (grad_clip_ > Scalar(0)) {
      Scalar sq(0);
      for (std::size_t i = 0; i < grads.weight.size(); ++i) {
        if (freeze_backbone && params.group(i) == ParamGroup::kBackbone) continue;
        sq += grads.weight[i].squaredNorm() + grads.bias[i].squaredNorm();
      }
      const Scalar norm = std::sqrt(sq);
      if (norm > grad_clip_) scale = grad_clip_ / norm;
    }
    const Scalar rate = static_cast<Scalar>(lr);
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
      if (freeze_backbone && params.group(i) == ParamGroup::kBackbone) continue;
      auto& l = params.layers[i];
      velocity_.weight[i] = momentum_ * velocity_.weight[i] + scale * grads.weight[i] + weight_decay_ * l.weight;
      velocity_.bias[i] = momentum_ * velocity_.bias[i] + scale * grads.bias[i];
      l.weight -= rate * velocity_.weight[i];
      l.bias -= rate * velocity_.bias[i];
    }
  }

 private:
  ParamGrads<Scalar> velocity_;
  Scalar momentum_;
  Scalar weight_decay_;
  Scalar grad_clip_;
};

/// Detection loss of one sample under the training assignment, accumulating parameter gradients.
/// Cells of the attacked object (centred in a forced-background region, or owned by the relabeled
/// object) add `focus_weight` times their mean per-prediction classification loss.
template <typename Scalar>
Scalar sample_detection_loss(const DetectorParams<Scalar>& params, const Sample& s, Scalar weight,
                             ParamGrads<Scalar>* grads, Scalar focus_weight = Scalar(0)) {
  ForwardCache<Scalar> cache;
  const ImageT<Scalar> x = s.image.template cast<Scalar>();
  const auto preds = forward(params, x, grads ? &cache : nullptr);
  const auto pi = assign_by_center(s.gt, s.forced_background);
  auto g = PredictionGrad<Scalar>::zeros_like(preds);
  Scalar total = detection_loss(preds, s.gt, pi, grads ? &g : nullptr, weight).total();
  if (focus_weight > Scalar(0)) {
    std::vector<std::pair<Index, int>> cells;  // (cell, target label)
    for (int j = 0; j < kNumCells; ++j) {
      const double cx = (j % kGrid + 0.5) * kStride, cy = (j / kGrid + 0.5) * kStride;
      if (std::any_of(s.forced_background.begin(), s.forced_background.end(),
                      [&](const Box& b) { return b.contains(cx, cy); }))
        cells.emplace_back(j, kBackground);
      else if (s.relabeled_object >= 0 && pi.owner[static_cast<std::size_t>(j)] == s.relabeled_object)
        cells.emplace_back(j, s.gt.labels[static_cast<std::size_t>(s.relabeled_object)]);
    }
    if (!cells.empty()) {
      const Scalar w = focus_weight / static_cast<Scalar>(cells.size());
      for (const auto& [j, label] : cells)
        total += w * prediction_cls_loss(preds, j, label, grads ? &g : nullptr, weight * w);
    }
  }
  if (grads) backward(params, cache, g, grads, nullptr);
  return total;
}

/// Mirrors image, boxes and forced-background regions.
inline Sample flip_sample(const Sample& s, bool horizontal, bool vertical) {
  if (!horizontal && !vertical) return s;
  Sample out = s;
  for (int y = 0; y < kImageSize; ++y)
    for (int x = 0; x < kImageSize; ++x) {
      const int sx = horizontal ? kImageSize - 1 - x : x;
      const int sy = vertical ? kImageSize - 1 - y : y;
      out.image.col(pixel_index(x, y)) = s.image.col(pixel_index(sx, sy));
    }
  const double n = kImageSize;
  auto mirror = [&](Box& b) {
    if (horizontal) b = {n - b.x2, b.y1, n - b.x1, b.y2};
    if (vertical) b = {b.x1, n - b.y2, b.x2, n - b.y1};
  };
  for (auto& b : out.gt.boxes) mirror(b);
  for (auto& b : out.forced_background) mirror(b);
  return out;
}

struct EpochStats {
  int epoch = 0;
  double loss = 0.0;
};

/// Minimizes the mean detection loss. Deterministic given hparams.seed.
template <typename Scalar>
DetectorParams<Scalar> train_detector(DetectorParams<Scalar> params, const Dataset& data, const TrainHparams& hp,
                                      const std::function<void(const EpochStats&)>& on_epoch = {}) {
  hp.validate();
  if (data.empty()) throw TrainingError("cannot train on an empty dataset");
  SgdMomentum<Scalar> opt(params, hp.momentum, hp.weight_decay, hp.grad_clip);
  std::mt19937_64 rng(hp.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < hp.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(hp.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(hp.batch_size));
      auto grads = ParamGrads<Scalar>::zeros_like(params);
      const Scalar w = Scalar(1) / static_cast<Scalar>(end - start);
      double batch_loss = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const Sample& raw = data[order[k]];
        Sample flipped;
        if (hp.flip_augment) {
          std::bernoulli_distribution coin(0.5);
          const bool h = coin(rng), v = coin(rng);
          flipped = flip_sample(raw, h, v);
        }
        const Sample& s = hp.flip_augment ? flipped : raw;
        const Scalar pw = s.poisoned ? static_cast<Scalar>(hp.poison_weight) : Scalar(1);
        batch_loss += static_cast<double>(pw * sample_detection_loss(params, s, w * pw, &grads,
                                                                        static_cast<Scalar>(hp.poison_focus_weight)));
      }
      if (!std::isfinite(batch_loss)) throw TrainingError("non-finite training loss at epoch " + std::to_string(epoch));
      opt.step(params, grads, hp.learning_rate, false);
      epoch_loss += batch_loss;
    }
    if (on_epoch) on_epoch({epoch, epoch_loss / static_cast<double>(data.size())});
  }
  return params;
}

}  // namespace bforge
