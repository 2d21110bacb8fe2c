#pragma once

// A tiny dense detector: three stride-2 convolutions followed by a 1x1 head that
// emits (tx, ty, tw, th, logits...) for every cell of an 8x8 grid. Forward and
// backward passes are written out by hand on top of Eigen GEMMs (im2col).

#include "bforge/box.hpp"
#include "bforge/dataset.hpp"
#include "bforge/error.hpp"
#include "bforge/types.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

namespace bforge {

struct DetectorArch {
  static constexpr int kVersion = 1;
  int num_classes = kDefaultClasses;
  std::array<int, 3> channels{16, 32, 32};
  int kernel = 5;
  // Side length (pixels) of the box predicted by a zero head output.
  double prior_size = 16.0;
  double tau = 0.25;
  // Convolutions [0, backbone_layers) form the backbone group, the rest the head.
  int backbone_layers = 2;

  int head_outputs() const { return 4 + num_classes; }
};

enum class ParamGroup { kBackbone, kHead };

template <typename Scalar>
struct ConvLayer {
  MatX<Scalar> weight;  // out_ch x (in_ch * kernel * kernel)
  VecX<Scalar> bias;
  int in_ch = 0;
  int out_ch = 0;
  int kernel = 1;
  int stride = 1;
  int pad = 0;
  int in_size = 0;
  int out_size = 0;
  bool relu = true;
};

template <typename Scalar>
struct DetectorParams {
  DetectorArch arch;
  std::vector<ConvLayer<Scalar>> layers;

  ParamGroup group(std::size_t layer) const {
    return static_cast<int>(layer) < arch.backbone_layers ? ParamGroup::kBackbone : ParamGroup::kHead;
  }

  std::size_t num_parameters() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  template <typename Other>
  DetectorParams<Other> cast() const {
    DetectorParams<Other> out;
    out.arch = arch;
    for (const auto& l : layers) {
      ConvLayer<Other> c;
      c.weight = l.weight.template cast<Other>();
      c.bias = l.bias.template cast<Other>();
      c.in_ch = l.in_ch;
      c.out_ch = l.out_ch;
      c.kernel = l.kernel;
      c.stride = l.stride;
      c.pad = l.pad;
      c.in_size = l.in_size;
      c.out_size = l.out_size;
      c.relu = l.relu;
      out.layers.push_back(std::move(c));
    }
    return out;
  }
};

/// Lays out the layer shapes for `arch` with zero weights.
template <typename Scalar>
DetectorParams<Scalar> make_detector_shape(const DetectorArch& arch) {
  if (arch.num_classes < 2) throw InvalidConfig("detector needs at least two classes");
  DetectorParams<Scalar> p;
  p.arch = arch;
  int in_ch = kChannels;
  int size = kImageSize;
  for (std::size_t li = 0; li < arch.channels.size(); ++li) {
    const int out_ch = arch.channels[li];
    ConvLayer<Scalar> l;
    l.in_ch = in_ch;
    l.out_ch = out_ch;
    l.kernel = arch.kernel;
    l.stride = 2;
    // The last stage is offset by one pixel so each cell's receptive field is centred on its anchor.
    l.pad = arch.kernel / 2 - (li + 1 == arch.channels.size() ? 1 : 0);
    l.in_size = size;
    l.out_size = size / 2;
    l.weight = MatX<Scalar>::Zero(out_ch, in_ch * arch.kernel * arch.kernel);
    l.bias = VecX<Scalar>::Zero(out_ch);
    p.layers.push_back(std::move(l));
    in_ch = out_ch;
    size /= 2;
  }
  if (size != kGrid) throw InvalidConfig("architecture does not reduce the image to the 8x8 grid");
  ConvLayer<Scalar> head;
  head.in_ch = in_ch;
  head.out_ch = arch.head_outputs();
  head.in_size = size;
  head.out_size = size;
  head.relu = false;
  head.weight = MatX<Scalar>::Zero(head.out_ch, in_ch);
  head.bias = VecX<Scalar>::Zero(head.out_ch);
  p.layers.push_back(std::move(head));
  return p;
}

/// He-normal convolution weights; the class bias starts at a low foreground prior.
template <typename Scalar>
DetectorParams<Scalar> init_detector(const DetectorArch& arch, std::uint64_t seed) {
  auto p = make_detector_shape<Scalar>(arch);
  std::mt19937_64 rng(seed);
  for (std::size_t li = 0; li < p.layers.size(); ++li) {
    auto& l = p.layers[li];
    const double fan_in = static_cast<double>(l.weight.cols());
    const bool is_head = !l.relu;
    std::normal_distribution<double> dist(0.0, is_head ? 0.01 : std::sqrt(2.0 / fan_in));
    for (Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = static_cast<Scalar>(dist(rng));
    if (is_head) {
      const double prior = 0.05;
      for (int c = 0; c < arch.num_classes; ++c) l.bias(4 + c) = static_cast<Scalar>(std::log(prior / (1.0 - prior)));
    }
  }
  return p;
}

template <typename Scalar>
struct ParamGrads {
  std::vector<MatX<Scalar>> weight;
  std::vector<VecX<Scalar>> bias;

  static ParamGrads zeros_like(const DetectorParams<Scalar>& p) {
    ParamGrads g;
    for (const auto& l : p.layers) {
      g.weight.push_back(MatX<Scalar>::Zero(l.weight.rows(), l.weight.cols()));
      g.bias.push_back(VecX<Scalar>::Zero(l.bias.size()));
    }
    return g;
  }

  ParamGrads& operator+=(const ParamGrads& o) {
    for (std::size_t i = 0; i < weight.size(); ++i) {
      weight[i] += o.weight[i];
      bias[i] += o.bias[i];
    }
    return *this;
  }

  ParamGrads& operator*=(Scalar k) {
    for (std::size_t i = 0; i < weight.size(); ++i) {
      weight[i] *= k;
      bias[i] *= k;
    }
    return *this;
  }
};

/// Raw head outputs plus the decoded boxes, logits and sigmoid scores. Column j is prediction j.
template <typename Scalar>
struct PredictionSet {
  MatX<Scalar> raw;  // (4 + C) x cells
  std::vector<BoxT<Scalar>> boxes;
  MatX<Scalar> logits;  // C x cells
  MatX<Scalar> scores;  // C x cells, sigmoid(logits)

  Index size() const { return raw.cols(); }
  Index num_classes() const { return logits.rows(); }
};

/// Gradient of some scalar objective with respect to PredictionSet::raw.
template <typename Scalar>
struct PredictionGrad {
  MatX<Scalar> raw;

  static PredictionGrad zeros_like(const PredictionSet<Scalar>& p) {
    return {MatX<Scalar>::Zero(p.raw.rows(), p.raw.cols())};
  }
};

template <typename Scalar>
struct ForwardCache {
  std::vector<MatX<Scalar>> patches;  // im2col input of every layer
  std::vector<MatX<Scalar>> pre;      // pre-activation of every layer
};

namespace detail {

inline constexpr double kMaxLogScale = 3.0;

template <typename Scalar>
Scalar sigmoid(Scalar z) {
  using std::exp;
  if (z >= Scalar(0)) return Scalar(1) / (Scalar(1) + exp(-z));
  const Scalar e = exp(z);
  return e / (Scalar(1) + e);
}

template <typename Scalar>
MatX<Scalar> im2col(const MatX<Scalar>& in, const ConvLayer<Scalar>& l) {
  if (l.kernel == 1 && l.stride == 1 && l.pad == 0) return in;
  const int k = l.kernel;
  const int n = l.in_size;
  const int m = l.out_size;
  MatX<Scalar> cols = MatX<Scalar>::Zero(static_cast<Index>(l.in_ch) * k * k, static_cast<Index>(m) * m);
  for (int oy = 0; oy < m; ++oy) {
    for (int ox = 0; ox < m; ++ox) {
      const Index col = static_cast<Index>(oy) * m + ox;
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * l.stride + ky - l.pad;
        if (iy < 0 || iy >= n) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * l.stride + kx - l.pad;
          if (ix < 0 || ix >= n) continue;
          const Index src = static_cast<Index>(iy) * n + ix;
          for (int c = 0; c < l.in_ch; ++c) cols((static_cast<Index>(c) * k + ky) * k + kx, col) = in(c, src);
        }
      }
    }
  }
  return cols;
}

template <typename Scalar>
MatX<Scalar> col2im(const MatX<Scalar>& cols, const ConvLayer<Scalar>& l) {
  if (l.kernel == 1 && l.stride == 1 && l.pad == 0) return cols;
  const int k = l.kernel;
  const int n = l.in_size;
  const int m = l.out_size;
  MatX<Scalar> out = MatX<Scalar>::Zero(l.in_ch, static_cast<Index>(n) * n);
  for (int oy = 0; oy < m; ++oy) {
    for (int ox = 0; ox < m; ++ox) {
      const Index col = static_cast<Index>(oy) * m + ox;
      for (int ky = 0; ky < k; ++ky) {
        const int iy = oy * l.stride + ky - l.pad;
        if (iy < 0 || iy >= n) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = ox * l.stride + kx - l.pad;
          if (ix < 0 || ix >= n) continue;
          const Index dst = static_cast<Index>(iy) * n + ix;
          for (int c = 0; c < l.in_ch; ++c) out(c, dst) += cols((static_cast<Index>(c) * k + ky) * k + kx, col);
        }
      }
    }
  }
  return out;
}

}  // namespace detail

/// Cell-anchored box of prediction j for raw parameters (tx, ty, tw, th).
template <typename Scalar>
BoxT<Scalar> decode_box(const DetectorArch& arch, Index cell, Scalar tx, Scalar ty, Scalar tw, Scalar th) {
  using std::exp;
  const Scalar lim = static_cast<Scalar>(detail::kMaxLogScale);
  const Scalar stride = static_cast<Scalar>(kStride);
  const Scalar cx = (static_cast<Scalar>(cell % kGrid) + Scalar(0.5)) * stride + stride * tx;
  const Scalar cy = (static_cast<Scalar>(cell / kGrid) + Scalar(0.5)) * stride + stride * ty;
  const Scalar prior = static_cast<Scalar>(arch.prior_size);
  const Scalar w = prior * exp(std::clamp(tw, -lim, lim));
  const Scalar h = prior * exp(std::clamp(th, -lim, lim));
  return {cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
}

template <typename Scalar>
PredictionSet<Scalar> decode_predictions(const DetectorArch& arch, MatX<Scalar> raw) {
  PredictionSet<Scalar> p;
  const Index cells = raw.cols();
  p.boxes.reserve(static_cast<std::size_t>(cells));
  for (Index j = 0; j < cells; ++j) p.boxes.push_back(decode_box(arch, j, raw(0, j), raw(1, j), raw(2, j), raw(3, j)));
  p.logits = raw.bottomRows(arch.num_classes);
  p.scores = p.logits.unaryExpr([](Scalar z) { return detail::sigmoid(z); });
  p.raw = std::move(raw);
  return p;
}

/// Runs the detector on a 3 x 4096 image. When `cache` is given it receives what backward() needs.
template <typename Scalar>
PredictionSet<Scalar> forward(const DetectorParams<Scalar>& params, const std::type_identity_t<ImageT<Scalar>>& x,
                              std::type_identity_t<ForwardCache<Scalar>>* cache = nullptr) {
  if (x.rows() != kChannels || x.cols() != static_cast<Index>(kImageSize) * kImageSize)
    throw InvalidInput("detector expects a 3 x 64 x 64 image, got " + std::to_string(x.rows()) + " x " +
                       std::to_string(x.cols()));
  if (cache) {
    cache->patches.clear();
    cache->pre.clear();
  }
  MatX<Scalar> act = x;
  for (const auto& l : params.layers) {
    MatX<Scalar> cols = detail::im2col(act, l);
    MatX<Scalar> z = l.weight * cols;
    z.colwise() += l.bias;
    act = l.relu ? MatX<Scalar>(z.cwiseMax(Scalar(0))) : z;
    if (cache) {
      cache->patches.push_back(std::move(cols));
      cache->pre.push_back(std::move(z));
    }
  }
  return decode_predictions(params.arch, std::move(act));
}

/// Back-propagates d(objective)/d(raw head output). Either output may be null.
template <typename Scalar>
void backward(const DetectorParams<Scalar>& params, const ForwardCache<Scalar>& cache,
              const PredictionGrad<Scalar>& d_pred, std::type_identity_t<ParamGrads<Scalar>>* d_params,
              std::type_identity_t<ImageT<Scalar>>* d_input) {
  MatX<Scalar> d_act = d_pred.raw;
  for (std::size_t i = params.layers.size(); i-- > 0;) {
    const auto& l = params.layers[i];
    MatX<Scalar> d_z = l.relu ? MatX<Scalar>(d_act.cwiseProduct(
                                    cache.pre[i].unaryExpr([](Scalar v) { return v > Scalar(0) ? Scalar(1) : Scalar(0); })))
                              : d_act;
    if (d_params) {
      d_params->weight[i].noalias() += d_z * cache.patches[i].transpose();
      d_params->bias[i] += d_z.rowwise().sum();
    }
    if (i == 0 && !d_input) break;
    MatX<Scalar> d_cols = l.weight.transpose() * d_z;
    d_act = detail::col2im(d_cols, l);
  }
  if (d_input) *d_input = d_act;
}

// ---------------------------------------------------------------------------
// Gradient helpers: chain rule from boxes / scores / logits back to raw outputs.

template <typename Scalar>
void accumulate_box_grad(const PredictionSet<Scalar>& p, Index j,
                         const std::array<Scalar, 4>& d_box, PredictionGrad<Scalar>& g) {
  const Scalar stride = static_cast<Scalar>(kStride);
  const Scalar lim = static_cast<Scalar>(detail::kMaxLogScale);
  const auto& b = p.boxes[static_cast<std::size_t>(j)];
  // x1 = cx - w/2, x2 = cx + w/2 with dcx/dtx = stride and dw/dtw = w (inside the clamp).
  g.raw(0, j) += stride * (d_box[0] + d_box[2]);
  g.raw(1, j) += stride * (d_box[1] + d_box[3]);
  const Scalar tw = p.raw(2, j);
  const Scalar th = p.raw(3, j);
  if (tw > -lim && tw < lim) g.raw(2, j) += (b.width() / 2) * (d_box[2] - d_box[0]);
  if (th > -lim && th < lim) g.raw(3, j) += (b.height() / 2) * (d_box[3] - d_box[1]);
}

template <typename Derived, typename Scalar>
void accumulate_score_grad(const PredictionSet<Scalar>& p, Index j, const Eigen::MatrixBase<Derived>& d_scores,
                           Scalar weight, PredictionGrad<Scalar>& g) {
  for (Index c = 0; c < p.num_classes(); ++c) {
    const Scalar s = p.scores(c, j);
    g.raw(4 + c, j) += weight * d_scores(c) * s * (Scalar(1) - s);
  }
}

// ---------------------------------------------------------------------------
// Assignment and matching.

inline constexpr int kBackground = -1;

/// pi(j): object index (0-based) owning prediction j, or kBackground.
struct MatchAssignment {
  std::vector<int> owner;

  std::size_t size() const { return owner.size(); }
  std::size_t num_matched() const {
    return static_cast<std::size_t>(std::count_if(owner.begin(), owner.end(), [](int o) { return o != kBackground; }));
  }
};

/// Assigns each prediction to the ground-truth object of maximal IoU when it exceeds `iou_thr`.
template <typename Scalar>
MatchAssignment match(const PredictionSet<Scalar>& preds, const GroundTruthSet& gt, double iou_thr) {
  if (!(iou_thr > 0.0 && iou_thr < 1.0)) throw InvalidConfig("match IoU threshold must lie in (0,1)");
  MatchAssignment pi{std::vector<int>(preds.boxes.size(), kBackground)};
  for (std::size_t j = 0; j < preds.boxes.size(); ++j) {
    const Box pb = preds.boxes[j].template cast<double>();
    double best = iou_thr;
    for (std::size_t i = 0; i < gt.size(); ++i) {
      const double v = iou(pb, gt.boxes[i]);
      if (v > best) {
        best = v;
        pi.owner[j] = static_cast<int>(i);
      }
    }
  }
  return pi;
}

/// Training-time assignment: a cell belongs to the smallest object whose box contains the cell
/// center. Cells inside a forced-background region stay background.
MatchAssignment assign_by_center(const GroundTruthSet& gt, const std::vector<Box>& forced_background = {});

/// J_{i*}: predictions assigned to object `i_star`.
std::vector<Index> target_matched_set(const MatchAssignment& pi, int i_star);

// ---------------------------------------------------------------------------
// Losses.

template <typename Scalar>
Scalar bce_with_logits(Scalar z, Scalar target) {
  using std::abs;
  using std::exp;
  using std::log1p;
  return std::max(z, Scalar(0)) - z * target + log1p(exp(-abs(z)));
}

template <typename Scalar>
struct DetectionLoss {
  Scalar loc{0};
  Scalar cls{0};
  Scalar total() const { return loc + cls; }
};

/// l_loc: mean (1 - IoU) over matched predictions. l_cls: per-class BCE averaged over every
/// prediction and class (background targets are all-zero). Gradients are accumulated into
/// `grad` scaled by `weight`.
template <typename Scalar>
DetectionLoss<Scalar> detection_loss(const PredictionSet<Scalar>& preds, const GroundTruthSet& gt,
                                     const MatchAssignment& pi, PredictionGrad<Scalar>* grad = nullptr,
                                     Scalar weight = Scalar(1)) {
  const Index cells = preds.size();
  const Index classes = preds.num_classes();
  if (static_cast<Index>(pi.size()) != cells) throw InvalidInput("assignment size does not match predictions");

  DetectionLoss<Scalar> out;
  const Index matched = static_cast<Index>(pi.num_matched());
  const Scalar cls_norm = Scalar(1) / static_cast<Scalar>(cells * classes);
  for (Index j = 0; j < cells; ++j) {
    const int owner = pi.owner[static_cast<std::size_t>(j)];
    const int label = owner == kBackground ? -1 : gt.labels[static_cast<std::size_t>(owner)];
    for (Index c = 0; c < classes; ++c) {
      const Scalar t = c == label ? Scalar(1) : Scalar(0);
      const Scalar z = preds.logits(c, j);
      out.cls += bce_with_logits(z, t) * cls_norm;
      if (grad) grad->raw(4 + c, j) += weight * cls_norm * (preds.scores(c, j) - t);
    }
    if (owner != kBackground) {
      const auto target = gt.boxes[static_cast<std::size_t>(owner)].template cast<Scalar>();
      std::array<Scalar, 4> d_iou{};
      const Scalar v = iou_with_grad(preds.boxes[static_cast<std::size_t>(j)], target, d_iou);
      out.loc += (Scalar(1) - v) / static_cast<Scalar>(matched);
      if (grad) {
        std::array<Scalar, 4> d_box{};
        for (int k = 0; k < 4; ++k) d_box[k] = -weight * d_iou[k] / static_cast<Scalar>(matched);
        accumulate_box_grad(preds, j, d_box, *grad);
      }
    }
  }
  return out;
}

/// Sum over classes of the BCE of prediction j against the one-hot target `label`.
template <typename Scalar>
Scalar prediction_cls_loss(const PredictionSet<Scalar>& preds, Index j, int label,
                           PredictionGrad<Scalar>* grad = nullptr, Scalar weight = Scalar(1)) {
  Scalar loss(0);
  for (Index c = 0; c < preds.num_classes(); ++c) {
    const Scalar t = c == label ? Scalar(1) : Scalar(0);
    loss += bce_with_logits(preds.logits(c, j), t);
    if (grad) grad->raw(4 + c, j) += weight * (preds.scores(c, j) - t);
  }
  return loss;
}

// ---------------------------------------------------------------------------
// Post-processing.

struct Detection {
  Box box;
  int class_id = 0;
  double score = 0.0;
};

/// Class-wise score filter at tau followed by greedy NMS.
template <typename Scalar>
std::vector<Detection> postprocess(const PredictionSet<Scalar>& preds, double tau, double nms_iou = 0.5) {
  if (!(tau > 0.0 && tau < 1.0)) throw InvalidConfig("tau must lie in (0,1)");
  if (!(nms_iou > 0.0 && nms_iou < 1.0)) throw InvalidConfig("NMS IoU must lie in (0,1)");
  std::vector<Detection> kept;
  for (Index c = 0; c < preds.num_classes(); ++c) {
    std::vector<Detection> cand;
    for (Index j = 0; j < preds.size(); ++j) {
      const double s = static_cast<double>(preds.scores(c, j));
      if (s >= tau) cand.push_back({preds.boxes[static_cast<std::size_t>(j)].template cast<double>(), static_cast<int>(c), s});
    }
    std::stable_sort(cand.begin(), cand.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
    std::vector<Detection> cls_kept;
    for (const auto& d : cand) {
      const bool suppressed = std::any_of(cls_kept.begin(), cls_kept.end(),
                                          [&](const Detection& k) { return iou(k.box, d.box) > nms_iou; });
      if (!suppressed) cls_kept.push_back(d);
    }
    kept.insert(kept.end(), cls_kept.begin(), cls_kept.end());
  }
  return kept;
}

}  // namespace bforge
