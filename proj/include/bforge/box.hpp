#pragma once

#include "bforge/types.hpp"

#include <algorithm>
#include <array>

namespace bforge {

/// Axis-aligned box (x1, y1, x2, y2) in pixel units.
template <typename Scalar>
struct BoxT {
  Scalar x1{0};
  Scalar y1{0};
  Scalar x2{0};
  Scalar y2{0};

  Scalar width() const { return x2 - x1; }
  Scalar height() const { return y2 - y1; }
  Scalar area() const { return std::max(width(), Scalar(0)) * std::max(height(), Scalar(0)); }
  Scalar center_x() const { return (x1 + x2) / Scalar(2); }
  Scalar center_y() const { return (y1 + y2) / Scalar(2); }
  bool valid() const { return x1 < x2 && y1 < y2; }
  bool contains(Scalar x, Scalar y) const { return x >= x1 && x < x2 && y >= y1 && y < y2; }

  template <typename Other>
  BoxT<Other> cast() const {
    return {static_cast<Other>(x1), static_cast<Other>(y1), static_cast<Other>(x2), static_cast<Other>(y2)};
  }

  friend bool operator==(const BoxT&, const BoxT&) = default;
};

using Box = BoxT<double>;

template <typename Scalar>
Scalar iou(const BoxT<Scalar>& a, const BoxT<Scalar>& b) {
  const Scalar iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const Scalar ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= Scalar(0) || ih <= Scalar(0)) return Scalar(0);
  const Scalar inter = iw * ih;
  const Scalar uni = a.area() + b.area() - inter;
  return uni > Scalar(0) ? inter / uni : Scalar(0);
}

/// IoU together with its derivative with respect to the four coordinates of `pred`.
/// The gradient is zero when the boxes are disjoint.
template <typename Scalar>
Scalar iou_with_grad(const BoxT<Scalar>& pred, const BoxT<Scalar>& gt, std::array<Scalar, 4>& grad) {
  grad.fill(Scalar(0));
  const Scalar ix1 = std::max(pred.x1, gt.x1);
  const Scalar ix2 = std::min(pred.x2, gt.x2);
  const Scalar iy1 = std::max(pred.y1, gt.y1);
  const Scalar iy2 = std::min(pred.y2, gt.y2);
  const Scalar iw = ix2 - ix1;
  const Scalar ih = iy2 - iy1;
  if (iw <= Scalar(0) || ih <= Scalar(0)) return Scalar(0);

  const Scalar pw = pred.x2 - pred.x1;
  const Scalar ph = pred.y2 - pred.y1;
  const Scalar inter = iw * ih;
  const Scalar uni = pw * ph + gt.area() - inter;

  // dI/d(x1, y1, x2, y2) for the prediction
  const std::array<Scalar, 4> d_inter{pred.x1 > gt.x1 ? -ih : Scalar(0), pred.y1 > gt.y1 ? -iw : Scalar(0),
                                      pred.x2 < gt.x2 ? ih : Scalar(0), pred.y2 < gt.y2 ? iw : Scalar(0)};
  const std::array<Scalar, 4> d_area{-ph, -pw, ph, pw};
  for (int k = 0; k < 4; ++k) {
    const Scalar d_union = d_area[k] - d_inter[k];
    grad[k] = (d_inter[k] * uni - inter * d_union) / (uni * uni);
  }
  return inter / uni;
}

}  // namespace bforge
