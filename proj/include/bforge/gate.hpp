#pragma once

// Soft branch gate between the RMA and ODA objectives and the gated per-prediction loss.

#include "bforge/error.hpp"

#include <algorithm>
#include <cmath>

namespace bforge {

template <typename Scalar>
struct GatePair {
  Scalar g_rma{0.5};
  Scalar g_oda{0.5};
};

/// a = L_RMA, b = L_ODA, c = L_CON for one matched prediction.
template <typename Scalar>
struct BranchLosses {
  Scalar a{0};
  Scalar b{0};
  Scalar c{0};
};

template <typename Scalar>
struct AdvLossGrad {
  Scalar d_a{0};
  Scalar d_b{0};
  Scalar d_c{0};
};

/// softmax(-a, -b), shifted by the larger logit.
template <typename Scalar>
GatePair<Scalar> soft_gate(Scalar a, Scalar b) {
  using std::exp;
  using std::isfinite;
  if (!isfinite(a) || !isfinite(b)) throw InvalidInput("soft gate needs finite branch losses");
  const Scalar top = std::max(-a, -b);
  const Scalar ea = exp(-a - top);
  const Scalar eb = exp(-b - top);
  const Scalar z = ea + eb;
  return {ea / z, eb / z};
}

/// g_rma * (a + c) + g_oda * b. The gate sees (a, b) only; gradients flow through the gate.
template <typename Scalar>
Scalar adv_loss(const BranchLosses<Scalar>& bl, AdvLossGrad<Scalar>* grad = nullptr) {
  const auto g = soft_gate(bl.a, bl.b);
  if (grad) {
    // dg_rma/da = -g_rma g_oda, dg_rma/db = +g_rma g_oda
    const Scalar gg = g.g_rma * g.g_oda;
    const Scalar spread = bl.a + bl.c - bl.b;
    grad->d_a = g.g_rma - spread * gg;
    grad->d_b = g.g_oda + spread * gg;
    grad->d_c = g.g_rma;
  }
  return g.g_rma * (bl.a + bl.c) + g.g_oda * bl.b;
}

template <typename Scalar>
struct LseDecomposition {
  Scalar gated{0};
  Scalar lse{0};
  Scalar entropy{0};
};

/// Splits g_rma*a + g_oda*b into the soft minimum -ln(e^-a + e^-b) and the gate entropy.
template <typename Scalar>
LseDecomposition<Scalar> lse_decomposition(Scalar a, Scalar b) {
  using std::abs;
  using std::exp;
  using std::log;
  using std::log1p;
  const auto g = soft_gate(a, b);
  LseDecomposition<Scalar> out;
  out.gated = g.g_rma * a + g.g_oda * b;
  out.lse = std::min(a, b) - log1p(exp(-abs(a - b)));
  auto h = [](Scalar p) { return p > Scalar(0) ? -p * log(p) : Scalar(0); };
  out.entropy = h(g.g_rma) + h(g.g_oda);
  return out;
}

}  // namespace bforge
