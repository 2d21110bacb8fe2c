#pragma once

// Score-threshold algebra for matched predictions: score summaries, the four
// threshold margins, and the softplus surrogates built on them.

#include "bforge/error.hpp"
#include "bforge/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace bforge {

struct SurrogateConfig {
  double tau = 0.25;
  double beta = 1.0;
  double zeta = 1e-8;

  void validate() const {
    if (!(tau > 0.0 && tau < 1.0)) throw InvalidConfig("tau must lie in (0,1), got " + std::to_string(tau));
    if (!(beta > 0.0)) throw InvalidConfig("beta must be positive, got " + std::to_string(beta));
    if (!(zeta > 0.0)) throw InvalidConfig("zeta must be positive, got " + std::to_string(zeta));
  }
};

template <typename Scalar>
struct ScoreSummary {
  Scalar s_gt{0};
  Scalar s_oth{0};
  Scalar s_max{0};
  // Class indices attaining s_oth and s_max (lowest index on ties).
  Index oth_class = 0;
  Index max_class = 0;
};

template <typename Scalar>
struct MarginBundle {
  Scalar m_rma{0};
  Scalar m_oda{0};
  Scalar m_rec{0};
  Scalar m_sup{0};
};

template <typename Scalar>
struct AttackBranchLosses {
  Scalar rma{0};
  Scalar oda{0};
  Scalar con{0};
};

template <typename Scalar>
struct DefenseBranchLosses {
  Scalar rec{0};
  Scalar sup{0};
};

/// Derivatives of the branch losses with respect to the full score vector.
template <typename Scalar>
struct AttackBranchGrad {
  VecX<Scalar> d_rma;
  VecX<Scalar> d_oda;
  VecX<Scalar> d_con;
};

template <typename Scalar>
struct DefenseBranchGrad {
  VecX<Scalar> d_rec;
  VecX<Scalar> d_sup;
};

/// (1/beta) * ln(1 + exp(beta * t)), evaluated as max(t,0) + (1/beta) ln(1 + exp(-beta|t|)).
template <typename Scalar>
Scalar shaped_softplus(Scalar t, Scalar beta) {
  if (!(beta > Scalar(0))) throw InvalidConfig("softplus beta must be positive");
  using std::abs;
  using std::exp;
  using std::log1p;
  return std::max(t, Scalar(0)) + log1p(exp(-beta * abs(t))) / beta;
}

/// d/dt of shaped_softplus: the logistic function at beta * t.
template <typename Scalar>
Scalar shaped_softplus_grad(Scalar t, Scalar beta) {
  using std::exp;
  const Scalar z = beta * t;
  if (z >= Scalar(0)) return Scalar(1) / (Scalar(1) + exp(-z));
  const Scalar e = exp(z);
  return e / (Scalar(1) + e);
}

template <typename Derived>
ScoreSummary<typename Derived::Scalar> summarize_scores(const Eigen::MatrixBase<Derived>& s, Index y) {
  using Scalar = typename Derived::Scalar;
  const Index num_classes = s.size();
  if (num_classes < 2) throw InvalidInput("score summary needs at least two classes");
  if (y < 0 || y >= num_classes) throw InvalidInput("class index " + std::to_string(y) + " out of range");

  ScoreSummary<Scalar> out;
  out.s_gt = s(y);
  out.s_oth = -std::numeric_limits<Scalar>::infinity();
  out.s_max = -std::numeric_limits<Scalar>::infinity();
  for (Index c = 0; c < num_classes; ++c) {
    if (c != y && s(c) > out.s_oth) {
      out.s_oth = s(c);
      out.oth_class = c;
    }
    if (s(c) > out.s_max) {
      out.s_max = s(c);
      out.max_class = c;
    }
  }
  return out;
}

template <typename Scalar>
MarginBundle<Scalar> compute_margins(const ScoreSummary<Scalar>& summary, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) throw InvalidConfig("tau must lie in (0,1)");
  const Scalar t = static_cast<Scalar>(tau);
  return {summary.s_oth - t, t - summary.s_max, summary.s_gt - t, t - summary.s_oth};
}

/// Entropy of the normalized non-target scores: -sum_{c != y} sbar_c ln(sbar_c + zeta).
/// Zero (with zero gradient) when the non-target mass vanishes.
template <typename Derived>
typename Derived::Scalar concentration_loss(const Eigen::MatrixBase<Derived>& s, Index y, double zeta,
                                            VecX<typename Derived::Scalar>* grad = nullptr) {
  using Scalar = typename Derived::Scalar;
  using std::log;
  const Index num_classes = s.size();
  if (grad) grad->setZero(num_classes);

  Scalar mass(0);
  for (Index c = 0; c < num_classes; ++c)
    if (c != y) mass += s(c);
  if (mass < Scalar(1e-12)) return Scalar(0);

  const Scalar z = static_cast<Scalar>(zeta);
  Scalar loss(0);
  // dL/dsbar_c, needed for the quotient-rule pass below.
  VecX<Scalar> d_bar = VecX<Scalar>::Zero(num_classes);
  for (Index c = 0; c < num_classes; ++c) {
    if (c == y) continue;
    const Scalar bar = s(c) / mass;
    loss -= bar * log(bar + z);
    d_bar(c) = -log(bar + z) - bar / (bar + z);
  }
  if (grad) {
    // dsbar_c/ds_k = (delta_ck - sbar_c) / mass
    Scalar weighted(0);
    for (Index c = 0; c < num_classes; ++c)
      if (c != y) weighted += d_bar(c) * (s(c) / mass);
    for (Index k = 0; k < num_classes; ++k)
      if (k != y) (*grad)(k) = (d_bar(k) - weighted) / mass;
  }
  return loss;
}

template <typename Derived>
AttackBranchLosses<typename Derived::Scalar> attack_branch_losses(
    const Eigen::MatrixBase<Derived>& s, Index y, const SurrogateConfig& cfg,
    AttackBranchGrad<typename Derived::Scalar>* grad = nullptr) {
  using Scalar = typename Derived::Scalar;
  const auto summary = summarize_scores(s, y);
  const Scalar tau = static_cast<Scalar>(cfg.tau);
  const Scalar beta = static_cast<Scalar>(cfg.beta);

  AttackBranchLosses<Scalar> out;
  out.rma = shaped_softplus(tau - summary.s_oth, beta);
  out.oda = shaped_softplus(summary.s_max - tau, beta);
  VecX<Scalar>* d_con = nullptr;
  if (grad) {
    grad->d_rma.setZero(s.size());
    grad->d_oda.setZero(s.size());
    grad->d_rma(summary.oth_class) = -shaped_softplus_grad(tau - summary.s_oth, beta);
    grad->d_oda(summary.max_class) = shaped_softplus_grad(summary.s_max - tau, beta);
    d_con = &grad->d_con;
  }
  out.con = concentration_loss(s, y, cfg.zeta, d_con);
  return out;
}

template <typename Scalar>
DefenseBranchLosses<Scalar> defense_branch_losses(const ScoreSummary<Scalar>& summary, const SurrogateConfig& cfg) {
  const Scalar tau = static_cast<Scalar>(cfg.tau);
  const Scalar beta = static_cast<Scalar>(cfg.beta);
  return {shaped_softplus(tau - summary.s_gt, beta), shaped_softplus(summary.s_oth - tau, beta)};
}

/// Score-vector overload that also reports gradients.
template <typename Derived>
DefenseBranchLosses<typename Derived::Scalar> defense_branch_losses(
    const Eigen::MatrixBase<Derived>& s, Index y, const SurrogateConfig& cfg,
    DefenseBranchGrad<typename Derived::Scalar>* grad = nullptr) {
  using Scalar = typename Derived::Scalar;
  const auto summary = summarize_scores(s, y);
  if (grad) {
    const Scalar tau = static_cast<Scalar>(cfg.tau);
    const Scalar beta = static_cast<Scalar>(cfg.beta);
    grad->d_rec.setZero(s.size());
    grad->d_sup.setZero(s.size());
    grad->d_rec(y) = -shaped_softplus_grad(tau - summary.s_gt, beta);
    grad->d_sup(summary.oth_class) = shaped_softplus_grad(summary.s_oth - tau, beta);
  }
  return defense_branch_losses(summary, cfg);
}

}  // namespace bforge
