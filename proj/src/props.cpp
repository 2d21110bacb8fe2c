#include "bforge/props.hpp"

#include "bforge/detector.hpp"
#include "bforge/margin.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

namespace bforge::props {

namespace {

using Clock = std::chrono::steady_clock;

class Timer {
 public:
  explicit Timer(PropResult& r) : r_(r), t0_(Clock::now()) {}
  ~Timer() { r_.seconds = std::chrono::duration<double>(Clock::now() - t0_).count(); }

 private:
  PropResult& r_;
  Clock::time_point t0_;
};

PropResult named(const char* name) {
  PropResult r;
  r.name = name;
  return r;
}

void fail(PropResult& r, const std::string& witness) {
  ++r.violations;
  r.pass = false;
  if (r.witness.empty()) r.witness = witness;
}

std::string fmt(std::initializer_list<std::pair<const char*, double>> kv) {
  std::ostringstream os;
  os.precision(17);
  bool first = true;
  for (const auto& [k, v] : kv) {
    os << (first ? "" : " ") << k << "=" << v;
    first = false;
  }
  return os.str();
}

LseDecomposition<double> reference(double a, double b) { return lse_decomposition(a, b); }

}  // namespace

std::string PropResult::to_json() const {
  nlohmann::json j{{"prop", name},         {"pass", pass},       {"checked", checked}, {"violations", violations},
                   {"worst", worst},       {"seconds", seconds}};
  j["witness"] = witness.empty() ? nlohmann::json(nullptr) : nlohmann::json(witness);
  return j.dump();
}

PropResult order_consistency(std::size_t pairs, std::uint64_t seed) {
  PropResult r = named("A1");
  Timer t(r);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const std::array<std::pair<double, double>, 4> settings{{{0.25, 1.0}, {0.5, 1.0}, {0.25, 5.0}, {0.7, 0.5}}};
  for (std::size_t n = 0; n < pairs; ++n) {
    SurrogateConfig cfg;
    std::tie(cfg.tau, cfg.beta) = settings[n % settings.size()];
    Eigen::Vector4d s1, s2;
    for (int c = 0; c < 4; ++c) {
      s1(c) = u(rng);
      s2(c) = u(rng);
    }
    const Index y = static_cast<Index>(n % 4);
    const auto m1 = compute_margins(summarize_scores(s1, y), cfg.tau);
    const auto m2 = compute_margins(summarize_scores(s2, y), cfg.tau);
    const auto a1 = attack_branch_losses(s1, y, cfg), a2 = attack_branch_losses(s2, y, cfg);
    const auto d1 = defense_branch_losses(summarize_scores(s1, y), cfg);
    const auto d2 = defense_branch_losses(summarize_scores(s2, y), cfg);
    const std::array<std::array<double, 4>, 4> quads{{{m1.m_rma, m2.m_rma, a1.rma, a2.rma},
                                                       {m1.m_oda, m2.m_oda, a1.oda, a2.oda},
                                                       {m1.m_rec, m2.m_rec, d1.rec, d2.rec},
                                                       {m1.m_sup, m2.m_sup, d1.sup, d2.sup}}};
    for (std::size_t k = 0; k < quads.size(); ++k) {
      const auto& [ma, mb, la, lb] = quads[k];
      if (ma == mb) continue;
      ++r.checked;
      if ((ma > mb) != (la < lb))
        fail(r, fmt({{"pair", static_cast<double>(k)}, {"m1", ma}, {"m2", mb}, {"l1", la}, {"l2", lb}}));
    }
  }
  return r;
}

PropResult dilution_bound(std::size_t pairs, std::uint64_t seed) {
  PropResult r = named("A2");
  Timer t(r);
  r.worst = std::numeric_limits<double>::infinity();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  constexpr int dim = 8;
  auto check = [&](const Eigen::VectorXd& tar, const Eigen::VectorXd& nui, double rho, double beta) {
    ++r.checked;
    const Eigen::VectorXd sum = tar + nui;
    const double cos = tar.dot(sum) / (tar.norm() * sum.norm());
    const double bound = (1.0 - rho) / (1.0 + beta);
    r.worst = std::min(r.worst, cos - bound);
    if (!(cos >= bound - 1e-12)) fail(r, fmt({{"rho", rho}, {"beta", beta}, {"cos", cos}, {"bound", bound}}));
  };

  // Orthogonal unit vectors: cos = 1/sqrt(2) against the bound 1/2.
  Eigen::VectorXd e1 = Eigen::VectorXd::Zero(dim), e2 = Eigen::VectorXd::Zero(dim);
  e1(0) = 1.0;
  e2(1) = 1.0;
  check(e1, e2, 0.0, 1.0);

  const std::array<double, 3> rhos{0.0, 0.25, 0.5};
  const std::array<double, 3> betas{0.5, 1.0, 2.0};
  for (std::size_t n = 0; n < pairs; ++n) {
    const double rho = rhos[n % 3];
    const double beta = betas[(n / 3) % 3];
    Eigen::VectorXd tar(dim), w(dim);
    for (int i = 0; i < dim; ++i) {
      tar(i) = normal(rng);
      w(i) = normal(rng);
    }
    const double tn = tar.norm();
    const Eigen::VectorXd unit = tar / tn;
    Eigen::VectorXd perp = w - w.dot(unit) * unit;
    perp.normalize();
    // Parallel coefficient p in [-min(rho, beta), beta] and perpendicular q with p^2 + q^2 <= beta^2,
    // both in units of |g_tar|. Every fourth pair sits on the tight corner.
    const double p_lo = -std::min(rho, beta);
    const bool tight = n % 4 == 0;
    const double p = tight ? p_lo : p_lo + (beta - p_lo) * u(rng);
    const double q_max = std::sqrt(std::max(beta * beta - p * p, 0.0));
    const double q = tight ? q_max : q_max * u(rng);
    const Eigen::VectorXd nui = tn * (p * unit + q * perp);
    check(tar, nui, rho, beta);
  }
  return r;
}

PropResult clm_misalignment() {
  PropResult r = named("A3");
  Timer t(r);
  r.worst = -std::numeric_limits<double>::infinity();
  // Logit Jacobian rows for (y, c1, c2) in a 2-D input space; the CLM ascent direction is
  // J^T dL/dz with dL/dz from the per-prediction class loss.
  auto ascent = [](const Eigen::Vector3d& z, int label, const Eigen::Matrix<double, 3, 2>& jac) {
    PredictionSet<double> p;
    p.logits = z;
    p.scores = z.unaryExpr([](double v) { return detail::sigmoid(v); });
    p.raw = MatX<double>::Zero(4 + 3, 1);
    p.boxes.resize(1);
    auto g = PredictionGrad<double>::zeros_like(p);
    prediction_cls_loss(p, 0, label, &g);
    const Eigen::Vector3d dz = g.raw.col(0).tail(3);
    return Eigen::Vector2d(jac.transpose() * dz);
  };
  const double limit = 1.0 - 1e-3;

  // RMA: grad z_y = 0, grad z_c1 = e1, grad z_c2 = e2, c1 the strongest competing class.
  Eigen::Matrix<double, 3, 2> rma_jac;
  rma_jac << 0, 0, 1, 0, 0, 1;
  for (double z1 = -6.0; z1 <= 6.0; z1 += 0.05) {
    for (double z2 = -6.0; z2 < z1; z2 += 0.05) {
      const double s1 = detail::sigmoid(z1), s2 = detail::sigmoid(z2);
      if (s2 <= 0.01 || s2 < 0.05 * s1) continue;
      ++r.checked;
      const Eigen::Vector2d d = ascent(Eigen::Vector3d(2.0, z1, z2), 0, rma_jac);
      const double cos = d.x() / d.norm();
      r.worst = std::max(r.worst, cos);
      if (!(cos < limit)) fail(r, fmt({{"branch", 0}, {"z_c1", z1}, {"z_c2", z2}, {"cos", cos}}));
    }
  }
  // ODA: y is the top class, grad z_y = e1, grad z_c1 = e2; ODA direction is -e1.
  Eigen::Matrix<double, 3, 2> oda_jac;
  oda_jac << 1, 0, 0, 1, 0, 0;
  for (double zy = -2.0; zy <= 6.0; zy += 0.05) {
    for (double z1 = -6.0; z1 < zy; z1 += 0.05) {
      const double sy = detail::sigmoid(zy), s1 = detail::sigmoid(z1);
      if (s1 <= 0.01 || s1 < 0.05 * (1.0 - sy)) continue;
      ++r.checked;
      const Eigen::Vector2d d = ascent(Eigen::Vector3d(zy, z1, -8.0), 0, oda_jac);
      const double cos = -d.x() / d.norm();
      r.worst = std::max(r.worst, cos);
      if (!(cos < limit)) fail(r, fmt({{"branch", 1}, {"z_y", zy}, {"z_c1", z1}, {"cos", cos}}));
    }
  }
  return r;
}

PropResult entropy_bounds() {
  PropResult r = named("A4");
  Timer t(r);
  const double zeta = 1e-8;
  const double upper = std::log(3.0);
  constexpr int steps = 22;  // 22^3 = 10648 grid points
  for (int i = 0; i < steps; ++i)
    for (int j = 0; j < steps; ++j)
      for (int k = 0; k < steps; ++k) {
        const Eigen::Vector4d s(0.5, i / (steps - 1.0), j / (steps - 1.0), k / (steps - 1.0));
        const double l = concentration_loss(s, 0, zeta);
        ++r.checked;
        r.worst = std::max(r.worst, l);
        if (l < -1e-6 || l > upper + 1e-6) fail(r, fmt({{"s1", s(1)}, {"s2", s(2)}, {"s3", s(3)}, {"l_con", l}}));
      }
  const double one_hot = concentration_loss(Eigen::Vector4d(0.5, 0.9, 0.0, 0.0), 0, zeta);
  const double uniform = concentration_loss(Eigen::Vector4d(0.5, 0.3, 0.3, 0.3), 0, zeta);
  r.checked += 2;
  if (std::abs(one_hot) > 1e-4) fail(r, fmt({{"one_hot", one_hot}}));
  if (std::abs(uniform - upper) > 1e-4) fail(r, fmt({{"uniform", uniform}, {"ln3", upper}}));
  return r;
}

PropResult decomposition(std::size_t samples, std::uint64_t seed, const DecompositionFn& fn) {
  PropResult r = named("A5");
  Timer t(r);
  const DecompositionFn f = fn ? fn : reference;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 20.0);
  for (std::size_t n = 0; n < samples; ++n) {
    const double a = u(rng), b = u(rng);
    const auto d = f(a, b);
    const double err = std::abs(d.gated - (d.lse + d.entropy));
    ++r.checked;
    r.worst = std::max(r.worst, err);
    if (!(err < 1e-9)) fail(r, fmt({{"a", a}, {"b", b}, {"error", err}}));
  }
  return r;
}

PropResult envelope(std::size_t samples, std::uint64_t seed, const DecompositionFn& fn) {
  PropResult r = named("CorA5.1");
  Timer t(r);
  const DecompositionFn f = fn ? fn : reference;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 20.0);
  for (std::size_t n = 0; n < samples; ++n) {
    const double a = u(rng), b = u(rng);
    const auto d = f(a, b);
    ++r.checked;
    if (d.gated < d.lse - 1e-12 || d.gated > d.lse + std::numbers::ln2 + 1e-12)
      fail(r, fmt({{"a", a}, {"b", b}, {"gated", d.gated}, {"lse", d.lse}}));
    // Large gap: the gated loss collapses onto the smaller branch.
    const double far = a + 30.0 + u(rng);
    const auto g = f(a, far);
    const double gap = std::abs(g.gated - a);
    ++r.checked;
    r.worst = std::max(r.worst, gap);
    if (!(gap < 1e-6)) fail(r, fmt({{"a", a}, {"b", far}, {"gated", g.gated}}));
  }
  return r;
}

PropResult repaired_margin() {
  PropResult r = named("A6");
  Timer t(r);
  ScoreSummary<double> s;
  for (int ti = 1; ti < 100; ++ti) {
    const double tau = ti / 100.0;
    SurrogateConfig cfg;
    cfg.tau = tau;
    for (int gi = 0; gi <= 100; ++gi)
      for (int oi = 0; oi <= 100; ++oi) {
        s.s_gt = gi / 100.0;
        s.s_oth = oi / 100.0;
        const auto m = compute_margins(s, tau);
        if (!(std::min(m.m_rec, m.m_sup) > 0.0)) continue;
        ++r.checked;
        if (!(s.s_gt > tau && s.s_oth < tau)) fail(r, fmt({{"s_gt", s.s_gt}, {"s_oth", s.s_oth}, {"tau", tau}}));
      }
  }
  return r;
}

PropResult score_stability(std::size_t models, std::uint64_t seed) {
  PropResult r = named("CorA6.1");
  Timer t(r);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  constexpr int dim = 6;
  const double tau = 0.25;
  // s_gt = w_gt . x + b_gt, s_oth = w_oth . x + b_oth; each is L-Lipschitz in l2 with
  // L = max(|w_gt|, |w_oth|).
  for (std::size_t m = 0; m < models; ++m) {
    Eigen::VectorXd wg(dim), wo(dim), x0(dim);
    for (int i = 0; i < dim; ++i) {
      wg(i) = normal(rng);
      wo(i) = normal(rng);
      x0(i) = normal(rng);
    }
    const double bg = tau + 0.05 + 0.5 * u(rng) - wg.dot(x0);
    const double bo = tau - 0.05 - 0.2 * u(rng) - wo.dot(x0);
    const double gamma = std::min(wg.dot(x0) + bg - tau, tau - (wo.dot(x0) + bo));
    const double lip = std::max(wg.norm(), wo.norm());
    const double radius = gamma / lip;
    std::vector<Eigen::VectorXd> dirs{-wg.normalized(), wo.normalized()};
    for (int k = 0; k < 50; ++k) {
      Eigen::VectorXd d(dim);
      for (int i = 0; i < dim; ++i) d(i) = normal(rng);
      dirs.push_back(d.normalized());
    }
    for (std::size_t k = 0; k < dirs.size(); ++k) {
      // The first two directions are the worst case and use the full radius.
      const Eigen::VectorXd eta = dirs[k] * radius * (1.0 - 1e-9) * (k < 2 ? 1.0 : u(rng));
      const Eigen::VectorXd x = x0 + eta;
      const double sg = wg.dot(x) + bg, so = wo.dot(x) + bo;
      ++r.checked;
      if (!(sg > tau && so < tau)) fail(r, fmt({{"gamma", gamma}, {"L", lip}, {"s_gt", sg}, {"s_oth", so}}));
    }
  }
  return r;
}

PropResult confidence_weighting(std::size_t populations, std::uint64_t seed) {
  PropResult r = named("A7");
  Timer t(r);
  r.worst = std::numeric_limits<double>::infinity();
  auto check = [&](const std::vector<double>& c, const std::vector<double>& q) {
    const double n = static_cast<double>(c.size());
    double csum = 0.0, weighted = 0.0, mean = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) {
      csum += c[i];
      mean += q[i] / n;
    }
    for (std::size_t i = 0; i < c.size(); ++i) weighted += c[i] / csum * q[i];
    ++r.checked;
    r.worst = std::min(r.worst, weighted - mean);
    if (!(weighted >= mean - 1e-12)) fail(r, fmt({{"weighted", weighted}, {"uniform", mean}}));
  };
  check({1.0, 2.0}, {0.2, 0.8});

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> size(2, 20);
  for (std::size_t p = 0; p < populations; ++p) {
    const int n = size(rng);
    std::vector<double> c(static_cast<std::size_t>(n)), q(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      c[static_cast<std::size_t>(i)] = 1e-3 + u(rng);
      q[static_cast<std::size_t>(i)] = u(rng);
    }
    double cm = 0.0, qm = 0.0, cov = 0.0;
    for (int i = 0; i < n; ++i) {
      cm += c[static_cast<std::size_t>(i)] / n;
      qm += q[static_cast<std::size_t>(i)] / n;
    }
    for (int i = 0; i < n; ++i) cov += (c[static_cast<std::size_t>(i)] - cm) * (q[static_cast<std::size_t>(i)] - qm);
    // Reflecting q flips the sign of the covariance.
    if (cov < 0.0)
      for (auto& v : q) v = 1.0 - v;
    check(c, q);
  }
  return r;
}

std::vector<PropResult> run_all(const DecompositionFn& fn) {
  return {order_consistency(), dilution_bound(),      clm_misalignment(), entropy_bounds(),
          decomposition(10000, 5, fn), envelope(10000, 6, fn), repaired_margin(), score_stability(),
          confidence_weighting()};
}

LseDecomposition<double> faulty_decomposition(double a, double b) {
  const auto g = soft_gate(-a, -b);
  LseDecomposition<double> out = lse_decomposition(a, b);
  out.gated = g.g_rma * a + g.g_oda * b;
  return out;
}

}  // namespace bforge::props
