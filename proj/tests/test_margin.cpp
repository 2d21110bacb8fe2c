#include "bforge/margin.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace bforge;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

// Random score vector with pairwise-distinct entries (keeps away from max ties).
Eigen::VectorXd random_scores(std::mt19937_64& rng, Index classes) {
  std::uniform_real_distribution<double> u(0.001, 0.999);
  Eigen::VectorXd s(classes);
  for (Index c = 0; c < classes; ++c) s(c) = u(rng);
  return s;
}

}  // namespace

TEST_CASE("shaped softplus values") {
  CHECK(shaped_softplus(0.0, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(shaped_softplus(0.0, 0.5) == doctest::Approx(1.386294361119890).epsilon(1e-12));
  CHECK(shaped_softplus(-20.0, 1.0) == doctest::Approx(2.061153620314381e-9).epsilon(1e-10));
  CHECK(std::isfinite(shaped_softplus(700.0, 1.0)));
  CHECK(shaped_softplus(700.0, 1.0) == doctest::Approx(700.0));
  CHECK(shaped_softplus(-700.0, 1.0) >= 0.0);
  CHECK_THROWS_AS(shaped_softplus(1.0, 0.0), InvalidConfig);
  CHECK_THROWS_AS(shaped_softplus(1.0, -2.0), InvalidConfig);
}

TEST_CASE("shaped softplus is positive, increasing, and approaches the hinge") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-30.0, 30.0);
  for (int i = 0; i < 2000; ++i) {
    const double a = u(rng);
    const double b = a + std::abs(u(rng)) / 10.0 + 1e-6;
    CHECK(shaped_softplus(a, 1.0) > 0.0);
    CHECK(shaped_softplus(a, 1.0) < shaped_softplus(b, 1.0));
  }
  for (double t : {-2.0, -0.5, -0.1, 0.1, 0.5, 3.0}) CHECK(std::abs(shaped_softplus(t, 100.0) - std::max(t, 0.0)) < 0.01);
}

TEST_CASE("summarize scores") {
  auto s1 = summarize_scores(vec({0.9, 0.05, 0.02}), 0);
  CHECK(s1.s_gt == 0.9);
  CHECK(s1.s_oth == 0.05);
  CHECK(s1.s_max == 0.9);
  auto s2 = summarize_scores(vec({0.3, 0.7, 0.1}), 1);
  CHECK(s2.s_gt == 0.7);
  CHECK(s2.s_oth == 0.3);
  CHECK(s2.s_max == 0.7);
  auto s3 = summarize_scores(vec({0.5, 0.5}), 0);
  CHECK(s3.s_gt == 0.5);
  CHECK(s3.s_oth == 0.5);
  CHECK(s3.s_max == 0.5);

  CHECK_THROWS_AS(summarize_scores(vec({0.5}), 0), InvalidInput);
  CHECK_THROWS_AS(summarize_scores(vec({0.5, 0.2}), 2), InvalidInput);
  CHECK_THROWS_AS(summarize_scores(vec({0.5, 0.2}), -1), InvalidInput);

  std::mt19937_64 rng(3);
  for (int i = 0; i < 500; ++i) {
    const auto s = random_scores(rng, 2 + i % 5);
    const auto sum = summarize_scores(s, i % 2);
    CHECK(sum.s_max >= sum.s_gt);
    CHECK(sum.s_max >= sum.s_oth);
    CHECK(sum.s_max == std::max(sum.s_gt, sum.s_oth));
  }
}

TEST_CASE("compute margins") {
  ScoreSummary<double> a{0.9, 0.05, 0.9};
  auto m = compute_margins(a, 0.25);
  CHECK(m.m_rma == doctest::Approx(-0.20));
  CHECK(m.m_oda == doctest::Approx(-0.65));
  CHECK(m.m_rec == doctest::Approx(0.65));
  CHECK(m.m_sup == doctest::Approx(0.20));

  auto z = compute_margins(ScoreSummary<double>{0.4, 0.4, 0.4}, 0.4);
  CHECK(z.m_rma == 0.0);
  CHECK(z.m_oda == 0.0);
  CHECK(z.m_rec == 0.0);
  CHECK(z.m_sup == 0.0);

  auto e = compute_margins(ScoreSummary<double>{1.0, 0.0, 1.0}, 0.5);
  CHECK(e.m_rma == doctest::Approx(-0.5));
  CHECK(e.m_oda == doctest::Approx(-0.5));
  CHECK(e.m_rec == doctest::Approx(0.5));
  CHECK(e.m_sup == doctest::Approx(0.5));

  CHECK_THROWS_AS(compute_margins(a, 0.0), InvalidConfig);
  CHECK_THROWS_AS(compute_margins(a, 1.0), InvalidConfig);

  std::mt19937_64 rng(11);
  for (int i = 0; i < 500; ++i) {
    const auto s = random_scores(rng, 4);
    const auto mb = compute_margins(summarize_scores(s, 1), 0.3);
    CHECK(mb.m_rma == doctest::Approx(-mb.m_sup));
    CHECK(mb.m_rec <= -mb.m_oda + 1e-15);
  }
}

TEST_CASE("attack branch losses") {
  SurrogateConfig cfg{0.25, 1.0, 1e-12};
  auto l = attack_branch_losses(vec({0.9, 0.05, 0.02}), 0, cfg);
  CHECK(l.rma == doctest::Approx(0.7981388693815918).epsilon(1e-9));
  CHECK(l.oda == doctest::Approx(1.0700553357027152).epsilon(1e-9));
  CHECK(l.con == doctest::Approx(0.5982695885852572).epsilon(1e-9));

  auto one_hot = attack_branch_losses(vec({0.0, 1.0, 0.0, 0.0}), 1, SurrogateConfig{0.5, 1.0, 1e-8});
  CHECK(one_hot.con == 0.0);

  auto uniform = attack_branch_losses(vec({0.9, 0.2, 0.2, 0.2}), 0, SurrogateConfig{0.5, 1.0, 1e-12});
  CHECK(uniform.con == doctest::Approx(std::log(3.0)).epsilon(1e-9));
}

TEST_CASE("defense branch losses") {
  SurrogateConfig cfg{0.25, 1.0, 1e-8};
  auto d = defense_branch_losses(ScoreSummary<double>{0.9, 0.05, 0.9}, cfg);
  CHECK(d.rec == doctest::Approx(0.4200553357027152).epsilon(1e-9));
  CHECK(d.sup == doctest::Approx(0.5981388693815918).epsilon(1e-9));

  auto t = defense_branch_losses(ScoreSummary<double>{0.25, 0.25, 0.25}, cfg);
  CHECK(t.rec == doctest::Approx(std::log(2.0)));
  CHECK(t.sup == doctest::Approx(std::log(2.0)));

  auto e = defense_branch_losses(ScoreSummary<double>{1.0, 0.0, 1.0}, SurrogateConfig{0.5, 1.0, 1e-8});
  CHECK(e.rec == doctest::Approx(0.4740769841801067).epsilon(1e-9));
  CHECK(e.sup == doctest::Approx(0.4740769841801067).epsilon(1e-9));
}

TEST_CASE("surrogate config validation") {
  CHECK_NOTHROW(SurrogateConfig{}.validate());
  CHECK_THROWS_AS((SurrogateConfig{0.0, 1.0, 1e-8}.validate()), InvalidConfig);
  CHECK_THROWS_AS((SurrogateConfig{1.0, 1.0, 1e-8}.validate()), InvalidConfig);
  CHECK_THROWS_AS((SurrogateConfig{0.3, 0.0, 1e-8}.validate()), InvalidConfig);
  CHECK_THROWS_AS((SurrogateConfig{0.3, 1.0, 0.0}.validate()), InvalidConfig);
}

TEST_CASE("branch loss gradients match central differences") {
  std::mt19937_64 rng(5);
  const SurrogateConfig cfg{0.3, 0.7, 1e-8};
  const double h = 1e-5;
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8}); };
  for (int trial = 0; trial < 50; ++trial) {
    const Eigen::VectorXd s = random_scores(rng, 5);
    const Index y = trial % 5;
    AttackBranchGrad<double> ag;
    DefenseBranchGrad<double> dg;
    attack_branch_losses(s, y, cfg, &ag);
    defense_branch_losses(s, y, cfg, &dg);
    for (Index k = 0; k < s.size(); ++k) {
      Eigen::VectorXd sp = s, sm = s;
      sp(k) += h;
      sm(k) -= h;
      const auto ap = attack_branch_losses(sp, y, cfg), am = attack_branch_losses(sm, y, cfg);
      const auto dp = defense_branch_losses(sp, y, cfg), dm = defense_branch_losses(sm, y, cfg);
      const double fd_rma = (ap.rma - am.rma) / (2 * h), fd_oda = (ap.oda - am.oda) / (2 * h);
      const double fd_con = (ap.con - am.con) / (2 * h);
      const double fd_rec = (dp.rec - dm.rec) / (2 * h), fd_sup = (dp.sup - dm.sup) / (2 * h);
      CHECK(rel(ag.d_rma(k), fd_rma) < 1e-5);
      CHECK(rel(ag.d_oda(k), fd_oda) < 1e-5);
      CHECK(rel(ag.d_con(k), fd_con) < 1e-5);
      CHECK(rel(dg.d_rec(k), fd_rec) < 1e-5);
      CHECK(rel(dg.d_sup(k), fd_sup) < 1e-5);
    }
  }
}
