#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "slide/constraints.hpp"
#include "slide/dataset.hpp"
#include "slide/nn.hpp"
#include "slide/rng.hpp"
#include "slide/surrogate.hpp"

using namespace slide;

namespace {

scored_batch random_batch(rng& g, std::size_t n, bool with_adv = false) {
  scored_batch b;
  b.f.resize(n);
  b.y.resize(n);
  b.z.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    b.f[i] = g.uniform(-1.0, 1.0);
    b.y[i] = g.uniform01() < 0.5 ? -1 : +1;
    b.z[i] = i < 2 ? static_cast<int>(i) : static_cast<int>(g.uniform_index(2));
  }
  if (with_adv) {
    b.f_adv.resize(n);
    for (std::size_t i = 0; i < n; ++i) b.f_adv[i] = b.f[i] + g.uniform(-0.5, 0.5);
  }
  return b;
}

surrogate_spec ind_spec() { return {surrogate_kind::indicator, 0.0}; }
surrogate_spec slide_spec(double tau = 0.1) { return {surrogate_kind::slide, tau}; }

}  // namespace

TEST_CASE("criterion names round trip") {
  for (const char* nm : {"di", "eo", "eqopp", "uif", "di_boundary", "cov", "if_pairwise"})
    CHECK(std::string(to_string(criterion_from_string(nm))) == nm);
  CHECK_THROWS_AS((void)criterion_from_string("dp"), std::invalid_argument);
}

TEST_CASE("spec validation catches bad slacks") {
  constraint_spec s;
  s.alpha = -0.1;
  CHECK_THROWS_AS(s.validate(), std::invalid_argument);
  constraint_spec u;
  u.crit = criterion::uif;
  u.gamma = 0.0;
  CHECK_THROWS_AS(u.validate(), std::invalid_argument);
  constraint_spec v;
  v.crit = criterion::uif;
  v.epsilon = 0.0;
  CHECK_THROWS_AS(v.validate(), std::invalid_argument);
  constraint_spec w;
  w.crit = criterion::di_boundary;
  w.tau_boundary = 0.0;
  CHECK_THROWS_AS(w.validate(), std::invalid_argument);
}

TEST_CASE("group means by hand, and the empty-group error") {
  scored_batch b;
  b.f = {0.2, -0.1, 0.05};
  b.z = {0, 1, 0};
  b.y = {1, 1, -1};
  auto mi = group_surrogate_means(b, ind_spec());
  CHECK(mi[0] == 1.0);
  CHECK(mi[1] == 0.0);
  auto ms = group_surrogate_means(b, slide_spec(0.1));
  CHECK(ms[0] == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(ms[1] == 0.0);

  scored_batch solo;
  solo.f = {0.2, 0.3};
  solo.z = {0, 0};
  solo.y = {1, 1};
  CHECK_THROWS(group_surrogate_means(solo, ind_spec()));
}

TEST_CASE("disparate impact by hand") {
  scored_batch b;
  b.f = {0.5, 0.5, -0.5, 0.5};
  b.z = {0, 0, 1, 1};
  b.y = {1, -1, 1, -1};
  // indicator: group0 mean 1, group1 mean 1/2
  CHECK(empirical_group_constraint(b, criterion::di, ind_spec()) ==
        doctest::Approx(0.5).epsilon(1e-15));
  // scaling the scores leaves the indicator version unchanged
  scored_batch s3 = b;
  for (auto& f : s3.f) f *= 3.0;
  CHECK(empirical_group_constraint(s3, criterion::di, ind_spec()) ==
        doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("equalized odds takes the worse label slice") {
  scored_batch b;
  //            z=0,y=+1   z=0,y=-1   z=1,y=+1   z=1,y=-1
  b.f = {0.5, 0.5, -0.5, 0.5, 0.5, -0.5, -0.5, -0.5};
  b.y = {1, 1, -1, -1, 1, 1, -1, -1};
  b.z = {0, 0, 0, 0, 1, 1, 1, 1};
  // y=+1 gap: 1 - 1/2 = 1/2 ; y=-1 gap: 1/2 - 0 = 1/2 -> eo = 1/2
  CHECK(empirical_group_constraint(b, criterion::eo, ind_spec()) ==
        doctest::Approx(0.5).epsilon(1e-15));
  CHECK(empirical_group_constraint(b, criterion::eqopp, ind_spec()) ==
        doctest::Approx(0.5).epsilon(1e-15));
  // push the y=-1 gap to 1 while keeping y=+1 at 1/2: eo grows, eqopp does not
  b.f[6] = b.f[7] = -0.5;
  b.f[2] = b.f[3] = 0.5;
  CHECK(empirical_group_constraint(b, criterion::eo, ind_spec()) ==
        doctest::Approx(1.0).epsilon(1e-15));
  CHECK(empirical_group_constraint(b, criterion::eqopp, ind_spec()) ==
        doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("per-group sandwich between slide, indicator, and opposite slide") {
  rng g(601);
  for (int rep = 0; rep < 50; ++rep) {
    scored_batch b = random_batch(g, 40);
    double tau = g.uniform(0.02, 0.3);
    auto lo = group_surrogate_means(b, {surrogate_kind::slide, tau});
    auto mid = group_surrogate_means(b, ind_spec());
    auto hi = group_surrogate_means(b, {surrogate_kind::opposite_slide, tau});
    for (int k : {0, 1}) {
      CHECK(lo[k] <= mid[k]);
      CHECK(mid[k] <= hi[k]);
    }
  }
}

TEST_CASE("uif empirical value by hand") {
  scored_batch b;
  b.f = {1.0, 0.0};
  b.f_adv = {1.3, 0.05};
  b.y = {1, -1};
  b.z = {0, 1};
  // |1-1.3|-0.1 = 0.2 -> 1 ; |0-0.05|-0.1 < 0 -> 0 ; mean = 0.5
  CHECK(empirical_uif(b, 0.1, ind_spec()) == doctest::Approx(0.5).epsilon(1e-15));
  // slide tau=0.4 on the same margins: nu(0.2) = 0.5, nu(-0.05) = 0
  CHECK(empirical_uif(b, 0.1, slide_spec(0.4)) == doctest::Approx(0.25).epsilon(1e-15));
  scored_batch no_adv;
  no_adv.f = {1.0};
  no_adv.y = {1};
  no_adv.z = {0};
  CHECK_THROWS(empirical_uif(no_adv, 0.1, ind_spec()));
}

TEST_CASE("boundary-band constraint counts scores inside (0, band]") {
  scored_batch b;
  b.f = {0.05, 0.5, -0.2, 0.08};
  b.z = {0, 0, 1, 1};
  b.y = {1, 1, 1, 1};
  // band 0.1 with the indicator: I(0 < f <= 0.1): group0 = {1,0} -> 1/2, group1 = {0,1} -> 1/2
  CHECK(di_boundary_constraint(b, 0.1, ind_spec()) == doctest::Approx(0.0).epsilon(1e-15));
  b.f[3] = 0.5;  // group1 band share drops to 0
  CHECK(di_boundary_constraint(b, 0.1, ind_spec()) == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("covariance constraint by hand and its invariances") {
  scored_batch b;
  b.f = {1.0, 2.0, 3.0};
  b.z = {0, 1, 1};
  b.y = {1, 1, 1};
  CHECK(covariance_constraint(b) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  // shifting every score by a constant does not move the centered covariance
  scored_batch s = b;
  for (auto& f : s.f) f += 17.0;
  CHECK(covariance_constraint(s) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("dispatcher rejects the population-only pairwise criterion") {
  scored_batch b = [] {
    rng g(602);
    return random_batch(g, 10);
  }();
  constraint_spec spec;
  spec.crit = criterion::if_pairwise;
  spec.gamma = 0.1;
  CHECK_THROWS(empirical_constraint(b, spec, slide_spec()));
  CHECK_THROWS(constraint_with_grad(b, spec, slide_spec()));
}

TEST_CASE("dispatcher agrees with the direct forms") {
  rng g(603);
  scored_batch b = random_batch(g, 30, true);
  surrogate_spec s = slide_spec(0.15);
  for (criterion c : {criterion::di, criterion::eo, criterion::eqopp}) {
    constraint_spec spec;
    spec.crit = c;
    CHECK(empirical_constraint(b, spec, s) == empirical_group_constraint(b, c, s));
  }
  constraint_spec u;
  u.crit = criterion::uif;
  u.gamma = 0.07;
  CHECK(empirical_constraint(b, u, s) == empirical_uif(b, 0.07, s));
  constraint_spec db;
  db.crit = criterion::di_boundary;
  db.tau_boundary = 0.2;
  CHECK(empirical_constraint(b, db, s) == di_boundary_constraint(b, 0.2, s));
  constraint_spec cv;
  cv.crit = criterion::cov;
  CHECK(empirical_constraint(b, cv, s) == covariance_constraint(b));
}

TEST_CASE("constraint gradients match finite differences off the kinks") {
  rng g(604);
  const double h = 1e-7;
  const double tau = 0.1;
  surrogate_spec s = slide_spec(tau);

  auto run = [&](constraint_spec spec, bool with_adv) {
    for (int rep = 0; rep < 25; ++rep) {
      scored_batch b = random_batch(g, 24, with_adv);
      auto cg = constraint_with_grad(b, spec, s);
      CHECK(cg.value == doctest::Approx(empirical_constraint(b, spec, s)).epsilon(1e-12));
      if (std::abs(cg.value) < 1e-5) continue;  // |.| tie, subgradient may differ

      for (std::size_t i = 0; i < b.n(); ++i) {
        // skip coordinates whose surrogate argument sits within 10h of a kink
        double arg = b.f[i];
        bool near = false;
        if (spec.crit == criterion::uif) {
          double u = std::abs(b.f[i] - b.f_adv[i]) - spec.gamma;
          near = std::abs(u) < 1e-4 || std::abs(u - tau) < 1e-4 ||
                 std::abs(b.f[i] - b.f_adv[i]) < 1e-4;
        } else if (spec.crit == criterion::di_boundary) {
          for (double k : {0.0, tau, spec.tau_boundary, spec.tau_boundary + tau})
            near = near || std::abs(arg - k) < 1e-4;
        } else if (spec.crit != criterion::cov) {
          near = std::abs(arg) < 1e-4 || std::abs(arg - tau) < 1e-4;
        }
        if (near) continue;

        scored_batch bp = b, bm = b;
        bp.f[i] += h;
        bm.f[i] -= h;
        double fd = (empirical_constraint(bp, spec, s) - empirical_constraint(bm, spec, s)) /
                    (2 * h);
        CHECK(cg.df[i] == doctest::Approx(fd).epsilon(1e-4));
        if (with_adv) {
          scored_batch ap = b, am = b;
          ap.f_adv[i] += h;
          am.f_adv[i] -= h;
          double fda = (empirical_constraint(ap, spec, s) -
                        empirical_constraint(am, spec, s)) /
                       (2 * h);
          CHECK(cg.df_adv[i] == doctest::Approx(fda).epsilon(1e-4));
        }
      }
    }
  };

  constraint_spec di;
  di.crit = criterion::di;
  run(di, false);
  constraint_spec eo;
  eo.crit = criterion::eo;
  run(eo, false);
  constraint_spec eq;
  eq.crit = criterion::eqopp;
  run(eq, false);
  constraint_spec u;
  u.crit = criterion::uif;
  u.gamma = 0.08;
  run(u, true);
  constraint_spec db;
  db.crit = criterion::di_boundary;
  db.tau_boundary = 0.25;
  run(db, false);
  constraint_spec cv;
  cv.crit = criterion::cov;
  run(cv, false);
}

TEST_CASE("surrogate-gap diagnostic reproduces its closed form for group gaps") {
  rng g(605);
  for (int rep = 0; rep < 20; ++rep) {
    scored_batch b = random_batch(g, 50);
    double tau = g.uniform(0.05, 0.2);
    constraint_spec spec;
    spec.crit = criterion::di;
    auto rep_out = mnf_diagnostic(b, spec, tau);

    auto lo = group_surrogate_means(b, {surrogate_kind::slide, tau});
    auto hi = group_surrogate_means(b, {surrogate_kind::opposite_slide, tau});
    double phi_tau = std::abs(lo[0] - lo[1]);
    double phi_ind = empirical_group_constraint(b, criterion::di, ind_spec());
    double want = (std::abs(hi[0] - lo[0]) + std::abs(hi[1] - lo[1])) / tau +
                  std::abs(phi_tau - phi_ind) / tau;
    CHECK(rep_out.m_nf == doctest::Approx(want).epsilon(1e-12));
    if (phi_ind > 0)
      CHECK(rep_out.m_ratio == doctest::Approx(rep_out.m_nf * tau / phi_ind).epsilon(1e-12));
  }
}

TEST_CASE("diagnostic verdicts: plateau keeps, boundary mass aborts") {
  // scores far from the boundary: every surrogate agrees, bound is zero
  scored_batch far;
  far.f = {1.0, 2.0, -1.0, -2.0};
  far.z = {0, 0, 1, 1};
  far.y = {1, 1, 1, 1};
  constraint_spec spec;
  spec.crit = criterion::di;
  auto keep = mnf_diagnostic(far, spec, 0.1);
  CHECK(keep.m_nf == 0.0);
  CHECK(keep.m_ratio == 0.0);
  CHECK(keep.verdict == mnf_verdict::keep);

  // all the mass inside the ramp: the bound explodes relative to the gap
  scored_batch nearb;
  nearb.f = {0.01, 0.01, -0.01, -0.01};
  nearb.z = {0, 0, 1, 1};
  nearb.y = {1, 1, 1, 1};
  auto abort_rep = mnf_diagnostic(nearb, spec, 0.1);
  CHECK(abort_rep.m_nf == doctest::Approx(27.0).epsilon(1e-12));
  CHECK(abort_rep.m_ratio == doctest::Approx(2.7).epsilon(1e-12));
  CHECK(abort_rep.verdict == mnf_verdict::abort);
}

TEST_CASE("diagnostic with a perfectly fair batch reports an infinite ratio") {
  scored_batch b;
  b.f = {0.05, 0.05};
  b.z = {0, 1};
  b.y = {1, 1};
  constraint_spec spec;
  spec.crit = criterion::di;
  auto rep = mnf_diagnostic(b, spec, 0.1);
  CHECK(std::isinf(rep.m_ratio));
  CHECK(rep.m_nf == doctest::Approx(10.0).epsilon(1e-12));
  CHECK(rep.verdict == mnf_verdict::abort);  // bound not tiny -> do not trust

  // same degenerate gap but with scores glued to the plateau: keep
  scored_batch ok;
  ok.f = {5.0, 5.0};
  ok.z = {0, 1};
  ok.y = {1, 1};
  auto rep2 = mnf_diagnostic(ok, spec, 0.1);
  CHECK(std::isinf(rep2.m_ratio));
  CHECK(rep2.m_nf == 0.0);
  CHECK(rep2.verdict == mnf_verdict::keep);
}

TEST_CASE("diagnostic covers uif and rejects unsupported criteria") {
  scored_batch b;
  b.f = {1.0, 0.0};
  b.f_adv = {1.3, 0.05};
  b.y = {1, -1};
  b.z = {0, 1};
  constraint_spec spec;
  spec.crit = criterion::uif;
  spec.gamma = 0.1;
  double tau = 0.4;
  auto rep = mnf_diagnostic(b, spec, tau);
  double lo = empirical_uif(b, 0.1, {surrogate_kind::slide, tau});
  double hi = empirical_uif(b, 0.1, {surrogate_kind::opposite_slide, tau});
  CHECK(rep.m_nf == doctest::Approx(std::abs(hi - lo) / tau).epsilon(1e-12));

  constraint_spec eo;
  eo.crit = criterion::eo;
  CHECK_THROWS(mnf_diagnostic(b, eo, tau));
  CHECK_THROWS(mnf_diagnostic(b, spec, 0.0));
}

TEST_CASE("pairwise population constraint matches its gaussian closed form") {
  // f(x) = 2x on X ~ N(0,1): |f(X)-f(X')| - |X-X'| - 0.3 > 0 iff |D| > 0.3
  // with D ~ N(0,2); that probability frozen to 0.832004028572636505.
  model m = model::make_linear(1);
  m.theta = {2.0, 0.0};
  population_sampler sampler = [](rng& g) {
    sample_draw d;
    d.x = {g.normal01()};
    d.z = 0;
    return d;
  };
  constraint_spec spec;
  spec.crit = criterion::if_pairwise;
  spec.gamma = 0.3;
  auto est = mc_population_constraint(m, sampler, spec, ind_spec(), 200000, 8101);
  CHECK(std::abs(est.value - 0.832004028572636505) < 4 * est.se);
  CHECK(est.se == doctest::Approx(std::sqrt(0.832 * 0.168 / 200000)).epsilon(0.05));
}

TEST_CASE("group population constraint matches the probit gap") {
  // f(x) = x - 0.5 with X | Z=z ~ N(z, 1), z in {0,1}: population DI gap
  // Phi(0.5) - Phi(-0.5), frozen below.
  model m = model::make_linear(1);
  m.theta = {1.0, -0.5};
  population_sampler sampler = [](rng& g) {
    sample_draw d;
    d.z = g.uniform01() < 0.5 ? 0 : 1;
    d.x = {g.normal(static_cast<double>(d.z), 1.0)};
    return d;
  };
  constraint_spec spec;
  spec.crit = criterion::di;
  auto est = mc_population_constraint(m, sampler, spec, ind_spec(), 200000, 8102);
  CHECK(std::abs(est.value - 0.382924922548026207) < 5 * est.se);
}

TEST_CASE("population estimates are seed-deterministic and guard sample size") {
  model m = model::make_linear(1);
  m.theta = {1.0, 0.0};
  population_sampler sampler = [](rng& g) {
    sample_draw d;
    d.x = {g.normal01()};
    d.z = g.uniform01() < 0.5 ? 0 : 1;
    return d;
  };
  constraint_spec spec;
  spec.crit = criterion::di;
  auto a = mc_population_constraint(m, sampler, spec, slide_spec(), 5000, 7);
  auto b = mc_population_constraint(m, sampler, spec, slide_spec(), 5000, 7);
  auto c = mc_population_constraint(m, sampler, spec, slide_spec(), 5000, 8);
  CHECK(a.value == b.value);
  CHECK(a.se == b.se);
  CHECK(a.value != c.value);
  CHECK_THROWS(mc_population_constraint(m, sampler, spec, slide_spec(), 999, 7));
}
