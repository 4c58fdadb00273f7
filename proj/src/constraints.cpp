#include "slide/constraints.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace slide {

criterion criterion_from_string(const std::string& s) {
  if (s == "di") return criterion::di;
  if (s == "eo") return criterion::eo;
  if (s == "eqopp") return criterion::eqopp;
  if (s == "uif") return criterion::uif;
  if (s == "di_boundary") return criterion::di_boundary;
  if (s == "cov") return criterion::cov;
  if (s == "if_pairwise") return criterion::if_pairwise;
  throw std::invalid_argument("unknown fairness criterion: \"" + s + "\"");
}

const char* to_string(criterion c) {
  switch (c) {
    case criterion::di: return "di";
    case criterion::eo: return "eo";
    case criterion::eqopp: return "eqopp";
    case criterion::uif: return "uif";
    case criterion::di_boundary: return "di_boundary";
    case criterion::cov: return "cov";
    case criterion::if_pairwise: return "if_pairwise";
  }
  throw std::logic_error("to_string(criterion): unreachable");
}

void constraint_spec::validate() const {
  if (alpha < 0.0) throw std::invalid_argument("constraint_spec: alpha must be >= 0");
  if (crit == criterion::uif || crit == criterion::if_pairwise) {
    if (!(gamma > 0.0)) throw std::invalid_argument("constraint_spec: gamma must be > 0");
  }
  if (crit == criterion::uif && !(epsilon > 0.0))
    throw std::invalid_argument("constraint_spec: epsilon must be > 0");
  if (crit == criterion::di_boundary && !(tau_boundary > 0.0))
    throw std::invalid_argument("constraint_spec: tau_boundary must be > 0");
}

std::array<std::size_t, 2> scored_batch::group_counts() const {
  std::array<std::size_t, 2> c{0, 0};
  for (int g : z) {
    if (g != 0 && g != 1) throw std::invalid_argument("scored_batch: z outside {0,1}");
    ++c[static_cast<std::size_t>(g)];
  }
  return c;
}

namespace {

void require_batch_shape(const scored_batch& b) {
  if (b.f.empty()) throw std::invalid_argument("constraint: empty batch");
  if (b.z.size() != b.f.size())
    throw std::invalid_argument("constraint: z length mismatch");
}

void require_groups(const scored_batch& b) {
  auto c = b.group_counts();
  if (c[0] == 0) throw std::runtime_error("constraint: empty group (z=0)");
  if (c[1] == 0) throw std::runtime_error("constraint: empty group (z=1)");
}

std::string cell_name(int z, int y) {
  return "(z=" + std::to_string(z) + ", y=" + (y > 0 ? std::string("+1") : std::string("-1")) +
         ")";
}

// Per-(z, y) cell mean of s(f); y = 0 means "all labels".
double cell_mean(const scored_batch& b, int zq, int yq, const surrogate_spec& s,
                 const char* who) {
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < b.n(); ++i) {
    if (b.z[i] != zq) continue;
    if (yq != 0 && b.y[i] != yq) continue;
    sum += surrogate_value(s, b.f[i]);
    ++count;
  }
  if (count == 0) {
    if (yq == 0)
      throw std::runtime_error(std::string(who) + ": empty group (z=" + std::to_string(zq) +
                               ")");
    throw std::runtime_error(std::string(who) + ": empty cell " + cell_name(zq, yq));
  }
  return sum / static_cast<double>(count);
}

double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

std::array<double, 2> group_surrogate_means(const scored_batch& b, const surrogate_spec& s) {
  require_batch_shape(b);
  return {cell_mean(b, 0, 0, s, "group_surrogate_means"),
          cell_mean(b, 1, 0, s, "group_surrogate_means")};
}

double empirical_group_constraint(const scored_batch& b, criterion crit,
                                  const surrogate_spec& s) {
  require_batch_shape(b);
  s.validate();
  switch (crit) {
    case criterion::di: {
      auto a = group_surrogate_means(b, s);
      return std::abs(a[0] - a[1]);
    }
    case criterion::eo: {
      if (b.y.size() != b.f.size())
        throw std::invalid_argument("eo: labels required");
      double gap_pos = cell_mean(b, 0, 1, s, "eo") - cell_mean(b, 1, 1, s, "eo");
      double gap_neg = cell_mean(b, 0, -1, s, "eo") - cell_mean(b, 1, -1, s, "eo");
      return std::max(std::abs(gap_pos), std::abs(gap_neg));
    }
    case criterion::eqopp: {
      if (b.y.size() != b.f.size())
        throw std::invalid_argument("eqopp: labels required");
      return std::abs(cell_mean(b, 0, 1, s, "eqopp") - cell_mean(b, 1, 1, s, "eqopp"));
    }
    default:
      throw std::invalid_argument("empirical_group_constraint: criterion must be di/eo/eqopp");
  }
}

double empirical_uif(const scored_batch& b, double gamma, const surrogate_spec& s) {
  require_batch_shape(b);
  s.validate();
  if (b.f_adv.size() != b.f.size())
    throw std::invalid_argument("uif: adversarial scores missing");
  double sum = 0.0;
  for (std::size_t i = 0; i < b.n(); ++i)
    sum += surrogate_value(s, std::abs(b.f[i] - b.f_adv[i]) - gamma);
  return sum / static_cast<double>(b.n());
}

double di_boundary_constraint(const scored_batch& b, double tau_boundary,
                              const surrogate_spec& s) {
  require_batch_shape(b);
  require_groups(b);
  s.validate();
  if (!(tau_boundary > 0.0))
    throw std::invalid_argument("di_boundary: tau_boundary must be > 0");
  double sum[2] = {0.0, 0.0};
  std::size_t cnt[2] = {0, 0};
  for (std::size_t i = 0; i < b.n(); ++i) {
    double band = surrogate_value(s, b.f[i]) - surrogate_value(s, b.f[i] - tau_boundary);
    sum[b.z[i]] += band;
    ++cnt[b.z[i]];
  }
  return std::abs(sum[0] / static_cast<double>(cnt[0]) - sum[1] / static_cast<double>(cnt[1]));
}

double covariance_constraint(const scored_batch& b) {
  require_batch_shape(b);
  double zbar = 0.0;
  for (int g : b.z) zbar += static_cast<double>(g);
  zbar /= static_cast<double>(b.n());
  double c = 0.0;
  for (std::size_t i = 0; i < b.n(); ++i)
    c += (static_cast<double>(b.z[i]) - zbar) * b.f[i];
  return std::abs(c / static_cast<double>(b.n()));
}

double empirical_constraint(const scored_batch& b, const constraint_spec& spec,
                            const surrogate_spec& s) {
  spec.validate();
  switch (spec.crit) {
    case criterion::di:
    case criterion::eo:
    case criterion::eqopp:
      return empirical_group_constraint(b, spec.crit, s);
    case criterion::uif:
      return empirical_uif(b, spec.gamma, s);
    case criterion::di_boundary:
      return di_boundary_constraint(b, spec.tau_boundary, s);
    case criterion::cov:
      return covariance_constraint(b);
    case criterion::if_pairwise:
      throw std::invalid_argument(
          "if_pairwise is a population constraint; use mc_population_constraint");
  }
  throw std::logic_error("empirical_constraint: unreachable");
}

constraint_grad constraint_with_grad(const scored_batch& b, const constraint_spec& spec,
                                     const surrogate_spec& s) {
  spec.validate();
  s.validate();
  require_batch_shape(b);
  constraint_grad out;
  out.df.assign(b.n(), 0.0);

  auto group_gap_grad = [&](int yq) {
    // gap = avg_{z=0,cell} s(f) - avg_{z=1,cell} s(f) over rows matching yq (0 = all)
    double sum[2] = {0.0, 0.0};
    std::size_t cnt[2] = {0, 0};
    for (std::size_t i = 0; i < b.n(); ++i) {
      if (yq != 0 && b.y[i] != yq) continue;
      sum[b.z[i]] += surrogate_value(s, b.f[i]);
      ++cnt[b.z[i]];
    }
    if (cnt[0] == 0 || cnt[1] == 0) {
      int zq = cnt[0] == 0 ? 0 : 1;
      if (yq == 0)
        throw std::runtime_error("constraint: empty group (z=" + std::to_string(zq) + ")");
      throw std::runtime_error("constraint: empty cell " + cell_name(zq, yq));
    }
    double gap = sum[0] / static_cast<double>(cnt[0]) - sum[1] / static_cast<double>(cnt[1]);
    return std::tuple(gap, cnt[0], cnt[1]);
  };
  auto add_group_gap_df = [&](int yq, double outer) {
    auto [gap, n0, n1] = group_gap_grad(yq);
    (void)gap;
    for (std::size_t i = 0; i < b.n(); ++i) {
      if (yq != 0 && b.y[i] != yq) continue;
      double w = b.z[i] == 0 ? 1.0 / static_cast<double>(n0) : -1.0 / static_cast<double>(n1);
      out.df[i] += outer * w * surrogate_grad(s, b.f[i]);
    }
  };

  switch (spec.crit) {
    case criterion::di: {
      auto [gap, n0, n1] = group_gap_grad(0);
      (void)n0;
      (void)n1;
      out.value = std::abs(gap);
      add_group_gap_df(0, sgn(gap));
      return out;
    }
    case criterion::eo: {
      auto [gp, p0, p1] = group_gap_grad(1);
      auto [gn, m0, m1] = group_gap_grad(-1);
      (void)p0; (void)p1; (void)m0; (void)m1;
      out.value = std::max(std::abs(gp), std::abs(gn));
      // subgradient through the max-achieving label; ties resolved to y=+1
      if (std::abs(gp) >= std::abs(gn))
        add_group_gap_df(1, sgn(gp));
      else
        add_group_gap_df(-1, sgn(gn));
      return out;
    }
    case criterion::eqopp: {
      auto [gap, n0, n1] = group_gap_grad(1);
      (void)n0; (void)n1;
      out.value = std::abs(gap);
      add_group_gap_df(1, sgn(gap));
      return out;
    }
    case criterion::uif: {
      if (b.f_adv.size() != b.f.size())
        throw std::invalid_argument("uif: adversarial scores missing");
      out.df_adv.assign(b.n(), 0.0);
      double n = static_cast<double>(b.n());
      double total = 0.0;
      for (std::size_t i = 0; i < b.n(); ++i) {
        double diff = b.f[i] - b.f_adv[i];
        double u = std::abs(diff) - spec.gamma;
        total += surrogate_value(s, u);
        double g = surrogate_grad(s, u) * sgn(diff) / n;
        out.df[i] = g;
        out.df_adv[i] = -g;
      }
      out.value = total / n;
      return out;
    }
    case criterion::di_boundary: {
      require_groups(b);
      double sum[2] = {0.0, 0.0};
      std::size_t cnt[2] = {0, 0};
      for (std::size_t i = 0; i < b.n(); ++i) {
        sum[b.z[i]] +=
            surrogate_value(s, b.f[i]) - surrogate_value(s, b.f[i] - spec.tau_boundary);
        ++cnt[b.z[i]];
      }
      double gap =
          sum[0] / static_cast<double>(cnt[0]) - sum[1] / static_cast<double>(cnt[1]);
      out.value = std::abs(gap);
      double g = sgn(gap);
      for (std::size_t i = 0; i < b.n(); ++i) {
        double w = b.z[i] == 0 ? 1.0 / static_cast<double>(cnt[0])
                               : -1.0 / static_cast<double>(cnt[1]);
        out.df[i] += g * w *
                     (surrogate_grad(s, b.f[i]) - surrogate_grad(s, b.f[i] - spec.tau_boundary));
      }
      return out;
    }
    case criterion::cov: {
      double zbar = 0.0;
      for (int g : b.z) zbar += static_cast<double>(g);
      double n = static_cast<double>(b.n());
      zbar /= n;
      double c = 0.0;
      for (std::size_t i = 0; i < b.n(); ++i)
        c += (static_cast<double>(b.z[i]) - zbar) * b.f[i];
      c /= n;
      out.value = std::abs(c);
      double g = sgn(c);
      for (std::size_t i = 0; i < b.n(); ++i)
        out.df[i] = g * (static_cast<double>(b.z[i]) - zbar) / n;
      return out;
    }
    case criterion::if_pairwise:
      throw std::invalid_argument("if_pairwise has no batch gradient (population-only)");
  }
  throw std::logic_error("constraint_with_grad: unreachable");
}

mnf_report mnf_diagnostic(const scored_batch& b, const constraint_spec& spec, double tau,
                          double ratio_threshold) {
  if (!(tau > 0.0)) throw std::invalid_argument("mnf_diagnostic: tau must be > 0");
  surrogate_spec lo{surrogate_kind::slide, tau};
  surrogate_spec hi{surrogate_kind::opposite_slide, tau};
  surrogate_spec ind{surrogate_kind::indicator, 0.0};

  mnf_report rep;
  double phi_ind = 0.0;
  if (spec.crit == criterion::uif) {
    double phi_lo = empirical_uif(b, spec.gamma, lo);
    double phi_hi = empirical_uif(b, spec.gamma, hi);
    rep.m_nf = std::abs(phi_hi - phi_lo) / tau;
    phi_ind = empirical_uif(b, spec.gamma, ind);
  } else if (spec.crit == criterion::di) {
    auto lo_means = group_surrogate_means(b, lo);
    auto hi_means = group_surrogate_means(b, hi);
    double per_group =
        std::abs(hi_means[0] - lo_means[0]) + std::abs(hi_means[1] - lo_means[1]);
    double phi_tau = std::abs(lo_means[0] - lo_means[1]);
    phi_ind = empirical_group_constraint(b, criterion::di, ind);
    rep.m_nf = per_group / tau + std::abs(phi_tau - phi_ind) / tau;
  } else {
    throw std::invalid_argument("mnf_diagnostic: defined for criteria di and uif only");
  }

  if (phi_ind > 0.0) {
    rep.m_ratio = rep.m_nf * tau / phi_ind;
    rep.verdict = rep.m_ratio > ratio_threshold ? mnf_verdict::abort : mnf_verdict::keep;
  } else {
    rep.m_ratio = std::numeric_limits<double>::infinity();
    // degenerate perfectly-fair case: keep only if the bound itself is tiny
    rep.verdict = rep.m_nf * tau <= 1e-3 ? mnf_verdict::keep : mnf_verdict::abort;
  }
  return rep;
}

mc_estimate mc_population_constraint(const model& m, const population_sampler& sampler,
                                     const constraint_spec& spec, const surrogate_spec& s,
                                     int n_mc, std::uint64_t seed) {
  spec.validate();
  s.validate();
  if (n_mc < 1000) throw std::invalid_argument("mc_population_constraint: n_mc must be >= 1000");
  rng g = rng(seed).substream("mc");

  if (spec.crit == criterion::if_pairwise) {
    double sum = 0.0, sumsq = 0.0;
    for (int k = 0; k < n_mc; ++k) {
      sample_draw a = sampler(g);
      sample_draw bb = sampler(g);
      double fa = m.forward_one(a.x.data());
      double fb = m.forward_one(bb.x.data());
      double dist = 0.0;
      for (std::size_t j = 0; j < a.x.size(); ++j) {
        double dd = a.x[j] - bb.x[j];
        dist += dd * dd;
      }
      dist = std::sqrt(dist);
      double v = surrogate_value(s, std::abs(fa - fb) - dist - spec.gamma);
      sum += v;
      sumsq += v * v;
    }
    double n = static_cast<double>(n_mc);
    double mean = sum / n;
    double var = std::max(0.0, sumsq / n - mean * mean);
    return {mean, std::sqrt(var / n)};
  }

  if (spec.crit == criterion::di || spec.crit == criterion::cov) {
    scored_batch batch;
    batch.f.reserve(n_mc);
    batch.z.reserve(n_mc);
    for (int k = 0; k < n_mc; ++k) {
      sample_draw a = sampler(g);
      batch.f.push_back(m.forward_one(a.x.data()));
      batch.z.push_back(a.z);
    }
    batch.y.assign(batch.f.size(), 1);
    double value = spec.crit == criterion::di
                       ? empirical_group_constraint(batch, criterion::di, s)
                       : covariance_constraint(batch);
    // two-group gap: se via per-group sample variances of the surrogate values
    double se = 0.0;
    if (spec.crit == criterion::di) {
      double sum[2] = {0, 0}, sumsq[2] = {0, 0};
      std::size_t cnt[2] = {0, 0};
      for (std::size_t i = 0; i < batch.f.size(); ++i) {
        double v = surrogate_value(s, batch.f[i]);
        sum[batch.z[i]] += v;
        sumsq[batch.z[i]] += v * v;
        ++cnt[batch.z[i]];
      }
      for (int zq = 0; zq < 2; ++zq) {
        if (cnt[zq] == 0) continue;
        double n = static_cast<double>(cnt[zq]);
        double mean = sum[zq] / n;
        double var = std::max(0.0, sumsq[zq] / n - mean * mean);
        se += var / n;
      }
      se = std::sqrt(se);
    }
    return {value, se};
  }

  throw std::invalid_argument(std::string("mc_population_constraint: unsupported criterion ") +
                              to_string(spec.crit));
}

}  // namespace slide
