#include "slide/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "slide/format.hpp"

namespace slide {

train_mode train_mode_from_string(const std::string& s) {
  if (s == "plain") return train_mode::plain;
  if (s == "hyslide") return train_mode::hyslide;
  if (s == "cccp") return train_mode::cccp;
  throw std::invalid_argument("unknown train mode '" + s + "' (expected plain, hyslide, or cccp)");
}

const char* to_string(train_mode m) {
  switch (m) {
    case train_mode::plain: return "plain";
    case train_mode::hyslide: return "hyslide";
    case train_mode::cccp: return "cccp";
  }
  throw std::logic_error("unreachable train mode");
}

void train_config::validate() const {
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw std::invalid_argument("lr must be positive");
  if (!(lambda >= 0.0) || !std::isfinite(lambda))
    throw std::invalid_argument("lambda must be finite and >= 0");
  if (arch == model::arch::mlp && hidden < 1)
    throw std::invalid_argument("hidden width must be >= 1 for the mlp architecture");
  if (restarts < 1) throw std::invalid_argument("restarts must be >= 1");
  surrogate.validate();
  constraint.validate();
  adversary.validate();
  if (surrogate.kind == surrogate_kind::indicator)
    throw std::invalid_argument(
        "the indicator surrogate has zero gradient almost everywhere and cannot be trained "
        "against; penalize slide, opposite_slide, hinge, or linear and report the indicator "
        "constraint separately");
  if (constraint.crit == criterion::if_pairwise)
    throw std::invalid_argument(
        "if_pairwise is a population-level constraint (Monte Carlo only) and cannot be used "
        "as a training penalty");
  if (target_accuracy && (!(*target_accuracy >= 0.0) || !(*target_accuracy <= 1.0)))
    throw std::invalid_argument("target_accuracy must lie in [0, 1]");
  if (cccp_inner_epochs < 1) throw std::invalid_argument("cccp_inner_epochs must be >= 1");
  if (cccp_max_outer < 1) throw std::invalid_argument("cccp_max_outer must be >= 1");
  if (!(cccp_rel_tol >= 0.0)) throw std::invalid_argument("cccp_rel_tol must be >= 0");
  if (!(cccp_inner_grad_tol >= 0.0))
    throw std::invalid_argument("cccp_inner_grad_tol must be >= 0");
  if (cccp_polish_max_iters < 1)
    throw std::invalid_argument("cccp_polish_max_iters must be >= 1");
  if (mode == train_mode::cccp) {
    if (surrogate.kind != surrogate_kind::slide)
      throw std::invalid_argument("cccp mode optimizes the slide surrogate only");
    if (constraint.crit != criterion::di && constraint.crit != criterion::uif)
      throw std::invalid_argument("cccp mode supports the di and uif constraints only");
  }
}

namespace {

double draw_tau(const train_config& cfg, int restart_index) {
  if (!cfg.tau_draw) return cfg.surrogate.tau;
  rng g = rng(cfg.seed).substream("tau", static_cast<std::uint64_t>(restart_index));
  return g.uniform(0.01, 0.2);
}

model fresh_model(const dataset& tr, const train_config& cfg, int restart_index,
                  std::uint64_t* restart_seed_out) {
  rng init_rng = rng(cfg.seed).substream("init", static_cast<std::uint64_t>(restart_index));
  if (restart_seed_out) *restart_seed_out = init_rng.seed();
  model m = cfg.arch == model::arch::linear
                ? model::make_linear(static_cast<int>(tr.d()))
                : model::make_mlp(static_cast<int>(tr.d()), cfg.hidden);
  m.init(init_rng);
  return m;
}

adversary_config epoch_adversary(const train_config& cfg, const char* phase, int restart_index,
                                 long step_index) {
  adversary_config ac = cfg.adversary;
  ac.epsilon = cfg.constraint.epsilon;
  ac.seed = rng(cfg.seed)
                .substream(phase, static_cast<std::uint64_t>(restart_index))
                .substream("step", static_cast<std::uint64_t>(step_index))
                .seed();
  return ac;
}

double elapsed_seconds(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

[[noreturn]] void throw_diverged(long epoch, long last_finite_epoch, double last_finite) {
  std::ostringstream msg;
  msg << "training diverged at epoch " << epoch << ": objective is not finite (last finite "
      << "epoch " << last_finite_epoch << ", objective " << last_finite << ")";
  throw std::runtime_error(msg.str());
}

// Plain penalized descent; with hinge_warm_start the first cfg.epochs epochs
// penalize the hinge surrogate and the remainder the slide surrogate, with the
// optimizer state carried across the switch. With lambda == 0 the two modes
// produce identical parameter trajectories.
train_result run_penalized(const dataset& tr, const train_config& cfg, int restart_index,
                           bool hinge_warm_start) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();

  train_result out;
  out.restart_index = restart_index;
  out.lambda_used = cfg.lambda;
  out.tau_used = draw_tau(cfg, restart_index);

  model m = fresh_model(tr, cfg, restart_index, &out.restart_seed);
  adam opt(m.param_count(), cfg.lr);

  surrogate_spec main_spec = cfg.surrogate;
  main_spec.tau = out.tau_used;
  const surrogate_spec hinge_spec{surrogate_kind::hinge, main_spec.tau};
  const surrogate_spec indicator_spec{surrogate_kind::indicator, main_spec.tau};

  const long phase_epochs = cfg.epochs;
  const long total_epochs = hinge_warm_start ? 2 * phase_epochs : phase_epochs;
  const bool needs_adv = cfg.constraint.crit == criterion::uif;
  const std::size_t n = tr.n();

  scored_batch b;
  b.y = tr.y;
  b.z = tr.z;

  std::vector<double> grad(m.param_count());
  std::vector<double> upstream(n);
  std::vector<double> up_adv;
  matrix V;
  out.trajectory.reserve(static_cast<std::size_t>(total_epochs));

  double last_finite = std::numeric_limits<double>::quiet_NaN();
  long last_finite_epoch = -1;

  for (long epoch = 0; epoch < total_epochs; ++epoch) {
    const surrogate_spec& pen_spec =
        (hinge_warm_start && epoch < phase_epochs) ? hinge_spec : main_spec;

    b.f = m.forward(tr.X);
    if (needs_adv) {
      V = adversarial_batch(m, tr, epoch_adversary(cfg, "adversary", restart_index, epoch));
      b.f_adv = m.forward(V);
    }

    const loss_grad lg = logistic_loss(b.f, tr.y);
    const constraint_grad cg = constraint_with_grad(b, cfg.constraint, pen_spec);
    const double objective = lg.loss + cfg.lambda * cg.value;
    if (!std::isfinite(objective)) throw_diverged(epoch, last_finite_epoch, last_finite);
    last_finite = objective;
    last_finite_epoch = epoch;

    trajectory_row row;
    row.epoch = static_cast<int>(epoch);
    row.loss = lg.loss;
    row.penalty = cfg.lambda * cg.value;
    row.constraint_surrogate = cg.value;
    row.constraint_indicator = empirical_constraint(b, cfg.constraint, indicator_spec);
    out.trajectory.push_back(row);

    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) upstream[i] = lg.dscore[i] + cfg.lambda * cg.df[i];
    m.backward_acc(tr.X, upstream, grad);
    if (needs_adv && !cg.df_adv.empty()) {
      up_adv.resize(n);
      for (std::size_t i = 0; i < n; ++i) up_adv[i] = cfg.lambda * cg.df_adv[i];
      m.backward_acc(V, up_adv, grad);
    }
    opt.update(m.theta, grad, epoch);
  }

  m.check_finite("trained model");
  out.m = std::move(m);
  out.wall_seconds = elapsed_seconds(t0);
  return out;
}

double l2_norm(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Difference-of-convex pieces of the slide constraint, by criterion.
//
// DI:  |A0 - A1| = 2 max(U, V) - (U + V) with U = C0 + K1, V = C1 + K0,
//      C_z = avg_z pos(f)/tau and K_z = avg_z pos(f - tau)/tau; the concave
//      part -(U + V) is linearized at the current iterate.
// UIF: phi = C - K with C = (1/n) sum pos(u_i)/tau, K = (1/n) sum
//      pos(u_i - tau)/tau, u_i = |f_i - f_adv_i| - gamma; -K is linearized.
struct cccp_pieces {
  double convex_value = 0.0;              // 2max(U,V), or C
  std::vector<double> up_f;               // d(convex)/df
  std::vector<double> up_fadv;            // d(convex)/df_adv (uif only)
  double concave_value = 0.0;             // U+V, or K (value of the linearized part)
  std::vector<double> conc_up_f;          // d(U+V)/df or dK/df
  std::vector<double> conc_up_fadv;       // uif only
};

int sign_of(double x) { return x > 0.0 ? 1 : (x < 0.0 ? -1 : 0); }

cccp_pieces slide_dc_split(const scored_batch& b, const constraint_spec& spec, double tau) {
  const std::size_t n = b.n();
  cccp_pieces p;
  p.up_f.assign(n, 0.0);
  p.conc_up_f.assign(n, 0.0);
  if (spec.crit == criterion::di) {
    const auto counts = b.group_counts();
    double c[2] = {0.0, 0.0};
    double k[2] = {0.0, 0.0};
    for (std::size_t i = 0; i < n; ++i) {
      c[b.z[i]] += pos_part(b.f[i]) / tau;
      k[b.z[i]] += pos_part(b.f[i] - tau) / tau;
    }
    for (int g = 0; g < 2; ++g) {
      c[g] /= static_cast<double>(counts[g]);
      k[g] /= static_cast<double>(counts[g]);
    }
    const double u = c[0] + k[1];
    const double v = c[1] + k[0];
    p.convex_value = 2.0 * std::max(u, v);
    p.concave_value = u + v;
    const bool u_branch = u >= v;
    for (std::size_t i = 0; i < n; ++i) {
      const int g = b.z[i];
      const double ng = static_cast<double>(b.z[i] == 0 ? counts[0] : counts[1]);
      const double dpos = b.f[i] > 0.0 ? 1.0 / (tau * ng) : 0.0;
      const double dposk = b.f[i] > tau ? 1.0 / (tau * ng) : 0.0;
      // U uses pos on group 0 and the band term on group 1; V swaps them.
      const double du = (g == 0) ? dpos : dposk;
      const double dv = (g == 1) ? dpos : dposk;
      p.up_f[i] = 2.0 * (u_branch ? du : dv);
      p.conc_up_f[i] = du + dv;
    }
    return p;
  }
  if (spec.crit == criterion::uif) {
    if (b.f_adv.size() != n)
      throw std::invalid_argument("uif cccp split requires adversarial scores");
    p.up_fadv.assign(n, 0.0);
    p.conc_up_fadv.assign(n, 0.0);
    const double inv = 1.0 / (tau * static_cast<double>(n));
    for (std::size_t i = 0; i < n; ++i) {
      const double diff = b.f[i] - b.f_adv[i];
      const double u = std::abs(diff) - spec.gamma;
      p.convex_value += pos_part(u) / tau;
      p.concave_value += pos_part(u - tau) / tau;
      const double s = static_cast<double>(sign_of(diff));
      if (u > 0.0) {
        p.up_f[i] = s * inv;
        p.up_fadv[i] = -s * inv;
      }
      if (u - tau > 0.0) {
        p.conc_up_f[i] = s * inv;
        p.conc_up_fadv[i] = -s * inv;
      }
    }
    p.convex_value /= static_cast<double>(n);
    p.concave_value /= static_cast<double>(n);
    return p;
  }
  throw std::invalid_argument("cccp split supports the di and uif constraints only");
}

}  // namespace

train_result train_penalized(const dataset& tr, const train_config& cfg, int restart_index) {
  return run_penalized(tr, cfg, restart_index, /*hinge_warm_start=*/false);
}

train_result train_hyslide(const dataset& tr, const train_config& cfg, int restart_index) {
  if (cfg.surrogate.kind != surrogate_kind::slide)
    throw std::invalid_argument("hyslide mode warm starts the slide surrogate from a hinge "
                                "phase; set the surrogate to slide");
  return run_penalized(tr, cfg, restart_index, /*hinge_warm_start=*/true);
}

train_result train_cccp(const dataset& tr, const train_config& cfg, int restart_index) {
  const auto t0 = std::chrono::steady_clock::now();
  {
    train_config check = cfg;
    check.mode = train_mode::cccp;
    check.validate();
  }

  train_result out;
  out.restart_index = restart_index;
  out.lambda_used = cfg.lambda;
  out.tau_used = draw_tau(cfg, restart_index);
  const double tau = out.tau_used;

  model cur = fresh_model(tr, cfg, restart_index, &out.restart_seed);
  const std::size_t n = tr.n();
  const std::size_t n_par = cur.param_count();
  const bool uif = cfg.constraint.crit == criterion::uif;
  const surrogate_spec slide_spec{surrogate_kind::slide, tau};
  const surrogate_spec indicator_spec{surrogate_kind::indicator, tau};

  scored_batch b;
  b.y = tr.y;
  b.z = tr.z;

  matrix V;
  auto refresh_adversary = [&](long outer) {
    V = adversarial_batch(cur, tr, epoch_adversary(cfg, "cccp-adversary", restart_index, outer));
  };
  auto fill_scores = [&](const model& m) {
    b.f = m.forward(tr.X);
    if (uif) b.f_adv = m.forward(V);
  };

  // Full slide objective under the current adversarial inputs.
  auto slide_objective = [&](const model& m, double* loss_out, double* phi_out) {
    fill_scores(m);
    const loss_grad lg = logistic_loss(b.f, tr.y);
    const double phi = empirical_constraint(b, cfg.constraint, slide_spec);
    if (loss_out) *loss_out = lg.loss;
    if (phi_out) *phi_out = phi;
    return lg.loss + cfg.lambda * phi;
  };

  if (uif) refresh_adversary(0);

  double prev_objective = std::numeric_limits<double>::infinity();
  std::vector<double> lin_grad(n_par);  // gradient of the linearized concave part
  std::vector<double> grad(n_par), upstream(n), up_adv;

  for (long outer = 0; outer < cfg.cccp_max_outer; ++outer) {
    // Linearize the concave part at the current iterate.
    fill_scores(cur);
    {
      const cccp_pieces split = slide_dc_split(b, cfg.constraint, tau);
      std::fill(lin_grad.begin(), lin_grad.end(), 0.0);
      cur.backward_acc(tr.X, split.conc_up_f, lin_grad);
      if (uif) cur.backward_acc(V, split.conc_up_fadv, lin_grad);
    }

    // Inner objective: loss + lambda * (convex part - <lin_grad, theta>),
    // an upper bound of the slide objective that is tight at the linearization
    // point, so any inner improvement lowers the true objective as well.
    auto inner_value = [&](const model& m) {
      fill_scores(m);
      const loss_grad lg = logistic_loss(b.f, tr.y);
      const cccp_pieces split = slide_dc_split(b, cfg.constraint, tau);
      double lin = 0.0;
      for (std::size_t j = 0; j < n_par; ++j) lin += lin_grad[j] * m.theta[j];
      return lg.loss + cfg.lambda * (split.convex_value - lin);
    };
    auto inner_value_grad = [&](const model& m, std::vector<double>& g) {
      fill_scores(m);
      const loss_grad lg = logistic_loss(b.f, tr.y);
      const cccp_pieces split = slide_dc_split(b, cfg.constraint, tau);
      for (std::size_t i = 0; i < n; ++i)
        upstream[i] = lg.dscore[i] + cfg.lambda * split.up_f[i];
      std::fill(g.begin(), g.end(), 0.0);
      m.backward_acc(tr.X, upstream, g);
      if (uif) {
        up_adv.resize(n);
        for (std::size_t i = 0; i < n; ++i) up_adv[i] = cfg.lambda * split.up_fadv[i];
        m.backward_acc(V, up_adv, g);
      }
      for (std::size_t j = 0; j < n_par; ++j) g[j] -= cfg.lambda * lin_grad[j];
      double lin = 0.0;
      for (std::size_t j = 0; j < n_par; ++j) lin += lin_grad[j] * m.theta[j];
      return lg.loss + cfg.lambda * (split.convex_value - lin);
    };

    // Inner solve: Adam with best-iterate tracking (the start point is
    // evaluated first, so the accepted iterate never regresses).
    model inner = cur;
    adam iopt(n_par, cfg.lr);
    std::vector<double> best_theta = inner.theta;
    double best_value = std::numeric_limits<double>::infinity();
    for (long e = 0; e < cfg.cccp_inner_epochs; ++e) {
      const double val = inner_value_grad(inner, grad);
      if (!std::isfinite(val)) throw_diverged(e, e - 1, best_value);
      if (val < best_value) {
        best_value = val;
        best_theta = inner.theta;
      }
      iopt.update(inner.theta, grad, e);
    }
    {
      const double val = inner_value(inner);
      if (std::isfinite(val) && val < best_value) {
        best_value = val;
        best_theta = inner.theta;
      }
    }
    inner.theta = best_theta;

    // Stationarity of the inner convex objective. The objective is piecewise
    // smooth: every ramp pos(arg)/tau kinks where its argument crosses zero,
    // and the group-gap form adds a kink where the two |gap| branches tie.
    // Minimizers routinely sit exactly on such kinks, where no one-sided
    // gradient vanishes, so stationarity is measured as the norm of the
    // minimum-norm element of the subdifferential assembled from all pieces
    // adjacent to the current point (kink window 1e-8 relative to the score
    // scale), found by coordinate descent over the piece weights. That element
    // is also a descent direction with slope at most -|d|^2, which the
    // optional polish follows with backtracking line search.
    std::vector<double> dir(n_par);
    // Magnitude of the convex-part sums feeding inner_value. The value is a
    // cancellation of sums this large, so differences below ~eps * uv_scale
    // are float noise; line searches must not treat them as real decreases.
    double uv_scale = 0.0;
    auto minnorm_subgrad = [&](const model& m) -> double {
      fill_scores(m);
      const loss_grad lg = logistic_loss(b.f, tr.y);
      double fscale = 1.0;
      for (double fv : b.f) fscale = std::max(fscale, std::abs(fv));
      for (double fv : b.f_adv) fscale = std::max(fscale, std::abs(fv));
      const double window = 1e-8 * fscale;

      // g1/g2: full gradients of the two gap branches' smooth pieces (the uif
      // form has a single branch, kept in g1). segs: kink-active ramps, each
      // adding coefficient * [0,1] to the subdifferential; branch 0/1 segments
      // are scaled by the branch weight t resp. 1-t, branch -1 always by 1.
      std::vector<double> g1(n_par, 0.0), g2(n_par, 0.0);
      struct segment {
        std::vector<double> v;
        int branch;
      };
      std::vector<segment> segs;
      std::vector<double> up1(n, 0.0), up2(n, 0.0), up1_adv;
      double val_u = 0.0, val_v = 0.0;
      bool tie = false;

      auto add_seg = [&](std::size_t i, double df, double dfadv, int branch) {
        segment sg;
        sg.branch = branch;
        sg.v.assign(n_par, 0.0);
        std::vector<double> sup(n, 0.0);
        sup[i] = df;
        m.backward_acc(tr.X, sup, sg.v);
        if (uif && dfadv != 0.0) {
          sup[i] = dfadv;
          m.backward_acc(V, sup, sg.v);
        }
        segs.push_back(std::move(sg));
      };

      if (!uif) {
        const auto counts = b.group_counts();
        for (std::size_t i = 0; i < n; ++i) {
          const int g = b.z[i];
          const double w = 1.0 / (tau * static_cast<double>(counts[g]));
          const double carg = b.f[i];
          const double karg = b.f[i] - tau;
          // group-0 pos ramps and group-1 band ramps feed branch U; V swaps
          val_u += (g == 0 ? pos_part(carg) : pos_part(karg)) * w;
          val_v += (g == 1 ? pos_part(carg) : pos_part(karg)) * w;
          auto route = [&](double arg, int branch) {
            if (arg > window)
              (branch == 0 ? up1 : up2)[i] += 2.0 * cfg.lambda * w;
            else if (arg >= -window)
              add_seg(i, 2.0 * cfg.lambda * w, 0.0, branch);
          };
          route(carg, g == 0 ? 0 : 1);
          route(karg, g == 0 ? 1 : 0);
        }
        tie = std::abs(val_u - val_v) <=
              1e-8 * std::max({1.0, std::abs(val_u), std::abs(val_v)});
      } else {
        up1_adv.assign(n, 0.0);
        const double inv = 1.0 / (tau * static_cast<double>(n));
        for (std::size_t i = 0; i < n; ++i) {
          const double diff = b.f[i] - b.f_adv[i];
          const double s = static_cast<double>(sign_of(diff));
          const double uarg = std::abs(diff) - cfg.constraint.gamma;
          val_u += pos_part(uarg) * inv;
          if (uarg > window) {
            up1[i] += cfg.lambda * inv * s;
            up1_adv[i] -= cfg.lambda * inv * s;
          } else if (uarg >= -window && s != 0.0) {
            add_seg(i, cfg.lambda * inv * s, -cfg.lambda * inv * s, -1);
          }
        }
      }

      {
        std::vector<double> tot(n);
        for (std::size_t i = 0; i < n; ++i) tot[i] = lg.dscore[i] + up1[i];
        m.backward_acc(tr.X, tot, g1);
        if (uif) m.backward_acc(V, up1_adv, g1);
        for (std::size_t j = 0; j < n_par; ++j) g1[j] -= cfg.lambda * lin_grad[j];
        if (!uif) {
          for (std::size_t i = 0; i < n; ++i) tot[i] = lg.dscore[i] + up2[i];
          m.backward_acc(tr.X, tot, g2);
          for (std::size_t j = 0; j < n_par; ++j) g2[j] -= cfg.lambda * lin_grad[j];
        }
      }

      // Minimize |D(t, s)| over t in [0,1] (fixed off ties) and s_q in [0,1]:
      // D = t g1 + (1-t) g2 + sum_q w_q(t) s_q seg_q.
      double t = uif ? 1.0 : (tie ? 0.5 : (val_u >= val_v ? 1.0 : 0.0));
      std::vector<double> s(segs.size(), 0.0);
      auto weight_of = [&](int branch) {
        return branch == 0 ? t : branch == 1 ? 1.0 - t : 1.0;
      };
      auto assemble = [&](std::vector<double>& d) {
        for (std::size_t j = 0; j < n_par; ++j)
          d[j] = uif ? g1[j] : t * g1[j] + (1.0 - t) * g2[j];
        for (std::size_t q = 0; q < segs.size(); ++q) {
          const double c = weight_of(segs[q].branch) * s[q];
          if (c != 0.0)
            for (std::size_t j = 0; j < n_par; ++j) d[j] += c * segs[q].v[j];
        }
      };
      const int sweeps = (segs.empty() && !(tie && !uif)) ? 1 : 4000;
      assemble(dir);
      for (int sweep = 0; sweep < sweeps; ++sweep) {
        if (tie && !uif) {
          // D = t*A + B with A, B collecting the t-linear and constant parts
          std::vector<double> A(n_par), B(n_par);
          for (std::size_t j = 0; j < n_par; ++j) {
            A[j] = g1[j] - g2[j];
            B[j] = g2[j];
          }
          for (std::size_t q = 0; q < segs.size(); ++q) {
            if (segs[q].branch == 0)
              for (std::size_t j = 0; j < n_par; ++j) A[j] += s[q] * segs[q].v[j];
            else if (segs[q].branch == 1)
              for (std::size_t j = 0; j < n_par; ++j) {
                A[j] -= s[q] * segs[q].v[j];
                B[j] += s[q] * segs[q].v[j];
              }
            else
              for (std::size_t j = 0; j < n_par; ++j) B[j] += s[q] * segs[q].v[j];
          }
          double aa = 0.0, ab = 0.0;
          for (std::size_t j = 0; j < n_par; ++j) {
            aa += A[j] * A[j];
            ab += A[j] * B[j];
          }
          if (aa > 0.0) t = std::clamp(-ab / aa, 0.0, 1.0);
          assemble(dir);
        }
        for (std::size_t q = 0; q < segs.size(); ++q) {
          const double w = weight_of(segs[q].branch);
          if (w == 0.0) continue;
          double vv = 0.0, dv = 0.0;
          for (std::size_t j = 0; j < n_par; ++j) {
            vv += segs[q].v[j] * segs[q].v[j];
            dv += segs[q].v[j] * dir[j];
          }
          if (vv <= 0.0) continue;
          const double snew = std::clamp(s[q] - dv / (w * vv), 0.0, 1.0);
          const double delta = w * (snew - s[q]);
          if (delta != 0.0)
            for (std::size_t j = 0; j < n_par; ++j) dir[j] += delta * segs[q].v[j];
          s[q] = snew;
        }
      }
      uv_scale = std::abs(val_u) + std::abs(val_v);
      return l2_norm(dir);
    };
    auto value_noise = [&]() {
      return 16.0 * std::numeric_limits<double>::epsilon() * (1.0 + cfg.lambda * uv_scale);
    };

    // For the linear architecture every ramp kink is an affine constraint on
    // theta: a score ramp pins theta.(x_i, 1) to 0 or tau, and the pairwise
    // gap ramp pins theta.(x_i - v_i, 0) to +/-gamma. When line searches
    // stall with the iterate hovering a hair off such a plane, first-order
    // steps cannot close the remaining distance (their predicted decreases
    // fall below the float resolution of the objective), yet the stationarity
    // norm stays at roughly lipschitz * distance. Snapping exactly onto the
    // plane and minimizing inside it finishes the job: enumerate small
    // candidate active sets from the nearby kinks, project onto each affine
    // subspace, run a projected-gradient descent within it (in-plane
    // directions are immune to the one-sided gradient jump across the plane),
    // and keep the candidate that lowers the measured stationarity norm
    // without raising the inner objective.
    auto kink_snap = [&](model& mm, double& val_ref, double& norm_ref) -> bool {
      if (mm.kind != model::arch::linear) return false;
      fill_scores(mm);
      double fscale = 1.0;
      for (double fv : b.f) fscale = std::max(fscale, std::abs(fv));
      for (double fv : b.f_adv) fscale = std::max(fscale, std::abs(fv));
      struct kink_plane {
        std::vector<double> row;
        double rhs = 0.0;
        double dist = 0.0;
      };
      std::vector<kink_plane> cands;
      const double w_snap = 1e-6 * fscale;
      const std::size_t d_in = static_cast<std::size_t>(mm.dim);
      auto push_cand = [&](std::size_t i, double arg, double rhs, bool pairwise) {
        if (std::abs(arg) > w_snap) return;
        kink_plane kp;
        kp.row.resize(n_par);
        for (std::size_t j = 0; j < d_in; ++j)
          kp.row[j] = pairwise ? tr.X.at(i, j) - V.at(i, j) : tr.X.at(i, j);
        kp.row[d_in] = pairwise ? 0.0 : 1.0;
        kp.rhs = rhs;
        kp.dist = std::abs(arg);
        cands.push_back(std::move(kp));
      };
      if (!uif) {
        for (std::size_t i = 0; i < n; ++i) {
          push_cand(i, b.f[i], 0.0, false);
          push_cand(i, b.f[i] - tau, tau, false);
        }
      } else {
        for (std::size_t i = 0; i < n; ++i) {
          const double diff = b.f[i] - b.f_adv[i];
          if (diff == 0.0) continue;
          push_cand(i, std::abs(diff) - cfg.constraint.gamma,
                    diff > 0.0 ? cfg.constraint.gamma : -cfg.constraint.gamma, true);
        }
      }
      if (cands.empty()) return false;
      std::sort(cands.begin(), cands.end(),
                [](const kink_plane& a, const kink_plane& c) { return a.dist < c.dist; });
      if (cands.size() > 4) cands.resize(4);

      // theta -= A^T (A A^T)^{-1} (A theta - rhs) over the selected planes,
      // solved with a small pivoted Gauss elimination.
      std::vector<const kink_plane*> sel;
      auto reproject = [&](std::vector<double>& theta) -> bool {
        const std::size_t k = sel.size();
        std::vector<double> G(k * k), r(k), mu(k);
        for (std::size_t a = 0; a < k; ++a) {
          r[a] = -sel[a]->rhs;
          for (std::size_t j = 0; j < n_par; ++j) r[a] += sel[a]->row[j] * theta[j];
          for (std::size_t c2 = 0; c2 < k; ++c2) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n_par; ++j) dot += sel[a]->row[j] * sel[c2]->row[j];
            G[a * k + c2] = dot;
          }
        }
        std::vector<std::size_t> piv(k);
        for (std::size_t a = 0; a < k; ++a) piv[a] = a;
        for (std::size_t col = 0; col < k; ++col) {
          std::size_t bestp = col;
          for (std::size_t a = col + 1; a < k; ++a)
            if (std::abs(G[piv[a] * k + col]) > std::abs(G[piv[bestp] * k + col])) bestp = a;
          std::swap(piv[col], piv[bestp]);
          const double p = G[piv[col] * k + col];
          if (std::abs(p) < 1e-12) return false;  // dependent planes
          for (std::size_t a = col + 1; a < k; ++a) {
            const double f = G[piv[a] * k + col] / p;
            if (f == 0.0) continue;
            for (std::size_t c2 = col; c2 < k; ++c2)
              G[piv[a] * k + c2] -= f * G[piv[col] * k + c2];
            r[piv[a]] -= f * r[piv[col]];
          }
        }
        for (std::size_t col = k; col-- > 0;) {
          double acc = r[piv[col]];
          for (std::size_t c2 = col + 1; c2 < k; ++c2)
            acc -= G[piv[col] * k + c2] * mu[c2];
          mu[col] = acc / G[piv[col] * k + col];
        }
        for (std::size_t a = 0; a < k; ++a)
          for (std::size_t j = 0; j < n_par; ++j) theta[j] -= mu[a] * sel[a]->row[j];
        return true;
      };

      double best_norm = norm_ref;
      std::vector<double> best_theta;
      double best_val = val_ref;
      std::vector<double> gp(n_par);
      model snap_iter = mm, probe = mm;
      for (unsigned mask = 1; mask < (1u << cands.size()); ++mask) {
        sel.clear();
        for (std::size_t q = 0; q < cands.size(); ++q)
          if (mask & (1u << q)) sel.push_back(&cands[q]);
        if (sel.size() > n_par) continue;
        // Orthonormal basis of the selected rows, for in-plane projection.
        std::vector<std::vector<double>> basis;
        bool dependent = false;
        for (const kink_plane* kp : sel) {
          std::vector<double> v = kp->row;
          for (const auto& e : basis) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n_par; ++j) dot += v[j] * e[j];
            for (std::size_t j = 0; j < n_par; ++j) v[j] -= dot * e[j];
          }
          const double nv = l2_norm(v);
          if (nv < 1e-8) {
            dependent = true;
            break;
          }
          for (double& x : v) x /= nv;
          basis.push_back(std::move(v));
        }
        if (dependent) continue;
        snap_iter.theta = mm.theta;
        if (!reproject(snap_iter.theta)) continue;
        double v2 = inner_value(snap_iter);
        if (!std::isfinite(v2)) continue;
        double step2 = 1.0;
        for (int it2 = 0; it2 < 400; ++it2) {
          inner_value_grad(snap_iter, grad);
          gp = grad;
          for (const auto& e : basis) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n_par; ++j) dot += gp[j] * e[j];
            for (std::size_t j = 0; j < n_par; ++j) gp[j] -= dot * e[j];
          }
          const double gn2 = l2_norm(gp);
          if (gn2 <= 1e-13 * std::max(1.0, std::abs(v2))) break;
          // Unit direction: step sizes are displacements, so the line search
          // brackets do not depend on how small the gradient already is. The
          // division inflates the direction's float off-plane leakage, so
          // re-project it in-plane afterwards.
          for (std::size_t j = 0; j < n_par; ++j) gp[j] /= gn2;
          for (const auto& e : basis) {
            double dot = 0.0;
            for (std::size_t j = 0; j < n_par; ++j) dot += gp[j] * e[j];
            for (std::size_t j = 0; j < n_par; ++j) gp[j] -= dot * e[j];
          }
          step2 = std::min(step2 * 2.0, 1e6);
          bool moved2 = false;
          double cv = v2;
          const double min_dec2 =
              std::max(value_noise(), 1e-15 * std::max(1.0, std::abs(v2)));
          while (step2 >= 1e-22) {
            for (std::size_t j = 0; j < n_par; ++j)
              probe.theta[j] = snap_iter.theta[j] - step2 * gp[j];
            reproject(probe.theta);
            cv = inner_value(probe);
            if (std::isfinite(cv) &&
                cv <= v2 - std::max(min_dec2, 0.25 * step2 * gn2)) {
              moved2 = true;
              break;
            }
            step2 *= 0.5;
          }
          if (!moved2) {
            // Project the probe gradient in-plane before dotting: the raw
            // gradient's large normal component against the direction's float
            // off-plane contamination would otherwise bias the root location.
            auto hdir = [&](double sv2) {
              for (std::size_t j = 0; j < n_par; ++j)
                probe.theta[j] = snap_iter.theta[j] - sv2 * gp[j];
              reproject(probe.theta);
              inner_value_grad(probe, grad);
              for (const auto& e : basis) {
                double dot = 0.0;
                for (std::size_t j = 0; j < n_par; ++j) dot += grad[j] * e[j];
                for (std::size_t j = 0; j < n_par; ++j) grad[j] -= dot * e[j];
              }
              double h = 0.0;
              for (std::size_t j = 0; j < n_par; ++j) h += grad[j] * gp[j];
              return h;
            };
            if (hdir(0.0) <= 0.0) break;
            double lo2 = 0.0, hi2 = 1.0;
            while (hdir(hi2) > 0.0 && hi2 < 1e9) hi2 *= 2.0;
            if (hdir(hi2) > 0.0) break;  // no sign change: give up on this set
            for (int bs = 0; bs < 200 && hi2 - lo2 > 0.0; ++bs) {
              const double mid = 0.5 * (lo2 + hi2);
              (hdir(mid) > 0.0 ? lo2 : hi2) = mid;
            }
            for (std::size_t j = 0; j < n_par; ++j)
              probe.theta[j] = snap_iter.theta[j] - 0.5 * (lo2 + hi2) * gp[j];
            reproject(probe.theta);
            cv = inner_value(probe);
            // The root of a convex 1-d restriction cannot raise the value;
            // an apparent rise within the value noise floor is accepted,
            // anything beyond it means the bracket went wrong.
            if (!std::isfinite(cv) || cv > v2 + 1e3 * value_noise()) break;
          }
          snap_iter.theta = probe.theta;
          v2 = cv;
        }
        const double final_v = inner_value(snap_iter);
        const double nrm = minnorm_subgrad(snap_iter);
        const double accept_slack = std::max(1e-11 * std::max(1.0, std::abs(val_ref)),
                                             10.0 * value_noise());
        if (std::isfinite(final_v) && nrm < best_norm && final_v <= val_ref + accept_slack) {
          best_norm = nrm;
          best_theta = snap_iter.theta;
          best_val = final_v;
        }
      }
      if (best_theta.empty()) return false;
      mm.theta = best_theta;
      val_ref = std::min(val_ref, best_val);
      norm_ref = minnorm_subgrad(mm);  // also refreshes dir for the caller
      return true;
    };

    double inner_grad_norm = minnorm_subgrad(inner);
    if (cfg.cccp_inner_grad_tol > 0.0) {
      double val = inner_value(inner);
      double step = 1.0;
      model trial = inner;
      for (long it = 0;
           it < cfg.cccp_polish_max_iters && inner_grad_norm > cfg.cccp_inner_grad_tol; ++it) {
        step = std::min(step * 2.0, 1e6);
        bool moved = false;
        double tval = val;
        // The sufficient decrease must stay resolvable in floats, otherwise
        // "val - predicted" rounds back to val and the test accepts noise.
        const double min_dec =
            std::max(value_noise(), 1e-15 * std::max(1.0, std::abs(val)));
        while (step >= 1e-22) {
          for (std::size_t j = 0; j < n_par; ++j)
            trial.theta[j] = inner.theta[j] - step * dir[j];
          tval = inner_value(trial);
          if (std::isfinite(tval) &&
              tval <= val - std::max(min_dec,
                                     0.25 * step * inner_grad_norm * inner_grad_norm)) {
            moved = true;
            break;
          }
          step *= 0.5;
        }
        if (moved) {
          inner.theta = trial.theta;
          val = tval;
          inner_grad_norm = minnorm_subgrad(inner);
          continue;
        }

        if (kink_snap(inner, val, inner_grad_norm)) continue;

        // Near the minimum the sufficient-decrease test drowns in the float
        // resolution of the objective (predicted decreases ~ |d|^2 fall below
        // one ulp). Locate the 1-d minimum along -d by bisecting the sign of
        // the directional derivative instead, which stays resolvable, and
        // keep the move only if it lowers the measured stationarity norm.
        auto dir_deriv = [&](double sv) {
          for (std::size_t j = 0; j < n_par; ++j)
            trial.theta[j] = inner.theta[j] - sv * dir[j];
          inner_value_grad(trial, grad);
          double h = 0.0;
          for (std::size_t j = 0; j < n_par; ++j) h += grad[j] * dir[j];
          return h;
        };
        if (dir_deriv(0.0) <= 0.0) break;  // pinched on a kink: d is not one-sided descent
        double lo = 0.0, hi = 1.0;
        while (dir_deriv(hi) > 0.0 && hi < 1e9) hi *= 2.0;
        for (int bs = 0; bs < 200 && hi - lo > 0.0; ++bs) {
          const double mid = 0.5 * (lo + hi);
          (dir_deriv(mid) > 0.0 ? lo : hi) = mid;
        }
        const double sv = 0.5 * (lo + hi);
        for (std::size_t j = 0; j < n_par; ++j)
          trial.theta[j] = inner.theta[j] - sv * dir[j];
        tval = inner_value(trial);
        if (!std::isfinite(tval) ||
            tval > val + std::max(10.0 * value_noise(), 1e-14 * std::max(1.0, std::abs(val))))
          break;
        const double cand_norm = minnorm_subgrad(trial);
        if (cand_norm >= inner_grad_norm) break;
        inner.theta = trial.theta;
        val = std::min(val, tval);
        inner_grad_norm = cand_norm;
      }
    }
    out.cccp_inner_grad_norms.push_back(inner_grad_norm);
    cur = inner;

    double loss = 0.0, phi = 0.0;
    const double objective = slide_objective(cur, &loss, &phi);
    if (!std::isfinite(objective)) throw_diverged(outer, outer - 1, prev_objective);

    trajectory_row row;
    row.epoch = static_cast<int>(outer);
    row.loss = loss;
    row.penalty = cfg.lambda * phi;
    row.constraint_surrogate = phi;
    row.constraint_indicator = empirical_constraint(b, cfg.constraint, indicator_spec);
    out.trajectory.push_back(row);

    const double rel_gap =
        (prev_objective - objective) / std::max(1.0, std::abs(prev_objective));
    prev_objective = objective;
    if (cfg.lambda == 0.0) break;  // the inner problem is already the full objective
    if (std::isfinite(rel_gap) && rel_gap < cfg.cccp_rel_tol) break;
    if (uif && outer + 1 < cfg.cccp_max_outer) refresh_adversary(outer + 1);
  }

  cur.check_finite("trained model");
  out.m = std::move(cur);
  out.wall_seconds = elapsed_seconds(t0);
  return out;
}

train_result train_one(const dataset& tr, const train_config& cfg, int restart_index) {
  switch (cfg.mode) {
    case train_mode::plain: return train_penalized(tr, cfg, restart_index);
    case train_mode::hyslide: return train_hyslide(tr, cfg, restart_index);
    case train_mode::cccp: return train_cccp(tr, cfg, restart_index);
  }
  throw std::logic_error("unreachable train mode");
}

std::vector<train_result> train_restarts(const dataset& tr, const train_config& cfg) {
  std::vector<train_result> out;
  out.reserve(static_cast<std::size_t>(cfg.restarts));
  for (int r = 0; r < cfg.restarts; ++r) out.push_back(train_one(tr, cfg, r));
  return out;
}

candidate_metrics candidate_validation_metrics(const train_result& cand, const dataset& val,
                                               const train_config& cfg) {
  scored_batch b;
  b.y = val.y;
  b.z = val.z;
  b.f = cand.m.forward(val.X);
  if (cfg.constraint.crit == criterion::uif) {
    adversary_config ac = cfg.adversary;
    ac.epsilon = cfg.constraint.epsilon;
    ac.seed = rng(cfg.seed).substream("selection-adversary").seed();
    b.f_adv = cand.m.forward(adversarial_batch(cand.m, val, ac));
  }
  candidate_metrics out;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < val.n(); ++i) {
    const int pred = b.f[i] > 0.0 ? 1 : -1;
    if (pred == val.y[i]) ++correct;
  }
  out.accuracy = static_cast<double>(correct) / static_cast<double>(val.n());
  out.constraint_indicator =
      empirical_constraint(b, cfg.constraint, {surrogate_kind::indicator, cfg.surrogate.tau});
  return out;
}

std::size_t select_model(const std::vector<train_result>& candidates, const dataset& val,
                         const train_config& cfg, double target_accuracy, double band) {
  if (candidates.empty()) throw std::invalid_argument("select_model needs candidates");
  if (!(band >= 0.0)) throw std::invalid_argument("selection band must be >= 0");

  std::vector<candidate_metrics> metrics;
  metrics.reserve(candidates.size());
  for (const auto& c : candidates) metrics.push_back(candidate_validation_metrics(c, val, cfg));

  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < candidates.size(); ++i)
    if (std::abs(metrics[i].accuracy - target_accuracy) <= band + 1e-12) pool.push_back(i);
  if (pool.empty()) {
    // No candidate hits the band: fall back to the closest accuracy.
    double best_gap = std::numeric_limits<double>::infinity();
    for (const auto& m : metrics)
      best_gap = std::min(best_gap, std::abs(m.accuracy - target_accuracy));
    for (std::size_t i = 0; i < candidates.size(); ++i)
      if (std::abs(metrics[i].accuracy - target_accuracy) <= best_gap + 1e-12) pool.push_back(i);
  }

  std::size_t best = pool.front();
  for (std::size_t idx : pool) {
    const auto& a = metrics[idx];
    const auto& cur = metrics[best];
    if (a.constraint_indicator < cur.constraint_indicator) { best = idx; continue; }
    if (a.constraint_indicator > cur.constraint_indicator) continue;
    if (a.accuracy > cur.accuracy) { best = idx; continue; }
    if (a.accuracy < cur.accuracy) continue;
    if (candidates[idx].restart_seed < candidates[best].restart_seed) best = idx;
  }
  return best;
}

void write_trajectory_csv(const train_result& r, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open trajectory file for writing: " + path);
  out << "epoch,loss,penalty,constraint_indicator,constraint_surrogate\n";
  for (const auto& row : r.trajectory) {
    out << row.epoch << ',' << format_double(row.loss) << ',' << format_double(row.penalty)
        << ',' << format_double(row.constraint_indicator) << ','
        << format_double(row.constraint_surrogate) << '\n';
  }
  if (!out) throw std::runtime_error("failed while writing trajectory file: " + path);
}

}  // namespace slide
