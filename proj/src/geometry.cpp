#include "slide/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "slide/format.hpp"
#include "slide/trainer.hpp"

namespace slide {

namespace {
constexpr double kPi = 3.14159265358979323846;
constexpr double kInf = std::numeric_limits<double>::infinity();
}  // namespace

double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * kPi); }

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double mills_ratio(double u) {
  if (u < 30.0) {
    const double tail = 0.5 * std::erfc(u / std::sqrt(2.0));  // 1 - Phi(u)
    return normal_pdf(u) / tail;
  }
  // Asymptotic expansion of phi(u)/(1 - Phi(u)) for large u; the next term is
  // O(u^-9), far below double precision at the switch point.
  const double i2 = 1.0 / (u * u);
  return u * (1.0 + i2 * (1.0 - i2 * (2.0 - i2 * (10.0 - 75.0 * i2))));
}

// ---- param_grid -------------------------------------------------------------

param_grid param_grid::make(double b1_lo, double b1_hi, double b2_lo, double b2_hi, int res1,
                            int res2) {
  if (res1 < 2 || res2 < 2) throw std::invalid_argument("param_grid: resolution must be >= 2");
  if (!(b1_lo < b1_hi) || !(b2_lo < b2_hi))
    throw std::invalid_argument("param_grid: empty parameter range");
  param_grid g;
  g.b1_lo = b1_lo;
  g.b1_hi = b1_hi;
  g.b2_lo = b2_lo;
  g.b2_hi = b2_hi;
  g.res1 = res1;
  g.res2 = res2;
  return g;
}

double param_grid::coord1(int i1) const {
  return b1_lo + (b1_hi - b1_lo) * static_cast<double>(i1) / static_cast<double>(res1 - 1);
}

double param_grid::coord2(int i2) const {
  return b2_lo + (b2_hi - b2_lo) * static_cast<double>(i2) / static_cast<double>(res2 - 1);
}

std::array<double, 2> param_grid::node(std::size_t flat) const {
  const int i1 = static_cast<int>(flat / static_cast<std::size_t>(res2));
  const int i2 = static_cast<int>(flat % static_cast<std::size_t>(res2));
  return {coord1(i1), coord2(i2)};
}

double param_grid::spacing1() const { return (b1_hi - b1_lo) / static_cast<double>(res1 - 1); }
double param_grid::spacing2() const { return (b2_hi - b2_lo) / static_cast<double>(res2 - 1); }

const std::vector<double>& param_grid::channel(const std::string& key) const {
  auto it = phi.find(key);
  if (it == phi.end())
    throw std::invalid_argument("param_grid: no constraint channel named \"" + key + "\"");
  return it->second;
}

void fill_pairwise_population(param_grid& g, const population_sampler& sampler, double gamma,
                              const std::vector<grid_fill_spec>& kinds, int n_mc,
                              std::uint64_t seed) {
  if (kinds.empty()) throw std::invalid_argument("fill_pairwise_population: no channels");
  if (n_mc < 1000) throw std::invalid_argument("fill_pairwise_population: n_mc must be >= 1000");
  for (const auto& k : kinds) k.surr.validate();

  // Draw the shared pairs exactly as mc_population_constraint does, so a grid
  // value equals a per-node call of that estimator with the same seed.
  rng stream = rng(seed).substream("mc");
  std::vector<std::array<double, 2>> xa(static_cast<std::size_t>(n_mc));
  std::vector<std::array<double, 2>> xb(static_cast<std::size_t>(n_mc));
  std::vector<double> dist(static_cast<std::size_t>(n_mc));
  for (int k = 0; k < n_mc; ++k) {
    sample_draw a = sampler(stream);
    sample_draw b = sampler(stream);
    if (a.x.size() != 2 || b.x.size() != 2)
      throw std::invalid_argument("fill_pairwise_population: sampler must produce 2-D inputs");
    xa[k] = {a.x[0], a.x[1]};
    xb[k] = {b.x[0], b.x[1]};
    double d2 = 0.0;
    for (int j = 0; j < 2; ++j) {
      const double dd = a.x[j] - b.x[j];
      d2 += dd * dd;
    }
    dist[k] = std::sqrt(d2);
  }

  for (const auto& kind : kinds) g.phi[kind.key].assign(g.nodes(), 0.0);

  model node_model = model::make_linear(2);
  std::vector<double> sums(kinds.size());
  for (std::size_t flat = 0; flat < g.nodes(); ++flat) {
    const auto beta = g.node(flat);
    node_model.theta = {beta[0], beta[1], 0.0};
    std::fill(sums.begin(), sums.end(), 0.0);
    for (int k = 0; k < n_mc; ++k) {
      const double fa = node_model.forward_one(xa[k].data());
      const double fb = node_model.forward_one(xb[k].data());
      const double zval = std::abs(fa - fb) - dist[k] - gamma;
      for (std::size_t q = 0; q < kinds.size(); ++q)
        sums[q] += surrogate_value(kinds[q].surr, zval);
    }
    for (std::size_t q = 0; q < kinds.size(); ++q)
      g.phi[kinds[q].key][flat] = sums[q] / static_cast<double>(n_mc);
  }
}

void fill_analytic_1d(param_grid& g, double min_abs_slope) {
  if (!(min_abs_slope > 0.0))
    throw std::invalid_argument("fill_analytic_1d: min_abs_slope must be > 0");
  auto& ind = g.phi["indicator"];
  auto& hin = g.phi["hinge"];
  ind.assign(g.nodes(), kInf);
  hin.assign(g.nodes(), kInf);
  for (std::size_t flat = 0; flat < g.nodes(); ++flat) {
    const auto node = g.node(flat);  // (intercept, slope)
    if (std::abs(node[1]) < min_abs_slope) continue;
    const analytic_di v = analytic_1d_gaussian(node[0], node[1]);
    ind[flat] = v.di;
    hin[flat] = v.di_hinge;
  }
}

node_set feasible_set(const param_grid& g, const std::string& key, double alpha) {
  const auto& phi = g.channel(key);
  node_set out;
  out.mask.assign(g.nodes(), 0);
  for (std::size_t flat = 0; flat < g.nodes(); ++flat) {
    if (phi[flat] <= alpha) {
      out.mask[flat] = 1;
      out.points.push_back(g.node(flat));
    }
  }
  return out;
}

double hausdorff(const std::vector<std::array<double, 2>>& a,
                 const std::vector<std::array<double, 2>>& b) {
  if (a.empty() || b.empty())
    throw std::invalid_argument("hausdorff: distance to an empty set is undefined");
  auto directed = [](const std::vector<std::array<double, 2>>& from,
                     const std::vector<std::array<double, 2>>& to) {
    double worst = 0.0;
    for (const auto& p : from) {
      double best = kInf;
      for (const auto& q : to) {
        const double dx = p[0] - q[0];
        const double dy = p[1] - q[1];
        best = std::min(best, dx * dx + dy * dy);
      }
      worst = std::max(worst, best);
    }
    return worst;
  };
  return std::sqrt(std::max(directed(a, b), directed(b, a)));
}

namespace {

// Felzenszwalb-Huttenlocher 1-D squared distance transform on samples at
// positions i * h. Absent sources carry a large finite sentinel instead of
// infinity so the parabola intersections stay well defined; any true source
// dominates a sentinel parabola everywhere on the grid.
constexpr double kFarAway = 1e20;

void dt_1d(const double* f, int n, double h, double* d, int* v, double* zbuf) {
  const auto intersect = [&](int q, int r) {
    const double xq = q * h, xr = r * h;
    return ((f[q] + xq * xq) - (f[r] + xr * xr)) / (2.0 * (xq - xr));
  };
  int k = 0;
  v[0] = 0;
  zbuf[0] = -1e30;
  zbuf[1] = 1e30;
  for (int q = 1; q < n; ++q) {
    double s = intersect(q, v[k]);
    while (s <= zbuf[k]) {
      --k;
      s = intersect(q, v[k]);
    }
    ++k;
    v[k] = q;
    zbuf[k] = s;
    zbuf[k + 1] = 1e30;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    const double xq = q * h;
    while (zbuf[k + 1] < xq) ++k;
    const double dx = xq - v[k] * h;
    d[q] = dx * dx + f[v[k]];
  }
}

// Squared Euclidean distance from every grid node to the nearest masked node.
std::vector<double> edt_squared(const param_grid& g, const std::vector<std::uint8_t>& mask) {
  const int r1 = g.res1, r2 = g.res2;
  std::vector<double> dist(g.nodes());
  for (std::size_t i = 0; i < g.nodes(); ++i) dist[i] = mask[i] ? 0.0 : kFarAway;

  const int rmax = std::max(r1, r2);
  std::vector<double> f(rmax), d(rmax), zbuf(rmax + 1);
  std::vector<int> v(rmax);

  // pass along axis 2 (contiguous rows)
  for (int i1 = 0; i1 < r1; ++i1) {
    double* row = dist.data() + static_cast<std::size_t>(i1) * r2;
    std::copy(row, row + r2, f.begin());
    dt_1d(f.data(), r2, g.spacing2(), d.data(), v.data(), zbuf.data());
    std::copy(d.begin(), d.begin() + r2, row);
  }
  // pass along axis 1 (columns)
  for (int i2 = 0; i2 < r2; ++i2) {
    for (int i1 = 0; i1 < r1; ++i1) f[i1] = dist[static_cast<std::size_t>(i1) * r2 + i2];
    dt_1d(f.data(), r1, g.spacing1(), d.data(), v.data(), zbuf.data());
    for (int i1 = 0; i1 < r1; ++i1) dist[static_cast<std::size_t>(i1) * r2 + i2] = d[i1];
  }
  return dist;
}

double grid_hausdorff(const param_grid& g, const std::vector<std::uint8_t>& mask_a,
                      const std::vector<double>& edt_a, const std::vector<std::uint8_t>& mask_b,
                      const std::vector<double>& edt_b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < mask_a.size(); ++i)
    if (mask_a[i]) worst = std::max(worst, edt_b[i]);
  for (std::size_t i = 0; i < mask_b.size(); ++i)
    if (mask_b[i]) worst = std::max(worst, edt_a[i]);
  return std::sqrt(worst);
}

}  // namespace

gap_curve_result gap_curve(const param_grid& g, const std::string& target_key,
                           const std::string& surrogate_key, const std::vector<double>& alphas,
                           int alpha_prime_resolution, std::optional<double> alpha_prime_max) {
  if (alphas.empty()) throw std::invalid_argument("gap_curve: empty alpha grid");
  if (alpha_prime_resolution < 100)
    throw std::invalid_argument("gap_curve: alpha' resolution must be >= 100");
  g.channel(surrogate_key);  // existence check
  g.channel(target_key);

  // The candidate constraint levels alpha' span the scale of the requested
  // target levels. Matching beyond that scale is uninformative: once alpha'
  // exceeds the largest surrogate value the surrogate set saturates to the
  // whole grid and every target set is matched trivially, which flattens the
  // curve instead of measuring surrogate fidelity at the levels of interest.
  double max_ap = alpha_prime_max.value_or(*std::max_element(alphas.begin(), alphas.end()));
  if (!(max_ap > 0.0) || !std::isfinite(max_ap))
    throw std::invalid_argument("gap_curve: alpha' range must be positive and finite");

  std::vector<double> alpha_primes;
  alpha_primes.reserve(static_cast<std::size_t>(alpha_prime_resolution) + alphas.size());
  for (int i = 0; i < alpha_prime_resolution; ++i)
    alpha_primes.push_back(max_ap * static_cast<double>(i) /
                           static_cast<double>(alpha_prime_resolution - 1));
  // Include the queried levels themselves so a surrogate equal to the target
  // can always match it exactly.
  alpha_primes.insert(alpha_primes.end(), alphas.begin(), alphas.end());
  std::sort(alpha_primes.begin(), alpha_primes.end());
  alpha_primes.erase(std::unique(alpha_primes.begin(), alpha_primes.end()), alpha_primes.end());

  // Precompute surrogate sets and their distance transforms per alpha'.
  std::vector<node_set> surr_sets;
  std::vector<std::vector<double>> surr_edt;
  surr_sets.reserve(alpha_primes.size());
  surr_edt.reserve(alpha_primes.size());
  for (double ap : alpha_primes) {
    surr_sets.push_back(feasible_set(g, surrogate_key, ap));
    surr_edt.push_back(surr_sets.back().empty() ? std::vector<double>{}
                                                : edt_squared(g, surr_sets.back().mask));
  }

  gap_curve_result out;
  out.target_key = target_key;
  out.surrogate_key = surrogate_key;
  for (double alpha : alphas) {
    gap_point pt;
    pt.alpha = alpha;
    const node_set target = feasible_set(g, target_key, alpha);
    if (!target.empty()) {
      const std::vector<double> target_edt = edt_squared(g, target.mask);
      double best = kInf;
      double best_ap = 0.0;
      for (std::size_t j = 0; j < alpha_primes.size(); ++j) {
        if (surr_sets[j].empty()) continue;
        const double dh =
            grid_hausdorff(g, target.mask, target_edt, surr_sets[j].mask, surr_edt[j]);
        if (dh < best) {
          best = dh;
          best_ap = alpha_primes[j];
        }
      }
      if (best != kInf) {
        pt.gap = best;
        pt.alpha_prime = best_ap;
      }
    }
    out.points.push_back(pt);
  }
  return out;
}

void write_gap_curves_csv(const std::string& path,
                          const std::vector<gap_curve_result>& curves) {
  if (curves.empty()) throw std::invalid_argument("write_gap_curves_csv: no curves");
  for (const auto& c : curves)
    if (c.points.size() != curves.front().points.size())
      throw std::invalid_argument("write_gap_curves_csv: curves disagree on the alpha grid");
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open curve file for writing: " + path);
  out << "alpha";
  for (const auto& c : curves) out << ",d_" << c.surrogate_key;
  out << '\n';
  for (std::size_t i = 0; i < curves.front().points.size(); ++i) {
    out << format_double(curves.front().points[i].alpha);
    for (const auto& c : curves) {
      out << ',';
      if (c.points[i].gap) out << format_double(*c.points[i].gap);
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("failed while writing curve file: " + path);
}

// ---- Analytic 1-D Gaussian example ------------------------------------------

analytic_di analytic_1d_gaussian(double beta0, double beta) {
  if (beta == 0.0)
    throw std::invalid_argument(
        "analytic_1d_gaussian: beta must be nonzero (degenerate score distribution)");
  analytic_di out;
  const double r = -beta0 / beta;
  out.di = std::abs(normal_cdf(r + 1.0) - normal_cdf(r - 1.0));
  const double u_neg = -(beta0 - beta + 1.0) / beta;  // group z = -1
  const double u_pos = -(beta0 + beta + 1.0) / beta;  // group z = +1
  out.di_hinge = std::abs(-2.0 * beta + mills_ratio(u_neg) - mills_ratio(u_pos));
  return out;
}

// ---- Population samplers ----------------------------------------------------

population_sampler make_gaussian_mixture_2d_sampler(const synth_params& p) {
  const double sd = std::sqrt(p.gm_var);
  return [p, sd](rng& g) {
    sample_draw d;
    const bool cls1 = g.uniform01() < 0.5;
    const auto& mu = cls1 ? p.gm_mean1 : p.gm_mean0;
    d.x = {g.normal(mu[0], sd), g.normal(mu[1], sd)};
    d.z = 0;
    return d;
  };
}

population_sampler make_two_moon_sampler(const synth_params& p) {
  return [p](rng& g) {
    sample_draw d;
    const bool inner = g.uniform01() < 0.5;
    const double t = g.uniform(0.0, kPi);
    const double R = p.moon_radius;
    double x, y;
    if (!inner) {
      x = R * std::cos(t);
      y = R * std::sin(t);
    } else {
      x = R - R * std::cos(t);
      y = p.moon_offset - R * std::sin(t);
    }
    d.x = {x + g.normal(0.0, p.moon_noise_sd), y + g.normal(0.0, p.moon_noise_sd)};
    d.z = 0;
    return d;
  };
}

population_sampler make_sim_1d_sampler(const synth_params& p) {
  return [p](rng& g) {
    sample_draw d;
    const std::size_t cell = g.categorical({p.sim_priors[0], p.sim_priors[1], p.sim_priors[2],
                                            p.sim_priors[3]});
    d.x = {g.normal(p.sim_means[cell], std::sqrt(p.sim_vars[cell]))};
    d.z = cell >= 2 ? 1 : 0;
    return d;
  };
}

// ---- Convergence simulation -------------------------------------------------

namespace {

struct sim_cell {
  int z;
  int y;
  double mean;
  double sd;
  double prior;
};

std::array<sim_cell, 4> sim_cells(const synth_params& p) {
  double total = 0.0;
  for (double w : p.sim_priors) total += w;
  if (std::abs(total - 1.0) > 1e-9)
    throw std::invalid_argument("sim cell priors must sum to 1");
  return {sim_cell{0, -1, p.sim_means[0], std::sqrt(p.sim_vars[0]), p.sim_priors[0]},
          sim_cell{0, +1, p.sim_means[1], std::sqrt(p.sim_vars[1]), p.sim_priors[1]},
          sim_cell{1, -1, p.sim_means[2], std::sqrt(p.sim_vars[2]), p.sim_priors[2]},
          sim_cell{1, +1, p.sim_means[3], std::sqrt(p.sim_vars[3]), p.sim_priors[3]}};
}

double softplus(double w) {
  if (w > 30.0) return w;
  if (w < -30.0) return std::exp(w);
  return std::log1p(std::exp(w));
}

// Composite-Simpson integral of softplus(-y * (b0 + b x)) against N(m, sd^2)
// over +-10 sd, accurate far below the grid resolutions used here.
double cell_logistic_risk(double b0, double b, const sim_cell& c) {
  constexpr int kIntervals = 128;  // even
  const double lo = c.mean - 10.0 * c.sd;
  const double hi = c.mean + 10.0 * c.sd;
  const double h = (hi - lo) / kIntervals;
  double acc = 0.0;
  for (int i = 0; i <= kIntervals; ++i) {
    const double x = lo + h * i;
    const double fx = softplus(-static_cast<double>(c.y) * (b0 + b * x)) *
                      normal_pdf((x - c.mean) / c.sd) / c.sd;
    const double wgt = (i == 0 || i == kIntervals) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
    acc += wgt * fx;
  }
  return acc * h / 3.0;
}

double cell_positive_prob(double b0, double b, const sim_cell& c) {
  if (b == 0.0) return b0 > 0.0 ? 1.0 : 0.0;
  const double cut = -b0 / b;  // f > 0 iff b x > -b0
  const double t = (cut - c.mean) / c.sd;
  return b > 0.0 ? 1.0 - normal_cdf(t) : normal_cdf(t);
}

}  // namespace

double sim_population_di(double b0, double b, const synth_params& p) {
  const auto cells = sim_cells(p);
  double num[2] = {0.0, 0.0}, den[2] = {0.0, 0.0};
  for (const auto& c : cells) {
    num[c.z] += c.prior * cell_positive_prob(b0, b, c);
    den[c.z] += c.prior;
  }
  if (den[0] == 0.0 || den[1] == 0.0)
    throw std::invalid_argument("sim_population_di: a group has zero prior mass");
  return std::abs(num[0] / den[0] - num[1] / den[1]);
}

double sim_population_risk(double b0, double b, const synth_params& p) {
  double r = 0.0;
  for (const auto& c : sim_cells(p)) r += c.prior * cell_logistic_risk(b0, b, c);
  return r;
}

double sim_population_accuracy(double b0, double b, const synth_params& p) {
  double a = 0.0;
  for (const auto& c : sim_cells(p)) {
    const double pr = cell_positive_prob(b0, b, c);
    a += c.prior * (c.y == 1 ? pr : 1.0 - pr);
  }
  return a;
}

sim_optimum sim_constrained_optimum(const synth_params& p, double alpha, double range,
                                    int coarse_res) {
  if (!(range > 0.0) || coarse_res < 11)
    throw std::invalid_argument("sim_constrained_optimum: bad search grid");
  sim_optimum best;
  best.risk = kInf;
  auto consider = [&](double b0, double b) {
    if (sim_population_di(b0, b, p) > alpha) return;
    const double r = sim_population_risk(b0, b, p);
    if (r < best.risk) best = {b0, b, r, sim_population_di(b0, b, p)};
  };
  for (int i = 0; i < coarse_res; ++i) {
    const double b0 = -range + 2.0 * range * i / (coarse_res - 1);
    for (int j = 0; j < coarse_res; ++j) consider(b0, -range + 2.0 * range * j / (coarse_res - 1));
  }
  if (best.risk == kInf)
    throw std::runtime_error(
        "sim_constrained_optimum: no grid point satisfies the fairness level (infeasible)");
  double scale = 2.0 * range / (coarse_res - 1);
  for (int stage = 0; stage < 3; ++stage) {
    const sim_optimum center = best;
    for (int i = -12; i <= 12; ++i)
      for (int j = -12; j <= 12; ++j)
        consider(center.b0 + scale * i / 10.0, center.b + scale * j / 10.0);
    scale /= 10.0;
  }
  return best;
}

synth_params convergence_config::skewed_sim_params() {
  synth_params p;
  p.sim_priors = {0.30, 0.20, 0.20, 0.30};
  return p;
}

void convergence_config::validate() const {
  if (n_values.empty()) throw std::invalid_argument("simulate_convergence: no sample sizes");
  for (std::size_t i = 0; i + 1 < n_values.size(); ++i)
    if (n_values[i] >= n_values[i + 1])
      throw std::invalid_argument("simulate_convergence: n_values must be strictly ascending");
  if (seeds < 1) throw std::invalid_argument("simulate_convergence: seeds must be >= 1");
  if (!(alpha > 0.0)) throw std::invalid_argument("simulate_convergence: alpha must be > 0");
  if (!(tau > 0.0)) throw std::invalid_argument("simulate_convergence: tau must be > 0");
  if (epochs < 1) throw std::invalid_argument("simulate_convergence: epochs must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("simulate_convergence: lr must be > 0");
  if (eval_mc < 1000) throw std::invalid_argument("simulate_convergence: eval_mc too small");
  if (!(margin_scale >= 0.0))
    throw std::invalid_argument("simulate_convergence: margin_scale must be >= 0");
  for (double l : lambda_grid)
    if (!(l >= 0.0)) throw std::invalid_argument("simulate_convergence: lambda must be >= 0");
}

std::vector<double> default_lambda_grid() {
  std::vector<double> grid{0.0};
  const double lo = 0.01, hi = 30.0;
  const int k = 24;
  for (int i = 0; i < k; ++i)
    grid.push_back(lo * std::pow(hi / lo, static_cast<double>(i) / (k - 1)));
  return grid;
}

std::vector<convergence_row> simulate_convergence(const convergence_config& cfg) {
  cfg.validate();
  std::vector<double> lambdas = cfg.lambda_grid.empty() ? default_lambda_grid() : cfg.lambda_grid;
  std::sort(lambdas.begin(), lambdas.end());

  const sim_optimum star = sim_constrained_optimum(cfg.params, cfg.alpha);

  // Shared Monte-Carlo evaluation set for the risk estimates.
  std::vector<double> ex(static_cast<std::size_t>(cfg.eval_mc));
  std::vector<int> ey(static_cast<std::size_t>(cfg.eval_mc));
  {
    rng g = rng(cfg.seed).substream("eval-set");
    const auto cells = sim_cells(cfg.params);
    std::vector<double> priors;
    for (const auto& c : cells) priors.push_back(c.prior);
    for (int i = 0; i < cfg.eval_mc; ++i) {
      const std::size_t cell = g.categorical(priors);
      ex[static_cast<std::size_t>(i)] = g.normal(cells[cell].mean, cells[cell].sd);
      ey[static_cast<std::size_t>(i)] = cells[cell].y;
    }
  }
  auto eval_risk = [&](double b0, double b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < ex.size(); ++i)
      acc += softplus(-static_cast<double>(ey[i]) * (b0 + b * ex[i]));
    return acc / static_cast<double>(ex.size());
  };
  const double star_risk = eval_risk(star.b0, star.b);

  std::vector<convergence_row> out;
  for (std::size_t ni = 0; ni < cfg.n_values.size(); ++ni) {
    const std::size_t n = cfg.n_values[ni];
    const double margin = cfg.margin_scale / std::sqrt(static_cast<double>(n));
    std::vector<double> excess, dev;

    for (int s = 0; s < cfg.seeds; ++s) {
      const std::uint64_t cell_tag = ni * 1000 + static_cast<std::uint64_t>(s);
      const std::uint64_t data_seed = rng(cfg.seed).substream("train-data", cell_tag).seed();
      const dataset data = synth(synth_kind::convergence_sim, n, data_seed, cfg.params);

      train_config tc;
      tc.arch = model::arch::linear;
      tc.epochs = cfg.epochs;
      tc.lr = cfg.lr;
      tc.surrogate = {surrogate_kind::slide, cfg.tau};
      tc.constraint.crit = criterion::di;
      tc.constraint.alpha = cfg.alpha;
      tc.seed = rng(cfg.seed).substream("train", cell_tag).seed();

      scored_batch tb;
      tb.y = data.y;
      tb.z = data.z;
      const surrogate_spec ind{surrogate_kind::indicator, cfg.tau};

      double sel_b0 = 0.0, sel_b = 0.0;
      bool found = false;
      double fallback_di = kInf, fb_b0 = 0.0, fb_b = 0.0;
      for (double lam : lambdas) {
        tc.lambda = lam;
        const train_result r = train_penalized(data, tc, 0);
        const double slope = r.m.theta[0], intercept = r.m.theta[1];
        tb.f = r.m.forward(data.X);
        const double emp_di = empirical_group_constraint(tb, criterion::di, ind);
        if (emp_di < fallback_di) {
          fallback_di = emp_di;
          fb_b0 = intercept;
          fb_b = slope;
        }
        if (emp_di <= cfg.alpha - margin) {
          sel_b0 = intercept;
          sel_b = slope;
          found = true;
          break;  // lambdas ascend; the first feasible one is the smallest
        }
      }
      if (!found) {
        sel_b0 = fb_b0;
        sel_b = fb_b;
      }

      excess.push_back(eval_risk(sel_b0, sel_b) - star_risk);
      dev.push_back(std::abs(sim_population_di(sel_b0, sel_b, cfg.params) - cfg.alpha));
    }

    auto median = [](std::vector<double> v) {
      std::sort(v.begin(), v.end());
      const std::size_t m = v.size() / 2;
      return v.size() % 2 == 1 ? v[m] : 0.5 * (v[m - 1] + v[m]);
    };
    out.push_back({n, median(excess), median(dev)});
  }
  return out;
}

void write_convergence_csv(const std::string& path, const std::vector<convergence_row>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open convergence file for writing: " + path);
  out << "n,excess_risk_median,fairness_dev_median\n";
  for (const auto& r : rows)
    out << r.n << ',' << format_double(r.excess_risk_median) << ','
        << format_double(r.fairness_dev_median) << '\n';
  if (!out) throw std::runtime_error("failed while writing convergence file: " + path);
}

}  // namespace slide
