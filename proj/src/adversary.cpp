#include "slide/adversary.hpp"

#include <cmath>
#include <stdexcept>

namespace slide {

void adversary_config::validate() const {
  if (!(epsilon > 0.0)) throw std::invalid_argument("adversary: epsilon must be > 0");
  if (xi < 0.0) throw std::invalid_argument("adversary: xi must be >= 0");
  if (power_iters < 1) throw std::invalid_argument("adversary: power_iters must be >= 1");
}

double adversary_config::xi_for_dim(std::size_t d) const {
  return xi > 0.0 ? xi : 1e-6 * std::sqrt(static_cast<double>(d));
}

score_fn make_score_fn(const model& m) {
  score_fn f;
  f.value = [&m](const std::vector<double>& x) { return m.forward_one(x.data()); };
  f.grad = [&m](const std::vector<double>& x) { return m.input_grad(x.data()); };
  return f;
}

namespace {

// Project onto the perturbable coordinates and normalize; returns false when
// the masked vector is (numerically) zero.
bool mask_normalize(std::vector<double>& u, const std::vector<bool>& perturbable) {
  double norm2 = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    if (!perturbable[j]) u[j] = 0.0;
    norm2 += u[j] * u[j];
  }
  if (norm2 <= 0.0 || !std::isfinite(norm2)) return false;
  double inv = 1.0 / std::sqrt(norm2);
  for (double& v : u) v *= inv;
  return true;
}

}  // namespace

std::vector<double> adversarial_input(const score_fn& f, const std::vector<double>& x,
                                      const std::vector<bool>& perturbable,
                                      const adversary_config& cfg, rng& g) {
  cfg.validate();
  if (perturbable.size() != x.size())
    throw std::invalid_argument("adversary: perturbable mask length mismatch");
  std::size_t n_free = 0;
  for (bool b : perturbable) n_free += b ? 1 : 0;
  if (n_free == 0)
    throw std::runtime_error("adversary: input has no perturbable (continuous) coordinates");

  double xi = cfg.xi_for_dim(x.size());
  double f0 = f.value(x);

  // random unit start on the perturbable coordinates
  std::vector<double> u(x.size(), 0.0);
  for (std::size_t j = 0; j < x.size(); ++j)
    if (perturbable[j]) u[j] = g.normal01();
  if (!mask_normalize(u, perturbable)) {
    // astronomically unlikely; fall back to the first free axis
    for (std::size_t j = 0; j < x.size(); ++j)
      if (perturbable[j]) {
        u[j] = 1.0;
        break;
      }
  }

  std::vector<double> probe(x.size());
  for (int it = 0; it < cfg.power_iters; ++it) {
    for (std::size_t j = 0; j < x.size(); ++j) probe[j] = x[j] + xi * u[j];
    double fp = f.value(probe);
    double sign = fp > f0 ? 1.0 : (fp < f0 ? -1.0 : 1.0);
    std::vector<double> grad = f.grad(probe);
    for (double& v : grad) v *= sign;
    if (mask_normalize(grad, perturbable)) u = std::move(grad);
    // zero gradient (e.g. constant model): keep the current direction
  }

  // resolve the sign ambiguity of |.|: try both endpoints, keep the larger gap
  std::vector<double> vp(x.size()), vm(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) {
    vp[j] = x[j] + cfg.epsilon * u[j];
    vm[j] = x[j] - cfg.epsilon * u[j];
  }
  double dp = std::abs(f.value(vp) - f0);
  double dm = std::abs(f.value(vm) - f0);
  return dp >= dm ? vp : vm;
}

std::vector<bool> perturbable_columns(const dataset& data) {
  std::vector<bool> mask(data.d());
  for (std::size_t j = 0; j < data.d(); ++j)
    mask[j] = data.schema[j].kind == column_kind::continuous;
  return mask;
}

matrix adversarial_batch(const model& m, const dataset& data, const adversary_config& cfg) {
  cfg.validate();
  std::vector<bool> mask = perturbable_columns(data);
  score_fn f = make_score_fn(m);
  matrix out(data.n(), data.d());
  rng base(cfg.seed);
  std::vector<double> x(data.d());
  for (std::size_t i = 0; i < data.n(); ++i) {
    const double* row = data.X.row(i);
    x.assign(row, row + data.d());
    rng gi = base.substream("adversary", i);
    std::vector<double> v = adversarial_input(f, x, mask, cfg, gi);
    std::copy(v.begin(), v.end(), out.row(i));
  }
  return out;
}

}  // namespace slide
