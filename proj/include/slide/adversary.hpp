#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "slide/dataset.hpp"
#include "slide/nn.hpp"
#include "slide/rng.hpp"

namespace slide {

// Worst-case neighbor search for the individual-fairness constraint:
// approximately maximize |f(x) - f(v)| over the L2 ball of radius epsilon
// around x, restricted to continuous coordinates. Power-iteration refinement
// of a random direction through the perturbed forward pass.
struct adversary_config {
  double epsilon = 0.1;      // L2 radius on standardized continuous features
  double xi = 0.0;           // probe scale; 0 means the 1e-6 * sqrt(d) default
  int power_iters = 1;
  std::uint64_t seed = 0;

  double xi_for_dim(std::size_t d) const;
  void validate() const;
};

// Score/gradient view of a model so the search is testable on analytic
// functions as well (score at x, gradient of the score at x).
struct score_fn {
  std::function<double(const std::vector<double>&)> value;
  std::function<std::vector<double>(const std::vector<double>&)> grad;
};

score_fn make_score_fn(const model& m);

// One adversarial input. perturbable[j] marks coordinates allowed to move;
// frozen coordinates of the result equal x exactly. The perturbed-coordinate
// displacement has L2 norm epsilon. Both signs of the final direction are
// scored and the larger |f(x) - f(v)| wins.
std::vector<double> adversarial_input(const score_fn& f, const std::vector<double>& x,
                                      const std::vector<bool>& perturbable,
                                      const adversary_config& cfg, rng& g);

// Convenience wrapper: perturbable = continuous schema columns of the dataset.
std::vector<bool> perturbable_columns(const dataset& data);

// Adversarial inputs for every row; row i uses the substream ("adversary", i)
// of cfg.seed so per-sample computations are order-independent.
matrix adversarial_batch(const model& m, const dataset& data, const adversary_config& cfg);

}  // namespace slide
