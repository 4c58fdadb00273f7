#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "slide/nn.hpp"
#include "slide/rng.hpp"
#include "slide/surrogate.hpp"

namespace slide {

enum class criterion { di, eo, eqopp, uif, di_boundary, cov, if_pairwise };

criterion criterion_from_string(const std::string& s);
const char* to_string(criterion c);

struct constraint_spec {
  criterion crit = criterion::di;
  double alpha = 0.1;        // fairness level used by evaluation / feasible sets
  double gamma = 0.01;       // UIF / IF slack
  double epsilon = 0.1;      // UIF perturbation radius (consumed by the adversary)
  double tau_boundary = 0.1; // DI-boundary band width
  void validate() const;
};

// Scores of one batch plus everything the constraints condition on. f_adv is
// only present for UIF evaluation (scores at the adversarial inputs).
struct scored_batch {
  std::vector<double> f;
  std::vector<double> f_adv;  // empty unless UIF
  std::vector<int> y;
  std::vector<int> z;

  std::size_t n() const { return f.size(); }
  std::array<std::size_t, 2> group_counts() const;
};

// Per-group means of s(f): {avg over z=0, avg over z=1}. Errors on an empty group.
std::array<double, 2> group_surrogate_means(const scored_batch& b, const surrogate_spec& s);

// |gap| constraints with group conditioning. EO takes the max over y in
// {-1,+1} of the per-y gap; EqOpp conditions on y=+1 only.
double empirical_group_constraint(const scored_batch& b, criterion crit,
                                  const surrogate_spec& s);

// (1/n) sum s(|f_i - f_adv_i| - gamma).
double empirical_uif(const scored_batch& b, double gamma, const surrogate_spec& s);

// Group gap of band membership, s(f) - s(f - tau_boundary) per sample.
double di_boundary_constraint(const scored_batch& b, double tau_boundary,
                              const surrogate_spec& s);

// |(1/n) sum (z_i - mean z) f_i|; surrogate-free.
double covariance_constraint(const scored_batch& b);

// Dispatcher used by the trainer and evaluation. if_pairwise is population-only
// and rejected here.
double empirical_constraint(const scored_batch& b, const constraint_spec& spec,
                            const surrogate_spec& s);

// Value plus subgradient with respect to the scores (and adversarial scores
// for UIF). Absolute values are subdifferentiated with the sign of the current
// gap (0 at a tie); EO differentiates through the max-achieving y (+1 on ties).
struct constraint_grad {
  double value = 0.0;
  std::vector<double> df;
  std::vector<double> df_adv;  // empty unless UIF
};
constraint_grad constraint_with_grad(const scored_batch& b, const constraint_spec& spec,
                                     const surrogate_spec& s);

// ---- Surrogate-gap diagnostic ----------------------------------------------
//
// M_nf bounds the gap between the slide-relaxed constraint and the exact one
// using the opposite slide. UIF form: |phi_{n,-tau} - phi_{n,tau}| / tau.
// DI form: sum over groups of |avg(opposite_slide) - avg(slide)| / tau, plus
// |phi_{n,tau} - phi_n(indicator)| / tau.
// M_ratio = M_nf * tau / phi_n(indicator). The abort verdict is advisory.
enum class mnf_verdict { keep, abort };

struct mnf_report {
  double m_nf = 0.0;
  double m_ratio = 0.0;  // +inf when phi_n(indicator) == 0
  mnf_verdict verdict = mnf_verdict::keep;
};

mnf_report mnf_diagnostic(const scored_batch& b, const constraint_spec& spec, double tau,
                          double ratio_threshold = 0.10);

// ---- Population (Monte-Carlo) constraints -----------------------------------

struct sample_draw {
  std::vector<double> x;
  int z = 0;
};
using population_sampler = std::function<sample_draw(rng&)>;

struct mc_estimate {
  double value = 0.0;
  double se = 0.0;
};

// Estimates the population constraint of a model under a sampling law.
// if_pairwise draws independent pairs (X, X') and evaluates
// s(|f(X) - f(X')| - ||X - X'||_2 - gamma); group criteria draw (X, Z).
// UIF is not supported here (its inner maximization is the adversary's job).
mc_estimate mc_population_constraint(const model& m, const population_sampler& sampler,
                                     const constraint_spec& spec, const surrogate_spec& s,
                                     int n_mc, std::uint64_t seed);

}  // namespace slide
