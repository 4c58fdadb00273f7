#pragma once

#include <optional>
#include <string>
#include <vector>

#include "slide/adversary.hpp"
#include "slide/constraints.hpp"
#include "slide/dataset.hpp"
#include "slide/nn.hpp"
#include "slide/trainer.hpp"

namespace slide {

// Test-time metrics of one model. Percentages are in [0, 100]; balanced
// accuracy is absent when a class is missing from the data (never reported as
// 50). The surrogate-gap diagnostic is only defined for the group criterion
// and the individual criterion with adversarial scores, and is absent
// otherwise.
struct fairness_report {
  double accuracy_pct = 0.0;
  std::optional<double> balanced_accuracy_pct;
  double constraint_indicator = 0.0;
  std::optional<double> consistency_value;
  std::optional<double> m_nf;
  std::optional<double> m_ratio;
  std::optional<mnf_verdict> verdict;
  std::string metadata;
};

// sign(f) > 0 classification accuracy as a fraction in [0, 1].
double accuracy_fraction(const model& m, const dataset& data);

// Fraction of rows whose predicted label is unchanged when the listed columns
// are switched between their two states (all listed columns together). Each
// column must be a binary continuous column (values in {0,1}) or one side of
// a two-category one-hot pair.
double consistency(const model& m, const dataset& data,
                   const std::vector<std::string>& flip_columns);

// Full report. UIF evaluation needs an adversary configuration; flip_columns
// empty leaves the consistency field absent.
fairness_report evaluate(const model& m, const dataset& test, const constraint_spec& spec,
                         double tau, const std::vector<std::string>& flip_columns = {},
                         const adversary_config* adversary = nullptr,
                         double mnf_threshold = 0.10);

std::string fairness_report_to_json(const fairness_report& r);

// ---- Pareto sweep -----------------------------------------------------------

struct pareto_point {
  double lambda = 0.0;
  double acc_mean = 0.0, acc_se = 0.0;            // fractions in [0, 1]
  double fairness_mean = 0.0, fairness_se = 0.0;  // exact constraint on test
  bool dominated = false;
  bool missing = false;  // training aborted for this lambda cell
  std::string error;
};

// Trains base.restarts models per lambda on splits.train, averages test
// accuracy and the exact constraint over restarts, and marks dominated points
// (another point at least as accurate and at least as fair, one strictly).
// A training failure marks the cell missing and records the reason.
std::vector<pareto_point> pareto_sweep(const split_result& splits, const train_config& base,
                                       const std::vector<double>& lambda_grid);

// Straightforward O(k^2) dominance pass over (accuracy up, fairness down).
void mark_dominated(std::vector<pareto_point>& points);

void write_pareto_csv(const std::string& path, const std::vector<pareto_point>& points);

}  // namespace slide
