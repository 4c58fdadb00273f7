#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "slide/adversary.hpp"
#include "slide/constraints.hpp"
#include "slide/dataset.hpp"
#include "slide/nn.hpp"
#include "slide/surrogate.hpp"

namespace slide {

enum class train_mode { plain, hyslide, cccp };
train_mode train_mode_from_string(const std::string& s);
const char* to_string(train_mode m);

struct train_config {
  // model
  model::arch arch = model::arch::linear;
  int hidden = 8;

  // optimization
  int epochs = 2000;
  double lr = 0.5;
  double lambda = 0.0;

  // penalty
  surrogate_spec surrogate{surrogate_kind::slide, 0.1};
  bool tau_draw = false;  // tau ~ Uniform(0.01, 0.2) per restart
  constraint_spec constraint;
  adversary_config adversary;

  // protocol
  int restarts = 1;
  train_mode mode = train_mode::plain;
  std::optional<double> target_accuracy;  // fraction in [0,1]
  std::uint64_t seed = 0;

  // cccp
  int cccp_inner_epochs = 200;
  int cccp_max_outer = 10;
  double cccp_rel_tol = 1e-6;
  double cccp_inner_grad_tol = 0.0;  // >0: polish inner solves to this grad norm
  long cccp_polish_max_iters = 200000;

  void validate() const;
};

struct trajectory_row {
  int epoch = 0;
  double loss = 0.0;
  double penalty = 0.0;               // lambda * surrogate constraint
  double constraint_indicator = 0.0;  // exact constraint on the training batch
  double constraint_surrogate = 0.0;
};

struct train_result {
  model m;
  std::vector<trajectory_row> trajectory;
  int restart_index = 0;
  std::uint64_t restart_seed = 0;
  double tau_used = 0.0;
  double lambda_used = 0.0;
  double wall_seconds = 0.0;
  std::vector<double> cccp_inner_grad_norms;  // cccp mode only, one per outer iteration
};

// One training run (restart_index selects the parameter-init substream).
train_result train_penalized(const dataset& train, const train_config& cfg,
                             int restart_index = 0);
train_result train_hyslide(const dataset& train, const train_config& cfg,
                           int restart_index = 0);
train_result train_cccp(const dataset& train, const train_config& cfg, int restart_index = 0);

// Dispatch on cfg.mode.
train_result train_one(const dataset& train, const train_config& cfg, int restart_index = 0);

// cfg.restarts runs with independent init substreams (and tau draws).
std::vector<train_result> train_restarts(const dataset& train, const train_config& cfg);

// Validation accuracy (strict sign(f) > 0 rule) and the indicator-surrogate
// constraint value used for selection.
struct candidate_metrics {
  double accuracy = 0.0;
  double constraint_indicator = 0.0;
};
candidate_metrics candidate_validation_metrics(const train_result& cand, const dataset& val,
                                               const train_config& cfg);

// Keep candidates whose validation accuracy lies within +-band of
// target_accuracy (if none, only the closest-accuracy candidate); return the
// one with the smallest indicator constraint. Ties: higher accuracy, then
// lower restart seed, then input order.
std::size_t select_model(const std::vector<train_result>& candidates, const dataset& val,
                         const train_config& cfg, double target_accuracy,
                         double band = 0.01);

void write_trajectory_csv(const train_result& r, const std::string& path);

}  // namespace slide
