#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "slide/matrix.hpp"
#include "slide/rng.hpp"

namespace slide {

// Score models: linear(d) or a single-hidden-layer ReLU MLP with one real
// output. Parameters live in one flat vector so the optimizer and the
// finite-difference checks can treat every model uniformly.
//
// Flat layouts:
//   linear(d):  [w_0..w_{d-1}, b]
//   mlp(d, h):  [W1 (h x d, row-major), b1 (h), w2 (h), b2]
struct model {
  enum class arch { linear, mlp };

  arch kind = arch::linear;
  int dim = 0;
  int hidden = 0;  // 0 for linear
  std::vector<double> theta;

  static model make_linear(int d);
  static model make_mlp(int d, int h);

  std::size_t param_count() const;

  // Uniform(-a, a) weights with a = sqrt(6 / (fan_in + fan_out)); biases 0.
  void init(rng& g);

  double forward_one(const double* x) const;
  std::vector<double> forward(const matrix& X) const;

  // Gradient of sum_i upstream[i] * f(x_i) w.r.t. theta. ReLU subgradient at
  // exactly 0 is 0. Accumulates into grad (which must be param_count() long).
  void backward_acc(const matrix& X, const std::vector<double>& upstream,
                    std::vector<double>& grad) const;
  std::vector<double> backward(const matrix& X, const std::vector<double>& upstream) const;

  // d f(x) / d x at a single input (needed by the adversarial perturbation).
  std::vector<double> input_grad(const double* x) const;

  void check_finite(const char* context) const;
};

std::string to_string(model::arch a);
model::arch arch_from_string(const std::string& s);

// Mean logistic loss over labels y in {-1,+1} with per-sample score gradient.
// loss = (1/n) sum log(1 + exp(-y_i f_i)) in softplus form, stable for large
// |y f|; dscore[i] = -y_i * sigmoid(-y_i f_i) / n.
struct loss_grad {
  double loss = 0.0;
  std::vector<double> dscore;
};
loss_grad logistic_loss(const std::vector<double>& scores, const std::vector<int>& y);

// Adam with bias correction and step-decay learning rate:
// lr(epoch) = base * 0.5^floor(epoch / 500).
struct adam {
  double base_lr;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::vector<double> m, v;
  long step = 0;

  adam(std::size_t n_params, double lr) : base_lr(lr), m(n_params, 0.0), v(n_params, 0.0) {}

  double lr_at(long epoch) const;
  void update(std::vector<double>& theta, const std::vector<double>& grad, long epoch);
};

// Checkpoint I/O. JSON with row-major weight arrays; doubles are emitted with
// shortest round-trip precision so save/load is bit-exact.
void save_model_json(const model& m, const std::string& path, std::uint64_t seed);
std::string model_to_json(const model& m, std::uint64_t seed);
model model_from_json(const std::string& text, std::uint64_t* seed_out = nullptr);
model load_model_json(const std::string& path, std::uint64_t* seed_out = nullptr);

}  // namespace slide
