#include "slide/nn.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace slide {

model model::make_linear(int d) {
  if (d < 1) throw std::invalid_argument("model: input dimension must be >= 1");
  model m;
  m.kind = arch::linear;
  m.dim = d;
  m.hidden = 0;
  m.theta.assign(static_cast<std::size_t>(d) + 1, 0.0);
  return m;
}

model model::make_mlp(int d, int h) {
  if (d < 1) throw std::invalid_argument("model: input dimension must be >= 1");
  if (h < 1) throw std::invalid_argument("model: hidden width must be >= 1");
  model m;
  m.kind = arch::mlp;
  m.dim = d;
  m.hidden = h;
  m.theta.assign(static_cast<std::size_t>(h) * d + h + h + 1, 0.0);
  return m;
}

std::size_t model::param_count() const { return theta.size(); }

void model::init(rng& g) {
  if (kind == arch::linear) {
    double a = std::sqrt(6.0 / (dim + 1));
    for (int j = 0; j < dim; ++j) theta[j] = g.uniform(-a, a);
    theta[dim] = 0.0;
    return;
  }
  double a1 = std::sqrt(6.0 / (dim + hidden));
  double a2 = std::sqrt(6.0 / (hidden + 1));
  std::size_t k = 0;
  for (int i = 0; i < hidden; ++i)
    for (int j = 0; j < dim; ++j) theta[k++] = g.uniform(-a1, a1);
  for (int i = 0; i < hidden; ++i) theta[k++] = 0.0;  // b1
  for (int i = 0; i < hidden; ++i) theta[k++] = g.uniform(-a2, a2);
  theta[k] = 0.0;  // b2
}

double model::forward_one(const double* x) const {
  if (kind == arch::linear) {
    double s = theta[dim];
    for (int j = 0; j < dim; ++j) s += theta[j] * x[j];
    return s;
  }
  const double* W1 = theta.data();
  const double* b1 = W1 + static_cast<std::size_t>(hidden) * dim;
  const double* w2 = b1 + hidden;
  double b2 = w2[hidden];
  double s = b2;
  for (int i = 0; i < hidden; ++i) {
    double pre = b1[i];
    const double* wrow = W1 + static_cast<std::size_t>(i) * dim;
    for (int j = 0; j < dim; ++j) pre += wrow[j] * x[j];
    if (pre > 0.0) s += w2[i] * pre;
  }
  return s;
}

std::vector<double> model::forward(const matrix& X) const {
  X.check_cols(static_cast<std::size_t>(dim), "model::forward");
  std::vector<double> out(X.rows);
  for (std::size_t i = 0; i < X.rows; ++i) out[i] = forward_one(X.row(i));
  return out;
}

void model::backward_acc(const matrix& X, const std::vector<double>& upstream,
                         std::vector<double>& grad) const {
  X.check_cols(static_cast<std::size_t>(dim), "model::backward");
  if (upstream.size() != X.rows)
    throw std::invalid_argument("model::backward: upstream length " +
                                std::to_string(upstream.size()) + " != rows " +
                                std::to_string(X.rows));
  if (grad.size() != theta.size())
    throw std::invalid_argument("model::backward: gradient buffer size mismatch");

  if (kind == arch::linear) {
    for (std::size_t i = 0; i < X.rows; ++i) {
      double u = upstream[i];
      if (u == 0.0) continue;
      const double* x = X.row(i);
      for (int j = 0; j < dim; ++j) grad[j] += u * x[j];
      grad[dim] += u;
    }
    return;
  }

  const double* W1 = theta.data();
  const double* b1 = W1 + static_cast<std::size_t>(hidden) * dim;
  const double* w2 = b1 + hidden;
  double* gW1 = grad.data();
  double* gb1 = gW1 + static_cast<std::size_t>(hidden) * dim;
  double* gw2 = gb1 + hidden;
  double* gb2 = gw2 + hidden;

  for (std::size_t i = 0; i < X.rows; ++i) {
    double u = upstream[i];
    if (u == 0.0) continue;
    const double* x = X.row(i);
    *gb2 += u;
    for (int h = 0; h < hidden; ++h) {
      double pre = b1[h];
      const double* wrow = W1 + static_cast<std::size_t>(h) * dim;
      for (int j = 0; j < dim; ++j) pre += wrow[j] * x[j];
      if (pre > 0.0) {
        gw2[h] += u * pre;
        double back = u * w2[h];
        double* grow = gW1 + static_cast<std::size_t>(h) * dim;
        for (int j = 0; j < dim; ++j) grow[j] += back * x[j];
        gb1[h] += back;
      }
    }
  }
}

std::vector<double> model::backward(const matrix& X, const std::vector<double>& upstream) const {
  std::vector<double> grad(theta.size(), 0.0);
  backward_acc(X, upstream, grad);
  return grad;
}

std::vector<double> model::input_grad(const double* x) const {
  std::vector<double> g(dim, 0.0);
  if (kind == arch::linear) {
    for (int j = 0; j < dim; ++j) g[j] = theta[j];
    return g;
  }
  const double* W1 = theta.data();
  const double* b1 = W1 + static_cast<std::size_t>(hidden) * dim;
  const double* w2 = b1 + hidden;
  for (int h = 0; h < hidden; ++h) {
    double pre = b1[h];
    const double* wrow = W1 + static_cast<std::size_t>(h) * dim;
    for (int j = 0; j < dim; ++j) pre += wrow[j] * x[j];
    if (pre > 0.0)
      for (int j = 0; j < dim; ++j) g[j] += w2[h] * wrow[j];
  }
  return g;
}

void model::check_finite(const char* context) const {
  for (std::size_t k = 0; k < theta.size(); ++k)
    if (!std::isfinite(theta[k]))
      throw std::runtime_error(std::string(context) + ": non-finite parameter at index " +
                               std::to_string(k));
}

std::string to_string(model::arch a) {
  return a == model::arch::linear ? "linear" : "mlp";
}

model::arch arch_from_string(const std::string& s) {
  if (s == "linear") return model::arch::linear;
  if (s == "mlp") return model::arch::mlp;
  throw std::invalid_argument("unknown architecture: \"" + s + "\"");
}

loss_grad logistic_loss(const std::vector<double>& scores, const std::vector<int>& y) {
  if (scores.size() != y.size())
    throw std::invalid_argument("logistic_loss: scores/labels length mismatch");
  std::size_t n = scores.size();
  if (n == 0) throw std::invalid_argument("logistic_loss: empty batch");
  loss_grad out;
  out.dscore.resize(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (y[i] != 1 && y[i] != -1)
      throw std::invalid_argument("logistic_loss: label must be -1 or +1, got " +
                                  std::to_string(y[i]));
    double t = -static_cast<double>(y[i]) * scores[i];
    // softplus(t) = log(1 + e^t), computed without overflow on either side
    double sp = t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
    total += sp;
    double sig = t > 0.0 ? 1.0 / (1.0 + std::exp(-t)) : std::exp(t) / (1.0 + std::exp(t));
    out.dscore[i] = -static_cast<double>(y[i]) * sig / static_cast<double>(n);
  }
  out.loss = total / static_cast<double>(n);
  return out;
}

double adam::lr_at(long epoch) const {
  return base_lr * std::pow(0.5, static_cast<double>(epoch / 500));
}

void adam::update(std::vector<double>& theta, const std::vector<double>& grad, long epoch) {
  if (grad.size() != theta.size() || m.size() != theta.size())
    throw std::invalid_argument("adam::update: shape mismatch");
  for (std::size_t k = 0; k < grad.size(); ++k)
    if (!std::isfinite(grad[k]))
      throw std::runtime_error("adam::update: non-finite gradient at parameter index " +
                               std::to_string(k));
  ++step;
  double lr = lr_at(epoch);
  double c1 = 1.0 - std::pow(beta1, static_cast<double>(step));
  double c2 = 1.0 - std::pow(beta2, static_cast<double>(step));
  for (std::size_t k = 0; k < grad.size(); ++k) {
    m[k] = beta1 * m[k] + (1.0 - beta1) * grad[k];
    v[k] = beta2 * v[k] + (1.0 - beta2) * grad[k] * grad[k];
    double mh = m[k] / c1;
    double vh = v[k] / c2;
    theta[k] -= lr * mh / (std::sqrt(vh) + eps);
  }
}

std::string model_to_json(const model& m, std::uint64_t seed) {
  nlohmann::json j;
  j["architecture"] = to_string(m.kind);
  j["input_dim"] = m.dim;
  j["hidden_width"] = m.hidden;
  j["seed"] = seed;
  if (m.kind == model::arch::linear) {
    j["weights"]["w"] = std::vector<double>(m.theta.begin(), m.theta.begin() + m.dim);
    j["weights"]["b"] = m.theta[m.dim];
  } else {
    std::size_t hd = static_cast<std::size_t>(m.hidden) * m.dim;
    j["weights"]["W1"] = std::vector<double>(m.theta.begin(), m.theta.begin() + hd);
    j["weights"]["b1"] =
        std::vector<double>(m.theta.begin() + hd, m.theta.begin() + hd + m.hidden);
    j["weights"]["w2"] = std::vector<double>(m.theta.begin() + hd + m.hidden,
                                             m.theta.begin() + hd + 2 * m.hidden);
    j["weights"]["b2"] = m.theta.back();
  }
  return j.dump(2);
}

void save_model_json(const model& m, const std::string& path, std::uint64_t seed) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  out << model_to_json(m, seed) << "\n";
}

model model_from_json(const std::string& text, std::uint64_t* seed_out) {
  nlohmann::json j = nlohmann::json::parse(text);
  model::arch a = arch_from_string(j.at("architecture").get<std::string>());
  int d = j.at("input_dim").get<int>();
  int h = j.at("hidden_width").get<int>();
  model m = a == model::arch::linear ? model::make_linear(d) : model::make_mlp(d, h);
  const auto& w = j.at("weights");
  if (a == model::arch::linear) {
    auto wv = w.at("w").get<std::vector<double>>();
    if (wv.size() != static_cast<std::size_t>(d))
      throw std::runtime_error("model checkpoint: weight vector length mismatch");
    for (int k = 0; k < d; ++k) m.theta[k] = wv[k];
    m.theta[d] = w.at("b").get<double>();
  } else {
    auto W1 = w.at("W1").get<std::vector<double>>();
    auto b1 = w.at("b1").get<std::vector<double>>();
    auto w2 = w.at("w2").get<std::vector<double>>();
    std::size_t hd = static_cast<std::size_t>(h) * d;
    if (W1.size() != hd || b1.size() != static_cast<std::size_t>(h) ||
        w2.size() != static_cast<std::size_t>(h))
      throw std::runtime_error("model checkpoint: layer shape mismatch");
    std::size_t k = 0;
    for (double v : W1) m.theta[k++] = v;
    for (double v : b1) m.theta[k++] = v;
    for (double v : w2) m.theta[k++] = v;
    m.theta[k] = w.at("b2").get<double>();
  }
  if (seed_out) *seed_out = j.value("seed", 0ull);
  m.check_finite("model checkpoint");
  return m;
}

model load_model_json(const std::string& path, std::uint64_t* seed_out) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open model checkpoint: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return model_from_json(text, seed_out);
}

}  // namespace slide
