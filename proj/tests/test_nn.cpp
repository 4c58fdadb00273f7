#include <cmath>
#include <cstdio>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "doctest.h"
#include "slide/matrix.hpp"
#include "slide/nn.hpp"
#include "slide/rng.hpp"

using namespace slide;

namespace {

matrix random_matrix(rng& g, std::size_t n, std::size_t d, double lo = -2.0, double hi = 2.0) {
  matrix X(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) X.at(i, j) = g.uniform(lo, hi);
  return X;
}

}  // namespace

TEST_CASE("linear forward is the affine score") {
  model m = model::make_linear(2);
  m.theta = {2.0, -3.0, 0.5};
  double x[2] = {1.0, 2.0};
  CHECK(m.forward_one(x) == -3.5);

  matrix X(3, 2);
  X.at(0, 0) = 1.0;
  X.at(0, 1) = 2.0;
  X.at(1, 0) = 0.0;
  X.at(1, 1) = 0.0;
  X.at(2, 0) = -1.0;
  X.at(2, 1) = 1.0;
  auto f = m.forward(X);
  REQUIRE(f.size() == 3);
  CHECK(f[0] == -3.5);
  CHECK(f[1] == 0.5);
  CHECK(f[2] == -4.5);
}

TEST_CASE("mlp forward matches a hand-evaluated network") {
  model m = model::make_mlp(2, 2);
  // W1 rows [1,-1],[0.5,2]; b1 = [0,-1]; w2 = [1,-2]; b2 = 0.25
  m.theta = {1.0, -1.0, 0.5, 2.0, 0.0, -1.0, 1.0, -2.0, 0.25};
  double x[2] = {2.0, 3.0};
  // hidden: relu(2 - 3) = 0, relu(1 + 6 - 1) = 6; out: 0 - 12 + 0.25
  CHECK(m.forward_one(x) == -11.75);
  CHECK(m.param_count() == 9);
}

TEST_CASE("backward matches central finite differences") {
  rng g(411);
  for (auto make : {+[] { return model::make_linear(3); }, +[] { return model::make_mlp(3, 5); }}) {
    model m = make();
    m.init(g);
    matrix X = random_matrix(g, 7, 3);
    std::vector<double> up(7);
    for (auto& u : up) u = g.uniform(-1.0, 1.0);

    auto loss_of = [&](const model& mm) {
      auto f = mm.forward(X);
      double s = 0.0;
      for (std::size_t i = 0; i < f.size(); ++i) s += up[i] * f[i];
      return s;
    };
    auto grad = m.backward(X, up);
    REQUIRE(grad.size() == m.param_count());

    const double h = 1e-5;
    for (std::size_t k = 0; k < m.param_count(); ++k) {
      model mp = m, mm2 = m;
      mp.theta[k] += h;
      mm2.theta[k] -= h;
      double fd = (loss_of(mp) - loss_of(mm2)) / (2 * h);
      CHECK(grad[k] == doctest::Approx(fd).epsilon(1e-5));
    }
  }
}

TEST_CASE("relu subgradient at exactly zero is zero") {
  model m = model::make_mlp(1, 1);
  // pre-activation = 1*x + 0, so x = 0 lands exactly on the kink
  m.theta = {1.0, 0.0, 3.0, 0.0};  // W1=[1], b1=[0], w2=[3], b2=0
  matrix X(1, 1);
  X.at(0, 0) = 0.0;
  auto grad = m.backward(X, {1.0});
  CHECK(grad[0] == 0.0);  // dW1: blocked by the dead unit
  CHECK(grad[1] == 0.0);  // db1
  CHECK(grad[2] == 0.0);  // dw2: hidden activation is 0
  CHECK(grad[3] == 1.0);  // db2 always flows
}

TEST_CASE("input gradient matches finite differences") {
  rng g(412);
  model m = model::make_mlp(4, 6);
  m.init(g);
  double x[4];
  for (double& v : x) v = g.uniform(-1.0, 1.0);
  auto gx = m.input_grad(x);
  REQUIRE(gx.size() == 4);
  const double h = 1e-6;
  for (int j = 0; j < 4; ++j) {
    double xp[4], xm[4];
    for (int t = 0; t < 4; ++t) xp[t] = xm[t] = x[t];
    xp[j] += h;
    xm[j] -= h;
    double fd = (m.forward_one(xp) - m.forward_one(xm)) / (2 * h);
    CHECK(gx[j] == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("logistic loss closed forms and stability") {
  // log(1 + e) frozen to 18 digits
  auto lg = logistic_loss({-1.0}, {+1});
  CHECK(lg.loss == doctest::Approx(1.313261687518222834).epsilon(1e-15));
  // symmetric case: f = 1 with y = -1 gives the same value
  CHECK(logistic_loss({1.0}, {-1}).loss == doctest::Approx(1.313261687518222834).epsilon(1e-15));
  // f = 0 gives log 2
  CHECK(logistic_loss({0.0}, {+1}).loss == doctest::Approx(std::log(2.0)).epsilon(1e-15));

  // extreme margins must not overflow
  auto big = logistic_loss({1000.0}, {+1});
  CHECK(big.loss == 0.0);
  CHECK(std::isfinite(big.dscore[0]));
  auto neg = logistic_loss({-1000.0}, {+1});
  CHECK(neg.loss == doctest::Approx(1000.0).epsilon(1e-12));
  CHECK(neg.dscore[0] == doctest::Approx(-1.0).epsilon(1e-12));

  // dscore = -y * sigmoid(-y f) / n
  auto two = logistic_loss({0.5, -0.25}, {+1, -1});
  double s0 = 1.0 / (1.0 + std::exp(0.5));
  double s1 = 1.0 / (1.0 + std::exp(0.25));
  CHECK(two.dscore[0] == doctest::Approx(-s0 / 2).epsilon(1e-14));
  CHECK(two.dscore[1] == doctest::Approx(s1 / 2).epsilon(1e-14));
  // and the mean matches the per-sample average
  double want = 0.5 * (std::log1p(std::exp(-0.5)) + std::log1p(std::exp(-0.25)));
  CHECK(two.loss == doctest::Approx(want).epsilon(1e-14));
}

TEST_CASE("adam first step moves by lr times the gradient sign") {
  adam opt(2, 0.5);
  std::vector<double> theta{1.0, -1.0};
  opt.update(theta, {3.0, -0.5}, 0);
  // bias correction cancels on step one: delta = lr * g / (|g| + eps)
  CHECK(theta[0] == doctest::Approx(0.5).epsilon(1e-8));
  CHECK(theta[1] == doctest::Approx(-0.5).epsilon(1e-8));
  CHECK(opt.step == 1);
}

TEST_CASE("adam second step uses bias-corrected moments") {
  adam opt(1, 0.1);
  std::vector<double> theta{0.0};
  opt.update(theta, {1.0}, 0);
  opt.update(theta, {2.0}, 0);
  // replay the recursion by hand
  double m1 = 0.1 * 1.0, v1 = 0.001 * 1.0;
  double t1 = 0.0 - 0.1 * (m1 / 0.1) / (std::sqrt(v1 / 0.001) + 1e-8);
  double m2 = 0.9 * m1 + 0.1 * 2.0, v2 = 0.999 * v1 + 0.001 * 4.0;
  double c1 = 1.0 - 0.9 * 0.9, c2 = 1.0 - 0.999 * 0.999;
  double t2 = t1 - 0.1 * (m2 / c1) / (std::sqrt(v2 / c2) + 1e-8);
  CHECK(theta[0] == doctest::Approx(t2).epsilon(1e-14));
}

TEST_CASE("learning rate halves every 500 epochs") {
  adam opt(1, 0.8);
  CHECK(opt.lr_at(0) == 0.8);
  CHECK(opt.lr_at(499) == 0.8);
  CHECK(opt.lr_at(500) == 0.4);
  CHECK(opt.lr_at(999) == 0.4);
  CHECK(opt.lr_at(1000) == 0.2);
  CHECK(opt.lr_at(2500) == 0.8 * std::pow(0.5, 5));
}

TEST_CASE("adam rejects non-finite gradients, naming the coordinate") {
  adam opt(3, 0.1);
  std::vector<double> theta{0.0, 0.0, 0.0};
  std::vector<double> grad{0.0, std::numeric_limits<double>::quiet_NaN(), 0.0};
  try {
    opt.update(theta, grad, 0);
    FAIL("expected a throw");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("index 1") != std::string::npos);
  }
}

TEST_CASE("initialization is bounded, zero-biased, and seed-reproducible") {
  rng g1(77), g2(77), g3(78);
  model a = model::make_mlp(3, 8);
  model b = model::make_mlp(3, 8);
  model c = model::make_mlp(3, 8);
  a.init(g1);
  b.init(g2);
  c.init(g3);
  CHECK(a.theta == b.theta);
  CHECK(a.theta != c.theta);

  double bound1 = std::sqrt(6.0 / (3 + 8));
  double bound2 = std::sqrt(6.0 / (8 + 1));
  for (int k = 0; k < 24; ++k) CHECK(std::abs(a.theta[k]) <= bound1);
  for (int k = 24; k < 32; ++k) CHECK(a.theta[k] == 0.0);           // b1
  for (int k = 32; k < 40; ++k) CHECK(std::abs(a.theta[k]) <= bound2);  // w2
  CHECK(a.theta[40] == 0.0);                                        // b2

  model lin = model::make_linear(4);
  rng g4(79);
  lin.init(g4);
  double lb = std::sqrt(6.0 / (4 + 1));
  for (int k = 0; k < 4; ++k) CHECK(std::abs(lin.theta[k]) <= lb);
  CHECK(lin.theta[4] == 0.0);
}

TEST_CASE("checkpoint json round trip is bit exact") {
  rng g(413);
  for (auto make : {+[] { return model::make_linear(5); }, +[] { return model::make_mlp(4, 7); }}) {
    model m = make();
    m.init(g);
    m.theta[0] = 0.1 + 0.2;  // a value with a long decimal expansion
    std::string path = "roundtrip_model.json";
    save_model_json(m, path, 123456789ull);
    std::uint64_t seed = 0;
    model r = load_model_json(path, &seed);
    CHECK(seed == 123456789ull);
    CHECK(r.kind == m.kind);
    CHECK(r.dim == m.dim);
    CHECK(r.hidden == m.hidden);
    REQUIRE(r.theta.size() == m.theta.size());
    for (std::size_t k = 0; k < m.theta.size(); ++k) CHECK(r.theta[k] == m.theta[k]);
    std::remove(path.c_str());
  }
}

TEST_CASE("checkpoint loader rejects malformed and non-finite payloads") {
  CHECK_THROWS(model_from_json("{\"arch\":\"linear\"}"));
  model m = model::make_linear(2);
  m.theta = {1.0, 2.0, 3.0};
  std::string js = model_to_json(m, 1);
  std::string bad = js;
  bad.replace(bad.find("\"w\":[") + 5, 1, "n");  // makes the array unparsable
  CHECK_THROWS(model_from_json(bad));
}

TEST_CASE("check_finite names the offending parameter") {
  model m = model::make_linear(3);
  m.theta = {0.0, 0.0, 0.0, 0.0};
  m.theta[2] = std::numeric_limits<double>::infinity();
  try {
    m.check_finite("unit test");
    FAIL("expected a throw");
  } catch (const std::runtime_error& e) {
    std::string w = e.what();
    CHECK(w.find("unit test") != std::string::npos);
    CHECK(w.find("index 2") != std::string::npos);
  }
}
