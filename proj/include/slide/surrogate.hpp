#pragma once

#include <stdexcept>
#include <string>

namespace slide {

// Scalar relaxations of the step indicator I(z > 0), parameterized by the
// ramp width tau. "slide" ramps on (0, tau] and lower-bounds the indicator;
// "opposite_slide" ramps on (-tau, 0] and upper-bounds it; "psi" is the same
// function as opposite_slide. "hinge" is the classical (1+z)+ upper bound.
enum class surrogate_kind {
  indicator,
  hinge,
  slide,
  opposite_slide,
  psi,
  linear,
};

struct surrogate_spec {
  surrogate_kind kind = surrogate_kind::slide;
  double tau = 0.1;  // required > 0 for slide/opposite_slide/psi

  bool uses_tau() const {
    return kind == surrogate_kind::slide || kind == surrogate_kind::opposite_slide ||
           kind == surrogate_kind::psi;
  }
  void validate() const {
    if (uses_tau() && !(tau > 0.0))
      throw std::invalid_argument("surrogate_spec: tau must be > 0 for kind " +
                                  std::string(surrogate_name(kind)));
  }
  static const char* surrogate_name(surrogate_kind k);
};

surrogate_kind surrogate_from_string(const std::string& s);
const char* to_string(surrogate_kind k);

inline double pos_part(double z) { return z > 0.0 ? z : 0.0; }

// slide(z) = (z/tau) on (0, tau], 1 above, 0 at and below 0.
inline double slide_value(double z, double tau) {
  if (z <= 0.0) return 0.0;
  if (z <= tau) return z / tau;
  return 1.0;
}

// opposite_slide(z) = slide(z + tau): ramps over (-tau, 0], 1 for z > 0.
// Keeps the sandwich slide(z) <= I(z>0) <= opposite_slide(z) pointwise.
inline double opposite_slide_value(double z, double tau) {
  if (z > 0.0) return 1.0;
  if (z <= -tau) return 0.0;
  return (z + tau) / tau;
}

inline double surrogate_value(const surrogate_spec& spec, double z) {
  switch (spec.kind) {
    case surrogate_kind::indicator:
      return z > 0.0 ? 1.0 : 0.0;
    case surrogate_kind::hinge:
      return pos_part(1.0 + z);
    case surrogate_kind::slide:
      return slide_value(z, spec.tau);
    case surrogate_kind::opposite_slide:
    case surrogate_kind::psi:
      return opposite_slide_value(z, spec.tau);
    case surrogate_kind::linear:
      return z;
  }
  throw std::logic_error("surrogate_value: unreachable");
}

// Subgradients; 0 at every kink so penalty gradients stay bounded and
// deterministic. indicator reports 0 everywhere (not trainable).
inline double surrogate_grad(const surrogate_spec& spec, double z) {
  switch (spec.kind) {
    case surrogate_kind::indicator:
      return 0.0;
    case surrogate_kind::hinge:
      return z > -1.0 ? 1.0 : 0.0;
    case surrogate_kind::slide:
      return (z > 0.0 && z < spec.tau) ? 1.0 / spec.tau : 0.0;
    case surrogate_kind::opposite_slide:
    case surrogate_kind::psi:
      return (z > -spec.tau && z < 0.0) ? 1.0 / spec.tau : 0.0;
    case surrogate_kind::linear:
      return 1.0;
  }
  throw std::logic_error("surrogate_grad: unreachable");
}

// Difference-of-convex split: slide(z) = pos(z)/tau - pos(z - tau)/tau.
// slide_convex_part is the convex term, slide_concave_term the subtracted one.
inline double slide_convex_part(double z, double tau) { return pos_part(z) / tau; }
inline double slide_concave_term(double z, double tau) { return pos_part(z - tau) / tau; }
inline double slide_convex_part_grad(double z, double tau) {
  return z > 0.0 ? 1.0 / tau : 0.0;
}
inline double slide_concave_term_grad(double z, double tau) {
  return z > tau ? 1.0 / tau : 0.0;
}

}  // namespace slide
