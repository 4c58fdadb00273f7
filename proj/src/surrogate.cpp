#include "slide/surrogate.hpp"

namespace slide {

const char* to_string(surrogate_kind k) {
  switch (k) {
    case surrogate_kind::indicator: return "indicator";
    case surrogate_kind::hinge: return "hinge";
    case surrogate_kind::slide: return "slide";
    case surrogate_kind::opposite_slide: return "opposite_slide";
    case surrogate_kind::psi: return "psi";
    case surrogate_kind::linear: return "linear";
  }
  throw std::logic_error("to_string(surrogate_kind): unreachable");
}

const char* surrogate_spec::surrogate_name(surrogate_kind k) { return to_string(k); }

surrogate_kind surrogate_from_string(const std::string& s) {
  if (s == "indicator") return surrogate_kind::indicator;
  if (s == "hinge") return surrogate_kind::hinge;
  if (s == "slide") return surrogate_kind::slide;
  if (s == "opposite_slide") return surrogate_kind::opposite_slide;
  if (s == "psi") return surrogate_kind::psi;
  if (s == "linear") return surrogate_kind::linear;
  throw std::invalid_argument("unknown surrogate kind: \"" + s + "\"");
}

}  // namespace slide
