#pragma once

#include <cstddef>
#include <stdexcept>
#include <vector>

namespace slide {

// Dense row-major matrix of doubles. Deliberately minimal: the models here
// never need more than row access and contiguous storage.
struct matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> a;

  matrix() = default;
  matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), a(r * c, fill) {}

  double* row(std::size_t i) { return a.data() + i * cols; }
  const double* row(std::size_t i) const { return a.data() + i * cols; }

  double& at(std::size_t i, std::size_t j) { return a[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return a[i * cols + j]; }

  void check_cols(std::size_t expected, const char* who) const {
    if (cols != expected)
      throw std::invalid_argument(std::string(who) + ": expected " +
                                  std::to_string(expected) + " columns, got " +
                                  std::to_string(cols));
  }
};

}  // namespace slide
