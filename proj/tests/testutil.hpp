#pragma once

// Shared test helpers: central finite-difference gradient checking (the
// independent oracle for every backward rule) and small fixture builders.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "glta/rng.hpp"
#include "glta/tensor.hpp"

namespace testutil {

using glta::Rng;
using DTensor = glta::nd::Tensor<double>;
using DTape = glta::nd::Tape<double>;

// Relative error with an absolute floor so near-zero gradients compare
// sanely.
inline double rel_err(double a, double b) {
  const double denom = std::max({1e-6, std::fabs(a), std::fabs(b)});
  return std::fabs(a - b) / denom;
}

// Checks analytic gradients of `build` (which must reconstruct the scalar
// loss from the current parameter values on every call) against central
// finite differences for every element of every parameter. Returns the
// maximum relative error.
inline double max_grad_rel_err(const std::function<DTensor(DTape*)>& build,
                               std::vector<DTensor> params, double h = 1e-6) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.drop_grad();
  }
  DTape tape;
  DTensor loss = build(&tape);
  tape.backward(loss);

  double worst = 0.0;
  for (auto& p : params) {
    for (size_t i = 0; i < p.values().size(); ++i) {
      const double x0 = p.values()[i];
      const double step = h * std::max(1.0, std::fabs(x0));
      p.values()[i] = x0 + step;
      const double up = build(nullptr).scalar_value();
      p.values()[i] = x0 - step;
      const double down = build(nullptr).scalar_value();
      p.values()[i] = x0;
      const double numeric = (up - down) / (2.0 * step);
      const double analytic = p.has_grad() ? p.grad()[i] : 0.0;
      worst = std::max(worst, rel_err(analytic, numeric));
    }
  }
  return worst;
}

inline DTensor random_dtensor(Rng& rng, glta::nd::Shape shape, double scale = 1.0) {
  return DTensor::randn(rng, std::move(shape), scale);
}

}  // namespace testutil
