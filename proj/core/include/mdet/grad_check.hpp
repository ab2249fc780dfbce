#pragma once

#include <cstddef>
#include <functional>
#include <string>

#include "mdet/param_store.hpp"
#include "mdet/tape.hpp"

namespace mdet {

// Scalar-valued composite evaluated on a fresh tape with the store's entries bound.
using ScalarFn = std::function<Var<double>(Tape<double>&, const Bindings<double>&)>;

struct GradCheckResult {
  // max over learnable entries of |analytic - numeric| / max(1, |numeric|)
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t checked = 0;
};

// Compares reverse-mode gradients with central differences. Throws NumericalError
// (naming the op) if any evaluation produces a non-finite value.
GradCheckResult grad_check(const ScalarFn& f, const ParamStore<double>& params,
                           double eps = 1e-5);

// Forward value of f with every entry bound as a constant.
double evaluate(const ScalarFn& f, const ParamStore<double>& params);

}  // namespace mdet
