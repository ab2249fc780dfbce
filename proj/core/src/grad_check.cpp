#include "mdet/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "mdet/ops.hpp"

namespace mdet {
namespace {

Var<double> as_scalar(Var<double> out) {
  return out.value().numel() == 1 ? out : sum(out);
}

}  // namespace

double evaluate(const ScalarFn& f, const ParamStore<double>& params) {
  Tape<double> tape;
  tape.set_check_finite(true);
  Bindings<double> b;
  for (const auto& e : params.entries()) b.insert(e.name, tape.constant(e.value));
  return as_scalar(f(tape, b)).value().item();
}

GradCheckResult grad_check(const ScalarFn& f, const ParamStore<double>& params, double eps) {
  Tape<double> tape;
  tape.set_check_finite(true);
  const Bindings<double> bound = params.bind(tape);
  const Var<double> out = as_scalar(f(tape, bound));
  tape.backward(out);

  GradCheckResult result;
  ParamStore<double> probe = params;
  for (auto& entry : probe.entries()) {
    if (!entry.learnable) continue;
    const Tensor<double>* analytic = bound[entry.name].grad();
    for (std::size_t i = 0; i < entry.value.numel(); ++i) {
      const double saved = entry.value[i];
      entry.value[i] = saved + eps;
      const double up = evaluate(f, probe);
      entry.value[i] = saved - eps;
      const double down = evaluate(f, probe);
      entry.value[i] = saved;

      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic ? (*analytic)[i] : 0.0;
      const double rel = std::abs(a - numeric) / std::max(1.0, std::abs(numeric));
      ++result.checked;
      if (result.worst_param.empty() || rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = entry.name;
        result.worst_index = i;
        result.worst_analytic = a;
        result.worst_numeric = numeric;
      }
    }
  }
  return result;
}

}  // namespace mdet
