#include <algorithm>
#include <cmath>

#include "resnet/autodiff.hpp"

namespace resnet {
namespace {

double scalar_of(const Var<double>& loss) {
  const double v = loss.value()[0];
  if (!std::isfinite(v)) throw Error(ErrorKind::kNumeric, "grad_check: non-finite loss");
  return v;
}

}  // namespace

GradCheckResult grad_check(const GraphBuilder& build, std::vector<TensorD>& params, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) {
    throw Error(ErrorKind::kValue, "grad_check: eps must lie in [1e-7, 1e-3]");
  }
  Tape<double> tape;
  std::vector<Var<double>> vars;
  vars.reserve(params.size());
  for (const auto& p : params) vars.push_back(tape.parameter(p));
  const Var<double> loss = build(tape, vars);
  scalar_of(loss);
  const GradMap<double> grads = tape.backward(loss, false);

  std::unordered_map<int, TensorD> bindings;
  for (int id : tape.input_ids()) bindings.emplace(id, tape.value(id));

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const TensorD& analytic = grads[vars[pi]];
    const int id = vars[pi].id();
    TensorD probe = params[pi];
    for (std::size_t j = 0; j < probe.size(); ++j) {
      const double original = probe[j];
      probe[j] = original + eps;
      bindings.insert_or_assign(id, probe);
      tape.replay(bindings);
      const double plus = scalar_of(loss);
      probe[j] = original - eps;
      bindings.insert_or_assign(id, probe);
      tape.replay(bindings);
      const double minus = scalar_of(loss);
      probe[j] = original;

      const double numeric = (plus - minus) / (2.0 * eps);
      const double a = analytic[j];
      if (!std::isfinite(a)) throw Error(ErrorKind::kNumeric, "grad_check: non-finite gradient");
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      if (result.elements == 0 || rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = pi;
        result.worst_index = j;
        result.analytic = a;
        result.numeric = numeric;
      }
      ++result.elements;
    }
    // Leave the leaf at its original value for the parameters that follow.
    bindings.insert_or_assign(id, params[pi]);
  }
  tape.replay(bindings);
  return result;
}

}  // namespace resnet
