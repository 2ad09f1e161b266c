#include "chartnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace chartnet {

namespace {

double evaluate(const ScalarFn& fn) {
  nn::Graph<double> g;
  g.set_grad_enabled(false);
  const nn::Var<double> out = fn(g);
  if (out.value().size() != 1) throw Error(ErrorCode::ShapeMismatch, "gradient_check objective must be scalar");
  return out.value()[0];
}

}  // namespace

GradCheckReport gradient_check(const ScalarFn& scalar_fn, nn::ParameterStore<double>& params, double epsilon,
                               bool extrapolate) {
  if (!(epsilon > 0.0) || !std::isfinite(epsilon))
    throw Error(ErrorCode::PreconditionViolation, "finite-difference step must be positive");

  params.zero_grad();
  {
    nn::Graph<double> g;
    const nn::Var<double> out = scalar_fn(g);
    if (out.value().size() != 1) throw Error(ErrorCode::ShapeMismatch, "gradient_check objective must be scalar");
    g.backward(out);
  }

  GradCheckReport report;
  for (nn::Parameter<double>* p : params.all()) {
    if (!p->trainable) continue;
    const nn::Tensor<double> analytic = p->grad;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      auto central = [&](double h) {
        p->value[i] = saved + h;
        const double up = evaluate(scalar_fn);
        p->value[i] = saved - h;
        const double down = evaluate(scalar_fn);
        p->value[i] = saved;
        return (up - down) / (2.0 * h);
      };

      const double ga = analytic[i];
      double gn = central(epsilon);
      if (extrapolate) gn = (4.0 * central(0.5 * epsilon) - gn) / 3.0;
      if (!std::isfinite(ga) || !std::isfinite(gn))
        throw Error(ErrorCode::NonFiniteGradient, p->name + "[" + std::to_string(i) + "]");
      const double rel = std::abs(ga - gn) / std::max(1e-8, std::abs(ga) + std::abs(gn));
      ++report.coordinates;
      if (rel > report.max_relative_error || report.coordinates == 1) {
        report.max_relative_error = rel;
        report.worst_parameter = p->name;
        report.worst_index = i;
        report.worst_analytic = ga;
        report.worst_numeric = gn;
      }
    }
  }
  return report;
}

}  // namespace chartnet
