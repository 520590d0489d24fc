#ifndef PYRABOX_GRADCHECK_HPP_
#define PYRABOX_GRADCHECK_HPP_

#include <functional>
#include <string>
#include <vector>

#include "pyrabox/tensor.hpp"

namespace pyrabox {

struct GradCheckReport {
  std::string name;
  double max_rel_err = 0.0;
  bool pass = false;
};

// Compares analytic gradients of a scalar-valued computation against central
// finite differences. `build` maps the inputs to a scalar Tensor; it is
// invoked once under a recording graph and then 2x per input element with
// perturbed values. 64-bit only.
inline GradCheckReport gradcheck(
    const std::string& name, std::vector<Tensor<double>> inputs,
    const std::function<Tensor<double>(std::vector<Tensor<double>>&)>& build,
    double eps = 1e-5, double tol = 1e-4) {
  for (auto& in : inputs) {
    in.set_requires_grad(true);
    in.zero_grad();
  }
  {
    Graph<double> g;
    Tensor<double> loss = build(inputs);
    g.backward(loss);
  }
  auto eval = [&]() {
    Tensor<double> loss = build(inputs);  // no graph active: plain forward
    return loss[0];
  };
  GradCheckReport rep{name, 0.0, false};
  for (auto& in : inputs) {
    for (int64_t i = 0; i < in.size(); ++i) {
      double orig = in[i];
      in[i] = orig + eps;
      double fp = eval();
      in[i] = orig - eps;
      double fm = eval();
      in[i] = orig;
      double numeric = (fp - fm) / (2.0 * eps);
      double analytic = in.grad()[i];
      double denom = std::max({1.0, std::abs(analytic), std::abs(numeric)});
      double rel = std::abs(analytic - numeric) / denom;
      rep.max_rel_err = std::max(rep.max_rel_err, rel);
    }
  }
  rep.pass = rep.max_rel_err < tol;
  return rep;
}

}  // namespace pyrabox

#endif  // PYRABOX_GRADCHECK_HPP_
