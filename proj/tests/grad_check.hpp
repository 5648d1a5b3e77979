#pragma once

// Central finite-difference oracle used by the gradient tests. It only ever
// evaluates forward passes, so it stays independent of the backward code it
// checks.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualswin/autograd.hpp"
#include "dualswin/tensor.hpp"

namespace dualswin::testing {

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  std::normal_distribution<double> normal(0.0, scale);
  for (auto& v : t.data()) v = normal(rng);
  return t;
}

using ScalarFn = std::function<Var<double>(const std::vector<Var<double>>&)>;

/// ‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂) over every entry of
/// every input.
inline double gradient_error(const ScalarFn& fn, std::vector<Tensor<double>> inputs,
                             double step = 1e-3) {
  std::vector<Var<double>> leaves;
  for (const auto& t : inputs) leaves.push_back(Var<double>::leaf(t));
  backward(fn(leaves));

  const auto evaluate = [&](const std::vector<Tensor<double>>& values) {
    NoGradGuard guard;
    std::vector<Var<double>> consts;
    for (const auto& t : values) consts.push_back(Var<double>::constant(t));
    return fn(consts).value()[0];
  };

  double diff2 = 0, analytic2 = 0, numeric2 = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Tensor<double>& analytic = leaves[k].grad();
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double saved = inputs[k][i];
      inputs[k][i] = saved + step;
      const double up = evaluate(inputs);
      inputs[k][i] = saved - step;
      const double down = evaluate(inputs);
      inputs[k][i] = saved;
      const double numeric = (up - down) / (2 * step);
      const double a = analytic.empty() ? 0.0 : analytic[i];
      diff2 += (a - numeric) * (a - numeric);
      analytic2 += a * a;
      numeric2 += numeric * numeric;
    }
  }
  const double denom = std::sqrt(std::max(analytic2, numeric2));
  return denom == 0.0 ? std::sqrt(diff2) : std::sqrt(diff2) / denom;
}

/// Same relative error for parameters held in a store. At most
/// `per_parameter` entries of each named parameter are probed (evenly spaced).
inline double parameter_gradient_error(ParameterStore<double>& store, const std::function<Var<double>()>& loss,
                                       const std::vector<std::string>& names, std::size_t per_parameter = 16,
                                       double step = 1e-5) {
  store.zero_grad();
  backward(loss());
  double diff2 = 0, analytic2 = 0, numeric2 = 0;
  for (const auto& name : names) {
    Parameter<double>* p = store.find(name);
    if (!p) throw std::invalid_argument("no parameter named " + name);
    const std::size_t n = p->value.size();
    const std::size_t stride = std::max<std::size_t>(1, n / per_parameter);
    for (std::size_t i = 0; i < n; i += stride) {
      const double saved = p->value[i];
      NoGradGuard guard;
      p->value[i] = saved + step;
      const double up = loss().value()[0];
      p->value[i] = saved - step;
      const double down = loss().value()[0];
      p->value[i] = saved;
      const double numeric = (up - down) / (2 * step);
      const double a = p->grad[i];
      diff2 += (a - numeric) * (a - numeric);
      analytic2 += a * a;
      numeric2 += numeric * numeric;
    }
  }
  const double denom = std::sqrt(std::max(analytic2, numeric2));
  return denom == 0.0 ? std::sqrt(diff2) : std::sqrt(diff2) / denom;
}

}  // namespace dualswin::testing
