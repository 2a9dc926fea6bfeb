#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mrc/tensor.hpp"

namespace mrc {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t worst_param = 0;  // index into the checked parameter list
  std::size_t worst_entry = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t scalars_checked = 0;
};

inline double rel_err(double a, double b) {
  const double denom = std::max({std::fabs(a), std::fabs(b), 1e-8});
  return std::fabs(a - b) / denom;
}

// Central-difference oracle: numeric gradient of f with respect to every
// scalar of every parameter, (f(θ+eps) - f(θ-eps)) / 2eps, re-evaluating f on
// a fresh tape per probe. Independent of the tape's backward rules.
template <class S>
std::vector<std::vector<double>> central_differences(
    const std::function<Tensor<S>(Tape<S>&)>& f, std::span<Tensor<S>> params,
    double eps) {
  if (eps <= 0) throw ConfigError("central_differences: eps must be positive");
  auto eval = [&]() -> double {
    Tape<S> tape;
    Tensor<S> loss = f(tape);
    const double v = static_cast<double>(loss.item());
    if (!std::isfinite(v))
      throw NumericError("central_differences: f produced a non-finite value");
    return v;
  };
  std::vector<std::vector<double>> numeric;
  numeric.reserve(params.size());
  for (auto& p : params) {
    auto values = p.value();
    std::vector<double> g(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) {
      const S orig = values[i];
      values[i] = orig + static_cast<S>(eps);
      const double up = eval();
      values[i] = orig - static_cast<S>(eps);
      const double down = eval();
      values[i] = orig;
      g[i] = (up - down) / (2.0 * eps);
    }
    numeric.push_back(std::move(g));
  }
  return numeric;
}

// Tape gradients of f for the given parameters, in evaluation order.
template <class S>
std::vector<std::vector<double>> tape_gradients(
    const std::function<Tensor<S>(Tape<S>&)>& f, std::span<Tensor<S>> params) {
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  Tape<S> tape;
  Tensor<S> loss = f(tape);
  if (!std::isfinite(static_cast<double>(loss.item())))
    throw NumericError("grad_check: f produced a non-finite value");
  tape.backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) {
    std::vector<double> g(p.numel(), 0.0);
    auto pg = p.grad();
    for (std::size_t i = 0; i < pg.size(); ++i) g[i] = static_cast<double>(pg[i]);
    analytic.push_back(std::move(g));
  }
  return analytic;
}

inline GradCheckReport compare_gradients(
    const std::vector<std::vector<double>>& analytic,
    const std::vector<std::vector<double>>& numeric) {
  GradCheckReport report;
  for (std::size_t pi = 0; pi < analytic.size(); ++pi) {
    for (std::size_t i = 0; i < analytic[pi].size(); ++i) {
      const double rel = rel_err(analytic[pi][i], numeric[pi][i]);
      ++report.scalars_checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = pi;
        report.worst_entry = i;
        report.worst_analytic = analytic[pi][i];
        report.worst_numeric = numeric[pi][i];
      }
    }
  }
  return report;
}

// Compares tape gradients of f against the central-difference oracle over the
// same parameters and returns the worst relative error.
template <class S>
GradCheckReport grad_check(const std::function<Tensor<S>(Tape<S>&)>& f,
                           std::span<Tensor<S>> params, double eps) {
  auto analytic = tape_gradients<S>(f, params);
  auto numeric = central_differences<S>(f, params, eps);
  return compare_gradients(analytic, numeric);
}

}  // namespace mrc
