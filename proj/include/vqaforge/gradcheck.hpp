#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vqaforge/layers.hpp"
#include "vqaforge/tensor.hpp"

namespace vqaforge {

// Central-difference verification of hand-derived gradients. Everything here
// runs in double: finite differences at step 1e-5 need the headroom.

inline constexpr double kGradCheckStep = 1e-5;
inline constexpr double kGradCheckTolerance = 1e-4;

// Relative error with a dead zone: values that are both below 1e-6 count as
// matching, since there the difference is finite-difference noise, not
// gradient error.
inline double gradient_rel_error(double analytic, double numeric) {
  double denom = std::max(std::abs(analytic), std::abs(numeric));
  if (denom < 1e-6) return 0.0;
  return std::abs(analytic - numeric) / denom;
}

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  bool pass(double tol = kGradCheckTolerance) const { return max_rel_error < tol; }
};

// loss must re-run the forward pass from scratch and be deterministic across
// calls (fix dropout masks by reseeding inside it). The analytic gradients
// must already be accumulated in param.grad before calling.
inline GradCheckEntry check_param_gradient(const std::function<double()>& loss,
                                           ParamTensor<double>& param,
                                           double step = kGradCheckStep) {
  GradCheckEntry e{param.name, 0.0};
  for (Index i = 0; i < param.value.size(); ++i) {
    double saved = param.value(i);
    param.value(i) = saved + step;
    double up = loss();
    param.value(i) = saved - step;
    double down = loss();
    param.value(i) = saved;
    double numeric = (up - down) / (2.0 * step);
    e.max_rel_error = std::max(e.max_rel_error, gradient_rel_error(param.grad(i), numeric));
  }
  return e;
}

// Same, for gradients w.r.t. an input tensor.
inline GradCheckEntry check_input_gradient(const std::function<double()>& loss,
                                           Tensor<double>& x, const Tensor<double>& analytic,
                                           const std::string& name,
                                           double step = kGradCheckStep) {
  GradCheckEntry e{name, 0.0};
  for (Index i = 0; i < x.size(); ++i) {
    double saved = x(i);
    x(i) = saved + step;
    double up = loss();
    x(i) = saved - step;
    double down = loss();
    x(i) = saved;
    double numeric = (up - down) / (2.0 * step);
    e.max_rel_error = std::max(e.max_rel_error, gradient_rel_error(analytic(i), numeric));
  }
  return e;
}

inline std::vector<GradCheckEntry> check_param_gradients(
    const std::function<double()>& loss, std::span<ParamTensor<double>* const> params,
    double step = kGradCheckStep) {
  std::vector<GradCheckEntry> out;
  for (ParamTensor<double>* p : params) {
    if (!p->trainable) continue;
    out.push_back(check_param_gradient(loss, *p, step));
  }
  return out;
}

}  // namespace vqaforge
