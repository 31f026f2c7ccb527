// Copyright 2026 The Sandglasset Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#include <algorithm>
#include <cmath>
#include <vector>

#include "sandglasset/param_table.hpp"
#include "sandglasset/rng.hpp"

namespace sandglasset {

template <typename Real>
AdamReport adam_step(ParamTable<Real>& params, const AdamOptions& options) {
  double sq = 0.0;
  for (const auto& p : params.entries()) {
    for (Real g : p.grad.values()) {
      if (!std::isfinite(static_cast<double>(g)))
        throw NumericError("non-finite gradient in parameter '" + p.path + "'");
      sq += static_cast<double>(g) * static_cast<double>(g);
    }
  }
  AdamReport report;
  report.grad_norm = std::sqrt(sq);
  double factor = 1.0;
  if (options.clip_norm > 0.0 && report.grad_norm > options.clip_norm)
    factor = options.clip_norm / report.grad_norm;
  report.applied_norm = report.grad_norm * factor;

  const std::uint64_t step = params.adam_steps() + 1;
  params.set_adam_steps(step);
  const double correction1 = 1.0 - std::pow(options.beta1, static_cast<double>(step));
  const double correction2 = 1.0 - std::pow(options.beta2, static_cast<double>(step));
  const Real b1 = static_cast<Real>(options.beta1);
  const Real b2 = static_cast<Real>(options.beta2);
  const Real step_size = static_cast<Real>(options.lr / correction1);
  const Real inv_sqrt_c2 = static_cast<Real>(1.0 / std::sqrt(correction2));
  const Real eps = static_cast<Real>(options.eps);
  const Real f = static_cast<Real>(factor);
  for (auto& p : params.entries()) {
    Real* w = p.value.data();
    Real* g = p.grad.data();
    Real* m = p.moment1.data();
    Real* v = p.moment2.data();
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const Real gi = g[i] * f;
      m[i] = b1 * m[i] + (Real(1) - b1) * gi;
      v[i] = b2 * v[i] + (Real(1) - b2) * gi * gi;
      w[i] -= step_size * m[i] / (std::sqrt(v[i]) * inv_sqrt_c2 + eps);
      g[i] = Real(0);
    }
  }
  return report;
}

template AdamReport adam_step(ParamTable<float>&, const AdamOptions&);
template AdamReport adam_step(ParamTable<double>&, const AdamOptions&);

GradCheckResult grad_check(const LossFunction& loss, ParamTable<double>& params,
                           const GradCheckOptions& options) {
  params.zero_grad();
  loss(params, true);
  std::vector<Tensor<double>> analytic;
  for (const auto& p : params.entries()) analytic.push_back(p.grad);
  params.zero_grad();

  GradCheckResult result;
  Rng rng(options.seed);
  std::size_t entry = 0;
  for (auto& p : params.entries()) {
    std::vector<std::size_t> coords(p.value.size());
    for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    if (options.max_coords_per_param > 0 &&
        coords.size() > options.max_coords_per_param) {
      rng.shuffle(coords);
      coords.resize(options.max_coords_per_param);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t i : coords) {
      const double saved = p.value[i];
      p.value[i] = saved + options.step;
      const double up = loss(params, false);
      p.value[i] = saved - options.step;
      const double down = loss(params, false);
      p.value[i] = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double exact = analytic[entry][i];
      const double denom = std::max({std::abs(exact), std::abs(numeric),
                                     options.denominator_floor});
      const double err = std::abs(exact - numeric) / denom;
      ++result.coords_checked;
      if (err > result.max_relative_error || result.worst_path.empty()) {
        result.max_relative_error = err;
        result.worst_path = p.path;
        result.worst_index = i;
        result.worst_analytic = exact;
        result.worst_numeric = numeric;
      }
    }
    ++entry;
  }
  return result;
}

}  // namespace sandglasset
