// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#include "moeup/core/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "moeup/core/error.hpp"

namespace moeup {

GradCheckReport grad_check(const std::function<Tensor()>& loss,
                           std::vector<NamedParam> params, double h,
                           double tol) {
  for (auto& p : params) {
    p.tensor.set_requires_grad(true);
    p.tensor.zero_grad();
  }
  const Tensor base = loss();
  const double first = base.item();
  const double second = loss().item();
  if (std::memcmp(&first, &second, sizeof(double)) != 0) {
    fail(ErrorCode::kOracleInvalid,
         "grad_check: loss is not deterministic (" + std::to_string(first) +
             " vs " + std::to_string(second) + ")");
  }
  base.backward();

  GradCheckReport report;
  for (auto& p : params) {
    const std::vector<double> analytic =
        p.tensor.has_grad()
            ? std::vector<double>(p.tensor.grad().begin(), p.tensor.grad().end())
            : std::vector<double>(p.tensor.numel(), 0.0);
    auto values = p.tensor.mutable_data();
    double max_diff = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double plus = loss().item();
      values[i] = saved - h;
      const double minus = loss().item();
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * h);
      max_diff = std::max(max_diff, std::abs(analytic[i] - numeric));
      scale = std::max({scale, std::abs(numeric), std::abs(analytic[i])});
    }
    ParamGradError err{p.name, max_diff / std::max(scale, 1e-12), max_diff, scale};
    report.max_rel_error = std::max(report.max_rel_error, err.rel_error);
    report.params.push_back(std::move(err));
  }
  report.pass = report.max_rel_error <= tol;
  return report;
}

}  // namespace moeup
