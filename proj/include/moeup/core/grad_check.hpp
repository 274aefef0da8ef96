// Copyright 2026 The moeup Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef MOEUP_CORE_GRAD_CHECK_HPP_
#define MOEUP_CORE_GRAD_CHECK_HPP_

#include <functional>
#include <string>
#include <vector>

#include "moeup/core/tensor.hpp"

namespace moeup {

struct NamedParam {
  std::string name;
  Tensor tensor;
};

struct ParamGradError {
  std::string name;
  double rel_error = 0.0;
  double max_abs_error = 0.0;
  double grad_scale = 0.0;
};

struct GradCheckReport {
  std::vector<ParamGradError> params;
  double max_rel_error = 0.0;
  bool pass = false;
};

// Compares reverse-mode gradients of `loss` against central differences,
// element by element, for every tensor in `params`. The error of one
// parameter tensor is normwise:
//
//   rel = max_i |analytic_i - numeric_i| / max(max_i |numeric_i|,
//                                              max_i |analytic_i|, 1e-12)
//
// `loss` must rebuild the graph from the current parameter values on every
// call and be deterministic; a second evaluation at the starting point that
// differs bitwise from the first throws kOracleInvalid.
GradCheckReport grad_check(const std::function<Tensor()>& loss,
                           std::vector<NamedParam> params, double h,
                           double tol);

}  // namespace moeup

#endif  // MOEUP_CORE_GRAD_CHECK_HPP_
