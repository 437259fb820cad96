// Copyright (c) 2026 The tubejepa authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "tubejepa/tensor.hpp"

namespace tubejepa {

struct GradcheckOptions {
    double rel_tol = 1e-4;
    double abs_tol = 1e-7;
    double step = 1e-5;
};

struct GradcheckReport {
    bool passed = true;
    std::size_t checked = 0;
    double max_abs_error = 0.0;
    // |analytic - numeric| / max(|analytic|, |numeric|, abs_tol / rel_tol)
    double max_rel_error = 0.0;
    std::size_t worst_input = 0;
    std::size_t worst_index = 0;
};

// f maps its inputs to a scalar. It is called with tape variables once for
// the analytic pass and with constants for every finite-difference probe.
using ScalarFunction = std::function<Tensor(std::span<const Tensor>)>;

// Compares reverse-mode gradients of f at `inputs` against central
// differences (f(x+h) - f(x-h)) / 2h. An element passes when its error is
// within max(abs_tol, rel_tol * max(|analytic|, |numeric|)). Throws
// OracleError when two evaluations at the same point disagree.
GradcheckReport gradcheck(const ScalarFunction& f, std::span<const Tensor> inputs,
                          const GradcheckOptions& options = {});

}  // namespace tubejepa
