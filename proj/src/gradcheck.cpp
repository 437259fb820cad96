// Copyright (c) 2026 The tubejepa authors
// SPDX-License-Identifier: Apache-2.0

#include "tubejepa/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "tubejepa/errors.hpp"

namespace tubejepa {

namespace {

double evaluate(const ScalarFunction& f, const std::vector<Tensor>& inputs) {
    const Tensor out = f(inputs);
    if (out.size() != 1) throw DimensionError("gradcheck: function is not scalar-valued");
    return out.item();
}

bool bitwise_equal(double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; }

}  // namespace

GradcheckReport gradcheck(const ScalarFunction& f, std::span<const Tensor> inputs, const GradcheckOptions& options) {
    std::vector<Tensor> base;
    base.reserve(inputs.size());
    for (const Tensor& t : inputs) {
        for (double v : t.values()) {
            if (!std::isfinite(v)) throw ContractError("gradcheck: inputs must be finite");
        }
        base.push_back(t.detach());
    }

    Tape tape;
    std::vector<Tensor> leaves;
    leaves.reserve(base.size());
    for (const Tensor& t : base) leaves.push_back(tape.variable(t));
    const Tensor out = f(leaves);
    if (out.size() != 1) throw DimensionError("gradcheck: function is not scalar-valued");
    if (out.requires_grad()) tape.backward(out);

    const double first = evaluate(f, base);
    const double second = evaluate(f, base);
    if (!bitwise_equal(first, second) || !bitwise_equal(first, out.item())) {
        throw OracleError("gradcheck: function is not deterministic at the base point");
    }

    GradcheckReport report;
    const double floor = options.abs_tol / options.rel_tol;
    for (std::size_t k = 0; k < base.size(); ++k) {
        const std::vector<double> analytic = leaves[k].grad_or_zeros();
        std::vector<double> probe(base[k].values().begin(), base[k].values().end());
        for (std::size_t e = 0; e < probe.size(); ++e) {
            const double x0 = probe[e];
            std::vector<Tensor> args = base;
            probe[e] = x0 + options.step;
            args[k] = Tensor::constant(base[k].shape(), probe);
            const double fp = evaluate(f, args);
            probe[e] = x0 - options.step;
            args[k] = Tensor::constant(base[k].shape(), probe);
            const double fm = evaluate(f, args);
            probe[e] = x0;

            const double numeric = (fp - fm) / (2.0 * options.step);
            const double err = std::abs(analytic[e] - numeric);
            const double scale = std::max(std::abs(analytic[e]), std::abs(numeric));
            const double rel = err / std::max(scale, floor);
            ++report.checked;
            if (err > std::max(options.abs_tol, options.rel_tol * scale) || !std::isfinite(numeric)) {
                report.passed = false;
            }
            if (rel > report.max_rel_error || !std::isfinite(rel)) {
                report.max_rel_error = rel;
                report.worst_input = k;
                report.worst_index = e;
            }
            report.max_abs_error = std::max(report.max_abs_error, err);
        }
    }
    return report;
}

}  // namespace tubejepa
