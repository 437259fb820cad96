// Copyright (c) 2026 The tubejepa authors
// SPDX-License-Identifier: Apache-2.0

#include "tubejepa/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "tubejepa/errors.hpp"

namespace tubejepa {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using Backward = std::function<void(Node&)>;

std::string& backward_fault() {
    static std::string op;
    return op;
}

Tape* common_tape(std::initializer_list<const Tensor*> inputs) {
    Tape* tape = nullptr;
    for (const Tensor* t : inputs) {
        if (!t->requires_grad()) continue;
        if (tape == nullptr) {
            tape = t->tape();
        } else if (tape != t->tape()) {
            throw ContractError("operands were recorded on different tapes");
        }
    }
    return tape;
}

Tensor finish(std::string_view op, Shape shape, std::vector<double> value,
              std::initializer_list<const Tensor*> inputs, Backward backward) {
    auto node = std::make_shared<Node>();
    node->op = op;
    node->shape = std::move(shape);
    node->value = std::move(value);
    if (Tape* tape = common_tape(inputs)) {
        node->requires_grad = true;
        node->tape = tape;
        node->inputs.reserve(inputs.size());
        for (const Tensor* t : inputs) node->inputs.push_back(t->node());
        node->backward = std::move(backward);
        tape->record(node);
    }
    return Tensor(std::move(node));
}

void require_same_shape(std::string_view op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                             " vs " + shape_string(b.shape()));
    }
}

void require_matrix(std::string_view op, const Tensor& a) {
    if (a.rank() != 2) {
        throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(a.shape()));
    }
}

void require_finite(std::string_view op, std::span<const double> values) {
    for (double v : values) {
        if (!std::isfinite(v)) throw NumericError(std::string(op) + ": non-finite input");
    }
}

// Splits a tensor into rows along its last axis.
std::pair<std::size_t, std::size_t> rows_by_last_axis(const Tensor& t) {
    if (t.rank() == 0) return {1, 1};
    const std::size_t n = t.shape().back();
    return {n == 0 ? 0 : t.size() / n, n};
}

// c[m x n] += a[m x k] * b[k x n]
void gemm_acc(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[i * k + p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace

std::size_t element_count(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

double* detail::Node::input_grad(std::size_t k) {
    Node& in = *inputs[k];
    if (!in.requires_grad) return nullptr;
    if (in.grad.empty()) in.grad.assign(in.value.size(), 0.0);
    return in.grad.data();
}

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor() : Tensor(constant({}, {0.0})) {}

Tensor Tensor::constant(Shape shape, std::vector<double> values) {
    if (element_count(shape) != values.size()) {
        throw DimensionError("tensor shape " + shape_string(shape) + " does not hold " +
                             std::to_string(values.size()) + " elements");
    }
    auto node = std::make_shared<Node>();
    node->op = "constant";
    node->shape = std::move(shape);
    node->value = std::move(values);
    return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value) { return constant({}, {value}); }

Tensor Tensor::zeros(Shape shape) {
    const std::size_t n = element_count(shape);
    return constant(std::move(shape), std::vector<double>(n, 0.0));
}

std::size_t Tensor::rows() const {
    if (rank() != 2) throw DimensionError("rows(): not a matrix " + shape_string(shape()));
    return shape()[0];
}

std::size_t Tensor::cols() const {
    if (rank() != 2) throw DimensionError("cols(): not a matrix " + shape_string(shape()));
    return shape()[1];
}

double Tensor::at(std::size_t row, std::size_t col) const { return node_->value[row * cols() + col]; }

double Tensor::item() const {
    if (size() != 1) throw DimensionError("item(): tensor " + shape_string(shape()) + " is not a scalar");
    return node_->value[0];
}

std::span<const double> Tensor::grad() const {
    if (node_->grad.empty()) throw ContractError("gradient was not materialized for this tensor");
    return node_->grad;
}

std::vector<double> Tensor::grad_or_zeros() const {
    if (node_->grad.empty()) return std::vector<double>(size(), 0.0);
    return node_->grad;
}

Tensor Tensor::detach() const { return constant(node_->shape, node_->value); }

// ---- Tape -----------------------------------------------------------------

Tensor Tape::variable(Shape shape, std::vector<double> values) {
    if (element_count(shape) != values.size()) {
        throw DimensionError("variable shape " + shape_string(shape) + " does not hold " +
                             std::to_string(values.size()) + " elements");
    }
    auto node = std::make_shared<Node>();
    node->op = "variable";
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = true;
    node->tape = this;
    record(node);
    return Tensor(std::move(node));
}

void Tape::record(const std::shared_ptr<Node>& node) {
    if (precision_ == Precision::f32) {
        for (double& v : node->value) v = static_cast<double>(static_cast<float>(v));
    }
    nodes_.push_back(node);
}

void Tape::backward(const Tensor& root) {
    if (backward_done_) throw ContractError("backward() already ran on this tape");
    if (root.tape() != this) throw ContractError("backward root was not recorded on this tape");
    if (root.size() != 1) throw DimensionError("backward root must be a scalar, got " + shape_string(root.shape()));
    backward_done_ = true;
    const std::string& fault = backward_fault();
    root.node()->grad.assign(1, 1.0);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node& node = **it;
        if (node.grad.empty() || !node.backward) continue;
        if (!fault.empty() && node.op == fault) {
            for (double& g : node.grad) g = -g;
        }
        node.backward(node);
    }
}

void testing::set_backward_fault(std::string op) { backward_fault() = std::move(op); }
void testing::clear_backward_fault() { backward_fault().clear(); }

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
        throw DimensionError("matmul: incompatible shapes " + shape_string(a.shape()) + " and " +
                             shape_string(b.shape()));
    }
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    std::vector<double> out(m * n, 0.0);
    gemm_acc(a.values().data(), b.values().data(), out.data(), m, k, n);
    return finish("matmul", {m, n}, std::move(out), {&a, &b}, [m, k, n](Node& self) {
        const double* g = self.grad.data();
        const double* av = self.inputs[0]->value.data();
        const double* bv = self.inputs[1]->value.data();
        if (double* ga = self.input_grad(0)) {
            // ga[i,p] += sum_j g[i,j] * b[p,j]
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    double acc = 0.0;
                    const double* brow = bv + p * n;
                    const double* grow = g + i * n;
                    for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
                    ga[i * k + p] += acc;
                }
            }
        }
        if (double* gb = self.input_grad(1)) {
            // gb[p,j] += sum_i a[i,p] * g[i,j]
            for (std::size_t i = 0; i < m; ++i) {
                for (std::size_t p = 0; p < k; ++p) {
                    const double av_ip = av[i * k + p];
                    double* gbrow = gb + p * n;
                    const double* grow = g + i * n;
                    for (std::size_t j = 0; j < n; ++j) gbrow[j] += av_ip * grow[j];
                }
            }
        }
    });
}

Tensor transpose(const Tensor& a) {
    require_matrix("transpose", a);
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
    return finish("transpose", {n, m}, std::move(out), {&a}, [m, n](Node& self) {
        if (double* ga = self.input_grad(0)) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) ga[i * n + j] += self.grad[j * m + i];
        }
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (element_count(shape) != a.size()) {
        throw DimensionError("reshape: " + shape_string(a.shape()) + " cannot become " + shape_string(shape));
    }
    std::vector<double> out(a.values().begin(), a.values().end());
    return finish("reshape", std::move(shape), std::move(out), {&a}, [](Node& self) {
        if (double* ga = self.input_grad(0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
        }
    });
}

// ---- elementwise ----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape("add", a, b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
    return finish("add", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (double* gk = self.input_grad(k)) {
                for (std::size_t i = 0; i < self.grad.size(); ++i) gk[i] += self.grad[i];
            }
        }
    });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape("sub", a, b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
    return finish("sub", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
        if (double* ga = self.input_grad(0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
        }
        if (double* gb = self.input_grad(1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] -= self.grad[i];
        }
    });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape("mul", a, b);
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
    return finish("mul", a.shape(), std::move(out), {&a, &b}, [](Node& self) {
        const auto& av = self.inputs[0]->value;
        const auto& bv = self.inputs[1]->value;
        if (double* ga = self.input_grad(0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * bv[i];
        }
        if (double* gb = self.input_grad(1)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) gb[i] += self.grad[i] * av[i];
        }
    });
}

Tensor add_row(const Tensor& a, const Tensor& b) {
    require_matrix("add_row", a);
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    if (b.size() != n) {
        throw DimensionError("add_row: row vector " + shape_string(b.shape()) + " does not match " +
                             shape_string(a.shape()));
    }
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = a[i * n + j] + b[j];
    return finish("add_row", a.shape(), std::move(out), {&a, &b}, [m, n](Node& self) {
        if (double* ga = self.input_grad(0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
        }
        if (double* gb = self.input_grad(1)) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) gb[j] += self.grad[i * n + j];
        }
    });
}

Tensor scale(const Tensor& a, double factor) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
    return finish("scale", a.shape(), std::move(out), {&a}, [factor](Node& self) {
        if (double* ga = self.input_grad(0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * factor;
        }
    });
}

Tensor add_scalar(const Tensor& a, double offset) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + offset;
    return finish("add_scalar", a.shape(), std::move(out), {&a}, [](Node& self) {
        if (double* ga = self.input_grad(0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
        }
    });
}

Tensor sum(const Tensor& a) {
    double acc = 0.0;
    for (double v : a.values()) acc += v;
    return finish("sum", {}, {acc}, {&a}, [](Node& self) {
        if (double* ga = self.input_grad(0)) {
            const double g = self.grad[0];
            for (std::size_t i = 0; i < self.inputs[0]->value.size(); ++i) ga[i] += g;
        }
    });
}

Tensor mean(const Tensor& a) {
    if (a.size() == 0) throw ContractError("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Tensor relu(const Tensor& a) {
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] > 0.0 ? a[i] : 0.0;
    return finish("relu", a.shape(), std::move(out), {&a}, [](Node& self) {
        if (double* ga = self.input_grad(0)) {
            const auto& av = self.inputs[0]->value;
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                if (av[i] > 0.0) ga[i] += self.grad[i];
        }
    });
}

Tensor gelu(const Tensor& a) {
    constexpr double kInvSqrt2 = 0.70710678118654752440;
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * a[i] * (1.0 + std::erf(a[i] * kInvSqrt2));
    return finish("gelu", a.shape(), std::move(out), {&a}, [](Node& self) {
        constexpr double kInvSqrt2Pi = 0.39894228040143267794;
        if (double* ga = self.input_grad(0)) {
            const auto& av = self.inputs[0]->value;
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const double x = av[i];
                const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
                const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
                ga[i] += self.grad[i] * (cdf + x * pdf);
            }
        }
    });
}

// ---- normalizations and distributions -------------------------------------

Tensor softmax(const Tensor& x, double temperature) {
    if (!(temperature > 0.0)) throw ContractError("softmax: temperature must be positive");
    require_finite("softmax", x.values());
    const auto [rows, n] = rows_by_last_axis(x);
    std::vector<double> out(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = x.values().data() + r * n;
        double* o = out.data() + r * n;
        const double mx = *std::max_element(in, in + n);
        double z = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            o[j] = std::exp((in[j] - mx) / temperature);
            z += o[j];
        }
        for (std::size_t j = 0; j < n; ++j) o[j] /= z;
    }
    return finish("softmax", x.shape(), std::move(out), {&x}, [rows, n, temperature](Node& self) {
        if (double* gx = self.input_grad(0)) {
            for (std::size_t r = 0; r < rows; ++r) {
                const double* y = self.value.data() + r * n;
                const double* g = self.grad.data() + r * n;
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += g[j] * y[j];
                for (std::size_t j = 0; j < n; ++j) gx[r * n + j] += y[j] * (g[j] - dot) / temperature;
            }
        }
    });
}

Tensor l1_distance(const Tensor& a, const Tensor& b) {
    require_same_shape("l1_distance", a, b);
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += std::abs(a[i] - b[i]);
    return finish("l1_distance", {}, {acc}, {&a, &b}, [](Node& self) {
        const auto& av = self.inputs[0]->value;
        const auto& bv = self.inputs[1]->value;
        const double g = self.grad[0];
        double* ga = self.input_grad(0);
        double* gb = self.input_grad(1);
        for (std::size_t i = 0; i < av.size(); ++i) {
            const double d = av[i] - bv[i];
            const double s = d > 0.0 ? 1.0 : (d < 0.0 ? -1.0 : 0.0);
            if (ga) ga[i] += g * s;
            if (gb) gb[i] -= g * s;
        }
    });
}

Tensor l2_normalize(const Tensor& u, double epsilon) {
    if (!(epsilon > 0.0)) throw ContractError("l2_normalize: epsilon must be positive");
    const auto [rows, n] = rows_by_last_axis(u);
    std::vector<double> out(u.size());
    std::vector<double> denom(rows);
    std::vector<char> clamped(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* in = u.values().data() + r * n;
        double sq = 0.0;
        for (std::size_t j = 0; j < n; ++j) sq += in[j] * in[j];
        const double norm = std::sqrt(sq);
        clamped[r] = norm < epsilon;
        denom[r] = clamped[r] ? epsilon : norm;
        for (std::size_t j = 0; j < n; ++j) out[r * n + j] = in[j] / denom[r];
    }
    return finish("l2_normalize", u.shape(), std::move(out), {&u},
                  [rows, n, denom = std::move(denom), clamped = std::move(clamped)](Node& self) {
                      double* gu = self.input_grad(0);
                      if (!gu) return;
                      const auto& uv = self.inputs[0]->value;
                      for (std::size_t r = 0; r < rows; ++r) {
                          const double* g = self.grad.data() + r * n;
                          const double* in = uv.data() + r * n;
                          const double d = denom[r];
                          if (clamped[r]) {
                              for (std::size_t j = 0; j < n; ++j) gu[r * n + j] += g[j] / d;
                              continue;
                          }
                          double dot = 0.0;
                          for (std::size_t j = 0; j < n; ++j) dot += in[j] * g[j];
                          const double d3 = d * d * d;
                          for (std::size_t j = 0; j < n; ++j) gu[r * n + j] += g[j] / d - in[j] * dot / d3;
                      }
                  });
}

Tensor kl_divergence(const Tensor& p, const Tensor& q, double floor) {
    require_same_shape("kl_divergence", p, q);
    require_finite("kl_divergence", p.values());
    require_finite("kl_divergence", q.values());
    const auto [rows, n] = rows_by_last_axis(p);
    // Values recorded on a 32-bit tape carry float rounding.
    auto narrow = [](const Tensor& t) { return t.tape() != nullptr && t.tape()->precision() == Precision::f32; };
    const double tolerance = narrow(p) || narrow(q) ? 1e-5 : 1e-9;
    for (const Tensor* t : {&p, &q}) {
        for (std::size_t r = 0; r < rows; ++r) {
            double total = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                const double v = (*t)[r * n + j];
                if (v < 0.0) throw ContractError("kl_divergence: negative probability");
                total += v;
            }
            if (std::abs(total - 1.0) > tolerance) {
                throw ContractError("kl_divergence: row " + std::to_string(r) + " sums to " +
                                    std::to_string(total) + ", not 1");
            }
        }
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) acc += p[i] * std::log(p[i] / std::max(q[i], floor));
    }
    return finish("kl_divergence", {}, {acc}, {&p, &q}, [floor](Node& self) {
        const auto& pv = self.inputs[0]->value;
        const auto& qv = self.inputs[1]->value;
        const double g = self.grad[0];
        if (double* gp = self.input_grad(0)) {
            for (std::size_t i = 0; i < pv.size(); ++i)
                if (pv[i] > 0.0) gp[i] += g * (std::log(pv[i] / std::max(qv[i], floor)) + 1.0);
        }
        if (double* gq = self.input_grad(1)) {
            for (std::size_t i = 0; i < pv.size(); ++i)
                if (qv[i] > floor) gq[i] -= g * pv[i] / qv[i];
        }
    });
}

Tensor std_per_dim(const Tensor& z) {
    constexpr double kStabilizer = 1e-12;
    require_matrix("std_per_dim", z);
    const std::size_t b = z.shape()[0], d = z.shape()[1];
    if (b < 2) throw ContractError("std_per_dim: need at least 2 rows, got " + std::to_string(b));
    std::vector<double> mu(d, 0.0), out(d, 0.0);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < d; ++j) mu[j] += z[i * d + j];
    for (double& m : mu) m /= static_cast<double>(b);
    for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < d; ++j) {
            const double c = z[i * d + j] - mu[j];
            out[j] += c * c;
        }
    for (double& v : out) v = std::sqrt(v / static_cast<double>(b - 1) + kStabilizer);
    return finish("std_per_dim", {d}, std::move(out), {&z}, [b, d, mu = std::move(mu)](Node& self) {
        double* gz = self.input_grad(0);
        if (!gz) return;
        const auto& zv = self.inputs[0]->value;
        for (std::size_t i = 0; i < b; ++i)
            for (std::size_t j = 0; j < d; ++j) {
                gz[i * d + j] +=
                    self.grad[j] * (zv[i * d + j] - mu[j]) / (static_cast<double>(b - 1) * self.value[j]);
            }
    });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double epsilon) {
    require_matrix("layer_norm", x);
    const std::size_t m = x.shape()[0], n = x.shape()[1];
    if (gain.size() != n || bias.size() != n) {
        throw DimensionError("layer_norm: affine parameters do not match " + shape_string(x.shape()));
    }
    std::vector<double> xhat(x.size()), inv_std(m), out(x.size());
    for (std::size_t i = 0; i < m; ++i) {
        const double* row = x.values().data() + i * n;
        double mu = 0.0;
        for (std::size_t j = 0; j < n; ++j) mu += row[j];
        mu /= static_cast<double>(n);
        double var = 0.0;
        for (std::size_t j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
        var /= static_cast<double>(n);
        inv_std[i] = 1.0 / std::sqrt(var + epsilon);
        for (std::size_t j = 0; j < n; ++j) {
            xhat[i * n + j] = (row[j] - mu) * inv_std[i];
            out[i * n + j] = xhat[i * n + j] * gain[j] + bias[j];
        }
    }
    return finish("layer_norm", x.shape(), std::move(out), {&x, &gain, &bias},
                  [m, n, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                      const auto& gv = self.inputs[1]->value;
                      const double* g = self.grad.data();
                      if (double* gx = self.input_grad(0)) {
                          for (std::size_t i = 0; i < m; ++i) {
                              double mean_d = 0.0, mean_dx = 0.0;
                              for (std::size_t j = 0; j < n; ++j) {
                                  const double dxh = g[i * n + j] * gv[j];
                                  mean_d += dxh;
                                  mean_dx += dxh * xhat[i * n + j];
                              }
                              mean_d /= static_cast<double>(n);
                              mean_dx /= static_cast<double>(n);
                              for (std::size_t j = 0; j < n; ++j) {
                                  const double dxh = g[i * n + j] * gv[j];
                                  gx[i * n + j] += inv_std[i] * (dxh - mean_d - xhat[i * n + j] * mean_dx);
                              }
                          }
                      }
                      if (double* gg = self.input_grad(1)) {
                          for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < n; ++j) gg[j] += g[i * n + j] * xhat[i * n + j];
                      }
                      if (double* gb = self.input_grad(2)) {
                          for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
                      }
                  });
}

// ---- indexing -------------------------------------------------------------

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
    require_matrix("gather_rows", x);
    const std::size_t m = x.shape()[0], n = x.shape()[1];
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    std::vector<double> out(idx.size() * n);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (idx[r] >= m) throw DimensionError("gather_rows: row " + std::to_string(idx[r]) + " out of range");
        std::copy_n(x.values().data() + idx[r] * n, n, out.data() + r * n);
    }
    const std::size_t count = idx.size();
    return finish("gather_rows", {count, n}, std::move(out), {&x}, [n, idx = std::move(idx)](Node& self) {
        if (double* gx = self.input_grad(0)) {
            for (std::size_t r = 0; r < idx.size(); ++r)
                for (std::size_t j = 0; j < n; ++j) gx[idx[r] * n + j] += self.grad[r * n + j];
        }
    });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end) {
    require_matrix("slice_rows", x);
    if (begin > end || end > x.shape()[0]) {
        throw DimensionError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(end) +
                             ") outside " + shape_string(x.shape()));
    }
    const std::size_t n = x.shape()[1];
    std::vector<double> out(x.values().begin() + static_cast<std::ptrdiff_t>(begin * n),
                            x.values().begin() + static_cast<std::ptrdiff_t>(end * n));
    return finish("slice_rows", {end - begin, n}, std::move(out), {&x}, [begin, n](Node& self) {
        if (double* gx = self.input_grad(0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i) gx[begin * n + i] += self.grad[i];
        }
    });
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
    require_matrix("concat_rows", a);
    require_matrix("concat_rows", b);
    if (a.shape()[1] != b.shape()[1]) {
        throw DimensionError("concat_rows: column mismatch " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
    }
    std::vector<double> out;
    out.reserve(a.size() + b.size());
    out.insert(out.end(), a.values().begin(), a.values().end());
    out.insert(out.end(), b.values().begin(), b.values().end());
    const std::size_t split = a.size();
    return finish("concat_rows", {a.shape()[0] + b.shape()[0], a.shape()[1]}, std::move(out), {&a, &b},
                  [split](Node& self) {
                      if (double* ga = self.input_grad(0)) {
                          for (std::size_t i = 0; i < split; ++i) ga[i] += self.grad[i];
                      }
                      if (double* gb = self.input_grad(1)) {
                          for (std::size_t i = split; i < self.grad.size(); ++i) gb[i - split] += self.grad[i];
                      }
                  });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
    require_matrix("slice_cols", x);
    const std::size_t m = x.shape()[0], n = x.shape()[1];
    if (begin > end || end > n) {
        throw DimensionError("slice_cols: [" + std::to_string(begin) + ", " + std::to_string(end) +
                             ") outside " + shape_string(x.shape()));
    }
    const std::size_t w = end - begin;
    std::vector<double> out(m * w);
    for (std::size_t i = 0; i < m; ++i)
        std::copy_n(x.values().data() + i * n + begin, w, out.data() + i * w);
    return finish("slice_cols", {m, w}, std::move(out), {&x}, [m, n, w, begin](Node& self) {
        if (double* gx = self.input_grad(0)) {
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < w; ++j) gx[i * n + begin + j] += self.grad[i * w + j];
        }
    });
}

Tensor concat_cols(std::span<const Tensor> parts) {
    if (parts.empty()) throw DimensionError("concat_cols: no inputs");
    const std::size_t m = parts[0].rows();
    std::vector<std::size_t> offsets;
    std::size_t total = 0;
    for (const Tensor& p : parts) {
        if (p.rank() != 2 || p.rows() != m) throw DimensionError("concat_cols: row mismatch " + shape_string(p.shape()));
        offsets.push_back(total);
        total += p.cols();
    }
    std::vector<double> out(m * total);
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const std::size_t w = parts[k].cols();
        for (std::size_t i = 0; i < m; ++i)
            std::copy_n(parts[k].values().data() + i * w, w, out.data() + i * total + offsets[k]);
    }
    // Record through a variadic node: inputs are attached manually.
    Tape* tape = nullptr;
    for (const Tensor& p : parts) {
        if (!p.requires_grad()) continue;
        if (tape == nullptr) tape = p.tape();
        else if (tape != p.tape()) throw ContractError("operands were recorded on different tapes");
    }
    auto node = std::make_shared<Node>();
    node->op = "concat_cols";
    node->shape = {m, total};
    node->value = std::move(out);
    if (tape) {
        node->requires_grad = true;
        node->tape = tape;
        for (const Tensor& p : parts) node->inputs.push_back(p.node());
        node->backward = [m, total, offsets = std::move(offsets)](Node& self) {
            for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                double* gk = self.input_grad(k);
                if (!gk) continue;
                const std::size_t w = self.inputs[k]->shape[1];
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t j = 0; j < w; ++j) gk[i * w + j] += self.grad[i * total + offsets[k] + j];
            }
        };
        tape->record(node);
    }
    return Tensor(std::move(node));
}

Tensor fill_diagonal(const Tensor& x, double value) {
    require_matrix("fill_diagonal", x);
    const std::size_t n = x.shape()[0];
    if (x.shape()[1] != n) throw DimensionError("fill_diagonal: not square " + shape_string(x.shape()));
    std::vector<double> out(x.values().begin(), x.values().end());
    for (std::size_t i = 0; i < n; ++i) out[i * n + i] = value;
    return finish("fill_diagonal", x.shape(), std::move(out), {&x}, [n](Node& self) {
        if (double* gx = self.input_grad(0)) {
            for (std::size_t i = 0; i < self.grad.size(); ++i)
                if (i % (n + 1) != 0) gx[i] += self.grad[i];
        }
    });
}

Tensor cross_entropy(const Tensor& logits, std::size_t label) {
    const std::size_t n = logits.size();
    if (label >= n) throw ContractError("cross_entropy: label " + std::to_string(label) + " out of range");
    require_finite("cross_entropy", logits.values());
    const double mx = *std::max_element(logits.values().begin(), logits.values().end());
    double z = 0.0;
    for (double v : logits.values()) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    return finish("cross_entropy", {}, {lse - logits[label]}, {&logits}, [label, lse](Node& self) {
        if (double* gl = self.input_grad(0)) {
            const auto& lv = self.inputs[0]->value;
            const double g = self.grad[0];
            for (std::size_t i = 0; i < lv.size(); ++i) {
                gl[i] += g * (std::exp(lv[i] - lse) - (i == label ? 1.0 : 0.0));
            }
        }
    });
}

}  // namespace tubejepa
