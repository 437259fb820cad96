// Copyright (c) 2026 The tubejepa authors
// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major tensors with tape-based reverse-mode differentiation.
//
// A Tensor is an immutable value plus an optional link to the Tape that
// recorded it. Operations whose inputs all lack `requires_grad` produce plain
// constants and record nothing, so inference paths (EMA teacher, finite
// difference probes) run without taping overhead.
//
//   Tape tape;
//   auto w = tape.variable({2, 2}, {1, 2, 3, 4});
//   auto y = sum(matmul(w, w));
//   tape.backward(y);
//   auto dw = w.grad();
//
// A tape must outlive every tensor it recorded. A tape is single-writer;
// disjoint tapes may be used from different threads.

#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tubejepa {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string shape_string(const Shape& shape);

enum class Precision { f64, f32 };

class Tape;

namespace detail {

struct Node {
    std::string_view op;
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // empty until materialized
    bool requires_grad = false;
    Tape* tape = nullptr;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    // Gradient buffer of input `k`, zero-initialized on first use. Returns
    // nullptr when that input does not participate in differentiation.
    double* input_grad(std::size_t k);
};

}  // namespace detail

class Tensor {
public:
    Tensor();

    static Tensor constant(Shape shape, std::vector<double> values);
    static Tensor scalar(double value);
    static Tensor zeros(Shape shape);

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->value.size(); }
    std::size_t rows() const;
    std::size_t cols() const;

    std::span<const double> values() const { return node_->value; }
    double operator[](std::size_t i) const { return node_->value[i]; }
    double at(std::size_t row, std::size_t col) const;
    double item() const;

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    // Throws ContractError when no gradient was materialized.
    std::span<const double> grad() const;
    // Materialized gradient, or zeros of the same shape.
    std::vector<double> grad_or_zeros() const;

    std::string_view op() const { return node_->op; }
    Tape* tape() const { return node_->tape; }

    // Same values, no tape linkage.
    Tensor detach() const;

    // Internal: used by operation implementations.
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
    const std::shared_ptr<detail::Node>& node() const { return node_; }

private:
    std::shared_ptr<detail::Node> node_;
};

class Tape {
public:
    Tape() = default;
    explicit Tape(Precision precision) : precision_(precision) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Tensor variable(Shape shape, std::vector<double> values);
    Tensor variable(const Tensor& value) {
        return variable(value.shape(), {value.values().begin(), value.values().end()});
    }

    // Seeds d(root)/d(root) = 1 and visits every recorded node once, in
    // reverse recording order. May be called at most once per tape.
    void backward(const Tensor& root);

    std::size_t size() const { return nodes_.size(); }
    Precision precision() const { return precision_; }

    // Internal: records a freshly built node.
    void record(const std::shared_ptr<detail::Node>& node);

private:
    Precision precision_ = Precision::f64;
    bool backward_done_ = false;
    std::vector<std::shared_ptr<detail::Node>> nodes_;
};

// ---- primitives -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// a[m x n] + b[n] broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor gelu(const Tensor& a);

// Softmax along the last axis of x / temperature, with max subtraction.
Tensor softmax(const Tensor& x, double temperature = 1.0);

// Sum of absolute differences. The subgradient at a zero difference is 0.
Tensor l1_distance(const Tensor& a, const Tensor& b);

// Row-wise u / max(||u||_2, epsilon) along the last axis.
Tensor l2_normalize(const Tensor& u, double epsilon = 1e-8);

inline constexpr double kKlFloor = 1e-12;

// Sum over rows (last axis = distribution) of sum_j p log(p / max(q, floor)),
// with 0 log 0 := 0. Rows of p and q must be probability vectors.
Tensor kl_divergence(const Tensor& p, const Tensor& q, double floor = kKlFloor);

// Per-column sample standard deviation of z[B x D], sqrt(var + 1e-12).
Tensor std_per_dim(const Tensor& z);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double epsilon = 1e-6);

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_cols(std::span<const Tensor> parts);

// Square matrix with its diagonal replaced by `value` (no gradient there).
Tensor fill_diagonal(const Tensor& x, double value);

// -log softmax(logits)[label]; logits may have any shape, read flat.
Tensor cross_entropy(const Tensor& logits, std::size_t label);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double c, const Tensor& a) { return scale(a, c); }

namespace testing {

// Negates the upstream gradient flowing into every node produced by `op`
// during backward. Used to prove the gradient checker catches broken
// derivatives. Process-global; not thread-safe.
void set_backward_fault(std::string op);
void clear_backward_fault();

}  // namespace testing

}  // namespace tubejepa
