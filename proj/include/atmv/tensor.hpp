// SPDX-License-Identifier: Apache-2.0
#pragma once

// Dense row-major n-d array with reverse-mode autodiff. The tape is built per
// forward pass (ops whose inputs carry requires_grad record a backward
// closure) and freed when the last Tensor handle drops. Ops on untracked
// tensors build no graph at all, so inference allocates nothing but values.
//
// Broadcasting is explicit and minimal: binary elementwise ops require equal
// rank, and each axis pair must match or be 1 on one side. There is no
// implicit rank promotion; reshape to the target rank first.

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "atmv/errors.hpp"
#include "atmv/kernels.hpp"
#include "atmv/rng.hpp"

namespace atmv {

using Shape = std::vector<int>;

std::int64_t numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {

struct Node {
    Shape shape;
    std::vector<real> val;
    std::vector<real> grad;  // allocated on first use
    bool requires_grad = false;
    bool is_leaf = true;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    void ensure_grad() {
        if (grad.empty()) grad.assign(val.size(), real(0));
    }
};

}  // namespace detail

class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, real value, bool requires_grad = false);
    static Tensor from_data(Shape shape, std::vector<real> values, bool requires_grad = false);
    static Tensor scalar(real value, bool requires_grad = false);
    static Tensor randn(Shape shape, Rng& rng, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int rank() const { return int(node_->shape.size()); }
    int dim(int axis) const { return node_->shape[axis]; }
    std::int64_t size() const { return std::int64_t(node_->val.size()); }

    std::span<const real> data() const { return node_->val; }
    // In-place mutation is reserved for leaves (parameters, buffers); a value
    // produced by an op is an immutable graph node.
    std::span<real> raw_data();

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg);
    std::span<const real> grad() const { return node_->grad; }
    std::span<real> grad_mut() { return node_->grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    void zero_grad();

    real item() const;

    // Reverse-mode sweep from this scalar; accumulates (+=) into .grad of
    // every reachable tensor with requires_grad.
    void backward() const;

    // A leaf copy of the values: same data, no graph link, no grad tracking.
    Tensor detach() const;

    detail::Node* node() const { return node_.get(); }

private:
    explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}
    std::shared_ptr<detail::Node> node_;

    friend Tensor make_op(Shape shape, std::vector<Tensor> parents,
                          std::function<void(detail::Node&)> backward_fn);
};

// Internal op constructor, exposed for composite layers.
Tensor make_op(Shape shape, std::vector<Tensor> parents,
               std::function<void(detail::Node&)> backward_fn);

// Elementwise; equal rank, per-axis extent equal or 1.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& x, real c);
// a + c*b, shapes equal.
Tensor add_scaled(const Tensor& a, const Tensor& b, real c);

Tensor matmul(const Tensor& a, const Tensor& b);        // [m,k]·[k,n]
Tensor bmm(const Tensor& a, const Tensor& b);           // [B,m,k]·[B,k,n]
// x[N,in]·W[out,in]^T (+ bias[out] when defined) -> [N,out]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias = {});

// Cross-correlation, stride 1, zero 'same' padding; kh, kw odd.
// x: [Cin,H,W] or [N,Cin,H,W]; k: [Cout,Cin,kh,kw].
Tensor conv2d(const Tensor& x, const Tensor& k);

Tensor softmax(const Tensor& x, int axis);
Tensor silu(const Tensor& x);
// x: [N,C,H,W]; gamma, beta: [C]. Per-sample, per-group moments.
Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta);

Tensor sum(const Tensor& x);   // -> shape {1}
Tensor mean(const Tensor& x);  // -> shape {1}

Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& axes);
Tensor slice(const Tensor& x, int axis, int start, int len);
Tensor concat(std::span<const Tensor> parts, int axis);
// Shift along axis 0 by `offset` frames, zero-filled: out[t] = x[t - offset].
Tensor shift_frames(const Tensor& x, int offset);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

bool all_finite(std::span<const real> v);

}  // namespace atmv
