// SPDX-License-Identifier: Apache-2.0
#include "atmv/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <unordered_set>
#include <utility>

namespace atmv {

using detail::Node;

std::int64_t numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

namespace {

void require_defined(const Tensor& t, const char* op) {
    if (!t.defined()) throw UsageError(std::string(op) + ": undefined tensor operand");
}

void require_rank(const Tensor& t, int r, const char* op) {
    if (t.rank() != r)
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(r) + ", got " +
                         shape_str(t.shape()));
}

std::shared_ptr<Node> new_node(Shape shape) {
    for (int d : shape)
        if (d <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->val.assign(std::size_t(numel(n->shape)), real(0));
    return n;
}

std::vector<std::int64_t> row_strides(const Shape& s) {
    std::vector<std::int64_t> st(s.size());
    std::int64_t acc = 1;
    for (int i = int(s.size()) - 1; i >= 0; --i) {
        st[i] = acc;
        acc *= s[i];
    }
    return st;
}

// Odometer over `out`; strides may contain 0 entries (broadcast axes).
template <class F>
void walk2(const Shape& out, const std::vector<std::int64_t>& sa,
           const std::vector<std::int64_t>& sb, F&& f) {
    const int r = int(out.size());
    const std::int64_t n = numel(out);
    std::vector<int> idx(r, 0);
    std::int64_t oa = 0, ob = 0;
    for (std::int64_t o = 0; o < n; ++o) {
        f(o, oa, ob);
        for (int d = r - 1; d >= 0; --d) {
            ++idx[d];
            oa += sa[d];
            ob += sb[d];
            if (idx[d] < out[d]) break;
            oa -= std::int64_t(out[d]) * sa[d];
            ob -= std::int64_t(out[d]) * sb[d];
            idx[d] = 0;
        }
    }
}

template <class F>
void walk1(const Shape& out, const std::vector<std::int64_t>& sa, F&& f) {
    static const std::vector<std::int64_t> none;
    std::vector<std::int64_t> zero(out.size(), 0);
    walk2(out, sa, zero, [&](std::int64_t o, std::int64_t oa, std::int64_t) { f(o, oa); });
}

struct BcastPlan {
    Shape out;
    std::vector<std::int64_t> sa, sb;
    bool same = false;
};

BcastPlan plan_binary(const char* op, const Shape& a, const Shape& b) {
    if (a.size() != b.size())
        throw ShapeError(std::string(op) + ": rank mismatch " + shape_str(a) + " vs " + shape_str(b));
    BcastPlan p;
    p.out.resize(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == b[i]) p.out[i] = a[i];
        else if (a[i] == 1) p.out[i] = b[i];
        else if (b[i] == 1) p.out[i] = a[i];
        else
            throw ShapeError(std::string(op) + ": incompatible shapes " + shape_str(a) + " vs " +
                             shape_str(b));
    }
    p.same = (a == b);
    p.sa = row_strides(a);
    p.sb = row_strides(b);
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == 1 && p.out[i] != 1) p.sa[i] = 0;
        if (b[i] == 1 && p.out[i] != 1) p.sb[i] = 0;
    }
    return p;
}

enum class EOp { Add, Sub, Mul };

// col rows indexed ((c*kh+dy)*kw+dx), columns y*W+x; zero 'same' padding.
void im2col(const real* x, int C, int H, int W, int kh, int kw, real* col) {
    const int ph = kh / 2, pw = kw / 2;
    const std::int64_t hw = std::int64_t(H) * W;
    std::int64_t r = 0;
    for (int c = 0; c < C; ++c)
        for (int dy = 0; dy < kh; ++dy)
            for (int dx = 0; dx < kw; ++dx, ++r) {
                real* dst = col + r * hw;
                const int sy = dy - ph, sx = dx - pw;
                for (int y = 0; y < H; ++y) {
                    real* drow = dst + std::int64_t(y) * W;
                    const int yy = y + sy;
                    if (yy < 0 || yy >= H) {
                        std::fill(drow, drow + W, real(0));
                        continue;
                    }
                    const real* srow = x + (std::int64_t(c) * H + yy) * W;
                    const int x0 = std::max(0, -sx);
                    const int x1 = std::max(x0, std::min(W, W - sx));
                    std::fill(drow, drow + x0, real(0));
                    if (x1 > x0)
                        std::memcpy(drow + x0, srow + x0 + sx, std::size_t(x1 - x0) * sizeof(real));
                    std::fill(drow + x1, drow + W, real(0));
                }
            }
}

// Transpose scatter of im2col: accumulates into dx.
void col2im_acc(const real* col, int C, int H, int W, int kh, int kw, real* dx) {
    const int ph = kh / 2, pw = kw / 2;
    const std::int64_t hw = std::int64_t(H) * W;
    std::int64_t r = 0;
    for (int c = 0; c < C; ++c)
        for (int dy = 0; dy < kh; ++dy)
            for (int dx_ = 0; dx_ < kw; ++dx_, ++r) {
                const real* src = col + r * hw;
                const int sy = dy - ph, sx = dx_ - pw;
                for (int y = 0; y < H; ++y) {
                    const int yy = y + sy;
                    if (yy < 0 || yy >= H) continue;
                    const real* srow = src + std::int64_t(y) * W;
                    real* drow = dx + (std::int64_t(c) * H + yy) * W;
                    const int x0 = std::max(0, -sx);
                    const int x1 = std::max(x0, std::min(W, W - sx));
                    for (int xc = x0; xc < x1; ++xc) drow[xc + sx] += srow[xc];
                }
            }
}

Tensor binary_op(const Tensor& a, const Tensor& b, EOp op, const char* name) {
    require_defined(a, name);
    require_defined(b, name);
    BcastPlan p = plan_binary(name, a.shape(), b.shape());

    auto bwd = [a, b, p, op](Node& self) {
        Node* an = a.node();
        Node* bn = b.node();
        const real* g = self.grad.data();
        const std::size_t n = self.val.size();
        if (an->requires_grad) {
            an->ensure_grad();
            real* da = an->grad.data();
            const real* bv = bn->val.data();
            if (p.same) {
                switch (op) {
                    case EOp::Add:
                    case EOp::Sub: kern::active().axpy(n, real(1), g, da); break;
                    case EOp::Mul:
                        for (std::size_t i = 0; i < n; ++i) da[i] += g[i] * bv[i];
                        break;
                }
            } else {
                switch (op) {
                    case EOp::Add:
                    case EOp::Sub:
                        walk2(p.out, p.sa, p.sb,
                              [&](std::int64_t o, std::int64_t oa, std::int64_t) { da[oa] += g[o]; });
                        break;
                    case EOp::Mul:
                        walk2(p.out, p.sa, p.sb, [&](std::int64_t o, std::int64_t oa, std::int64_t ob) {
                            da[oa] += g[o] * bv[ob];
                        });
                        break;
                }
            }
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            real* db = bn->grad.data();
            const real* av = an->val.data();
            if (p.same) {
                switch (op) {
                    case EOp::Add: kern::active().axpy(n, real(1), g, db); break;
                    case EOp::Sub: kern::active().axpy(n, real(-1), g, db); break;
                    case EOp::Mul:
                        for (std::size_t i = 0; i < n; ++i) db[i] += g[i] * av[i];
                        break;
                }
            } else {
                switch (op) {
                    case EOp::Add:
                        walk2(p.out, p.sa, p.sb,
                              [&](std::int64_t o, std::int64_t, std::int64_t ob) { db[ob] += g[o]; });
                        break;
                    case EOp::Sub:
                        walk2(p.out, p.sa, p.sb,
                              [&](std::int64_t o, std::int64_t, std::int64_t ob) { db[ob] -= g[o]; });
                        break;
                    case EOp::Mul:
                        walk2(p.out, p.sa, p.sb, [&](std::int64_t o, std::int64_t oa, std::int64_t ob) {
                            db[ob] += g[o] * av[oa];
                        });
                        break;
                }
            }
        }
    };

    Tensor out = make_op(p.out, {a, b}, std::move(bwd));
    real* ov = out.node()->val.data();
    const real* av = a.data().data();
    const real* bv = b.data().data();
    const std::size_t n = out.node()->val.size();
    if (p.same) {
        auto& K = kern::active();
        switch (op) {
            case EOp::Add: K.add(n, av, bv, ov); break;
            case EOp::Sub: K.sub(n, av, bv, ov); break;
            case EOp::Mul: K.mul(n, av, bv, ov); break;
        }
    } else {
        switch (op) {
            case EOp::Add:
                walk2(p.out, p.sa, p.sb, [&](std::int64_t o, std::int64_t oa, std::int64_t ob) {
                    ov[o] = av[oa] + bv[ob];
                });
                break;
            case EOp::Sub:
                walk2(p.out, p.sa, p.sb, [&](std::int64_t o, std::int64_t oa, std::int64_t ob) {
                    ov[o] = av[oa] - bv[ob];
                });
                break;
            case EOp::Mul:
                walk2(p.out, p.sa, p.sb, [&](std::int64_t o, std::int64_t oa, std::int64_t ob) {
                    ov[o] = av[oa] * bv[ob];
                });
                break;
        }
    }
    return out;
}

}  // namespace

// ---------------------------------------------------------------- tensor ---

Tensor make_op(Shape shape, std::vector<Tensor> parents,
               std::function<void(Node&)> backward_fn) {
    auto n = new_node(std::move(shape));
    n->is_leaf = false;
    bool rg = false;
    for (const auto& p : parents)
        if (p.defined() && p.requires_grad()) rg = true;
    n->requires_grad = rg;
    if (rg) {
        for (const auto& p : parents)
            if (p.defined()) n->parents.push_back(p.node_);
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    Tensor t(new_node(std::move(shape)));
    t.node_->requires_grad = requires_grad;
    return t;
}

Tensor Tensor::full(Shape shape, real value, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    std::fill(t.node_->val.begin(), t.node_->val.end(), value);
    return t;
}

Tensor Tensor::from_data(Shape shape, std::vector<real> values, bool requires_grad) {
    if (std::int64_t(values.size()) != numel(shape))
        throw ShapeError("from_data: " + std::to_string(values.size()) + " values for shape " +
                         shape_str(shape));
    Tensor t = zeros(std::move(shape), requires_grad);
    t.node_->val = std::move(values);
    return t;
}

Tensor Tensor::scalar(real value, bool requires_grad) {
    return full({1}, value, requires_grad);
}

Tensor Tensor::randn(Shape shape, Rng& rng, bool requires_grad) {
    Tensor t = zeros(std::move(shape), requires_grad);
    rng.fill_normal(t.node_->val);
    return t;
}

std::span<real> Tensor::raw_data() {
    if (!node_->is_leaf) throw UsageError("raw_data: op results are immutable; mutate leaves only");
    return node_->val;
}

void Tensor::set_requires_grad(bool rg) {
    if (!node_->is_leaf) throw UsageError("set_requires_grad: only leaves can change tracking");
    node_->requires_grad = rg;
}

void Tensor::zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), real(0));
}

real Tensor::item() const {
    if (!defined() || node_->val.size() != 1)
        throw UsageError("item: tensor is not a single element");
    return node_->val[0];
}

Tensor Tensor::detach() const {
    Tensor t(new_node(node_->shape));
    t.node_->val = node_->val;
    return t;
}

void Tensor::backward() const {
    if (!defined()) throw UsageError("backward: undefined tensor");
    if (node_->val.size() != 1)
        throw UsageError("backward requires a scalar, got shape " + shape_str(node_->shape));
    if (!node_->requires_grad)
        throw UsageError("backward: tensor has no graph (requires_grad is false)");

    // Post-order DFS: parents precede children in `order`.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    struct Frame {
        Node* n;
        std::size_t next;
    };
    std::vector<Frame> stack{{node_.get(), 0}};
    seen.insert(node_.get());
    while (!stack.empty()) {
        Frame& f = stack.back();
        if (f.next < f.n->parents.size()) {
            Node* p = f.n->parents[f.next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(f.n);
            stack.pop_back();
        }
    }

    // Leaf grads accumulate across sweeps; interior grads are per-sweep
    // scratch and start from zero so a second backward adds exactly one more
    // copy of the gradient.
    for (Node* n : order)
        if (!n->is_leaf && !n->grad.empty()) std::fill(n->grad.begin(), n->grad.end(), real(0));

    node_->ensure_grad();
    node_->grad[0] += real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backward_fn) {
            n->ensure_grad();
            n->backward_fn(*n);
        }
    }
}

// ------------------------------------------------------------------- ops ---

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, EOp::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, EOp::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, EOp::Mul, "mul"); }

Tensor scale(const Tensor& x, real c) {
    require_defined(x, "scale");
    auto bwd = [x, c](Node& self) {
        Node* xn = x.node();
        if (!xn->requires_grad) return;
        xn->ensure_grad();
        kern::active().axpy(self.grad.size(), c, self.grad.data(), xn->grad.data());
    };
    Tensor out = make_op(x.shape(), {x}, std::move(bwd));
    auto& v = out.node()->val;
    std::memcpy(v.data(), x.data().data(), v.size() * sizeof(real));
    kern::active().scale(v.size(), c, v.data());
    return out;
}

Tensor add_scaled(const Tensor& a, const Tensor& b, real c) {
    require_defined(a, "add_scaled");
    require_defined(b, "add_scaled");
    if (a.shape() != b.shape())
        throw ShapeError("add_scaled: shapes differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    auto bwd = [a, b, c](Node& self) {
        const real* g = self.grad.data();
        const std::size_t n = self.grad.size();
        if (a.node()->requires_grad) {
            a.node()->ensure_grad();
            kern::active().axpy(n, real(1), g, a.node()->grad.data());
        }
        if (b.node()->requires_grad) {
            b.node()->ensure_grad();
            kern::active().axpy(n, c, g, b.node()->grad.data());
        }
    };
    Tensor out = make_op(a.shape(), {a, b}, std::move(bwd));
    kern::active().lincomb(out.node()->val.size(), real(1), a.data().data(), c, b.data().data(),
                           out.node()->val.data());
    return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_defined(a, "matmul");
    require_defined(b, "matmul");
    require_rank(a, 2, "matmul");
    require_rank(b, 2, "matmul");
    if (a.dim(1) != b.dim(0))
        throw ShapeError("matmul: inner extents differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const std::size_t m = std::size_t(a.dim(0)), k = std::size_t(a.dim(1)), n = std::size_t(b.dim(1));
    auto bwd = [a, b, m, k, n](Node& self) {
        const real* g = self.grad.data();
        if (a.node()->requires_grad) {
            a.node()->ensure_grad();
            // dA += g · B^T; B stored [k,n]
            kern::active().gemm_nt(m, k, n, g, b.node()->val.data(), a.node()->grad.data());
        }
        if (b.node()->requires_grad) {
            b.node()->ensure_grad();
            // dB += A^T · g; A stored [m,k]
            kern::active().gemm_tn(k, n, m, a.node()->val.data(), g, b.node()->grad.data());
        }
    };
    Tensor out = make_op({int(m), int(n)}, {a, b}, std::move(bwd));
    kern::active().gemm_nn(m, n, k, a.data().data(), b.data().data(), out.node()->val.data());
    return out;
}

Tensor bmm(const Tensor& a, const Tensor& b) {
    require_defined(a, "bmm");
    require_defined(b, "bmm");
    require_rank(a, 3, "bmm");
    require_rank(b, 3, "bmm");
    if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1))
        throw ShapeError("bmm: incompatible shapes " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    const std::size_t B = std::size_t(a.dim(0)), m = std::size_t(a.dim(1)),
                      k = std::size_t(a.dim(2)), n = std::size_t(b.dim(2));
    auto bwd = [a, b, B, m, k, n](Node& self) {
        const real* g = self.grad.data();
        for (std::size_t i = 0; i < B; ++i) {
            const real* gi = g + i * m * n;
            if (a.node()->requires_grad) {
                a.node()->ensure_grad();
                kern::active().gemm_nt(m, k, n, gi, b.node()->val.data() + i * k * n,
                                       a.node()->grad.data() + i * m * k);
            }
            if (b.node()->requires_grad) {
                b.node()->ensure_grad();
                kern::active().gemm_tn(k, n, m, a.node()->val.data() + i * m * k, gi,
                                       b.node()->grad.data() + i * k * n);
            }
        }
    };
    Tensor out = make_op({int(B), int(m), int(n)}, {a, b}, std::move(bwd));
    for (std::size_t i = 0; i < B; ++i)
        kern::active().gemm_nn(m, n, k, a.data().data() + i * m * k, b.data().data() + i * k * n,
                               out.node()->val.data() + i * m * n);
    return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
    require_defined(x, "linear");
    require_defined(w, "linear");
    require_rank(x, 2, "linear");
    require_rank(w, 2, "linear");
    if (x.dim(1) != w.dim(1))
        throw ShapeError("linear: input width " + std::to_string(x.dim(1)) +
                         " vs weight width " + std::to_string(w.dim(1)));
    if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != w.dim(0)))
        throw ShapeError("linear: bias shape " + shape_str(bias.shape()) + " for " +
                         std::to_string(w.dim(0)) + " outputs");
    const std::size_t N = std::size_t(x.dim(0)), in = std::size_t(x.dim(1)),
                      outw = std::size_t(w.dim(0));
    auto bwd = [x, w, bias, N, in, outw](Node& self) {
        const real* g = self.grad.data();
        if (x.node()->requires_grad) {
            x.node()->ensure_grad();
            kern::active().gemm_nn(N, in, outw, g, w.node()->val.data(), x.node()->grad.data());
        }
        if (w.node()->requires_grad) {
            w.node()->ensure_grad();
            kern::active().gemm_tn(outw, in, N, g, x.node()->val.data(), w.node()->grad.data());
        }
        if (bias.defined() && bias.node()->requires_grad) {
            bias.node()->ensure_grad();
            real* db = bias.node()->grad.data();
            for (std::size_t i = 0; i < N; ++i)
                kern::active().axpy(outw, real(1), g + i * outw, db);
        }
    };
    std::vector<Tensor> parents = bias.defined() ? std::vector<Tensor>{x, w, bias}
                                                 : std::vector<Tensor>{x, w};
    Tensor out = make_op({int(N), int(outw)}, std::move(parents), std::move(bwd));
    real* ov = out.node()->val.data();
    kern::active().gemm_nt(N, outw, in, x.data().data(), w.data().data(), ov);
    if (bias.defined())
        for (std::size_t i = 0; i < N; ++i)
            kern::active().axpy(outw, real(1), bias.data().data(), ov + i * outw);
    return out;
}

Tensor conv2d(const Tensor& x, const Tensor& k) {
    require_defined(x, "conv2d");
    require_defined(k, "conv2d");
    if (x.rank() != 3 && x.rank() != 4)
        throw ShapeError("conv2d: input must be [C,H,W] or [N,C,H,W], got " + shape_str(x.shape()));
    require_rank(k, 4, "conv2d");
    const bool batched = x.rank() == 4;
    const int N = batched ? x.dim(0) : 1;
    const int Cin = batched ? x.dim(1) : x.dim(0);
    const int H = batched ? x.dim(2) : x.dim(1);
    const int W = batched ? x.dim(3) : x.dim(2);
    const int Cout = k.dim(0), kh = k.dim(2), kw = k.dim(3);
    if (kh % 2 == 0 || kw % 2 == 0)
        throw ConfigError("conv2d: kernel extents must be odd for same padding, got " +
                          shape_str(k.shape()));
    if (k.dim(1) != Cin)
        throw ShapeError("conv2d: " + std::to_string(Cin) + " input channels vs kernel " +
                         shape_str(k.shape()));
    const std::int64_t hw = std::int64_t(H) * W;
    const std::int64_t ckk = std::int64_t(Cin) * kh * kw;
    const std::int64_t xstep = std::int64_t(Cin) * hw;
    const std::int64_t ostep = std::int64_t(Cout) * hw;

    auto bwd = [x, k, N, Cin, H, W, Cout, kh, kw, hw, ckk, xstep, ostep](Node& self) {
        const bool need_dx = x.node()->requires_grad;
        const bool need_dk = k.node()->requires_grad;
        if (!need_dx && !need_dk) return;
        std::vector<real> col(std::size_t(ckk * hw));
        std::vector<real> dcol(need_dx ? std::size_t(ckk * hw) : 0);
        if (need_dx) x.node()->ensure_grad();
        if (need_dk) k.node()->ensure_grad();
        for (int n = 0; n < N; ++n) {
            const real* gn = self.grad.data() + n * ostep;
            if (need_dk) {
                im2col(x.node()->val.data() + n * xstep, Cin, H, W, kh, kw, col.data());
                kern::active().gemm_nt(std::size_t(Cout), std::size_t(ckk), std::size_t(hw), gn,
                                       col.data(), k.node()->grad.data());
            }
            if (need_dx) {
                std::fill(dcol.begin(), dcol.end(), real(0));
                kern::active().gemm_tn(std::size_t(ckk), std::size_t(hw), std::size_t(Cout),
                                       k.node()->val.data(), gn, dcol.data());
                col2im_acc(dcol.data(), Cin, H, W, kh, kw, x.node()->grad.data() + n * xstep);
            }
        }
    };

    Shape oshape = batched ? Shape{N, Cout, H, W} : Shape{Cout, H, W};
    Tensor out = make_op(std::move(oshape), {x, k}, std::move(bwd));
    std::vector<real> col(std::size_t(ckk * hw));
    for (int n = 0; n < N; ++n) {
        im2col(x.data().data() + n * xstep, Cin, H, W, kh, kw, col.data());
        kern::active().gemm_nn(std::size_t(Cout), std::size_t(hw), std::size_t(ckk),
                               k.data().data(), col.data(), out.node()->val.data() + n * ostep);
    }
    return out;
}

Tensor softmax(const Tensor& x, int axis) {
    require_defined(x, "softmax");
    const int r = x.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r)
        throw ShapeError("softmax: axis out of range for " + shape_str(x.shape()));
    const Shape& s = x.shape();
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= s[i];
    for (int i = axis + 1; i < r; ++i) inner *= s[i];
    const std::int64_t axlen = s[axis];

    auto bwd = [x, outer, inner, axlen](Node& self) {
        if (!x.node()->requires_grad) return;
        x.node()->ensure_grad();
        const real* y = self.val.data();
        const real* g = self.grad.data();
        real* dx = x.node()->grad.data();
        for (std::int64_t o = 0; o < outer; ++o)
            for (std::int64_t i = 0; i < inner; ++i) {
                const std::int64_t base = (o * axlen) * inner + i;
                real dot = 0;
                for (std::int64_t t = 0; t < axlen; ++t) {
                    const std::int64_t j = base + t * inner;
                    dot += g[j] * y[j];
                }
                for (std::int64_t t = 0; t < axlen; ++t) {
                    const std::int64_t j = base + t * inner;
                    dx[j] += y[j] * (g[j] - dot);
                }
            }
    };

    Tensor out = make_op(s, {x}, std::move(bwd));
    const real* xv = x.data().data();
    real* ov = out.node()->val.data();
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < inner; ++i) {
            const std::int64_t base = (o * axlen) * inner + i;
            real m = -std::numeric_limits<real>::infinity();
            for (std::int64_t t = 0; t < axlen; ++t) m = std::max(m, xv[base + t * inner]);
            real sum = 0;
            for (std::int64_t t = 0; t < axlen; ++t) {
                const std::int64_t j = base + t * inner;
                const real e = std::exp(xv[j] - m);
                ov[j] = e;
                sum += e;
            }
            // NaN input or an all -inf lane both surface as a bad sum.
            if (!(sum >= real(1)) || !std::isfinite(sum))
                throw InvariantError("softmax: lane is not finite");
            const real inv = real(1) / sum;
            for (std::int64_t t = 0; t < axlen; ++t) ov[base + t * inner] *= inv;
        }
    return out;
}

Tensor silu(const Tensor& x) {
    require_defined(x, "silu");
    auto bwd = [x](Node& self) {
        if (!x.node()->requires_grad) return;
        x.node()->ensure_grad();
        kern::active().silu_bwd(self.val.size(), x.node()->val.data(), self.grad.data(),
                                x.node()->grad.data());
    };
    Tensor out = make_op(x.shape(), {x}, std::move(bwd));
    kern::active().silu(out.node()->val.size(), x.data().data(), out.node()->val.data());
    return out;
}

Tensor group_norm(const Tensor& x, int groups, const Tensor& gamma, const Tensor& beta) {
    require_defined(x, "group_norm");
    require_defined(gamma, "group_norm");
    require_defined(beta, "group_norm");
    require_rank(x, 4, "group_norm");
    require_rank(gamma, 1, "group_norm");
    require_rank(beta, 1, "group_norm");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (groups < 1 || C % groups != 0)
        throw ConfigError("group_norm: " + std::to_string(C) + " channels not divisible into " +
                          std::to_string(groups) + " groups");
    if (gamma.dim(0) != C || beta.dim(0) != C)
        throw ShapeError("group_norm: affine params must have extent " + std::to_string(C));
    constexpr double eps = 1e-5;
    const int cpg = C / groups;
    const std::int64_t hw = std::int64_t(H) * W;
    const std::int64_t M = cpg * hw;

    // mean and 1/sqrt(var+eps) per (n, group), filled during the forward pass
    auto saved = std::make_shared<std::vector<real>>(std::size_t(N) * groups * 2);

    auto bwd = [x, gamma, beta, saved, N, C, groups, cpg, hw, M](Node& self) {
        const real* xv = x.node()->val.data();
        const real* g = self.grad.data();
        const real* gam = gamma.node()->val.data();
        const bool need_dx = x.node()->requires_grad;
        const bool need_dg = gamma.node()->requires_grad;
        const bool need_db = beta.node()->requires_grad;
        if (need_dx) x.node()->ensure_grad();
        if (need_dg) gamma.node()->ensure_grad();
        if (need_db) beta.node()->ensure_grad();
        for (int n = 0; n < N; ++n)
            for (int gi = 0; gi < groups; ++gi) {
                const real mu = (*saved)[std::size_t(n * groups + gi) * 2];
                const real inv = (*saved)[std::size_t(n * groups + gi) * 2 + 1];
                const std::int64_t base = (std::int64_t(n) * C + std::int64_t(gi) * cpg) * hw;
                if (need_dg || need_db) {
                    for (int c = 0; c < cpg; ++c) {
                        const int ch = gi * cpg + c;
                        const std::int64_t cb = base + std::int64_t(c) * hw;
                        double sg = 0, sgx = 0;
                        for (std::int64_t j = 0; j < hw; ++j) {
                            const real xh = (xv[cb + j] - mu) * inv;
                            sg += g[cb + j];
                            sgx += double(g[cb + j]) * xh;
                        }
                        if (need_db) beta.node()->grad[ch] += real(sg);
                        if (need_dg) gamma.node()->grad[ch] += real(sgx);
                    }
                }
                if (need_dx) {
                    double s1 = 0, s2 = 0;  // sums of dxhat and dxhat*xhat
                    for (int c = 0; c < cpg; ++c) {
                        const std::int64_t cb = base + std::int64_t(c) * hw;
                        const real gc = gam[gi * cpg + c];
                        for (std::int64_t j = 0; j < hw; ++j) {
                            const real dxh = g[cb + j] * gc;
                            const real xh = (xv[cb + j] - mu) * inv;
                            s1 += dxh;
                            s2 += double(dxh) * xh;
                        }
                    }
                    const real m1 = real(s1 / double(M)), m2 = real(s2 / double(M));
                    real* dx = x.node()->grad.data();
                    for (int c = 0; c < cpg; ++c) {
                        const std::int64_t cb = base + std::int64_t(c) * hw;
                        const real gc = gam[gi * cpg + c];
                        for (std::int64_t j = 0; j < hw; ++j) {
                            const real dxh = g[cb + j] * gc;
                            const real xh = (xv[cb + j] - mu) * inv;
                            dx[cb + j] += inv * (dxh - m1 - xh * m2);
                        }
                    }
                }
            }
    };

    Tensor out = make_op(x.shape(), {x, gamma, beta}, std::move(bwd));
    const real* xv = x.data().data();
    real* ov = out.node()->val.data();
    const real* gam = gamma.data().data();
    const real* bet = beta.data().data();
    for (int n = 0; n < N; ++n)
        for (int gi = 0; gi < groups; ++gi) {
            const std::int64_t base = (std::int64_t(n) * C + std::int64_t(gi) * cpg) * hw;
            double s = 0;
            for (std::int64_t j = 0; j < M; ++j) s += xv[base + j];
            const double mu = s / double(M);
            double v = 0;
            for (std::int64_t j = 0; j < M; ++j) {
                const double d = double(xv[base + j]) - mu;
                v += d * d;
            }
            const double inv = 1.0 / std::sqrt(v / double(M) + eps);
            (*saved)[std::size_t(n * groups + gi) * 2] = real(mu);
            (*saved)[std::size_t(n * groups + gi) * 2 + 1] = real(inv);
            for (int c = 0; c < cpg; ++c) {
                const int ch = gi * cpg + c;
                const std::int64_t cb = base + std::int64_t(c) * hw;
                for (std::int64_t j = 0; j < hw; ++j)
                    ov[cb + j] = gam[ch] * real((double(xv[cb + j]) - mu) * inv) + bet[ch];
            }
        }
    return out;
}

Tensor sum(const Tensor& x) {
    require_defined(x, "sum");
    auto bwd = [x](Node& self) {
        if (!x.node()->requires_grad) return;
        x.node()->ensure_grad();
        const real g0 = self.grad[0];
        real* dx = x.node()->grad.data();
        const std::size_t n = x.node()->val.size();
        for (std::size_t i = 0; i < n; ++i) dx[i] += g0;
    };
    Tensor out = make_op({1}, {x}, std::move(bwd));
    out.node()->val[0] = kern::active().sum(x.data().size(), x.data().data());
    return out;
}

Tensor mean(const Tensor& x) {
    require_defined(x, "mean");
    const real invn = real(1) / real(x.size());
    auto bwd = [x, invn](Node& self) {
        if (!x.node()->requires_grad) return;
        x.node()->ensure_grad();
        const real g0 = self.grad[0] * invn;
        real* dx = x.node()->grad.data();
        const std::size_t n = x.node()->val.size();
        for (std::size_t i = 0; i < n; ++i) dx[i] += g0;
    };
    Tensor out = make_op({1}, {x}, std::move(bwd));
    out.node()->val[0] = kern::active().sum(x.data().size(), x.data().data()) * invn;
    return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
    require_defined(x, "reshape");
    if (numel(shape) != x.size())
        throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape) +
                         " changes element count");
    auto bwd = [x](Node& self) {
        if (!x.node()->requires_grad) return;
        x.node()->ensure_grad();
        kern::active().axpy(self.grad.size(), real(1), self.grad.data(), x.node()->grad.data());
    };
    Tensor out = make_op(std::move(shape), {x}, std::move(bwd));
    std::memcpy(out.node()->val.data(), x.data().data(), x.data().size() * sizeof(real));
    return out;
}

Tensor permute(const Tensor& x, const std::vector<int>& axes) {
    require_defined(x, "permute");
    const int r = x.rank();
    if (int(axes.size()) != r) throw ShapeError("permute: axes count != rank");
    std::vector<bool> used(r, false);
    for (int a : axes) {
        if (a < 0 || a >= r || used[a]) throw ShapeError("permute: axes must be a permutation");
        used[a] = true;
    }
    Shape oshape(r);
    const auto xstr = row_strides(x.shape());
    std::vector<std::int64_t> sa(r);
    for (int d = 0; d < r; ++d) {
        oshape[d] = x.dim(axes[d]);
        sa[d] = xstr[axes[d]];
    }
    auto bwd = [x, oshape, sa](Node& self) {
        if (!x.node()->requires_grad) return;
        x.node()->ensure_grad();
        real* dx = x.node()->grad.data();
        const real* g = self.grad.data();
        walk1(oshape, sa, [&](std::int64_t o, std::int64_t oa) { dx[oa] += g[o]; });
    };
    Tensor out = make_op(oshape, {x}, std::move(bwd));
    const real* xv = x.data().data();
    real* ov = out.node()->val.data();
    walk1(oshape, sa, [&](std::int64_t o, std::int64_t oa) { ov[o] = xv[oa]; });
    return out;
}

Tensor slice(const Tensor& x, int axis, int start, int len) {
    require_defined(x, "slice");
    const int r = x.rank();
    if (axis < 0 || axis >= r) throw ShapeError("slice: axis out of range");
    if (start < 0 || len < 1 || start + len > x.dim(axis))
        throw ShapeError("slice: [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") out of range for extent " + std::to_string(x.dim(axis)));
    Shape oshape = x.shape();
    oshape[axis] = len;
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= x.dim(i);
    for (int i = axis + 1; i < r; ++i) inner *= x.dim(i);
    const std::int64_t in_block = std::int64_t(x.dim(axis)) * inner;
    const std::int64_t out_block = std::int64_t(len) * inner;
    const std::int64_t off = std::int64_t(start) * inner;

    auto bwd = [x, outer, in_block, out_block, off](Node& self) {
        if (!x.node()->requires_grad) return;
        x.node()->ensure_grad();
        real* dx = x.node()->grad.data();
        const real* g = self.grad.data();
        for (std::int64_t o = 0; o < outer; ++o)
            kern::active().axpy(std::size_t(out_block), real(1), g + o * out_block,
                                dx + o * in_block + off);
    };
    Tensor out = make_op(std::move(oshape), {x}, std::move(bwd));
    const real* xv = x.data().data();
    real* ov = out.node()->val.data();
    for (std::int64_t o = 0; o < outer; ++o)
        std::memcpy(ov + o * out_block, xv + o * in_block + off,
                    std::size_t(out_block) * sizeof(real));
    return out;
}

Tensor concat(std::span<const Tensor> parts, int axis) {
    if (parts.empty()) throw UsageError("concat: no operands");
    for (const auto& p : parts) require_defined(p, "concat");
    const int r = parts[0].rank();
    if (axis < 0 || axis >= r) throw ShapeError("concat: axis out of range");
    Shape oshape = parts[0].shape();
    int total = 0;
    for (const auto& p : parts) {
        if (p.rank() != r) throw ShapeError("concat: rank mismatch");
        for (int d = 0; d < r; ++d)
            if (d != axis && p.dim(d) != oshape[d])
                throw ShapeError("concat: extent mismatch at axis " + std::to_string(d) + ": " +
                                 shape_str(p.shape()) + " vs " + shape_str(parts[0].shape()));
        total += p.dim(axis);
    }
    oshape[axis] = total;
    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= oshape[i];
    for (int i = axis + 1; i < r; ++i) inner *= oshape[i];
    const std::int64_t out_block = std::int64_t(total) * inner;

    std::vector<Tensor> held(parts.begin(), parts.end());
    auto bwd = [held, axis, outer, inner, out_block](Node& self) {
        const real* g = self.grad.data();
        std::int64_t off = 0;
        for (const auto& p : held) {
            const std::int64_t blk = std::int64_t(p.dim(axis)) * inner;
            if (p.node()->requires_grad) {
                p.node()->ensure_grad();
                real* dp = p.node()->grad.data();
                for (std::int64_t o = 0; o < outer; ++o)
                    kern::active().axpy(std::size_t(blk), real(1), g + o * out_block + off,
                                        dp + o * blk);
            }
            off += blk;
        }
    };
    Tensor out = make_op(oshape, held, std::move(bwd));
    real* ov = out.node()->val.data();
    std::int64_t off = 0;
    for (const auto& p : held) {
        const std::int64_t blk = std::int64_t(p.dim(axis)) * inner;
        const real* pv = p.data().data();
        for (std::int64_t o = 0; o < outer; ++o)
            std::memcpy(ov + o * out_block + off, pv + o * blk, std::size_t(blk) * sizeof(real));
        off += blk;
    }
    return out;
}

Tensor shift_frames(const Tensor& x, int offset) {
    require_defined(x, "shift_frames");
    if (x.rank() < 1) throw ShapeError("shift_frames: rank must be >= 1");
    const int frames = x.dim(0);
    const std::int64_t chunk = x.size() / frames;
    auto bwd = [x, frames, chunk, offset](Node& self) {
        if (!x.node()->requires_grad) return;
        x.node()->ensure_grad();
        real* dx = x.node()->grad.data();
        const real* g = self.grad.data();
        for (int t = 0; t < frames; ++t) {
            const int s = t - offset;
            if (s >= 0 && s < frames)
                kern::active().axpy(std::size_t(chunk), real(1), g + std::int64_t(t) * chunk,
                                    dx + std::int64_t(s) * chunk);
        }
    };
    Tensor out = make_op(x.shape(), {x}, std::move(bwd));
    const real* xv = x.data().data();
    real* ov = out.node()->val.data();
    for (int t = 0; t < frames; ++t) {
        const int s = t - offset;
        if (s >= 0 && s < frames)
            std::memcpy(ov + std::int64_t(t) * chunk, xv + std::int64_t(s) * chunk,
                        std::size_t(chunk) * sizeof(real));
    }
    return out;
}

bool all_finite(std::span<const real> v) {
    for (real x : v)
        if (!std::isfinite(x)) return false;
    return true;
}

}  // namespace atmv
