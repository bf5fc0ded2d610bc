#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "taflab/errors.hpp"

// Dense tensors with reverse-mode automatic differentiation.
//
// Values are computed eagerly. Every differentiable op records its input nodes
// and a pull-style backward closure on the node it creates, so the executed
// ops form a fresh tape per forward pass. backward() replays that recording in
// exact reverse topological order and accumulates gradients additively into
// every requires_grad leaf.
//
// Scalar type is a template parameter: float for training, double for the
// finite-difference gradient suites.

namespace taflab {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

template <class S>
struct NodeT {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad;  // empty until first touched, then same length as value
    bool requires_grad = false;
    std::vector<std::shared_ptr<NodeT>> parents;
    std::function<void(NodeT&)> backprop;  // pulls this node's grad into parents

    std::vector<S>& ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), S(0));
        return grad;
    }
};

template <class S>
class TensorT {
public:
    using Node = NodeT<S>;

    TensorT() = default;
    explicit TensorT(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static TensorT zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), S(0), requires_grad);
    }

    static TensorT filled(Shape shape, S v, bool requires_grad = false) {
        auto n = std::make_shared<Node>();
        n->value.assign(shape_numel(shape), v);
        n->shape = std::move(shape);
        n->requires_grad = requires_grad;
        return TensorT(n);
    }

    static TensorT from_data(Shape shape, std::vector<S> data, bool requires_grad = false) {
        if (shape_numel(shape) != data.size())
            throw ShapeError("from_data: shape " + shape_str(shape) + " does not match data length " +
                             std::to_string(data.size()));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        return TensorT(n);
    }

    static TensorT scalar(S v) { return from_data({1}, {v}); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t size() const { return node_->value.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }

    std::vector<S>& values() { return node_->value; }
    const std::vector<S>& values() const { return node_->value; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    std::vector<S>& grad() { return node_->ensure_grad(); }
    bool has_grad() const { return !node_->grad.empty(); }

    void zero_grad() {
        node_->ensure_grad();
        std::fill(node_->grad.begin(), node_->grad.end(), S(0));
    }

    S item() const {
        if (size() != 1) throw ContractError("item() on tensor of size " + std::to_string(size()));
        return node_->value[0];
    }

    const std::shared_ptr<Node>& node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

namespace detail {

// Broadcast plan for numpy-style trailing-dimension alignment: dimensions are
// right-aligned and must match or be 1. Strides are in elements, 0 on
// broadcast dimensions.
struct BcPlan {
    Shape out;
    std::vector<std::size_t> stride_a, stride_b;
    bool same = false;
};

inline BcPlan make_bc_plan(const Shape& a, const Shape& b) {
    BcPlan p;
    if (a == b) {
        p.out = a;
        p.same = true;
        return p;
    }
    const std::size_t nd = std::max(a.size(), b.size());
    p.out.resize(nd);
    std::vector<std::size_t> da(nd, 1), db(nd, 1);
    for (std::size_t i = 0; i < a.size(); ++i) da[nd - a.size() + i] = a[i];
    for (std::size_t i = 0; i < b.size(); ++i) db[nd - b.size() + i] = b[i];
    for (std::size_t i = 0; i < nd; ++i) {
        if (da[i] == db[i] || da[i] == 1 || db[i] == 1) {
            p.out[i] = std::max(da[i], db[i]);
        } else {
            throw ShapeError("broadcast mismatch: " + shape_str(a) + " vs " + shape_str(b));
        }
    }
    p.stride_a.assign(nd, 0);
    p.stride_b.assign(nd, 0);
    std::size_t sa = 1, sb = 1;
    for (std::size_t i = nd; i-- > 0;) {
        p.stride_a[i] = (da[i] == 1) ? 0 : sa;
        p.stride_b[i] = (db[i] == 1) ? 0 : sb;
        sa *= da[i];
        sb *= db[i];
    }
    return p;
}

// Visit every output element with the matching source offsets.
template <class S, class F>
void for_each_bc(const BcPlan& p, F&& f) {
    const std::size_t n = shape_numel(p.out);
    const std::size_t nd = p.out.size();
    std::vector<std::size_t> idx(nd, 0);
    std::size_t oa = 0, ob = 0;
    for (std::size_t i = 0; i < n; ++i) {
        f(i, oa, ob);
        for (std::size_t d = nd; d-- > 0;) {
            ++idx[d];
            oa += p.stride_a[d];
            ob += p.stride_b[d];
            if (idx[d] < p.out[d]) break;
            oa -= p.stride_a[d] * p.out[d];
            ob -= p.stride_b[d] * p.out[d];
            idx[d] = 0;
        }
    }
}

template <class S>
std::shared_ptr<NodeT<S>> make_op(Shape shape, std::vector<S> value,
                                  std::vector<std::shared_ptr<NodeT<S>>> parents,
                                  std::function<void(NodeT<S>&)> backprop) {
    auto n = std::make_shared<NodeT<S>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->parents = std::move(parents);
    bool rg = false;
    for (const auto& p : n->parents) rg = rg || p->requires_grad;
    n->requires_grad = rg;
    if (rg) n->backprop = std::move(backprop);
    return n;
}

}  // namespace detail

// Wraps a raw node construction; used by nn.hpp for fused ops.
template <class S>
TensorT<S> make_op_tensor(Shape shape, std::vector<S> value,
                          std::vector<std::shared_ptr<NodeT<S>>> parents,
                          std::function<void(NodeT<S>&)> backprop) {
    return TensorT<S>(detail::make_op<S>(std::move(shape), std::move(value), std::move(parents),
                                         std::move(backprop)));
}

// ---------------------------------------------------------------------------
// elementwise binary ops (broadcasting)
// ---------------------------------------------------------------------------

namespace detail {

enum class BinOp { add, sub, mul, div };

template <class S>
TensorT<S> binary(BinOp op, const TensorT<S>& a, const TensorT<S>& b) {
    auto plan = make_bc_plan(a.shape(), b.shape());
    const auto& av = a.values();
    const auto& bv = b.values();
    std::vector<S> out(shape_numel(plan.out));
    auto apply = [op](S x, S y) -> S {
        switch (op) {
            case BinOp::add: return x + y;
            case BinOp::sub: return x - y;
            case BinOp::mul: return x * y;
            case BinOp::div: return x / y;
        }
        return S(0);
    };
    if (plan.same) {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = apply(av[i], bv[i]);
    } else {
        for_each_bc<S>(plan, [&](std::size_t i, std::size_t oa, std::size_t ob) {
            out[i] = apply(av[oa], bv[ob]);
        });
    }
    auto an = a.node();
    auto bn = b.node();
    auto backprop = [op, plan, an, bn](NodeT<S>& self) {
        const auto& g = self.grad;
        const bool need_a = an->requires_grad;
        const bool need_b = bn->requires_grad;
        std::vector<S>* ga = need_a ? &an->ensure_grad() : nullptr;
        std::vector<S>* gb = need_b ? &bn->ensure_grad() : nullptr;
        const auto& av = an->value;
        const auto& bv = bn->value;
        auto accum = [&](std::size_t i, std::size_t oa, std::size_t ob) {
            switch (op) {
                case BinOp::add:
                    if (need_a) (*ga)[oa] += g[i];
                    if (need_b) (*gb)[ob] += g[i];
                    break;
                case BinOp::sub:
                    if (need_a) (*ga)[oa] += g[i];
                    if (need_b) (*gb)[ob] -= g[i];
                    break;
                case BinOp::mul:
                    if (need_a) (*ga)[oa] += g[i] * bv[ob];
                    if (need_b) (*gb)[ob] += g[i] * av[oa];
                    break;
                case BinOp::div:
                    if (need_a) (*ga)[oa] += g[i] / bv[ob];
                    if (need_b) (*gb)[ob] -= g[i] * av[oa] / (bv[ob] * bv[ob]);
                    break;
            }
        };
        if (plan.same) {
            for (std::size_t i = 0; i < g.size(); ++i) accum(i, i, i);
        } else {
            for_each_bc<S>(plan, accum);
        }
    };
    return make_op_tensor<S>(plan.out, std::move(out), {an, bn}, std::move(backprop));
}

}  // namespace detail

template <class S>
TensorT<S> add(const TensorT<S>& a, const TensorT<S>& b) {
    return detail::binary(detail::BinOp::add, a, b);
}
template <class S>
TensorT<S> sub(const TensorT<S>& a, const TensorT<S>& b) {
    return detail::binary(detail::BinOp::sub, a, b);
}
template <class S>
TensorT<S> mul(const TensorT<S>& a, const TensorT<S>& b) {
    return detail::binary(detail::BinOp::mul, a, b);
}
template <class S>
TensorT<S> div(const TensorT<S>& a, const TensorT<S>& b) {
    return detail::binary(detail::BinOp::div, a, b);
}

template <class S>
TensorT<S> add_scalar(const TensorT<S>& a, S c) {
    std::vector<S> out(a.values());
    for (auto& v : out) v += c;
    auto an = a.node();
    return make_op_tensor<S>(a.shape(), std::move(out), {an}, [an](NodeT<S>& self) {
        auto& ga = an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i];
    });
}

template <class S>
TensorT<S> mul_scalar(const TensorT<S>& a, S c) {
    std::vector<S> out(a.values());
    for (auto& v : out) v *= c;
    auto an = a.node();
    return make_op_tensor<S>(a.shape(), std::move(out), {an}, [an, c](NodeT<S>& self) {
        auto& ga = an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += self.grad[i] * c;
    });
}

template <class S>
TensorT<S> relu(const TensorT<S>& a) {
    std::vector<S> out(a.size());
    const auto& av = a.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] > S(0) ? av[i] : S(0);
    auto an = a.node();
    return make_op_tensor<S>(a.shape(), std::move(out), {an}, [an](NodeT<S>& self) {
        auto& ga = an->ensure_grad();
        const auto& av = an->value;
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (av[i] > S(0)) ga[i] += self.grad[i];
    });
}

// Forward value is identical; no gradient flows to the ancestors of a.
template <class S>
TensorT<S> stop_gradient(const TensorT<S>& a) {
    auto n = std::make_shared<NodeT<S>>();
    n->shape = a.shape();
    n->value = a.values();
    n->requires_grad = false;
    return TensorT<S>(n);
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

namespace detail {

struct ReducePlan {
    Shape out_shape;                   // respecting keepdims
    std::vector<std::size_t> out_of_in;  // per input element: output offset
    std::size_t group = 1;             // number of input elements per output element
};

inline ReducePlan make_reduce_plan(const Shape& in, std::vector<std::size_t> axes, bool keepdims) {
    if (shape_numel(in) == 0) throw DomainError("reduction over empty tensor");
    const std::size_t nd = in.size();
    if (axes.empty()) {
        axes.resize(nd);
        for (std::size_t i = 0; i < nd; ++i) axes[i] = i;
    }
    std::vector<bool> red(nd, false);
    for (std::size_t ax : axes) {
        if (ax >= nd) throw DomainError("reduce: axis " + std::to_string(ax) + " out of range for " + shape_str(in));
        red[ax] = true;
    }
    ReducePlan p;
    for (std::size_t i = 0; i < nd; ++i) {
        if (red[i]) {
            p.group *= in[i];
            if (keepdims) p.out_shape.push_back(1);
        } else {
            p.out_shape.push_back(in[i]);
        }
    }
    if (p.out_shape.empty()) p.out_shape.push_back(1);
    // output strides over the kept dims
    std::vector<std::size_t> ostride(nd, 0);
    std::size_t s = 1;
    for (std::size_t i = nd; i-- > 0;) {
        if (!red[i]) {
            ostride[i] = s;
            s *= in[i];
        }
    }
    const std::size_t n = shape_numel(in);
    p.out_of_in.resize(n);
    std::vector<std::size_t> idx(nd, 0);
    std::size_t off = 0;
    for (std::size_t i = 0; i < n; ++i) {
        p.out_of_in[i] = off;
        for (std::size_t d = nd; d-- > 0;) {
            ++idx[d];
            off += ostride[d];
            if (idx[d] < in[d]) break;
            off -= ostride[d] * in[d];
            idx[d] = 0;
        }
    }
    return p;
}

}  // namespace detail

template <class S>
TensorT<S> reduce_sum(const TensorT<S>& a, std::vector<std::size_t> axes = {}, bool keepdims = false) {
    auto plan = detail::make_reduce_plan(a.shape(), std::move(axes), keepdims);
    std::vector<S> out(shape_numel(plan.out_shape), S(0));
    const auto& av = a.values();
    for (std::size_t i = 0; i < av.size(); ++i) out[plan.out_of_in[i]] += av[i];
    auto an = a.node();
    auto map = std::make_shared<std::vector<std::size_t>>(std::move(plan.out_of_in));
    return make_op_tensor<S>(plan.out_shape, std::move(out), {an}, [an, map](NodeT<S>& self) {
        auto& ga = an->ensure_grad();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[(*map)[i]];
    });
}

template <class S>
TensorT<S> reduce_mean(const TensorT<S>& a, std::vector<std::size_t> axes = {}, bool keepdims = false) {
    auto plan = detail::make_reduce_plan(a.shape(), std::move(axes), keepdims);
    const S inv = S(1) / static_cast<S>(plan.group);
    std::vector<S> out(shape_numel(plan.out_shape), S(0));
    const auto& av = a.values();
    for (std::size_t i = 0; i < av.size(); ++i) out[plan.out_of_in[i]] += av[i];
    for (auto& v : out) v *= inv;
    auto an = a.node();
    auto map = std::make_shared<std::vector<std::size_t>>(std::move(plan.out_of_in));
    return make_op_tensor<S>(plan.out_shape, std::move(out), {an}, [an, map, inv](NodeT<S>& self) {
        auto& ga = an->ensure_grad();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[(*map)[i]] * inv;
    });
}

namespace detail {

// max (want_max) or min reduction; gradient goes to the first extremum in
// row-major scan order, which keeps tie-breaking deterministic.
template <class S>
TensorT<S> reduce_extremum(const TensorT<S>& a, std::vector<std::size_t> axes, bool keepdims, bool want_max) {
    auto plan = make_reduce_plan(a.shape(), std::move(axes), keepdims);
    const std::size_t on = shape_numel(plan.out_shape);
    std::vector<S> out(on);
    std::vector<std::size_t> arg(on, static_cast<std::size_t>(-1));
    const auto& av = a.values();
    for (std::size_t i = 0; i < av.size(); ++i) {
        const std::size_t o = plan.out_of_in[i];
        if (arg[o] == static_cast<std::size_t>(-1) ||
            (want_max ? av[i] > out[o] : av[i] < out[o])) {
            out[o] = av[i];
            arg[o] = i;
        }
    }
    auto an = a.node();
    auto argp = std::make_shared<std::vector<std::size_t>>(std::move(arg));
    return make_op_tensor<S>(plan.out_shape, std::move(out), {an}, [an, argp](NodeT<S>& self) {
        auto& ga = an->ensure_grad();
        for (std::size_t o = 0; o < self.grad.size(); ++o) ga[(*argp)[o]] += self.grad[o];
    });
}

}  // namespace detail

template <class S>
TensorT<S> reduce_max(const TensorT<S>& a, std::vector<std::size_t> axes = {}, bool keepdims = false) {
    return detail::reduce_extremum(a, std::move(axes), keepdims, true);
}

template <class S>
TensorT<S> reduce_min(const TensorT<S>& a, std::vector<std::size_t> axes = {}, bool keepdims = false) {
    return detail::reduce_extremum(a, std::move(axes), keepdims, false);
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <class S>
TensorT<S> reshape(const TensorT<S>& a, Shape shape) {
    if (shape_numel(shape) != a.size())
        throw ShapeError("reshape: " + shape_str(a.shape()) + " -> " + shape_str(shape));
    auto an = a.node();
    return make_op_tensor<S>(std::move(shape), a.values(), {an}, [an](NodeT<S>& self) {
        auto& ga = an->ensure_grad();
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    });
}

// Contiguous rows [start, start+len) along axis 0.
template <class S>
TensorT<S> slice0(const TensorT<S>& a, std::size_t start, std::size_t len) {
    const auto& sh = a.shape();
    if (sh.empty() || start + len > sh[0])
        throw ShapeError("slice0: [" + std::to_string(start) + "," + std::to_string(start + len) +
                         ") out of range for " + shape_str(sh));
    const std::size_t row = a.size() / sh[0];
    Shape osh = sh;
    osh[0] = len;
    std::vector<S> out(a.values().begin() + static_cast<std::ptrdiff_t>(start * row),
                       a.values().begin() + static_cast<std::ptrdiff_t>((start + len) * row));
    auto an = a.node();
    const std::size_t off = start * row;
    return make_op_tensor<S>(std::move(osh), std::move(out), {an}, [an, off](NodeT<S>& self) {
        auto& ga = an->ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) ga[off + i] += self.grad[i];
    });
}

// ---------------------------------------------------------------------------
// matmul / conv2d (Eigen-backed inner products)
// ---------------------------------------------------------------------------

namespace detail {
template <class S>
using MatRM = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using MapM = Eigen::Map<MatRM<S>>;
template <class S>
using CMapM = Eigen::Map<const MatRM<S>>;
}  // namespace detail

template <class S>
TensorT<S> matmul(const TensorT<S>& a, const TensorT<S>& b) {
    if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    const auto M = static_cast<Eigen::Index>(a.dim(0));
    const auto K = static_cast<Eigen::Index>(a.dim(1));
    const auto N = static_cast<Eigen::Index>(b.dim(1));
    std::vector<S> out(static_cast<std::size_t>(M * N));
    detail::CMapM<S> A(a.values().data(), M, K), B(b.values().data(), K, N);
    detail::MapM<S>(out.data(), M, N).noalias() = A * B;
    auto an = a.node();
    auto bn = b.node();
    return make_op_tensor<S>({a.dim(0), b.dim(1)}, std::move(out), {an, bn},
                             [an, bn, M, K, N](NodeT<S>& self) {
                                 detail::CMapM<S> G(self.grad.data(), M, N);
                                 detail::CMapM<S> A(an->value.data(), M, K);
                                 detail::CMapM<S> B(bn->value.data(), K, N);
                                 if (an->requires_grad) {
                                     detail::MapM<S> GA(an->ensure_grad().data(), M, K);
                                     GA.noalias() += G * B.transpose();
                                 }
                                 if (bn->requires_grad) {
                                     detail::MapM<S> GB(bn->ensure_grad().data(), K, N);
                                     GB.noalias() += A.transpose() * G;
                                 }
                             });
}

namespace detail {

// Lowered convolution operands: rows are output positions, columns are the
// C*kh*kw receptive-field taps.
struct ConvDims {
    std::size_t B, C, H, W, F, kh, kw, Ho, Wo, stride, pad;
};

template <class S>
void im2col(const ConvDims& d, const std::vector<S>& in, std::vector<S>& col) {
    const std::size_t taps = d.C * d.kh * d.kw;
    std::fill(col.begin(), col.end(), S(0));
    for (std::size_t b = 0; b < d.B; ++b) {
        const S* img = in.data() + b * d.C * d.H * d.W;
        for (std::size_t oy = 0; oy < d.Ho; ++oy) {
            for (std::size_t ox = 0; ox < d.Wo; ++ox) {
                S* row = col.data() + ((b * d.Ho + oy) * d.Wo + ox) * taps;
                for (std::size_t c = 0; c < d.C; ++c) {
                    for (std::size_t ky = 0; ky < d.kh; ++ky) {
                        const std::ptrdiff_t iy =
                            static_cast<std::ptrdiff_t>(oy * d.stride + ky) - static_cast<std::ptrdiff_t>(d.pad);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.H)) continue;
                        for (std::size_t kx = 0; kx < d.kw; ++kx) {
                            const std::ptrdiff_t ix =
                                static_cast<std::ptrdiff_t>(ox * d.stride + kx) - static_cast<std::ptrdiff_t>(d.pad);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.W)) continue;
                            row[(c * d.kh + ky) * d.kw + kx] =
                                img[(c * d.H + static_cast<std::size_t>(iy)) * d.W + static_cast<std::size_t>(ix)];
                        }
                    }
                }
            }
        }
    }
}

template <class S>
void col2im_accum(const ConvDims& d, const std::vector<S>& col, std::vector<S>& gin) {
    const std::size_t taps = d.C * d.kh * d.kw;
    for (std::size_t b = 0; b < d.B; ++b) {
        S* img = gin.data() + b * d.C * d.H * d.W;
        for (std::size_t oy = 0; oy < d.Ho; ++oy) {
            for (std::size_t ox = 0; ox < d.Wo; ++ox) {
                const S* row = col.data() + ((b * d.Ho + oy) * d.Wo + ox) * taps;
                for (std::size_t c = 0; c < d.C; ++c) {
                    for (std::size_t ky = 0; ky < d.kh; ++ky) {
                        const std::ptrdiff_t iy =
                            static_cast<std::ptrdiff_t>(oy * d.stride + ky) - static_cast<std::ptrdiff_t>(d.pad);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(d.H)) continue;
                        for (std::size_t kx = 0; kx < d.kw; ++kx) {
                            const std::ptrdiff_t ix =
                                static_cast<std::ptrdiff_t>(ox * d.stride + kx) - static_cast<std::ptrdiff_t>(d.pad);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(d.W)) continue;
                            img[(c * d.H + static_cast<std::size_t>(iy)) * d.W + static_cast<std::size_t>(ix)] +=
                                row[(c * d.kh + ky) * d.kw + kx];
                        }
                    }
                }
            }
        }
    }
}

}  // namespace detail

// input [B,C,H,W], kernel [F,C,kh,kw]; output [B,F,Ho,Wo] where the output
// size division must be exact. Differentiable w.r.t. input and kernel.
template <class S>
TensorT<S> conv2d(const TensorT<S>& input, const TensorT<S>& kernel, std::size_t stride,
                  std::size_t pad) {
    const auto& ish = input.shape();
    const auto& ksh = kernel.shape();
    if (ish.size() != 4 || ksh.size() != 4)
        throw ShapeError("conv2d expects 4-d input and kernel, got " + shape_str(ish) + " and " + shape_str(ksh));
    if (ish[1] != ksh[1])
        throw ShapeError("conv2d channel mismatch: " + shape_str(ish) + " vs " + shape_str(ksh));
    detail::ConvDims d{ish[0], ish[1], ish[2], ish[3], ksh[0], ksh[2], ksh[3], 0, 0, stride, pad};
    if (stride == 0) throw ConfigError("conv2d: stride must be positive");
    if (d.kh > d.H + 2 * pad || d.kw > d.W + 2 * pad)
        throw ShapeError("conv2d: kernel larger than padded input");
    if ((d.H + 2 * pad - d.kh) % stride != 0 || (d.W + 2 * pad - d.kw) % stride != 0)
        throw ConfigError("conv2d: output size is not exact for input " + shape_str(ish) + ", kernel " +
                          shape_str(ksh) + ", stride " + std::to_string(stride) + ", pad " + std::to_string(pad));
    d.Ho = (d.H + 2 * pad - d.kh) / stride + 1;
    d.Wo = (d.W + 2 * pad - d.kw) / stride + 1;

    const std::size_t taps = d.C * d.kh * d.kw;
    const std::size_t rows = d.B * d.Ho * d.Wo;
    auto col = std::make_shared<std::vector<S>>(rows * taps);
    detail::im2col(d, input.values(), *col);

    // outmat [rows, F] = col [rows, taps] * W^T
    std::vector<S> outmat(rows * d.F);
    {
        detail::CMapM<S> Col(col->data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(taps));
        detail::CMapM<S> Wm(kernel.values().data(), static_cast<Eigen::Index>(d.F),
                            static_cast<Eigen::Index>(taps));
        detail::MapM<S>(outmat.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(d.F))
            .noalias() = Col * Wm.transpose();
    }
    // rearrange [b,oy,ox,f] -> [b,f,oy,ox]
    std::vector<S> out(d.B * d.F * d.Ho * d.Wo);
    const std::size_t hw = d.Ho * d.Wo;
    for (std::size_t b = 0; b < d.B; ++b)
        for (std::size_t p = 0; p < hw; ++p) {
            const S* src = outmat.data() + (b * hw + p) * d.F;
            for (std::size_t f = 0; f < d.F; ++f) out[(b * d.F + f) * hw + p] = src[f];
        }

    auto in_node = input.node();
    auto k_node = kernel.node();
    auto backprop = [d, col, in_node, k_node](NodeT<S>& self) {
        const std::size_t taps = d.C * d.kh * d.kw;
        const std::size_t rows = d.B * d.Ho * d.Wo;
        const std::size_t hw = d.Ho * d.Wo;
        std::vector<S> gmat(rows * d.F);
        for (std::size_t b = 0; b < d.B; ++b)
            for (std::size_t p = 0; p < hw; ++p) {
                S* dst = gmat.data() + (b * hw + p) * d.F;
                for (std::size_t f = 0; f < d.F; ++f) dst[f] = self.grad[(b * d.F + f) * hw + p];
            }
        detail::CMapM<S> G(gmat.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(d.F));
        if (k_node->requires_grad) {
            detail::CMapM<S> Col(col->data(), static_cast<Eigen::Index>(rows),
                                 static_cast<Eigen::Index>(taps));
            detail::MapM<S> GW(k_node->ensure_grad().data(), static_cast<Eigen::Index>(d.F),
                               static_cast<Eigen::Index>(taps));
            GW.noalias() += G.transpose() * Col;
        }
        if (in_node->requires_grad) {
            std::vector<S> gcol(rows * taps);
            detail::CMapM<S> Wm(k_node->value.data(), static_cast<Eigen::Index>(d.F),
                                static_cast<Eigen::Index>(taps));
            detail::MapM<S>(gcol.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(taps))
                .noalias() = G * Wm;
            detail::col2im_accum(d, gcol, in_node->ensure_grad());
        }
    };
    return make_op_tensor<S>({d.B, d.F, d.Ho, d.Wo}, std::move(out), {in_node, k_node},
                             std::move(backprop));
}

// ---------------------------------------------------------------------------
// backward
// ---------------------------------------------------------------------------

// Accumulates d(loss)/d(leaf) into every requires_grad leaf reachable from
// loss. The recorded ops are replayed in exact reverse topological order.
template <class S>
void backward(const TensorT<S>& loss) {
    if (loss.size() != 1) throw ContractError("backward: loss must be scalar, got " + shape_str(loss.shape()));
    using Node = NodeT<S>;
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            Node* p = n->parents[next++].get();
            if (seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    loss.node()->ensure_grad()[0] += S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->requires_grad && n->backprop && !n->grad.empty()) n->backprop(*n);
    }
}

// Clears the gradient buffers of every node reachable from t. Used between
// the two backward passes of the CAM computation so the second pass starts
// from a clean tape.
template <class S>
void zero_all_grads(const TensorT<S>& t) {
    using Node = NodeT<S>;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{t.node().get()};
    seen.insert(t.node().get());
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        std::fill(n->grad.begin(), n->grad.end(), S(0));
        for (const auto& p : n->parents)
            if (seen.insert(p.get()).second) stack.push_back(p.get());
    }
}

using Tensor = TensorT<float>;

}  // namespace taflab
