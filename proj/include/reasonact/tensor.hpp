#pragma once

// Dense row-major tensors with a reverse-mode gradient tape.
//
// Design constraints kept deliberately tight so every backward rule stays
// auditable:
//   - broadcasting is trailing-dimension expansion (rhs shape is a suffix of
//     lhs shape) or a one-element rhs, nothing else;
//   - the tape is per-forward-pass and freed by backward();
//   - no higher-order derivatives.
//
// The same code instantiates with float (training) and double (verification,
// where finite-difference checks are trustworthy). Matrix products are
// evaluated through Eigen maps; everything around them is explicit loops.

#include <Eigen/Core>

#include <algorithm>
#include <cstring>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <unordered_set>
#include <vector>

#include "reasonact/common.hpp"

namespace reasonact {

inline thread_local bool g_grad_enabled = true;

struct NoGradGuard {
    bool prev;
    NoGradGuard() : prev(g_grad_enabled) { g_grad_enabled = false; }
    ~NoGradGuard() { g_grad_enabled = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
};

using Shape = std::vector<int>;

inline size_t shape_numel(const Shape& s) {
    size_t n = 1;
    for (int d : s) n *= static_cast<size_t>(d);
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

template <class S>
struct TensorNode {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<TensorNode<S>>> parents;
    std::function<void(TensorNode<S>&)> backward;

    size_t numel() const { return value.size(); }
    void ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), S(0));
    }
};

template <class S>
class Tensor {
public:
    using Node = TensorNode<S>;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

    static Tensor zeros(Shape shape) { return full(std::move(shape), S(0)); }

    static Tensor full(Shape shape, S v) {
        auto n = std::make_shared<Node>();
        n->value.assign(shape_numel(shape), v);
        n->shape = std::move(shape);
        return Tensor(n);
    }

    static Tensor from(Shape shape, std::vector<S> data) {
        if (shape_numel(shape) != data.size())
            throw DimensionError("tensor data size " + std::to_string(data.size()) + " does not match shape " +
                                 shape_str(shape));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        return Tensor(n);
    }

    static Tensor scalar(S v) { return full({1}, v); }

    static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0) {
        std::vector<S> d(shape_numel(shape));
        for (auto& x : d) x = static_cast<S>(rng.normal() * stddev);
        return from(std::move(shape), std::move(d));
    }

    static Tensor uniform(Shape shape, Rng& rng, double lo, double hi) {
        std::vector<S> d(shape_numel(shape));
        for (auto& x : d) x = static_cast<S>(rng.uniform(lo, hi));
        return from(std::move(shape), std::move(d));
    }

    bool defined() const { return n_ != nullptr; }
    const Shape& shape() const { return n_->shape; }
    int dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(n_->shape.size()); }
    size_t numel() const { return n_->value.size(); }

    const std::vector<S>& values() const { return n_->value; }
    // Leaf mutation for optimizers and in-place initialization. Never call on
    // a tensor that participates in a live tape.
    std::vector<S>& values_mut() { return n_->value; }

    S item() const {
        if (numel() != 1) throw ContractError("item() on non-scalar tensor " + shape_str(shape()));
        return n_->value[0];
    }

    bool requires_grad() const { return n_->requires_grad; }
    Tensor& set_requires_grad(bool rg) {
        n_->requires_grad = rg;
        return *this;
    }

    bool has_grad() const { return !n_->grad.empty(); }
    const std::vector<S>& grad() const {
        if (n_->grad.empty()) throw ContractError("grad accessed before backward populated it");
        return n_->grad;
    }
    std::vector<S>& grad_mut() { return n_->grad; }
    void zero_grad() { n_->grad.clear(); }

    bool all_finite() const {
        for (S v : n_->value)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    Tensor detach() const {
        auto n = std::make_shared<Node>();
        n->shape = n_->shape;
        n->value = n_->value;
        return Tensor(n);
    }

    template <class T>
    Tensor<T> cast() const {
        std::vector<T> d(numel());
        for (size_t i = 0; i < d.size(); ++i) d[i] = static_cast<T>(n_->value[i]);
        return Tensor<T>::from(shape(), std::move(d));
    }

    std::shared_ptr<Node> node() const { return n_; }

private:
    std::shared_ptr<Node> n_;
};

template <class S>
using EMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class S>
using EMap = Eigen::Map<EMat<S>>;
template <class S>
using ECMap = Eigen::Map<const EMat<S>>;

namespace detail {

template <class S>
std::shared_ptr<TensorNode<S>> make_node(Shape shape) {
    auto n = std::make_shared<TensorNode<S>>();
    n->value.resize(shape_numel(shape));
    n->shape = std::move(shape);
    return n;
}

template <class S>
void wire(const std::shared_ptr<TensorNode<S>>& out, std::vector<std::shared_ptr<TensorNode<S>>> parents,
          std::function<void(TensorNode<S>&)> bw) {
    bool any = false;
    for (auto& p : parents) any = any || p->requires_grad;
    if (g_grad_enabled && any) {
        out->requires_grad = true;
        out->parents = std::move(parents);
        out->backward = std::move(bw);
    }
}

// rhs broadcast check: equal shapes, shape suffix, or single element.
template <class S>
void check_broadcast(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
    if (b.numel() == 1) return;
    if (b.rank() > a.rank())
        throw DimensionError(std::string(op) + ": rhs rank exceeds lhs, " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    int off = a.rank() - b.rank();
    for (int i = 0; i < b.rank(); ++i)
        if (a.dim(off + i) != b.dim(i))
            throw DimensionError(std::string(op) + ": shapes not trailing-broadcastable, " + shape_str(a.shape()) +
                                 " vs " + shape_str(b.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// matmul / transpose

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw DimensionError("matmul expects rank-2 operands, got " + shape_str(a.shape()) + " and " +
                             shape_str(b.shape()));
    if (a.dim(1) != b.dim(0))
        throw DimensionError("matmul inner dimensions disagree: " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
    auto out = detail::make_node<S>({m, n});
    EMap<S>(out->value.data(), m, n) =
        ECMap<S>(a.values().data(), m, k) * ECMap<S>(b.values().data(), k, n);
    auto an = a.node(), bn = b.node();
    detail::wire<S>(out, {an, bn}, [an = an.get(), bn = bn.get(), m, k, n](TensorNode<S>& self) {
        ECMap<S> G(self.grad.data(), m, n);
        if (an->requires_grad) {
            an->ensure_grad();
            EMap<S>(an->grad.data(), m, k).noalias() += G * ECMap<S>(bn->value.data(), k, n).transpose();
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            EMap<S>(bn->grad.data(), k, n).noalias() += ECMap<S>(an->value.data(), m, k).transpose() * G;
        }
    });
    return Tensor<S>(out);
}

template <class S>
Tensor<S> transpose(const Tensor<S>& x) {
    if (x.rank() != 2) throw DimensionError("transpose expects rank-2, got " + shape_str(x.shape()));
    const int r = x.dim(0), c = x.dim(1);
    auto out = detail::make_node<S>({c, r});
    EMap<S>(out->value.data(), c, r) = ECMap<S>(x.values().data(), r, c).transpose();
    auto xn = x.node();
    detail::wire<S>(out, {xn}, [xn = xn.get(), r, c](TensorNode<S>& self) {
        xn->ensure_grad();
        EMap<S>(xn->grad.data(), r, c) += ECMap<S>(self.grad.data(), c, r).transpose();
    });
    return Tensor<S>(out);
}

// ---------------------------------------------------------------------------
// elementwise binary ops (rhs trailing-broadcast)

namespace detail {

template <class S, class FwdFn, class BwdFn>
Tensor<S> binary_op(const char* name, const Tensor<S>& a, const Tensor<S>& b, FwdFn fwd, BwdFn bwd) {
    check_broadcast(a, b, name);
    auto out = make_node<S>(a.shape());
    const size_t na = a.numel(), nb = b.numel();
    const S* pa = a.values().data();
    const S* pb = b.values().data();
    S* po = out->value.data();
    for (size_t i = 0; i < na; ++i) po[i] = fwd(pa[i], pb[i % nb]);
    auto an = a.node(), bn = b.node();
    wire<S>(out, {an, bn}, [an = an.get(), bn = bn.get(), na, nb, bwd](TensorNode<S>& self) {
        const S* g = self.grad.data();
        const S* pa = an->value.data();
        const S* pb = bn->value.data();
        S* ga = nullptr;
        S* gb = nullptr;
        if (an->requires_grad) {
            an->ensure_grad();
            ga = an->grad.data();
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            gb = bn->grad.data();
        }
        for (size_t i = 0; i < na; ++i) {
            S da, db;
            bwd(pa[i], pb[i % nb], g[i], da, db);
            if (ga) ga[i] += da;
            if (gb) gb[i % nb] += db;
        }
    });
    return Tensor<S>(out);
}

}  // namespace detail

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::binary_op<S>(
        "add", a, b, [](S x, S y) { return x + y; },
        [](S, S, S g, S& da, S& db) {
            da = g;
            db = g;
        });
}

template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::binary_op<S>(
        "sub", a, b, [](S x, S y) { return x - y; },
        [](S, S, S g, S& da, S& db) {
            da = g;
            db = -g;
        });
}

template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::binary_op<S>(
        "mul", a, b, [](S x, S y) { return x * y; },
        [](S x, S y, S g, S& da, S& db) {
            da = g * y;
            db = g * x;
        });
}

// ---------------------------------------------------------------------------
// elementwise unary ops

namespace detail {

template <class S, class FwdFn, class BwdFn>
Tensor<S> unary_op(const Tensor<S>& x, FwdFn fwd, BwdFn bwd) {
    auto out = make_node<S>(x.shape());
    const size_t n = x.numel();
    const S* px = x.values().data();
    S* po = out->value.data();
    for (size_t i = 0; i < n; ++i) po[i] = fwd(px[i]);
    auto xn = x.node();
    wire<S>(out, {xn}, [xn = xn.get(), n, bwd](TensorNode<S>& self) {
        xn->ensure_grad();
        const S* g = self.grad.data();
        const S* px = xn->value.data();
        const S* py = self.value.data();
        S* gx = xn->grad.data();
        for (size_t i = 0; i < n; ++i) gx[i] += bwd(px[i], py[i], g[i]);
    });
    return Tensor<S>(out);
}

}  // namespace detail

template <class S>
Tensor<S> scale(const Tensor<S>& x, S c) {
    return detail::unary_op<S>(
        x, [c](S v) { return v * c; }, [c](S, S, S g) { return g * c; });
}

template <class S>
Tensor<S> add_scalar(const Tensor<S>& x, S c) {
    return detail::unary_op<S>(
        x, [c](S v) { return v + c; }, [](S, S, S g) { return g; });
}

// GELU, tanh approximation (documented so oracle scripts can match it):
//   gelu(x) = 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
template <class S>
Tensor<S> gelu(const Tensor<S>& x) {
    constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
    constexpr double kA = 0.044715;
    return detail::unary_op<S>(
        x,
        [](S v) {
            double xv = static_cast<double>(v);
            return static_cast<S>(0.5 * xv * (1.0 + std::tanh(kC * (xv + kA * xv * xv * xv))));
        },
        [](S v, S, S g) {
            double xv = static_cast<double>(v);
            double t = std::tanh(kC * (xv + kA * xv * xv * xv));
            double d = 0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t * t) * kC * (1.0 + 3.0 * kA * xv * xv);
            return static_cast<S>(static_cast<double>(g) * d);
        });
}

template <class S>
Tensor<S> tanh_t(const Tensor<S>& x) {
    return detail::unary_op<S>(
        x, [](S v) { return static_cast<S>(std::tanh(static_cast<double>(v))); },
        [](S, S y, S g) { return static_cast<S>(g * (S(1) - y * y)); });
}

template <class S>
Tensor<S> exp_t(const Tensor<S>& x) {
    return detail::unary_op<S>(
        x, [](S v) { return static_cast<S>(std::exp(static_cast<double>(v))); },
        [](S, S y, S g) { return g * y; });
}

template <class S>
Tensor<S> log_t(const Tensor<S>& x) {
    return detail::unary_op<S>(
        x, [](S v) { return static_cast<S>(std::log(static_cast<double>(v))); },
        [](S v, S, S g) { return g / v; });
}

template <class S>
Tensor<S> sqrt_t(const Tensor<S>& x) {
    return detail::unary_op<S>(
        x, [](S v) { return static_cast<S>(std::sqrt(static_cast<double>(v))); },
        [](S, S y, S g) { return static_cast<S>(g / (S(2) * y)); });
}

// ---------------------------------------------------------------------------
// reductions

enum class Reduce { Sum, Mean, Max };

template <class S>
Tensor<S> reduce(Reduce op, const Tensor<S>& x, std::optional<int> axis = std::nullopt) {
    const Shape& sh = x.shape();
    size_t outer = 1, n = x.numel(), inner = 1;
    Shape oshape{1};
    if (axis.has_value()) {
        int ax = *axis;
        if (ax < 0 || ax >= x.rank())
            throw DimensionError("reduce axis " + std::to_string(ax) + " invalid for " + shape_str(sh));
        n = static_cast<size_t>(sh[static_cast<size_t>(ax)]);
        for (int i = 0; i < ax; ++i) outer *= static_cast<size_t>(sh[static_cast<size_t>(i)]);
        for (int i = ax + 1; i < x.rank(); ++i) inner *= static_cast<size_t>(sh[static_cast<size_t>(i)]);
        oshape.clear();
        for (int i = 0; i < x.rank(); ++i)
            if (i != ax) oshape.push_back(sh[static_cast<size_t>(i)]);
        if (oshape.empty()) oshape = {1};
    }
    auto out = detail::make_node<S>(oshape);
    const S* px = x.values().data();
    auto arg = std::make_shared<std::vector<int>>();
    if (op == Reduce::Max) arg->assign(outer * inner, 0);
    for (size_t o = 0; o < outer; ++o)
        for (size_t i = 0; i < inner; ++i) {
            const size_t base = o * n * inner + i;
            if (op == Reduce::Max) {
                S best = px[base];
                int bj = 0;
                for (size_t j = 1; j < n; ++j) {
                    S v = px[base + j * inner];
                    if (v > best) {
                        best = v;
                        bj = static_cast<int>(j);
                    }
                }
                out->value[o * inner + i] = best;
                (*arg)[o * inner + i] = bj;
            } else {
                S acc = S(0);
                for (size_t j = 0; j < n; ++j) acc += px[base + j * inner];
                out->value[o * inner + i] = (op == Reduce::Mean) ? acc / static_cast<S>(n) : acc;
            }
        }
    auto xn = x.node();
    detail::wire<S>(out, {xn}, [xn = xn.get(), op, outer, n, inner, arg](TensorNode<S>& self) {
        xn->ensure_grad();
        const S* g = self.grad.data();
        S* gx = xn->grad.data();
        for (size_t o = 0; o < outer; ++o)
            for (size_t i = 0; i < inner; ++i) {
                const size_t base = o * n * inner + i;
                const S gv = g[o * inner + i];
                if (op == Reduce::Max) {
                    gx[base + static_cast<size_t>((*arg)[o * inner + i]) * inner] += gv;
                } else if (op == Reduce::Mean) {
                    const S d = gv / static_cast<S>(n);
                    for (size_t j = 0; j < n; ++j) gx[base + j * inner] += d;
                } else {
                    for (size_t j = 0; j < n; ++j) gx[base + j * inner] += gv;
                }
            }
    });
    return Tensor<S>(out);
}

template <class S>
Tensor<S> sum_all(const Tensor<S>& x) {
    return reduce(Reduce::Sum, x);
}
template <class S>
Tensor<S> mean_all(const Tensor<S>& x) {
    return reduce(Reduce::Mean, x);
}

// ---------------------------------------------------------------------------
// shape ops

template <class S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
    if (shape_numel(shape) != x.numel())
        throw DimensionError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) + " changes element count");
    auto out = detail::make_node<S>(std::move(shape));
    out->value = x.values();
    auto xn = x.node();
    detail::wire<S>(out, {xn}, [xn = xn.get()](TensorNode<S>& self) {
        xn->ensure_grad();
        for (size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
    });
    return Tensor<S>(out);
}

template <class S>
Tensor<S> slice_rows(const Tensor<S>& x, int r0, int len) {
    if (x.rank() < 1) throw DimensionError("slice_rows on scalar");
    const int rows = x.dim(0);
    if (r0 < 0 || len < 0 || r0 + len > rows)
        throw DimensionError("slice_rows [" + std::to_string(r0) + "," + std::to_string(r0 + len) + ") out of " +
                             std::to_string(rows) + " rows");
    const size_t inner = x.numel() / static_cast<size_t>(rows);
    Shape oshape = x.shape();
    oshape[0] = len;
    auto out = detail::make_node<S>(oshape);
    std::copy_n(x.values().data() + static_cast<size_t>(r0) * inner, static_cast<size_t>(len) * inner,
                out->value.data());
    auto xn = x.node();
    detail::wire<S>(out, {xn}, [xn = xn.get(), r0, inner](TensorNode<S>& self) {
        xn->ensure_grad();
        S* gx = xn->grad.data() + static_cast<size_t>(r0) * inner;
        for (size_t i = 0; i < self.grad.size(); ++i) gx[i] += self.grad[i];
    });
    return Tensor<S>(out);
}

template <class S>
Tensor<S> slice_cols(const Tensor<S>& x, int c0, int len) {
    if (x.rank() != 2) throw DimensionError("slice_cols expects rank-2, got " + shape_str(x.shape()));
    const int rows = x.dim(0), cols = x.dim(1);
    if (c0 < 0 || len < 0 || c0 + len > cols) throw DimensionError("slice_cols out of range");
    auto out = detail::make_node<S>({rows, len});
    const S* px = x.values().data();
    S* po = out->value.data();
    for (int r = 0; r < rows; ++r)
        std::copy_n(px + static_cast<size_t>(r) * cols + c0, len, po + static_cast<size_t>(r) * len);
    auto xn = x.node();
    detail::wire<S>(out, {xn}, [xn = xn.get(), rows, cols, c0, len](TensorNode<S>& self) {
        xn->ensure_grad();
        const S* g = self.grad.data();
        S* gx = xn->grad.data();
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < len; ++c)
                gx[static_cast<size_t>(r) * cols + c0 + c] += g[static_cast<size_t>(r) * len + c];
    });
    return Tensor<S>(out);
}

template <class S>
Tensor<S> concat_rows(const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) throw DimensionError("concat_rows of nothing");
    Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
    int rows = 0;
    for (const auto& p : parts) {
        Shape t(p.shape().begin() + 1, p.shape().end());
        if (t != tail) throw DimensionError("concat_rows trailing shapes differ");
        rows += p.dim(0);
    }
    Shape oshape = parts[0].shape();
    oshape[0] = rows;
    auto out = detail::make_node<S>(oshape);
    size_t off = 0;
    std::vector<std::shared_ptr<TensorNode<S>>> pnodes;
    auto offsets = std::make_shared<std::vector<size_t>>();
    for (const auto& p : parts) {
        offsets->push_back(off);
        std::copy_n(p.values().data(), p.numel(), out->value.data() + off);
        off += p.numel();
        pnodes.push_back(p.node());
    }
    auto raw = std::make_shared<std::vector<TensorNode<S>*>>();
    for (auto& p : pnodes) raw->push_back(p.get());
    detail::wire<S>(out, pnodes, [raw, offsets](TensorNode<S>& self) {
        for (size_t k = 0; k < raw->size(); ++k) {
            TensorNode<S>* pn = (*raw)[k];
            if (!pn->requires_grad) continue;
            pn->ensure_grad();
            const S* g = self.grad.data() + (*offsets)[k];
            for (size_t i = 0; i < pn->value.size(); ++i) pn->grad[i] += g[i];
        }
    });
    return Tensor<S>(out);
}

template <class S>
Tensor<S> stack_rows(const std::vector<Tensor<S>>& parts) {
    std::vector<Tensor<S>> reshaped;
    reshaped.reserve(parts.size());
    for (const auto& p : parts) {
        Shape s = p.shape();
        s.insert(s.begin(), 1);
        reshaped.push_back(reshape(p, s));
    }
    return concat_rows(reshaped);
}

template <class S>
Tensor<S> concat_cols(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0))
        throw DimensionError("concat_cols expects rank-2 with equal rows: " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    const int rows = a.dim(0), ca = a.dim(1), cb = b.dim(1);
    auto out = detail::make_node<S>({rows, ca + cb});
    for (int r = 0; r < rows; ++r) {
        std::copy_n(a.values().data() + static_cast<size_t>(r) * ca, ca,
                    out->value.data() + static_cast<size_t>(r) * (ca + cb));
        std::copy_n(b.values().data() + static_cast<size_t>(r) * cb, cb,
                    out->value.data() + static_cast<size_t>(r) * (ca + cb) + ca);
    }
    auto an = a.node(), bn = b.node();
    detail::wire<S>(out, {an, bn}, [an = an.get(), bn = bn.get(), rows, ca, cb](TensorNode<S>& self) {
        const S* g = self.grad.data();
        if (an->requires_grad) {
            an->ensure_grad();
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < ca; ++c)
                    an->grad[static_cast<size_t>(r) * ca + c] += g[static_cast<size_t>(r) * (ca + cb) + c];
        }
        if (bn->requires_grad) {
            bn->ensure_grad();
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < cb; ++c)
                    bn->grad[static_cast<size_t>(r) * cb + c] += g[static_cast<size_t>(r) * (ca + cb) + ca + c];
        }
    });
    return Tensor<S>(out);
}

// rows of an embedding table selected by id; backward scatters into the table
template <class S>
Tensor<S> embedding_rows(const Tensor<S>& table, const std::vector<int>& ids) {
    if (table.rank() != 2) throw DimensionError("embedding table must be rank-2");
    const int v = table.dim(0), d = table.dim(1);
    for (int id : ids)
        if (id < 0 || id >= v) throw ContractError("embedding id " + std::to_string(id) + " out of range");
    auto out = detail::make_node<S>({static_cast<int>(ids.size()), d});
    for (size_t i = 0; i < ids.size(); ++i)
        std::copy_n(table.values().data() + static_cast<size_t>(ids[i]) * d, d, out->value.data() + i * d);
    auto tn = table.node();
    auto idv = std::make_shared<std::vector<int>>(ids);
    detail::wire<S>(out, {tn}, [tn = tn.get(), idv, d](TensorNode<S>& self) {
        tn->ensure_grad();
        for (size_t i = 0; i < idv->size(); ++i) {
            const S* g = self.grad.data() + i * d;
            S* gt = tn->grad.data() + static_cast<size_t>((*idv)[i]) * d;
            for (int c = 0; c < d; ++c) gt[c] += g[c];
        }
    });
    return Tensor<S>(out);
}

// ---------------------------------------------------------------------------
// fused row-wise primitives. These carry hand-derived backward rules and are
// covered by grad_check in the test suite.

template <class S>
Tensor<S> softmax_lastdim(const Tensor<S>& x) {
    if (x.rank() < 1) throw DimensionError("softmax on scalar");
    const int d = x.dim(x.rank() - 1);
    const size_t rows = x.numel() / static_cast<size_t>(d);
    auto out = detail::make_node<S>(x.shape());
    const S* px = x.values().data();
    S* po = out->value.data();
    for (size_t r = 0; r < rows; ++r) {
        const S* xr = px + r * d;
        S* yr = po + r * d;
        S mx = xr[0];
        for (int i = 1; i < d; ++i) mx = std::max(mx, xr[i]);
        S sum = S(0);
        for (int i = 0; i < d; ++i) {
            yr[i] = static_cast<S>(std::exp(static_cast<double>(xr[i] - mx)));
            sum += yr[i];
        }
        for (int i = 0; i < d; ++i) yr[i] /= sum;
    }
    auto xn = x.node();
    detail::wire<S>(out, {xn}, [xn = xn.get(), rows, d](TensorNode<S>& self) {
        xn->ensure_grad();
        const S* g = self.grad.data();
        const S* y = self.value.data();
        S* gx = xn->grad.data();
        for (size_t r = 0; r < rows; ++r) {
            const S* gr = g + r * d;
            const S* yr = y + r * d;
            S dot = S(0);
            for (int i = 0; i < d; ++i) dot += gr[i] * yr[i];
            for (int i = 0; i < d; ++i) gx[r * d + i] += yr[i] * (gr[i] - dot);
        }
    });
    return Tensor<S>(out);
}

// normalization only; affine gain/bias live in the nn layer on top
template <class S>
Tensor<S> layer_norm_lastdim(const Tensor<S>& x, double eps = 1e-5) {
    if (x.rank() < 1) throw DimensionError("layer_norm on scalar");
    const int d = x.dim(x.rank() - 1);
    const size_t rows = x.numel() / static_cast<size_t>(d);
    auto out = detail::make_node<S>(x.shape());
    auto inv_std = std::make_shared<std::vector<S>>(rows);
    const S* px = x.values().data();
    S* po = out->value.data();
    for (size_t r = 0; r < rows; ++r) {
        const S* xr = px + r * d;
        S mu = S(0);
        for (int i = 0; i < d; ++i) mu += xr[i];
        mu /= static_cast<S>(d);
        S var = S(0);
        for (int i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
        var /= static_cast<S>(d);
        const S is = static_cast<S>(1.0 / std::sqrt(static_cast<double>(var) + eps));
        (*inv_std)[r] = is;
        for (int i = 0; i < d; ++i) po[r * d + i] = (xr[i] - mu) * is;
    }
    auto xn = x.node();
    detail::wire<S>(out, {xn}, [xn = xn.get(), rows, d, inv_std](TensorNode<S>& self) {
        xn->ensure_grad();
        const S* g = self.grad.data();
        const S* xh = self.value.data();  // normalized output
        S* gx = xn->grad.data();
        for (size_t r = 0; r < rows; ++r) {
            const S* gr = g + r * d;
            const S* hr = xh + r * d;
            S mg = S(0), mgh = S(0);
            for (int i = 0; i < d; ++i) {
                mg += gr[i];
                mgh += gr[i] * hr[i];
            }
            mg /= static_cast<S>(d);
            mgh /= static_cast<S>(d);
            const S is = (*inv_std)[r];
            for (int i = 0; i < d; ++i) gx[r * d + i] += is * (gr[i] - mg - hr[i] * mgh);
        }
    });
    return Tensor<S>(out);
}

// mean cross-entropy over masked rows of [N, V] logits. counted==0 yields a
// plain zero scalar with no tape, reported through *counted_out.
template <class S>
Tensor<S> masked_cross_entropy(const Tensor<S>& logits, const std::vector<int>& targets,
                               const std::vector<uint8_t>& mask, int* counted_out = nullptr) {
    if (logits.rank() != 2) throw DimensionError("masked_cross_entropy expects [N,V] logits");
    const int n = logits.dim(0), v = logits.dim(1);
    if (static_cast<int>(targets.size()) != n || static_cast<int>(mask.size()) != n)
        throw DimensionError("masked_cross_entropy: targets/mask length mismatch");
    int count = 0;
    double total = 0.0;
    const S* pl = logits.values().data();
    for (int r = 0; r < n; ++r) {
        if (!mask[r]) continue;
        if (targets[r] < 0 || targets[r] >= v) throw ContractError("cross-entropy target out of vocabulary");
        const S* lr = pl + static_cast<size_t>(r) * v;
        double mx = lr[0];
        for (int i = 1; i < v; ++i) mx = std::max(mx, static_cast<double>(lr[i]));
        double lse = 0.0;
        for (int i = 0; i < v; ++i) lse += std::exp(static_cast<double>(lr[i]) - mx);
        total += mx + std::log(lse) - static_cast<double>(lr[targets[r]]);
        ++count;
    }
    if (counted_out) *counted_out = count;
    if (count == 0) return Tensor<S>::scalar(S(0));
    auto out = detail::make_node<S>({1});
    out->value[0] = static_cast<S>(total / count);
    auto ln = logits.node();
    auto tg = std::make_shared<std::vector<int>>(targets);
    auto mk = std::make_shared<std::vector<uint8_t>>(mask);
    detail::wire<S>(out, {ln}, [ln = ln.get(), tg, mk, n, v, count](TensorNode<S>& self) {
        ln->ensure_grad();
        const S g = self.grad[0] / static_cast<S>(count);
        for (int r = 0; r < n; ++r) {
            if (!(*mk)[r]) continue;
            const S* lr = ln->value.data() + static_cast<size_t>(r) * v;
            S* gr = ln->grad.data() + static_cast<size_t>(r) * v;
            double mx = lr[0];
            for (int i = 1; i < v; ++i) mx = std::max(mx, static_cast<double>(lr[i]));
            double lse = 0.0;
            for (int i = 0; i < v; ++i) lse += std::exp(static_cast<double>(lr[i]) - mx);
            for (int i = 0; i < v; ++i) {
                double p = std::exp(static_cast<double>(lr[i]) - mx) / lse;
                gr[i] += g * static_cast<S>(p - (i == (*tg)[r] ? 1.0 : 0.0));
            }
        }
    });
    return Tensor<S>(out);
}

template <class S>
std::vector<int> argmax_lastdim(const Tensor<S>& x) {
    const int d = x.dim(x.rank() - 1);
    const size_t rows = x.numel() / static_cast<size_t>(d);
    std::vector<int> out(rows);
    const S* px = x.values().data();
    for (size_t r = 0; r < rows; ++r) {
        const S* xr = px + r * d;
        int bi = 0;
        for (int i = 1; i < d; ++i)
            if (xr[i] > xr[bi]) bi = i;
        out[r] = bi;
    }
    return out;
}

// ---------------------------------------------------------------------------
// backward pass

template <class S>
void backward(const Tensor<S>& loss) {
    if (loss.numel() != 1) throw ContractError("backward requires a scalar loss, got " + shape_str(loss.shape()));
    if (!loss.requires_grad())
        throw ContractError("backward on a tensor that is not on the tape (no grad-requiring inputs)");

    // iterative post-order DFS for the topological order
    std::vector<TensorNode<S>*> topo;
    std::unordered_set<TensorNode<S>*> seen;
    std::vector<std::pair<TensorNode<S>*, size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    seen.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, idx] = stack.back();
        if (idx < node->parents.size()) {
            TensorNode<S>* p = node->parents[idx].get();
            ++idx;
            if (p->requires_grad && !seen.count(p)) {
                seen.insert(p);
                stack.emplace_back(p, 0);
            }
        } else {
            topo.push_back(node);
            stack.pop_back();
        }
    }

    loss.node()->ensure_grad();
    loss.node()->grad[0] = S(1);
    for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
        TensorNode<S>* n = *it;
        if (n->backward && !n->grad.empty()) n->backward(*n);
    }
    // free the tape; grads stay with their nodes
    for (TensorNode<S>* n : topo) {
        n->backward = nullptr;
        n->parents.clear();
    }
}

// ---------------------------------------------------------------------------
// gradient verification against central finite differences

template <class S>
struct GradCheckReport {
    S max_rel_err = S(0);
    std::string worst;  // "leaf k, element i"
    bool pass = false;
};

// f must be deterministic (checked by evaluating twice) and build its graph
// from the given leaves on every call.
template <class S>
GradCheckReport<S> grad_check(const std::function<Tensor<S>()>& f, std::vector<Tensor<S>> leaves, S eps, S tol) {
    Tensor<S> y1 = f();
    Tensor<S> y2 = f();
    if (y1.numel() != 1) throw ContractError("grad_check: f must return a scalar");
    if (y1.values() != y2.values()) throw ContractError("grad_check: f is stochastic (two evaluations differ)");

    for (auto& l : leaves) l.zero_grad();
    Tensor<S> y = f();
    backward(y);

    GradCheckReport<S> rep;
    for (size_t k = 0; k < leaves.size(); ++k) {
        auto& leaf = leaves[k];
        std::vector<S> tape_grad =
            leaf.has_grad() ? leaf.grad() : std::vector<S>(leaf.numel(), S(0));
        for (size_t i = 0; i < leaf.numel(); ++i) {
            const S orig = leaf.values()[i];
            leaf.values_mut()[i] = orig + eps;
            const S fp = f().item();
            leaf.values_mut()[i] = orig - eps;
            const S fm = f().item();
            leaf.values_mut()[i] = orig;
            const S fd = (fp - fm) / (S(2) * eps);
            const S denom = std::max({std::abs(fd), std::abs(tape_grad[i]), S(1)});
            const S rel = std::abs(tape_grad[i] - fd) / denom;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst = "leaf " + std::to_string(k) + ", element " + std::to_string(i);
            }
        }
        leaf.zero_grad();
    }
    rep.pass = rep.max_rel_err < tol;
    return rep;
}

template <class S>
GradCheckReport<S> grad_check(const std::function<Tensor<S>(const Tensor<S>&)>& f, Tensor<S> x, S eps, S tol) {
    x.set_requires_grad(true);
    return grad_check<S>([&]() { return f(x); }, {x}, eps, tol);
}

}  // namespace reasonact
