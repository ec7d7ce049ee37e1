#pragma once

// Two-mode automatic differentiation:
//   - Dual<T, W>: forward mode with a W-wide tangent, generic over the scalar
//     kind T so tangents may themselves be tape variables (forward-over-reverse).
//   - Tape/Rev: reverse mode on a flat single-threaded tape.
// jvp extracts Jacobian columns, vjp extracts rows; grad drives training.

#include <array>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <type_traits>
#include <vector>

namespace manent {

// ---------------------------------------------------------------------------
// Reverse mode
// ---------------------------------------------------------------------------

/// Flat reverse-mode tape. Nodes are stored in topological order; backward()
/// replays them once. One tape per thread; truncate() rolls back to a saved
/// watermark so per-sample work can be discarded while parameter leaves stay.
class Tape {
public:
    struct Node {
        std::int32_t a;
        std::int32_t b;
        double wa;
        double wb;
    };

    std::int32_t leaf() {
        nodes_.push_back({-1, -1, 0.0, 0.0});
        return static_cast<std::int32_t>(nodes_.size() - 1);
    }

    std::int32_t push1(std::int32_t a, double wa) {
        nodes_.push_back({a, -1, wa, 0.0});
        return static_cast<std::int32_t>(nodes_.size() - 1);
    }

    std::int32_t push2(std::int32_t a, double wa, std::int32_t b, double wb) {
        nodes_.push_back({a, b, wa, wb});
        return static_cast<std::int32_t>(nodes_.size() - 1);
    }

    std::size_t size() const { return nodes_.size(); }

    void truncate(std::size_t watermark) {
        assert(watermark <= nodes_.size());
        nodes_.resize(watermark);
    }

    void clear() { nodes_.clear(); }

    void reserve(std::size_t n) { nodes_.reserve(n); }

    /// Accumulates adjoints from one seeded output node. The returned buffer is
    /// indexed by node id and owned by the tape (reused between calls).
    const std::vector<double>& backward(std::int32_t output) {
        adj_.assign(nodes_.size(), 0.0);
        if (output < 0) return adj_;
        adj_[static_cast<std::size_t>(output)] = 1.0;
        run_backward();
        return adj_;
    }

    /// Backward from several outputs at once with given seed adjoints.
    const std::vector<double>& backward_seeded(std::span<const std::int32_t> outputs,
                                               std::span<const double> seeds) {
        assert(outputs.size() == seeds.size());
        adj_.assign(nodes_.size(), 0.0);
        for (std::size_t k = 0; k < outputs.size(); ++k)
            if (outputs[k] >= 0) adj_[static_cast<std::size_t>(outputs[k])] += seeds[k];
        run_backward();
        return adj_;
    }

    /// Sweeps only the nodes at and above frozen_prefix, accumulating into the
    /// caller's buffer; adjoints below frozen_prefix (the leaves) are left
    /// untouched, so repeated calls sum per-sample gradients in place.
    void backward_into(std::int32_t output, std::vector<double>& adj,
                       std::size_t frozen_prefix) {
        adj.resize(nodes_.size());
        std::fill(adj.begin() + static_cast<std::ptrdiff_t>(frozen_prefix), adj.end(), 0.0);
        if (output < 0) return;
        adj[static_cast<std::size_t>(output)] = 1.0;
        for (std::size_t i = nodes_.size(); i-- > frozen_prefix;) {
            double ad = adj[i];
            if (ad == 0.0) continue;
            const Node& n = nodes_[i];
            if (n.a >= 0) adj[static_cast<std::size_t>(n.a)] += n.wa * ad;
            if (n.b >= 0) adj[static_cast<std::size_t>(n.b)] += n.wb * ad;
        }
    }

private:
    void run_backward() {
        for (std::size_t i = nodes_.size(); i-- > 0;) {
            double ad = adj_[i];
            if (ad == 0.0) continue;
            const Node& n = nodes_[i];
            if (n.a >= 0) adj_[static_cast<std::size_t>(n.a)] += n.wa * ad;
            if (n.b >= 0) adj_[static_cast<std::size_t>(n.b)] += n.wb * ad;
        }
    }

    std::vector<Node> nodes_;
    std::vector<double> adj_;
};

/// Reverse-mode scalar: a value plus a tape handle. Constants carry ix = -1 and
/// cost nothing. All arithmetic records local partials on the active tape.
struct Rev {
    double v = 0.0;
    std::int32_t ix = -1;
    Tape* tp = nullptr;

    Rev() = default;
    Rev(double value) : v(value) {}
    Rev(double value, std::int32_t index, Tape* tape) : v(value), ix(index), tp(tape) {}

    static Rev input(Tape& tape, double value) { return Rev(value, tape.leaf(), &tape); }

    bool tracked() const { return ix >= 0; }
};

inline double value_of(double x) { return x; }
inline double value_of(const Rev& x) { return x.v; }

namespace detail {
inline Tape* tape_of(const Rev& a, const Rev& b) { return a.tp ? a.tp : b.tp; }
}

// Exact-zero constants short-circuit: chunked forward tangents carry many
// structural zeros, and without folding every one of them would push a
// dead node per operation.

inline Rev operator+(const Rev& a, const Rev& b) {
    double v = a.v + b.v;
    if (!a.tracked() && !b.tracked()) return Rev(v);
    if (!a.tracked() && a.v == 0.0) return b;
    if (!b.tracked() && b.v == 0.0) return a;
    Tape* t = detail::tape_of(a, b);
    if (a.tracked() && b.tracked()) return Rev(v, t->push2(a.ix, 1.0, b.ix, 1.0), t);
    if (a.tracked()) return Rev(v, t->push1(a.ix, 1.0), t);
    return Rev(v, t->push1(b.ix, 1.0), t);
}

inline Rev operator-(const Rev& a, const Rev& b) {
    double v = a.v - b.v;
    if (!a.tracked() && !b.tracked()) return Rev(v);
    if (!b.tracked() && b.v == 0.0) return a;
    Tape* t = detail::tape_of(a, b);
    if (a.tracked() && b.tracked()) return Rev(v, t->push2(a.ix, 1.0, b.ix, -1.0), t);
    if (a.tracked()) return Rev(v, t->push1(a.ix, 1.0), t);
    return Rev(v, t->push1(b.ix, -1.0), t);
}

inline Rev operator-(const Rev& a) {
    if (!a.tracked()) return Rev(-a.v);
    return Rev(-a.v, a.tp->push1(a.ix, -1.0), a.tp);
}

inline Rev operator*(const Rev& a, const Rev& b) {
    double v = a.v * b.v;
    if (!a.tracked() && !b.tracked()) return Rev(v);
    if ((!a.tracked() && a.v == 0.0) || (!b.tracked() && b.v == 0.0)) return Rev(0.0);
    Tape* t = detail::tape_of(a, b);
    if (a.tracked() && b.tracked()) return Rev(v, t->push2(a.ix, b.v, b.ix, a.v), t);
    if (a.tracked()) return Rev(v, t->push1(a.ix, b.v), t);
    return Rev(v, t->push1(b.ix, a.v), t);
}

inline Rev operator/(const Rev& a, const Rev& b) {
    double inv = 1.0 / b.v;
    double v = a.v * inv;
    if (!a.tracked() && !b.tracked()) return Rev(v);
    Tape* t = detail::tape_of(a, b);
    if (a.tracked() && b.tracked()) return Rev(v, t->push2(a.ix, inv, b.ix, -v * inv), t);
    if (a.tracked()) return Rev(v, t->push1(a.ix, inv), t);
    return Rev(v, t->push1(b.ix, -v * inv), t);
}

inline Rev operator+(const Rev& a, double b) { return a + Rev(b); }
inline Rev operator+(double a, const Rev& b) { return Rev(a) + b; }
inline Rev operator-(const Rev& a, double b) { return a - Rev(b); }
inline Rev operator-(double a, const Rev& b) { return Rev(a) - b; }
inline Rev operator*(const Rev& a, double b) { return a * Rev(b); }
inline Rev operator*(double a, const Rev& b) { return Rev(a) * b; }
inline Rev operator/(const Rev& a, double b) { return a / Rev(b); }
inline Rev operator/(double a, const Rev& b) { return Rev(a) / b; }

inline Rev& operator+=(Rev& a, const Rev& b) { return a = a + b; }
inline Rev& operator-=(Rev& a, const Rev& b) { return a = a - b; }
inline Rev& operator*=(Rev& a, const Rev& b) { return a = a * b; }

namespace detail {
inline Rev unary(const Rev& a, double v, double dv) {
    if (!a.tracked()) return Rev(v);
    return Rev(v, a.tp->push1(a.ix, dv), a.tp);
}
} // namespace detail

inline Rev exp(const Rev& a) { double e = std::exp(a.v); return detail::unary(a, e, e); }
inline Rev log(const Rev& a) { return detail::unary(a, std::log(a.v), 1.0 / a.v); }
inline Rev log1p(const Rev& a) { return detail::unary(a, std::log1p(a.v), 1.0 / (1.0 + a.v)); }
inline Rev sqrt(const Rev& a) { double s = std::sqrt(a.v); return detail::unary(a, s, 0.5 / s); }
inline Rev sin(const Rev& a) { return detail::unary(a, std::sin(a.v), std::cos(a.v)); }
inline Rev cos(const Rev& a) { return detail::unary(a, std::cos(a.v), -std::sin(a.v)); }
inline Rev tanh(const Rev& a) { double t = std::tanh(a.v); return detail::unary(a, t, 1.0 - t * t); }
inline Rev abs(const Rev& a) { return a.v < 0.0 ? -a : a; }

// ---------------------------------------------------------------------------
// Forward mode
// ---------------------------------------------------------------------------

/// Forward-mode scalar with W simultaneous tangents over base scalar T.
/// W = 1 is the plain dual number; larger W propagates several Jacobian
/// columns in one pass (ForwardDiff-style chunking).
template <class T, int W = 1>
struct Dual {
    T v{};
    std::array<T, W> d{};

    Dual() = default;
    Dual(double value) : v(value) {
        for (auto& t : d) t = T(0.0);
    }
    Dual(T value) requires(!std::is_same_v<T, double>) : v(std::move(value)) {
        for (auto& t : d) t = T(0.0);
    }
    Dual(T value, std::array<T, W> tangent) : v(std::move(value)), d(std::move(tangent)) {}

    static Dual seeded(T value, int slot) {
        Dual out(std::move(value));
        out.d[static_cast<std::size_t>(slot)] = T(1.0);
        return out;
    }
};

template <class T, int W>
inline double value_of(const Dual<T, W>& x) { return value_of(x.v); }

template <class T, int W>
inline Dual<T, W> operator+(const Dual<T, W>& a, const Dual<T, W>& b) {
    Dual<T, W> r;
    r.v = a.v + b.v;
    for (int i = 0; i < W; ++i) r.d[i] = a.d[i] + b.d[i];
    return r;
}

template <class T, int W>
inline Dual<T, W> operator-(const Dual<T, W>& a, const Dual<T, W>& b) {
    Dual<T, W> r;
    r.v = a.v - b.v;
    for (int i = 0; i < W; ++i) r.d[i] = a.d[i] - b.d[i];
    return r;
}

template <class T, int W>
inline Dual<T, W> operator-(const Dual<T, W>& a) {
    Dual<T, W> r;
    r.v = -a.v;
    for (int i = 0; i < W; ++i) r.d[i] = -a.d[i];
    return r;
}

template <class T, int W>
inline Dual<T, W> operator*(const Dual<T, W>& a, const Dual<T, W>& b) {
    Dual<T, W> r;
    r.v = a.v * b.v;
    for (int i = 0; i < W; ++i) r.d[i] = a.d[i] * b.v + b.d[i] * a.v;
    return r;
}

template <class T, int W>
inline Dual<T, W> operator/(const Dual<T, W>& a, const Dual<T, W>& b) {
    Dual<T, W> r;
    T inv = T(1.0) / b.v;
    r.v = a.v * inv;
    for (int i = 0; i < W; ++i) r.d[i] = (a.d[i] - r.v * b.d[i]) * inv;
    return r;
}

template <class T, int W> inline Dual<T, W> operator+(const Dual<T, W>& a, double b) { Dual<T, W> r = a; r.v = a.v + b; return r; }
template <class T, int W> inline Dual<T, W> operator+(double a, const Dual<T, W>& b) { return b + a; }
template <class T, int W> inline Dual<T, W> operator-(const Dual<T, W>& a, double b) { Dual<T, W> r = a; r.v = a.v - b; return r; }
template <class T, int W> inline Dual<T, W> operator-(double a, const Dual<T, W>& b) { return Dual<T, W>(a) - b; }

template <class T, int W>
inline Dual<T, W> operator*(const Dual<T, W>& a, double b) {
    Dual<T, W> r;
    r.v = a.v * b;
    for (int i = 0; i < W; ++i) r.d[i] = a.d[i] * b;
    return r;
}
template <class T, int W> inline Dual<T, W> operator*(double a, const Dual<T, W>& b) { return b * a; }
template <class T, int W> inline Dual<T, W> operator/(const Dual<T, W>& a, double b) { return a * (1.0 / b); }
template <class T, int W> inline Dual<T, W> operator/(double a, const Dual<T, W>& b) { return Dual<T, W>(a) / b; }

template <class T, int W> inline Dual<T, W>& operator+=(Dual<T, W>& a, const Dual<T, W>& b) { return a = a + b; }
template <class T, int W> inline Dual<T, W>& operator-=(Dual<T, W>& a, const Dual<T, W>& b) { return a = a - b; }
template <class T, int W> inline Dual<T, W>& operator*=(Dual<T, W>& a, const Dual<T, W>& b) { return a = a * b; }

namespace detail {
template <class T, int W>
inline Dual<T, W> chain(const Dual<T, W>& a, T v, T dv) {
    Dual<T, W> r;
    r.v = std::move(v);
    for (int i = 0; i < W; ++i) r.d[i] = a.d[i] * dv;
    return r;
}
} // namespace detail

using std::exp;
using std::log;
using std::log1p;
using std::sqrt;
using std::sin;
using std::cos;
using std::tanh;
using std::abs;

template <class T, int W>
inline Dual<T, W> exp(const Dual<T, W>& a) { T e = exp(a.v); return detail::chain(a, e, e); }
template <class T, int W>
inline Dual<T, W> log(const Dual<T, W>& a) { return detail::chain(a, log(a.v), T(1.0) / a.v); }
template <class T, int W>
inline Dual<T, W> log1p(const Dual<T, W>& a) { return detail::chain(a, log1p(a.v), T(1.0) / (T(1.0) + a.v)); }
template <class T, int W>
inline Dual<T, W> sqrt(const Dual<T, W>& a) { T s = sqrt(a.v); return detail::chain(a, s, T(0.5) / s); }
template <class T, int W>
inline Dual<T, W> sin(const Dual<T, W>& a) { return detail::chain(a, sin(a.v), cos(a.v)); }
template <class T, int W>
inline Dual<T, W> cos(const Dual<T, W>& a) { return detail::chain(a, cos(a.v), -sin(a.v)); }
template <class T, int W>
inline Dual<T, W> tanh(const Dual<T, W>& a) { T t = tanh(a.v); return detail::chain(a, t, T(1.0) - t * t); }
template <class T, int W>
inline Dual<T, W> abs(const Dual<T, W>& a) { return value_of(a) < 0.0 ? -a : a; }

/// softplus(x) = log(1 + e^x), evaluated without overflow.
template <class S>
inline S softplus(const S& x) {
    if (value_of(x) > 30.0) return x;
    return log1p(exp(x));
}

template <class S>
inline S sigmoid(const S& x) {
    return S(1.0) / (S(1.0) + exp(-x));
}

using Dual1 = Dual<double, 1>;

/// Forward-mode chunk width used when assembling Jacobians column-block-wise.
inline constexpr int kJacobianChunk = 8;
using DualChunk = Dual<double, kJacobianChunk>;

// ---------------------------------------------------------------------------
// Jacobian extraction and gradients
// ---------------------------------------------------------------------------

/// Standard basis vector e_k of dimension dim.
inline std::vector<double> standard_basis_vector(std::size_t dim, std::size_t k) {
    if (k >= dim) throw std::invalid_argument("standard_basis_vector: index out of range");
    std::vector<double> e(dim, 0.0);
    e[k] = 1.0;
    return e;
}

/// jvp: (f(z), J(z) v) in one forward pass. f must be callable as
/// std::vector<S> f(std::span<const S>) for S = Dual1.
template <class F>
std::pair<std::vector<double>, std::vector<double>>
jvp(const F& f, std::span<const double> z, std::span<const double> v) {
    if (z.size() != v.size())
        throw std::invalid_argument("jvp: tangent dimension does not match input dimension");
    std::vector<Dual1> in(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        in[i] = Dual1(z[i]);
        in[i].d[0] = v[i];
    }
    std::vector<Dual1> out = f(std::span<const Dual1>(in));
    std::vector<double> value(out.size()), tangent(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        value[i] = out[i].v;
        tangent[i] = out[i].d[0];
    }
    return {std::move(value), std::move(tangent)};
}

/// vjp: (f(z), u^T J(z)) via one recorded forward pass and one backward sweep.
/// f must be callable as std::vector<Rev> f(std::span<const Rev>).
template <class F>
std::pair<std::vector<double>, std::vector<double>>
vjp(const F& f, std::span<const double> z, std::span<const double> u) {
    Tape tape;
    std::vector<Rev> in(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) in[i] = Rev::input(tape, z[i]);
    std::vector<Rev> out = f(std::span<const Rev>(in));
    if (out.size() != u.size())
        throw std::invalid_argument("vjp: cotangent dimension does not match output dimension");
    std::vector<double> value(out.size());
    std::vector<std::int32_t> ids(out.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        value[i] = out[i].v;
        ids[i] = out[i].ix;
    }
    const auto& adj = tape.backward_seeded(ids, u);
    std::vector<double> cotangent(z.size());
    for (std::size_t i = 0; i < z.size(); ++i)
        cotangent[i] = adj[static_cast<std::size_t>(in[i].ix)];
    return {std::move(value), std::move(cotangent)};
}

/// Reverse-mode gradient of a scalar loss. f must be callable as
/// Rev f(std::span<const Rev>).
template <class F>
std::vector<double> grad(const F& f, std::span<const double> params) {
    Tape tape;
    std::vector<Rev> in(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) in[i] = Rev::input(tape, params[i]);
    Rev loss = f(std::span<const Rev>(in));
    if (!loss.tracked())
        throw std::invalid_argument("grad: loss does not depend on any registered parameter");
    const auto& adj = tape.backward(loss.ix);
    std::vector<double> g(params.size());
    for (std::size_t i = 0; i < params.size(); ++i)
        g[i] = adj[static_cast<std::size_t>(in[i].ix)];
    return g;
}

} // namespace manent
