#pragma once

// Differentiable tensor operations. Volumetric tensors are channel-first,
// [C, D, H, W]; "per-voxel over channels" ops (linear, layer_norm) act on axis 0.

#include <array>
#include <cmath>
#include <numbers>

#include "fseg/tensor.hpp"

namespace fseg {

namespace detail {

struct BroadcastPlan {
    Shape out;
    std::vector<std::size_t> a_strides, b_strides; // aligned to `out`, 0 on broadcast axes
    bool same = false;
};

inline std::vector<std::size_t> row_major_strides(const Shape& s)
{
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

inline BroadcastPlan broadcast_plan(const Shape& a, const Shape& b)
{
    BroadcastPlan p;
    if (a == b) {
        p.out = a;
        p.same = true;
        return p;
    }
    const auto rank = std::max(a.size(), b.size());
    p.out.assign(rank, 1);
    auto sa = row_major_strides(a), sb = row_major_strides(b);
    p.a_strides.assign(rank, 0);
    p.b_strides.assign(rank, 0);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t ai = i + a.size() >= rank ? i + a.size() - rank : SIZE_MAX;
        const std::size_t bi = i + b.size() >= rank ? i + b.size() - rank : SIZE_MAX;
        const std::size_t ea = ai == SIZE_MAX ? 1 : a[ai];
        const std::size_t eb = bi == SIZE_MAX ? 1 : b[bi];
        if (ea != eb && ea != 1 && eb != 1)
            throw ShapeError("shapes " + to_string(a) + " and " + to_string(b) + " are not broadcastable");
        p.out[i] = std::max(ea, eb);
        if (ea != 1) p.a_strides[i] = sa[ai];
        if (eb != 1) p.b_strides[i] = sb[bi];
    }
    return p;
}

/// Calls f(out_index, a_index, b_index) over the broadcast output.
template <class F>
void for_each_broadcast(const BroadcastPlan& p, F&& f)
{
    const auto n = numel(p.out);
    if (p.same) {
        for (std::size_t i = 0; i < n; ++i) f(i, i, i);
        return;
    }
    const auto rank = p.out.size();
    std::vector<std::size_t> idx(rank, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t i = 0; i < n; ++i) {
        f(i, ia, ib);
        for (std::size_t d = rank; d-- > 0;) {
            ++idx[d];
            ia += p.a_strides[d];
            ib += p.b_strides[d];
            if (idx[d] < p.out[d]) break;
            ia -= p.a_strides[d] * idx[d];
            ib -= p.b_strides[d] * idx[d];
            idx[d] = 0;
        }
    }
}

template <class V>
V conj_if(V v)
{
    if constexpr (is_complex_v<V>) return std::conj(v);
    else return v;
}

} // namespace detail

enum class BinaryOp { add, sub, mul };

/// Broadcasting elementwise binary op. For complex V, `mul` is the exact complex
/// product, i.e. the Hadamard product of spectra.
template <Scalar V>
Tensor<V> elementwise(BinaryOp op, const Tensor<V>& a, const Tensor<V>& b)
{
    const auto plan = detail::broadcast_plan(a.shape(), b.shape());
    Tensor<V> out(plan.out);
    const V* pa = a.data();
    const V* pb = b.data();
    V* po = out.data();
    switch (op) {
    case BinaryOp::add: detail::for_each_broadcast(plan, [&](auto i, auto ia, auto ib) { po[i] = pa[ia] + pb[ib]; }); break;
    case BinaryOp::sub: detail::for_each_broadcast(plan, [&](auto i, auto ia, auto ib) { po[i] = pa[ia] - pb[ib]; }); break;
    case BinaryOp::mul: detail::for_each_broadcast(plan, [&](auto i, auto ia, auto ib) { po[i] = pa[ia] * pb[ib]; }); break;
    }
    if (detail::any_requires_grad(a, b)) {
        detail::attach(out, [a, b, op, plan](detail::Node<V>& self) {
            const V* g = self.grad.data();
            V* ga = a.requires_grad() ? a.node().ensure_grad().data() : nullptr;
            V* gb = b.requires_grad() ? b.node().ensure_grad().data() : nullptr;
            const V* va = a.data();
            const V* vb = b.data();
            detail::for_each_broadcast(plan, [&](auto i, auto ia, auto ib) {
                switch (op) {
                case BinaryOp::add:
                    if (ga) ga[ia] += g[i];
                    if (gb) gb[ib] += g[i];
                    break;
                case BinaryOp::sub:
                    if (ga) ga[ia] += g[i];
                    if (gb) gb[ib] -= g[i];
                    break;
                case BinaryOp::mul:
                    if (ga) ga[ia] += g[i] * detail::conj_if(vb[ib]);
                    if (gb) gb[ib] += g[i] * detail::conj_if(va[ia]);
                    break;
                }
            });
        }, a, b);
    }
    return out;
}

template <Scalar V> Tensor<V> add(const Tensor<V>& a, const Tensor<V>& b) { return elementwise(BinaryOp::add, a, b); }
template <Scalar V> Tensor<V> sub(const Tensor<V>& a, const Tensor<V>& b) { return elementwise(BinaryOp::sub, a, b); }
template <Scalar V> Tensor<V> mul(const Tensor<V>& a, const Tensor<V>& b) { return elementwise(BinaryOp::mul, a, b); }
template <std::floating_point T>
Tensor<std::complex<T>> complex_mul(const Tensor<std::complex<T>>& a, const Tensor<std::complex<T>>& b)
{
    return elementwise(BinaryOp::mul, a, b);
}

template <Scalar V> Tensor<V> operator+(const Tensor<V>& a, const Tensor<V>& b) { return add(a, b); }
template <Scalar V> Tensor<V> operator-(const Tensor<V>& a, const Tensor<V>& b) { return sub(a, b); }
template <Scalar V> Tensor<V> operator*(const Tensor<V>& a, const Tensor<V>& b) { return mul(a, b); }

/// x * s for a constant s.
template <Scalar V>
Tensor<V> scale(const Tensor<V>& x, V s)
{
    Tensor<V> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * s;
    if (detail::any_requires_grad(x)) {
        detail::attach(out, [x, s](detail::Node<V>& self) {
            auto& gx = x.node().ensure_grad();
            const V cs = detail::conj_if(s);
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * cs;
        }, x);
    }
    return out;
}

namespace detail {

template <std::floating_point T, class F, class DF>
Tensor<T> unary(const Tensor<T>& x, F f, DF df)
{
    Tensor<T> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
    if (any_requires_grad(x)) {
        attach(out, [x, df](Node<T>& self) {
            auto& gx = x.node().ensure_grad();
            const T* xv = x.data();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i] * df(xv[i]);
        }, x);
    }
    return out;
}

} // namespace detail

template <std::floating_point T>
Tensor<T> relu(const Tensor<T>& x)
{
    return detail::unary(x, [](T v) { return v > T{0} ? v : T{0}; }, [](T v) { return v > T{0} ? T{1} : T{0}; });
}

/// Gaussian-error gated linear unit, x * Phi(x).
template <std::floating_point T>
Tensor<T> gelu(const Tensor<T>& x)
{
    constexpr T inv_sqrt2 = T(0.70710678118654752440);
    constexpr T inv_sqrt_2pi = T(0.39894228040143267794);
    return detail::unary(
        x, [](T v) { return T(0.5) * v * (T{1} + std::erf(v * inv_sqrt2)); },
        [](T v) { return T(0.5) * (T{1} + std::erf(v * inv_sqrt2)) + v * inv_sqrt_2pi * std::exp(T(-0.5) * v * v); });
}

template <std::floating_point T>
Tensor<T> square(const Tensor<T>& x)
{
    return detail::unary(x, [](T v) { return v * v; }, [](T v) { return T{2} * v; });
}

template <Scalar V>
Tensor<V> sum(const Tensor<V>& x)
{
    V acc{};
    for (std::size_t i = 0; i < x.size(); ++i) acc += x[i];
    Tensor<V> out = Tensor<V>::scalar(acc);
    if (detail::any_requires_grad(x)) {
        detail::attach(out, [x](detail::Node<V>& self) {
            auto& gx = x.node().ensure_grad();
            for (auto& g : gx) g += self.grad[0];
        }, x);
    }
    return out;
}

template <std::floating_point T>
Tensor<T> mean(const Tensor<T>& x)
{
    return scale(sum(x), T{1} / static_cast<T>(x.size()));
}

/// Sum of |x|^2, real-valued for complex x too.
template <Scalar V>
Tensor<real_t<V>> sum_squares(const Tensor<V>& x)
{
    using T = real_t<V>;
    T acc{};
    for (std::size_t i = 0; i < x.size(); ++i) acc += std::norm(x[i]);
    Tensor<T> out = Tensor<T>::scalar(acc);
    if (detail::any_requires_grad(x)) {
        detail::attach(out, [x](detail::Node<T>& self) {
            auto& gx = x.node().ensure_grad();
            const T g = self.grad[0];
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += T{2} * g * x[i];
        }, x);
    }
    return out;
}

/// Same values, new shape of equal element count.
template <Scalar V>
Tensor<V> reshape(const Tensor<V>& x, Shape shape)
{
    if (numel(shape) != x.size())
        throw ShapeError("cannot reshape " + to_string(x.shape()) + " to " + to_string(shape));
    Tensor<V> out(std::move(shape), std::vector<V>(x.values().begin(), x.values().end()));
    if (detail::any_requires_grad(x)) {
        detail::attach(out, [x](detail::Node<V>& self) {
            auto& gx = x.node().ensure_grad();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i];
        }, x);
    }
    return out;
}

namespace detail {

inline std::size_t voxels_after_channel(const Shape& s)
{
    std::size_t v = 1;
    for (std::size_t i = 1; i < s.size(); ++i) v *= s[i];
    return v;
}

} // namespace detail

/// Affine map over the channel axis (axis 0), applied independently per voxel.
/// x: [C_in, ...], weight: [C_in, C_out], bias: [C_out] (may be undefined).
template <std::floating_point T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias)
{
    if (weight.rank() != 2) throw ShapeError("linear weight must be [C_in, C_out], got " + to_string(weight.shape()));
    const std::size_t cin = weight.extent(0), cout = weight.extent(1);
    if (x.rank() < 1 || x.extent(0) != cin)
        throw ShapeError("linear: input channel extent " + to_string(x.shape()) + " does not match weight " +
                         to_string(weight.shape()));
    if (bias.defined() && (bias.rank() != 1 || bias.extent(0) != cout))
        throw ShapeError("linear: bias " + to_string(bias.shape()) + " does not match C_out=" + std::to_string(cout));
    const std::size_t s = detail::voxels_after_channel(x.shape());
    Shape oshape = x.shape();
    oshape[0] = cout;
    Tensor<T> out(oshape);
    T* o = out.data();
    const T* xv = x.data();
    const T* w = weight.data();
    for (std::size_t co = 0; co < cout; ++co) {
        const T b = bias.defined() ? bias[co] : T{0};
        std::fill(o + co * s, o + (co + 1) * s, b);
    }
    for (std::size_t ci = 0; ci < cin; ++ci) {
        const T* xr = xv + ci * s;
        for (std::size_t co = 0; co < cout; ++co) {
            const T wv = w[ci * cout + co];
            T* orow = o + co * s;
            for (std::size_t v = 0; v < s; ++v) orow[v] += wv * xr[v];
        }
    }
    const bool with_bias = bias.defined();
    if (with_bias ? detail::any_requires_grad(x, weight, bias) : detail::any_requires_grad(x, weight)) {
        auto fn = [x, weight, bias, cin, cout, s, with_bias](detail::Node<T>& self) {
            const T* g = self.grad.data();
            if (x.requires_grad()) {
                T* gx = x.node().ensure_grad().data();
                const T* w = weight.data();
                for (std::size_t ci = 0; ci < cin; ++ci)
                    for (std::size_t co = 0; co < cout; ++co) {
                        const T wv = w[ci * cout + co];
                        const T* gr = g + co * s;
                        T* gxr = gx + ci * s;
                        for (std::size_t v = 0; v < s; ++v) gxr[v] += wv * gr[v];
                    }
            }
            if (weight.requires_grad()) {
                T* gw = weight.node().ensure_grad().data();
                const T* xv = x.data();
                for (std::size_t ci = 0; ci < cin; ++ci)
                    for (std::size_t co = 0; co < cout; ++co) {
                        const T* gr = g + co * s;
                        const T* xr = xv + ci * s;
                        T acc{};
                        for (std::size_t v = 0; v < s; ++v) acc += xr[v] * gr[v];
                        gw[ci * cout + co] += acc;
                    }
            }
            if (with_bias && bias.requires_grad()) {
                T* gb = bias.node().ensure_grad().data();
                for (std::size_t co = 0; co < cout; ++co) {
                    T acc{};
                    for (std::size_t v = 0; v < s; ++v) acc += g[co * s + v];
                    gb[co] += acc;
                }
            }
        };
        if (with_bias) detail::attach(out, std::move(fn), x, weight, bias);
        else detail::attach(out, std::move(fn), x, weight);
    }
    return out;
}

/// Normalizes each voxel's channel vector to zero mean / unit variance, then
/// scales by gamma and shifts by beta. x: [C, ...], gamma/beta: [C].
template <std::floating_point T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-6))
{
    if (!(eps > T{0})) throw ShapeError("layer_norm: eps must be positive");
    const std::size_t c = x.extent(0);
    if (gamma.size() != c || beta.size() != c)
        throw ShapeError("layer_norm: gamma/beta " + to_string(gamma.shape()) + " do not match channels of " +
                         to_string(x.shape()));
    const std::size_t s = detail::voxels_after_channel(x.shape());
    Tensor<T> out(x.shape());
    std::vector<T> mu(s, T{0}), rstd(s, T{0});
    const T* xv = x.data();
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t v = 0; v < s; ++v) mu[v] += xv[ch * s + v];
    for (auto& m : mu) m /= static_cast<T>(c);
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t v = 0; v < s; ++v) {
            const T d = xv[ch * s + v] - mu[v];
            rstd[v] += d * d;
        }
    for (auto& r : rstd) r = T{1} / std::sqrt(r / static_cast<T>(c) + eps);
    T* o = out.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
        const T gm = gamma[ch], bt = beta[ch];
        for (std::size_t v = 0; v < s; ++v) o[ch * s + v] = (xv[ch * s + v] - mu[v]) * rstd[v] * gm + bt;
    }
    if (detail::any_requires_grad(x, gamma, beta)) {
        detail::attach(out, [x, gamma, beta, c, s, mu = std::move(mu), rstd = std::move(rstd)](detail::Node<T>& self) {
            const T* g = self.grad.data();
            const T* xv = x.data();
            if (gamma.requires_grad() || beta.requires_grad()) {
                T* gg = gamma.requires_grad() ? gamma.node().ensure_grad().data() : nullptr;
                T* gb = beta.requires_grad() ? beta.node().ensure_grad().data() : nullptr;
                for (std::size_t ch = 0; ch < c; ++ch) {
                    T ag{}, ab{};
                    for (std::size_t v = 0; v < s; ++v) {
                        const T xhat = (xv[ch * s + v] - mu[v]) * rstd[v];
                        ag += g[ch * s + v] * xhat;
                        ab += g[ch * s + v];
                    }
                    if (gg) gg[ch] += ag;
                    if (gb) gb[ch] += ab;
                }
            }
            if (x.requires_grad()) {
                T* gx = x.node().ensure_grad().data();
                std::vector<T> m1(s, T{0}), m2(s, T{0});
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const T gm = gamma[ch];
                    for (std::size_t v = 0; v < s; ++v) {
                        const T dy = g[ch * s + v] * gm;
                        const T xhat = (xv[ch * s + v] - mu[v]) * rstd[v];
                        m1[v] += dy;
                        m2[v] += dy * xhat;
                    }
                }
                const T inv_c = T{1} / static_cast<T>(c);
                for (std::size_t ch = 0; ch < c; ++ch) {
                    const T gm = gamma[ch];
                    for (std::size_t v = 0; v < s; ++v) {
                        const T dy = g[ch * s + v] * gm;
                        const T xhat = (xv[ch * s + v] - mu[v]) * rstd[v];
                        gx[ch * s + v] += rstd[v] * (dy - m1[v] * inv_c - xhat * m2[v] * inv_c);
                    }
                }
            }
        }, x, gamma, beta);
    }
    return out;
}

struct Conv3dGeometry {
    std::size_t cin, cout, k, stride, padding, groups;
    std::size_t in[3];
    std::size_t out[3];
};

namespace detail {

inline Conv3dGeometry conv3d_geometry(const Shape& x, const Shape& w, std::size_t stride, std::size_t padding,
                                      std::size_t groups)
{
    if (x.size() != 4) throw ShapeError("conv3d input must be [C,D,H,W], got " + to_string(x));
    if (w.size() != 5 || w[2] != w[3] || w[3] != w[4])
        throw ShapeError("conv3d weight must be [C_out,C_in/g,k,k,k], got " + to_string(w));
    Conv3dGeometry g{};
    g.cin = x[0];
    g.cout = w[0];
    g.k = w[2];
    g.stride = stride;
    g.padding = padding;
    g.groups = groups;
    std::ostringstream why;
    if (g.k % 2 == 0) why << "kernel size " << g.k << " is even; ";
    if (stride == 0) why << "stride is zero; ";
    if (groups == 0 || g.cin % groups || g.cout % groups)
        why << "groups=" << groups << " must divide C_in=" << g.cin << " and C_out=" << g.cout << "; ";
    else if (w[1] != g.cin / groups)
        why << "weight expects " << w[1] << " input channels per group, input gives " << g.cin / groups << "; ";
    for (int a = 0; a < 3; ++a) {
        g.in[a] = x[a + 1];
        const long span = static_cast<long>(g.in[a]) + 2 * static_cast<long>(padding) - static_cast<long>(g.k);
        if (span < 0 || stride == 0) {
            why << "axis " << a << ": extent " << g.in[a] << " + 2*" << padding << " < kernel " << g.k << "; ";
            g.out[a] = 0;
        } else {
            g.out[a] = static_cast<std::size_t>(span) / stride + 1;
        }
    }
    if (!why.str().empty()) throw GeometryError("conv3d invalid geometry: " + why.str());
    return g;
}

// Valid [lo, hi) output range along one axis for a given kernel tap.
inline std::pair<std::size_t, std::size_t> conv_valid_range(std::size_t out_n, std::size_t in_n, std::size_t stride,
                                                            std::size_t padding, std::size_t tap)
{
    // input index = o*stride + tap - padding must lie in [0, in_n)
    const long off = static_cast<long>(tap) - static_cast<long>(padding);
    long lo = 0;
    if (off < 0) lo = (-off + static_cast<long>(stride) - 1) / static_cast<long>(stride);
    long hi = static_cast<long>(out_n);
    const long max_o = (static_cast<long>(in_n) - 1 - off);
    if (max_o < 0) return {0, 0};
    hi = std::min(hi, max_o / static_cast<long>(stride) + 1);
    if (hi < lo) hi = lo;
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// Visits every (output voxel row, input row) pair touched by kernel tap (kd,kh,kw);
// f(out_row_ptr_offset, in_row_offset, ow_lo, ow_hi, iw_start).
template <class F>
void conv_taps(const Conv3dGeometry& g, std::size_t kd, std::size_t kh, std::size_t kw, F&& f)
{
    auto [dlo, dhi] = conv_valid_range(g.out[0], g.in[0], g.stride, g.padding, kd);
    auto [hlo, hhi] = conv_valid_range(g.out[1], g.in[1], g.stride, g.padding, kh);
    auto [wlo, whi] = conv_valid_range(g.out[2], g.in[2], g.stride, g.padding, kw);
    if (wlo >= whi) return;
    for (std::size_t od = dlo; od < dhi; ++od) {
        const std::size_t id = od * g.stride + kd - g.padding;
        for (std::size_t oh = hlo; oh < hhi; ++oh) {
            const std::size_t ih = oh * g.stride + kh - g.padding;
            const std::size_t orow = (od * g.out[1] + oh) * g.out[2];
            const std::size_t irow = (id * g.in[1] + ih) * g.in[2];
            f(orow, irow, wlo, whi, wlo * g.stride + kw - g.padding);
        }
    }
}

} // namespace detail

/// 3D cross-correlation (no kernel flip). x: [C_in,D,H,W], weight: [C_out,C_in/g,k,k,k],
/// bias: [C_out] or undefined.
template <std::floating_point T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, std::size_t stride = 1,
                 std::size_t padding = 0, std::size_t groups = 1)
{
    const auto g = detail::conv3d_geometry(x.shape(), weight.shape(), stride, padding, groups);
    if (bias.defined() && bias.size() != g.cout)
        throw ShapeError("conv3d bias " + to_string(bias.shape()) + " does not match C_out=" + std::to_string(g.cout));
    const std::size_t ovox = g.out[0] * g.out[1] * g.out[2];
    const std::size_t ivox = g.in[0] * g.in[1] * g.in[2];
    const std::size_t cin_g = g.cin / groups, cout_g = g.cout / groups;
    const std::size_t k3 = g.k * g.k * g.k;
    Tensor<T> out(Shape{g.cout, g.out[0], g.out[1], g.out[2]});
    T* o = out.data();
    const T* xv = x.data();
    const T* w = weight.data();
    const std::size_t st = g.stride;
    for (std::size_t co = 0; co < g.cout; ++co) {
        T* oc = o + co * ovox;
        if (bias.defined()) std::fill(oc, oc + ovox, bias[co]);
        const std::size_t grp = co / cout_g;
        for (std::size_t cj = 0; cj < cin_g; ++cj) {
            const T* xc = xv + (grp * cin_g + cj) * ivox;
            const T* wk = w + (co * cin_g + cj) * k3;
            for (std::size_t kd = 0; kd < g.k; ++kd)
                for (std::size_t kh = 0; kh < g.k; ++kh)
                    for (std::size_t kw = 0; kw < g.k; ++kw) {
                        const T wv = wk[(kd * g.k + kh) * g.k + kw];
                        detail::conv_taps(g, kd, kh, kw, [&](std::size_t orow, std::size_t irow, std::size_t lo,
                                                             std::size_t hi, std::size_t iw0) {
                            T* op = oc + orow;
                            const T* ip = xc + irow + iw0;
                            if (st == 1)
                                for (std::size_t ow = lo; ow < hi; ++ow) op[ow] += wv * ip[ow - lo];
                            else
                                for (std::size_t ow = lo; ow < hi; ++ow) op[ow] += wv * ip[(ow - lo) * st];
                        });
                    }
        }
    }
    const bool with_bias = bias.defined();
    if (with_bias ? detail::any_requires_grad(x, weight, bias) : detail::any_requires_grad(x, weight)) {
        auto fn = [x, weight, bias, g, with_bias](detail::Node<T>& self) {
            const std::size_t ovox = g.out[0] * g.out[1] * g.out[2];
            const std::size_t ivox = g.in[0] * g.in[1] * g.in[2];
            const std::size_t cin_g = g.cin / g.groups, cout_g = g.cout / g.groups;
            const std::size_t k3 = g.k * g.k * g.k;
            const std::size_t st = g.stride;
            const T* go = self.grad.data();
            const T* xv = x.data();
            const T* w = weight.data();
            T* gx = x.requires_grad() ? x.node().ensure_grad().data() : nullptr;
            T* gw = weight.requires_grad() ? weight.node().ensure_grad().data() : nullptr;
            for (std::size_t co = 0; co < g.cout; ++co) {
                const T* gc = go + co * ovox;
                const std::size_t grp = co / cout_g;
                for (std::size_t cj = 0; cj < cin_g; ++cj) {
                    const std::size_t ci = grp * cin_g + cj;
                    const T* xc = xv + ci * ivox;
                    T* gxc = gx ? gx + ci * ivox : nullptr;
                    const std::size_t wbase = (co * cin_g + cj) * k3;
                    for (std::size_t kd = 0; kd < g.k; ++kd)
                        for (std::size_t kh = 0; kh < g.k; ++kh)
                            for (std::size_t kw = 0; kw < g.k; ++kw) {
                                const std::size_t widx = wbase + (kd * g.k + kh) * g.k + kw;
                                const T wv = w[widx];
                                T acc{};
                                detail::conv_taps(g, kd, kh, kw, [&](std::size_t orow, std::size_t irow, std::size_t lo,
                                                                     std::size_t hi, std::size_t iw0) {
                                    const T* gp = gc + orow;
                                    const T* ip = xc + irow + iw0;
                                    if (st == 1) {
                                        if (gw)
                                            for (std::size_t ow = lo; ow < hi; ++ow) acc += gp[ow] * ip[ow - lo];
                                        if (gxc) {
                                            T* gxp = gxc + irow + iw0;
                                            for (std::size_t ow = lo; ow < hi; ++ow) gxp[ow - lo] += wv * gp[ow];
                                        }
                                    } else {
                                        if (gw)
                                            for (std::size_t ow = lo; ow < hi; ++ow) acc += gp[ow] * ip[(ow - lo) * st];
                                        if (gxc) {
                                            T* gxp = gxc + irow + iw0;
                                            for (std::size_t ow = lo; ow < hi; ++ow) gxp[(ow - lo) * st] += wv * gp[ow];
                                        }
                                    }
                                });
                                if (gw) gw[widx] += acc;
                            }
                }
            }
            if (with_bias && bias.requires_grad()) {
                auto& gb = bias.node().ensure_grad();
                for (std::size_t co = 0; co < g.cout; ++co) {
                    T acc{};
                    for (std::size_t v = 0; v < ovox; ++v) acc += go[co * ovox + v];
                    gb[co] += acc;
                }
            }
        };
        if (with_bias) detail::attach(out, std::move(fn), x, weight, bias);
        else detail::attach(out, std::move(fn), x, weight);
    }
    return out;
}

/// Window-mean downsampling. Spatial extents must be divisible by `stride`.
template <std::floating_point T>
Tensor<T> avg_pool3d(const Tensor<T>& x, std::size_t k = 2, std::size_t stride = 2)
{
    if (x.rank() != 4) throw ShapeError("avg_pool3d input must be [C,D,H,W], got " + to_string(x.shape()));
    if (k != stride) throw GeometryError("avg_pool3d supports k == stride only");
    const std::size_t c = x.extent(0), d = x.extent(1), h = x.extent(2), w = x.extent(3);
    if (d % stride || h % stride || w % stride)
        throw GeometryError("avg_pool3d: extents " + to_string(x.shape()) + " not divisible by stride " +
                            std::to_string(stride));
    const std::size_t od = d / stride, oh = h / stride, ow = w / stride;
    Tensor<T> out(Shape{c, od, oh, ow});
    const T inv = T{1} / static_cast<T>(k * k * k);
    const T* xv = x.data();
    T* o = out.data();
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < h; ++j) {
                const T* xr = xv + ((ch * d + i) * h + j) * w;
                T* orow = o + ((ch * od + i / k) * oh + j / k) * ow;
                for (std::size_t l = 0; l < w; ++l) orow[l / k] += xr[l] * inv;
            }
    if (detail::any_requires_grad(x)) {
        detail::attach(out, [x, c, d, h, w, k, od, oh, ow, inv](detail::Node<T>& self) {
            T* gx = x.node().ensure_grad().data();
            const T* g = self.grad.data();
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t i = 0; i < d; ++i)
                    for (std::size_t j = 0; j < h; ++j) {
                        T* gr = gx + ((ch * d + i) * h + j) * w;
                        const T* grow = g + ((ch * od + i / k) * oh + j / k) * ow;
                        for (std::size_t l = 0; l < w; ++l) gr[l] += grow[l / k] * inv;
                    }
        }, x);
    }
    return out;
}

/// Concatenation along the channel axis.
template <Scalar V>
Tensor<V> concat_channels(const Tensor<V>& a, const Tensor<V>& b)
{
    if (a.rank() != b.rank() || !std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1))
        throw ShapeError("concat_channels: incompatible shapes " + to_string(a.shape()) + " and " +
                         to_string(b.shape()));
    Shape s = a.shape();
    s[0] += b.extent(0);
    std::vector<V> v;
    v.reserve(numel(s));
    v.insert(v.end(), a.values().begin(), a.values().end());
    v.insert(v.end(), b.values().begin(), b.values().end());
    Tensor<V> out(s, std::move(v));
    if (detail::any_requires_grad(a, b)) {
        detail::attach(out, [a, b](detail::Node<V>& self) {
            if (a.requires_grad()) {
                auto& ga = a.node().ensure_grad();
                for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
            }
            if (b.requires_grad()) {
                auto& gb = b.node().ensure_grad();
                const std::size_t off = a.size();
                for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[off + i];
            }
        }, a, b);
    }
    return out;
}

/// Zero-extends the trailing spatial block: out[c, i, j, l] = x[c, i, j, l] inside the
/// original extents, 0 elsewhere. `extents` are the new spatial sizes.
template <Scalar V>
Tensor<V> pad_trailing(const Tensor<V>& x, std::array<std::size_t, 3> extents)
{
    if (x.rank() != 4) throw ShapeError("pad_trailing input must be [C,D,H,W], got " + to_string(x.shape()));
    const std::size_t c = x.extent(0), d = x.extent(1), h = x.extent(2), w = x.extent(3);
    if (extents[0] < d || extents[1] < h || extents[2] < w)
        throw GeometryError("padding cannot shrink " + to_string(x.shape()) + " to spatial " +
                            to_string(Shape(extents.begin(), extents.end())));
    const auto [pd, ph, pw] = extents;
    Tensor<V> out(Shape{c, pd, ph, pw});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < h; ++j)
                std::copy_n(x.data() + ((ch * d + i) * h + j) * w, w, out.data() + ((ch * pd + i) * ph + j) * pw);
    if (detail::any_requires_grad(x)) {
        detail::attach(out, [x, c, d, h, w, pd, ph, pw](detail::Node<V>& self) {
            V* gx = x.node().ensure_grad().data();
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t i = 0; i < d; ++i)
                    for (std::size_t j = 0; j < h; ++j) {
                        const V* g = self.grad.data() + ((ch * pd + i) * ph + j) * pw;
                        V* gr = gx + ((ch * d + i) * h + j) * w;
                        for (std::size_t l = 0; l < w; ++l) gr[l] += g[l];
                    }
        }, x);
    }
    return out;
}

/// Keeps the leading spatial block of the given extents.
template <Scalar V>
Tensor<V> crop_leading(const Tensor<V>& x, std::array<std::size_t, 3> extents)
{
    if (x.rank() != 4) throw ShapeError("crop_leading input must be [C,D,H,W], got " + to_string(x.shape()));
    const std::size_t c = x.extent(0), d = x.extent(1), h = x.extent(2), w = x.extent(3);
    const auto [od, oh, ow] = extents;
    if (od > d || oh > h || ow > w || od == 0 || oh == 0 || ow == 0)
        throw GeometryError("crop extents exceed input " + to_string(x.shape()));
    Tensor<V> out(Shape{c, od, oh, ow});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t i = 0; i < od; ++i)
            for (std::size_t j = 0; j < oh; ++j)
                std::copy_n(x.data() + ((ch * d + i) * h + j) * w, ow, out.data() + ((ch * od + i) * oh + j) * ow);
    if (detail::any_requires_grad(x)) {
        detail::attach(out, [x, c, d, h, w, od, oh, ow](detail::Node<V>& self) {
            V* gx = x.node().ensure_grad().data();
            for (std::size_t ch = 0; ch < c; ++ch)
                for (std::size_t i = 0; i < od; ++i)
                    for (std::size_t j = 0; j < oh; ++j) {
                        const V* g = self.grad.data() + ((ch * od + i) * oh + j) * ow;
                        V* gr = gx + ((ch * d + i) * h + j) * w;
                        for (std::size_t l = 0; l < ow; ++l) gr[l] += g[l];
                    }
        }, x);
    }
    return out;
}

/// Fixed sparse linear map applied per channel: out[c, i] = weight[i] * x[c, src[i]]
/// (zero where src[i] == npos). Used for spectral shifts, crops, embeddings and masks.
template <std::floating_point T>
struct GatherMap {
    static constexpr std::size_t npos = static_cast<std::size_t>(-1);
    Shape out_dims;                 // per-channel output extents
    std::size_t in_block = 0;       // per-channel input element count
    std::vector<std::size_t> src;
    std::vector<T> weight;
};

template <Scalar V>
Tensor<V> gather(const Tensor<V>& x, std::shared_ptr<const GatherMap<real_t<V>>> map)
{
    const std::size_t c = x.extent(0);
    if (x.size() != c * map->in_block)
        throw ShapeError("gather: input " + to_string(x.shape()) + " does not match map block " +
                         std::to_string(map->in_block));
    Shape oshape{c};
    oshape.insert(oshape.end(), map->out_dims.begin(), map->out_dims.end());
    Tensor<V> out(oshape);
    const std::size_t ob = map->src.size(), ib = map->in_block;
    constexpr auto npos = GatherMap<real_t<V>>::npos;
    for (std::size_t ch = 0; ch < c; ++ch) {
        const V* xi = x.data() + ch * ib;
        V* o = out.data() + ch * ob;
        for (std::size_t i = 0; i < ob; ++i)
            if (map->src[i] != npos) o[i] = xi[map->src[i]] * map->weight[i];
    }
    if (detail::any_requires_grad(x)) {
        detail::attach(out, [x, map, c](detail::Node<V>& self) {
            auto& gx = x.node().ensure_grad();
            const std::size_t ob = map->src.size(), ib = map->in_block;
            for (std::size_t ch = 0; ch < c; ++ch) {
                V* g = gx.data() + ch * ib;
                const V* go = self.grad.data() + ch * ob;
                for (std::size_t i = 0; i < ob; ++i)
                    if (map->src[i] != npos) g[map->src[i]] += go[i] * map->weight[i];
            }
        }, x);
    }
    return out;
}

} // namespace fseg
