#pragma once

// Differentiable 3D transforms over channel-first volumes [C, N1, N2, N3] and
// the Spectrum3D value type.
//
// Half spectra keep bins 0..floor(N3/2) of the last axis; the remaining bins
// follow from conjugate symmetry. irfft3 is the real-part-of-inverse map,
// i.e. it returns the inverse of the Hermitian projection of its input; that
// makes it exact and differentiable for any complex half spectrum.

#include <array>
#include <cmath>
#include <complex>
#include <map>
#include <mutex>
#include <tuple>

#include "fseg/fft.hpp"
#include "fseg/ops.hpp"

namespace fseg {

using Dims3 = std::array<std::size_t, 3>;

namespace detail {

inline Dims3 spatial_dims(const Shape& s, const char* what)
{
    if (s.size() != 4) throw ShapeError(std::string(what) + " expects [C,N1,N2,N3], got " + to_string(s));
    return {s[1], s[2], s[3]};
}

template <std::floating_point T>
void transform3(std::complex<T>* data, std::size_t batch, Dims3 dims, bool inverse, bool axes01_only = false)
{
    fft::transform_axis(data, batch, dims, 0, inverse);
    fft::transform_axis(data, batch, dims, 1, inverse);
    if (!axes01_only) fft::transform_axis(data, batch, dims, 2, inverse);
}

} // namespace detail

inline std::size_t half_extent(std::size_t n) { return n / 2 + 1; }

template <std::floating_point T>
Tensor<std::complex<T>> to_complex(const Tensor<T>& x)
{
    Tensor<std::complex<T>> out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i];
    if (detail::any_requires_grad(x)) {
        detail::attach(out, [x](detail::Node<std::complex<T>>& self) {
            auto& gx = x.node().ensure_grad();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += self.grad[i].real();
        }, x);
    }
    return out;
}

template <std::floating_point T>
Tensor<T> real_part(const Tensor<std::complex<T>>& z)
{
    Tensor<T> out(z.shape());
    for (std::size_t i = 0; i < z.size(); ++i) out[i] = z[i].real();
    if (detail::any_requires_grad(z)) {
        detail::attach(out, [z](detail::Node<T>& self) {
            auto& gz = z.node().ensure_grad();
            for (std::size_t i = 0; i < gz.size(); ++i) gz[i] += self.grad[i];
        }, z);
    }
    return out;
}

/// Full complex forward transform over the three spatial axes, per channel.
template <std::floating_point T>
Tensor<std::complex<T>> fft3(const Tensor<std::complex<T>>& x)
{
    const auto dims = detail::spatial_dims(x.shape(), "fft3");
    Tensor<std::complex<T>> out = x.detach();
    detail::transform3(out.data(), x.extent(0), dims, false);
    if (detail::any_requires_grad(x)) {
        detail::attach(out, [x, dims](detail::Node<std::complex<T>>& self) {
            std::vector<std::complex<T>> g = self.grad;
            detail::transform3(g.data(), x.extent(0), dims, true);
            auto& gx = x.node().ensure_grad();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i];
        }, x);
    }
    return out;
}

/// Full complex inverse transform (normalized by 1/(N1 N2 N3)).
template <std::floating_point T>
Tensor<std::complex<T>> ifft3(const Tensor<std::complex<T>>& x)
{
    const auto dims = detail::spatial_dims(x.shape(), "ifft3");
    Tensor<std::complex<T>> out = x.detach();
    detail::transform3(out.data(), x.extent(0), dims, true);
    const T inv = T{1} / static_cast<T>(dims[0] * dims[1] * dims[2]);
    for (auto& v : out.values()) v *= inv;
    if (detail::any_requires_grad(x)) {
        detail::attach(out, [x, dims, inv](detail::Node<std::complex<T>>& self) {
            std::vector<std::complex<T>> g = self.grad;
            detail::transform3(g.data(), x.extent(0), dims, false);
            auto& gx = x.node().ensure_grad();
            for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g[i] * inv;
        }, x);
    }
    return out;
}

/// Real-input forward transform returning the half spectrum [C, N1, N2, N3/2+1].
template <std::floating_point T>
Tensor<std::complex<T>> rfft3(const Tensor<T>& x)
{
    using C = std::complex<T>;
    const auto dims = detail::spatial_dims(x.shape(), "rfft3");
    const std::size_t c = x.extent(0), n3 = dims[2], h = half_extent(n3);
    const std::size_t lines = c * dims[0] * dims[1];
    Tensor<C> out(Shape{c, dims[0], dims[1], h});
    {
        auto plan = fft::plan_for<T>(n3);
        std::vector<C> line(n3), scratch;
        for (std::size_t l = 0; l < lines; ++l) {
            const T* xi = x.data() + l * n3;
            for (std::size_t k = 0; k < n3; ++k) line[k] = xi[k];
            plan->forward(line.data(), scratch);
            std::copy_n(line.begin(), h, out.data() + l * h);
        }
        detail::transform3(out.data(), c, Dims3{dims[0], dims[1], h}, false, true);
    }
    if (detail::any_requires_grad(x)) {
        detail::attach(out, [x, dims, c, h, lines](detail::Node<C>& self) {
            const std::size_t n3 = dims[2];
            std::vector<C> g = self.grad;
            detail::transform3(g.data(), c, Dims3{dims[0], dims[1], h}, true, true);
            auto plan = fft::plan_for<T>(n3);
            std::vector<C> line(n3), scratch;
            auto& gx = x.node().ensure_grad();
            for (std::size_t l = 0; l < lines; ++l) {
                std::fill(line.begin(), line.end(), C{});
                std::copy_n(g.data() + l * h, h, line.begin());
                plan->backward(line.data(), scratch);
                T* gr = gx.data() + l * n3;
                for (std::size_t k = 0; k < n3; ++k) gr[k] += line[k].real();
            }
        }, x);
    }
    return out;
}

/// Inverse of a half spectrum to a real volume whose last extent is `n3`.
template <std::floating_point T>
Tensor<T> irfft3(const Tensor<std::complex<T>>& s, std::size_t n3)
{
    using C = std::complex<T>;
    const auto hd = detail::spatial_dims(s.shape(), "irfft3");
    const std::size_t c = s.extent(0), h = half_extent(n3);
    if (hd[2] != h)
        throw ShapeError("irfft3: half spectrum " + to_string(s.shape()) + " does not match output extent " +
                         std::to_string(n3));
    const Dims3 hdims{hd[0], hd[1], h};
    const std::size_t lines = c * hd[0] * hd[1];
    const T inv12 = T{1} / static_cast<T>(hd[0] * hd[1]);
    const T inv3 = T{1} / static_cast<T>(n3);
    Tensor<T> out(Shape{c, hd[0], hd[1], n3});
    {
        std::vector<C> a(s.values().begin(), s.values().end());
        detail::transform3(a.data(), c, hdims, true, true);
        auto plan = fft::plan_for<T>(n3);
        std::vector<C> line(n3), scratch;
        for (std::size_t l = 0; l < lines; ++l) {
            const C* al = a.data() + l * h;
            for (std::size_t k = 0; k < h; ++k) line[k] = al[k];
            for (std::size_t k = h; k < n3; ++k) line[k] = std::conj(al[n3 - k]);
            plan->backward(line.data(), scratch);
            T* o = out.data() + l * n3;
            for (std::size_t k = 0; k < n3; ++k) o[k] = line[k].real() * inv12 * inv3;
        }
    }
    if (detail::any_requires_grad(s)) {
        detail::attach(out, [s, hdims, n3, h, lines, inv12, inv3](detail::Node<T>& self) {
            std::vector<C> a(lines * h);
            auto plan = fft::plan_for<T>(n3);
            std::vector<C> line(n3), scratch;
            for (std::size_t l = 0; l < lines; ++l) {
                const T* g = self.grad.data() + l * n3;
                for (std::size_t k = 0; k < n3; ++k) line[k] = g[k];
                plan->forward(line.data(), scratch);
                C* al = a.data() + l * h;
                for (std::size_t k = 0; k < h; ++k) {
                    const T f = (k > 0 && 2 * k != n3) ? T{2} : T{1};
                    al[k] = line[k] * (f * inv3);
                }
            }
            detail::transform3(a.data(), s.extent(0), hdims, false, true);
            auto& gs = s.node().ensure_grad();
            for (std::size_t i = 0; i < gs.size(); ++i) gs[i] += a[i] * inv12;
        }, s);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Frequency bookkeeping.

enum class SpectrumLayout { natural, shifted };

/// Signed frequency of index i on an axis of extent n.
inline long freq_of(std::size_t i, std::size_t n, SpectrumLayout layout)
{
    const long ni = static_cast<long>(n), ii = static_cast<long>(i);
    if (layout == SpectrumLayout::shifted) return ii - ni / 2;
    return ii < (ni + 1) / 2 ? ii : ii - ni;
}

/// Index of signed frequency f on an axis of extent n (f must be representable).
inline std::size_t index_of(long f, std::size_t n, SpectrumLayout layout)
{
    const long ni = static_cast<long>(n);
    if (layout == SpectrumLayout::shifted) return static_cast<std::size_t>(f + ni / 2);
    return static_cast<std::size_t>(((f % ni) + ni) % ni);
}

/// Smallest and largest frequency held by an axis of extent n.
inline std::pair<long, long> freq_range(std::size_t n)
{
    const long ni = static_cast<long>(n);
    return {-(ni / 2), ni - ni / 2 - 1};
}

enum class NyquistMode {
    keep,  // an even grid's -n/2 bin maps only to -n/2
    split, // ... is shared half/half between -n/2 and +n/2 (keeps real signals real)
};

namespace detail {

struct AxisTap {
    std::size_t src;
    double weight;
};

// Per-axis source taps for each output index when resampling between grids of
// extent n_in and n_out (embedding when n_out > n_in, band crop when smaller).
inline std::vector<std::vector<AxisTap>> resample_axis(std::size_t n_in, std::size_t n_out, SpectrumLayout lin,
                                                       SpectrumLayout lout, NyquistMode mode, bool half_axis)
{
    std::vector<std::vector<AxisTap>> taps(half_axis ? half_extent(n_out) : n_out);
    const auto [lo, hi] = freq_range(n_in);
    const bool split = mode == NyquistMode::split && n_in % 2 == 0 && n_out > n_in;
    for (std::size_t p = 0; p < taps.size(); ++p) {
        const long f = half_axis ? static_cast<long>(p) : freq_of(p, n_out, lout);
        if (half_axis) {
            // half axes hold non-negative frequencies; the negative partner is implicit
            const long hmax = static_cast<long>(n_in / 2);
            if (f > hmax) continue;
            const double w = (split && f == hmax) ? 0.5 : 1.0;
            taps[p].push_back({static_cast<std::size_t>(f), w});
            continue;
        }
        if (f >= lo && f <= hi) {
            const double w = (split && f == lo) ? 0.5 : 1.0;
            taps[p].push_back({index_of(f, n_in, lin), w});
        } else if (split && f == -lo) {
            taps[p].push_back({index_of(lo, n_in, lin), 0.5});
        }
    }
    return taps;
}

template <std::floating_point T>
std::shared_ptr<const GatherMap<T>> separable_map(Dims3 in_dims, Dims3 out_dims,
                                                  const std::array<std::vector<std::vector<AxisTap>>, 3>& taps,
                                                  double scale)
{
    auto map = std::make_shared<GatherMap<T>>();
    map->out_dims = Shape{out_dims[0], out_dims[1], out_dims[2]};
    map->in_block = in_dims[0] * in_dims[1] * in_dims[2];
    const std::size_t n = out_dims[0] * out_dims[1] * out_dims[2];
    map->src.assign(n, GatherMap<T>::npos);
    map->weight.assign(n, T{0});
    for (std::size_t a = 0; a < out_dims[0]; ++a)
        for (std::size_t b = 0; b < out_dims[1]; ++b)
            for (std::size_t c = 0; c < out_dims[2]; ++c) {
                const auto& ta = taps[0][a];
                const auto& tb = taps[1][b];
                const auto& tc = taps[2][c];
                if (ta.empty() || tb.empty() || tc.empty()) continue;
                const std::size_t o = (a * out_dims[1] + b) * out_dims[2] + c;
                map->src[o] = (ta[0].src * in_dims[1] + tb[0].src) * in_dims[2] + tc[0].src;
                map->weight[o] = static_cast<T>(ta[0].weight * tb[0].weight * tc[0].weight * scale);
            }
    return map;
}

} // namespace detail

/// Map that resamples a spectrum from `in_dims` bins to `out_dims` bins by
/// frequency (zero-fill when growing, band crop when shrinking), times `scale`.
/// With half=true both sides are half spectra whose last axis covers 0..n/2 and
/// in_dims/out_dims give the full spatial extents.
template <std::floating_point T>
std::shared_ptr<const GatherMap<T>> spectral_resample_map(Dims3 in_dims, Dims3 out_dims, SpectrumLayout lin,
                                                          SpectrumLayout lout, NyquistMode mode, double scale,
                                                          bool half = false)
{
    using Key = std::tuple<Dims3, Dims3, int, int, int, double, bool>;
    static std::mutex mu;
    static std::map<Key, std::shared_ptr<const GatherMap<T>>> cache;
    const Key key{in_dims, out_dims, static_cast<int>(lin), static_cast<int>(lout), static_cast<int>(mode), scale, half};
    std::lock_guard<std::mutex> lock(mu);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
    std::array<std::vector<std::vector<detail::AxisTap>>, 3> taps;
    for (int a = 0; a < 3; ++a)
        taps[a] = detail::resample_axis(in_dims[a], out_dims[a], lin, lout, mode, half && a == 2);
    Dims3 in_store = in_dims, out_store = out_dims;
    if (half) {
        in_store[2] = half_extent(in_dims[2]);
        out_store[2] = half_extent(out_dims[2]);
    }
    auto map = detail::separable_map<T>(in_store, out_store, taps, scale);
    cache.emplace(key, map);
    return map;
}

/// Map multiplying each bin by a per-axis-separable real mask given as a
/// predicate on the signed frequencies. Layout natural unless stated.
template <std::floating_point T, class Pred>
std::shared_ptr<const GatherMap<T>> spectral_mask_map(Dims3 dims, Pred keep, bool half = false,
                                                      SpectrumLayout layout = SpectrumLayout::natural)
{
    auto map = std::make_shared<GatherMap<T>>();
    Dims3 store = dims;
    if (half) store[2] = half_extent(dims[2]);
    map->out_dims = Shape{store[0], store[1], store[2]};
    map->in_block = store[0] * store[1] * store[2];
    map->src.assign(map->in_block, GatherMap<T>::npos);
    map->weight.assign(map->in_block, T{0});
    for (std::size_t a = 0; a < store[0]; ++a)
        for (std::size_t b = 0; b < store[1]; ++b)
            for (std::size_t c = 0; c < store[2]; ++c) {
                const long fa = freq_of(a, dims[0], layout), fb = freq_of(b, dims[1], layout);
                const long fc = half ? static_cast<long>(c) : freq_of(c, dims[2], layout);
                const double w = keep(fa, fb, fc);
                if (w == 0.0) continue;
                const std::size_t o = (a * store[1] + b) * store[2] + c;
                map->src[o] = o;
                map->weight[o] = static_cast<T>(w);
            }
    return map;
}

// ---------------------------------------------------------------------------
// Spectrum3D

template <std::floating_point T>
struct Spectrum3D {
    Tensor<std::complex<T>> data; // [C, K1, K2, K3] (K3 = N3/2+1 when half)
    SpectrumLayout layout = SpectrumLayout::natural;
    Dims3 source_dims{};          // spatial extents that produced the spectrum
    bool half = false;

    std::size_t channels() const { return data.extent(0); }
    Dims3 bins() const { return {data.extent(1), data.extent(2), data.extent(3)}; }
};

template <std::floating_point T>
Spectrum3D<T> fft3d(const Tensor<std::complex<T>>& x)
{
    const auto dims = detail::spatial_dims(x.shape(), "fft3d");
    return {fft3(x), SpectrumLayout::natural, dims, false};
}

template <std::floating_point T>
Spectrum3D<T> fft3d(const Tensor<T>& x)
{
    return fft3d(to_complex(x));
}

template <std::floating_point T>
Tensor<std::complex<T>> ifft3d(const Spectrum3D<T>& s)
{
    if (s.layout != SpectrumLayout::natural) throw LayoutError("ifft3d needs a natural-layout spectrum");
    if (s.half) throw LayoutError("ifft3d needs a full spectrum; use irfft3d for half spectra");
    return ifft3(s.data);
}

template <std::floating_point T>
Spectrum3D<T> rfft3d(const Tensor<T>& x)
{
    const auto dims = detail::spatial_dims(x.shape(), "rfft3d");
    return {rfft3(x), SpectrumLayout::natural, dims, true};
}

/// Full spectrum reconstructed from a half spectrum via conjugate symmetry.
template <std::floating_point T>
Spectrum3D<T> expand_half(const Spectrum3D<T>& s)
{
    if (!s.half) return s;
    if (s.layout != SpectrumLayout::natural) throw LayoutError("expand_half needs a natural-layout spectrum");
    const auto [n1, n2, n3] = s.source_dims;
    const std::size_t c = s.channels(), h = half_extent(n3);
    Tensor<std::complex<T>> full(Shape{c, n1, n2, n3});
    for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t a = 0; a < n1; ++a)
            for (std::size_t b = 0; b < n2; ++b)
                for (std::size_t k = 0; k < n3; ++k) {
                    std::complex<T> v;
                    if (k < h) v = s.data[((ch * n1 + a) * n2 + b) * h + k];
                    else v = std::conj(s.data[((ch * n1 + (n1 - a) % n1) * n2 + (n2 - b) % n2) * h + (n3 - k)]);
                    full[((ch * n1 + a) * n2 + b) * n3 + k] = v;
                }
    return {full, SpectrumLayout::natural, s.source_dims, false};
}

/// Largest violation of X[k] = conj(X[-k]) over the bins a half spectrum stores
/// twice (the k3 = 0 plane and, for even N3, the k3 = N3/2 plane).
template <std::floating_point T>
T hermitian_violation(const Spectrum3D<T>& s)
{
    const auto [n1, n2, n3] = s.source_dims;
    const std::size_t h = s.half ? half_extent(n3) : n3;
    std::vector<std::size_t> planes{0};
    if (n3 % 2 == 0 && n3 > 1) planes.push_back(n3 / 2);
    T worst{0};
    for (std::size_t ch = 0; ch < s.channels(); ++ch)
        for (auto k : planes)
            for (std::size_t a = 0; a < n1; ++a)
                for (std::size_t b = 0; b < n2; ++b) {
                    const auto v = s.data[((ch * n1 + a) * n2 + b) * h + k];
                    const auto m = s.data[((ch * n1 + (n1 - a) % n1) * n2 + (n2 - b) % n2) * h + k];
                    worst = std::max(worst, std::abs(v - std::conj(m)));
                }
    return worst;
}

/// Strict inverse of a half spectrum: rejects spectra that are not the transform
/// of a real signal (relative tolerance on the doubly stored planes).
template <std::floating_point T>
Tensor<T> irfft3d(const Spectrum3D<T>& s, T rel_tol = T(1e-5))
{
    if (!s.half) throw LayoutError("irfft3d needs a half spectrum");
    if (s.layout != SpectrumLayout::natural) throw LayoutError("irfft3d needs a natural-layout spectrum");
    T scale{0};
    for (const auto& v : s.data.values()) scale = std::max(scale, std::abs(v));
    const T bad = hermitian_violation(s);
    if (bad > rel_tol * std::max(scale, T{1}))
        throw SymmetryError("irfft3d: self-conjugate bins violate Hermitian symmetry by " + std::to_string(bad));
    return irfft3(s.data, s.source_dims[2]);
}

namespace detail {

template <std::floating_point T>
Spectrum3D<T> shift_impl(const Spectrum3D<T>& s, bool forward)
{
    const auto bins = s.bins();
    auto map = std::make_shared<GatherMap<T>>();
    map->out_dims = Shape{bins[0], bins[1], bins[2]};
    map->in_block = bins[0] * bins[1] * bins[2];
    map->src.resize(map->in_block);
    map->weight.assign(map->in_block, T{1});
    auto src_of = [&](std::size_t j, std::size_t n, bool shift_axis) {
        if (!shift_axis) return j;
        return forward ? (j + n - n / 2) % n : (j + n / 2) % n;
    };
    for (std::size_t a = 0; a < bins[0]; ++a)
        for (std::size_t b = 0; b < bins[1]; ++b)
            for (std::size_t c = 0; c < bins[2]; ++c) {
                const std::size_t sa = src_of(a, bins[0], true), sb = src_of(b, bins[1], true);
                const std::size_t sc = src_of(c, bins[2], !s.half);
                map->src[(a * bins[1] + b) * bins[2] + c] = (sa * bins[1] + sb) * bins[2] + sc;
            }
    Spectrum3D<T> out = s;
    out.data = gather(s.data, std::shared_ptr<const GatherMap<T>>(map));
    out.layout = forward ? SpectrumLayout::shifted : SpectrumLayout::natural;
    return out;
}

} // namespace detail

/// Moves the zero-frequency bin to index floor(K/2) on every full axis.
template <std::floating_point T>
Spectrum3D<T> fftshift3(const Spectrum3D<T>& s)
{
    if (s.layout == SpectrumLayout::shifted) throw LayoutError("fftshift3: spectrum is already shifted");
    return detail::shift_impl(s, true);
}

template <std::floating_point T>
Spectrum3D<T> ifftshift3(const Spectrum3D<T>& s)
{
    if (s.layout == SpectrumLayout::natural) throw LayoutError("ifftshift3: spectrum is already in natural layout");
    return detail::shift_impl(s, false);
}

/// Literal triple-sum DFT of a real or complex volume (test oracle).
template <std::floating_point T>
Spectrum3D<T> naive_dft3(const Tensor<std::complex<T>>& x)
{
    const auto dims = detail::spatial_dims(x.shape(), "naive_dft3");
    const std::size_t block = dims[0] * dims[1] * dims[2];
    Tensor<std::complex<T>> out(x.shape());
    for (std::size_t ch = 0; ch < x.extent(0); ++ch) {
        auto r = fft::naive_dft3<T>(std::span<const std::complex<T>>(x.data() + ch * block, block), dims);
        std::copy(r.begin(), r.end(), out.data() + ch * block);
    }
    return {out, SpectrumLayout::natural, dims, false};
}

template <std::floating_point T>
Spectrum3D<T> naive_dft3(const Tensor<T>& x)
{
    NoGradGuard ng;
    return naive_dft3(to_complex(x));
}

} // namespace fseg
