#pragma once

// Discrete Fourier transforms on raw complex buffers.
//
// Forward transforms are un-normalized, X[k] = sum_n x[n] e^{-2 pi i k n / N};
// inverse transforms divide by N. Power-of-two lengths use an iterative radix-2
// kernel, every other length goes through Bluestein's chirp-z algorithm on a
// power-of-two convolution. Plans (twiddles, chirps) are built once per
// (precision, length) and are immutable afterwards.

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <vector>

namespace fseg::fft {

inline bool is_pow2(std::size_t n) { return n && !(n & (n - 1)); }

inline std::size_t next_pow2(std::size_t n)
{
    std::size_t m = 1;
    while (m < n) m <<= 1;
    return m;
}

template <std::floating_point T>
class Plan {
public:
    using C = std::complex<T>;

    explicit Plan(std::size_t n) : n_(n)
    {
        if (n <= 1) return;
        if (is_pow2(n)) {
            build_radix2(n, twiddle_, bitrev_);
        } else {
            m_ = next_pow2(2 * n - 1);
            build_radix2(m_, twiddle_, bitrev_);
            chirp_.resize(n);
            for (std::size_t k = 0; k < n; ++k) {
                // exp(-i pi k^2 / n) with k^2 reduced mod 2n for accuracy
                const auto k2 = static_cast<unsigned long long>(k) * k % (2ULL * n);
                const double ang = -std::numbers::pi * static_cast<double>(k2) / static_cast<double>(n);
                chirp_[k] = C(static_cast<T>(std::cos(ang)), static_cast<T>(std::sin(ang)));
            }
            filter_.assign(m_, C{});
            filter_[0] = std::conj(chirp_[0]);
            for (std::size_t k = 1; k < n; ++k) filter_[k] = filter_[m_ - k] = std::conj(chirp_[k]);
            radix2(filter_.data());
        }
    }

    std::size_t size() const { return n_; }

    /// In-place un-normalized forward DFT of n_ values; `scratch` is reused between calls.
    void forward(C* x, std::vector<C>& scratch) const
    {
        if (n_ <= 1) return;
        if (m_ == 0) {
            radix2(x);
            return;
        }
        scratch.assign(m_, C{});
        for (std::size_t k = 0; k < n_; ++k) scratch[k] = cmul(x[k], chirp_[k]);
        radix2(scratch.data());
        for (std::size_t k = 0; k < m_; ++k) scratch[k] = cmul(scratch[k], filter_[k]);
        // inverse radix-2 via conjugation
        for (auto& v : scratch) v = std::conj(v);
        radix2(scratch.data());
        const T inv_m = T{1} / static_cast<T>(m_);
        for (std::size_t k = 0; k < n_; ++k) x[k] = cmul(std::conj(scratch[k]) * inv_m, chirp_[k]);
    }

    /// In-place un-normalized backward DFT (positive exponent, no 1/N).
    void backward(C* x, std::vector<C>& scratch) const
    {
        for (std::size_t k = 0; k < n_; ++k) x[k] = std::conj(x[k]);
        forward(x, scratch);
        for (std::size_t k = 0; k < n_; ++k) x[k] = std::conj(x[k]);
    }

private:
    static C cmul(C a, C b)
    {
        return C(a.real() * b.real() - a.imag() * b.imag(), a.real() * b.imag() + a.imag() * b.real());
    }

    static void build_radix2(std::size_t m, std::vector<C>& tw, std::vector<std::size_t>& rev)
    {
        tw.resize(m / 2);
        for (std::size_t k = 0; k < m / 2; ++k) {
            const double ang = -2.0 * std::numbers::pi * static_cast<double>(k) / static_cast<double>(m);
            tw[k] = C(static_cast<T>(std::cos(ang)), static_cast<T>(std::sin(ang)));
        }
        rev.resize(m);
        std::size_t bits = 0;
        while ((std::size_t{1} << bits) < m) ++bits;
        for (std::size_t i = 0; i < m; ++i) {
            std::size_t r = 0;
            for (std::size_t b = 0; b < bits; ++b)
                if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (bits - 1 - b);
            rev[i] = r;
        }
    }

    void radix2(C* x) const
    {
        const std::size_t m = bitrev_.size();
        for (std::size_t i = 0; i < m; ++i)
            if (i < bitrev_[i]) std::swap(x[i], x[bitrev_[i]]);
        for (std::size_t len = 2; len <= m; len <<= 1) {
            const std::size_t half = len / 2, step = m / len;
            for (std::size_t start = 0; start < m; start += len) {
                for (std::size_t j = 0; j < half; ++j) {
                    const C w = twiddle_[j * step];
                    const C u = x[start + j];
                    const C v = cmul(x[start + j + half], w);
                    x[start + j] = u + v;
                    x[start + j + half] = u - v;
                }
            }
        }
    }

    std::size_t n_;
    std::size_t m_ = 0; // Bluestein convolution length, 0 for radix-2
    std::vector<C> twiddle_;
    std::vector<std::size_t> bitrev_;
    std::vector<C> chirp_;
    std::vector<C> filter_;
};

template <std::floating_point T>
std::shared_ptr<const Plan<T>> plan_for(std::size_t n)
{
    static std::mutex mu;
    static std::map<std::size_t, std::shared_ptr<const Plan<T>>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto& slot = cache[n];
    if (!slot) slot = std::make_shared<const Plan<T>>(n);
    return slot;
}

/// 1D transform; the inverse divides by N.
template <std::floating_point T>
std::vector<std::complex<T>> fft1d(std::vector<std::complex<T>> x, bool inverse = false)
{
    if (x.empty()) return x;
    auto plan = plan_for<T>(x.size());
    std::vector<std::complex<T>> scratch;
    if (inverse) {
        plan->backward(x.data(), scratch);
        const T s = T{1} / static_cast<T>(x.size());
        for (auto& v : x) v *= s;
    } else {
        plan->forward(x.data(), scratch);
    }
    return x;
}

/// Transforms every line along `axis` (0..2) of `batch` contiguous row-major
/// blocks of extents `dims`. Un-normalized in both directions.
template <std::floating_point T>
void transform_axis(std::complex<T>* data, std::size_t batch, std::array<std::size_t, 3> dims, int axis, bool inverse)
{
    using C = std::complex<T>;
    const std::size_t n = dims[axis];
    if (n <= 1) return;
    auto plan = plan_for<T>(n);
    std::vector<C> scratch, line(n);
    const std::size_t block = dims[0] * dims[1] * dims[2];
    const std::size_t stride = axis == 2 ? 1 : axis == 1 ? dims[2] : dims[1] * dims[2];
    const std::size_t outer = axis == 0 ? 1 : axis == 1 ? dims[0] : dims[0] * dims[1];
    const std::size_t inner = axis == 0 ? dims[1] * dims[2] : axis == 1 ? dims[2] : 1;
    for (std::size_t b = 0; b < batch; ++b) {
        C* base = data + b * block;
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t i = 0; i < inner; ++i) {
                C* p = base + o * n * stride + i;
                if (stride == 1) {
                    inverse ? plan->backward(p, scratch) : plan->forward(p, scratch);
                } else {
                    for (std::size_t k = 0; k < n; ++k) line[k] = p[k * stride];
                    inverse ? plan->backward(line.data(), scratch) : plan->forward(line.data(), scratch);
                    for (std::size_t k = 0; k < n; ++k) p[k * stride] = line[k];
                }
            }
        }
    }
}

/// Literal triple sum of the 3D DFT definition. O(N^2) per axis; test oracle only.
template <std::floating_point T>
std::vector<std::complex<T>> naive_dft3(std::span<const std::complex<T>> x, std::array<std::size_t, 3> dims,
                                        bool inverse = false)
{
    const auto [n1, n2, n3] = dims;
    std::vector<std::complex<T>> out(n1 * n2 * n3);
    const double sign = inverse ? 1.0 : -1.0;
    for (std::size_t k1 = 0; k1 < n1; ++k1)
        for (std::size_t k2 = 0; k2 < n2; ++k2)
            for (std::size_t k3 = 0; k3 < n3; ++k3) {
                std::complex<double> acc{};
                for (std::size_t a = 0; a < n1; ++a)
                    for (std::size_t b = 0; b < n2; ++b)
                        for (std::size_t c = 0; c < n3; ++c) {
                            const double phase = static_cast<double>((k1 * a) % n1) / static_cast<double>(n1) +
                                                 static_cast<double>((k2 * b) % n2) / static_cast<double>(n2) +
                                                 static_cast<double>((k3 * c) % n3) / static_cast<double>(n3);
                            const double ang = sign * 2.0 * std::numbers::pi * phase;
                            const auto v = x[(a * n2 + b) * n3 + c];
                            acc += std::complex<double>(v.real(), v.imag()) *
                                   std::complex<double>(std::cos(ang), std::sin(ang));
                        }
                if (inverse) acc /= static_cast<double>(n1 * n2 * n3);
                out[(k1 * n2 + k2) * n3 + k3] = std::complex<T>(static_cast<T>(acc.real()), static_cast<T>(acc.imag()));
            }
    return out;
}

} // namespace fseg::fft
