#pragma once

// Frequency-domain building blocks of the segmentation network: anti-aliasing
// padding, band crops/embeddings of shifted spectra, the learnable global filter
// of the Fourier encoder block and the parameter-free Fourier fusion used by the
// decoder.

#include <array>
#include <cmath>
#include <complex>
#include <optional>

#include "fseg/spectrum.hpp"

namespace fseg {

enum class PadMode { none, doubled };

struct PadSpec {
    PadMode mode = PadMode::none;
    Dims3 extents{}; // padded spatial extents

    static PadSpec make(PadMode mode, Dims3 input)
    {
        PadSpec s{mode, input};
        if (mode == PadMode::doubled)
            for (auto& e : s.extents) e *= 2;
        return s;
    }
};

/// Appends trailing zeros up to `spec.extents`; PadMode::none returns `x` itself.
template <std::floating_point T>
Tensor<T> pad_spatial(const Tensor<T>& x, const PadSpec& spec)
{
    const auto dims = detail::spatial_dims(x.shape(), "pad_spatial");
    if (spec.mode == PadMode::none && spec.extents == dims) return x;
    return pad_trailing(x, spec.extents);
}

enum class CropKeep { inner, outer };

struct FreqCropSpec {
    CropKeep keep = CropKeep::inner;
    Dims3 cutoff{}; // centered cube extents (M1, M2, M3)
};

/// keep=inner: the centered M-cube as a new, smaller spectrum. keep=outer: same
/// size with the centered M-cube zeroed. Inner and outer with equal cutoffs
/// partition the bins.
template <std::floating_point T>
Spectrum3D<T> crop_freq(const Spectrum3D<T>& s, const FreqCropSpec& spec)
{
    if (s.layout != SpectrumLayout::shifted) throw LayoutError("crop_freq needs a shifted spectrum");
    if (s.half) throw LayoutError("crop_freq needs a full spectrum");
    const auto bins = s.bins();
    for (int a = 0; a < 3; ++a)
        if (spec.cutoff[a] == 0 || spec.cutoff[a] > bins[a])
            throw GeometryError("crop_freq: cutoff " + to_string(Shape(spec.cutoff.begin(), spec.cutoff.end())) +
                                " invalid for spectrum bins " + to_string(Shape(bins.begin(), bins.end())));
    Spectrum3D<T> out = s;
    if (spec.keep == CropKeep::inner) {
        auto map = spectral_resample_map<T>(bins, spec.cutoff, SpectrumLayout::shifted, SpectrumLayout::shifted,
                                            NyquistMode::keep, 1.0);
        out.data = gather(s.data, map);
        out.source_dims = spec.cutoff;
    } else {
        const auto cut = spec.cutoff;
        auto in_cube = [cut](long f, std::size_t m) {
            const auto [lo, hi] = freq_range(m);
            return f >= lo && f <= hi;
        };
        auto map = spectral_mask_map<T>(
            bins,
            [&](long a, long b, long c) {
                return (in_cube(a, cut[0]) && in_cube(b, cut[1]) && in_cube(c, cut[2])) ? 0.0 : 1.0;
            },
            false, SpectrumLayout::shifted);
        out.data = gather(s.data, map);
    }
    return out;
}

/// Places a shifted M-spectrum into the centered cube of a zero K-grid, scaled by
/// prod(K/M) so the spatial amplitude survives the 1/prod(N) inverse.
template <std::floating_point T>
Spectrum3D<T> embed_freq(const Spectrum3D<T>& s, Dims3 target, NyquistMode mode = NyquistMode::keep)
{
    if (s.layout != SpectrumLayout::shifted) throw LayoutError("embed_freq needs a shifted spectrum");
    if (s.half) throw LayoutError("embed_freq needs a full spectrum");
    const auto bins = s.bins();
    double scale = 1.0;
    for (int a = 0; a < 3; ++a) {
        if (target[a] < bins[a])
            throw GeometryError("embed_freq: target " + to_string(Shape(target.begin(), target.end())) +
                                " smaller than source " + to_string(Shape(bins.begin(), bins.end())));
        scale *= static_cast<double>(target[a]) / static_cast<double>(bins[a]);
    }
    auto map = spectral_resample_map<T>(bins, target, SpectrumLayout::shifted, SpectrumLayout::shifted, mode, scale);
    Spectrum3D<T> out = s;
    out.data = gather(s.data, map);
    out.source_dims = target;
    return out;
}

/// Band-limited (trigonometric) upsampling of a real volume to `target` extents.
/// Output is exactly real: zero-filling happens on the half spectrum with the
/// Nyquist bins of even axes split between +-N/2.
template <std::floating_point T>
Tensor<T> spectral_upsample(const Tensor<T>& x, Dims3 target)
{
    const auto dims = detail::spatial_dims(x.shape(), "spectral_upsample");
    if (dims == target) return x;
    double scale = 1.0;
    for (int a = 0; a < 3; ++a) {
        if (target[a] < dims[a]) throw GeometryError("spectral_upsample: target smaller than input");
        scale *= static_cast<double>(target[a]) / static_cast<double>(dims[a]);
    }
    auto map = spectral_resample_map<T>(dims, target, SpectrumLayout::natural, SpectrumLayout::natural,
                                        NyquistMode::split, scale, true);
    return irfft3(gather(rfft3(x), map), target[2]);
}

// ---------------------------------------------------------------------------
// Circular vs. linear convolution

template <std::floating_point T>
struct ConvolutionDemo {
    Tensor<T> linear;         // direct linear convolution, extents N + L - 1
    Tensor<T> circular;       // unpadded spectral product, extents N
    Tensor<T> padded;         // padded spectral product cropped to the input extents N
    Tensor<T> padded_full;    // padded spectral product cropped to the linear extents
};

/// Convolution (kernel origin at index 0) three ways. x: [1, N1, N2, N3],
/// kernel: [1, K1, K2, K3] with K <= N. L is the kernel's support (last nonzero
/// index + 1) per axis.
template <std::floating_point T>
ConvolutionDemo<T> circular_vs_linear_demo(const Tensor<T>& x, const Tensor<T>& kernel)
{
    NoGradGuard ng;
    const auto n = detail::spatial_dims(x.shape(), "circular_vs_linear_demo");
    const auto k = detail::spatial_dims(kernel.shape(), "circular_vs_linear_demo");
    if (x.extent(0) != 1 || kernel.extent(0) != 1) throw ShapeError("circular_vs_linear_demo expects one channel");
    Dims3 support{1, 1, 1};
    for (std::size_t a = 0; a < k[0]; ++a)
        for (std::size_t b = 0; b < k[1]; ++b)
            for (std::size_t c = 0; c < k[2]; ++c)
                if (kernel[(a * k[1] + b) * k[2] + c] != T{0}) {
                    support[0] = std::max(support[0], a + 1);
                    support[1] = std::max(support[1], b + 1);
                    support[2] = std::max(support[2], c + 1);
                }
    for (int a = 0; a < 3; ++a)
        if (k[a] > n[a]) throw GeometryError("circular_vs_linear_demo: kernel larger than volume");

    const Dims3 lin{n[0] + support[0] - 1, n[1] + support[1] - 1, n[2] + support[2] - 1};
    Tensor<T> linear(Shape{1, lin[0], lin[1], lin[2]});
    for (std::size_t a = 0; a < n[0]; ++a)
        for (std::size_t b = 0; b < n[1]; ++b)
            for (std::size_t c = 0; c < n[2]; ++c) {
                const T xv = x[(a * n[1] + b) * n[2] + c];
                for (std::size_t i = 0; i < support[0]; ++i)
                    for (std::size_t j = 0; j < support[1]; ++j)
                        for (std::size_t l = 0; l < support[2]; ++l)
                            linear[((a + i) * lin[1] + b + j) * lin[2] + c + l] += xv * kernel[(i * k[1] + j) * k[2] + l];
            }

    auto spectral_product = [&](Dims3 size) {
        auto xs = rfft3(pad_trailing(x, size));
        auto ks = rfft3(pad_trailing(kernel, size));
        return irfft3(complex_mul(xs, ks), size[2]);
    };
    ConvolutionDemo<T> out;
    out.linear = linear;
    out.circular = spectral_product(n);
    const auto padded = spectral_product(PadSpec::make(PadMode::doubled, n).extents);
    out.padded = crop_leading(padded, n);
    out.padded_full = crop_leading(padded, lin);
    return out;
}

// ---------------------------------------------------------------------------
// Fourier encoder block

template <std::floating_point T>
struct FourierBlockParams {
    Tensor<std::complex<T>> w_freq;    // [C, P1, P2, P3/2+1] on the padded spectrum
    Tensor<std::complex<T>> bias_freq; // [C, N1, N2, N3/2+1] on the cropped spectrum
    Tensor<T> ln1_gamma, ln1_beta;
    Tensor<T> ln2_gamma, ln2_beta;
    Tensor<T> fc1_weight, fc1_bias;    // [C, C*r], [C*r]
    Tensor<T> fc2_weight, fc2_bias;    // [C*r, C], [C]
};

struct GlobalFilterOptions {
    bool norm_before = true;
    bool norm_after = true;
    bool mlp = true;
    bool residual = true;
    double eps = 1e-6;
};

/// One Fourier encoder block: pad -> LN -> rfft -> (*) W_freq -> crop to the
/// original support -> + Bias_freq -> inverse -> LN -> MLP -> + input.
///
/// The crop keeps the spectrum of the first N samples of the padded-domain
/// product, i.e. the linear (not circular) filtering of the input; it is applied
/// together with the inverse transform as a spatial crop.
template <std::floating_point T>
Tensor<T> global_filter(const Tensor<T>& x, const FourierBlockParams<T>& p, PadMode pad,
                        const GlobalFilterOptions& opt = {})
{
    const auto n = detail::spatial_dims(x.shape(), "global_filter");
    const std::size_t c = x.extent(0);
    const auto spec = PadSpec::make(pad, n);
    const Shape w_expect{c, spec.extents[0], spec.extents[1], half_extent(spec.extents[2])};
    const Shape b_expect{c, n[0], n[1], half_extent(n[2])};
    if (p.w_freq.shape() != w_expect)
        throw ShapeError("global_filter: frequency weighting stage expects W_freq " + to_string(w_expect) + ", got " +
                         to_string(p.w_freq.shape()));
    if (p.bias_freq.shape() != b_expect)
        throw ShapeError("global_filter: bias stage expects Bias_freq " + to_string(b_expect) + ", got " +
                         to_string(p.bias_freq.shape()));
    const T eps = static_cast<T>(opt.eps);

    Tensor<T> h = pad_spatial(x, spec);
    if (opt.norm_before) h = layer_norm(h, p.ln1_gamma, p.ln1_beta, eps);
    auto filtered = irfft3(complex_mul(rfft3(h), p.w_freq), spec.extents[2]);
    if (spec.extents != n) filtered = crop_leading(filtered, n);
    Tensor<T> z = filtered + irfft3(p.bias_freq, n[2]);
    if (opt.norm_after) z = layer_norm(z, p.ln2_gamma, p.ln2_beta, eps);
    if (opt.mlp) z = linear(gelu(linear(z, p.fc1_weight, p.fc1_bias)), p.fc2_weight, p.fc2_bias);
    if (opt.residual) z = z + x;
    return z;
}

// ---------------------------------------------------------------------------
// Fourier fusion

enum class FusionOrientation {
    decoder_low_band, // encoder keeps its high band, decoder supplies the low band
    encoder_low_band, // encoder keeps its low band, decoder supplies its own high band
};

enum class SpectralPath { half, full_complex };

struct FuseOptions {
    std::optional<Dims3> cutoff; // centered cube, defaults to the decoder extents
    FusionOrientation orientation = FusionOrientation::decoder_low_band;
    SpectralPath path = SpectralPath::full_complex;
};

namespace detail {

// Symmetric low-pass weight of one axis for cutoff m: 1 inside, 1/2 on the
// +-m/2 planes of an even cutoff, 0 outside.
inline double lowpass_weight(long f, std::size_t m)
{
    const long half = static_cast<long>(m / 2);
    const long af = f < 0 ? -f : f;
    if (m % 2 == 0) return af < half ? 1.0 : af == half ? 0.5 : 0.0;
    return af <= half ? 1.0 : 0.0;
}

inline bool in_closed_cube(long f, std::size_t m)
{
    const long af = f < 0 ? -f : f;
    return af <= static_cast<long>(m / 2);
}

} // namespace detail

/// Parameter-free fusion of an encoder feature [C, 2M...] with a decoder feature
/// [C, M...]: the sum of disjoint spectral bands, inverse-transformed.
///
/// decoder_low_band (default): decoder spectrum zero-padded into the centre
/// (low band, semantic content) plus the encoder's spectrum outside the closed
/// cutoff cube |f| <= M/2 (high band, edges). encoder_low_band: encoder low band
/// plus the decoder's own band above M/4, both embedded in the 2M grid.
template <std::floating_point T>
Tensor<T> fourier_fuse(const Tensor<T>& enc, const Tensor<T>& dec, const FuseOptions& opt = {})
{
    const auto ed = detail::spatial_dims(enc.shape(), "fourier_fuse");
    const auto dd = detail::spatial_dims(dec.shape(), "fourier_fuse");
    if (enc.extent(0) != dec.extent(0))
        throw ShapeError("fourier_fuse: channel mismatch, encoder " + to_string(enc.shape()) + " vs decoder " +
                         to_string(dec.shape()));
    for (int a = 0; a < 3; ++a)
        if (ed[a] != 2 * dd[a])
            throw GeometryError("fourier_fuse: encoder extents " + to_string(enc.shape()) +
                                " must be twice the decoder extents " + to_string(dec.shape()));
    const Dims3 cut = opt.cutoff.value_or(dd);
    for (int a = 0; a < 3; ++a)
        if (cut[a] == 0 || cut[a] > ed[a]) throw GeometryError("fourier_fuse: cutoff exceeds the encoder grid");

    double up = 1.0;
    for (int a = 0; a < 3; ++a) up *= static_cast<double>(ed[a]) / static_cast<double>(dd[a]);
    const bool half = opt.path == SpectralPath::half;

    std::shared_ptr<const GatherMap<T>> enc_mask, dec_mask;
    if (opt.orientation == FusionOrientation::decoder_low_band) {
        enc_mask = spectral_mask_map<T>(ed, [cut](long a, long b, long c) {
            return (detail::in_closed_cube(a, cut[0]) && detail::in_closed_cube(b, cut[1]) &&
                    detail::in_closed_cube(c, cut[2])) ? 0.0 : 1.0;
        }, half);
    } else {
        enc_mask = spectral_mask_map<T>(ed, [cut](long a, long b, long c) {
            return detail::lowpass_weight(a, cut[0]) * detail::lowpass_weight(b, cut[1]) *
                   detail::lowpass_weight(c, cut[2]);
        }, half);
        const Dims3 inner{std::max<std::size_t>(1, dd[0] / 2), std::max<std::size_t>(1, dd[1] / 2),
                          std::max<std::size_t>(1, dd[2] / 2)};
        dec_mask = spectral_mask_map<T>(dd, [inner](long a, long b, long c) {
            return (detail::in_closed_cube(a, inner[0]) && detail::in_closed_cube(b, inner[1]) &&
                    detail::in_closed_cube(c, inner[2])) ? 0.0 : 1.0;
        }, half);
    }
    auto embed = spectral_resample_map<T>(dd, ed, SpectrumLayout::natural, SpectrumLayout::natural,
                                          NyquistMode::split, up, half);

    if (half) {
        auto dspec = rfft3(dec);
        if (dec_mask) dspec = gather(dspec, dec_mask);
        auto fused = gather(rfft3(enc), enc_mask) + gather(dspec, embed);
        return irfft3(fused, ed[2]);
    }
    auto dspec = fft3(to_complex(dec));
    if (dec_mask) dspec = gather(dspec, dec_mask);
    auto fused = gather(fft3(to_complex(enc)), enc_mask) + gather(dspec, embed);
    auto spatial = ifft3(fused);
    real_t<T> worst{0}, scale{1};
    for (const auto& v : spatial.values()) {
        worst = std::max(worst, std::abs(v.imag()));
        scale = std::max(scale, std::abs(v.real()));
    }
    if (worst > T(1e-5) * scale)
        log::warn("fourier_fuse: discarding imaginary residue " + std::to_string(worst));
    return real_part(spatial);
}

} // namespace fseg
