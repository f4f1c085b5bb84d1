#pragma once

// Analytic parameter, FLOP and activation accounting, computed from the
// configuration alone so it also works at input sizes too large to build.
//
// FLOP conventions: a convolution or linear layer costs 2 ops per
// multiply-accumulate; a complex 3D FFT over V points costs 5 V log2 V and a
// real-input one half of that; a complex bin-wise product costs 6 ops.
// Normalization, activations, pooling, additions and spectral masking are
// not counted.

#include <cmath>
#include <string>
#include <vector>

#include "fseg/network.hpp"

namespace fseg {

struct ModuleCost {
    std::string name;
    std::uint64_t params = 0;
    double flops = 0;
};

struct ModelSummary {
    Dims3 input{};
    std::vector<ModuleCost> modules;
    std::uint64_t total_params = 0;
    double total_flops = 0;
    double peak_activation_bytes = 0; // float32 estimate of the activations a backward pass retains
};

/// Published cost figures (96^3 input), reported beside computed values.
struct ReferenceCost {
    const char* preset;
    double gflops;
    double mparams;
};

inline constexpr std::array<ReferenceCost, 3> kReferenceCosts{
    {{"fseg-s", 40.58, 27.14}, {"fseg-m", 148.17, 41.60}, {"fseg-l", 574.65, 80.24}}};

namespace flops {

inline double vox(Dims3 d) { return static_cast<double>(d[0]) * static_cast<double>(d[1]) * static_cast<double>(d[2]); }
inline std::uint64_t half_bins(Dims3 d) { return std::uint64_t(d[0]) * d[1] * (d[2] / 2 + 1); }

inline double complex_fft(Dims3 d)
{
    const double v = vox(d);
    return v > 1 ? 5.0 * v * std::log2(v) : 0.0;
}
inline double real_fft(Dims3 d) { return 0.5 * complex_fft(d); }
inline double conv(std::size_t k, std::size_t cin_per_group, std::size_t cout, Dims3 out)
{
    return 2.0 * double(k * k * k) * double(cin_per_group) * double(cout) * vox(out);
}
inline double linear(std::size_t cin, std::size_t cout, Dims3 d) { return 2.0 * double(cin) * double(cout) * vox(d); }

} // namespace flops

inline ModelSummary summarize_model(const FsegConfig& cfg, Dims3 input)
{
    cfg.validate();
    const auto dims = stage_extents(cfg, input);
    const auto& fd = cfg.feature_dims;
    ModelSummary s;
    s.input = input;
    double act = 0; // retained activation scalars
    auto add = [&](ModuleCost m) {
        s.total_params += m.params;
        s.total_flops += m.flops;
        s.modules.push_back(std::move(m));
    };
    auto lin_params = [](std::size_t cin, std::size_t cout) { return std::uint64_t(cin) * cout + cout; };

    {
        const std::size_t k = cfg.stem_kernel;
        ModuleCost m{"stem"};
        m.params = std::uint64_t(cfg.in_channels) * k * k * k * fd[0] + fd[0] + 2 * fd[0];
        m.flops = flops::conv(k, cfg.in_channels, fd[0], dims[0]);
        act += 2.0 * fd[0] * flops::vox(dims[0]);
        add(m);
    }

    for (std::size_t st = 0; st < 4; ++st) {
        const std::size_t c = fd[st];
        const Dims3 n = dims[st];
        const Dims3 p = PadSpec::make(cfg.pad_mode, n).extents;
        const double v = flops::vox(n);
        ModuleCost m{"stage" + std::to_string(st)};
        if (st > 0) {
            m.params += lin_params(fd[st - 1], c);
            m.flops += flops::linear(fd[st - 1], c, n);
            act += (fd[st - 1] + c) * v;
        }
        for (std::size_t j = 0; j < cfg.blocks_per_stage[st]; ++j) {
            const std::size_t hidden = c * cfg.mlp_ratio;
            m.params += 4 * c + lin_params(c, hidden) + lin_params(hidden, c);
            m.flops += flops::linear(c, hidden, n) + flops::linear(hidden, c, n);
            if (cfg.filter_kind == FilterKind::fourier) {
                m.params += 2 * c * flops::half_bins(p) + 2 * c * flops::half_bins(n);
                m.flops += c * (2 * flops::real_fft(p) + 6.0 * double(flops::half_bins(p)) + flops::real_fft(n));
                act += c * (2 * flops::vox(p) + 2.0 * double(flops::half_bins(p)) * 2);
            } else {
                m.params += c * 343 + c;
                m.flops += flops::conv(7, 1, c, n);
                act += 2.0 * c * v;
            }
            act += (3.0 * c + 2.0 * hidden) * v;
        }
        add(m);
    }

    for (std::size_t l = 3; l >= 1; --l) {
        const std::size_t c = fd[l - 1];
        const Dims3 n = dims[l - 1];
        const double v = flops::vox(n);
        ModuleCost m{"decoder.level" + std::to_string(l)};
        m.params += lin_params(fd[l], c) + 2 * c + 2 * (std::uint64_t(c) * c * 27 + c);
        m.flops += flops::linear(fd[l], c, dims[l]) + 2 * flops::conv(3, c, c, n);
        switch (cfg.decoder_kind) {
        case DecoderKind::fusion: m.flops += c * (flops::real_fft(dims[l]) + 2 * flops::real_fft(n)); break;
        case DecoderKind::skip:
            m.params += lin_params(2 * c, c);
            m.flops += c * (flops::real_fft(dims[l]) + flops::real_fft(n)) + flops::linear(2 * c, c, n);
            act += 3.0 * c * v;
            break;
        case DecoderKind::none: m.flops += c * (flops::real_fft(dims[l]) + flops::real_fft(n)); break;
        }
        act += c * flops::vox(dims[l]) + 6.0 * c * v;
        add(m);
    }

    {
        ModuleCost m{"head"};
        m.params = lin_params(fd[0], cfg.num_classes);
        m.flops = fd[0] * (flops::real_fft(dims[0]) + flops::real_fft(input)) +
                  flops::linear(fd[0], cfg.num_classes, input);
        act += (fd[0] + cfg.num_classes) * flops::vox(input);
        add(m);
    }
    s.peak_activation_bytes = 4.0 * act;
    return s;
}

} // namespace fseg
