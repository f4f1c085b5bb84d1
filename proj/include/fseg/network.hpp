#pragma once

// The hierarchical segmentation network: strided large-kernel stem, four stages
// of global-filter (or depthwise 7^3) blocks separated by 2x average pooling, a
// three-level decoder joined to the encoder by parameter-free Fourier fusion
// (or by the concatenation + pointwise-conv skip baseline), and a 2x spectral
// upsampling head producing per-voxel class logits.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "fseg/parameter.hpp"
#include "fseg/spectral_ops.hpp"

namespace fseg {

enum class FilterKind { fourier, dwconv7 };
enum class DecoderKind {
    fusion,
    skip,
    none, // encoder features never reach the decoder
};

inline std::string to_string(FilterKind k) { return k == FilterKind::fourier ? "fourier" : "dwconv7"; }
inline std::string to_string(DecoderKind k)
{
    return k == DecoderKind::fusion ? "fusion" : k == DecoderKind::skip ? "skip" : "none";
}
inline std::string to_string(PadMode m) { return m == PadMode::none ? "none" : "double"; }
inline std::string to_string(FusionOrientation o)
{
    return o == FusionOrientation::encoder_low_band ? "encoder_low_band" : "decoder_low_band";
}

struct FsegConfig {
    std::array<std::size_t, 4> feature_dims{12, 24, 48, 96};
    std::array<std::size_t, 4> blocks_per_stage{2, 2, 4, 2};
    std::size_t stem_kernel = 7;
    std::size_t stem_stride = 2;
    std::size_t mlp_ratio = 4;
    FilterKind filter_kind = FilterKind::fourier;
    DecoderKind decoder_kind = DecoderKind::fusion;
    PadMode pad_mode = PadMode::doubled;
    FusionOrientation fusion_orientation = FusionOrientation::decoder_low_band;
    std::size_t num_classes = 2;
    std::size_t in_channels = 1;

    void validate() const
    {
        for (std::size_t i = 0; i < 4; ++i) {
            if (feature_dims[i] == 0) throw ConfigError("feature_dims must be positive");
            if (i && feature_dims[i] <= feature_dims[i - 1])
                throw ConfigError("feature_dims must be strictly increasing");
            if (blocks_per_stage[i] < 1) throw ConfigError("blocks_per_stage must all be >= 1");
        }
        if (stem_kernel % 2 == 0) throw ConfigError("stem_kernel must be odd");
        if (stem_stride < 1) throw ConfigError("stem_stride must be >= 1");
        if (mlp_ratio < 1) throw ConfigError("mlp_ratio must be >= 1");
        if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
        if (in_channels < 1) throw ConfigError("in_channels must be >= 1");
    }

    /// fseg-s, fseg-m, fseg-l and the desk-scale fseg-s-reduced.
    static FsegConfig preset(std::string_view name)
    {
        FsegConfig c;
        if (name == "fseg-s") c.feature_dims = {12, 24, 48, 96};
        else if (name == "fseg-m") c.feature_dims = {24, 48, 96, 128};
        else if (name == "fseg-l") c.feature_dims = {48, 96, 128, 256};
        else if (name == "fseg-s-reduced") {
            c.feature_dims = {8, 16, 32, 64};
            c.blocks_per_stage = {1, 1, 2, 1};
        } else {
            throw ConfigError("unknown preset '" + std::string(name) +
                              "' (expected fseg-s, fseg-m, fseg-l or fseg-s-reduced)");
        }
        return c;
    }
};

/// Spatial extents of stage i's features for a given input, after checking the
/// divisibility the stem stride and the three poolings need.
inline std::array<Dims3, 4> stage_extents(const FsegConfig& cfg, Dims3 input)
{
    const std::size_t factor = cfg.stem_stride * 8;
    std::string bad;
    for (int a = 0; a < 3; ++a)
        if (input[a] == 0 || input[a] % factor != 0)
            bad += " axis " + std::to_string(a) + " extent " + std::to_string(input[a]) + " is not divisible by " +
                   "stem_stride*2^3 = " + std::to_string(factor) + ";";
    if (!bad.empty()) throw GeometryError("input geometry rejected:" + bad);
    std::array<Dims3, 4> out{};
    for (int a = 0; a < 3; ++a) {
        std::size_t e = input[a] / cfg.stem_stride;
        for (int s = 0; s < 4; ++s) {
            out[s][a] = e;
            e /= 2;
        }
    }
    return out;
}

template <std::floating_point T>
class FsegNet {
public:
    using C = std::complex<T>;

    FsegNet(FsegConfig cfg, Dims3 input, std::uint64_t seed = 0) : cfg_(cfg), input_(input), params_(seed)
    {
        cfg_.validate();
        dims_ = stage_extents(cfg_, input_);
        build();
    }
    FsegNet(const FsegNet&) = delete;
    FsegNet& operator=(const FsegNet&) = delete;
    FsegNet(FsegNet&&) = default;
    FsegNet& operator=(FsegNet&&) = default;

    const FsegConfig& config() const { return cfg_; }
    Dims3 input_dims() const { return input_; }
    const std::array<Dims3, 4>& stage_dims() const { return dims_; }
    ParameterRegistry<T>& parameters() { return params_; }
    const ParameterRegistry<T>& parameters() const { return params_; }

    /// x: [in_channels, D, H, W] at the build-time extents -> [num_classes, D, H, W].
    Tensor<T> forward(const Tensor<T>& x) const
    {
        if (x.rank() != 4 || x.extent(0) != cfg_.in_channels)
            throw ShapeError("forward expects [" + std::to_string(cfg_.in_channels) + ",D,H,W], got " +
                             to_string(x.shape()));
        const Dims3 d{x.extent(1), x.extent(2), x.extent(3)};
        if (d != input_) {
            stage_extents(cfg_, d);
            throw GeometryError("forward: input " + to_string(x.shape()) + " differs from the build-time extents " +
                                to_string(Shape(input_.begin(), input_.end())) +
                                " the frequency-domain weights were sized for");
        }
        const T eps = static_cast<T>(1e-6);

        auto h = conv3d(x, stem_.conv_w, stem_.conv_b, cfg_.stem_stride, cfg_.stem_kernel / 2, 1);
        h = layer_norm(h, stem_.norm_g, stem_.norm_b, eps);

        std::array<Tensor<T>, 4> skips;
        for (std::size_t s = 0; s < 4; ++s) {
            if (s > 0) h = linear(avg_pool3d(h), stages_[s].proj_w, stages_[s].proj_b);
            for (const auto& b : stages_[s].blocks) h = encoder_block(h, b);
            skips[s] = h;
        }

        Tensor<T> d3 = skips[3];
        for (std::size_t l = 3; l >= 1; --l) {
            const auto& lv = levels_[l - 1];
            d3 = linear(d3, lv.proj_w, lv.proj_b);
            const auto& enc = skips[l - 1];
            switch (cfg_.decoder_kind) {
            case DecoderKind::fusion:
                d3 = fourier_fuse(enc, d3, FuseOptions{std::nullopt, cfg_.fusion_orientation, SpectralPath::half});
                break;
            case DecoderKind::skip:
                d3 = linear(concat_channels(enc, spectral_upsample(d3, dims_[l - 1])), lv.skip_w, lv.skip_b);
                break;
            case DecoderKind::none: d3 = spectral_upsample(d3, dims_[l - 1]); break;
            }
            auto r = layer_norm(d3, lv.norm_g, lv.norm_b, eps);
            r = conv3d(gelu(conv3d(r, lv.conv1_w, lv.conv1_b, 1, 1, 1)), lv.conv2_w, lv.conv2_b, 1, 1, 1);
            d3 = d3 + r;
        }
        return linear(spectral_upsample(d3, input_), head_w_, head_b_);
    }

    /// Independent forwards over a batch of samples.
    std::vector<Tensor<T>> forward(const std::vector<Tensor<T>>& batch) const
    {
        std::vector<Tensor<T>> out;
        out.reserve(batch.size());
        for (const auto& x : batch) out.push_back(forward(x));
        return out;
    }

    /// Real-scalar parameter count of the decoder junction at `level` (1..3): the
    /// parameters that join encoder and decoder features, excluding the channel
    /// projection and the refinement block.
    std::size_t junction_param_count(std::size_t level) const
    {
        const std::string base = "decoder.level" + std::to_string(level);
        return params_.count(base + ".fuse.") + params_.count(base + ".skip.");
    }

private:
    struct Block {
        FourierBlockParams<T> p; // LN/MLP fields are shared by both filter kinds
        Tensor<T> dw_w, dw_b;
    };
    struct Stage {
        Tensor<T> proj_w, proj_b;
        std::vector<Block> blocks;
    };
    struct Level {
        Tensor<T> proj_w, proj_b, skip_w, skip_b;
        Tensor<T> norm_g, norm_b, conv1_w, conv1_b, conv2_w, conv2_b;
    };
    struct Stem {
        Tensor<T> conv_w, conv_b, norm_g, norm_b;
    };

    Tensor<T> encoder_block(const Tensor<T>& x, const Block& b) const
    {
        if (cfg_.filter_kind == FilterKind::fourier) return global_filter(x, b.p, cfg_.pad_mode);
        const T eps = static_cast<T>(1e-6);
        auto h = layer_norm(x, b.p.ln1_gamma, b.p.ln1_beta, eps);
        h = conv3d(h, b.dw_w, b.dw_b, 1, 3, x.extent(0));
        h = layer_norm(h, b.p.ln2_gamma, b.p.ln2_beta, eps);
        h = linear(gelu(linear(h, b.p.fc1_weight, b.p.fc1_bias)), b.p.fc2_weight, b.p.fc2_bias);
        return h + x;
    }

    void add_norm(const std::string& name, std::size_t c, Tensor<T>& g, Tensor<T>& b)
    {
        g = params_.add_real(name + ".gamma", {c}, InitRule::ones);
        b = params_.add_real(name + ".beta", {c}, InitRule::zeros);
    }
    void add_linear(const std::string& name, std::size_t cin, std::size_t cout, Tensor<T>& w, Tensor<T>& b)
    {
        w = params_.add_real(name + ".weight", {cin, cout}, InitRule::fan_in_uniform, cin);
        b = params_.add_real(name + ".bias", {cout}, InitRule::fan_in_uniform, cin);
    }
    void add_conv(const std::string& name, std::size_t cin_g, std::size_t cout, std::size_t k, Tensor<T>& w,
                  Tensor<T>& b)
    {
        const std::size_t fan = cin_g * k * k * k;
        w = params_.add_real(name + ".weight", {cout, cin_g, k, k, k}, InitRule::fan_in_uniform, fan);
        b = params_.add_real(name + ".bias", {cout}, InitRule::fan_in_uniform, fan);
    }

    void build()
    {
        const auto& fd = cfg_.feature_dims;
        add_conv("stem.conv", cfg_.in_channels, fd[0], cfg_.stem_kernel, stem_.conv_w, stem_.conv_b);
        add_norm("stem.norm", fd[0], stem_.norm_g, stem_.norm_b);

        for (std::size_t s = 0; s < 4; ++s) {
            const std::string sname = "stage" + std::to_string(s);
            auto& st = stages_[s];
            if (s > 0) add_linear(sname + ".proj", fd[s - 1], fd[s], st.proj_w, st.proj_b);
            const std::size_t c = fd[s];
            const Dims3 n = dims_[s];
            const Dims3 p = PadSpec::make(cfg_.pad_mode, n).extents;
            for (std::size_t j = 0; j < cfg_.blocks_per_stage[s]; ++j) {
                const std::string bname = sname + ".block" + std::to_string(j);
                Block b;
                if (cfg_.filter_kind == FilterKind::fourier) {
                    b.p.w_freq = params_.add_complex(bname + ".w_freq", {c, p[0], p[1], half_extent(p[2])},
                                                     InitRule::freq_near_identity);
                    b.p.bias_freq = params_.add_complex(bname + ".bias_freq", {c, n[0], n[1], half_extent(n[2])},
                                                        InitRule::zeros);
                } else {
                    add_conv(bname + ".dwconv", 1, c, 7, b.dw_w, b.dw_b);
                }
                add_norm(bname + ".norm1", c, b.p.ln1_gamma, b.p.ln1_beta);
                add_norm(bname + ".norm2", c, b.p.ln2_gamma, b.p.ln2_beta);
                add_linear(bname + ".mlp.fc1", c, c * cfg_.mlp_ratio, b.p.fc1_weight, b.p.fc1_bias);
                add_linear(bname + ".mlp.fc2", c * cfg_.mlp_ratio, c, b.p.fc2_weight, b.p.fc2_bias);
                st.blocks.push_back(std::move(b));
            }
        }

        for (std::size_t l = 3; l >= 1; --l) {
            const std::string lname = "decoder.level" + std::to_string(l);
            auto& lv = levels_[l - 1];
            const std::size_t c = fd[l - 1];
            add_linear(lname + ".proj", fd[l], c, lv.proj_w, lv.proj_b);
            if (cfg_.decoder_kind == DecoderKind::skip) add_linear(lname + ".skip", 2 * c, c, lv.skip_w, lv.skip_b);
            add_norm(lname + ".refine.norm", c, lv.norm_g, lv.norm_b);
            add_conv(lname + ".refine.conv1", c, c, 3, lv.conv1_w, lv.conv1_b);
            add_conv(lname + ".refine.conv2", c, c, 3, lv.conv2_w, lv.conv2_b);
        }
        add_linear("head", fd[0], cfg_.num_classes, head_w_, head_b_);
    }

    FsegConfig cfg_;
    Dims3 input_;
    std::array<Dims3, 4> dims_{};
    ParameterRegistry<T> params_;
    Stem stem_;
    std::array<Stage, 4> stages_;
    std::array<Level, 3> levels_;
    Tensor<T> head_w_, head_b_;
};

} // namespace fseg
