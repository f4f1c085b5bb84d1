#include <gtest/gtest.h>

#include "fseg/spectral_ops.hpp"
#include "support.hpp"

using namespace fseg;
using fseg::testing::grad_check;
using fseg::testing::random_complex;
using fseg::testing::random_tensor;

namespace {

using C = std::complex<double>;

Tensor<double> conv_circular_oracle(const Tensor<double>& x, const Tensor<double>& k)
{
    const std::size_t n1 = x.extent(1), n2 = x.extent(2), n3 = x.extent(3);
    const std::size_t k1 = k.extent(1), k2 = k.extent(2), k3 = k.extent(3);
    Tensor<double> y(x.shape());
    for (std::size_t a = 0; a < n1; ++a)
        for (std::size_t b = 0; b < n2; ++b)
            for (std::size_t c = 0; c < n3; ++c)
                for (std::size_t i = 0; i < k1; ++i)
                    for (std::size_t j = 0; j < k2; ++j)
                        for (std::size_t l = 0; l < k3; ++l)
                            y[(((a + i) % n1) * n2 + (b + j) % n2) * n3 + (c + l) % n3] +=
                                x[(a * n2 + b) * n3 + c] * k[(i * k2 + j) * k3 + l];
    return y;
}

Tensor<double> conv_linear_oracle(const Tensor<double>& x, const Tensor<double>& k)
{
    const std::size_t n1 = x.extent(1), n2 = x.extent(2), n3 = x.extent(3);
    const std::size_t k1 = k.extent(1), k2 = k.extent(2), k3 = k.extent(3);
    Tensor<double> y(x.shape());
    for (std::size_t a = 0; a < n1; ++a)
        for (std::size_t b = 0; b < n2; ++b)
            for (std::size_t c = 0; c < n3; ++c) {
                double acc = 0;
                for (std::size_t i = 0; i < k1 && i <= a; ++i)
                    for (std::size_t j = 0; j < k2 && j <= b; ++j)
                        for (std::size_t l = 0; l < k3 && l <= c; ++l)
                            acc += x[((a - i) * n2 + b - j) * n3 + c - l] * k[(i * k2 + j) * k3 + l];
                y[(a * n2 + b) * n3 + c] = acc;
            }
    return y;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b)
{
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

FourierBlockParams<double> random_block(std::size_t c, Dims3 n, PadMode pad, unsigned seed)
{
    std::mt19937_64 gen(seed);
    const auto p = PadSpec::make(pad, n).extents;
    FourierBlockParams<double> b;
    b.w_freq = random_complex<double>({c, p[0], p[1], p[2] / 2 + 1}, -1, 1, gen);
    b.bias_freq = random_complex<double>({c, n[0], n[1], n[2] / 2 + 1}, -1, 1, gen);
    b.ln1_gamma = random_tensor<double>({c}, 0.5, 1.5, gen);
    b.ln1_beta = random_tensor<double>({c}, -0.5, 0.5, gen);
    b.ln2_gamma = random_tensor<double>({c}, 0.5, 1.5, gen);
    b.ln2_beta = random_tensor<double>({c}, -0.5, 0.5, gen);
    b.fc1_weight = random_tensor<double>({c, 4 * c}, -0.5, 0.5, gen);
    b.fc1_bias = random_tensor<double>({4 * c}, -0.1, 0.1, gen);
    b.fc2_weight = random_tensor<double>({4 * c, c}, -0.5, 0.5, gen);
    b.fc2_bias = random_tensor<double>({c}, -0.1, 0.1, gen);
    return b;
}

} // namespace

TEST(PadSpatial, TrailingZeros)
{
    Tensor<double> x(Shape{1, 1, 1, 3}, {1, 2, 3});
    auto p = pad_spatial(x, PadSpec::make(PadMode::doubled, {1, 1, 3}));
    EXPECT_EQ(p.shape(), (Shape{1, 2, 2, 6}));
    EXPECT_EQ(std::vector<double>(p.values().begin(), p.values().begin() + 6), (std::vector<double>{1, 2, 3, 0, 0, 0}));
    double s = 0;
    for (auto v : p.values()) s += v;
    EXPECT_EQ(s, 6.0);
    auto same = pad_spatial(x, PadSpec::make(PadMode::none, {1, 1, 3}));
    EXPECT_EQ(same.node_ptr(), x.node_ptr());
    EXPECT_THROW(pad_spatial(x, PadSpec{PadMode::doubled, {1, 1, 2}}), GeometryError);
}

TEST(AliasingDemo, OneDimensionalExample)
{
    Tensor<double> x(Shape{1, 1, 1, 3}, {1, 2, 3});
    Tensor<double> k(Shape{1, 1, 1, 3}, {1, 1, 0});
    auto d = circular_vs_linear_demo(x, k);
    const std::vector<double> circ{4, 3, 5}, lin{1, 3, 5, 3};
    ASSERT_EQ(d.circular.size(), 3u);
    ASSERT_EQ(d.linear.size(), 4u);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(d.circular[i], circ[i], 1e-12);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_EQ(d.linear[i], lin[i]);
        EXPECT_NEAR(d.padded_full[i], lin[i], 1e-6);
    }
}

TEST(AliasingDemo, ImpulseKernelLeavesInput)
{
    auto x = random_tensor<double>({1, 4, 3, 5});
    Tensor<double> k(Shape{1, 2, 2, 2});
    k[0] = 1;
    auto d = circular_vs_linear_demo(x, k);
    EXPECT_LT(max_abs_diff(d.circular, x), 1e-12);
    EXPECT_LT(max_abs_diff(d.padded, x), 1e-12);
    EXPECT_LT(max_abs_diff(d.linear, x), 1e-12);
}

TEST(AliasingDemo, CircularAndLinearOraclesOnRandomVolumes)
{
    for (int trial = 0; trial < 5; ++trial) {
        auto x = random_tensor<double>({1, 8, 8, 8});
        auto k = random_tensor<double>({1, 3, 3, 3});
        auto d = circular_vs_linear_demo(x, k);
        EXPECT_LT(max_abs_diff(d.circular, conv_circular_oracle(x, k)), 1e-10);
        EXPECT_LT(max_abs_diff(d.padded, conv_linear_oracle(x, k)), 1e-10);
        EXPECT_GT(max_abs_diff(d.circular, conv_linear_oracle(x, k)), 1e-2);
    }
}

TEST(CropFreq, PartitionAndBoundaryCases)
{
    auto s = fftshift3(fft3d(random_tensor<double>({2, 6, 5, 4})));
    auto inner_full = crop_freq(s, {CropKeep::inner, {6, 5, 4}});
    for (std::size_t i = 0; i < s.data.size(); ++i) EXPECT_EQ(inner_full.data[i], s.data[i]);
    auto outer_full = crop_freq(s, {CropKeep::outer, {6, 5, 4}});
    for (auto v : outer_full.data.values()) EXPECT_EQ(v, C(0, 0));

    const Dims3 m{3, 2, 3};
    auto inner = crop_freq(s, {CropKeep::inner, m});
    auto outer = crop_freq(s, {CropKeep::outer, m});
    EXPECT_EQ(inner.source_dims, m);
    // inner re-embedded (unscaled) plus outer rebuilds the spectrum exactly
    auto back = gather(inner.data, spectral_resample_map<double>(m, {6, 5, 4}, SpectrumLayout::shifted,
                                                                 SpectrumLayout::shifted, NyquistMode::keep, 1.0));
    std::size_t nonzero_outer = 0;
    for (std::size_t i = 0; i < s.data.size(); ++i) {
        EXPECT_EQ(back[i] + outer.data[i], s.data[i]);
        EXPECT_TRUE(back[i] == C(0, 0) || outer.data[i] == C(0, 0));
        nonzero_outer += outer.data[i] != C(0, 0);
    }
    EXPECT_EQ(nonzero_outer, 2 * (120u - 18u));
    EXPECT_THROW(crop_freq(fft3d(random_tensor<double>({1, 2, 2, 2})), {CropKeep::inner, {1, 1, 1}}), LayoutError);
}

TEST(CropFreq, ConstantSignalResample)
{
    Tensor<double> x(Shape{1, 1, 1, 8}, 1.0);
    auto s = fftshift3(fft3d(x));
    auto c = crop_freq(s, {CropKeep::inner, {1, 1, 4}});
    c.data = scale(c.data, C(4.0 / 8.0, 0));
    auto back = real_part(ifft3d(ifftshift3(c)));
    ASSERT_EQ(back.size(), 4u);
    for (auto v : back.values()) EXPECT_NEAR(v, 1.0, 1e-12);
}

TEST(EmbedFreq, ConstantAndCosineUpsampling)
{
    Tensor<double> x(Shape{1, 1, 1, 4}, 1.0);
    auto e = embed_freq(fftshift3(fft3d(x)), {1, 1, 8});
    auto up = real_part(ifft3d(ifftshift3(e)));
    ASSERT_EQ(up.size(), 8u);
    for (auto v : up.values()) EXPECT_NEAR(v, 1.0, 1e-12);

    Tensor<double> cosv(Shape{1, 1, 1, 8});
    for (std::size_t n = 0; n < 8; ++n) cosv[n] = std::cos(2 * std::numbers::pi * n / 8.0);
    auto e2 = embed_freq(fftshift3(fft3d(cosv)), {1, 1, 16});
    auto up2 = real_part(ifft3d(ifftshift3(e2)));
    for (std::size_t n = 0; n < 16; ++n) EXPECT_NEAR(up2[n], std::cos(2 * std::numbers::pi * n / 16.0), 1e-5);

    EXPECT_THROW(embed_freq(fftshift3(fft3d(cosv)), {1, 1, 4}), GeometryError);
}

TEST(EmbedFreq, RoundTripThroughCrop)
{
    auto s = fftshift3(fft3d(random_tensor<double>({1, 4, 3, 4})));
    auto e = embed_freq(s, {8, 6, 8});
    auto c = crop_freq(e, {CropKeep::inner, {4, 3, 4}});
    for (std::size_t i = 0; i < s.data.size(); ++i)
        EXPECT_NEAR(std::abs(c.data[i] / 8.0 - s.data[i]), 0, 1e-12 * (1 + std::abs(s.data[i])));
}

TEST(SpectralUpsample, MatchesTrigonometricInterpolation)
{
    Tensor<double> x(Shape{1, 1, 1, 4}, {1, -2, 0.5, 3});
    auto up = spectral_upsample(x, {1, 1, 8});
    // even samples reproduce the input
    for (std::size_t n = 0; n < 4; ++n) EXPECT_NEAR(up[2 * n], x[n], 1e-12);
}

TEST(GlobalFilter, IdentityConfiguration)
{
    const Dims3 n{4, 6, 5};
    auto x = random_tensor<double>({3, 4, 6, 5});
    auto p = random_block(3, n, PadMode::none, 1);
    p.w_freq = Tensor<C>(p.w_freq.shape(), C(1, 0));
    p.bias_freq = Tensor<C>(p.bias_freq.shape());
    GlobalFilterOptions o{false, false, false, false};
    auto y = global_filter(x, p, PadMode::none, o);
    EXPECT_LT(max_abs_diff(y, x), 1e-5);
}

TEST(GlobalFilter, PaddedKernelSpectrumGivesLinearConvolution)
{
    const Dims3 n{8, 8, 8};
    auto x = random_tensor<double>({1, 8, 8, 8});
    auto k = random_tensor<double>({1, 3, 3, 3});
    auto p = random_block(1, n, PadMode::doubled, 2);
    p.w_freq = rfft3(pad_trailing(k, {16, 16, 16}));
    p.bias_freq = Tensor<C>(p.bias_freq.shape());
    auto y = global_filter(x, p, PadMode::doubled, {false, false, false, false});
    auto ref = conv_linear_oracle(x, k);
    for (std::size_t a = 2; a < 8; ++a)
        for (std::size_t b = 2; b < 8; ++b)
            for (std::size_t c = 2; c < 8; ++c) EXPECT_NEAR(y[(a * 8 + b) * 8 + c], ref[(a * 8 + b) * 8 + c], 1e-3);
}

TEST(GlobalFilter, LinearWhenNormsAndMlpBypassed)
{
    const Dims3 n{4, 4, 4};
    auto p = random_block(2, n, PadMode::doubled, 3);
    p.bias_freq = Tensor<C>(p.bias_freq.shape());
    GlobalFilterOptions o{false, false, false, true};
    auto x = random_tensor<double>({2, 4, 4, 4}), y = random_tensor<double>({2, 4, 4, 4});
    const double a = 0.7, b = -1.3;
    auto lhs = global_filter(scale(x, a) + scale(y, b), p, PadMode::doubled, o);
    auto rhs = scale(global_filter(x, p, PadMode::doubled, o), a) + scale(global_filter(y, p, PadMode::doubled, o), b);
    EXPECT_LT(max_abs_diff(lhs, rhs), 1e-10);
}

TEST(GlobalFilter, ShapeErrorsNameStage)
{
    auto p = random_block(2, {4, 4, 4}, PadMode::none, 4);
    auto x = random_tensor<double>({2, 4, 4, 4});
    try {
        global_filter(x, p, PadMode::doubled);
        FAIL();
    } catch (const ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("W_freq"), std::string::npos);
    }
}

TEST(GlobalFilter, FullBlockGradients)
{
    const Dims3 n{4, 4, 4};
    auto p = random_block(2, n, PadMode::doubled, 5);
    for (auto* t : {&p.ln1_gamma, &p.ln1_beta, &p.ln2_gamma, &p.ln2_beta, &p.fc1_weight, &p.fc1_bias, &p.fc2_weight,
                    &p.fc2_bias})
        t->set_requires_grad(true);
    p.w_freq.set_requires_grad(true);
    p.bias_freq.set_requires_grad(true);
    auto x = random_tensor<double>({2, 4, 4, 4}).set_requires_grad(true);
    auto proj = fseg::testing::random_projection<double>({2, 4, 4, 4}, 21);
    auto f = [&] { return sum(global_filter(x, p, PadMode::doubled) * proj); };
    EXPECT_LT(grad_check(f, p.w_freq), 1e-3);
    EXPECT_LT(grad_check(f, p.bias_freq), 1e-3);
    EXPECT_LT(grad_check(f, p.ln1_gamma), 1e-3);
    EXPECT_LT(grad_check(f, p.ln2_beta), 1e-3);
    EXPECT_LT(grad_check(f, p.fc1_weight), 1e-3);
    EXPECT_LT(grad_check(f, p.fc2_bias), 1e-3);
    EXPECT_LT(grad_check(f, x), 1e-3);
}

TEST(FourierFuse, ZeroEncoderIsSpectralUpsampling)
{
    auto dec = random_tensor<double>({2, 3, 4, 4});
    Tensor<double> enc(Shape{2, 6, 8, 8});
    for (auto path : {SpectralPath::half, SpectralPath::full_complex}) {
        auto y = fourier_fuse(enc, dec, {std::nullopt, FusionOrientation::decoder_low_band, path});
        EXPECT_LT(max_abs_diff(y, spectral_upsample(dec, {6, 8, 8})), 1e-10);
    }
    auto full_cut = fourier_fuse(random_tensor<double>({2, 6, 8, 8}), dec, {Dims3{6, 8, 8}});
    EXPECT_LT(max_abs_diff(full_cut, spectral_upsample(dec, {6, 8, 8})), 1e-10);
}

TEST(FourierFuse, ZeroDecoderLeavesHighPass)
{
    auto enc = random_tensor<double>({1, 8, 8, 8});
    Tensor<double> dec(Shape{1, 4, 4, 4});
    auto y = fourier_fuse(enc, dec);
    auto s = fftshift3(fft3d(y));
    for (std::size_t a = 2; a < 6; ++a)
        for (std::size_t b = 2; b < 6; ++b)
            for (std::size_t c = 2; c < 6; ++c) EXPECT_LT(std::abs(s.data[(a * 8 + b) * 8 + c]), 1e-10);
}

TEST(FourierFuse, EnergySplitsAcrossDisjointBands)
{
    auto enc = random_tensor<double>({1, 8, 8, 8});
    auto dec = random_tensor<double>({1, 4, 4, 4});
    auto energy = [](const Tensor<double>& v) {
        double e = 0;
        const auto s = fft3d(v);
        for (auto z : s.data.values()) e += std::norm(z);
        return e;
    };
    Tensor<double> zdec(dec.shape()), zenc(enc.shape());
    const double total = energy(fourier_fuse(enc, dec));
    const double ring = energy(fourier_fuse(enc, zdec));
    const double low = energy(fourier_fuse(zenc, dec));
    EXPECT_NEAR(total, ring + low, 1e-4 * total);
}

TEST(FourierFuse, HalfAndFullPathsAgreeAndDifferentiate)
{
    auto enc = random_tensor<double>({2, 4, 4, 4}).set_requires_grad(true);
    auto dec = random_tensor<double>({2, 2, 2, 2}).set_requires_grad(true);
    for (auto o : {FusionOrientation::decoder_low_band, FusionOrientation::encoder_low_band}) {
        auto h = fourier_fuse(enc, dec, {std::nullopt, o, SpectralPath::half});
        auto f = fourier_fuse(enc, dec, {std::nullopt, o, SpectralPath::full_complex});
        EXPECT_LT(max_abs_diff(h, f), 1e-12);
        auto proj = fseg::testing::random_projection<double>({2, 4, 4, 4}, 31);
        auto loss = [&] { return sum(fourier_fuse(enc, dec, {std::nullopt, o, SpectralPath::half}) * proj); };
        EXPECT_LT(grad_check(loss, enc), 1e-6);
        EXPECT_LT(grad_check(loss, dec), 1e-6);
    }
}

TEST(FourierFuse, ErrorContracts)
{
    EXPECT_THROW(fourier_fuse(Tensor<double>(Shape{1, 8, 8, 8}), Tensor<double>(Shape{1, 3, 4, 4})), GeometryError);
    EXPECT_THROW(fourier_fuse(Tensor<double>(Shape{2, 8, 8, 8}), Tensor<double>(Shape{1, 4, 4, 4})), ShapeError);
}
