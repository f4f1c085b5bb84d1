#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <queue>
#include <set>

#include "fseg/phantom.hpp"

using namespace fseg;

namespace {

std::filesystem::path scratch(const std::string& name)
{
    auto d = std::filesystem::temp_directory_path() / ("fseg_phantom_" + name);
    std::filesystem::remove_all(d);
    std::filesystem::create_directories(d);
    return d;
}

// Number of 6-connected foreground components, by breadth-first flood fill.
std::size_t components(const LabelVolume& l)
{
    const auto d = l.dims;
    std::vector<char> seen(l.voxels(), 0);
    std::size_t count = 0;
    for (std::size_t s = 0; s < l.voxels(); ++s) {
        if (!l.data[s] || seen[s]) continue;
        ++count;
        std::queue<std::size_t> q;
        q.push(s);
        seen[s] = 1;
        while (!q.empty()) {
            const std::size_t v = q.front();
            q.pop();
            const long a = long(v / (d[1] * d[2])), b = long(v / d[2] % d[1]), c = long(v % d[2]);
            const long nb[6][3] = {{a - 1, b, c}, {a + 1, b, c}, {a, b - 1, c}, {a, b + 1, c}, {a, b, c - 1}, {a, b, c + 1}};
            for (const auto& n : nb) {
                if (n[0] < 0 || n[1] < 0 || n[2] < 0 || n[0] >= long(d[0]) || n[1] >= long(d[1]) || n[2] >= long(d[2]))
                    continue;
                const std::size_t u = (std::size_t(n[0]) * d[1] + std::size_t(n[1])) * d[2] + std::size_t(n[2]);
                if (l.data[u] && !seen[u]) {
                    seen[u] = 1;
                    q.push(u);
                }
            }
        }
    }
    return count;
}

LabelVolume random_label(Dims3 d, unsigned seed)
{
    std::mt19937_64 gen(seed);
    LabelVolume l;
    l.dims = d;
    l.data.resize(d[0] * d[1] * d[2]);
    for (auto& v : l.data) v = static_cast<std::uint8_t>(gen() % 3);
    return l;
}

} // namespace

TEST(Phantom, StraightTubeVolume)
{
    LabelVolume l;
    l.dims = {32, 32, 32};
    l.data.assign(32 * 32 * 32, 0);
    std::vector<Point3> line;
    for (int i = 0; i <= 31 * 8; ++i) line.push_back({i / 8.0, 16.0, 16.0});
    rasterize_tube(l, line, std::vector<double>(line.size(), 3.0));
    const double count = double(std::count(l.data.begin(), l.data.end(), 1));
    const double analytic = std::numbers::pi * 9.0 * 32.0;
    EXPECT_NEAR(count, analytic, 0.1 * analytic);
}

TEST(Phantom, NoiselessBackgroundAndDeterminism)
{
    PhantomSpec spec;
    spec.noise_sigma = 0;
    spec.seed = 42;
    const auto a = generate_phantom(spec);
    for (std::size_t v = 0; v < a.image.data.size(); ++v)
        EXPECT_EQ(a.image.data[v], a.label.data[v] ? float(spec.fg_intensity) : float(spec.bg_intensity));
    EXPECT_GT(std::count(a.label.data.begin(), a.label.data.end(), 1), 0);

    spec.noise_sigma = 40;
    const auto b = generate_phantom(spec), c = generate_phantom(spec);
    EXPECT_EQ(std::memcmp(b.image.data.data(), c.image.data.data(), b.image.data.size() * 4), 0);
    EXPECT_EQ(b.label.data, c.label.data);
    spec.seed = 43;
    EXPECT_NE(generate_phantom(spec).label.data, b.label.data);
}

TEST(Phantom, TubesAreConnected)
{
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        PhantomSpec spec;
        spec.n_tubes = 1;
        spec.seed = seed;
        spec.radius_range = seed % 2 ? std::array<double, 2>{1.0, 1.5} : std::array<double, 2>{2.0, 4.0};
        spec.curvature = 5.0;
        EXPECT_EQ(components(generate_phantom(spec).label), 1u) << "seed " << seed;
    }
}

TEST(Phantom, SpecValidation)
{
    PhantomSpec spec;
    spec.radius_range = {2, 17};
    EXPECT_THROW(generate_phantom(spec), ConfigError);
    spec.radius_range = {0.5, 2};
    EXPECT_THROW(generate_phantom(spec), ConfigError);
    spec.radius_range = {2, 3};
    spec.fg_intensity = -200;
    EXPECT_THROW(generate_phantom(spec), ConfigError);
}

TEST(VolumeIo, RoundTripBitExact)
{
    const auto dir = scratch("io");
    PhantomSpec spec;
    spec.size = 16;
    spec.seed = 1;
    auto ph = generate_phantom(spec);
    ph.image.spacing = {0.5, 0.7, 0.9};
    save_volume(dir / "img", ph.image);
    save_label(dir / "lab", ph.label);
    const auto img = load_volume(dir / "img");
    const auto lab = load_label(dir / "lab");
    EXPECT_EQ(img.dims, ph.image.dims);
    EXPECT_EQ(img.spacing, ph.image.spacing);
    EXPECT_EQ(std::memcmp(img.data.data(), ph.image.data.data(), img.data.size() * 4), 0);
    EXPECT_EQ(lab.data, ph.label.data);
    EXPECT_THROW(load_label(dir / "img"), FormatError);
}

TEST(VolumeIo, ErrorContracts)
{
    const auto dir = scratch("io_err");
    Volume v;
    v.dims = {2, 2, 2};
    v.data.assign(8, 1.5f);
    save_volume(dir / "v", v);
    std::filesystem::resize_file(dir / "v.raw", 20);
    try {
        load_volume(dir / "v");
        FAIL();
    } catch (const FormatError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("32"), std::string::npos);
        EXPECT_NE(msg.find("20"), std::string::npos);
    }
    std::ofstream(dir / "bad.json") << "{\"dims\": [2, 2";
    EXPECT_THROW(load_volume(dir / "bad"), FormatError);
    std::ofstream(dir / "u16.json") << R"({"dims":[2,2,2],"dtype":"u16le","spacing":[1,1,1]})";
    EXPECT_THROW(load_volume(dir / "u16"), FormatError);
}

TEST(VolumeIo, F64Converts)
{
    const auto dir = scratch("f64");
    std::ofstream(dir / "d.json") << R"({"dims":[1,2,2],"dtype":"f64le","spacing":[1,1,1],"kind":"image"})";
    const double vals[4] = {1.25, -3.5, 1e10, 0.1};
    std::ofstream(dir / "d.raw", std::ios::binary).write(reinterpret_cast<const char*>(vals), sizeof vals);
    const auto v = load_volume(dir / "d");
    for (int i = 0; i < 4; ++i) EXPECT_EQ(v.data[i], static_cast<float>(vals[i]));
}

TEST(Augment, ClipAndMap)
{
    Volume v;
    v.dims = {1, 1, 5};
    v.data = {1000, -200, 400, 1500, -1000};
    clip_and_map(v);
    EXPECT_FLOAT_EQ(v.data[0], 1.0f);
    EXPECT_FLOAT_EQ(v.data[1], 0.0f);
    EXPECT_FLOAT_EQ(v.data[2], 0.5f);
    EXPECT_FLOAT_EQ(v.data[3], 1.0f);
    EXPECT_FLOAT_EQ(v.data[4], 0.0f);
}

TEST(Augment, GeometricOpsInvertAndPreserveCounts)
{
    for (Dims3 d : {Dims3{4, 4, 4}, Dims3{3, 4, 5}}) {
        const auto orig = random_label(d, 7);
        for (int mask = 0; mask < 8; ++mask)
            for (int plane = 0; plane < 3; ++plane)
                for (int k = 0; k < 4; ++k) {
                    static constexpr int planes[3][2] = {{0, 1}, {0, 2}, {1, 2}};
                    GeometricTransform t{{bool(mask & 1), bool(mask & 2), bool(mask & 4)}, planes[plane][0],
                                         planes[plane][1], k};
                    auto l = orig;
                    apply(l, t);
                    for (std::uint8_t c = 0; c < 3; ++c)
                        EXPECT_EQ(std::count(l.data.begin(), l.data.end(), c),
                                  std::count(orig.data.begin(), orig.data.end(), c));
                    invert(l, t);
                    ASSERT_EQ(l.dims, orig.dims);
                    ASSERT_EQ(l.data, orig.data);
                }
    }
}

TEST(Augment, QuarterTurnMovesVoxels)
{
    LabelVolume l;
    l.dims = {2, 3, 1};
    l.data = {1, 2, 3, 4, 5, 6};
    apply(l, GeometricTransform{{false, false, false}, 0, 1, 1});
    EXPECT_EQ(l.dims, (Dims3{3, 2, 1}));
    // out[i][j] = in[j][2 - i]
    EXPECT_EQ(l.data, (std::vector<std::uint8_t>{3, 6, 2, 5, 1, 4}));
}

TEST(Augment, PipelineSharesGeometryAndSkipsReclip)
{
    PhantomSpec spec;
    spec.size = 16;
    spec.seed = 3;
    const auto ph = generate_phantom(spec);
    AugmentConfig cfg;
    cfg.flip_rot_prob = 1.0;
    cfg.intensity_scale_prob = 1.0;
    cfg.scale_range = {1.1, 1.1};
    cfg.intensity_shift_prob = 1.0;
    cfg.shift_range = {0.1, 0.1};
    std::mt19937_64 rng(9);
    auto bright = ph.image;
    bright.data[0] = 1000.0f;
    auto out = augment(bright, ph.label, cfg, rng);
    // undoing the geometry of both returns the clip-and-mapped image paired with the original label
    auto img = out.image;
    auto lab = out.label;
    invert(img, out.transform);
    invert(lab, out.transform);
    EXPECT_EQ(lab.data, ph.label.data);
    auto mapped = bright;
    clip_and_map(mapped);
    float max_v = 0;
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        EXPECT_NEAR(img.data[i], mapped.data[i] * 1.1f + 0.1f, 1e-5f);
        max_v = std::max(max_v, img.data[i]);
    }
    EXPECT_GT(max_v, 1.0f);

    AugmentConfig bad;
    bad.flip_rot_prob = 1.5;
    EXPECT_THROW(augment(ph.image, ph.label, bad, rng), ConfigError);
}

TEST(Split, LargestRemainderSizes)
{
    auto ids = [](std::size_t n) {
        std::vector<std::string> v;
        for (std::size_t i = 0; i < n; ++i) v.push_back("id" + std::to_string(i));
        return v;
    };
    auto sizes = [](const Split& s) { return std::array<std::size_t, 3>{s.train.size(), s.val.size(), s.test.size()}; };
    EXPECT_EQ(sizes(split_dataset(ids(10))), (std::array<std::size_t, 3>{8, 1, 1}));
    EXPECT_EQ(sizes(split_dataset(ids(100))), (std::array<std::size_t, 3>{80, 10, 10}));
    EXPECT_EQ(sizes(split_dataset(ids(12))), (std::array<std::size_t, 3>{10, 1, 1}));
    EXPECT_EQ(sizes(split_dataset(ids(20))), (std::array<std::size_t, 3>{16, 2, 2}));
    EXPECT_THROW(split_dataset(ids(5)), ConfigError);

    const auto s = split_dataset(ids(37), {8, 1, 1}, 5);
    std::set<std::string> all;
    for (const auto* part : {&s.train, &s.val, &s.test})
        for (const auto& id : *part) EXPECT_TRUE(all.insert(id).second);
    EXPECT_EQ(all.size(), 37u);
    EXPECT_EQ(split_dataset(ids(37), {8, 1, 1}, 5).train, s.train);
    EXPECT_NE(split_dataset(ids(37), {8, 1, 1}, 6).train, s.train);
}
