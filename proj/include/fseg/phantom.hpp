#pragma once

// Synthetic tubular phantoms, the volume file format (JSON sidecar + raw
// little-endian blob), the augmentation pipeline and dataset splitting.

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "fseg/spectrum.hpp"

namespace fseg {

struct Volume {
    Dims3 dims{};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::vector<float> data;

    std::size_t voxels() const { return dims[0] * dims[1] * dims[2]; }
    float& at(std::size_t a, std::size_t b, std::size_t c) { return data[(a * dims[1] + b) * dims[2] + c]; }
    float at(std::size_t a, std::size_t b, std::size_t c) const { return data[(a * dims[1] + b) * dims[2] + c]; }
};

struct LabelVolume {
    Dims3 dims{};
    std::array<double, 3> spacing{1.0, 1.0, 1.0};
    std::vector<std::uint8_t> data;

    std::size_t voxels() const { return dims[0] * dims[1] * dims[2]; }
    std::uint8_t& at(std::size_t a, std::size_t b, std::size_t c) { return data[(a * dims[1] + b) * dims[2] + c]; }
    std::uint8_t at(std::size_t a, std::size_t b, std::size_t c) const
    {
        return data[(a * dims[1] + b) * dims[2] + c];
    }
};

/// [1, D, H, W] tensor view of an image volume.
template <std::floating_point T>
Tensor<T> to_tensor(const Volume& v)
{
    return Tensor<T>(Shape{1, v.dims[0], v.dims[1], v.dims[2]}, std::vector<T>(v.data.begin(), v.data.end()));
}

// ---------------------------------------------------------------------------
// Phantoms

struct PhantomSpec {
    std::size_t size = 32;
    std::size_t n_tubes = 3;
    std::array<double, 2> radius_range{2.0, 4.0};
    double curvature = 3.0; // std-dev of control-point jitter, voxels
    double fg_intensity = 350.0;
    double bg_intensity = -100.0;
    double noise_sigma = 40.0;
    std::uint64_t seed = 0;

    void validate() const
    {
        if (size < 4) throw ConfigError("phantom size must be >= 4");
        if (radius_range[0] < 1.0) throw ConfigError("phantom r_min must be >= 1");
        if (radius_range[1] < radius_range[0]) throw ConfigError("phantom radius_range must be ordered");
        if (radius_range[1] > static_cast<double>(size) / 2.0)
            throw ConfigError("degenerate phantom: r_max " + std::to_string(radius_range[1]) +
                              " exceeds half the volume size " + std::to_string(size));
        if (!(fg_intensity > bg_intensity)) throw ConfigError("phantom fg_intensity must exceed bg_intensity");
        if (noise_sigma < 0 || curvature < 0) throw ConfigError("phantom noise_sigma and curvature must be >= 0");
    }
};

using Point3 = std::array<double, 3>;

/// Centripetal-free (uniform) Catmull-Rom spline through `ctrl`, sampled every
/// `step` parameter units per segment; end tangents use mirrored endpoints.
inline std::vector<Point3> catmull_rom(const std::vector<Point3>& ctrl, double step)
{
    std::vector<Point3> out;
    if (ctrl.size() < 2) return ctrl;
    auto get = [&](long i) {
        if (i < 0) {
            Point3 p;
            for (int a = 0; a < 3; ++a) p[a] = 2 * ctrl[0][a] - ctrl[1][a];
            return p;
        }
        if (i >= static_cast<long>(ctrl.size())) {
            const auto& l = ctrl.back();
            const auto& m = ctrl[ctrl.size() - 2];
            Point3 p;
            for (int a = 0; a < 3; ++a) p[a] = 2 * l[a] - m[a];
            return p;
        }
        return ctrl[static_cast<std::size_t>(i)];
    };
    const int n = static_cast<int>(std::ceil(1.0 / step));
    for (long s = 0; s + 1 < static_cast<long>(ctrl.size()); ++s) {
        const auto p0 = get(s - 1), p1 = get(s), p2 = get(s + 1), p3 = get(s + 2);
        for (int i = 0; i < n; ++i) {
            const double t = static_cast<double>(i) / n, t2 = t * t, t3 = t2 * t;
            Point3 q;
            for (int a = 0; a < 3; ++a)
                q[a] = 0.5 * (2 * p1[a] + (-p0[a] + p2[a]) * t + (2 * p0[a] - 5 * p1[a] + 4 * p2[a] - p3[a]) * t2 +
                              (-p0[a] + 3 * p1[a] - 3 * p2[a] + p3[a]) * t3);
            out.push_back(q);
        }
    }
    out.push_back(ctrl.back());
    return out;
}

/// Marks every voxel whose centre lies within radius[i] of centerline point i.
inline void rasterize_tube(LabelVolume& label, const std::vector<Point3>& centerline,
                           const std::vector<double>& radius)
{
    const auto& d = label.dims;
    for (std::size_t i = 0; i < centerline.size(); ++i) {
        const auto& p = centerline[i];
        const double r = radius[i], r2 = r * r;
        std::array<long, 3> lo{}, hi{};
        for (int a = 0; a < 3; ++a) {
            lo[a] = std::max(0L, static_cast<long>(std::ceil(p[a] - r)));
            hi[a] = std::min(static_cast<long>(d[a]) - 1, static_cast<long>(std::floor(p[a] + r)));
        }
        for (long x = lo[0]; x <= hi[0]; ++x)
            for (long y = lo[1]; y <= hi[1]; ++y)
                for (long z = lo[2]; z <= hi[2]; ++z) {
                    const double dx = x - p[0], dy = y - p[1], dz = z - p[2];
                    if (dx * dx + dy * dy + dz * dz <= r2) label.at(x, y, z) = 1;
                }
    }
}

struct Phantom {
    Volume image;
    LabelVolume label;
};

/// Tubes running face to face along a random axis through jittered control
/// points; intensity = class mean + Gaussian noise. Deterministic per seed.
inline Phantom generate_phantom(const PhantomSpec& spec)
{
    spec.validate();
    std::mt19937_64 rng(spec.seed);
    const std::size_t n = spec.size;
    const double ext = static_cast<double>(n - 1);
    Phantom ph;
    ph.image.dims = ph.label.dims = {n, n, n};
    ph.label.data.assign(n * n * n, 0);

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> jitter(0.0, 1.0);
    for (std::size_t t = 0; t < spec.n_tubes; ++t) {
        const int axis = static_cast<int>(rng() % 3);
        const double margin = spec.radius_range[1];
        auto across = [&] { return margin + unit(rng) * std::max(0.0, ext - 2 * margin); };
        Point3 start{}, end{};
        start[axis] = 0.0;
        end[axis] = ext;
        for (int a = 0; a < 3; ++a)
            if (a != axis) {
                start[a] = across();
                end[a] = across();
            }
        constexpr int kCtrl = 5;
        std::vector<Point3> ctrl;
        for (int i = 0; i < kCtrl; ++i) {
            const double s = static_cast<double>(i) / (kCtrl - 1);
            Point3 p;
            for (int a = 0; a < 3; ++a) p[a] = start[a] + s * (end[a] - start[a]);
            if (i > 0 && i + 1 < kCtrl)
                for (int a = 0; a < 3; ++a)
                    if (a != axis) p[a] = std::clamp(p[a] + spec.curvature * jitter(rng), margin, ext - margin);
            ctrl.push_back(p);
        }
        std::vector<double> ctrl_r(kCtrl);
        for (auto& r : ctrl_r) r = spec.radius_range[0] + unit(rng) * (spec.radius_range[1] - spec.radius_range[0]);

        // spacing of ~0.25 voxel along the curve
        const double seg_len = ext / (kCtrl - 1);
        const auto line = catmull_rom(ctrl, std::min(0.5, 0.25 / std::max(seg_len, 1.0)));
        std::vector<double> radius(line.size());
        for (std::size_t i = 0; i < line.size(); ++i) {
            const double u = static_cast<double>(i) / static_cast<double>(line.size() - 1) * (kCtrl - 1);
            const auto k = std::min<std::size_t>(static_cast<std::size_t>(u), kCtrl - 2);
            const double f = u - static_cast<double>(k);
            radius[i] = (1 - f) * ctrl_r[k] + f * ctrl_r[k + 1];
        }
        rasterize_tube(ph.label, line, radius);
    }

    ph.image.data.resize(n * n * n);
    std::normal_distribution<double> noise(0.0, 1.0);
    for (std::size_t v = 0; v < ph.image.data.size(); ++v) {
        const double mean = ph.label.data[v] ? spec.fg_intensity : spec.bg_intensity;
        const double z = spec.noise_sigma > 0 ? spec.noise_sigma * noise(rng) : 0.0;
        ph.image.data[v] = static_cast<float>(mean + z);
    }
    return ph;
}

// ---------------------------------------------------------------------------
// Volume I/O

namespace detail {

template <class V>
void write_le(std::ofstream& os, const std::vector<V>& data)
{
    static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
    os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(V)));
}

inline std::filesystem::path with_ext(const std::filesystem::path& base, const char* ext)
{
    auto p = base;
    if (p.extension() == ".json" || p.extension() == ".raw") p.replace_extension();
    return p.string() + ext;
}

inline nlohmann::json read_header(const std::filesystem::path& base, std::string& dtype, Dims3& dims,
                                  std::array<double, 3>& spacing)
{
    const auto hp = with_ext(base, ".json");
    std::ifstream is(hp);
    if (!is) throw FormatError("cannot open volume header " + hp.string());
    nlohmann::json h;
    try {
        is >> h;
        const auto d = h.at("dims").get<std::vector<std::size_t>>();
        if (d.size() != 3 || d[0] == 0 || d[1] == 0 || d[2] == 0) throw FormatError("dims must be 3 positive extents");
        dims = {d[0], d[1], d[2]};
        dtype = h.at("dtype").get<std::string>();
        if (h.contains("spacing")) {
            const auto s = h.at("spacing").get<std::vector<double>>();
            if (s.size() != 3 || s[0] <= 0 || s[1] <= 0 || s[2] <= 0)
                throw FormatError("spacing must be 3 positive values");
            spacing = {s[0], s[1], s[2]};
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("corrupt volume header " + hp.string() + ": " + e.what());
    } catch (const FormatError& e) {
        throw FormatError("corrupt volume header " + hp.string() + ": " + e.what());
    }
    return h;
}

inline std::vector<char> read_blob(const std::filesystem::path& base, std::size_t expected)
{
    const auto bp = with_ext(base, ".raw");
    std::ifstream is(bp, std::ios::binary);
    if (!is) throw FormatError("cannot open volume blob " + bp.string());
    std::vector<char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (buf.size() != expected)
        throw FormatError("size mismatch in " + bp.string() + ": expected " + std::to_string(expected) +
                          " bytes, found " + std::to_string(buf.size()));
    return buf;
}

inline void write_header(const std::filesystem::path& base, const Dims3& dims, const std::array<double, 3>& spacing,
                         const char* dtype, const char* kind)
{
    nlohmann::json h{{"dims", {dims[0], dims[1], dims[2]}},
                     {"dtype", dtype},
                     {"spacing", {spacing[0], spacing[1], spacing[2]}},
                     {"kind", kind}};
    std::ofstream os(with_ext(base, ".json"));
    if (!os) throw FormatError("cannot write volume header " + with_ext(base, ".json").string());
    os << h.dump(2) << '\n';
}

} // namespace detail

/// Writes `<base>.json` and `<base>.raw` (f32le, W fastest).
inline void save_volume(const std::filesystem::path& base, const Volume& v)
{
    detail::write_header(base, v.dims, v.spacing, "f32le", "image");
    std::ofstream os(detail::with_ext(base, ".raw"), std::ios::binary);
    if (!os) throw FormatError("cannot write volume blob " + detail::with_ext(base, ".raw").string());
    detail::write_le(os, v.data);
}

inline void save_label(const std::filesystem::path& base, const LabelVolume& v)
{
    detail::write_header(base, v.dims, v.spacing, "u8le", "label");
    std::ofstream os(detail::with_ext(base, ".raw"), std::ios::binary);
    if (!os) throw FormatError("cannot write volume blob " + detail::with_ext(base, ".raw").string());
    detail::write_le(os, v.data);
}

/// Loads an image volume; f64le blobs are narrowed to f32 with a logged note.
inline Volume load_volume(const std::filesystem::path& base)
{
    Volume v;
    std::string dtype;
    detail::read_header(base, dtype, v.dims, v.spacing);
    const std::size_t n = v.voxels();
    v.data.resize(n);
    if (dtype == "f32le") {
        auto buf = detail::read_blob(base, n * 4);
        std::memcpy(v.data.data(), buf.data(), buf.size());
    } else if (dtype == "f64le") {
        auto buf = detail::read_blob(base, n * 8);
        std::vector<double> tmp(n);
        std::memcpy(tmp.data(), buf.data(), buf.size());
        for (std::size_t i = 0; i < n; ++i) v.data[i] = static_cast<float>(tmp[i]);
        log::info("load_volume: converted f64le data in " + base.string() + " to f32");
    } else {
        throw FormatError("unsupported image dtype '" + dtype + "' in " + base.string());
    }
    for (float x : v.data)
        if (!std::isfinite(x)) throw FormatError("non-finite voxel in " + base.string());
    return v;
}

inline LabelVolume load_label(const std::filesystem::path& base)
{
    LabelVolume v;
    std::string dtype;
    detail::read_header(base, dtype, v.dims, v.spacing);
    if (dtype != "u8le") throw FormatError("unsupported label dtype '" + dtype + "' in " + base.string());
    auto buf = detail::read_blob(base, v.voxels());
    v.data.assign(buf.begin(), buf.end());
    return v;
}

// ---------------------------------------------------------------------------
// Augmentation

struct AugmentConfig {
    double clip_lo = -200.0, clip_hi = 1000.0;
    double flip_rot_prob = 0.5;
    double intensity_scale_prob = 0.1;
    std::array<double, 2> scale_range{0.9, 1.1};
    double intensity_shift_prob = 0.1;
    std::array<double, 2> shift_range{-0.1, 0.1};
    std::uint64_t seed = 0;

    void validate() const
    {
        for (double p : {flip_rot_prob, intensity_scale_prob, intensity_shift_prob})
            if (p < 0 || p > 1) throw ConfigError("augmentation probabilities must lie in [0,1]");
        if (!(clip_lo < clip_hi) || scale_range[0] > scale_range[1] || shift_range[0] > shift_range[1])
            throw ConfigError("augmentation ranges must be ordered");
    }
};

/// Composition of per-axis flips followed by k quarter turns in plane (p, q),
/// turning axis p towards axis q.
struct GeometricTransform {
    std::array<bool, 3> flip{false, false, false};
    int plane_p = 0, plane_q = 1;
    int quarter_turns = 0;
};

namespace detail {

template <class V>
void apply_flip(std::vector<V>& data, Dims3 d, int axis)
{
    std::vector<V> out(data.size());
    for (std::size_t a = 0; a < d[0]; ++a)
        for (std::size_t b = 0; b < d[1]; ++b)
            for (std::size_t c = 0; c < d[2]; ++c) {
                std::array<std::size_t, 3> s{a, b, c};
                s[axis] = d[axis] - 1 - s[axis];
                out[(a * d[1] + b) * d[2] + c] = data[(s[0] * d[1] + s[1]) * d[2] + s[2]];
            }
    data.swap(out);
}

// One quarter turn: out[.., i_p, .., i_q, ..] = in[.., i_q, .., n_p - 1 - i_p, ..]
template <class V>
void apply_quarter(std::vector<V>& data, Dims3& d, int p, int q)
{
    Dims3 od = d;
    std::swap(od[p], od[q]);
    std::vector<V> out(data.size());
    for (std::size_t a = 0; a < od[0]; ++a)
        for (std::size_t b = 0; b < od[1]; ++b)
            for (std::size_t c = 0; c < od[2]; ++c) {
                const std::array<std::size_t, 3> o{a, b, c};
                std::array<std::size_t, 3> s = o;
                s[p] = o[q];
                s[q] = od[p] - 1 - o[p];
                out[(a * od[1] + b) * od[2] + c] = data[(s[0] * d[1] + s[1]) * d[2] + s[2]];
            }
    data.swap(out);
    d = od;
}

template <class V>
void apply_geometric(std::vector<V>& data, Dims3& d, const GeometricTransform& t)
{
    for (int a = 0; a < 3; ++a)
        if (t.flip[a]) apply_flip(data, d, a);
    for (int k = 0; k < t.quarter_turns; ++k) apply_quarter(data, d, t.plane_p, t.plane_q);
}

template <class V>
void invert_geometric(std::vector<V>& data, Dims3& d, const GeometricTransform& t)
{
    for (int k = 0; k < (4 - t.quarter_turns) % 4; ++k) apply_quarter(data, d, t.plane_p, t.plane_q);
    for (int a = 0; a < 3; ++a)
        if (t.flip[a]) apply_flip(data, d, a);
}

} // namespace detail

inline void apply(Volume& v, const GeometricTransform& t) { detail::apply_geometric(v.data, v.dims, t); }
inline void apply(LabelVolume& v, const GeometricTransform& t) { detail::apply_geometric(v.data, v.dims, t); }
inline void invert(LabelVolume& v, const GeometricTransform& t) { detail::invert_geometric(v.data, v.dims, t); }
inline void invert(Volume& v, const GeometricTransform& t) { detail::invert_geometric(v.data, v.dims, t); }

/// Clip to [clip_lo, clip_hi] and map affinely onto [0, 1].
inline void clip_and_map(Volume& v, double lo = -200.0, double hi = 1000.0)
{
    for (auto& x : v.data) x = static_cast<float>((std::clamp(static_cast<double>(x), lo, hi) - lo) / (hi - lo));
}

struct Augmented {
    Volume image;
    LabelVolume label;
    GeometricTransform transform;
};

/// clip-and-map, then shared random flips / quarter turns, then image-only
/// intensity scale and shift. Scaled or shifted values are not re-clipped.
inline Augmented augment(Volume v, LabelVolume l, const AugmentConfig& cfg, std::mt19937_64& rng)
{
    cfg.validate();
    if (v.dims != l.dims) throw ShapeError("augment: image and label extents differ");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    clip_and_map(v, cfg.clip_lo, cfg.clip_hi);
    GeometricTransform t;
    for (int a = 0; a < 3; ++a) t.flip[a] = unit(rng) < cfg.flip_rot_prob;
    if (unit(rng) < cfg.flip_rot_prob) {
        static constexpr int planes[3][2] = {{0, 1}, {0, 2}, {1, 2}};
        const int plane = static_cast<int>(rng() % 3);
        t.plane_p = planes[plane][0];
        t.plane_q = planes[plane][1];
        t.quarter_turns = 1 + static_cast<int>(rng() % 3);
    }
    apply(v, t);
    apply(l, t);
    if (unit(rng) < cfg.intensity_scale_prob) {
        const double s = cfg.scale_range[0] + unit(rng) * (cfg.scale_range[1] - cfg.scale_range[0]);
        for (auto& x : v.data) x = static_cast<float>(x * s);
    }
    if (unit(rng) < cfg.intensity_shift_prob) {
        const double s = cfg.shift_range[0] + unit(rng) * (cfg.shift_range[1] - cfg.shift_range[0]);
        for (auto& x : v.data) x = static_cast<float>(x + s);
    }
    return {std::move(v), std::move(l), t};
}

// ---------------------------------------------------------------------------
// Splitting

struct Split {
    std::vector<std::string> train, val, test;
};

/// Shuffles ids with the seed and cuts them by `ratio` using largest-remainder
/// rounding (ties go to the earlier part).
inline Split split_dataset(std::vector<std::string> ids, std::array<std::size_t, 3> ratio = {8, 1, 1},
                           std::uint64_t seed = 0)
{
    if (ids.size() < 10)
        throw ConfigError("split needs at least 10 items, got " + std::to_string(ids.size()));
    const std::size_t total_ratio = ratio[0] + ratio[1] + ratio[2];
    if (total_ratio == 0) throw ConfigError("split ratio must not be all zero");
    std::mt19937_64 rng(seed);
    for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[rng() % i]);

    const std::size_t n = ids.size();
    std::array<std::size_t, 3> count{};
    std::array<std::size_t, 3> rem{};
    std::size_t assigned = 0;
    for (int i = 0; i < 3; ++i) {
        count[i] = n * ratio[i] / total_ratio;
        rem[i] = n * ratio[i] % total_ratio;
        assigned += count[i];
    }
    std::array<int, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
    for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++count[order[i % 3]];

    Split s;
    s.train.assign(ids.begin(), ids.begin() + count[0]);
    s.val.assign(ids.begin() + count[0], ids.begin() + count[0] + count[1]);
    s.test.assign(ids.begin() + count[0] + count[1], ids.end());
    return s;
}

} // namespace fseg
