#pragma once

// Run configuration: the training, inference and ablation settings, the single
// JSON document every command reads, and seed derivation. Parsing is strict:
// unknown keys and wrongly typed values are rejected with the offending path.

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fseg/network.hpp"
#include "fseg/optim.hpp"
#include "fseg/phantom.hpp"

namespace fseg {

struct TrainConfig {
    AdamWConfig optim{};
    std::size_t batch_size = 2;
    std::size_t patch_size = 32;
    std::size_t max_steps = 2000;
    std::size_t val_interval = 100;
    double lambda = 0.5;
    bool deterministic = false;

    void validate() const
    {
        optim.validate();
        if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
        if (patch_size < 1) throw ConfigError("train.patch_size must be >= 1");
        if (val_interval < 1) throw ConfigError("train.val_interval must be >= 1");
        if (lambda < 0) throw ConfigError("train.lambda must be >= 0");
    }
};

struct SlidingWindowSpec {
    std::size_t window = 32;
    double overlap = 0.25;

    std::size_t stride() const { return static_cast<std::size_t>(std::floor(window * (1.0 - overlap))); }
    void validate() const
    {
        if (window < 1) throw ConfigError("infer.window must be >= 1");
        if (overlap < 0 || overlap >= 1) throw ConfigError("infer.overlap must lie in [0, 1)");
        if (stride() < 1) throw ConfigError("infer.overlap leaves a window stride of 0");
    }
};

struct DataConfig {
    PhantomSpec phantom{};
    AugmentConfig augment{};
    std::size_t count = 20;
    std::array<std::size_t, 3> split_ratio{8, 1, 1};
};

struct AblationConfig {
    std::size_t max_steps = 600;
    std::size_t seeds = 3;
};

struct RunConfig {
    std::uint64_t seed = 0;
    FsegConfig model = FsegConfig::preset("fseg-s-reduced");
    TrainConfig train{};
    DataConfig data{};
    SlidingWindowSpec infer{};
    AblationConfig ablation{};

    void validate() const
    {
        model.validate();
        train.validate();
        data.phantom.validate();
        data.augment.validate();
        infer.validate();
        if (ablation.seeds < 1) throw ConfigError("ablation.seeds must be >= 1");
    }
};

/// splitmix64 finalizer over (seed, stream); independent streams per purpose.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream)
{
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

namespace seed_stream {
inline constexpr std::uint64_t model_init = 1, split = 2, train = 3, phantom = 1000;
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

using nlohmann::json;

// Reads keys out of one JSON object and rejects whatever is left over.
class StrictObject {
public:
    StrictObject(const json& j, std::string path) : j_(j), path_(std::move(path))
    {
        if (!j_.is_object()) throw ConfigError(path_ + " must be a JSON object");
    }

    template <class V>
    void get(const char* key, V& out)
    {
        seen_.emplace_back(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<V>();
        } catch (const json::exception&) {
            throw ConfigError(path_ + "." + key + " has the wrong type: " + j_.at(key).dump());
        }
    }

    template <class E, std::size_t N>
    void get_enum(const char* key, E& out, const std::array<std::pair<const char*, E>, N>& names)
    {
        std::string s;
        get(key, s);
        if (s.empty()) return;
        for (const auto& [n, v] : names)
            if (s == n) {
                out = v;
                return;
            }
        throw ConfigError(path_ + "." + key + " has unknown value '" + s + "'");
    }

    const json* child(const char* key)
    {
        seen_.emplace_back(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    void finish() const
    {
        for (const auto& [k, v] : j_.items())
            if (std::find(seen_.begin(), seen_.end(), k) == seen_.end())
                throw ConfigError("unknown key " + path_ + "." + k);
    }

private:
    const json& j_;
    std::string path_;
    std::vector<std::string> seen_;
};

inline constexpr std::array<std::pair<const char*, FilterKind>, 2> kFilterNames{
    {{"fourier", FilterKind::fourier}, {"dwconv7", FilterKind::dwconv7}}};
inline constexpr std::array<std::pair<const char*, DecoderKind>, 3> kDecoderNames{
    {{"fusion", DecoderKind::fusion}, {"skip", DecoderKind::skip}, {"none", DecoderKind::none}}};
inline constexpr std::array<std::pair<const char*, PadMode>, 2> kPadNames{
    {{"none", PadMode::none}, {"double", PadMode::doubled}}};
inline constexpr std::array<std::pair<const char*, FusionOrientation>, 2> kOrientationNames{
    {{"encoder_low_band", FusionOrientation::encoder_low_band},
     {"decoder_low_band", FusionOrientation::decoder_low_band}}};

} // namespace detail

inline nlohmann::json to_json(const FsegConfig& c)
{
    return {{"feature_dims", c.feature_dims},
            {"blocks_per_stage", c.blocks_per_stage},
            {"stem_kernel", c.stem_kernel},
            {"stem_stride", c.stem_stride},
            {"mlp_ratio", c.mlp_ratio},
            {"filter_kind", to_string(c.filter_kind)},
            {"decoder_kind", to_string(c.decoder_kind)},
            {"pad_mode", to_string(c.pad_mode)},
            {"fusion_orientation", to_string(c.fusion_orientation)},
            {"num_classes", c.num_classes},
            {"in_channels", c.in_channels}};
}

/// A "preset" key, when present, seeds the defaults the other keys override.
inline FsegConfig model_from_json(const nlohmann::json& j, const std::string& path = "model")
{
    detail::StrictObject o(j, path);
    std::string preset = "fseg-s-reduced";
    o.get("preset", preset);
    FsegConfig c = FsegConfig::preset(preset);
    o.get("feature_dims", c.feature_dims);
    o.get("blocks_per_stage", c.blocks_per_stage);
    o.get("stem_kernel", c.stem_kernel);
    o.get("stem_stride", c.stem_stride);
    o.get("mlp_ratio", c.mlp_ratio);
    o.get_enum("filter_kind", c.filter_kind, detail::kFilterNames);
    o.get_enum("decoder_kind", c.decoder_kind, detail::kDecoderNames);
    o.get_enum("pad_mode", c.pad_mode, detail::kPadNames);
    o.get_enum("fusion_orientation", c.fusion_orientation, detail::kOrientationNames);
    o.get("num_classes", c.num_classes);
    o.get("in_channels", c.in_channels);
    o.finish();
    c.validate();
    return c;
}

inline nlohmann::json to_json(const RunConfig& r)
{
    const auto& t = r.train;
    const auto& p = r.data.phantom;
    const auto& a = r.data.augment;
    return {
        {"seed", r.seed},
        {"model", to_json(r.model)},
        {"train",
         {{"lr", t.optim.lr},
          {"weight_decay", t.optim.weight_decay},
          {"betas", {t.optim.beta1, t.optim.beta2}},
          {"eps", t.optim.eps},
          {"batch_size", t.batch_size},
          {"patch_size", t.patch_size},
          {"max_steps", t.max_steps},
          {"val_interval", t.val_interval},
          {"lambda", t.lambda},
          {"deterministic", t.deterministic}}},
        {"data",
         {{"count", r.data.count},
          {"split_ratio", r.data.split_ratio},
          {"phantom",
           {{"size", p.size},
            {"n_tubes", p.n_tubes},
            {"radius_range", p.radius_range},
            {"curvature", p.curvature},
            {"fg_intensity", p.fg_intensity},
            {"bg_intensity", p.bg_intensity},
            {"noise_sigma", p.noise_sigma}}},
          {"augment",
           {{"clip_lo", a.clip_lo},
            {"clip_hi", a.clip_hi},
            {"flip_rot_prob", a.flip_rot_prob},
            {"intensity_scale_prob", a.intensity_scale_prob},
            {"scale_range", a.scale_range},
            {"intensity_shift_prob", a.intensity_shift_prob},
            {"shift_range", a.shift_range}}}}},
        {"infer", {{"window", r.infer.window}, {"overlap", r.infer.overlap}}},
        {"ablation", {{"max_steps", r.ablation.max_steps}, {"seeds", r.ablation.seeds}}},
    };
}

/// Missing keys keep their defaults; unknown keys throw ConfigError.
inline RunConfig run_config_from_json(const nlohmann::json& j)
{
    RunConfig r;
    detail::StrictObject root(j, "config");
    root.get("seed", r.seed);
    if (const auto* m = root.child("model")) r.model = model_from_json(*m);
    if (const auto* tj = root.child("train")) {
        detail::StrictObject o(*tj, "config.train");
        auto& t = r.train;
        o.get("lr", t.optim.lr);
        o.get("weight_decay", t.optim.weight_decay);
        std::array<double, 2> betas{t.optim.beta1, t.optim.beta2};
        o.get("betas", betas);
        t.optim.beta1 = betas[0];
        t.optim.beta2 = betas[1];
        o.get("eps", t.optim.eps);
        o.get("batch_size", t.batch_size);
        o.get("patch_size", t.patch_size);
        o.get("max_steps", t.max_steps);
        o.get("val_interval", t.val_interval);
        o.get("lambda", t.lambda);
        o.get("deterministic", t.deterministic);
        o.finish();
    }
    if (const auto* dj = root.child("data")) {
        detail::StrictObject o(*dj, "config.data");
        o.get("count", r.data.count);
        o.get("split_ratio", r.data.split_ratio);
        if (const auto* pj = o.child("phantom")) {
            detail::StrictObject po(*pj, "config.data.phantom");
            auto& p = r.data.phantom;
            po.get("size", p.size);
            po.get("n_tubes", p.n_tubes);
            po.get("radius_range", p.radius_range);
            po.get("curvature", p.curvature);
            po.get("fg_intensity", p.fg_intensity);
            po.get("bg_intensity", p.bg_intensity);
            po.get("noise_sigma", p.noise_sigma);
            po.finish();
        }
        if (const auto* aj = o.child("augment")) {
            detail::StrictObject ao(*aj, "config.data.augment");
            auto& a = r.data.augment;
            ao.get("clip_lo", a.clip_lo);
            ao.get("clip_hi", a.clip_hi);
            ao.get("flip_rot_prob", a.flip_rot_prob);
            ao.get("intensity_scale_prob", a.intensity_scale_prob);
            ao.get("scale_range", a.scale_range);
            ao.get("intensity_shift_prob", a.intensity_shift_prob);
            ao.get("shift_range", a.shift_range);
            ao.finish();
        }
        o.finish();
    }
    if (const auto* ij = root.child("infer")) {
        detail::StrictObject o(*ij, "config.infer");
        o.get("window", r.infer.window);
        o.get("overlap", r.infer.overlap);
        o.finish();
    }
    if (const auto* aj = root.child("ablation")) {
        detail::StrictObject o(*aj, "config.ablation");
        o.get("max_steps", r.ablation.max_steps);
        o.get("seeds", r.ablation.seeds);
        o.finish();
    }
    root.finish();
    r.validate();
    return r;
}

inline RunConfig load_run_config(const std::filesystem::path& path)
{
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path.string());
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
    }
    return run_config_from_json(j);
}

inline void save_run_config(const std::filesystem::path& path, const RunConfig& r)
{
    std::ofstream os(path);
    if (!os) throw FormatError("cannot write config snapshot " + path.string());
    os << to_json(r).dump(2) << '\n';
}

} // namespace fseg
