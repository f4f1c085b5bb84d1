#pragma once

// On-disk phantom datasets: one image/label volume pair per item, a manifest
// (JSON list of {id, image, label}) and a split file {train, val, test}.

#include <filesystem>
#include <map>

#include "fseg/config.hpp"

namespace fseg {

struct Sample {
    std::string id;
    Volume image;
    LabelVolume label;
};

struct Dataset {
    std::vector<Sample> samples;
    Split split;

    const Sample& get(const std::string& id) const
    {
        for (const auto& s : samples)
            if (s.id == id) return s;
        throw ConfigError("dataset has no item with id " + id);
    }
    std::vector<const Sample*> part(const std::vector<std::string>& ids) const
    {
        std::vector<const Sample*> out;
        for (const auto& id : ids) out.push_back(&get(id));
        return out;
    }
    std::vector<const Sample*> part(std::string_view name) const
    {
        if (name == "train") return part(split.train);
        if (name == "val") return part(split.val);
        if (name == "test") return part(split.test);
        throw ConfigError("unknown split '" + std::string(name) + "' (expected train, val or test)");
    }
};

inline std::string phantom_id(std::size_t i)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "phantom_%03zu", i);
    return buf;
}

/// Generates `data.count` phantoms (item i seeded from the run seed and i),
/// writes them with manifest.json and split.json, and returns the dataset.
inline Dataset write_phantom_dataset(const std::filesystem::path& dir, const DataConfig& data, std::uint64_t seed)
{
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < data.count; ++i) ids.push_back(phantom_id(i));
    Dataset ds;
    ds.split = split_dataset(ids, data.split_ratio, derive_seed(seed, seed_stream::split));

    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw FormatError("cannot create dataset directory " + dir.string() + ": " + ec.message());
    nlohmann::json manifest = nlohmann::json::array();
    for (std::size_t i = 0; i < data.count; ++i) {
        PhantomSpec spec = data.phantom;
        spec.seed = derive_seed(seed, seed_stream::phantom + i);
        auto ph = generate_phantom(spec);
        save_volume(dir / (ids[i] + "_image"), ph.image);
        save_label(dir / (ids[i] + "_label"), ph.label);
        manifest.push_back({{"id", ids[i]}, {"image", ids[i] + "_image"}, {"label", ids[i] + "_label"}});
        ds.samples.push_back({ids[i], std::move(ph.image), std::move(ph.label)});
    }
    std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
    std::ofstream(dir / "split.json") << nlohmann::json{{"train", ds.split.train}, {"val", ds.split.val},
                                                        {"test", ds.split.test}}.dump(2)
                                      << '\n';
    return ds;
}

inline Dataset load_dataset(const std::filesystem::path& dir)
{
    const auto mpath = dir / "manifest.json";
    if (!std::filesystem::exists(mpath)) throw FormatError("dataset manifest not found: " + mpath.string());
    Dataset ds;
    try {
        nlohmann::json manifest;
        std::ifstream(mpath) >> manifest;
        for (const auto& e : manifest) {
            Sample s{e.at("id").get<std::string>(), load_volume(dir / e.at("image").get<std::string>()),
                     load_label(dir / e.at("label").get<std::string>())};
            if (s.image.dims != s.label.dims) throw FormatError("image and label extents differ for " + s.id);
            ds.samples.push_back(std::move(s));
        }
        const auto spath = dir / "split.json";
        if (!std::filesystem::exists(spath)) throw FormatError("dataset split file not found: " + spath.string());
        nlohmann::json split;
        std::ifstream(spath) >> split;
        ds.split.train = split.at("train").get<std::vector<std::string>>();
        ds.split.val = split.at("val").get<std::vector<std::string>>();
        ds.split.test = split.at("test").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("corrupt dataset files in " + dir.string() + ": " + e.what());
    }
    for (const auto* part : {&ds.split.train, &ds.split.val, &ds.split.test})
        for (const auto& id : *part) ds.get(id);
    return ds;
}

} // namespace fseg
