#pragma once

// Model checkpoints: `<base>.json` manifest (config, parameter table with
// shapes and byte offsets, seed, step) and `<base>.bin` holding the parameter
// values, followed by the optimizer moments when saved, all little-endian.

#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>

#include "fseg/config.hpp"

namespace fseg {

struct CheckpointInfo {
    FsegConfig model;
    Dims3 input{};
    std::uint64_t seed = 0;
    std::uint64_t step = 0;
    double val_dice = -1.0;
};

namespace detail {

template <std::floating_point T>
constexpr const char* dtype_name()
{
    return sizeof(T) == 4 ? "f32le" : "f64le";
}

inline std::filesystem::path ckpt_path(const std::filesystem::path& base, const char* ext)
{
    auto p = base;
    if (p.extension() == ".json" || p.extension() == ".bin") p.replace_extension();
    return p.string() + ext;
}

} // namespace detail

template <std::floating_point T>
void save_checkpoint(const std::filesystem::path& base, const FsegNet<T>& net, const CheckpointInfo& info,
                     const AdamWState* opt = nullptr)
{
    static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
    using nlohmann::json;
    json params = json::array();
    std::uint64_t offset = 0;
    for (const auto& p : net.parameters().entries()) {
        const std::uint64_t bytes = p.count() * sizeof(T);
        params.push_back({{"name", p.name},
                          {"shape", p.shape()},
                          {"complex", p.is_complex()},
                          {"offset", offset},
                          {"bytes", bytes}});
        offset += bytes;
    }
    json manifest{{"format", "fseg-checkpoint-1"},
                  {"model", to_json(net.config())},
                  {"input", net.input_dims()},
                  {"dtype", detail::dtype_name<T>()},
                  {"seed", info.seed},
                  {"step", info.step},
                  {"val_dice", info.val_dice},
                  {"params", params},
                  {"params_bytes", offset}};
    if (opt) manifest["optimizer"] = {{"kind", "adamw"}, {"step", opt->step}, {"offset", offset}, {"dtype", "f64le"}};

    const auto bin = detail::ckpt_path(base, ".bin");
    std::ofstream os(bin, std::ios::binary);
    if (!os) throw FormatError("cannot write checkpoint blob " + bin.string());
    for (const auto& p : net.parameters().entries()) {
        auto v = p.flat_values();
        os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
    }
    if (opt)
        for (const auto* moments : {&opt->m, &opt->v})
            for (const auto& m : *moments)
                os.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * 8));
    if (!os) throw FormatError("failed writing checkpoint blob " + bin.string());

    const auto js = detail::ckpt_path(base, ".json");
    std::ofstream ms(js);
    if (!ms) throw FormatError("cannot write checkpoint manifest " + js.string());
    ms << manifest.dump(2) << '\n';
}

inline nlohmann::json read_checkpoint_manifest(const std::filesystem::path& base)
{
    const auto js = detail::ckpt_path(base, ".json");
    std::ifstream is(js);
    if (!is) throw FormatError("cannot open checkpoint manifest " + js.string());
    nlohmann::json m;
    try {
        is >> m;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("corrupt checkpoint manifest " + js.string() + ": " + e.what());
    }
    if (m.value("format", "") != "fseg-checkpoint-1")
        throw FormatError("unrecognised checkpoint format in " + js.string());
    return m;
}

inline CheckpointInfo read_checkpoint_info(const std::filesystem::path& base)
{
    const auto m = read_checkpoint_manifest(base);
    try {
        CheckpointInfo info;
        info.model = model_from_json(m.at("model"), "checkpoint.model");
        const auto in = m.at("input").get<std::vector<std::size_t>>();
        if (in.size() != 3) throw FormatError("checkpoint input must have 3 extents");
        info.input = {in[0], in[1], in[2]};
        info.seed = m.at("seed").get<std::uint64_t>();
        info.step = m.at("step").get<std::uint64_t>();
        info.val_dice = m.value("val_dice", -1.0);
        return info;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("corrupt checkpoint manifest " + base.string() + ": " + e.what());
    }
}

/// Copies the stored values into `net` after checking every name and shape
/// against the manifest; restores optimizer moments into `opt` when both the
/// caller and the file have them.
template <std::floating_point T>
CheckpointInfo load_checkpoint(const std::filesystem::path& base, FsegNet<T>& net, AdamWState* opt = nullptr)
{
    const auto m = read_checkpoint_manifest(base);
    const auto info = read_checkpoint_info(base);
    if (m.at("dtype").get<std::string>() != detail::dtype_name<T>())
        throw FormatError("checkpoint dtype " + m.at("dtype").get<std::string>() + " does not match the model's " +
                          detail::dtype_name<T>());
    const auto in = net.input_dims();
    if (info.input != in)
        throw ShapeError("checkpoint was built for input " + to_string(Shape(info.input.begin(), info.input.end())) +
                         ", model for " + to_string(Shape(in.begin(), in.end())));

    auto& entries = net.parameters().entries();
    const auto& table = m.at("params");
    if (table.size() != entries.size())
        throw ShapeError("checkpoint holds " + std::to_string(table.size()) + " parameters, model " +
                         std::to_string(entries.size()));

    const auto params_bytes = m.at("params_bytes").get<std::uint64_t>();
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& p = entries[i];
        const auto& e = table[i];
        const auto name = e.at("name").get<std::string>();
        const auto shape = e.at("shape").get<Shape>();
        if (name != p.name) throw ShapeError("checkpoint parameter " + std::to_string(i) + " is " + name +
                                             ", model expects " + p.name);
        if (shape != p.shape() || e.at("complex").get<bool>() != p.is_complex())
            throw ShapeError("checkpoint parameter " + name + " has shape " + to_string(shape) + ", model expects " +
                             to_string(p.shape()));
        const auto off = e.at("offset").get<std::uint64_t>();
        const auto bytes = e.at("bytes").get<std::uint64_t>();
        if (bytes != p.count() * sizeof(T) || off + bytes > params_bytes)
            throw FormatError("checkpoint parameter " + name + " has an inconsistent byte range");
    }

    const auto bin = detail::ckpt_path(base, ".bin");
    std::ifstream is(bin, std::ios::binary);
    if (!is) throw FormatError("cannot open checkpoint blob " + bin.string());
    std::vector<char> blob((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    std::uint64_t expected = params_bytes;
    std::size_t opt_scalars = 0;
    for (const auto& p : entries) opt_scalars += p.count();
    if (m.contains("optimizer")) expected += 2 * opt_scalars * 8;
    if (blob.size() != expected)
        throw FormatError("size mismatch in " + bin.string() + ": expected " + std::to_string(expected) +
                          " bytes, found " + std::to_string(blob.size()) + " bytes");

    for (std::size_t i = 0; i < entries.size(); ++i) {
        auto dst = entries[i].flat_values();
        std::memcpy(dst.data(), blob.data() + table[i].at("offset").get<std::uint64_t>(), dst.size() * sizeof(T));
    }

    if (opt && m.contains("optimizer")) {
        opt->step = m.at("optimizer").at("step").get<std::uint64_t>();
        opt->m.clear();
        opt->v.clear();
        std::size_t off = params_bytes;
        for (auto* moments : {&opt->m, &opt->v})
            for (const auto& p : entries) {
                std::vector<double> buf(p.count());
                std::memcpy(buf.data(), blob.data() + off, buf.size() * 8);
                off += buf.size() * 8;
                moments->push_back(std::move(buf));
            }
    }
    return info;
}

} // namespace fseg
