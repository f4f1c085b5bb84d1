#pragma once

// Library side of the `fseg` subcommands. Each command writes its resolved
// configuration next to its outputs as config.json.

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>

#include "fseg/summary.hpp"
#include "fseg/train.hpp"

namespace fseg {

namespace detail {

inline void ensure_dir(const std::filesystem::path& dir)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw FormatError("cannot create output directory " + dir.string() + ": " + ec.message());
}

inline std::ofstream open_csv(const std::filesystem::path& path)
{
    std::ofstream os(path);
    if (!os) throw FormatError("cannot write " + path.string());
    os.precision(9);
    return os;
}

/// Binary PGM of a row-major slice, linearly scaled from [lo, hi] to 0..255.
inline void write_pgm(const std::filesystem::path& path, const std::vector<double>& px, std::size_t rows,
                      std::size_t cols, double lo, double hi)
{
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot write " + path.string());
    os << "P5\n" << cols << ' ' << rows << "\n255\n";
    const double span = hi > lo ? hi - lo : 1.0;
    for (double v : px) os.put(static_cast<char>(static_cast<unsigned char>(std::clamp((v - lo) / span, 0.0, 1.0) * 255.0 + 0.5)));
}

} // namespace detail

// ---------------------------------------------------------------------------
// phantom

inline Dataset cmd_phantom(const RunConfig& cfg, const std::filesystem::path& out_dir)
{
    cfg.validate();
    detail::ensure_dir(out_dir);
    auto ds = write_phantom_dataset(out_dir, cfg.data, cfg.seed);
    save_run_config(out_dir / "config.json", cfg);
    return ds;
}

// ---------------------------------------------------------------------------
// train / eval / infer

struct TrainOutcome {
    TrainResult train;
    Evaluation test;
};

inline void write_evaluation_csv(const std::filesystem::path& path, const Evaluation& ev)
{
    auto os = detail::open_csv(path);
    os << "volume_id,class,dice,iou\n";
    for (const auto& r : ev.rows)
        for (std::size_t k = 0; k < r.class_dice.size(); ++k)
            os << r.id << ',' << k + 1 << ',' << r.class_dice[k] << ',' << r.class_iou[k] << '\n';
    // aggregate over volumes of the foreground-mean scores
    os << "mean,foreground," << ev.dice_mean << ',' << ev.iou_mean << '\n';
    os << "std,foreground," << ev.dice_std << ',' << ev.iou_std << '\n';
}

/// Trains cfg.model on the dataset in data_dir; writes train_log.csv, best/last
/// checkpoints and test_metrics.csv (final weights on the test split).
inline TrainOutcome train_on(const RunConfig& cfg, const Dataset& ds, const std::filesystem::path& out_dir)
{
    cfg.validate();
    detail::ensure_dir(out_dir);
    save_run_config(out_dir / "config.json", cfg);
    const std::size_t p = cfg.train.patch_size;
    FsegNet<float> net(cfg.model, {p, p, p}, derive_seed(cfg.seed, seed_stream::model_init));
    Trainer<float> trainer(net, cfg.train, cfg.data.augment, cfg.infer, cfg.seed);
    TrainOutcome out;
    out.train = trainer.run(ds.part("train"), ds.part("val"), out_dir);
    out.test = evaluate(net, ds.part("test"), cfg.infer, cfg.data.augment);
    write_evaluation_csv(out_dir / "test_metrics.csv", out.test);
    return out;
}

inline TrainOutcome cmd_train(const RunConfig& cfg, const std::filesystem::path& data_dir,
                              const std::filesystem::path& out_dir)
{
    const auto ds = load_dataset(data_dir);
    auto out = train_on(cfg, ds, out_dir);
    log::info("train: best val Dice " + std::to_string(out.train.best_val_dice) + " at step " +
              std::to_string(out.train.best_step) + "; test Dice " + std::to_string(out.test.dice_mean) + " +/- " +
              std::to_string(out.test.dice_std) + ", IoU " + std::to_string(out.test.iou_mean) + " +/- " +
              std::to_string(out.test.iou_std));
    return out;
}

/// Loads the model a checkpoint describes, with its weights.
inline FsegNet<float> load_model(const std::filesystem::path& checkpoint)
{
    const auto info = read_checkpoint_info(checkpoint);
    FsegNet<float> net(info.model, info.input, info.seed);
    load_checkpoint(checkpoint, net);
    return net;
}

namespace detail {

// The inference window must equal the model's input extent, so it follows the checkpoint.
inline RunConfig with_model_window(RunConfig cfg, const FsegNet<float>& net)
{
    const std::size_t w = net.input_dims()[0];
    if (cfg.infer.window != w) {
        log::info("infer.window set to the checkpoint's input extent " + std::to_string(w));
        cfg.infer.window = w;
    }
    cfg.validate();
    return cfg;
}

} // namespace detail

inline Evaluation cmd_eval(const RunConfig& base, const std::filesystem::path& checkpoint,
                           const std::filesystem::path& data_dir, const std::string& split,
                           const std::filesystem::path& out_dir)
{
    base.validate();
    const auto net = load_model(checkpoint);
    const auto cfg = detail::with_model_window(base, net);
    const auto ds = load_dataset(data_dir);
    const auto items = ds.part(split);
    for (const auto* s : items)
        for (auto l : s->label.data)
            if (l >= net.config().num_classes)
                throw ConfigError("dataset item " + s->id + " has label " + std::to_string(l) +
                                  " but the checkpoint predicts " + std::to_string(net.config().num_classes) +
                                  " classes");
    detail::ensure_dir(out_dir);
    save_run_config(out_dir / "config.json", cfg);
    const auto ev = evaluate(net, items, cfg.infer, cfg.data.augment);
    write_evaluation_csv(out_dir / ("eval_" + split + ".csv"), ev);
    return ev;
}

/// Writes `<out_dir>/<name>_pred` (labels) and `<name>_prob` (foreground probability).
inline Inference<float> cmd_infer(const RunConfig& base, const std::filesystem::path& checkpoint,
                                  const std::filesystem::path& image, const std::filesystem::path& out_dir)
{
    base.validate();
    const auto net = load_model(checkpoint);
    const auto cfg = detail::with_model_window(base, net);
    const auto vol = load_volume(image);
    auto inf = sliding_window_infer(net, preprocess<float>(vol, cfg.data.augment), cfg.infer);
    inf.labels.spacing = inf.foreground_prob.spacing = vol.spacing;
    detail::ensure_dir(out_dir);
    save_run_config(out_dir / "config.json", cfg);
    auto stem = image.stem().string();
    save_label(out_dir / (stem + "_pred"), inf.labels);
    save_volume(out_dir / (stem + "_prob"), inf.foreground_prob);
    return inf;
}

// ---------------------------------------------------------------------------
// aliasing-demo

struct AliasingReport {
    std::vector<double> linear_1d, circular_1d, padded_1d;
    double wrap_error = 0;            // max |circular - linear| over the input extents
    double padded_interior_error = 0; // max |padded - linear| over the input extents
};

/// The shipped example: a 16^3 volume holding an off-centre bright cube on a
/// gradient and a 5^3 box-like kernel.
inline std::pair<Tensor<double>, Tensor<double>> aliasing_example()
{
    constexpr std::size_t n = 16, k = 5;
    Tensor<double> x(Shape{1, n, n, n});
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t c = 0; c < n; ++c) {
                const bool cube = a >= 9 && a < 15 && b >= 9 && b < 15 && c >= 9 && c < 15;
                x[(a * n + b) * n + c] = 0.02 * double(a + b + c) + (cube ? 1.0 : 0.0);
            }
    Tensor<double> w(Shape{1, k, k, k});
    for (std::size_t a = 0; a < k; ++a)
        for (std::size_t b = 0; b < k; ++b)
            for (std::size_t c = 0; c < k; ++c) w[(a * k + b) * k + c] = 1.0 / double(1 + a + b + c);
    return {x, w};
}

inline AliasingReport cmd_aliasing_demo(const std::filesystem::path& out_dir)
{
    detail::ensure_dir(out_dir);
    AliasingReport rep;
    auto values = [](const Tensor<double>& t) { return std::vector<double>(t.values().begin(), t.values().end()); };
    {
        Tensor<double> x(Shape{1, 1, 1, 3}, std::vector<double>{1, 2, 3});
        Tensor<double> k(Shape{1, 1, 1, 2}, std::vector<double>{1, 1});
        const auto d = circular_vs_linear_demo(x, k);
        rep.linear_1d = values(d.linear);
        rep.circular_1d = values(d.circular);
        rep.padded_1d = values(d.padded_full);
    }
    const auto [x, w] = aliasing_example();
    const auto d = circular_vs_linear_demo(x, w);
    const std::size_t n = x.extent(1), l = d.linear.extent(1);
    const std::size_t nv = n * n * n;
    std::vector<double> lin(nv), circ(nv), pad(nv);
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = 0; b < n; ++b)
            for (std::size_t c = 0; c < n; ++c) {
                const std::size_t i = (a * n + b) * n + c;
                lin[i] = d.linear[(a * l + b) * l + c];
                circ[i] = d.circular[i];
                pad[i] = d.padded[i];
                rep.wrap_error = std::max(rep.wrap_error, std::abs(circ[i] - lin[i]));
                rep.padded_interior_error = std::max(rep.padded_interior_error, std::abs(pad[i] - lin[i]));
            }

    {
        auto os = detail::open_csv(out_dir / "aliasing_1d.csv");
        os << "method,index,value\n";
        auto emit = [&](const char* m, const std::vector<double>& v) {
            for (std::size_t i = 0; i < v.size(); ++i) os << m << ',' << i << ',' << v[i] << '\n';
        };
        emit("linear", rep.linear_1d);
        emit("circular", rep.circular_1d);
        emit("padded", rep.padded_1d);
    }
    std::vector<double> dcirc(nv), dpad(nv);
    for (std::size_t i = 0; i < nv; ++i) {
        dcirc[i] = circ[i] - lin[i];
        dpad[i] = pad[i] - lin[i];
    }
    {
        auto os = detail::open_csv(out_dir / "aliasing_3d.csv");
        os << "method,index,value\n";
        auto emit = [&](const char* m, const std::vector<double>& v) {
            for (std::size_t i = 0; i < v.size(); ++i) os << m << ',' << i << ',' << v[i] << '\n';
        };
        emit("linear", lin);
        emit("circular", circ);
        emit("padded", pad);
        emit("diff_circular", dcirc);
        emit("diff_padded", dpad);
    }

    // mid-depth slices
    const std::size_t mid = 12;
    auto slice = [&](const std::vector<double>& v) {
        return std::vector<double>(v.begin() + mid * n * n, v.begin() + (mid + 1) * n * n);
    };
    double lo = *std::min_element(lin.begin(), lin.end()), hi = *std::max_element(lin.begin(), lin.end());
    detail::write_pgm(out_dir / "slice_linear.pgm", slice(lin), n, n, lo, hi);
    detail::write_pgm(out_dir / "slice_circular.pgm", slice(circ), n, n, lo, hi);
    detail::write_pgm(out_dir / "slice_padded.pgm", slice(pad), n, n, lo, hi);
    const double dmax = std::max(rep.wrap_error, 1e-300);
    detail::write_pgm(out_dir / "slice_diff_circular.pgm", slice(dcirc), n, n, -dmax, dmax);
    detail::write_pgm(out_dir / "slice_diff_padded.pgm", slice(dpad), n, n, -dmax, dmax);

    std::ofstream(out_dir / "summary.json")
        << nlohmann::json{{"wrap_error_max_abs", rep.wrap_error},
                          {"padded_interior_error_max_abs", rep.padded_interior_error}}.dump(2)
        << '\n';
    return rep;
}

// ---------------------------------------------------------------------------
// ablate

struct AblationCell {
    DecoderKind decoder;
    FilterKind filter;
    PadMode pad;
    double reference_dice, reference_std;
};

/// The six configurations in reference row order, with their published Dice.
inline constexpr std::array<AblationCell, 6> kAblationCells{{
    {DecoderKind::skip, FilterKind::dwconv7, PadMode::none, 0.8365, 0.0158},
    {DecoderKind::skip, FilterKind::fourier, PadMode::none, 0.8405, 0.0105},
    {DecoderKind::skip, FilterKind::fourier, PadMode::doubled, 0.8427, 0.0168},
    {DecoderKind::fusion, FilterKind::dwconv7, PadMode::none, 0.8401, 0.0135},
    {DecoderKind::fusion, FilterKind::fourier, PadMode::none, 0.8435, 0.0119},
    {DecoderKind::fusion, FilterKind::fourier, PadMode::doubled, 0.8437, 0.0061},
}};

inline std::string cell_name(const AblationCell& c)
{
    return to_string(c.decoder) + "_" + to_string(c.filter) + "_" + (c.pad == PadMode::none ? "none" : "padding");
}

/// Config of one ablation run: the base config with the cell's axes, the
/// ablation step budget and a seed derived from the run seed and `seed_index`.
inline RunConfig ablation_run_config(const RunConfig& base, const AblationCell& cell, std::size_t seed_index)
{
    RunConfig r = base;
    r.model.decoder_kind = cell.decoder;
    r.model.filter_kind = cell.filter;
    r.model.pad_mode = cell.pad;
    r.train.max_steps = base.ablation.max_steps;
    r.train.val_interval = std::max<std::size_t>(1, base.ablation.max_steps);
    r.seed = derive_seed(base.seed, 100 + seed_index);
    return r;
}

inline std::filesystem::path ablation_run_dir(const std::filesystem::path& out_dir, const AblationCell& cell,
                                              std::size_t seed_index)
{
    return out_dir / cell_name(cell) / ("seed" + std::to_string(seed_index));
}

struct AblationRow {
    AblationCell cell;
    std::vector<double> dice;
    double mean = 0, stddev = 0;
};

inline std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, const std::filesystem::path& data_dir,
                                           const std::filesystem::path& out_dir)
{
    cfg.validate();
    const auto ds = load_dataset(data_dir);
    detail::ensure_dir(out_dir);
    save_run_config(out_dir / "config.json", cfg);
    std::vector<AblationRow> rows;
    for (const auto& cell : kAblationCells) {
        AblationRow row{cell, {}, 0, 0};
        for (std::size_t s = 0; s < cfg.ablation.seeds; ++s) {
            const auto r = ablation_run_config(cfg, cell, s);
            const auto out = train_on(r, ds, ablation_run_dir(out_dir, cell, s));
            row.dice.push_back(out.test.dice_mean);
            log::info("ablate: " + cell_name(cell) + " seed " + std::to_string(s) + " test Dice " +
                      std::to_string(out.test.dice_mean));
        }
        std::tie(row.mean, row.stddev) = mean_std(row.dice);
        rows.push_back(std::move(row));
    }
    auto os = detail::open_csv(out_dir / "ablation.csv");
    os << "decoder,filter,padding,dice_mean,dice_std,seeds,reference_dice,reference_std\n";
    for (const auto& r : rows)
        os << to_string(r.cell.decoder) << ',' << to_string(r.cell.filter) << ','
           << (r.cell.pad == PadMode::none ? "none" : "padding") << ',' << r.mean << ',' << r.stddev << ','
           << r.dice.size() << ',' << r.cell.reference_dice << ',' << r.cell.reference_std << '\n';
    return rows;
}

// ---------------------------------------------------------------------------
// flops

struct FlopsRow {
    std::string preset;
    ModelSummary summary;
    std::optional<ReferenceCost> reference;
};

inline std::vector<FlopsRow> cmd_flops(const std::vector<std::string>& presets, Dims3 input, std::ostream& os,
                                       const std::optional<std::filesystem::path>& out_dir = std::nullopt)
{
    std::vector<FlopsRow> rows;
    for (const auto& p : presets) {
        FlopsRow r{p, summarize_model(FsegConfig::preset(p), input), std::nullopt};
        for (const auto& ref : kReferenceCosts)
            if (p == ref.preset) r.reference = ref;
        rows.push_back(std::move(r));
    }
    const std::string in = std::to_string(input[0]) + "x" + std::to_string(input[1]) + "x" + std::to_string(input[2]);
    os << "input size: " << in << " (batch 1, " << 1 << " input channel)\n";
    os << std::left << std::setw(16) << "preset" << std::right << std::setw(14) << "params(M)" << std::setw(14)
       << "GFLOPs" << std::setw(16) << "act(MB est.)" << std::setw(18) << "ref params(M)" << std::setw(14)
       << "ref GFLOPs" << "\n";
    os << std::fixed;
    for (const auto& r : rows) {
        os << std::left << std::setw(16) << r.preset << std::right << std::setprecision(3) << std::setw(14)
           << double(r.summary.total_params) / 1e6 << std::setw(14) << r.summary.total_flops / 1e9 << std::setw(16)
           << r.summary.peak_activation_bytes / 1e6;
        if (r.reference)
            os << std::setprecision(2) << std::setw(18) << r.reference->mparams << std::setw(14) << r.reference->gflops;
        else
            os << std::setw(18) << "-" << std::setw(14) << "-";
        os << '\n';
    }
    os << "reference columns: published values at 96x96x96, reference, not asserted\n";
    for (const auto& r : rows) {
        os << "\n" << r.preset << " per-module breakdown\n";
        for (const auto& m : r.summary.modules)
            os << "  " << std::left << std::setw(16) << m.name << std::right << std::setw(12) << m.params
               << std::setprecision(4) << std::setw(14) << m.flops / 1e9 << " GFLOPs\n";
    }
    os.unsetf(std::ios::floatfield);

    if (out_dir) {
        detail::ensure_dir(*out_dir);
        auto cs = detail::open_csv(*out_dir / "flops.csv");
        cs << "preset,input,params,flops,ref_params_m,ref_gflops,reference_status\n";
        for (const auto& r : rows) {
            cs << r.preset << ',' << in << ',' << r.summary.total_params << ',' << r.summary.total_flops << ',';
            if (r.reference) cs << r.reference->mparams << ',' << r.reference->gflops << ",reference_not_asserted\n";
            else cs << ",,none\n";
        }
    }
    return rows;
}

} // namespace fseg
