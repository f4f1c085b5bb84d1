#include <iostream>

#include <CLI11.hpp>

#include "fseg/fseg.hpp"

namespace {

struct Common {
    std::string config;
    std::string out = "out";
    bool deterministic = false;
    std::optional<std::uint64_t> seed;

    void attach(CLI::App* app, bool needs_out = true)
    {
        app->add_option("--config", config, "run configuration JSON")->check(CLI::ExistingFile);
        if (needs_out) app->add_option("--out", out, "output directory");
        app->add_flag("--deterministic", deterministic, "bit-reproducible outputs (wall_ms logged as 0)");
        app->add_option("--seed", seed, "overrides the config seed");
    }

    fseg::RunConfig resolve() const
    {
        fseg::RunConfig cfg = config.empty() ? fseg::RunConfig{} : fseg::load_run_config(config);
        if (seed) cfg.seed = *seed;
        if (deterministic) cfg.train.deterministic = true;
        cfg.validate();
        return cfg;
    }
};

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Frequency-domain 3D segmentation toolkit"};
    app.require_subcommand(1);
    bool quiet = false;
    app.add_flag("-q,--quiet", quiet, "only log warnings and errors");

    Common phantom_opts, train_opts, eval_opts, infer_opts, ablate_opts, demo_opts, flops_opts;
    demo_opts.out = "aliasing";
    std::string data_dir = "data", checkpoint, split = "test", image;
    std::vector<std::string> presets{"fseg-s", "fseg-m", "fseg-l"};
    std::size_t input = 96;
    std::string flops_out;
    std::string resume;

    auto* phantom = app.add_subcommand("phantom", "generate a synthetic phantom dataset");
    phantom_opts.attach(phantom);

    auto* train = app.add_subcommand("train", "train a model on a dataset");
    train_opts.attach(train);
    train->add_option("--data", data_dir, "dataset directory")->required();
    train->add_option("--resume", resume, "checkpoint to continue from");

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    eval_opts.attach(eval);
    eval->add_option("--checkpoint", checkpoint, "checkpoint base path")->required();
    eval->add_option("--data", data_dir, "dataset directory")->required();
    eval->add_option("--split", split, "train, val or test");

    auto* infer = app.add_subcommand("infer", "sliding-window inference on one volume");
    infer_opts.attach(infer);
    infer->add_option("--checkpoint", checkpoint, "checkpoint base path")->required();
    infer->add_option("--image", image, "image volume base path")->required();

    auto* demo = app.add_subcommand("aliasing-demo", "circular vs linear convolution demonstration");
    demo_opts.attach(demo);

    auto* ablate = app.add_subcommand("ablate", "decoder x filter x padding ablation");
    ablate_opts.attach(ablate);
    ablate->add_option("--data", data_dir, "dataset directory")->required();

    auto* flops = app.add_subcommand("flops", "parameter and FLOP report");
    flops_opts.attach(flops, false);
    flops->add_option("--preset", presets, "presets to report");
    flops->add_option("--input", input, "cubic input extent")->check(CLI::PositiveNumber);
    flops->add_option("--out", flops_out, "also write flops.csv here");

    CLI11_PARSE(app, argc, argv);
    if (quiet) fseg::log::threshold() = fseg::log::Level::warn;

    try {
        if (*phantom) {
            const auto ds = fseg::cmd_phantom(phantom_opts.resolve(), phantom_opts.out);
            std::cout << "wrote " << ds.samples.size() << " phantoms to " << phantom_opts.out << " (split "
                      << ds.split.train.size() << "/" << ds.split.val.size() << "/" << ds.split.test.size() << ")\n";
        } else if (*train) {
            const auto cfg = train_opts.resolve();
            fseg::TrainOutcome out;
            if (resume.empty()) {
                out = fseg::cmd_train(cfg, data_dir, train_opts.out);
            } else {
                const auto ds = fseg::load_dataset(data_dir);
                const std::size_t p = cfg.train.patch_size;
                fseg::FsegNet<float> net(cfg.model, {p, p, p}, fseg::derive_seed(cfg.seed, fseg::seed_stream::model_init));
                fseg::Trainer<float> trainer(net, cfg.train, cfg.data.augment, cfg.infer, cfg.seed);
                trainer.resume(resume);
                std::filesystem::create_directories(train_opts.out);
                fseg::save_run_config(std::filesystem::path(train_opts.out) / "config.json", cfg);
                out.train = trainer.run(ds.part("train"), ds.part("val"), std::filesystem::path(train_opts.out));
                out.test = fseg::evaluate(net, ds.part("test"), cfg.infer, cfg.data.augment);
                fseg::write_evaluation_csv(std::filesystem::path(train_opts.out) / "test_metrics.csv", out.test);
            }
            std::cout << "best val Dice " << out.train.best_val_dice << " (step " << out.train.best_step
                      << "), test Dice " << out.test.dice_mean << " +/- " << out.test.dice_std << ", IoU "
                      << out.test.iou_mean << " +/- " << out.test.iou_std << "\n";
        } else if (*eval) {
            const auto ev = fseg::cmd_eval(eval_opts.resolve(), checkpoint, data_dir, split, eval_opts.out);
            for (const auto& r : ev.rows) std::cout << r.id << "  Dice " << r.dice << "  IoU " << r.iou << "\n";
            std::cout << "Dice " << ev.dice_mean << " +/- " << ev.dice_std << ", IoU " << ev.iou_mean << " +/- "
                      << ev.iou_std << "\n";
        } else if (*infer) {
            const auto inf = fseg::cmd_infer(infer_opts.resolve(), checkpoint, image, infer_opts.out);
            std::size_t fg = 0;
            for (auto l : inf.labels.data) fg += l != 0;
            std::cout << "wrote prediction to " << infer_opts.out << " (" << fg << " foreground voxels)\n";
        } else if (*demo) {
            const auto cfg = demo_opts.resolve();
            const auto rep = fseg::cmd_aliasing_demo(demo_opts.out);
            fseg::save_run_config(std::filesystem::path(demo_opts.out) / "config.json", cfg);
            std::cout << "wrap-around max abs error " << rep.wrap_error << ", padded interior max abs error "
                      << rep.padded_interior_error << "\n";
        } else if (*ablate) {
            const auto rows = fseg::cmd_ablate(ablate_opts.resolve(), data_dir, ablate_opts.out);
            for (const auto& r : rows)
                std::cout << fseg::cell_name(r.cell) << "  " << r.mean << " +/- " << r.stddev << "  (reference "
                          << r.cell.reference_dice << ")\n";
        } else if (*flops) {
            const auto cfg = flops_opts.resolve();
            std::optional<std::filesystem::path> out;
            if (!flops_out.empty()) out = flops_out;
            fseg::cmd_flops(presets, {input, input, input}, std::cout, out);
            if (out) fseg::save_run_config(*out / "config.json", cfg);
        }
    } catch (const std::exception& e) {
        std::cerr << "fseg: error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
