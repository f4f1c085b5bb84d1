// Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned below.
// Usage: acceptance [--work DIR] [--only 1,2,...]

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <set>
#include <sstream>

#include "fseg/fseg.hpp"
#include "support.hpp"

using namespace fseg;
namespace fs = std::filesystem;
using fseg::testing::grad_check;
using fseg::testing::random_complex;
using fseg::testing::random_projection;
using fseg::testing::random_tensor;

namespace {

namespace tol {
constexpr double fft_rel = 1e-9;
constexpr double fft_roundtrip = 1e-12;
constexpr double parseval_rel = 1e-12;
constexpr double fft_seconds = 10;
constexpr double circular_abs = 1e-6;
constexpr double linear_abs = 1e-3;
constexpr double demo_1d_abs = 1e-12;
constexpr double aliasing_seconds = 10;
constexpr double grad_rel = 1e-3;
constexpr double grad_seconds = 120;
constexpr double identity_abs = 1e-12;
constexpr double loss_hand = 0.8466;
constexpr double loss_abs = 1e-4;
constexpr double overfit_dice = 0.95;
constexpr std::size_t overfit_steps = 300;
constexpr double overfit_seconds = 600;
constexpr double e2e_dice = 0.80;
constexpr std::size_t e2e_steps = 2000;
constexpr double e2e_seconds = 3600;
constexpr std::size_t ablation_steps = 400;
constexpr std::size_t ablation_seeds = 3;
constexpr double ablation_seconds = 3600;
} // namespace tol

// Desk-scale optimizer step size for criteria 7 to 9.
constexpr double kDeskLr = 1e-3;
constexpr std::uint64_t kSeed = 0;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int prec = 4)
{
    std::ostringstream os;
    os.precision(prec);
    os << v;
    return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0)
{
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// independent oracles

using C = std::complex<double>;

std::vector<C> dft3_triple_sum(const std::vector<C>& x, std::size_t n1, std::size_t n2, std::size_t n3)
{
    std::vector<C> out(x.size());
    const double tau = 2.0 * std::numbers::pi;
    for (std::size_t k1 = 0; k1 < n1; ++k1)
        for (std::size_t k2 = 0; k2 < n2; ++k2)
            for (std::size_t k3 = 0; k3 < n3; ++k3) {
                C acc{};
                for (std::size_t a = 0; a < n1; ++a)
                    for (std::size_t b = 0; b < n2; ++b)
                        for (std::size_t c = 0; c < n3; ++c) {
                            const double ph = double(a * k1 % n1) / double(n1) + double(b * k2 % n2) / double(n2) +
                                              double(c * k3 % n3) / double(n3);
                            acc += x[(a * n2 + b) * n3 + c] * std::polar(1.0, -tau * ph);
                        }
                out[(k1 * n2 + k2) * n3 + k3] = acc;
            }
    return out;
}

Tensor<double> circular_conv(const Tensor<double>& x, const Tensor<double>& k)
{
    const std::size_t n1 = x.extent(1), n2 = x.extent(2), n3 = x.extent(3);
    const std::size_t k1 = k.extent(1), k2 = k.extent(2), k3 = k.extent(3);
    Tensor<double> y(x.shape());
    for (std::size_t a = 0; a < n1; ++a)
        for (std::size_t b = 0; b < n2; ++b)
            for (std::size_t c = 0; c < n3; ++c) {
                double acc = 0;
                for (std::size_t i = 0; i < k1; ++i)
                    for (std::size_t j = 0; j < k2; ++j)
                        for (std::size_t l = 0; l < k3; ++l)
                            acc += k[(i * k2 + j) * k3 + l] *
                                   x[(((a + n1 - i) % n1) * n2 + (b + n2 - j) % n2) * n3 + (c + n3 - l) % n3];
                y[(a * n2 + b) * n3 + c] = acc;
            }
    return y;
}

Tensor<double> linear_conv(const Tensor<double>& x, const Tensor<double>& k)
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
                            acc += k[(i * k2 + j) * k3 + l] * x[((a - i) * n2 + b - j) * n3 + c - l];
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

// Byte-level comparison of every regular file below two directories.
std::vector<std::string> tree_differences(const fs::path& a, const fs::path& b)
{
    auto listing = [](const fs::path& root) {
        std::set<std::string> files;
        for (const auto& e : fs::recursive_directory_iterator(root))
            if (e.is_regular_file()) files.insert(fs::relative(e.path(), root).string());
        return files;
    };
    auto slurp = [](const fs::path& p) {
        std::ifstream is(p, std::ios::binary);
        return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    };
    const auto fa = listing(a), fb = listing(b);
    std::vector<std::string> diffs;
    for (const auto& f : fa)
        if (!fb.count(f) || slurp(a / f) != slurp(b / f)) diffs.push_back(f);
    for (const auto& f : fb)
        if (!fa.count(f)) diffs.push_back(f);
    return diffs;
}

RunConfig desk_config()
{
    RunConfig rc;
    rc.seed = kSeed;
    rc.train.optim.lr = kDeskLr;
    rc.train.max_steps = tol::e2e_steps;
    rc.train.val_interval = 200;
    rc.train.deterministic = true;
    rc.ablation.max_steps = tol::ablation_steps;
    rc.ablation.seeds = tol::ablation_seeds;
    return rc;
}

// ---------------------------------------------------------------------------
// criteria

Outcome fft_correctness()
{
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 gen(101);
    double worst = 0, worst_rt = 0, worst_parseval = 0;
    const std::size_t ext[] = {2, 3, 4, 5, 8};
    for (auto n1 : ext)
        for (auto n2 : ext)
            for (auto n3 : ext) {
                const auto x = random_complex<double>({1, n1, n2, n3}, -1, 1, gen);
                const auto fast = fft3d(x);
                const auto slow = dft3_triple_sum(std::vector<C>(x.values().begin(), x.values().end()), n1, n2, n3);
                double diff = 0, scale = 0, ex = 0, es = 0;
                for (std::size_t i = 0; i < slow.size(); ++i) {
                    diff = std::max(diff, std::abs(fast.data[i] - slow[i]));
                    scale = std::max(scale, std::abs(slow[i]));
                    ex += std::norm(x[i]);
                    es += std::norm(fast.data[i]);
                }
                worst = std::max(worst, diff / scale);
                worst_parseval = std::max(worst_parseval, std::abs(ex - es / double(n1 * n2 * n3)) / ex);
                const auto back = ifft3d(fast);
                double rt = 0;
                for (std::size_t i = 0; i < x.size(); ++i) rt = std::max(rt, std::abs(back[i] - x[i]));
                worst_rt = std::max(worst_rt, rt);
            }
    const double t = seconds_since(t0);
    return {worst < tol::fft_rel && worst_rt < tol::fft_roundtrip && worst_parseval < tol::parseval_rel &&
                t < tol::fft_seconds,
            "125 extents: max rel err " + fmt(worst, 3) + " (< 1e-9), round trip " + fmt(worst_rt, 3) + ", Parseval " +
                fmt(worst_parseval, 3) + ", " + fmt(t, 3) + " s"};
}

Outcome aliasing(const fs::path& work)
{
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 gen(202);
    double circ = 0, lin = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const auto x = random_tensor<double>({1, 8, 8, 8}, -1, 1, gen);
        const auto k = random_tensor<double>({1, 3, 3, 3}, -1, 1, gen);
        const auto d = circular_vs_linear_demo(x, k);
        circ = std::max(circ, max_abs_diff(d.circular, circular_conv(x, k)));
        lin = std::max(lin, max_abs_diff(d.padded, linear_conv(x, k)));
    }
    const auto rep = cmd_aliasing_demo(work / "c2_aliasing");
    const std::vector<double> want_circ{4, 3, 5}, want_lin{1, 3, 5, 3};
    bool demo = rep.circular_1d.size() == 3 && rep.linear_1d == want_lin;
    double demo_err = 0;
    for (std::size_t i = 0; demo && i < 3; ++i) demo_err = std::max(demo_err, std::abs(rep.circular_1d[i] - want_circ[i]));
    demo = demo && demo_err <= tol::demo_1d_abs;
    const double t = seconds_since(t0);
    return {circ < tol::circular_abs && lin < tol::linear_abs && demo && t < tol::aliasing_seconds,
            "20 pairs 8^3/3^3: circular err " + fmt(circ, 3) + " (< 1e-6), padded interior err " + fmt(lin, 3) +
                " (< 1e-3); 1D demo circular [4,3,5] err " + fmt(demo_err, 3) + ", linear [1,3,5,3] " +
                (rep.linear_1d == want_lin ? "exact" : "MISMATCH") + ", " + fmt(t, 3) + " s"};
}

Outcome gradients()
{
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 gen(303);
    const std::size_t c = 2;
    const Dims3 n{8, 8, 8};
    double worst = 0;
    std::string worst_name;
    auto track = [&](const std::string& name, double e) {
        if (e > worst || worst_name.empty()) {
            worst = std::max(worst, e);
            worst_name = name;
        }
    };

    FourierBlockParams<double> p;
    p.w_freq = random_complex<double>({c, 16, 16, 9}, -1, 1, gen).set_requires_grad(true);
    p.bias_freq = random_complex<double>({c, 8, 8, 5}, -1, 1, gen).set_requires_grad(true);
    p.ln1_gamma = random_tensor<double>({c}, 0.5, 1.5, gen).set_requires_grad(true);
    p.ln1_beta = random_tensor<double>({c}, -0.5, 0.5, gen).set_requires_grad(true);
    p.ln2_gamma = random_tensor<double>({c}, 0.5, 1.5, gen).set_requires_grad(true);
    p.ln2_beta = random_tensor<double>({c}, -0.5, 0.5, gen).set_requires_grad(true);
    p.fc1_weight = random_tensor<double>({c, 4 * c}, -0.5, 0.5, gen).set_requires_grad(true);
    p.fc1_bias = random_tensor<double>({4 * c}, -0.1, 0.1, gen).set_requires_grad(true);
    p.fc2_weight = random_tensor<double>({4 * c, c}, -0.5, 0.5, gen).set_requires_grad(true);
    p.fc2_bias = random_tensor<double>({c}, -0.1, 0.1, gen).set_requires_grad(true);
    auto x = random_tensor<double>({c, n[0], n[1], n[2]}, -1, 1, gen).set_requires_grad(true);
    const auto proj = random_projection<double>({c, n[0], n[1], n[2]}, 304);
    auto block = [&] { return sum(global_filter(x, p, PadMode::doubled) * proj); };
    track("W_freq", grad_check(block, p.w_freq));
    track("Bias_freq", grad_check(block, p.bias_freq));
    track("LN1.gamma", grad_check(block, p.ln1_gamma));
    track("LN1.beta", grad_check(block, p.ln1_beta));
    track("LN2.gamma", grad_check(block, p.ln2_gamma));
    track("LN2.beta", grad_check(block, p.ln2_beta));
    track("MLP.fc1.weight", grad_check(block, p.fc1_weight));
    track("MLP.fc1.bias", grad_check(block, p.fc1_bias));
    track("MLP.fc2.weight", grad_check(block, p.fc2_weight));
    track("MLP.fc2.bias", grad_check(block, p.fc2_bias));
    track("block input", grad_check(block, x));

    auto enc = random_tensor<double>({c, 8, 8, 8}, -1, 1, gen).set_requires_grad(true);
    auto dec = random_tensor<double>({c, 4, 4, 4}, -1, 1, gen).set_requires_grad(true);
    auto fuse = [&] { return sum(fourier_fuse(enc, dec) * proj); };
    track("fusion encoder", grad_check(fuse, enc));
    track("fusion decoder", grad_check(fuse, dec));

    // whole network, through every fusion junction, under the training loss
    FsegNet<double> net(FsegConfig::preset("fseg-s-reduced"), {32, 32, 32}, 305);
    PhantomSpec ps;
    ps.seed = 306;
    auto ph = generate_phantom(ps);
    clip_and_map(ph.image);
    const auto img = to_tensor<double>(ph.image);
    auto net_loss = [&] { return combined_loss(net.forward(img), std::span<const std::uint8_t>(ph.label.data)).loss; };
    for (const char* name : {"decoder.level1.refine.conv1.weight", "decoder.level2.proj.weight",
                             "decoder.level3.refine.norm.gamma", "stage3.block0.w_freq"}) {
        auto& param = net.parameters().at(name);
        const double e = std::visit([&](auto& t) { return grad_check(net_loss, t, 1e-5, 12); }, param.value);
        track(name, e);
    }

    Tensor<double> logits = random_tensor<double>({c, 8, 8, 8}, -2, 2, gen).set_requires_grad(true);
    std::vector<std::uint8_t> labels(512);
    for (auto& l : labels) l = static_cast<std::uint8_t>(gen() % c);
    track("combined_loss", grad_check([&] { return combined_loss(logits, labels).loss; }, logits));

    const double t = seconds_since(t0);
    return {worst < tol::grad_rel && t < tol::grad_seconds,
            "max rel err " + fmt(worst, 3) + " (" + worst_name + ") over Fourier block, fusion path, network and loss" +
                " (< 1e-3), " + fmt(t, 3) + " s"};
}

Outcome zero_parameter_fusion()
{
    auto cfg = FsegConfig::preset("fseg-s-reduced");
    FsegNet<float> fusion(cfg, {32, 32, 32});
    cfg.decoder_kind = DecoderKind::skip;
    FsegNet<float> skip(cfg, {32, 32, 32});
    bool zero = true;
    std::string counts;
    for (std::size_t l = 1; l <= 3; ++l) {
        zero = zero && fusion.junction_param_count(l) == 0;
        counts += (l > 1 ? "," : "") + std::to_string(fusion.junction_param_count(l));
    }
    const auto nf = fusion.parameters().count(), ns = skip.parameters().count();
    return {zero && ns > nf, "fusion junction params [" + counts + "]; skip model " + std::to_string(ns) +
                                 " > fusion model " + std::to_string(nf)};
}

Outcome metric_oracle()
{
    std::mt19937_64 gen(505);
    bool exact = true;
    double identity = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t classes = 2 + trial % 3;
        std::vector<std::uint8_t> pred(512), truth(512);
        for (auto& v : pred) v = static_cast<std::uint8_t>(gen() % classes);
        for (auto& v : truth) v = static_cast<std::uint8_t>(gen() % classes);
        const auto counts = confusion(pred, truth, classes);
        for (std::size_t k = 0; k < classes; ++k) {
            std::uint64_t x = 0, xs = 0, in = 0, un = 0;
            for (std::size_t a = 0; a < 8; ++a)
                for (std::size_t b = 0; b < 8; ++b)
                    for (std::size_t c = 0; c < 8; ++c) {
                        const std::size_t v = (a * 8 + b) * 8 + c;
                        const bool p = pred[v] == k, t = truth[v] == k;
                        x += p;
                        xs += t;
                        in += p && t;
                        un += p || t;
                    }
            const double d = x + xs ? 2.0 * double(in) / double(x + xs) : 1.0;
            const double j = un ? double(in) / double(un) : 1.0;
            exact = exact && dice(counts, k) == d && iou(counts, k) == j;
            identity = std::max(identity, std::abs(dice(counts, k) - 2 * j / (1 + j)));
        }
    }
    return {exact && identity <= tol::identity_abs,
            std::string("50 random 8^3 pairs: oracle ") + (exact ? "exact" : "MISMATCH") +
                ", max |Dice - 2IoU/(1+IoU)| " + fmt(identity, 3) + " (<= 1e-12)"};
}

Outcome loss_spot_value()
{
    Tensor<double> logits(Shape{2, 2, 2, 2}, 0.0);
    const std::vector<std::uint8_t> labels{1, 1, 1, 1, 0, 0, 0, 0};
    const double l = combined_loss(logits, labels, 0.5).loss.item();
    return {std::abs(l - tol::loss_hand) <= tol::loss_abs,
            "uniform logits, half foreground: loss " + fmt(l, 6) + " vs 0.8466 (tol 1e-4)"};
}

struct OverfitResult {
    std::size_t first_step = 0;
    double final_dice = 0;
};

OverfitResult overfit(const fs::path& dir)
{
    fs::create_directories(dir);
    RunConfig rc = desk_config();
    rc.train.batch_size = 1;
    rc.train.max_steps = tol::overfit_steps;
    rc.data.augment.flip_rot_prob = 0;
    rc.data.augment.intensity_scale_prob = 0;
    rc.data.augment.intensity_shift_prob = 0;
    save_run_config(dir / "config.json", rc);

    PhantomSpec ps = rc.data.phantom;
    ps.seed = derive_seed(rc.seed, seed_stream::phantom);
    const auto ph = generate_phantom(ps);
    const Sample sample{"overfit", ph.image, ph.label};
    FsegNet<float> net(rc.model, {32, 32, 32}, derive_seed(rc.seed, seed_stream::model_init));
    Trainer<float> trainer(net, rc.train, rc.data.augment, rc.infer, rc.seed);

    OverfitResult res;
    std::vector<TrainLogRow> log;
    std::ofstream dice_log(dir / "dice_soft.csv");
    dice_log << "step,dice_soft\n";
    while (trainer.step_count() < rc.train.max_steps) {
        TrainLogRow row{};
        row.loss = trainer.step({&sample});
        row.step = trainer.step_count();
        log.push_back(row);
        res.final_dice = trainer.last_dice_soft();
        dice_log << row.step << ',' << res.final_dice << '\n';
        if (!res.first_step && res.final_dice >= tol::overfit_dice) res.first_step = row.step;
    }
    trainer.save(dir / "last");
    write_train_log(dir / "train_log.csv", log, rc.seed);
    return res;
}

Outcome one_sample_overfit(const fs::path& work)
{
    const auto t0 = std::chrono::steady_clock::now();
    const auto r = overfit(work / "c7_overfit");
    const double t = seconds_since(t0);
    return {r.first_step > 0 && t < tol::overfit_seconds,
            "train Dice_soft >= 0.95 first at step " + (r.first_step ? std::to_string(r.first_step) : "never") +
                " (budget 300), final " + fmt(r.final_dice) + ", " + fmt(t, 3) + " s (< 600)"};
}

Outcome end_to_end(const fs::path& work)
{
    const auto t0 = std::chrono::steady_clock::now();
    const auto rc = desk_config();
    const auto ds = cmd_phantom(rc, work / "c8_e2e" / "data");
    const bool split = ds.split.train.size() == 16 && ds.split.val.size() == 2 && ds.split.test.size() == 2;
    const auto out = cmd_train(rc, work / "c8_e2e" / "data", work / "c8_e2e" / "run");
    const double t = seconds_since(t0);
    return {split && out.test.dice_mean >= tol::e2e_dice && t < tol::e2e_seconds,
            "split " + std::to_string(ds.split.train.size()) + "/" + std::to_string(ds.split.val.size()) + "/" +
                std::to_string(ds.split.test.size()) + ", test hard Dice " + fmt(out.test.dice_mean) + " +/- " +
                fmt(out.test.dice_std) + " (>= 0.80) after 2000 steps, best val " + fmt(out.train.best_val_dice) +
                ", " + fmt(t, 4) + " s (< 3600)"};
}

Outcome ablation(const fs::path& work)
{
    const auto t0 = std::chrono::steady_clock::now();
    const auto rc = desk_config();
    const auto data = work / "c8_e2e" / "data";
    if (!fs::exists(data / "manifest.json")) cmd_phantom(rc, data);
    const auto rows = cmd_ablate(rc, data, work / "c9_ablation");
    const double t = seconds_since(t0);

    std::ifstream csv(work / "c9_ablation" / "ablation.csv");
    std::vector<std::string> lines;
    for (std::string line; std::getline(csv, line);) lines.push_back(line);
    static const char* expected_prefix[6] = {"skip,dwconv7,none,",     "skip,fourier,none,",
                                             "skip,fourier,padding,",  "fusion,dwconv7,none,",
                                             "fusion,fourier,none,",   "fusion,fourier,padding,"};
    static const char* expected_ref[6] = {",0.8365,0.0158", ",0.8405,0.0105", ",0.8427,0.0168",
                                          ",0.8401,0.0135", ",0.8435,0.0119", ",0.8437,0.0061"};
    bool layout = lines.size() == 7 &&
                  lines[0] == "decoder,filter,padding,dice_mean,dice_std,seeds,reference_dice,reference_std";
    for (std::size_t i = 0; layout && i < 6; ++i)
        layout = lines[i + 1].rfind(expected_prefix[i], 0) == 0 && lines[i + 1].ends_with(expected_ref[i]);

    const double base = rows.front().mean, full = rows.back().mean;
    std::string table;
    for (const auto& r : rows) table += " " + cell_name(r.cell) + "=" + fmt(r.mean);
    return {full >= base && layout && t < tol::ablation_seconds,
            "fusion/fourier/padding " + fmt(full) + " vs skip/dwconv7/none " + fmt(base) + " (required >=; 3 seeds, " +
                std::to_string(tol::ablation_steps) + " steps); CSV layout " + (layout ? "ok" : "WRONG") + ";" +
                table + "; " + fmt(t, 4) + " s (< 3600)"};
}

Outcome efficiency(const fs::path& work)
{
    std::ostringstream report;
    const auto rows = cmd_flops({"fseg-s", "fseg-m", "fseg-l"}, {96, 96, 96}, report, work / "c10_flops");
    const bool increasing = rows.size() == 3 && rows[0].summary.total_params < rows[1].summary.total_params &&
                            rows[1].summary.total_params < rows[2].summary.total_params &&
                            rows[0].summary.total_flops < rows[1].summary.total_flops &&
                            rows[1].summary.total_flops < rows[2].summary.total_flops;
    const auto text = report.str();
    bool refs = text.find("not asserted") != std::string::npos;
    for (const char* v : {"40.58", "27.14", "148.17", "41.60", "574.65", "80.24"})
        refs = refs && text.find(v) != std::string::npos;
    std::istringstream head(text);
    std::string preview, line;
    for (int i = 0; i < 6 && std::getline(head, line); ++i) preview += "    " + line + "\n";
    std::cout << preview;
    std::string detail = "S/M/L params";
    for (const auto& r : rows) detail += " " + fmt(double(r.summary.total_params) / 1e6) + "M";
    detail += ", GFLOPs";
    for (const auto& r : rows) detail += " " + fmt(r.summary.total_flops / 1e9);
    detail += std::string(" (strictly increasing: ") + (increasing ? "yes" : "no") + "); reference columns " +
              (refs ? "printed, not asserted" : "MISSING");
    return {increasing && refs, detail};
}

Outcome reproducibility(const fs::path& work)
{
    const auto rc = desk_config();
    std::vector<std::string> diffs;
    std::string checked;
    auto compare = [&](const fs::path& a, const fs::path& b, const std::string& what) {
        for (const auto& d : tree_differences(a, b)) diffs.push_back(what + "/" + d);
        checked += (checked.empty() ? "" : ", ") + what;
    };

    if (!fs::exists(work / "c7_overfit" / "last.bin")) overfit(work / "c7_overfit");
    overfit(work / "c11_rerun" / "c7_overfit");
    compare(work / "c7_overfit", work / "c11_rerun" / "c7_overfit", "overfit");

    const auto data = work / "c8_e2e" / "data";
    if (!fs::exists(data / "manifest.json")) cmd_phantom(rc, data);
    cmd_phantom(rc, work / "c11_rerun" / "data");
    compare(data, work / "c11_rerun" / "data", "phantom");

    if (!fs::exists(work / "c8_e2e" / "run" / "last.bin")) cmd_train(rc, data, work / "c8_e2e" / "run");
    cmd_train(rc, data, work / "c11_rerun" / "e2e");
    compare(work / "c8_e2e" / "run", work / "c11_rerun" / "e2e", "train");

    const auto& cell = kAblationCells.back();
    const auto ablation_dir = ablation_run_dir(work / "c9_ablation", cell, 0);
    const auto ds = load_dataset(data);
    if (!fs::exists(ablation_dir / "last.bin")) train_on(ablation_run_config(rc, cell, 0), ds, ablation_dir);
    train_on(ablation_run_config(rc, cell, 0), ds, work / "c11_rerun" / "ablation_cell");
    compare(ablation_dir, work / "c11_rerun" / "ablation_cell", "ablate:" + cell_name(cell) + "/seed0");

    std::string first;
    for (std::size_t i = 0; i < diffs.size() && i < 3; ++i) first += " " + diffs[i];
    return {diffs.empty(), "bit-identical reruns of " + checked +
                               (diffs.empty() ? std::string{} : "; differing files:" + first)};
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"fseg acceptance suite"};
    std::string work = (fs::temp_directory_path() / "fseg_acceptance").string();
    std::vector<int> only;
    app.add_option("--work", work, "scratch directory for run artifacts");
    app.add_option("--only", only, "criteria to run")->delimiter(',')->check(CLI::Range(1, 11));
    CLI11_PARSE(app, argc, argv);

    const fs::path dir(work);
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::set<int> selected(only.begin(), only.end());

    struct Criterion {
        int id;
        const char* name;
        std::function<Outcome()> run;
    };
    const std::vector<Criterion> criteria{
        {1, "FFT correctness", fft_correctness},
        {2, "convolution theorem and aliasing", [&] { return aliasing(dir); }},
        {3, "gradient integrity", gradients},
        {4, "zero-parameter fusion", zero_parameter_fusion},
        {5, "metric oracle", metric_oracle},
        {6, "combined loss spot value", loss_spot_value},
        {7, "one-sample overfit", [&] { return one_sample_overfit(dir); }},
        {8, "desk-scale end to end", [&] { return end_to_end(dir); }},
        {9, "ablation direction", [&] { return ablation(dir); }},
        {10, "efficiency report", [&] { return efficiency(dir); }},
        {11, "deterministic reproducibility", [&] { return reproducibility(dir); }},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        if (!selected.empty() && !selected.count(c.id)) continue;
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("threw: ") + e.what()};
        }
        failures += !o.pass;
        std::printf("criterion %2d %s  %s: %s\n", c.id, o.pass ? "PASS" : "FAIL", c.name, o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("acceptance: %d failure(s)\n", failures);
    return failures ? 1 : 0;
}
