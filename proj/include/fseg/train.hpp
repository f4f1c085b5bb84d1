#pragma once

// Training loop, sliding-window inference and split evaluation.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>

#include "fseg/checkpoint.hpp"
#include "fseg/dataset.hpp"
#include "fseg/loss_metrics.hpp"

namespace fseg {

// ---------------------------------------------------------------------------
// Sliding-window inference

/// Window origins along one axis: 0, stride, 2*stride, ... plus extent - window
/// when the regular grid stops short of the end.
inline std::vector<std::size_t> window_positions(std::size_t extent, std::size_t window, std::size_t stride)
{
    if (window == 0 || stride == 0) throw GeometryError("window and stride must be positive");
    if (extent <= window) return {0};
    std::vector<std::size_t> pos;
    for (std::size_t p = 0; p + window <= extent; p += stride) pos.push_back(p);
    if (pos.back() + window < extent) pos.push_back(extent - window);
    return pos;
}

template <std::floating_point T>
struct Inference {
    Tensor<T> logits;          // averaged, [num_classes, D, H, W]
    LabelVolume labels;        // argmax
    Volume foreground_prob;    // 1 - p(background)
};

/// `x` is a preprocessed [C, D, H, W] volume. Axes shorter than the window are
/// zero-padded at the end and cropped back afterwards.
template <std::floating_point T>
Inference<T> sliding_window_infer(const FsegNet<T>& net, const Tensor<T>& x, const SlidingWindowSpec& spec)
{
    spec.validate();
    const std::size_t w = spec.window;
    const auto in = net.input_dims();
    if (in != Dims3{w, w, w})
        throw GeometryError("sliding window " + std::to_string(w) + "^3 does not match the model input " +
                            to_string(Shape(in.begin(), in.end())));
    if (x.rank() != 4) throw ShapeError("sliding_window_infer expects [C,D,H,W], got " + to_string(x.shape()));
    NoGradGuard guard;
    const std::size_t ch = x.extent(0);
    const Dims3 orig{x.extent(1), x.extent(2), x.extent(3)};
    Dims3 ext;
    for (int a = 0; a < 3; ++a) ext[a] = std::max(orig[a], w);
    Tensor<T> vol = ext == orig ? x : pad_trailing(x, ext);

    const std::size_t m = net.config().num_classes;
    const std::size_t n = ext[0] * ext[1] * ext[2];
    std::vector<double> acc(m * n, 0.0);
    std::vector<std::uint32_t> hits(n, 0);
    const auto pa = window_positions(ext[0], w, spec.stride());
    const auto pb = window_positions(ext[1], w, spec.stride());
    const auto pc = window_positions(ext[2], w, spec.stride());
    for (auto a0 : pa)
        for (auto b0 : pb)
            for (auto c0 : pc) {
                Tensor<T> patch(Shape{ch, w, w, w});
                for (std::size_t c = 0; c < ch; ++c)
                    for (std::size_t a = 0; a < w; ++a)
                        for (std::size_t b = 0; b < w; ++b)
                            std::copy_n(&vol[((c * ext[0] + a0 + a) * ext[1] + b0 + b) * ext[2] + c0], w,
                                        &patch[((c * w + a) * w + b) * w]);
                const auto out = net.forward(patch);
                for (std::size_t a = 0; a < w; ++a)
                    for (std::size_t b = 0; b < w; ++b)
                        for (std::size_t c = 0; c < w; ++c) {
                            const std::size_t v = ((a0 + a) * ext[1] + b0 + b) * ext[2] + c0 + c;
                            ++hits[v];
                            for (std::size_t k = 0; k < m; ++k)
                                acc[k * n + v] += static_cast<double>(out[((k * w + a) * w + b) * w + c]);
                        }
            }

    const std::size_t no = orig[0] * orig[1] * orig[2];
    Inference<T> r;
    r.logits = Tensor<T>(Shape{m, orig[0], orig[1], orig[2]});
    for (std::size_t a = 0; a < orig[0]; ++a)
        for (std::size_t b = 0; b < orig[1]; ++b)
            for (std::size_t c = 0; c < orig[2]; ++c) {
                const std::size_t v = (a * ext[1] + b) * ext[2] + c, o = (a * orig[1] + b) * orig[2] + c;
                if (hits[v] == 0) throw GeometryError("sliding window left a voxel uncovered");
                for (std::size_t k = 0; k < m; ++k) r.logits[k * no + o] = static_cast<T>(acc[k * n + v] / hits[v]);
            }
    r.labels.dims = r.foreground_prob.dims = orig;
    r.labels.data = argmax_labels(r.logits);
    const auto p = detail::softmax_channels(r.logits);
    r.foreground_prob.data.resize(no);
    for (std::size_t v = 0; v < no; ++v) r.foreground_prob.data[v] = static_cast<float>(1.0 - p[v]);
    return r;
}

/// Deterministic inference-time preprocessing: clip-and-map only.
template <std::floating_point T>
Tensor<T> preprocess(Volume v, const AugmentConfig& aug)
{
    clip_and_map(v, aug.clip_lo, aug.clip_hi);
    return to_tensor<T>(v);
}

struct VolumeScore {
    std::string id;
    double dice, iou;                           // mean over foreground classes
    std::vector<double> class_dice, class_iou; // classes 1..M-1
};

struct Evaluation {
    std::vector<VolumeScore> rows;
    double dice_mean = 0, dice_std = 0, iou_mean = 0, iou_std = 0;
};

/// Population mean and standard deviation.
inline std::pair<double, double> mean_std(const std::vector<double>& xs)
{
    if (xs.empty()) return {0.0, 0.0};
    double m = 0;
    for (double x : xs) m += x;
    m /= static_cast<double>(xs.size());
    double s = 0;
    for (double x : xs) s += (x - m) * (x - m);
    return {m, std::sqrt(s / static_cast<double>(xs.size()))};
}

inline Evaluation summarize(std::vector<VolumeScore> rows)
{
    Evaluation e;
    std::vector<double> d, i;
    for (const auto& r : rows) {
        d.push_back(r.dice);
        i.push_back(r.iou);
    }
    std::tie(e.dice_mean, e.dice_std) = mean_std(d);
    std::tie(e.iou_mean, e.iou_std) = mean_std(i);
    e.rows = std::move(rows);
    return e;
}

/// Foreground Dice / IoU per volume plus their mean and std.
template <std::floating_point T>
Evaluation evaluate(const FsegNet<T>& net, const std::vector<const Sample*>& items, const SlidingWindowSpec& spec,
                    const AugmentConfig& aug)
{
    std::vector<VolumeScore> rows;
    const std::size_t m = net.config().num_classes;
    for (const auto* s : items) {
        const auto inf = sliding_window_infer(net, preprocess<T>(s->image, aug), spec);
        const auto c = confusion(inf.labels.data, s->label.data, m);
        VolumeScore r{s->id, mean_foreground_dice(c), mean_foreground_iou(c), {}, {}};
        for (std::size_t k = 1; k < m; ++k) {
            r.class_dice.push_back(dice(c, k));
            r.class_iou.push_back(iou(c, k));
        }
        rows.push_back(std::move(r));
    }
    return summarize(std::move(rows));
}

// ---------------------------------------------------------------------------
// Training

struct TrainLogRow {
    std::uint64_t step;
    double loss;
    std::optional<double> val_dice, val_iou;
    double wall_ms;
};

struct TrainResult {
    std::vector<TrainLogRow> log;
    double best_val_dice = -1.0;
    std::uint64_t best_step = 0;
    double last_dice_soft = 0.0;
};

inline void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogRow>& rows,
                            std::uint64_t seed)
{
    std::ofstream os(path);
    if (!os) throw FormatError("cannot write training log " + path.string());
    os << "# seed=" << seed << '\n';
    os << "step,loss,val_dice,val_iou,wall_ms\n";
    os.precision(9);
    for (const auto& r : rows) {
        os << r.step << ',' << r.loss << ',';
        if (r.val_dice) os << *r.val_dice;
        os << ',';
        if (r.val_iou) os << *r.val_iou;
        os << ',' << r.wall_ms << '\n';
    }
}

template <std::floating_point T>
class Trainer {
public:
    /// `seed` is the run seed; each step draws from a generator seeded by
    /// (run seed, step) so resuming replays the same batches.
    Trainer(FsegNet<T>& net, TrainConfig cfg, AugmentConfig aug, SlidingWindowSpec infer, std::uint64_t seed)
        : net_(net), cfg_(cfg), aug_(aug), infer_(infer), seed_(seed), opt_(cfg.optim)
    {
        cfg_.validate();
        aug_.validate();
        infer_.validate();
        const auto d = net_.input_dims();
        if (d != Dims3{cfg_.patch_size, cfg_.patch_size, cfg_.patch_size})
            throw GeometryError("train.patch_size " + std::to_string(cfg_.patch_size) +
                                " does not match the model input extents");
    }

    std::uint64_t step_count() const { return opt_.state().step; }
    AdamW<T>& optimizer() { return opt_; }
    double last_dice_soft() const { return last_dice_soft_; }

    /// One optimization step on `batch_size` randomly drawn, augmented patches.
    double step(const std::vector<const Sample*>& train)
    {
        if (train.empty()) throw ConfigError("training split is empty");
        const std::uint64_t t = step_count() + 1;
        std::mt19937_64 rng(derive_seed(derive_seed(seed_, seed_stream::train), t));
        net_.parameters().zero_grad();
        double loss = 0.0, dice = 0.0;
        const T inv_b = T{1} / static_cast<T>(cfg_.batch_size);
        std::string ids;
        for (std::size_t b = 0; b < cfg_.batch_size; ++b) {
            const Sample& s = *train[rng() % train.size()];
            ids += (b ? "," : "") + s.id;
            auto [img, lab] = random_patch(s, rng);
            auto aug = augment(std::move(img), std::move(lab), aug_, rng);
            const auto logits = net_.forward(to_tensor<T>(aug.image));
            auto parts = combined_loss(logits, std::span<const std::uint8_t>(aug.label.data), cfg_.lambda);
            if (!std::isfinite(parts.loss.item()))
                throw NumericError("training diverged at step " + std::to_string(t) + " (loss " +
                                   std::to_string(parts.loss.item()) + ", samples " + ids + ")");
            backward(scale(parts.loss, inv_b));
            loss += static_cast<double>(parts.loss.item());
            dice += parts.dice_soft;
        }
        opt_.step(net_.parameters());
        last_dice_soft_ = dice / static_cast<double>(cfg_.batch_size);
        return loss / static_cast<double>(cfg_.batch_size);
    }

    /// Runs until `max_steps`, validating every `val_interval` steps and at the
    /// end. With an output directory, writes train_log.csv plus best/last
    /// checkpoints.
    TrainResult run(const std::vector<const Sample*>& train, const std::vector<const Sample*>& val,
                    const std::optional<std::filesystem::path>& out_dir = std::nullopt)
    {
        TrainResult res;
        const auto t0 = std::chrono::steady_clock::now();
        while (step_count() < cfg_.max_steps) {
            TrainLogRow row{};
            row.loss = step(train);
            row.step = step_count();
            const bool validate_now = row.step % cfg_.val_interval == 0 || row.step == cfg_.max_steps;
            if (validate_now && !val.empty()) {
                const auto ev = evaluate(net_, val, infer_, aug_);
                row.val_dice = ev.dice_mean;
                row.val_iou = ev.iou_mean;
                if (ev.dice_mean > res.best_val_dice) {
                    res.best_val_dice = ev.dice_mean;
                    res.best_step = row.step;
                    if (out_dir) save(*out_dir / "best", ev.dice_mean);
                }
            }
            row.wall_ms = cfg_.deterministic
                              ? 0.0
                              : std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
            res.log.push_back(row);
            if (validate_now)
                log::info("step " + std::to_string(row.step) + " loss " + std::to_string(row.loss) +
                          (row.val_dice ? " val_dice " + std::to_string(*row.val_dice) : std::string{}));
        }
        res.last_dice_soft = last_dice_soft_;
        if (out_dir) {
            save(*out_dir / "last", res.log.empty() || !res.log.back().val_dice ? -1.0 : *res.log.back().val_dice);
            write_train_log(*out_dir / "train_log.csv", res.log, seed_);
        }
        return res;
    }

    void save(const std::filesystem::path& base, double val_dice = -1.0) const
    {
        save_checkpoint(base, net_, CheckpointInfo{net_.config(), net_.input_dims(), seed_, step_count(), val_dice},
                        &opt_.state());
    }

    void resume(const std::filesystem::path& base)
    {
        const auto info = load_checkpoint(base, net_, &opt_.state());
        if (info.seed != seed_) log::warn("resuming a checkpoint written with seed " + std::to_string(info.seed));
    }

private:
    std::pair<Volume, LabelVolume> random_patch(const Sample& s, std::mt19937_64& rng) const
    {
        const std::size_t p = cfg_.patch_size;
        const Dims3 d = s.image.dims;
        if (d == Dims3{p, p, p}) return {s.image, s.label};
        Dims3 o{};
        for (int a = 0; a < 3; ++a) {
            if (d[a] < p)
                throw GeometryError("volume " + s.id + " is smaller than the " + std::to_string(p) + "^3 patch");
            o[a] = rng() % (d[a] - p + 1);
        }
        Volume img;
        LabelVolume lab;
        img.dims = lab.dims = {p, p, p};
        img.spacing = s.image.spacing;
        lab.spacing = s.label.spacing;
        img.data.resize(p * p * p);
        lab.data.resize(p * p * p);
        for (std::size_t a = 0; a < p; ++a)
            for (std::size_t b = 0; b < p; ++b)
                for (std::size_t c = 0; c < p; ++c) {
                    img.at(a, b, c) = s.image.at(o[0] + a, o[1] + b, o[2] + c);
                    lab.at(a, b, c) = s.label.at(o[0] + a, o[1] + b, o[2] + c);
                }
        return {std::move(img), std::move(lab)};
    }

    FsegNet<T>& net_;
    TrainConfig cfg_;
    AugmentConfig aug_;
    SlidingWindowSpec infer_;
    std::uint64_t seed_;
    AdamW<T> opt_;
    double last_dice_soft_ = 0.0;
};

} // namespace fseg
