#pragma once

// Training objective (soft Dice + weighted cross-entropy on softmax
// probabilities) and the hard overlap metrics used for evaluation.

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "fseg/ops.hpp"

namespace fseg {

template <std::floating_point T>
struct LossParts {
    Tensor<T> loss;     // differentiable scalar
    double dice_soft;   // mean soft Dice over foreground classes
    double cross_entropy;
};

namespace detail {

inline void check_labels(std::span<const std::uint8_t> labels, std::size_t voxels, std::size_t classes)
{
    if (labels.size() != voxels)
        throw ShapeError("labels hold " + std::to_string(labels.size()) + " voxels, logits " + std::to_string(voxels));
    for (std::size_t v = 0; v < voxels; ++v)
        if (labels[v] >= classes)
            throw ConfigError("label " + std::to_string(labels[v]) + " at voxel " + std::to_string(v) +
                              " is outside [0, " + std::to_string(classes) + ")");
}

// Channel-first softmax in double.
template <std::floating_point T>
std::vector<double> softmax_channels(const Tensor<T>& logits)
{
    const std::size_t m = logits.extent(0), n = logits.size() / m;
    std::vector<double> p(logits.size());
    for (std::size_t v = 0; v < n; ++v) {
        double mx = -INFINITY;
        for (std::size_t k = 0; k < m; ++k) mx = std::max(mx, static_cast<double>(logits[k * n + v]));
        double s = 0;
        for (std::size_t k = 0; k < m; ++k) s += p[k * n + v] = std::exp(static_cast<double>(logits[k * n + v]) - mx);
        for (std::size_t k = 0; k < m; ++k) p[k * n + v] /= s;
    }
    return p;
}

} // namespace detail

inline constexpr double kDiceSmooth = 1e-6;
inline constexpr double kLogClamp = 1e-8;

/// (1 - Dice_soft) + lambda * CE for logits [M, ...] and integer labels (one per
/// voxel). Dice_soft averages 2*sum(p*g)/(sum(p)+sum(g)) over classes 1..M-1.
template <std::floating_point T>
LossParts<T> combined_loss(const Tensor<T>& logits, std::span<const std::uint8_t> labels, double lambda = 0.5)
{
    if (logits.rank() < 2) throw ShapeError("combined_loss expects [M, ...] logits, got " + to_string(logits.shape()));
    const std::size_t m = logits.extent(0), n = logits.size() / m;
    if (m < 2) throw ShapeError("combined_loss needs at least two classes");
    detail::check_labels(labels, n, m);
    for (const auto& z : logits.values())
        if (!std::isfinite(static_cast<double>(z))) throw NumericError("combined_loss: non-finite logit");

    auto p = detail::softmax_channels(logits);
    const std::size_t fg = m - 1;
    std::vector<double> inter(m, 0.0), denom(m, 0.0);
    double ce = 0.0;
    for (std::size_t v = 0; v < n; ++v) {
        const std::size_t g = labels[v];
        for (std::size_t k = 1; k < m; ++k) {
            denom[k] += p[k * n + v];
            if (g == k) inter[k] += p[k * n + v];
        }
        if (g > 0) denom[g] += 1.0;
        ce -= std::log(std::max(p[g * n + v], kLogClamp));
    }
    ce /= static_cast<double>(n);
    double dice = 0.0;
    for (std::size_t k = 1; k < m; ++k) dice += (2.0 * inter[k] + kDiceSmooth) / (denom[k] + kDiceSmooth);
    dice /= static_cast<double>(fg);

    Tensor<T> out = Tensor<T>::scalar(static_cast<T>((1.0 - dice) + lambda * ce));
    if (detail::any_requires_grad(logits)) {
        std::vector<std::uint8_t> lab(labels.begin(), labels.end());
        detail::attach(out, [logits, p = std::move(p), lab = std::move(lab), inter = std::move(inter),
                             denom = std::move(denom), m, n, fg, lambda](detail::Node<T>& self) {
            const double up = static_cast<double>(self.grad[0]);
            auto& gz = logits.node().ensure_grad();
            std::vector<double> dp(m);
            for (std::size_t v = 0; v < n; ++v) {
                const std::size_t g = lab[v];
                // dL/dp from the Dice term
                dp[0] = 0.0;
                for (std::size_t k = 1; k < m; ++k) {
                    const double s = denom[k] + kDiceSmooth;
                    const double gk = g == k ? 1.0 : 0.0;
                    dp[k] = -(2.0 * gk * s - (2.0 * inter[k] + kDiceSmooth)) / (s * s) / static_cast<double>(fg);
                }
                double dot = 0.0;
                for (std::size_t k = 0; k < m; ++k) dot += p[k * n + v] * dp[k];
                const bool ce_live = p[g * n + v] >= kLogClamp;
                for (std::size_t k = 0; k < m; ++k) {
                    const double pk = p[k * n + v];
                    double d = pk * (dp[k] - dot);
                    if (ce_live) d += lambda / static_cast<double>(n) * (pk - (g == k ? 1.0 : 0.0));
                    gz[k * n + v] += static_cast<T>(up * d);
                }
            }
        }, logits);
    }
    return {out, dice, ce};
}

/// Per-voxel argmax over the class axis of [M, ...] scores.
template <std::floating_point T>
std::vector<std::uint8_t> argmax_labels(const Tensor<T>& scores)
{
    const std::size_t m = scores.extent(0), n = scores.size() / m;
    std::vector<std::uint8_t> out(n, 0);
    for (std::size_t v = 0; v < n; ++v) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < m; ++k)
            if (scores[k * n + v] > scores[best * n + v]) best = k;
        out[v] = static_cast<std::uint8_t>(best);
    }
    return out;
}

/// Per-class voxel counts of prediction X_k, ground truth X*_k and their
/// intersection and union.
struct ConfusionCounts {
    std::vector<std::uint64_t> pred, truth, inter, uni;

    std::size_t classes() const { return pred.size(); }

    ConfusionCounts& operator+=(const ConfusionCounts& o)
    {
        for (std::size_t k = 0; k < classes(); ++k) {
            pred[k] += o.pred[k];
            truth[k] += o.truth[k];
            inter[k] += o.inter[k];
            uni[k] += o.uni[k];
        }
        return *this;
    }
};

inline ConfusionCounts confusion(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> truth,
                                 std::size_t classes)
{
    if (pred.size() != truth.size())
        throw ShapeError("confusion: prediction has " + std::to_string(pred.size()) + " voxels, truth " +
                         std::to_string(truth.size()));
    detail::check_labels(pred, pred.size(), classes);
    detail::check_labels(truth, truth.size(), classes);
    ConfusionCounts c{std::vector<std::uint64_t>(classes), std::vector<std::uint64_t>(classes),
                      std::vector<std::uint64_t>(classes), std::vector<std::uint64_t>(classes)};
    for (std::size_t v = 0; v < pred.size(); ++v) {
        ++c.pred[pred[v]];
        ++c.truth[truth[v]];
        if (pred[v] == truth[v]) ++c.inter[pred[v]];
    }
    for (std::size_t k = 0; k < classes; ++k) c.uni[k] = c.pred[k] + c.truth[k] - c.inter[k];
    return c;
}

inline double dice(const ConfusionCounts& c, std::size_t k)
{
    const auto total = c.pred.at(k) + c.truth.at(k);
    if (total == 0) {
        log::info("dice: class " + std::to_string(k) + " empty in prediction and truth, scored 1.0");
        return 1.0;
    }
    return 2.0 * static_cast<double>(c.inter[k]) / static_cast<double>(total);
}

inline double iou(const ConfusionCounts& c, std::size_t k)
{
    if (c.uni.at(k) == 0) {
        log::info("iou: class " + std::to_string(k) + " empty in prediction and truth, scored 1.0");
        return 1.0;
    }
    return static_cast<double>(c.inter[k]) / static_cast<double>(c.uni[k]);
}

/// Mean over foreground classes 1..M-1 (background excluded).
inline double mean_foreground_dice(const ConfusionCounts& c)
{
    double s = 0;
    for (std::size_t k = 1; k < c.classes(); ++k) s += dice(c, k);
    return s / static_cast<double>(c.classes() - 1);
}

inline double mean_foreground_iou(const ConfusionCounts& c)
{
    double s = 0;
    for (std::size_t k = 1; k < c.classes(); ++k) s += iou(c, k);
    return s / static_cast<double>(c.classes() - 1);
}

} // namespace fseg
