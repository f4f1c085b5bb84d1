#pragma once

#include <cmath>
#include <complex>
#include <functional>
#include <random>
#include <vector>

#include "fseg/tensor.hpp"

namespace fseg::testing {

inline std::mt19937_64& rng()
{
    static std::mt19937_64 gen(20240917);
    return gen;
}

template <std::floating_point T>
Tensor<T> random_tensor(Shape shape, double lo = -1.0, double hi = 1.0, std::mt19937_64& gen = rng())
{
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<T> v(numel(shape));
    for (auto& x : v) x = static_cast<T>(d(gen));
    return Tensor<T>(std::move(shape), std::move(v));
}

template <std::floating_point T>
Tensor<std::complex<T>> random_complex(Shape shape, double lo = -1.0, double hi = 1.0,
                                       std::mt19937_64& gen = rng())
{
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<std::complex<T>> v(numel(shape));
    for (auto& x : v) x = {static_cast<T>(d(gen)), static_cast<T>(d(gen))};
    return Tensor<std::complex<T>>(std::move(shape), std::move(v));
}

/// Norm-wise relative error ||analytic - numeric|| / ||numeric|| of the gradient
/// of `loss()` w.r.t. `leaf`, numeric by central differences. Complex leaves are
/// perturbed along Re and Im separately. At most `max_checks` entries (evenly
/// strided) are probed.
template <Scalar V>
double grad_check(const std::function<Tensor<double>()>& loss, Tensor<V>& leaf, double h = 1e-5,
                  std::size_t max_checks = 64)
{
    leaf.zero_grad();
    backward(loss());
    std::vector<V> analytic(leaf.grad().begin(), leaf.grad().end());
    leaf.zero_grad();

    NoGradGuard guard;
    const std::size_t n = leaf.size();
    const std::size_t step = std::max<std::size_t>(1, n / max_checks);
    double diff = 0.0, ref = 0.0;
    auto probe = [&](std::size_t i, V dir) {
        const V saved = leaf[i];
        leaf[i] = saved + dir * static_cast<real_t<V>>(h);
        const double up = loss().item();
        leaf[i] = saved - dir * static_cast<real_t<V>>(h);
        const double down = loss().item();
        leaf[i] = saved;
        return (up - down) / (2.0 * h);
    };
    for (std::size_t i = 0; i < n; i += step) {
        if constexpr (is_complex_v<V>) {
            const double nr = probe(i, V(1, 0));
            const double ni = probe(i, V(0, 1));
            diff += std::pow(analytic[i].real() - nr, 2) + std::pow(analytic[i].imag() - ni, 2);
            ref += nr * nr + ni * ni;
        } else {
            const double num = probe(i, V(1));
            diff += std::pow(static_cast<double>(analytic[i]) - num, 2);
            ref += num * num;
        }
    }
    return std::sqrt(diff) / std::max(std::sqrt(ref), 1e-12);
}

/// Fixed random projection turning a tensor into a scalar loss with generic
/// (non-symmetric) upstream gradients.
template <std::floating_point T>
Tensor<T> random_projection(const Shape& shape, unsigned seed)
{
    std::mt19937_64 gen(seed);
    return random_tensor<T>(shape, -1.0, 1.0, gen);
}

} // namespace fseg::testing
