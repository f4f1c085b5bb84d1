#pragma once

// Named learnable parameters. A registry owns every parameter of a model under a
// unique dotted path and exposes each one as a flat span of real scalars
// (complex parameters contribute their Re and Im parts), which is what the
// optimizer and the checkpoint format operate on.

#include <cmath>
#include <complex>
#include <random>
#include <span>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

#include "fseg/tensor.hpp"

namespace fseg {

enum class InitRule {
    zeros,
    ones,
    fan_in_uniform,     // U(-1/sqrt(fan_in), 1/sqrt(fan_in))
    freq_near_identity, // Re ~ N(1, 0.02), Im ~ N(0, 0.02)
};

inline const char* to_string(InitRule r)
{
    switch (r) {
    case InitRule::zeros: return "zeros";
    case InitRule::ones: return "ones";
    case InitRule::fan_in_uniform: return "fan_in_uniform";
    case InitRule::freq_near_identity: return "freq_near_identity";
    }
    return "?";
}

template <std::floating_point T>
struct Parameter {
    std::string name;
    InitRule init;
    std::variant<Tensor<T>, Tensor<std::complex<T>>> value;

    bool is_complex() const { return value.index() == 1; }
    const Shape& shape() const
    {
        return std::visit([](const auto& t) -> const Shape& { return t.shape(); }, value);
    }
    /// Number of real scalars (2 per complex element).
    std::size_t count() const
    {
        return std::visit([](const auto& t) { return t.size() * (is_complex_v<typename std::decay_t<decltype(t)>::value_type> ? 2 : 1); },
                          value);
    }
    std::span<T> flat_values()
    {
        return std::visit([](auto& t) {
            using V = typename std::decay_t<decltype(t)>::value_type;
            return std::span<T>(reinterpret_cast<T*>(t.data()), t.size() * (is_complex_v<V> ? 2 : 1));
        }, value);
    }
    std::span<const T> flat_values() const { return const_cast<Parameter*>(this)->flat_values(); }
    /// Gradient as real scalars, allocated (zero) on first use.
    std::span<T> flat_grad()
    {
        return std::visit([](auto& t) {
            using V = typename std::decay_t<decltype(t)>::value_type;
            auto g = t.grad_mut();
            return std::span<T>(reinterpret_cast<T*>(g.data()), g.size() * (is_complex_v<V> ? 2 : 1));
        }, value);
    }
    void zero_grad()
    {
        std::visit([](auto& t) { t.zero_grad(); }, value);
    }
};

template <std::floating_point T>
class ParameterRegistry {
public:
    ParameterRegistry() = default;
    explicit ParameterRegistry(std::uint64_t seed) : rng_(seed) {}

    Tensor<T> add_real(const std::string& name, Shape shape, InitRule init, std::size_t fan_in = 1)
    {
        Tensor<T> t(std::move(shape));
        switch (init) {
        case InitRule::zeros: break;
        case InitRule::ones: std::fill(t.values().begin(), t.values().end(), T{1}); break;
        case InitRule::fan_in_uniform: {
            const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
            std::uniform_real_distribution<double> d(-bound, bound);
            for (auto& v : t.values()) v = static_cast<T>(d(rng_));
            break;
        }
        case InitRule::freq_near_identity:
            throw ConfigError("parameter " + name + ": freq_near_identity needs a complex parameter");
        }
        t.set_requires_grad(true);
        insert(name, init, t);
        return t;
    }

    Tensor<std::complex<T>> add_complex(const std::string& name, Shape shape, InitRule init)
    {
        Tensor<std::complex<T>> t(std::move(shape));
        switch (init) {
        case InitRule::zeros: break;
        case InitRule::ones: std::fill(t.values().begin(), t.values().end(), std::complex<T>(1)); break;
        case InitRule::freq_near_identity: {
            std::normal_distribution<double> re(1.0, 0.02), im(0.0, 0.02);
            for (auto& v : t.values()) {
                const double r = re(rng_);
                v = std::complex<T>(static_cast<T>(r), static_cast<T>(im(rng_)));
            }
            break;
        }
        case InitRule::fan_in_uniform:
            throw ConfigError("parameter " + name + ": fan_in_uniform is a real-parameter rule");
        }
        t.set_requires_grad(true);
        insert(name, init, t);
        return t;
    }

    std::vector<Parameter<T>>& entries() { return params_; }
    const std::vector<Parameter<T>>& entries() const { return params_; }
    std::size_t size() const { return params_.size(); }

    Parameter<T>& at(const std::string& name)
    {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("no parameter named " + name);
        return params_[it->second];
    }
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    /// Total real-scalar count over all parameters.
    std::size_t count() const
    {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.count();
        return n;
    }
    /// Real-scalar count over parameters whose name starts with `prefix`.
    std::size_t count(const std::string& prefix) const
    {
        std::size_t n = 0;
        for (const auto& p : params_)
            if (p.name.rfind(prefix, 0) == 0) n += p.count();
        return n;
    }

    void zero_grad()
    {
        for (auto& p : params_) p.zero_grad();
    }

private:
    template <class V>
    void insert(const std::string& name, InitRule init, const Tensor<V>& t)
    {
        if (name.empty()) throw ConfigError("parameter name must not be empty");
        if (!index_.emplace(name, params_.size()).second) throw ConfigError("duplicate parameter name " + name);
        params_.push_back(Parameter<T>{name, init, t});
    }

    std::mt19937_64 rng_{0};
    std::vector<Parameter<T>> params_;
    std::unordered_map<std::string, std::size_t> index_;
};

} // namespace fseg
