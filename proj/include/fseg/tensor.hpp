#pragma once

// Dense row-major tensors with reverse-mode automatic differentiation.
//
// A Tensor<V> is a shared handle onto a graph node holding the value buffer,
// an optional gradient buffer and (for non-leaf nodes) the closure that pushes
// the node's gradient into its parents. V is one of float, double,
// std::complex<float> or std::complex<double>. Complex gradients are stored as
// dL/dRe + i dL/dIm (the conjugate Wirtinger convention scaled by 2), so
// `w -= lr * grad` descends the real loss for complex parameters too.

#include <algorithm>
#include <complex>
#include <concepts>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <type_traits>
#include <unordered_set>
#include <utility>
#include <vector>

#include "fseg/errors.hpp"

namespace fseg {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string to_string(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

template <class V> struct is_complex : std::false_type {};
template <class T> struct is_complex<std::complex<T>> : std::true_type {};
template <class V> inline constexpr bool is_complex_v = is_complex<V>::value;

template <class V> struct real_of { using type = V; };
template <class T> struct real_of<std::complex<T>> { using type = T; };
template <class V> using real_t = typename real_of<V>::type;

template <class V>
concept Scalar = std::floating_point<V> || (is_complex_v<V> && std::floating_point<real_t<V>>);

namespace detail {

struct NodeBase {
    std::vector<std::shared_ptr<NodeBase>> parents;
    std::function<void()> backward_fn;
    bool requires_grad = false;
    bool is_leaf = true;

    NodeBase() = default;
    NodeBase(const NodeBase&) = delete;
    NodeBase& operator=(const NodeBase&) = delete;
    virtual ~NodeBase() = default;

    virtual void reset_grad() = 0;
    virtual bool has_grad() const = 0;
};

template <Scalar V>
struct Node final : NodeBase {
    Shape shape;
    std::vector<V> value;
    std::vector<V> grad;

    Node(Shape s, std::vector<V> v) : shape(std::move(s)), value(std::move(v)) {}

    std::vector<V>& ensure_grad()
    {
        if (grad.size() != value.size()) grad.assign(value.size(), V{});
        return grad;
    }
    void reset_grad() override { grad.assign(value.size(), V{}); }
    bool has_grad() const override { return grad.size() == value.size() && !value.empty(); }
};

inline bool& grad_mode()
{
    thread_local bool enabled = true;
    return enabled;
}

} // namespace detail

/// Disables graph recording on the current thread while alive.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode(); }

template <Scalar V>
class Tensor {
public:
    using value_type = V;
    using real_type = real_t<V>;

    Tensor() = default;

    explicit Tensor(Shape shape, V fill = V{})
    {
        for (auto e : shape)
            if (e == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
        const auto n = numel(shape);
        node_ = std::make_shared<detail::Node<V>>(std::move(shape), std::vector<V>(n, fill));
    }

    Tensor(Shape shape, std::vector<V> values)
    {
        for (auto e : shape)
            if (e == 0) throw ShapeError("tensor extents must be positive, got " + to_string(shape));
        if (numel(shape) != values.size())
            throw ShapeError("shape " + to_string(shape) + " holds " + std::to_string(numel(shape)) +
                             " values but " + std::to_string(values.size()) + " were given");
        node_ = std::make_shared<detail::Node<V>>(std::move(shape), std::move(values));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape), V{}); }
    static Tensor ones(Shape shape) { return Tensor(std::move(shape), V{1}); }
    static Tensor scalar(V v) { return Tensor(Shape{1}, std::vector<V>{v}); }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node().shape; }
    std::size_t size() const { return node().value.size(); }
    std::size_t rank() const { return shape().size(); }
    std::size_t extent(std::size_t axis) const { return shape().at(axis); }

    std::span<V> values() { return node().value; }
    std::span<const V> values() const { return node().value; }
    V* data() { return node().value.data(); }
    const V* data() const { return node().value.data(); }
    V& operator[](std::size_t i) { return node().value[i]; }
    const V& operator[](std::size_t i) const { return node().value[i]; }
    V item() const
    {
        if (size() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
        return node().value[0];
    }

    bool requires_grad() const { return node().requires_grad; }
    Tensor& set_requires_grad(bool on)
    {
        if (!node().is_leaf) throw AutogradError("requires_grad can only be toggled on leaf tensors");
        node().requires_grad = on;
        return *this;
    }
    bool has_grad() const { return node().has_grad(); }
    std::span<const V> grad() const
    {
        if (!has_grad()) throw AutogradError("tensor has no gradient");
        return node().grad;
    }
    std::span<V> grad_mut() { return node().ensure_grad(); }
    void zero_grad()
    {
        if (!node().grad.empty()) std::fill(node().grad.begin(), node().grad.end(), V{});
    }

    /// Same values, no graph history.
    Tensor detach() const { return Tensor(shape(), node().value); }
    Tensor clone() const { return detach(); }

    const std::shared_ptr<detail::Node<V>>& node_ptr() const { return node_; }
    detail::Node<V>& node() const
    {
        if (!node_) throw AutogradError("use of undefined tensor");
        return *node_;
    }

private:
    std::shared_ptr<detail::Node<V>> node_;
};

namespace detail {

template <class... Ts>
bool any_requires_grad(const Ts&... ts)
{
    return grad_mode() && (... || ts.requires_grad());
}

/// Registers `fn` as the backward rule of `out`; `fn` receives the output node.
template <Scalar V, class Fn, class... Parents>
void attach(Tensor<V>& out, Fn&& fn, const Parents&... parents)
{
    auto& node = out.node();
    node.requires_grad = true;
    node.is_leaf = false;
    (node.parents.push_back(parents.node_ptr()), ...);
    Node<V>* self = &node;
    node.backward_fn = [self, f = std::forward<Fn>(fn)]() mutable { f(*self); };
}

} // namespace detail

/// Reverse-mode sweep from a real scalar. Leaf gradients accumulate across calls;
/// intermediate gradients are recomputed each time.
template <std::floating_point T>
void backward(const Tensor<T>& loss)
{
    if (loss.size() != 1)
        throw AutogradError("backward() needs a scalar loss, got shape " + to_string(loss.shape()));
    if (!loss.requires_grad())
        throw AutogradError("backward() on a detached graph: loss does not depend on any tensor requiring grad");

    // post-order DFS; parents precede children in `order`
    std::vector<detail::NodeBase*> order;
    std::unordered_set<detail::NodeBase*> visited;
    std::vector<std::pair<detail::NodeBase*, std::size_t>> stack;
    stack.emplace_back(loss.node_ptr().get(), 0);
    visited.insert(loss.node_ptr().get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->parents.size()) {
            auto* p = n->parents[next++].get();
            if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    for (auto* n : order)
        if (!n->is_leaf) n->reset_grad();
    auto& root = loss.node();
    root.ensure_grad()[0] += T{1};
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if ((*it)->backward_fn) (*it)->backward_fn();
}

template <std::floating_point T>
void backward(const Tensor<std::complex<T>>&)
{
    throw AutogradError("backward() needs a real scalar loss; got a complex tensor");
}

} // namespace fseg
