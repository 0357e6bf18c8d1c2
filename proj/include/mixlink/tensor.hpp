#ifndef MIXLINK_TENSOR_HPP
#define MIXLINK_TENSOR_HPP

#include <cstddef>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace mixlink {

/// Batch-major 4-D shape (batch, channels, height, width).
struct Shape {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    std::size_t count() const {
        return static_cast<std::size_t>(n) * static_cast<std::size_t>(c) *
               static_cast<std::size_t>(h) * static_cast<std::size_t>(w);
    }
    bool operator==(const Shape&) const = default;
    bool same_spatial(const Shape& o) const { return n == o.n && h == o.h && w == o.w; }

    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + ")";
    }
};

enum class Mode { Train, Eval };

/// Dense 4-D tensor node. Ops link nodes into a DAG; backward() runs
/// reverse-mode accumulation over it. Shapes are fixed at construction.
///
/// The element type is a template parameter: double is the verification
/// mode used everywhere in the library, float exists for the relaxed
/// 32-bit gradcheck lane.
template <class T>
class TensorT : public std::enable_shared_from_this<TensorT<T>> {
public:
    using Ptr = std::shared_ptr<TensorT<T>>;

    Shape shape;
    std::vector<T> data;
    bool requires_grad = false;

    // Graph bookkeeping, filled by ops.
    std::vector<Ptr> parents;
    std::function<void()> backward_fn;

    static Ptr make(Shape s, bool req_grad = false) {
        check_shape(s);
        auto t = Ptr(new TensorT(s));
        t->data.assign(s.count(), T(0));
        t->requires_grad = req_grad;
        return t;
    }

    static Ptr make(Shape s, std::vector<T> values, bool req_grad = false) {
        check_shape(s);
        if (values.size() != s.count())
            throw std::invalid_argument("tensor data size " + std::to_string(values.size()) +
                                        " does not match shape " + s.str());
        auto t = Ptr(new TensorT(s));
        t->data = std::move(values);
        t->requires_grad = req_grad;
        return t;
    }

    static Ptr full(Shape s, T value, bool req_grad = false) {
        auto t = make(s, req_grad);
        std::fill(t->data.begin(), t->data.end(), value);
        return t;
    }

    std::size_t size() const { return data.size(); }

    T& at(int n_, int c_, int h_, int w_) { return data[offset(n_, c_, h_, w_)]; }
    const T& at(int n_, int c_, int h_, int w_) const { return data[offset(n_, c_, h_, w_)]; }

    std::size_t offset(int n_, int c_, int h_, int w_) const {
        return ((static_cast<std::size_t>(n_) * shape.c + c_) * shape.h + h_) * shape.w + w_;
    }

    /// Gradient buffer, allocated on first use so large inference-only nets
    /// do not pay for it.
    std::vector<T>& grad() {
        if (grad_.size() != data.size()) grad_.assign(data.size(), T(0));
        return grad_;
    }
    bool has_grad() const { return !grad_.empty(); }

    void zero_grad() {
        if (!grad_.empty()) std::fill(grad_.begin(), grad_.end(), T(0));
    }

    void accum_grad(const std::vector<T>& g) {
        if (g.size() != data.size())
            throw std::runtime_error("gradient size mismatch for tensor " + shape.str());
        auto& gr = grad();
        for (std::size_t i = 0; i < g.size(); ++i) gr[i] += g[i];
    }

    /// Reverse-mode accumulation from this node (must be scalar).
    /// Every requires_grad tensor reachable through parents receives
    /// d(this)/d(tensor) added into its grad buffer. Traversal order is a
    /// deterministic function of graph construction order. Calling twice
    /// on the same forward pass is an error.
    void backward() {
        if (shape.count() != 1)
            throw std::invalid_argument("backward() requires a scalar loss, got " + shape.str());
        if (!requires_grad)
            throw std::runtime_error("backward() on a tensor that does not require gradients");
        if (backward_ran_)
            throw std::runtime_error("backward() invoked twice on one forward pass");
        backward_ran_ = true;

        std::vector<TensorT*> topo;
        std::unordered_set<TensorT*> visited;
        build_topo(this, topo, visited);

        grad()[0] += T(1);
        for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
            if ((*it)->backward_fn) (*it)->backward_fn();
        }
    }

    TensorT(const TensorT&) = delete;
    TensorT& operator=(const TensorT&) = delete;

private:
    explicit TensorT(Shape s) : shape(s) {}

    static void check_shape(const Shape& s) {
        if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0)
            throw std::invalid_argument("negative shape dimension " + s.str());
    }

    static void build_topo(TensorT* node, std::vector<TensorT*>& topo,
                           std::unordered_set<TensorT*>& visited) {
        if (!visited.insert(node).second) return;
        for (const auto& p : node->parents) build_topo(p.get(), topo, visited);
        topo.push_back(node);
    }

    std::vector<T> grad_;
    bool backward_ran_ = false;
};

template <class T>
using TensorPtrT = std::shared_ptr<TensorT<T>>;

using Tensor = TensorT<double>;
using TensorPtr = TensorPtrT<double>;

/// Named trainable parameters plus their momentum buffers. Iteration order
/// is insertion order, which keeps optimizer updates deterministic.
class ParamStore {
public:
    TensorPtr add(const std::string& name, TensorPtr t) {
        if (index_.count(name))
            throw std::invalid_argument("duplicate parameter name: " + name);
        t->requires_grad = true;
        index_[name] = entries_.size();
        entries_.emplace_back(name, t);
        return t;
    }

    TensorPtr get(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw std::out_of_range("no parameter named " + name);
        return entries_[it->second].second;
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }
    std::size_t size() const { return entries_.size(); }

    const std::vector<std::pair<std::string, TensorPtr>>& entries() const { return entries_; }

    /// Momentum buffer for parameter i, zero-initialized on first access.
    std::vector<double>& velocity(std::size_t i) {
        if (velocity_.size() != entries_.size()) velocity_.resize(entries_.size());
        auto& v = velocity_[i];
        if (v.size() != entries_[i].second->size()) v.assign(entries_[i].second->size(), 0.0);
        return v;
    }

    void zero_grads() {
        for (auto& [name, t] : entries_) t->zero_grad();
    }

    std::size_t total_elements() const {
        std::size_t total = 0;
        for (const auto& [name, t] : entries_) total += t->size();
        return total;
    }

private:
    std::vector<std::pair<std::string, TensorPtr>> entries_;
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<std::vector<double>> velocity_;
};

} // namespace mixlink

#endif
