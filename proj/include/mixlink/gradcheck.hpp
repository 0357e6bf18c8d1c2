#ifndef MIXLINK_GRADCHECK_HPP
#define MIXLINK_GRADCHECK_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "mixlink/init.hpp"
#include "mixlink/ops.hpp"
#include "mixlink/tensor.hpp"

// Finite-difference verification of analytic gradients. The checker only
// drives forward evaluations, so it stays independent of every backward
// kernel it is used to judge.

namespace mixlink::gradcheck {

struct OpResult {
    std::string op;
    bool pass = true;
    double max_rel_error = 0.0;
    int trials = 0;
    std::uint64_t failing_seed = 0;
    std::string worst_coordinate;
};

/// Default step size for central differences in 64-bit mode.
inline constexpr double kStep = 1e-5;
/// Relative-error bound in 64-bit mode.
inline constexpr double kTol64 = 1e-4;
/// Documented looser bound for the 32-bit mode.
inline constexpr double kTol32 = 1e-2;

template <class T>
constexpr T default_tol() {
    if constexpr (sizeof(T) == 8)
        return T(kTol64);
    else
        return T(kTol32);
}

template <class T>
constexpr T default_step() {
    if constexpr (sizeof(T) == 8)
        return T(kStep);
    else
        return T(1e-2); // float roundoff dominates below this
}

namespace detail {

/// Relative error between an analytic and a numeric gradient tensor:
/// infinity-norm of the difference over the larger of the two magnitudes,
/// floored at 1 so near-zero gradients compare absolutely.
template <class T>
double rel_error(const std::vector<T>& analytic, const std::vector<T>& numeric,
                 std::size_t* worst_idx = nullptr) {
    double max_diff = 0.0, scale = 1.0;
    std::size_t worst = 0;
    for (std::size_t i = 0; i < analytic.size(); ++i) {
        const double d = std::abs(double(analytic[i]) - double(numeric[i]));
        if (d > max_diff) {
            max_diff = d;
            worst = i;
        }
        scale = std::max({scale, std::abs(double(analytic[i])), std::abs(double(numeric[i]))});
    }
    if (worst_idx) *worst_idx = worst;
    return max_diff / scale;
}

} // namespace detail

/// Checks d(forward())/d(input) for every coordinate of every listed input
/// against central differences. `forward` must rebuild the graph from the
/// same leaf tensors on each call and return a scalar. Returns the worst
/// relative error across all inputs.
template <class T>
double check_fn(const std::vector<TensorPtrT<T>>& inputs,
                const std::function<TensorPtrT<T>()>& forward,
                T step = default_step<T>(), std::string* worst_desc = nullptr) {
    for (const auto& in : inputs) in->requires_grad = true;

    auto loss = forward();
    for (const auto& in : inputs) in->zero_grad();
    loss->backward();

    std::vector<std::vector<T>> analytic;
    analytic.reserve(inputs.size());
    for (const auto& in : inputs) analytic.push_back(in->grad());

    // Finite differences need untracked forwards.
    for (const auto& in : inputs) in->requires_grad = false;

    double worst = 0.0;
    for (std::size_t t = 0; t < inputs.size(); ++t) {
        auto& in = *inputs[t];
        std::vector<T> numeric(in.size());
        for (std::size_t i = 0; i < in.size(); ++i) {
            const T saved = in.data[i];
            in.data[i] = saved + step;
            const T up = forward()->data[0];
            in.data[i] = saved - step;
            const T down = forward()->data[0];
            in.data[i] = saved;
            numeric[i] = (up - down) / (T(2) * step);
        }
        std::size_t wi = 0;
        const double err = detail::rel_error(analytic[t], numeric, &wi);
        if (err > worst) {
            worst = err;
            if (worst_desc)
                *worst_desc = "input " + std::to_string(t) + " coord " + std::to_string(wi) +
                              " analytic " + std::to_string(double(analytic[t][wi])) +
                              " numeric " + std::to_string(double(numeric[wi]));
        }
    }
    for (const auto& in : inputs) in->requires_grad = true;
    return worst;
}

namespace detail {

template <class T>
TensorPtrT<T> randn(Shape s, std::mt19937_64& rng, double sigma = 1.0) {
    auto t = TensorT<T>::make(s);
    std::normal_distribution<double> dist(0.0, sigma);
    for (auto& v : t->data) v = static_cast<T>(dist(rng));
    return t;
}

/// Pushes every element away from zero so ReLU is checked off its kink.
template <class T>
void off_kink(TensorT<T>& t, T margin) {
    for (auto& v : t.data) {
        if (v >= T(0) && v < margin) v += margin;
        if (v < T(0) && v > -margin) v -= margin;
    }
}

/// Spreads values apart so pooling argmaxes cannot flip under the FD step.
template <class T>
void de_tie(TensorT<T>& t, T gap) {
    std::vector<std::size_t> order(t.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return t.data[a] < t.data[b]; });
    for (std::size_t rank = 0; rank < order.size(); ++rank)
        t.data[order[rank]] += gap * static_cast<T>(rank);
}

template <class T>
std::vector<T> random_coeffs(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> mag(0.5, 1.5);
    std::bernoulli_distribution sign(0.5);
    std::vector<T> w(n);
    for (auto& v : w) v = static_cast<T>(sign(rng) ? mag(rng) : -mag(rng));
    return w;
}

/// A bottleneck unit assembled directly from primitive ops, used to drive
/// whole-block checks without the network builders.
template <class T>
struct MiniBottleneck {
    TensorPtrT<T> scale1, shift1, kernel1, scale2, shift2, kernel3;
    std::shared_ptr<BatchNormState<T>> bn1, bn2;
    int out_channels = 0;

    static MiniBottleneck make(int in, int out, int mult, std::mt19937_64& rng) {
        MiniBottleneck b;
        const int mid = mult * out;
        b.out_channels = out;
        b.scale1 = randn<T>({1, in, 1, 1}, rng, 0.3);
        for (auto& v : b.scale1->data) v += T(1);
        b.shift1 = randn<T>({1, in, 1, 1}, rng, 0.3);
        b.kernel1 = he_init<T>({mid, in, 1, 1}, in, rng);
        b.scale2 = randn<T>({1, mid, 1, 1}, rng, 0.3);
        for (auto& v : b.scale2->data) v += T(1);
        b.shift2 = randn<T>({1, mid, 1, 1}, rng, 0.3);
        b.kernel3 = he_init<T>({out, mid, 3, 3}, mid * 9, rng);
        b.bn1 = std::make_shared<BatchNormState<T>>(in);
        b.bn2 = std::make_shared<BatchNormState<T>>(mid);
        return b;
    }

    TensorPtrT<T> apply(const TensorPtrT<T>& x, Mode mode) const {
        auto t = batch_norm(x, scale1, shift1, *bn1, mode);
        t = relu(t);
        t = conv2d(t, kernel1, 1, 0);
        t = batch_norm(t, scale2, shift2, *bn2, mode);
        t = relu(t);
        return conv2d(t, kernel3, 1, 1);
    }

    std::vector<TensorPtrT<T>> params() const {
        return {scale1, shift1, kernel1, scale2, shift2, kernel3};
    }
};

} // namespace detail

// ---- single-trial checks per op; each returns the trial's relative error.

template <class T>
double check_conv2d(std::uint64_t seed, std::string* desc = nullptr) {
    std::mt19937_64 rng(seed);
    const int kh = (rng() % 2) ? 3 : 1;
    const int stride = 1 + static_cast<int>(rng() % 2);
    const int pad = kh == 3 ? static_cast<int>(rng() % 2) : 0;
    auto x = detail::randn<T>({2, 3, 5, 5}, rng);
    auto k = detail::randn<T>({4, 3, kh, kh}, rng, 0.5);
    auto coeffs = detail::random_coeffs<T>(conv2d(x, k, stride, pad)->size(), rng);
    return check_fn<T>(
        {x, k}, [=]() { return weighted_sum(conv2d(x, k, stride, pad), coeffs); },
        default_step<T>(), desc);
}

template <class T>
double check_batch_norm(std::uint64_t seed, std::string* desc = nullptr) {
    std::mt19937_64 rng(seed);
    auto x = detail::randn<T>({3, 4, 3, 3}, rng, 1.5);
    auto scale = detail::randn<T>({1, 4, 1, 1}, rng, 0.3);
    for (auto& v : scale->data) v += T(1);
    auto shift = detail::randn<T>({1, 4, 1, 1}, rng, 0.5);
    auto state = std::make_shared<BatchNormState<T>>(4);
    auto coeffs = detail::random_coeffs<T>(x->size(), rng);
    return check_fn<T>(
        {x, scale, shift},
        [=]() { return weighted_sum(batch_norm(x, scale, shift, *state, Mode::Train), coeffs); },
        default_step<T>(), desc);
}

template <class T>
double check_relu(std::uint64_t seed, std::string* desc = nullptr) {
    std::mt19937_64 rng(seed);
    auto x = detail::randn<T>({2, 3, 4, 4}, rng);
    detail::off_kink(*x, T(0.05));
    auto coeffs = detail::random_coeffs<T>(x->size(), rng);
    return check_fn<T>({x}, [=]() { return weighted_sum(relu(x), coeffs); }, default_step<T>(),
                       desc);
}

template <class T>
double check_channel_concat(std::uint64_t seed, std::string* desc = nullptr) {
    std::mt19937_64 rng(seed);
    auto a = detail::randn<T>({2, 3, 3, 3}, rng);
    auto b = detail::randn<T>({2, 2, 3, 3}, rng);
    auto coeffs = detail::random_coeffs<T>(a->size() + b->size(), rng);
    return check_fn<T>({a, b}, [=]() { return weighted_sum(channel_concat(a, b), coeffs); },
                       default_step<T>(), desc);
}

template <class T>
double check_channel_add_at(std::uint64_t seed, std::string* desc = nullptr) {
    std::mt19937_64 rng(seed);
    auto base = detail::randn<T>({2, 6, 3, 3}, rng);
    auto delta = detail::randn<T>({2, 2, 3, 3}, rng);
    const int offset = static_cast<int>(rng() % 5);
    auto coeffs = detail::random_coeffs<T>(base->size(), rng);
    return check_fn<T>(
        {base, delta},
        [=]() { return weighted_sum(channel_add_at(base, delta, offset), coeffs); },
        default_step<T>(), desc);
}

template <class T>
double check_avg_pool(std::uint64_t seed, std::string* desc = nullptr) {
    std::mt19937_64 rng(seed);
    const int window = 2 + static_cast<int>(rng() % 2);
    const int stride = 1 + static_cast<int>(rng() % 2);
    auto x = detail::randn<T>({2, 3, 6, 6}, rng);
    auto coeffs = detail::random_coeffs<T>(avg_pool(x, window, stride)->size(), rng);
    return check_fn<T>({x}, [=]() { return weighted_sum(avg_pool(x, window, stride), coeffs); },
                       default_step<T>(), desc);
}

template <class T>
double check_max_pool(std::uint64_t seed, std::string* desc = nullptr) {
    std::mt19937_64 rng(seed);
    const int window = 2 + static_cast<int>(rng() % 2);
    const int stride = 1 + static_cast<int>(rng() % 2);
    auto x = detail::randn<T>({2, 3, 6, 6}, rng);
    detail::de_tie(*x, T(1e-3));
    auto coeffs = detail::random_coeffs<T>(max_pool(x, window, stride)->size(), rng);
    return check_fn<T>({x}, [=]() { return weighted_sum(max_pool(x, window, stride), coeffs); },
                       default_step<T>(), desc);
}

template <class T>
double check_global_avg_pool(std::uint64_t seed, std::string* desc = nullptr) {
    std::mt19937_64 rng(seed);
    auto x = detail::randn<T>({2, 4, 5, 5}, rng);
    auto coeffs = detail::random_coeffs<T>(std::size_t(2) * 4, rng);
    return check_fn<T>({x}, [=]() { return weighted_sum(global_avg_pool(x), coeffs); },
                       default_step<T>(), desc);
}

template <class T>
double check_linear(std::uint64_t seed, std::string* desc = nullptr) {
    std::mt19937_64 rng(seed);
    auto x = detail::randn<T>({3, 5, 1, 1}, rng);
    auto w = detail::randn<T>({4, 5, 1, 1}, rng, 0.5);
    auto b = detail::randn<T>({1, 4, 1, 1}, rng, 0.5);
    auto coeffs = detail::random_coeffs<T>(std::size_t(3) * 4, rng);
    return check_fn<T>({x, w, b}, [=]() { return weighted_sum(linear(x, w, b), coeffs); },
                       default_step<T>(), desc);
}

template <class T>
double check_softmax_cross_entropy(std::uint64_t seed, std::string* desc = nullptr) {
    std::mt19937_64 rng(seed);
    auto logits = detail::randn<T>({4, 5, 1, 1}, rng, 2.0);
    auto labels = std::make_shared<std::vector<int>>(4);
    for (auto& l : *labels) l = static_cast<int>(rng() % 5);
    return check_fn<T>({logits},
                       [=]() { return softmax_cross_entropy(logits, std::span<const int>(*labels)); },
                       default_step<T>(), desc);
}

/// Whole-graph check through a 2-layer mixed block: per layer a bottleneck
/// for the inner link (added at the position-rule offset) and one for the
/// outer link (concatenated). Checks the input and every parameter.
template <class T>
double check_mixed_block(std::uint64_t seed, std::string* desc = nullptr, Mode mode = Mode::Train) {
    std::mt19937_64 rng(seed);
    const int w0 = 5, k1 = 2, k2 = 2;
    const bool unfixed = rng() % 2;
    auto x = detail::randn<T>({2, w0, 4, 4}, rng);

    std::vector<detail::MiniBottleneck<T>> inner, outer;
    int w = w0;
    for (int layer = 0; layer < 2; ++layer) {
        inner.push_back(detail::MiniBottleneck<T>::make(w, k1, 1, rng));
        outer.push_back(detail::MiniBottleneck<T>::make(w, k2, 1, rng));
        w += k2;
    }

    std::vector<TensorPtrT<T>> leaves = {x};
    for (int layer = 0; layer < 2; ++layer) {
        for (auto& p : inner[layer].params()) leaves.push_back(p);
        for (auto& p : outer[layer].params()) leaves.push_back(p);
    }

    auto forward = [=]() {
        TensorPtrT<T> s = x;
        for (int layer = 0; layer < 2; ++layer) {
            const int offset = unfixed ? s->shape.c - k1 : 0;
            auto merged = channel_add_at(s, inner[layer].apply(s, mode), offset);
            s = channel_concat(merged, outer[layer].apply(s, mode));
        }
        return sum_all(s);
    };
    return check_fn<T>(leaves, forward, default_step<T>(), desc);
}

/// Ops addressable by the per-op runner.
inline const std::vector<std::string>& op_names() {
    static const std::vector<std::string> names = {
        "conv2d",        "batch_norm", "relu",   "channel_concat",
        "channel_add_at", "avg_pool",   "max_pool", "global_avg_pool",
        "linear",        "softmax_cross_entropy", "mixed_block"};
    return names;
}

template <class T>
double run_single(const std::string& op, std::uint64_t seed, std::string* desc = nullptr) {
    if (op == "conv2d") return check_conv2d<T>(seed, desc);
    if (op == "batch_norm") return check_batch_norm<T>(seed, desc);
    if (op == "relu") return check_relu<T>(seed, desc);
    if (op == "channel_concat") return check_channel_concat<T>(seed, desc);
    if (op == "channel_add_at") return check_channel_add_at<T>(seed, desc);
    if (op == "avg_pool") return check_avg_pool<T>(seed, desc);
    if (op == "max_pool") return check_max_pool<T>(seed, desc);
    if (op == "global_avg_pool") return check_global_avg_pool<T>(seed, desc);
    if (op == "linear") return check_linear<T>(seed, desc);
    if (op == "softmax_cross_entropy") return check_softmax_cross_entropy<T>(seed, desc);
    if (op == "mixed_block") return check_mixed_block<T>(seed, desc);
    throw std::invalid_argument("unknown gradcheck op: " + op);
}

/// Runs `trials` seeded trials of one op and aggregates the worst error.
template <class T>
OpResult run_op(const std::string& op, int trials, std::uint64_t base_seed,
                double tol = double(default_tol<T>())) {
    OpResult r;
    r.op = op;
    r.trials = trials;
    for (int t = 0; t < trials; ++t) {
        const std::uint64_t seed = base_seed + static_cast<std::uint64_t>(t);
        std::string desc;
        const double err = run_single<T>(op, seed, &desc);
        if (err > r.max_rel_error) {
            r.max_rel_error = err;
            r.worst_coordinate = desc;
            r.failing_seed = seed;
        }
        if (err > tol) {
            r.pass = false;
            r.failing_seed = seed;
            r.worst_coordinate = desc;
            return r;
        }
    }
    return r;
}

} // namespace mixlink::gradcheck

#endif
