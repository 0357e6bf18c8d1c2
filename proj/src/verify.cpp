#include "mixlink/verify.hpp"

#include <cmath>

#include "mixlink/gradcheck.hpp"
#include "mixlink/ops.hpp"

namespace mixlink::verify {

namespace {

TensorPtr randn(Shape s, std::mt19937_64& rng, double sigma = 1.0) {
    return gradcheck::detail::randn<double>(s, rng, sigma);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!(a.shape == b.shape)) return std::numeric_limits<double>::infinity();
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

bool bit_identical(const Tensor& a, const Tensor& b) {
    return a.shape == b.shape && a.data == b.data;
}

} // namespace

TransformFn make_random_transform(int in_width, int out_width, std::mt19937_64& rng) {
    auto unit = std::make_shared<gradcheck::detail::MiniBottleneck<double>>(
        gradcheck::detail::MiniBottleneck<double>::make(in_width, out_width, 1, rng));
    // Randomized running statistics keep the eval-mode normalization from
    // degenerating into a near-identity.
    std::uniform_real_distribution<double> mean_dist(-0.3, 0.3), var_dist(0.5, 1.5);
    for (auto& m : unit->bn1->running_mean) m = mean_dist(rng);
    for (auto& v : unit->bn1->running_var) v = var_dist(rng);
    for (auto& m : unit->bn2->running_mean) m = mean_dist(rng);
    for (auto& v : unit->bn2->running_var) v = var_dist(rng);
    return TransformFn([unit](const TensorPtr& x) { return unit->apply(x, Mode::Eval); },
                       out_width);
}

SuiteResult unrolling_suite(int trials_per_depth, int depth_min, int depth_max,
                            std::uint64_t seed, double tolerance) {
    SuiteResult result;
    result.suite = "unrolling";
    for (int depth = depth_min; depth <= depth_max; ++depth) {
        for (int trial = 0; trial < trials_per_depth; ++trial) {
            const std::uint64_t trial_seed =
                seed + static_cast<std::uint64_t>(depth) * 100000ull + trial;
            std::mt19937_64 rng(trial_seed);
            const int width = 4 + static_cast<int>(rng() % 13); // 4..16
            auto x0 = randn({1, width, 8, 8}, rng);

            std::vector<TransformFn> layers;
            for (int l = 0; l < depth; ++l)
                layers.push_back(make_random_transform(width, width, rng));

            const auto recursive = eval_resnet_recursive(layers, x0);
            const auto unrolled = eval_resnet_unrolled(layers, x0);
            const double diff = max_abs_diff(*recursive.x.back(), *unrolled.x.back());
            result.max_deviation = std::max(result.max_deviation, diff);
            ++result.trials;
            if (diff > tolerance) {
                result.pass = false;
                result.failing_seed = trial_seed;
                result.detail = "X_L diverged by " + std::to_string(diff) + " at depth " +
                                std::to_string(depth);
                return result;
            }
        }
    }
    result.detail = "max |recursive - unrolled| = " + std::to_string(result.max_deviation);
    return result;
}

SuiteResult reduction_suite(int trials, int arch, std::uint64_t seed) {
    SuiteResult result;
    result.suite = "reduction";
    auto fail = [&](std::uint64_t s, const std::string& what) {
        result.pass = false;
        result.failing_seed = s;
        result.detail = what;
    };

    for (int trial = 0; trial < trials; ++trial) {
        const std::uint64_t trial_seed = seed + trial;
        std::mt19937_64 rng(trial_seed);
        const int depth = 1 + static_cast<int>(rng() % 4);

        if (arch == 0 || arch == 2) { // pure concatenation
            const int c0 = 2 + static_cast<int>(rng() % 6);
            const int k2 = 1 + static_cast<int>(rng() % 5);
            auto x0 = randn({1, c0, 4, 4}, rng);
            std::vector<MixedLayer> mixed_layers;
            std::vector<TransformFn> fns;
            int w = c0;
            for (int l = 0; l < depth; ++l) {
                auto h = make_random_transform(w, k2, rng);
                fns.push_back(h);
                mixed_layers.push_back({TransformFn{}, h});
                w += k2;
            }
            const auto mixed =
                eval_mixed(mixed_layers, x0, ConnectionKind::mixed(0, k2, LinkPosition::Fixed));
            const auto dense = eval_densenet(fns, x0);
            for (std::size_t i = 0; i < mixed.s.size(); ++i)
                if (!bit_identical(*mixed.s[i], *dense.s[i])) {
                    fail(trial_seed, "mixed(k1=0) trace differs from pure concatenation at step " +
                                         std::to_string(i));
                    return result;
                }
            ++result.trials;
        }

        if (arch == 0 || arch == 1) { // pure addition
            const int c0 = 2 + static_cast<int>(rng() % 6);
            auto x0 = randn({1, c0, 4, 4}, rng);
            std::vector<MixedLayer> mixed_layers;
            std::vector<TransformFn> fns;
            for (int l = 0; l < depth; ++l) {
                auto h = make_random_transform(c0, c0, rng);
                fns.push_back(h);
                mixed_layers.push_back({h, TransformFn{}});
            }
            const auto mixed =
                eval_mixed(mixed_layers, x0, ConnectionKind::mixed(c0, 0, LinkPosition::Fixed));
            const auto res = eval_resnet_recursive(fns, x0);
            for (std::size_t i = 0; i < mixed.s.size(); ++i)
                if (!bit_identical(*mixed.s[i], *res.r[i])) {
                    fail(trial_seed, "mixed(k1=width, k2=0, fixed) trace differs from the "
                                     "additive recursion at step " +
                                         std::to_string(i));
                    return result;
                }
            ++result.trials;
        }

        if (arch == 0 || arch == 3) { // fixed dual path
            const int k1 = 1 + static_cast<int>(rng() % 4);
            const int k2 = 1 + static_cast<int>(rng() % 4);
            const int c0 = k1 + static_cast<int>(rng() % 5);
            auto x0 = randn({1, c0, 4, 4}, rng);
            std::vector<MixedLayer> layers;
            int w = c0;
            for (int l = 0; l < depth; ++l) {
                layers.push_back(
                    {make_random_transform(w, k1, rng), make_random_transform(w, k2, rng)});
                w += k2;
            }
            const auto mixed =
                eval_mixed(layers, x0, ConnectionKind::mixed(k1, k2, LinkPosition::Fixed));
            const auto dual = eval_dual_path_reference(layers, x0, k1, k2);
            if (!bit_identical(*mixed.s.back(), *dual)) {
                fail(trial_seed, "fixed mixed chain differs from the dual-path oracle");
                return result;
            }
            ++result.trials;
        }
    }
    result.detail = "all reductions bit-exact";
    return result;
}

SuiteResult width_law_suite(int trials, std::uint64_t seed, StepFn step) {
    SuiteResult result;
    result.suite = "width-law";
    if (!step)
        step = [](const TensorPtr& s, const TransformFn& h_in, const TransformFn& h_out,
                  const ConnectionKind& cfg) { return mixed_step(s, h_in, h_out, cfg); };

    for (int trial = 0; trial < trials; ++trial) {
        const std::uint64_t trial_seed = seed + trial;
        std::mt19937_64 rng(trial_seed);
        const int k1 = 1 + static_cast<int>(rng() % 4);
        const int k2 = static_cast<int>(rng() % 5);
        const int c0 = k1 + static_cast<int>(rng() % 5);
        const int depth = 1 + static_cast<int>(rng() % 4);
        const auto position = (rng() % 2) ? LinkPosition::Fixed : LinkPosition::Unfixed;
        const auto cfg = ConnectionKind::mixed(k1, k2, position);

        auto s = randn({1, c0, 4, 4}, rng);
        for (int l = 1; l <= depth; ++l) {
            auto h_in = make_random_transform(s->shape.c, k1, rng);
            auto h_out = k2 > 0 ? make_random_transform(s->shape.c, k2, rng) : TransformFn{};
            auto prev = s;
            s = step(s, h_in, h_out, cfg);
            ++result.trials;

            if (s->shape.c != c0 + l * k2) {
                result.pass = false;
                result.failing_seed = trial_seed;
                result.detail = "width law violated: expected " + std::to_string(c0 + l * k2) +
                                " channels after step " + std::to_string(l) + ", got " +
                                std::to_string(s->shape.c);
                return result;
            }

            const int offset = position == LinkPosition::Fixed ? 0 : prev->shape.c - k1;
            for (int c = 0; c < prev->shape.c; ++c) {
                if (c >= offset && c < offset + k1) continue;
                for (int h = 0; h < 4 && result.pass; ++h)
                    for (int w = 0; w < 4; ++w)
                        if (s->at(0, c, h, w) != prev->at(0, c, h, w)) {
                            result.pass = false;
                            break;
                        }
                if (!result.pass) {
                    result.failing_seed = trial_seed;
                    result.detail =
                        "inner-link locality violated: channel " + std::to_string(c) +
                        " outside the addition window [" + std::to_string(offset) + ", " +
                        std::to_string(offset + k1) + ") changed";
                    return result;
                }
            }
        }
    }
    result.detail = "width law exact; locality bit-exact";
    return result;
}

SuiteResult witness_suite() {
    SuiteResult result;
    result.suite = "fixed-unfixed-witness";
    result.trials = 1;

    const int width = 8, k1 = 2, k2 = 2;
    auto s = Tensor::make({1, width, 2, 2});
    for (std::size_t i = 0; i < s->size(); ++i) s->data[i] = 0.125 * static_cast<double>(i);

    TransformFn ones([](const TensorPtr& x) {
        return Tensor::full({x->shape.n, 2, x->shape.h, x->shape.w}, 1.0);
    }, k1);

    auto fixed = mixed_step(s, ones, ones, ConnectionKind::mixed(k1, k2, LinkPosition::Fixed));
    auto unfixed = mixed_step(s, ones, ones, ConnectionKind::mixed(k1, k2, LinkPosition::Unfixed));

    // Fixed perturbs channels [0, 2), unfixed channels [6, 8).
    bool fixed_ok = true, unfixed_ok = true, differ = false;
    for (int c = 0; c < width; ++c)
        for (int h = 0; h < 2; ++h)
            for (int w = 0; w < 2; ++w) {
                const double base = s->at(0, c, h, w);
                const double f = fixed->at(0, c, h, w);
                const double u = unfixed->at(0, c, h, w);
                if (c < 2 && !(f == base + 1.0 && u == base)) fixed_ok = false;
                if (c >= 6 && !(u == base + 1.0 && f == base)) unfixed_ok = false;
                if (c >= 2 && c < 6 && !(f == base && u == base)) fixed_ok = unfixed_ok = false;
                if (f != u) differ = true;
            }
    result.pass = fixed_ok && unfixed_ok && differ;
    result.max_deviation = differ ? 1.0 : 0.0;
    result.detail = result.pass
                        ? "position modes differ exactly where documented"
                        : "witness failed: fixed window ok=" + std::to_string(fixed_ok) +
                              ", unfixed window ok=" + std::to_string(unfixed_ok) +
                              ", outputs differ=" + std::to_string(differ);
    return result;
}

std::vector<SuiteResult> run_all(int trials, int depth_min, int depth_max, std::uint64_t seed,
                                 double tolerance) {
    return {unrolling_suite(trials, depth_min, depth_max, seed, tolerance),
            reduction_suite(trials, 0, seed + 1), width_law_suite(trials, seed + 2),
            witness_suite()};
}

} // namespace mixlink::verify
