#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "mixlink/ops.hpp"
#include "mixlink/topology.hpp"
#include "mixlink/verify.hpp"

using namespace mixlink;

namespace {

// Scalar affine transform a*x + b on a fixed width, as an opaque H.
TransformFn affine(double a, double b, int width) {
    return TransformFn(
        [a, b, width](const TensorPtr& x) {
            auto y = Tensor::make({x->shape.n, width, x->shape.h, x->shape.w});
            for (std::size_t i = 0; i < y->size(); ++i) y->data[i] = a * x->data[i] + b;
            return y;
        },
        width);
}

TransformFn zero_transform(int width) { return affine(0.0, 0.0, width); }

TransformFn constant(double c, int width) {
    return TransformFn(
        [c, width](const TensorPtr& x) {
            return Tensor::full({x->shape.n, width, x->shape.h, x->shape.w}, c);
        },
        width);
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    REQUIRE(a.shape == b.shape);
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data[i] - b.data[i]));
    return m;
}

} // namespace

TEST_CASE("one layer degenerates identically for every connection kind") {
    auto x0 = Tensor::make({1, 3, 2, 2});
    for (std::size_t i = 0; i < x0->size(); ++i) x0->data[i] = 0.3 * double(i) - 1.0;
    std::vector<TransformFn> layers = {affine(2.0, 0.5, 3)};

    auto sum_trace = eval_dense_general(layers, x0, ConnectionKind::sum());
    auto cat_trace = eval_dense_general(layers, x0, ConnectionKind::concat());
    auto direct = layers[0](x0);
    CHECK(sum_trace.x[1]->data == direct->data);
    CHECK(cat_trace.x[1]->data == direct->data);
}

TEST_CASE("dense general with concatenation reproduces the incremental evaluator bit-exactly") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> d(-1, 1);
    for (int trial = 0; trial < 5; ++trial) {
        const int c0 = 2 + trial;
        auto x0 = Tensor::make({1, c0, 3, 3});
        for (auto& v : x0->data) v = d(rng);
        std::vector<TransformFn> layers;
        int w = c0;
        for (int l = 0; l < 3; ++l) {
            layers.push_back(verify::make_random_transform(w, 2, rng));
            w += 2;
        }
        auto general = eval_dense_general(layers, x0, ConnectionKind::concat());
        auto dense = eval_densenet(layers, x0);
        for (std::size_t i = 0; i < general.x.size(); ++i)
            CHECK(general.x[i]->data == dense.x[i]->data);
        for (std::size_t i = 0; i < general.s.size(); ++i)
            CHECK(general.s[i]->data == dense.s[i]->data);
    }
}

TEST_CASE("dense general with addition reproduces the unrolled evaluator bit-exactly") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> d(-1, 1);
    for (int trial = 0; trial < 5; ++trial) {
        const int width = 3 + trial;
        auto x0 = Tensor::make({1, width, 3, 3});
        for (auto& v : x0->data) v = d(rng);
        std::vector<TransformFn> layers;
        for (int l = 0; l < 3; ++l)
            layers.push_back(verify::make_random_transform(width, width, rng));
        auto general = eval_dense_general(layers, x0, ConnectionKind::sum());
        auto unrolled = eval_resnet_unrolled(layers, x0);
        for (std::size_t i = 0; i < general.x.size(); ++i)
            CHECK(general.x[i]->data == unrolled.x[i]->data);
    }
}

TEST_CASE("dense general rejects the mixed connection and width mismatches") {
    auto x0 = Tensor::full({1, 3, 2, 2}, 1.0);
    std::vector<TransformFn> layers = {affine(1.0, 0.0, 3)};
    CHECK_THROWS_AS(
        eval_dense_general(layers, x0, ConnectionKind::mixed(1, 1, LinkPosition::Fixed)),
        std::invalid_argument);
    std::vector<TransformFn> wide = {affine(1.0, 0.0, 5)};
    CHECK_THROWS_AS(eval_dense_general(wide, x0, ConnectionKind::sum()), std::invalid_argument);
}

TEST_CASE("densenet width arithmetic: c0, c0+k, c0+2k, ...") {
    auto x0 = Tensor::full({1, 5, 2, 2}, 0.1);
    std::vector<TransformFn> layers(4, constant(1.0, 3));
    auto trace = eval_densenet(layers, x0);
    for (int l = 0; l <= 4; ++l) CHECK(trace.s[l]->shape.c == 5 + 3 * l);
    for (int l = 1; l <= 4; ++l) CHECK(trace.x[l]->shape.c == 3);
}

TEST_CASE("resnet recursion with zero transforms is the pure identity path") {
    auto x0 = Tensor::make({1, 2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
    std::vector<TransformFn> layers(4, zero_transform(2));
    auto trace = eval_resnet_recursive(layers, x0);
    for (const auto& r : trace.r) CHECK(r->data == x0->data);
}

TEST_CASE("resnet recursion on scalars matches a hand loop") {
    // Scalar tensors, H_l(x) = a_l * x + b_l; hand recursion:
    // R_0 = 2; X_1 = 0.5*2 + 1 = 2; R_1 = 2 + 2 = 4;
    // X_2 = -1*4 + 0.25 = -3.75; R_2 = -3.75 + 4 = 0.25.
    auto x0 = Tensor::make({1, 1, 1, 1}, std::vector<double>{2.0});
    std::vector<TransformFn> layers = {affine(0.5, 1.0, 1), affine(-1.0, 0.25, 1)};
    auto trace = eval_resnet_recursive(layers, x0);
    CHECK(trace.x[1]->data[0] == doctest::Approx(2.0));
    CHECK(trace.r[1]->data[0] == doctest::Approx(4.0));
    CHECK(trace.x[2]->data[0] == doctest::Approx(-3.75));
    CHECK(trace.r[2]->data[0] == doctest::Approx(0.25));
}

TEST_CASE("recursion trace satisfies R_l = X_0 + ... + X_l") {
    std::mt19937_64 rng(21);
    auto x0 = Tensor::make({1, 4, 3, 3});
    std::uniform_real_distribution<double> d(-1, 1);
    for (auto& v : x0->data) v = d(rng);
    std::vector<TransformFn> layers;
    for (int l = 0; l < 5; ++l) layers.push_back(verify::make_random_transform(4, 4, rng));
    auto trace = eval_resnet_recursive(layers, x0);
    for (std::size_t l = 0; l < trace.r.size(); ++l) {
        auto summed = trace.x[0];
        for (std::size_t i = 1; i <= l; ++i) summed = add(summed, trace.x[i]);
        CHECK(max_abs_diff(*trace.r[l], *summed) <= 1e-12);
    }
}

TEST_CASE("unrolled evaluator with constant transforms follows the closed form") {
    // H(x) = c identically; X_0 = x0, X_l = c for l >= 1; S_l = x0 + l*c.
    const double c = 0.75;
    auto x0 = Tensor::full({1, 2, 2, 2}, 3.0);
    std::vector<TransformFn> layers(4, constant(c, 2));
    auto trace = eval_resnet_unrolled(layers, x0);
    for (int l = 1; l <= 4; ++l)
        for (double v : trace.x[l]->data) CHECK(v == c);
    for (int l = 0; l <= 4; ++l)
        for (double v : trace.s[l]->data) CHECK(v == doctest::Approx(3.0 + l * c));
}

TEST_CASE("unrolling equivalence holds for random nonlinear networks, L in 2..8") {
    std::mt19937_64 rng(33);
    std::normal_distribution<double> d(0.0, 1.0);
    double worst = 0.0;
    for (int depth = 2; depth <= 8; ++depth)
        for (int trial = 0; trial < 5; ++trial) {
            const int width = 4 + static_cast<int>(rng() % 13);
            auto x0 = Tensor::make({1, width, 8, 8});
            for (auto& v : x0->data) v = d(rng);
            std::vector<TransformFn> layers;
            for (int l = 0; l < depth; ++l)
                layers.push_back(verify::make_random_transform(width, width, rng));
            auto rec = eval_resnet_recursive(layers, x0);
            auto unr = eval_resnet_unrolled(layers, x0);
            worst = std::max(worst, max_abs_diff(*rec.x.back(), *unr.x.back()));
        }
    CHECK(worst <= 1e-10);
}

TEST_CASE("inner link step semantics") {
    std::mt19937_64 rng(41);
    auto s = Tensor::make({1, 6, 2, 2});
    std::uniform_real_distribution<double> d(-1, 1);
    for (auto& v : s->data) v = d(rng);

    auto same = inner_link_step(s, zero_transform(2), 3);
    CHECK(same->data == s->data); // zero transform: bit-identical

    // offset = width - k1 leaves the leading channels untouched.
    auto tail = inner_link_step(s, constant(1.0, 2), 4);
    for (int c = 0; c < 4; ++c)
        for (int h = 0; h < 2; ++h)
            for (int w = 0; w < 2; ++w) CHECK(tail->at(0, c, h, w) == s->at(0, c, h, w));

    CHECK_THROWS_AS(inner_link_step(s, constant(1.0, 2), 5), std::invalid_argument);
}

TEST_CASE("inner link at offset 0 over the full width is one additive recursion step") {
    std::mt19937_64 rng(43);
    auto s = Tensor::make({1, 4, 3, 3});
    std::uniform_real_distribution<double> d(-1, 1);
    for (auto& v : s->data) v = d(rng);
    auto h = verify::make_random_transform(4, 4, rng);
    auto stepped = inner_link_step(s, h, 0);
    std::vector<TransformFn> one = {h};
    auto trace = eval_resnet_recursive(one, s);
    CHECK(stepped->data == trace.r[1]->data);
}

TEST_CASE("outer link step grows the width by k2") {
    auto s = Tensor::full({1, 24, 2, 2}, 0.5);
    TensorPtr cur = s;
    std::vector<int> widths = {cur->shape.c};
    for (int step = 0; step < 3; ++step) {
        cur = outer_link_step(cur, constant(1.0, 12));
        widths.push_back(cur->shape.c);
    }
    CHECK(widths == std::vector<int>{24, 36, 48, 60});

    CHECK(outer_link_step(s, TransformFn{}) == s); // absent transform: identity
}

TEST_CASE("outer link step equals the densenet layer-input construction") {
    std::mt19937_64 rng(47);
    auto x0 = Tensor::make({1, 5, 2, 2});
    std::uniform_real_distribution<double> d(-1, 1);
    for (auto& v : x0->data) v = d(rng);
    auto h = verify::make_random_transform(5, 3, rng);
    auto stepped = outer_link_step(x0, h);
    std::vector<TransformFn> one = {h};
    auto trace = eval_densenet(one, x0);
    CHECK(stepped->data == trace.s[1]->data);
}

TEST_CASE("mixed step reduction table") {
    std::mt19937_64 rng(53);
    auto s = Tensor::make({1, 6, 2, 2});
    std::uniform_real_distribution<double> d(-1, 1);
    for (auto& v : s->data) v = d(rng);

    SUBCASE("k1 = 0 reduces to the outer link step") {
        auto h_out = verify::make_random_transform(6, 3, rng);
        auto mixed = mixed_step(s, TransformFn{}, h_out, ConnectionKind::mixed(0, 3));
        auto outer = outer_link_step(s, h_out);
        CHECK(mixed->data == outer->data);
    }

    SUBCASE("k2 = 0, fixed, k1 = width reduces to the additive recursion step") {
        auto h_in = verify::make_random_transform(6, 6, rng);
        auto mixed =
            mixed_step(s, h_in, TransformFn{}, ConnectionKind::mixed(6, 0, LinkPosition::Fixed));
        std::vector<TransformFn> one = {h_in};
        auto trace = eval_resnet_recursive(one, s);
        CHECK(mixed->data == trace.r[1]->data);
    }

    SUBCASE("fixed vs unfixed witness: width 8, k1 = k2 = 2, constant inner transform") {
        auto w8 = Tensor::make({1, 8, 2, 2});
        for (std::size_t i = 0; i < w8->size(); ++i) w8->data[i] = 0.01 * double(i);
        auto ones = constant(1.0, 2);
        auto fixed = mixed_step(w8, ones, ones, ConnectionKind::mixed(2, 2, LinkPosition::Fixed));
        auto unfixed =
            mixed_step(w8, ones, ones, ConnectionKind::mixed(2, 2, LinkPosition::Unfixed));
        // Fixed perturbs [0, 2), unfixed perturbs [6, 8); outputs differ.
        CHECK(fixed->data != unfixed->data);
        for (int c = 0; c < 2; ++c)
            for (int h = 0; h < 2; ++h)
                for (int w = 0; w < 2; ++w) {
                    CHECK(fixed->at(0, c, h, w) == w8->at(0, c, h, w) + 1.0);
                    CHECK(unfixed->at(0, c + 6, h, w) == w8->at(0, c + 6, h, w) + 1.0);
                }
    }

    SUBCASE("k1 larger than the current width is an error") {
        auto h_in = verify::make_random_transform(6, 7, rng);
        CHECK_THROWS_AS(
            mixed_step(s, h_in, TransformFn{}, ConnectionKind::mixed(7, 0, LinkPosition::Fixed)),
            std::invalid_argument);
    }
}

TEST_CASE("connection kind invariants") {
    CHECK_THROWS_AS(ConnectionKind::mixed(0, 0), std::invalid_argument);
    CHECK_THROWS_AS(ConnectionKind::mixed(-1, 2), std::invalid_argument);
}

TEST_CASE("dual-path oracle matches the fixed mixed chain bit-exactly") {
    std::mt19937_64 rng(59);
    std::uniform_real_distribution<double> d(-1, 1);
    for (int trial = 0; trial < 10; ++trial) {
        const int k1 = 1 + static_cast<int>(rng() % 3);
        const int k2 = 1 + static_cast<int>(rng() % 3);
        const int c0 = k1 + static_cast<int>(rng() % 4);
        const int depth = 1 + static_cast<int>(rng() % 4);
        auto x0 = Tensor::make({1, c0, 3, 3});
        for (auto& v : x0->data) v = d(rng);
        std::vector<MixedLayer> layers;
        int w = c0;
        for (int l = 0; l < depth; ++l) {
            layers.push_back({verify::make_random_transform(w, k1, rng),
                              verify::make_random_transform(w, k2, rng)});
            w += k2;
        }
        auto mixed = eval_mixed(layers, x0, ConnectionKind::mixed(k1, k2, LinkPosition::Fixed));
        auto dual = eval_dual_path_reference(layers, x0, k1, k2);
        CHECK(mixed.s.back()->data == dual->data);
    }
}

TEST_CASE("dual-path oracle degenerations") {
    std::mt19937_64 rng(61);
    auto x0 = Tensor::make({1, 4, 2, 2});
    std::uniform_real_distribution<double> d(-1, 1);
    for (auto& v : x0->data) v = d(rng);

    SUBCASE("k2 = 0 is the additive recursion") {
        std::vector<MixedLayer> layers;
        std::vector<TransformFn> fns;
        for (int l = 0; l < 3; ++l) {
            auto h = verify::make_random_transform(4, 4, rng);
            layers.push_back({h, TransformFn{}});
            fns.push_back(h);
        }
        auto dual = eval_dual_path_reference(layers, x0, 4, 0);
        auto trace = eval_resnet_recursive(fns, x0);
        CHECK(dual->data == trace.r.back()->data);
    }

    SUBCASE("k1 = 0 is pure concatenation") {
        std::vector<MixedLayer> layers;
        std::vector<TransformFn> fns;
        int w = 4;
        for (int l = 0; l < 3; ++l) {
            auto h = verify::make_random_transform(w, 2, rng);
            layers.push_back({TransformFn{}, h});
            fns.push_back(h);
            w += 2;
        }
        auto dual = eval_dual_path_reference(layers, x0, 0, 2);
        auto trace = eval_densenet(fns, x0);
        CHECK(dual->data == trace.s.back()->data);
    }
}

TEST_CASE("width law: width(S_l) = width(S_0) + l*k2 exactly") {
    std::mt19937_64 rng(67);
    for (int trial = 0; trial < 5; ++trial) {
        const int k1 = 1 + static_cast<int>(rng() % 3);
        const int k2 = static_cast<int>(rng() % 4);
        const int c0 = k1 + 2;
        auto x0 = Tensor::full({1, c0, 2, 2}, 0.3);
        auto cfg = ConnectionKind::mixed(k1, k2, LinkPosition::Unfixed);
        TensorPtr s = x0;
        for (int l = 1; l <= 4; ++l) {
            auto h_in = constant(0.5, k1);
            auto h_out = k2 > 0 ? constant(0.25, k2) : TransformFn{};
            s = mixed_step(s, h_in, h_out, cfg);
            CHECK(s->shape.c == c0 + l * k2);
        }
    }
}

TEST_CASE("verify suites pass and report deviations") {
    auto unroll = verify::unrolling_suite(3, 2, 6, 101);
    CHECK(unroll.pass);
    CHECK(unroll.max_deviation <= 1e-10);

    auto reduction = verify::reduction_suite(10, 0, 202);
    CHECK(reduction.pass);

    auto width = verify::width_law_suite(10, 303);
    CHECK(width.pass);

    auto witness = verify::witness_suite();
    CHECK(witness.pass);
}

TEST_CASE("an off-by-one addition offset trips the locality invariant") {
    verify::StepFn buggy = [](const TensorPtr& s, const TransformFn& h_in,
                              const TransformFn& h_out, const ConnectionKind& cfg) {
        TensorPtr merged = s;
        if (cfg.k1 > 0) {
            int offset = cfg.position == LinkPosition::Fixed ? 0 : s->shape.c - cfg.k1;
            offset = offset == 0 ? 1 : offset - 1; // off by one
            offset = std::min(offset, s->shape.c - cfg.k1);
            merged = channel_add_at(s, h_in(s), std::max(0, offset));
        }
        if (cfg.k2 > 0) merged = channel_concat(merged, h_out(s));
        return merged;
    };
    auto result = verify::width_law_suite(20, 404, buggy);
    CHECK_FALSE(result.pass);
    CHECK(result.detail.find("locality") != std::string::npos);
    CHECK(result.failing_seed >= 404);
}
