// Acceptance suite: one pass/fail line per criterion, with timings.
// Exit code 0 iff every criterion holds.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "mixlink/analysis.hpp"
#include "mixlink/blocks.hpp"
#include "mixlink/cli.hpp"
#include "mixlink/gradcheck.hpp"
#include "mixlink/ops.hpp"
#include "mixlink/report_io.hpp"
#include "mixlink/topology.hpp"
#include "mixlink/training.hpp"
#include "mixlink/verify.hpp"

using namespace mixlink;

namespace {

int failures = 0;

class Timer {
public:
    Timer() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

void report(int criterion, bool pass, const std::string& detail, double seconds) {
    std::printf("[%s] criterion %d: %s (%.1fs)\n", pass ? "PASS" : "FAIL", criterion,
                detail.c_str(), seconds);
    std::fflush(stdout);
    if (!pass) ++failures;
}

// 1. Recursive and unrolled additive evaluation agree on the final output
//    for 100 random networks per depth in 2..8, within 1e-10, in 64-bit.
void criterion_1() {
    Timer timer;
    const auto result = verify::unrolling_suite(100, 2, 8, 20240101, 1e-10);
    std::ostringstream detail;
    detail << "unrolling equivalence over " << result.trials
           << " random networks, max |recursive - unrolled| = " << result.max_deviation
           << " <= 1e-10";
    report(1, result.pass && timer.seconds() < 60.0, detail.str(), timer.seconds());
}

// 2. The mixed step reduces bit-exactly to the pure concatenation
//    evaluator (k1 = 0), the additive recursion (k1 = width, k2 = 0,
//    fixed) and the dual-path oracle (fixed, both positive), 50 trials each.
void criterion_2() {
    Timer timer;
    bool pass = true;
    std::ostringstream detail;
    detail << "reductions bit-exact:";
    for (int arch : {1, 2, 3}) {
        const auto result = verify::reduction_suite(50, arch, 20240200 + arch);
        pass = pass && result.pass;
        detail << " arch-" << arch << (result.pass ? " ok" : " FAILED");
        if (!result.pass) detail << " (seed " << result.failing_seed << ": " << result.detail << ")";
    }
    report(2, pass && timer.seconds() < 60.0, detail.str(), timer.seconds());
}

// 3. Finite-difference gradient checks: every primitive op and a full
//    2-layer mixed block, h = 1e-5, relative error <= 1e-4, >= 100 trials.
void criterion_3() {
    Timer timer;
    bool pass = true;
    double worst = 0.0;
    std::string worst_op;
    for (const auto& op : gradcheck::op_names()) {
        const auto r = gradcheck::run_op<double>(op, 100, 20240300);
        if (!r.pass) {
            pass = false;
            std::printf("       gradcheck FAILED for %s at seed %llu: %s\n", op.c_str(),
                        static_cast<unsigned long long>(r.failing_seed),
                        r.worst_coordinate.c_str());
        }
        if (r.max_rel_error > worst) {
            worst = r.max_rel_error;
            worst_op = op;
        }
    }
    std::ostringstream detail;
    detail << "100 trials x " << gradcheck::op_names().size()
           << " checks (primitives + 2-layer mixed block), worst rel error " << worst << " ("
           << worst_op << ") <= 1e-4";
    report(3, pass && timer.seconds() < 300.0, detail.str(), timer.seconds());
}

// 4. The (m, theta) grid contains a setting matching all six published
//    totals within 10%; the selected setting is recorded.
void criterion_4() {
    Timer timer;
    const auto grid = param_grid_search(0.10);
    bool pass = grid.best_index >= 0 && grid.cells[grid.best_index].all_within_tolerance;
    std::ostringstream detail;
    if (pass) {
        const auto& best = grid.cells[grid.best_index];
        detail << "selected m = " << best.multiplier << ", theta = " << best.theta << ":";
        for (std::size_t i = 0; i < best.presets.size(); ++i) {
            char buf[96];
            std::snprintf(buf, sizeof(buf), " %s %.2fM (err %.1f%%)", best.presets[i].c_str(),
                          best.totals_millions[i], 100.0 * best.rel_errors[i]);
            detail << buf;
        }
    } else {
        detail << "no grid setting matched all six paper totals; best cell index "
               << grid.best_index;
    }
    report(4, pass && timer.seconds() < 30.0, detail.str(), timer.seconds());
}

// 5. Depth labels reproduce every published network name exactly.
void criterion_5() {
    Timer timer;
    const std::vector<std::pair<std::string, int>> expected = {
        {"mixnet-100", 100}, {"mixnet-250", 250}, {"mixnet-190", 190},
        {"mixnet-105", 105}, {"mixnet-121", 121}, {"mixnet-141", 141}};
    bool pass = true;
    std::ostringstream detail;
    detail << "depth labels:";
    for (const auto& [name, depth] : expected) {
        const int got = depth_label(preset_spec(name));
        pass = pass && got == depth;
        detail << " " << name << "=" << got;
    }
    report(5, pass, detail.str(), timer.seconds());
}

// 6. Width and spatial chains: the CIFAR family reports feature maps
//    32/16/8 and the ImageNet presets 56/28/14/7, with per-layer widths on
//    the closed-form width law exactly, checked on built graphs and by a
//    real forward pass.
void criterion_6() {
    Timer timer;
    bool pass = true;
    std::ostringstream detail;

    auto width_law_holds = [](const LayerGraph& g) {
        int width = g.spec.stem.out_channels;
        for (std::size_t b = 0; b < g.blocks.size(); ++b) {
            if (g.blocks[b].in_width != width) return false;
            const int k2 = g.blocks[b].config.k2;
            if (g.blocks[b].out_width != width + g.spec.blocks[b].layers * k2) return false;
            width = g.blocks[b].out_width;
            if (b < g.transitions.size()) {
                if (g.transitions[b].out_width !=
                    static_cast<int>(std::floor(g.spec.theta * width)))
                    return false;
                width = g.transitions[b].out_width;
            }
        }
        return true;
    };

    auto spatial_chain = [](LayerGraph& g, const TensorPtr& input) {
        std::vector<int> sizes;
        auto t = conv2d(input, g.stem_kernel, g.spec.stem.stride, g.spec.stem.pad);
        if (g.spec.stem.max_pool_after) t = max_pool(t, 3, 2, 1);
        for (std::size_t b = 0; b < g.blocks.size(); ++b) {
            const auto connect = g.blocks[b].config.connection();
            for (const auto& layer : g.blocks[b].layers)
                t = mixed_step(t, layer.inner, layer.outer, connect);
            sizes.push_back(t->shape.h);
            if (b < g.transitions.size())
                t = avg_pool(conv2d(t, g.transitions[b].kernel, 1, 0), 2, 2);
        }
        return sizes;
    };

    {
        // Full-size published CIFAR network, real 32x32 forward.
        LayerGraph g = build_network(preset_spec("mixnet-100"), 0);
        pass = pass && width_law_holds(g);
        auto input = Tensor::full({1, 3, 32, 32}, 0.1);
        const auto sizes = spatial_chain(g, input);
        const bool ok = sizes == std::vector<int>{32, 16, 8};
        pass = pass && ok;
        detail << "mixnet-100 feature maps " << sizes[0] << "/" << sizes[1] << "/" << sizes[2]
               << (ok ? "" : " (MISMATCH)");
    }
    {
        // Full-size published ImageNet network, real 224x224 forward.
        LayerGraph g = build_network(preset_spec("mixnet-105"), 0);
        pass = pass && width_law_holds(g);
        auto input = Tensor::full({1, 3, 224, 224}, 0.1);
        const auto sizes = spatial_chain(g, input);
        const bool ok = sizes == std::vector<int>{56, 28, 14, 7};
        pass = pass && ok;
        detail << "; mixnet-105 feature maps " << sizes[0] << "/" << sizes[1] << "/" << sizes[2]
               << "/" << sizes[3] << (ok ? "" : " (MISMATCH)");
        // Remaining presets: width law on the built graphs.
        for (const char* name : {"mixnet-250", "mixnet-190", "mixnet-121", "mixnet-141"}) {
            LayerGraph other = build_network(preset_spec(name), 0);
            if (!width_law_holds(other)) {
                pass = false;
                detail << "; width law FAILED for " << name;
            }
        }
        detail << "; width law exact on all six presets";
    }
    report(6, pass, detail.str(), timer.seconds());
}

// 7. The default toy task reaches >= 95% train accuracy and beats the
//    nearest-pattern oracle's test accuracy within 200 epochs; seeded
//    reruns are bit-identical.
void criterion_7() {
    Timer timer;
    cli::RunConfig cfg; // the documented toy defaults: 60 epochs, lr 0.03
    cfg.seed = 0;

    auto run = [&]() {
        const auto& d = cfg.train.dataset;
        TrainConfig tc = cfg.train.train;
        tc.seed = cfg.seed;
        const ToyDataset data =
            make_toy_dataset(d.classes, d.per_class, d.size, d.sigma, cfg.seed, d.per_class_test);
        LayerGraph graph = build_network(cli::toy_network_spec(d.classes, d.size), cfg.seed);
        auto history = train_loop(graph, data, tc);
        return std::make_pair(history_to_csv(history),
                              std::make_tuple(history.final_train_accuracy(),
                                              history.final_test_accuracy(),
                                              nearest_pattern_accuracy(data, true)));
    };
    const auto first = run();
    const auto second = run();
    const auto [train_acc, test_acc, oracle] = first.second;
    const bool identical = first.first == second.first;
    const bool pass = train_acc >= 0.95 && test_acc > oracle && identical;
    std::ostringstream detail;
    detail << "train acc " << train_acc << " >= 0.95, test acc " << test_acc
           << " > nearest-pattern oracle " << oracle << ", "
           << cfg.train.train.epochs << " epochs (budget 200), seeded rerun "
           << (identical ? "bit-identical" : "DIFFERS");
    report(7, pass && timer.seconds() < 300.0, detail.str(), timer.seconds());
}

// 8. The documented witness separates the two position modes exactly.
void criterion_8() {
    Timer timer;
    const auto result = verify::witness_suite();
    report(8, result.pass, "fixed vs unfixed witness (width 8, k1 = k2 = 2): " + result.detail,
           timer.seconds());
}

// 9. Out of scope by design: the published error rates (CIFAR-10 3.13%,
//    CIFAR-100 16.96%, SVHN 1.51%, ImageNet top-1 20.4%) and the
//    quantitative ablation curves. The ablation commands run as
//    qualitative toy analogues with no numeric bound; this criterion only
//    verifies they execute and emit paired curves.
void criterion_9() {
    Timer timer;
    auto cfg = cli::parse_config(R"({"seed": 3, "train": {"epochs": 2, "batch_size": 32,
        "lr": 0.05, "ablate": "position",
        "dataset": {"classes": 3, "per_class": 8, "per_class_test": 4, "size": 8}},
        "output": {"path": "acceptance_ablate.csv"}})");
    std::ostringstream out, err;
    const int code = cli::cmd_train_toy(cfg, out, err);
    std::remove("acceptance_ablate.csv");
    report(9, code == cli::kExitOk,
           "published error rates NOT reproduced at desk scale (by design); --ablate runs as a "
           "qualitative analogue only",
           timer.seconds());
}

} // namespace

int main() {
    std::printf("acceptance suite\n");
    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criterion_6();
    criterion_7();
    criterion_8();
    criterion_9();
    if (failures == 0)
        std::printf("all criteria passed\n");
    else
        std::printf("%d criteria FAILED\n", failures);
    return failures == 0 ? 0 : 1;
}
