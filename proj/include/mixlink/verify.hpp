#ifndef MIXLINK_VERIFY_HPP
#define MIXLINK_VERIFY_HPP

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "mixlink/topology.hpp"

// Numerical witnesses for the structural claims: the additive recursion
// unrolls into explicit sums, the mixed step reduces to the pure
// architectures under the published configurations, widths follow the
// closed-form law, and the two position modes are genuinely different.

namespace mixlink::verify {

struct SuiteResult {
    std::string suite;
    bool pass = true;
    int trials = 0;
    double max_deviation = 0.0;
    std::uint64_t failing_seed = 0;
    std::string detail;
};

/// A randomly parameterized bottleneck transform (eval-mode normalization
/// with randomized statistics, then the two convolutions), usable as H_l.
TransformFn make_random_transform(int in_width, int out_width, std::mt19937_64& rng);

/// Recursive vs unrolled additive evaluation: X_L must agree within
/// `tolerance` for every trial. Trials use random widths <= 16 on an
/// 8x8 spatial extent.
SuiteResult unrolling_suite(int trials_per_depth, int depth_min, int depth_max,
                            std::uint64_t seed, double tolerance = 1e-10);

/// Bit-exact trace reductions of the mixed step: arch 1 (k1 = width,
/// k2 = 0, fixed) against the additive recursion, arch 2 (k1 = 0) against
/// pure concatenation, arch 3 (fixed dual path) against the independent
/// dual-path oracle. arch = 0 runs all three.
SuiteResult reduction_suite(int trials, int arch, std::uint64_t seed);

/// Hook for fault-injection tests: a drop-in replacement for mixed_step.
using StepFn = std::function<TensorPtr(const TensorPtr&, const TransformFn&, const TransformFn&,
                                       const ConnectionKind&)>;

/// Width law (width(S_l) = width(S_0) + l * k2, exactly) and inner-link
/// locality (channels outside the addition window keep their exact bits).
SuiteResult width_law_suite(int trials, std::uint64_t seed, StepFn step = nullptr);

/// The documented fixed/unfixed witness: width 8, k1 = k2 = 2, constant
/// inner transform. The two position modes must differ on at least one
/// element, exactly.
SuiteResult witness_suite();

/// All four suites in CLI order.
std::vector<SuiteResult> run_all(int trials, int depth_min, int depth_max, std::uint64_t seed,
                                 double tolerance = 1e-10);

} // namespace mixlink::verify

#endif
