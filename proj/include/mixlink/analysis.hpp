#ifndef MIXLINK_ANALYSIS_HPP
#define MIXLINK_ANALYSIS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "mixlink/blocks.hpp"

// Static accounting over NetworkSpecs: per-layer parameter and FLOP tables,
// depth labels, and comparisons against the published model sizes. All of
// it walks the spec directly and never touches a built ParamStore, so the
// builder and the accounting stay independently checkable.

namespace mixlink {

struct ParamRow {
    std::string name;
    std::string kind; // conv / batch_norm / relu / pool / linear / ...
    Shape in_shape;   // batch dimension reported as 1
    Shape out_shape;
    long long params = 0;
    long long flops = 0;
};

struct ParamReport {
    NetworkSpec spec;
    std::vector<ParamRow> rows;
    long long total_params = 0;
    long long total_flops = 0;

    double total_params_millions() const { return static_cast<double>(total_params) / 1e6; }
};

/// Builds the per-layer table for a batch-1 pass at the spec's input size.
/// Convolutions carry no bias (BN provides the shift) and BN running
/// statistics are not counted. FLOP conventions: conv 2*F*C*kh*kw*H'*W',
/// BN 2 per element, ReLU 1 per element, average pooling window^2 per
/// output element, max pooling window^2 - 1, global average pooling H*W
/// per channel, linear 2*K*C + K.
ParamReport count_params(const NetworkSpec& spec);

/// Same table with the spatial accounting at an explicit input size.
ParamReport count_flops(const NetworkSpec& spec, int input_height, int input_width);

/// The "L" in a network's name: 2 * sum(n_b) + 1 stem + transitions + 1
/// classifier.
int depth_label(const NetworkSpec& spec);

struct ComparisonResult {
    bool pass = false;
    double rel_error = 0.0;
};

/// |total - paper| / paper <= tolerance.
ComparisonResult compare_to_reference(const ParamReport& report, double paper_millions,
                                      double tolerance);

/// Published totals (millions) for the six presets.
double paper_param_target(const std::string& preset);

struct GridCell {
    int multiplier = 0;
    double theta = 0.0;
    // Preset name -> (total millions, relative error vs the paper value).
    std::vector<std::string> presets;
    std::vector<double> totals_millions;
    std::vector<double> rel_errors;
    bool all_within_tolerance = false;
    double worst_rel_error = 0.0;
};

struct GridReport {
    std::vector<GridCell> cells;
    int best_index = -1; // cell with every preset within tolerance, else min worst error
    double tolerance = 0.10;
};

/// Sweeps m in {1, 2, 4} x theta in {0.5, 1.0} over all six presets.
GridReport param_grid_search(double tolerance = 0.10);

} // namespace mixlink

#endif
