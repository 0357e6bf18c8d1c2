#include "mixlink/analysis.hpp"

#include <cmath>
#include <stdexcept>

namespace mixlink {

namespace {

struct Accounting {
    ParamReport report;
    int h = 0, w = 0; // current spatial extent, batch 1

    void add_conv(const std::string& name, int in_c, int out_c, int kernel, int stride, int pad) {
        const int oh = (h + 2 * pad - kernel) / stride + 1;
        const int ow = (w + 2 * pad - kernel) / stride + 1;
        ParamRow row;
        row.name = name;
        row.kind = "conv" + std::to_string(kernel) + "x" + std::to_string(kernel);
        row.in_shape = {1, in_c, h, w};
        row.out_shape = {1, out_c, oh, ow};
        row.params = static_cast<long long>(out_c) * in_c * kernel * kernel;
        row.flops = 2LL * out_c * in_c * kernel * kernel * oh * ow;
        report.rows.push_back(row);
        h = oh;
        w = ow;
    }

    void add_batch_norm(const std::string& name, int channels) {
        ParamRow row;
        row.name = name;
        row.kind = "batch_norm";
        row.in_shape = row.out_shape = {1, channels, h, w};
        row.params = 2LL * channels;
        row.flops = 2LL * channels * h * w;
        report.rows.push_back(row);
    }

    void add_relu(const std::string& name, int channels) {
        ParamRow row;
        row.name = name;
        row.kind = "relu";
        row.in_shape = row.out_shape = {1, channels, h, w};
        row.flops = static_cast<long long>(channels) * h * w;
        report.rows.push_back(row);
    }

    void add_pool(const std::string& name, const std::string& kind, int channels, int window,
                  int stride, int pad, long long flops_per_out) {
        const int oh = (h + 2 * pad - window) / stride + 1;
        const int ow = (w + 2 * pad - window) / stride + 1;
        ParamRow row;
        row.name = name;
        row.kind = kind;
        row.in_shape = {1, channels, h, w};
        row.out_shape = {1, channels, oh, ow};
        row.flops = flops_per_out * channels * oh * ow;
        report.rows.push_back(row);
        h = oh;
        w = ow;
    }

    void add_global_pool(const std::string& name, int channels) {
        ParamRow row;
        row.name = name;
        row.kind = "global_avg_pool";
        row.in_shape = {1, channels, h, w};
        row.out_shape = {1, channels, 1, 1};
        row.flops = static_cast<long long>(channels) * h * w;
        report.rows.push_back(row);
        h = 1;
        w = 1;
    }

    void add_linear(const std::string& name, int in_c, int out_c) {
        ParamRow row;
        row.name = name;
        row.kind = "linear";
        row.in_shape = {1, in_c, 1, 1};
        row.out_shape = {1, out_c, 1, 1};
        row.params = static_cast<long long>(out_c) * in_c + out_c;
        row.flops = 2LL * out_c * in_c + out_c;
        report.rows.push_back(row);
    }

    void add_bottleneck(const std::string& prefix, int in, int out, int multiplier) {
        const int mid = multiplier * out;
        add_batch_norm(prefix + ".bn1", in);
        add_relu(prefix + ".relu1", in);
        add_conv(prefix + ".conv1", in, mid, 1, 1, 0);
        add_batch_norm(prefix + ".bn2", mid);
        add_relu(prefix + ".relu2", mid);
        add_conv(prefix + ".conv2", mid, out, 3, 1, 1);
    }
};

ParamReport build_report(const NetworkSpec& spec, int input_h, int input_w) {
    Accounting acc;
    acc.report.spec = spec;
    acc.h = input_h;
    acc.w = input_w;

    acc.add_conv("stem.conv", spec.input_channels, spec.stem.out_channels, spec.stem.kernel,
                 spec.stem.stride, spec.stem.pad);
    if (spec.stem.max_pool_after)
        acc.add_pool("stem.max_pool", "max_pool", spec.stem.out_channels, 3, 2, 1, 3 * 3 - 1);

    int width = spec.stem.out_channels;
    for (std::size_t b = 0; b < spec.blocks.size(); ++b) {
        const auto& bs = spec.blocks[b];
        // The bottleneck convs keep spatial size; leaving acc.h/w untouched
        // inside a layer is safe because every conv here is stride 1 with
        // size-preserving padding.
        for (int layer = 0; layer < bs.layers; ++layer) {
            const std::string lp =
                "block" + std::to_string(b + 1) + ".layer" + std::to_string(layer + 1);
            if (bs.link.k1 > 0) acc.add_bottleneck(lp + ".inner", width, bs.link.k1, spec.multiplier);
            if (bs.link.k2 > 0) acc.add_bottleneck(lp + ".outer", width, bs.link.k2, spec.multiplier);
            width += bs.link.k2;
        }
        if (b + 1 < spec.blocks.size()) {
            const int out_width = static_cast<int>(std::floor(spec.theta * width));
            const std::string tp = "transition" + std::to_string(b + 1);
            acc.add_conv(tp + ".conv", width, out_width, 1, 1, 0);
            acc.add_pool(tp + ".avg_pool", "avg_pool", out_width, 2, 2, 0, 2 * 2);
            width = out_width;
        }
    }

    acc.add_global_pool("head.global_avg_pool", width);
    acc.add_linear("classifier", width, spec.classes);

    for (const auto& row : acc.report.rows) {
        acc.report.total_params += row.params;
        acc.report.total_flops += row.flops;
    }
    return acc.report;
}

} // namespace

ParamReport count_params(const NetworkSpec& spec) {
    return build_report(spec, spec.input_height, spec.input_width);
}

ParamReport count_flops(const NetworkSpec& spec, int input_height, int input_width) {
    if (input_height <= 0 || input_width <= 0)
        throw std::invalid_argument("input size must be positive");
    return build_report(spec, input_height, input_width);
}

int depth_label(const NetworkSpec& spec) {
    int layer_sum = 0;
    for (const auto& b : spec.blocks) layer_sum += b.layers;
    const int transitions = static_cast<int>(spec.blocks.size()) - 1;
    return 2 * layer_sum + 1 + transitions + 1;
}

ComparisonResult compare_to_reference(const ParamReport& report, double paper_millions,
                                      double tolerance) {
    if (!(tolerance > 0)) throw std::invalid_argument("tolerance must be positive");
    ComparisonResult r;
    r.rel_error = std::abs(report.total_params_millions() - paper_millions) / paper_millions;
    r.pass = r.rel_error <= tolerance;
    return r;
}

double paper_param_target(const std::string& preset) {
    if (preset == "mixnet-100") return 1.5;
    if (preset == "mixnet-250") return 29.0;
    if (preset == "mixnet-190") return 48.5;
    if (preset == "mixnet-105") return 11.16;
    if (preset == "mixnet-121") return 21.86;
    if (preset == "mixnet-141") return 41.07;
    throw std::invalid_argument("no published parameter total for \"" + preset + "\"");
}

GridReport param_grid_search(double tolerance) {
    GridReport grid;
    grid.tolerance = tolerance;
    double best_worst = std::numeric_limits<double>::infinity();
    for (int m : {1, 2, 4}) {
        for (double theta : {0.5, 1.0}) {
            GridCell cell;
            cell.multiplier = m;
            cell.theta = theta;
            cell.all_within_tolerance = true;
            for (const auto& name : preset_names()) {
                NetworkSpec spec = preset_spec(name);
                spec.multiplier = m;
                spec.theta = theta;
                const ParamReport report = count_params(spec);
                const double target = paper_param_target(name);
                const double rel =
                    std::abs(report.total_params_millions() - target) / target;
                cell.presets.push_back(name);
                cell.totals_millions.push_back(report.total_params_millions());
                cell.rel_errors.push_back(rel);
                cell.worst_rel_error = std::max(cell.worst_rel_error, rel);
                if (rel > tolerance) cell.all_within_tolerance = false;
            }
            grid.cells.push_back(cell);
        }
    }
    for (std::size_t i = 0; i < grid.cells.size(); ++i) {
        const auto& cell = grid.cells[i];
        if (cell.all_within_tolerance && cell.worst_rel_error < best_worst) {
            best_worst = cell.worst_rel_error;
            grid.best_index = static_cast<int>(i);
        }
    }
    if (grid.best_index < 0) {
        for (std::size_t i = 0; i < grid.cells.size(); ++i)
            if (grid.cells[i].worst_rel_error < best_worst) {
                best_worst = grid.cells[i].worst_rel_error;
                grid.best_index = static_cast<int>(i);
            }
    }
    return grid;
}

} // namespace mixlink
