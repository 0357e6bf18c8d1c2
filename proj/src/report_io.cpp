#include "mixlink/report_io.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <sstream>

#include <nlohmann/json.hpp>

namespace mixlink {

using json = nlohmann::ordered_json;

std::string format_number(double value) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    // Trim to the shortest representation that still round-trips.
    for (int prec = 1; prec < 17; ++prec) {
        char probe[64];
        std::snprintf(probe, sizeof(probe), "%.*g", prec, value);
        double back = 0.0;
        std::sscanf(probe, "%lf", &back);
        if (back == value) return probe;
    }
    return buf;
}

namespace {

json shape_to_json(const Shape& s) {
    return json::array({s.n, s.c, s.h, s.w});
}

json config_echo(const NetworkSpec& spec) {
    json j;
    j["name"] = spec.name;
    j["depth_label"] = depth_label(spec);
    j["blocks"] = json::array();
    for (const auto& b : spec.blocks)
        j["blocks"].push_back({{"layers", b.layers},
                               {"k1", b.link.k1},
                               {"k2", b.link.k2},
                               {"position", b.link.position == LinkPosition::Fixed ? "fixed" : "unfixed"}});
    j["multiplier"] = spec.multiplier;
    j["theta"] = spec.theta;
    j["classes"] = spec.classes;
    return j;
}

} // namespace

std::string report_to_json(const ParamReport& report, int indent) {
    json j;
    j["config"] = config_echo(report.spec);
    j["rows"] = json::array();
    for (const auto& row : report.rows)
        j["rows"].push_back({{"name", row.name},
                             {"kind", row.kind},
                             {"in_shape", shape_to_json(row.in_shape)},
                             {"out_shape", shape_to_json(row.out_shape)},
                             {"params", row.params},
                             {"flops", row.flops}});
    j["total_params"] = report.total_params;
    j["total_params_millions"] = report.total_params_millions();
    j["total_flops"] = report.total_flops;
    return j.dump(indent) + "\n";
}

std::string report_to_csv(const ParamReport& report) {
    std::ostringstream out;
    out << "name,kind,in_shape,out_shape,params,flops\n";
    for (const auto& row : report.rows)
        out << row.name << ',' << row.kind << ',' << row.in_shape.str() << ','
            << row.out_shape.str() << ',' << row.params << ',' << row.flops << '\n';
    out << "total,,,," << report.total_params << ',' << report.total_flops << '\n';
    return out.str();
}

std::string report_to_table(const ParamReport& report) {
    std::size_t name_w = 5;
    for (const auto& row : report.rows) name_w = std::max(name_w, row.name.size());
    std::ostringstream out;
    char line[256];
    std::snprintf(line, sizeof(line), "%-*s  %-16s %-16s %-16s %12s %14s\n",
                  static_cast<int>(name_w), "layer", "kind", "input", "output", "params",
                  "flops");
    out << line;
    for (const auto& row : report.rows) {
        std::snprintf(line, sizeof(line), "%-*s  %-16s %-16s %-16s %12lld %14lld\n",
                      static_cast<int>(name_w), row.name.c_str(), row.kind.c_str(),
                      row.in_shape.str().c_str(), row.out_shape.str().c_str(), row.params,
                      row.flops);
        out << line;
    }
    std::snprintf(line, sizeof(line), "%-*s  %-16s %-16s %-16s %12lld %14lld\n",
                  static_cast<int>(name_w), "total", "", "", "", report.total_params,
                  report.total_flops);
    out << line;
    std::snprintf(line, sizeof(line), "total parameters: %s M\n",
                  format_number(report.total_params_millions()).c_str());
    out << line;
    return out.str();
}

std::string grid_to_json(const GridReport& grid, int indent) {
    json j;
    j["tolerance"] = grid.tolerance;
    j["cells"] = json::array();
    for (const auto& cell : grid.cells) {
        json jc;
        jc["multiplier"] = cell.multiplier;
        jc["theta"] = cell.theta;
        jc["all_within_tolerance"] = cell.all_within_tolerance;
        jc["worst_rel_error"] = cell.worst_rel_error;
        jc["presets"] = json::array();
        for (std::size_t i = 0; i < cell.presets.size(); ++i)
            jc["presets"].push_back({{"name", cell.presets[i]},
                                     {"total_millions", cell.totals_millions[i]},
                                     {"paper_millions", paper_param_target(cell.presets[i])},
                                     {"rel_error", cell.rel_errors[i]}});
        j["cells"].push_back(jc);
    }
    if (grid.best_index >= 0) {
        j["selected"] = {{"multiplier", grid.cells[grid.best_index].multiplier},
                         {"theta", grid.cells[grid.best_index].theta},
                         {"all_within_tolerance",
                          grid.cells[grid.best_index].all_within_tolerance}};
    }
    return j.dump(indent) + "\n";
}

std::string grid_to_table(const GridReport& grid) {
    std::ostringstream out;
    out << "m  theta  ";
    for (const auto& name : grid.cells.front().presets) out << name << "  ";
    out << "worst_rel_err  all_within_10%\n";
    char buf[64];
    for (const auto& cell : grid.cells) {
        std::snprintf(buf, sizeof(buf), "%d  %.1f    ", cell.multiplier, cell.theta);
        out << buf;
        for (std::size_t i = 0; i < cell.presets.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%8.3fM   ", cell.totals_millions[i]);
            out << buf;
        }
        std::snprintf(buf, sizeof(buf), "%10.4f", cell.worst_rel_error);
        out << buf << "      " << (cell.all_within_tolerance ? "yes" : "no") << "\n";
    }
    if (grid.best_index >= 0) {
        const auto& best = grid.cells[grid.best_index];
        out << "selected setting: m = " << best.multiplier << ", theta = " << best.theta
            << (best.all_within_tolerance ? " (all presets within tolerance)"
                                          : " (best effort; not all presets within tolerance)")
            << "\n";
    }
    return out.str();
}

std::string history_to_csv(const TrainHistory& history) {
    std::ostringstream out;
    out << "epoch,lr,loss,train_acc,test_acc\n";
    for (const auto& e : history.epochs)
        out << e.epoch << ',' << format_number(e.lr) << ',' << format_number(e.loss) << ','
            << format_number(e.train_accuracy) << ',' << format_number(e.test_accuracy) << '\n';
    if (history.diverged) out << "# aborted: loss became non-finite\n";
    return out.str();
}

std::string suites_to_json(const std::vector<verify::SuiteResult>& suites, std::uint64_t seed,
                           int indent) {
    json j;
    j["seed"] = seed;
    j["suites"] = json::array();
    bool all = true;
    for (const auto& s : suites) {
        j["suites"].push_back({{"suite", s.suite},
                               {"pass", s.pass},
                               {"trials", s.trials},
                               {"max_deviation", s.max_deviation},
                               {"failing_seed", s.failing_seed},
                               {"detail", s.detail}});
        all = all && s.pass;
    }
    j["pass"] = all;
    return j.dump(indent) + "\n";
}

} // namespace mixlink
