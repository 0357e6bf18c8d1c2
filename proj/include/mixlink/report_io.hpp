#ifndef MIXLINK_REPORT_IO_HPP
#define MIXLINK_REPORT_IO_HPP

#include <string>

#include "mixlink/analysis.hpp"
#include "mixlink/training.hpp"
#include "mixlink/verify.hpp"

// Renderers for the reporting surfaces: JSON for interchange, CSV for
// plotting, aligned text tables for humans. All output is byte-stable
// across runs on the same inputs.

namespace mixlink {

std::string report_to_json(const ParamReport& report, int indent = 2);
std::string report_to_csv(const ParamReport& report);
std::string report_to_table(const ParamReport& report);

std::string grid_to_json(const GridReport& grid, int indent = 2);
std::string grid_to_table(const GridReport& grid);

/// Columns: epoch, lr, loss, train_acc, test_acc.
std::string history_to_csv(const TrainHistory& history);

std::string suites_to_json(const std::vector<verify::SuiteResult>& suites, std::uint64_t seed,
                           int indent = 2);

/// Formats a double with enough digits to round-trip, no locale surprises.
std::string format_number(double value);

} // namespace mixlink

#endif
