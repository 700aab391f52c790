#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace dimwm {

/// Minimal CSV table: header row plus string cells.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const;
};

CsvTable parse_csv(const std::string& text);
CsvTable read_csv(const std::filesystem::path& path);
std::string write_csv(const CsvTable& t);

struct Series {
    std::string name;
    std::vector<double> values;  // NaN marks a missing point
};

/// Grouped bar chart: one group per label, one bar per series.
std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<Series>& series, double y_max = 1.0);
/// Line chart over shared x labels.
std::string line_chart_svg(const std::string& title, const std::vector<std::string>& labels,
                           const std::vector<Series>& series, double y_max = 1.0);

/// Reads distortions.csv and bins.csv from `report_dir` and writes chart
/// data tables and SVG charts to `out_dir`; returns the files written.
std::vector<std::filesystem::path> plot_report(const std::filesystem::path& report_dir,
                                               const std::filesystem::path& out_dir);

}  // namespace dimwm
