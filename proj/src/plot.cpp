#include "dimwm/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "dimwm/error.hpp"

namespace dimwm {

namespace fs = std::filesystem;

std::size_t CsvTable::column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw InvalidArgument("CSV table has no column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
}

namespace {

std::vector<std::string> split_row(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cell += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cell += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cell);
            cell.clear();
        } else if (c != '\r') {
            cell += c;
        }
    }
    out.push_back(cell);
    return out;
}

std::string escape_cell(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
    return out + "\"";
}

std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

double to_number(const std::string& s) {
    if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() + s.size()) throw InvalidArgument("non-numeric CSV cell '" + s + "'");
    return v;
}

const char* kPalette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2",
                          "#7f7f7f", "#bcbd22", "#17becf", "#393b79", "#637939", "#8c6d31", "#843c39", "#7b4173"};

struct Frame {
    double width, height, left = 60, right = 170, top = 40, bottom = 90;
    double plot_w() const { return width - left - right; }
    double plot_h() const { return height - top - bottom; }
};

void axes(std::ostringstream& os, const Frame& f, const std::string& title, double y_max) {
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << f.width << "\" height=\"" << f.height
       << "\" font-family=\"sans-serif\" font-size=\"11\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << f.width / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(title)
       << "</text>\n";
    for (int i = 0; i <= 5; ++i) {
        const double v = y_max * i / 5.0;
        const double y = f.top + f.plot_h() * (1 - i / 5.0);
        os << "<line x1=\"" << f.left << "\" x2=\"" << f.left + f.plot_w() << "\" y1=\"" << y << "\" y2=\"" << y
           << "\" stroke=\"#ddd\"/>\n";
        os << "<text x=\"" << f.left - 6 << "\" y=\"" << y + 4 << "\" text-anchor=\"end\">" << v << "</text>\n";
    }
    os << "<line x1=\"" << f.left << "\" x2=\"" << f.left << "\" y1=\"" << f.top << "\" y2=\"" << f.top + f.plot_h()
       << "\" stroke=\"black\"/>\n";
    os << "<line x1=\"" << f.left << "\" x2=\"" << f.left + f.plot_w() << "\" y1=\"" << f.top + f.plot_h()
       << "\" y2=\"" << f.top + f.plot_h() << "\" stroke=\"black\"/>\n";
}

void legend(std::ostringstream& os, const Frame& f, const std::vector<Series>& series) {
    for (std::size_t i = 0; i < series.size(); ++i) {
        const double y = f.top + 14.0 * static_cast<double>(i);
        const double x = f.left + f.plot_w() + 12;
        os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"10\" height=\"10\" fill=\"" << kPalette[i % 15]
           << "\"/>\n";
        os << "<text x=\"" << x + 14 << "\" y=\"" << y + 9 << "\">" << xml_escape(series[i].name) << "</text>\n";
    }
}

void x_labels(std::ostringstream& os, const Frame& f, const std::vector<std::string>& labels) {
    const double step = f.plot_w() / static_cast<double>(std::max<std::size_t>(1, labels.size()));
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double x = f.left + step * (static_cast<double>(i) + 0.5);
        const double y = f.top + f.plot_h() + 12;
        os << "<text x=\"" << x << "\" y=\"" << y << "\" text-anchor=\"end\" transform=\"rotate(-40 " << x << " " << y
           << ")\">" << xml_escape(labels[i]) << "</text>\n";
    }
}

double clamp_value(double v, double y_max) { return std::clamp(v, 0.0, y_max); }

}  // namespace

CsvTable parse_csv(const std::string& text) {
    CsvTable t;
    std::istringstream in(text);
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        auto row = split_row(line);
        if (first) {
            t.header = std::move(row);
            first = false;
            continue;
        }
        if (row.size() != t.header.size())
            throw InvalidArgument("CSV row has " + std::to_string(row.size()) + " cells, header has " +
                                  std::to_string(t.header.size()));
        t.rows.push_back(std::move(row));
    }
    if (first) throw InvalidArgument("CSV table is empty");
    return t;
}

CsvTable read_csv(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw InvalidArgument("cannot read " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_csv(ss.str());
}

std::string write_csv(const CsvTable& t) {
    std::ostringstream os;
    auto row = [&](const std::vector<std::string>& r) {
        for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << escape_cell(r[i]);
        os << "\n";
    };
    row(t.header);
    for (const auto& r : t.rows) row(r);
    return os.str();
}

std::string bar_chart_svg(const std::string& title, const std::vector<std::string>& labels,
                          const std::vector<Series>& series, double y_max) {
    Frame f{std::max(480.0, 60.0 * static_cast<double>(labels.size()) + 230), 380};
    std::ostringstream os;
    axes(os, f, title, y_max);
    const double group = f.plot_w() / static_cast<double>(std::max<std::size_t>(1, labels.size()));
    const double bar = group * 0.8 / static_cast<double>(std::max<std::size_t>(1, series.size()));
    for (std::size_t s = 0; s < series.size(); ++s)
        for (std::size_t i = 0; i < labels.size() && i < series[s].values.size(); ++i) {
            const double v = series[s].values[i];
            if (std::isnan(v)) continue;
            const double h = f.plot_h() * clamp_value(v, y_max) / y_max;
            const double x = f.left + group * static_cast<double>(i) + group * 0.1 + bar * static_cast<double>(s);
            os << "<rect x=\"" << x << "\" y=\"" << f.top + f.plot_h() - h << "\" width=\"" << bar << "\" height=\""
               << h << "\" fill=\"" << kPalette[s % 15] << "\"><title>" << xml_escape(series[s].name) << " "
               << xml_escape(labels[i]) << ": " << v << "</title></rect>\n";
        }
    x_labels(os, f, labels);
    legend(os, f, series);
    os << "</svg>\n";
    return os.str();
}

std::string line_chart_svg(const std::string& title, const std::vector<std::string>& labels,
                           const std::vector<Series>& series, double y_max) {
    Frame f{std::max(520.0, 45.0 * static_cast<double>(labels.size()) + 230), 380};
    std::ostringstream os;
    axes(os, f, title, y_max);
    const double step = f.plot_w() / static_cast<double>(std::max<std::size_t>(1, labels.size()));
    for (std::size_t s = 0; s < series.size(); ++s) {
        std::string path;
        for (std::size_t i = 0; i < labels.size() && i < series[s].values.size(); ++i) {
            const double v = series[s].values[i];
            if (std::isnan(v)) continue;
            const double x = f.left + step * (static_cast<double>(i) + 0.5);
            const double y = f.top + f.plot_h() * (1 - clamp_value(v, y_max) / y_max);
            std::ostringstream pt;
            pt << (path.empty() ? "M" : " L") << x << " " << y;
            path += pt.str();
            os << "<circle cx=\"" << x << "\" cy=\"" << y << "\" r=\"3\" fill=\"" << kPalette[s % 15] << "\"><title>"
               << xml_escape(series[s].name) << " " << xml_escape(labels[i]) << ": " << v << "</title></circle>\n";
        }
        if (!path.empty())
            os << "<path d=\"" << path << "\" fill=\"none\" stroke=\"" << kPalette[s % 15] << "\" stroke-width=\"1.5\"/>\n";
    }
    x_labels(os, f, labels);
    legend(os, f, series);
    os << "</svg>\n";
    return os.str();
}

std::vector<fs::path> plot_report(const fs::path& report_dir, const fs::path& out_dir) {
    const CsvTable dist = read_csv(report_dir / "distortions.csv");
    fs::create_directories(out_dir);
    std::vector<fs::path> written;
    auto emit = [&](const std::string& name, const std::string& content) {
        const fs::path p = out_dir / name;
        std::ofstream f(p, std::ios::trunc);
        if (!f) throw EnvironmentError("cannot write " + p.string());
        f << content;
        written.push_back(p);
    };

    const std::size_t c_name = dist.column("distortion"), c_cat = dist.column("category"),
                      c_bits = dist.column("bit_accuracy"), c_iou = dist.column("iou");
    CsvTable by_dist{{"distortion", "category", "bit_accuracy", "iou"}, {}};
    std::vector<std::string> labels;
    Series bits{"bit accuracy", {}}, ious{"IoU", {}};
    for (const auto& r : dist.rows) {
        by_dist.rows.push_back({r[c_name], r[c_cat], r[c_bits], r[c_iou]});
        labels.push_back(r[c_name]);
        bits.values.push_back(to_number(r[c_bits]));
        ious.values.push_back(to_number(r[c_iou]));
    }
    emit("by_distortion.csv", write_csv(by_dist));
    emit("by_distortion.svg", bar_chart_svg("Bit accuracy and IoU per distortion", labels, {bits, ious}));

    if (fs::exists(report_dir / "bins.csv")) {
        const CsvTable bins = read_csv(report_dir / "bins.csv");
        const std::size_t b_name = bins.column("distortion"), b_bin = bins.column("bin"),
                          b_bits = bins.column("bit_accuracy"), b_iou = bins.column("iou");
        std::vector<std::string> names;
        std::map<std::string, std::vector<std::string>> bit_cells, iou_cells;
        for (const auto& r : bins.rows) {
            const std::string& n = r[b_name];
            if (!bit_cells.count(n)) {
                names.push_back(n);
                bit_cells[n].assign(10, "");
                iou_cells[n].assign(10, "");
            }
            const auto b = static_cast<std::size_t>(to_number(r[b_bin]));
            if (b >= 10) throw InvalidArgument("mask-ratio bin out of range in bins.csv");
            bit_cells[n][b] = r[b_bits];
            iou_cells[n][b] = r[b_iou];
        }
        std::vector<std::string> bin_labels;
        for (int b = 0; b < 10; ++b) bin_labels.push_back(std::to_string(b * 10) + "-" + std::to_string(b * 10 + 10) + "%");
        for (const auto& [metric, cells] : {std::pair{"bit_accuracy", &bit_cells}, std::pair{"iou", &iou_cells}}) {
            CsvTable t;
            t.header = {"bin"};
            t.header.insert(t.header.end(), names.begin(), names.end());
            for (std::size_t b = 0; b < 10; ++b) {
                std::vector<std::string> row{bin_labels[b]};
                for (const auto& n : names) row.push_back((*cells)[n][b]);
                t.rows.push_back(std::move(row));
            }
            std::vector<Series> series;
            for (const auto& n : names) {
                Series s{n, {}};
                for (const auto& v : (*cells)[n]) s.values.push_back(to_number(v));
                series.push_back(std::move(s));
            }
            const std::string m = metric;
            emit("by_ratio_" + m + ".csv", write_csv(t));
            emit("by_ratio_" + m + ".svg",
                 line_chart_svg((m == "iou" ? std::string("IoU") : std::string("Bit accuracy")) + " vs mask ratio",
                                bin_labels, series));
        }
    }
    return written;
}

}  // namespace dimwm
