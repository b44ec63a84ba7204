#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>
#include <optional>
#include <ostream>
#include <regex>
#include <string>
#include <vector>

#include "fraclab/io.hpp"

namespace fraclab::plot {

namespace fs = std::filesystem;

struct Series {
    std::string label;
    std::vector<double> x, y;
    std::string color = "#1f77b4";
    bool dashed = false;
};

namespace detail {

inline std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

inline std::string escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        if (c == '<') out += "&lt;";
        else if (c == '>') out += "&gt;";
        else if (c == '&') out += "&amp;";
        else out += c;
    }
    return out;
}

/// Blue-white-red map on [-1, 1].
inline std::string diverging(double z) {
    z = std::clamp(z, -1.0, 1.0);
    int r, g, b;
    if (z >= 0) {
        r = 255;
        g = b = static_cast<int>(std::lround(255.0 * (1.0 - z)));
    } else {
        b = 255;
        r = g = static_cast<int>(std::lround(255.0 * (1.0 + z)));
    }
    char buf[8];
    std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
    return buf;
}

constexpr double width = 640, height = 420, left = 70, right = 20, top = 40, bottom = 50;

inline std::string header(const std::string& title) {
    return "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + num(width) + "\" height=\"" + num(height) +
           "\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
           "<text x=\"" + num(width / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" + escape(title) +
           "</text>\n";
}

inline std::string axes(double x0, double x1, double y0, double y1, const std::string& xl, const std::string& yl,
                        bool log_y) {
    const double pw = width - left - right, ph = height - top - bottom;
    std::string s = "<rect x=\"" + num(left) + "\" y=\"" + num(top) + "\" width=\"" + num(pw) + "\" height=\"" +
                    num(ph) + "\" fill=\"none\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double fx = k / 4.0, px = left + fx * pw, py = top + ph - fx * ph;
        const double yv = log_y ? std::pow(10.0, y0 + fx * (y1 - y0)) : y0 + fx * (y1 - y0);
        s += "<text x=\"" + num(px) + "\" y=\"" + num(top + ph + 16) + "\" text-anchor=\"middle\">" +
             num(x0 + fx * (x1 - x0)) + "</text>\n";
        s += "<text x=\"" + num(left - 6) + "\" y=\"" + num(py + 4) + "\" text-anchor=\"end\">" + num(yv) + "</text>\n";
    }
    s += "<text x=\"" + num(left + pw / 2) + "\" y=\"" + num(height - 10) + "\" text-anchor=\"middle\">" + escape(xl) +
         "</text>\n";
    s += "<text x=\"14\" y=\"" + num(top + ph / 2) + "\" text-anchor=\"middle\" transform=\"rotate(-90 14 " +
         num(top + ph / 2) + ")\">" + escape(yl) + "</text>\n";
    return s;
}

}  // namespace detail

/// Space-time heatmap; rows are time levels, columns are grid points.
inline std::string heatmap_svg(const MatrixXd& v, double x0, double x1, double t0, double t1, const std::string& title) {
    using namespace detail;
    std::string s = header(title) + axes(x0, x1, t0, t1, "x", "t", false);
    const double pw = width - left - right, ph = height - top - bottom;
    const Index rows = v.rows(), cols = v.cols();
    const double vmax = v.size() ? v.cwiseAbs().maxCoeff() : 0.0;
    const Index step_c = std::max<Index>(1, cols / 200), step_r = std::max<Index>(1, rows / 150);
    for (Index n = 0; n < rows; n += step_r)
        for (Index i = 0; i < cols; i += step_c) {
            const double z = vmax > 0 ? v(n, i) / vmax : 0.0;
            const double px = left + pw * static_cast<double>(i) / static_cast<double>(cols);
            const double py = top + ph - ph * static_cast<double>(n + step_r) / static_cast<double>(rows);
            s += "<rect x=\"" + num(px) + "\" y=\"" + num(py) + "\" width=\"" +
                 num(pw * static_cast<double>(step_c) / static_cast<double>(cols) + 0.5) + "\" height=\"" +
                 num(ph * static_cast<double>(step_r) / static_cast<double>(rows) + 0.5) + "\" fill=\"" +
                 diverging(z) + "\"/>\n";
        }
    s += "<text x=\"" + num(width - right) + "\" y=\"" + num(top - 6) + "\" text-anchor=\"end\">max |u| = " +
         num(vmax) + "</text>\n</svg>\n";
    return s;
}

/// Line plot; with log_y nonpositive values are dropped.
inline std::string lines_svg(const std::vector<Series>& series, const std::string& title, const std::string& xl,
                             const std::string& yl, bool log_y = false) {
    using namespace detail;
    double x0 = std::numeric_limits<double>::infinity(), x1 = -x0, y0 = x0, y1 = -x0;
    auto ty = [&](double y) { return log_y ? std::log10(y) : y; };
    for (const auto& sr : series)
        for (std::size_t j = 0; j < sr.x.size(); ++j) {
            if (log_y && !(sr.y[j] > 0)) continue;
            x0 = std::min(x0, sr.x[j]);
            x1 = std::max(x1, sr.x[j]);
            y0 = std::min(y0, ty(sr.y[j]));
            y1 = std::max(y1, ty(sr.y[j]));
        }
    if (!(x1 >= x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y0 -= 0.5, y1 += 0.5;
    const double pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;
    std::string s = header(title) + axes(x0, x1, y0, y1, xl, yl, log_y);
    const double pw = width - left - right, ph = height - top - bottom;
    int slot = 0;
    for (const auto& sr : series) {
        std::string pts;
        for (std::size_t j = 0; j < sr.x.size(); ++j) {
            if (log_y && !(sr.y[j] > 0)) continue;
            pts += num(left + pw * (sr.x[j] - x0) / (x1 - x0)) + "," + num(top + ph - ph * (ty(sr.y[j]) - y0) / (y1 - y0)) + " ";
        }
        s += "<polyline fill=\"none\" stroke=\"" + sr.color + "\" stroke-width=\"1.6\"" +
             (sr.dashed ? " stroke-dasharray=\"5,3\"" : "") + " points=\"" + pts + "\"/>\n";
        const double ly = top + 14 + 16 * slot++;
        s += "<line x1=\"" + num(left + 10) + "\" y1=\"" + num(ly - 4) + "\" x2=\"" + num(left + 30) + "\" y2=\"" +
             num(ly - 4) + "\" stroke=\"" + sr.color + "\"" + (sr.dashed ? " stroke-dasharray=\"5,3\"" : "") + "/>\n";
        s += "<text x=\"" + num(left + 36) + "\" y=\"" + num(ly) + "\">" + escape(sr.label) + "</text>\n";
    }
    return s + "</svg>\n";
}

namespace detail {

inline std::vector<double> column(const io::CsvTable& t, Index j) {
    std::vector<double> out(static_cast<std::size_t>(t.values.rows()));
    for (Index i = 0; i < t.values.rows(); ++i) out[static_cast<std::size_t>(i)] = t.values(i, j);
    return out;
}

inline Index find_column(const io::CsvTable& t, const std::string& name) {
    for (std::size_t j = 0; j < t.header.size(); ++j)
        if (t.header[j] == name) return static_cast<Index>(j);
    return -1;
}

inline double header_x(const std::string& h) { return h.rfind("x=", 0) == 0 ? std::stod(h.substr(2)) : 0.0; }

}  // namespace detail

/// Renders every recognized artifact in `in` as SVG files in `out`. Missing
/// series are skipped with a warning. Returns the written paths.
inline std::vector<fs::path> emit(const fs::path& in, const fs::path& out, std::ostream& warn) {
    std::vector<fs::path> written;
    if (!fs::is_directory(in)) {
        warn << "warning: artifact directory " << in.string() << " not found; nothing to plot\n";
        return written;
    }
    auto save = [&](const std::string& name, const std::string& svg) {
        io::write_atomic(out / name, svg);
        written.push_back(out / name);
    };
    auto field_table = [&](const fs::path& p) -> std::optional<io::CsvTable> {
        if (!fs::exists(p)) return std::nullopt;
        io::CsvTable t = io::read_csv(p);
        if (t.values.rows() == 0 || t.values.cols() < 2 || t.header[0] != "t") {
            warn << "warning: " << p.filename().string() << " is not a time-major field table; skipped\n";
            return std::nullopt;
        }
        return t;
    };

    if (auto t = field_table(in / "solution.csv")) {
        const MatrixXd v = t->values.rightCols(t->values.cols() - 1);
        save("solution_heatmap.svg",
             heatmap_svg(v, detail::header_x(t->header[1]), detail::header_x(t->header.back()), t->values(0, 0),
                         t->values(t->values.rows() - 1, 0), "solution u(t, x)"));
    } else {
        warn << "warning: no solution.csv; heatmap skipped\n";
    }

    if (auto t = field_table(in / "dn.csv")) {
        std::vector<Series> s;
        const std::vector<double> time = detail::column(*t, 0);
        const Index nv = t->values.cols() - 1;
        const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
        int c = 0;
        for (Index j = 1; j <= nv; j += std::max<Index>(1, nv / 4))
            s.push_back({t->header[static_cast<std::size_t>(j)], time, detail::column(*t, j), colors[c++ % 5]});
        save("dn_traces.svg", lines_svg(s, "DN traces on V", "t", "(-Delta)^s u"));
    } else {
        warn << "warning: no dn.csv; DN traces skipped\n";
    }

    if (fs::exists(in / "runge_residuals.csv")) {
        const io::CsvTable t = io::read_csv(in / "runge_residuals.csv");
        std::vector<Series> s;
        const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
        for (std::size_t j = 1; j < t.header.size(); ++j)
            s.push_back({t.header[j], detail::column(t, 0), detail::column(t, static_cast<Index>(j)), colors[(j - 1) % 5]});
        save("runge_residuals.svg", lines_svg(s, "Runge residual vs basis size", "K", "residual", true));
    } else {
        warn << "warning: no runge_residuals.csv; residual curve skipped\n";
    }

    const std::regex profile(R"(c(\d+)_profile\.csv)");
    bool any_profile = false;
    std::vector<fs::path> profiles;
    for (const auto& e : fs::directory_iterator(in))
        if (std::regex_match(e.path().filename().string(), profile)) profiles.push_back(e.path());
    std::sort(profiles.begin(), profiles.end());
    for (const auto& p : profiles) {
        any_profile = true;
        const io::CsvTable t = io::read_csv(p);
        const Index cx = detail::find_column(t, "x"), ce = detail::find_column(t, "estimate");
        if (cx < 0 || ce < 0) {
            warn << "warning: " << p.filename().string() << " lacks x/estimate columns; skipped\n";
            continue;
        }
        const std::string k = std::regex_replace(p.filename().string(), profile, "$1");
        std::vector<Series> s{{"recovered c" + k, detail::column(t, cx), detail::column(t, ce), "#d62728"}};
        const Index ct = detail::find_column(t, "truth");
        if (ct >= 0) s.push_back({"true c" + k, detail::column(t, cx), detail::column(t, ct), "#1f77b4"});
        else warn << "warning: no truth series for c" << k << "; overlay shows the estimate only\n";
        const Index cs = detail::find_column(t, "sensitivity");
        if (cs >= 0) {
            std::vector<double> sens = detail::column(t, cs);
            double smax = 0.0, fmax = 0.0;
            for (double v : sens) smax = std::max(smax, std::abs(v));
            for (const auto& sr : s)
                for (double v : sr.y) fmax = std::max(fmax, std::abs(v));
            if (smax > 0)
                for (double& v : sens) v *= fmax / smax;
            s.push_back({"sensitivity (scaled)", detail::column(t, cx), sens, "#7f7f7f", true});
        } else {
            warn << "warning: no sensitivity series for c" << k << "\n";
        }
        save("overlay_c" + k + ".svg", lines_svg(s, "coefficient c" + k, "x", "c" + k));
    }
    if (!any_profile) warn << "warning: no coefficient profiles; overlays skipped\n";
    return written;
}

}  // namespace fraclab::plot
