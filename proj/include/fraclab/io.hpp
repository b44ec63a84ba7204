#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fraclab/errors.hpp"
#include "fraclab/grid.hpp"
#include "fraclab/inverse.hpp"
#include "fraclab/linearize.hpp"

namespace fraclab::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr const char* version = "1.0.0";

inline json module_versions() {
    return {{"grid", "1.0"},  {"fracop", "1.0"},    {"nonlinearity", "1.0"}, {"heat", "1.0"}, {"wave", "1.0"},
            {"linearize", "1.0"}, {"runge", "1.0"}, {"inverse", "1.0"},      {"cli", "1.0"}};
}

inline std::string hex64(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

/// FNV-1a of the canonical (sorted-key, compact) JSON text.
inline std::string config_hash(const json& cfg) {
    const std::string text = cfg.dump();
    return hex64(fraclab::detail::fnv1a(text.data(), text.size()));
}

/// Provenance header shared by every artifact; no timestamps or thread counts
/// so that reruns are byte identical.
inline json provenance(const json& cfg, std::uint64_t seed, const std::string& task) {
    return {{"tool", "fraclab"},
            {"version", version},
            {"modules", module_versions()},
            {"config_hash", config_hash(cfg)},
            {"seed", seed},
            {"task", task}};
}

inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Writes to a temporary sibling and renames it into place.
inline void write_atomic(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("cannot write " + tmp.string());
        out << content;
        out.flush();
        if (!out) throw ConfigError("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

inline std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

/// "# {provenance}" line, a header line, then one row per matrix row.
inline std::string csv_text(const json& prov, const std::vector<std::string>& header, const MatrixXd& values) {
    if (static_cast<Index>(header.size()) != values.cols()) throw ShapeError("CSV header does not match the columns");
    std::string out = "# " + prov.dump() + "\n";
    for (std::size_t j = 0; j < header.size(); ++j) out += (j ? "," : "") + header[j];
    out += "\n";
    for (Index i = 0; i < values.rows(); ++i) {
        for (Index j = 0; j < values.cols(); ++j) {
            if (j) out += ',';
            out += format_double(values(i, j));
        }
        out += '\n';
    }
    return out;
}

struct CsvTable {
    json provenance;
    std::vector<std::string> header;
    MatrixXd values;
};

inline CsvTable parse_csv(const std::string& text, const std::string& name = "csv") {
    CsvTable t;
    std::istringstream in(text);
    std::string line;
    std::vector<std::vector<double>> rows;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (t.provenance.is_null()) {
                try {
                    t.provenance = json::parse(line.substr(1));
                } catch (const json::exception&) {
                    t.provenance = line.substr(1);
                }
            }
            continue;
        }
        std::vector<std::string> cells;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (t.header.empty()) {
            t.header = cells;
            continue;
        }
        if (cells.size() != t.header.size())
            throw ShapeError(name + ": row " + std::to_string(rows.size() + 1) + " has " + std::to_string(cells.size()) +
                             " cells, expected " + std::to_string(t.header.size()));
        std::vector<double> row;
        for (const auto& c : cells) {
            try {
                std::size_t used = 0;
                row.push_back(std::stod(c, &used));
            } catch (const std::exception&) {
                throw ConfigError(name + ": cannot parse number '" + c + "'");
            }
        }
        rows.push_back(std::move(row));
    }
    t.values.resize(static_cast<Index>(rows.size()), static_cast<Index>(t.header.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j) t.values(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
    return t;
}

inline CsvTable read_csv(const fs::path& path) { return parse_csv(read_file(path), path.string()); }

/// Time-major field table: first column t, then one column per listed grid index.
inline std::string field_csv(const json& prov, const MatrixXd& values, const TimeGrid& tg, const Grid& grid,
                             Index first_index = 0) {
    if (values.rows() != tg.n_levels()) throw ShapeError("field rows must match the time levels");
    std::vector<std::string> header{"t"};
    for (Index i = 0; i < values.cols(); ++i) header.push_back("x=" + format_double(grid.x(first_index + i)));
    MatrixXd table(values.rows(), values.cols() + 1);
    for (Index n = 0; n < values.rows(); ++n) table(n, 0) = tg.t(n);
    table.rightCols(values.cols()) = values;
    return csv_text(prov, header, table);
}

/// Geometry sidecar for field files.
inline json grid_json(const Grid& grid, const TimeGrid& tg, double s) {
    auto iv = [](const Interval& i) { return json::array({i.lo, i.hi}); };
    return {{"L", grid.box_halfwidth()}, {"N", grid.n_points()},     {"h", grid.spacing()},
            {"omega", iv(grid.omega_interval())}, {"w", iv(grid.w_interval())}, {"v", iv(grid.v_interval())},
            {"T", tg.horizon()},         {"n_steps", tg.n_steps()}, {"s", s}};
}

/// Parses JSON text, or key = value lines with dotted keys and '#' comments.
/// Values are read as JSON when possible and as bare strings otherwise.
inline json parse_config_text(const std::string& text) {
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && (text[first] == '{')) {
        try {
            return json::parse(text);
        } catch (const json::exception& e) {
            throw ConfigError(std::string("invalid JSON config: ") + e.what());
        }
    }
    json cfg = json::object();
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        const auto b = s.find_last_not_of(" \t\r");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
        const std::string key = trim(t.substr(0, eq));
        const std::string raw = trim(t.substr(eq + 1));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        json value;
        try {
            value = json::parse(raw);
        } catch (const json::exception&) {
            value = raw;
        }
        json* node = &cfg;
        std::stringstream ks(key);
        std::string part;
        std::vector<std::string> parts;
        while (std::getline(ks, part, '.')) parts.push_back(part);
        for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
            json& next = (*node)[parts[i]];
            if (next.is_null()) next = json::object();
            if (!next.is_object())
                throw ConfigError("config line " + std::to_string(lineno) + ": '" + parts[i] + "' is not a section");
            node = &next;
        }
        (*node)[parts.back()] = value;
    }
    return cfg;
}

inline json load_config(const fs::path& path) {
    if (!fs::exists(path)) throw ConfigError("config file not found: " + path.string());
    return parse_config_text(read_file(path));
}

/// DN data read from `<dir>/<label>.csv` (time column plus one column per V point).
class FileOracle : public DNOracle {
public:
    FileOracle(fs::path dir, Index n_levels, Index n_v) : dir_(std::move(dir)), levels_(n_levels), n_v_(n_v) {
        if (!fs::is_directory(dir_)) throw ConfigError("DN data directory not found: " + dir_.string());
    }

    DNData measure(const ExteriorInput&, const std::string& label) const override {
        const fs::path p = dir_ / (label + ".csv");
        if (!fs::exists(p)) throw ConfigError("missing DN data file " + p.string());
        const CsvTable t = read_csv(p);
        if (t.values.rows() != levels_ || t.values.cols() != n_v_ + 1)
            throw ShapeError(p.string() + ": expected " + std::to_string(levels_) + " rows and " +
                             std::to_string(n_v_ + 1) + " columns");
        return DNData{t.values.rightCols(n_v_), t.provenance.dump()};
    }

private:
    fs::path dir_;
    Index levels_, n_v_;
};

/// Forwards to another oracle and stores every measurement in FileOracle layout.
class RecordingOracle : public DNOracle {
public:
    RecordingOracle(const DNOracle& inner, fs::path dir, json prov, Grid grid, TimeGrid tg)
        : inner_(inner), dir_(std::move(dir)), prov_(std::move(prov)), grid_(std::move(grid)), tg_(tg) {}

    double budget() const override { return inner_.budget(); }

    DNData measure(const ExteriorInput& input, const std::string& label) const override {
        DNData d = inner_.measure(input, label);
        json p = prov_;
        p["label"] = label;
        json in = json::array();
        for (const auto& wb : input)
            in.push_back({{"weight", wb.weight}, {"center", wb.bump.center}, {"radius", wb.bump.radius},
                          {"t_on", wb.bump.t_on}, {"t_off", wb.bump.t_off}, {"amplitude", wb.bump.amplitude}});
        p["input"] = in;
        write_atomic(dir_ / (label + ".csv"), field_csv(p, d.values, tg_, grid_, grid_.v_set().begin));
        return d;
    }

private:
    const DNOracle& inner_;
    fs::path dir_;
    json prov_;
    Grid grid_;
    TimeGrid tg_;
};

}  // namespace fraclab::io
