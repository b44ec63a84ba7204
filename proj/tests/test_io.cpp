#include <gtest/gtest.h>

#include <random>

#include "fraclab/io.hpp"

using namespace fraclab;
using namespace fraclab::io;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("fraclab_io_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST(Csv, RoundTripIsBitExact) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1e3, 1e3);
    MatrixXd m(7, 4);
    for (Index i = 0; i < m.size(); ++i) m(i) = u(rng) * std::pow(10.0, static_cast<double>(i % 9) - 4.0);
    m(0, 0) = 0.1;
    m(1, 1) = -0.0;
    m(2, 2) = 1e-300;
    const json prov = provenance({{"a", 1}}, 5, "unit");
    const std::string text = csv_text(prov, {"a", "b", "c", "d"}, m);
    const CsvTable t = parse_csv(text);
    EXPECT_TRUE(t.values == m);
    EXPECT_EQ(t.header.size(), 4u);
    EXPECT_EQ(t.provenance["seed"], 5);
    EXPECT_EQ(t.provenance["task"], "unit");
    EXPECT_EQ(text.rfind("# {", 0), 0u);
    EXPECT_THROW(csv_text(prov, {"a"}, m), ShapeError);
    EXPECT_THROW(parse_csv("x,y\n1,2\n3\n"), ShapeError);
    EXPECT_THROW(parse_csv("x\nabc\n"), ConfigError);
}

TEST(Provenance, HashIsStableAndSensitive) {
    const json a = {{"grid", {{"N", 161}, {"L", 3.0}}}, {"task", "dn"}};
    const json b = json::parse(R"({"task":"dn","grid":{"L":3.0,"N":161}})");
    EXPECT_EQ(config_hash(a), config_hash(b));
    json c = a;
    c["grid"]["N"] = 163;
    EXPECT_NE(config_hash(a), config_hash(c));
    EXPECT_EQ(config_hash(a).size(), 16u);
    const json p = provenance(a, 1, "dn");
    EXPECT_FALSE(p.contains("threads"));
    EXPECT_FALSE(p.contains("time"));
    EXPECT_TRUE(p["modules"].contains("inverse"));
}

TEST(Files, AtomicWriteLeavesNoTemporary) {
    const fs::path dir = scratch("atomic");
    write_atomic(dir / "sub" / "out.txt", "one");
    write_atomic(dir / "sub" / "out.txt", "two");
    EXPECT_EQ(read_file(dir / "sub" / "out.txt"), "two");
    std::size_t count = 0;
    for (const auto& e : fs::directory_iterator(dir / "sub")) {
        (void)e;
        ++count;
    }
    EXPECT_EQ(count, 1u);
    EXPECT_THROW(read_file(dir / "missing.txt"), ConfigError);
}

TEST(Config, KeyValueTextMatchesJson) {
    const std::string text = R"(# comment
task = recover
grid.N = 161
grid.omega = [-1, 1]
recover.order = 3
recover.mode = "decoupled"
recover.time_independent = true
)";
    const json cfg = parse_config_text(text);
    const json expected = json::parse(R"({"task":"recover","grid":{"N":161,"omega":[-1,1]},
        "recover":{"order":3,"mode":"decoupled","time_independent":true}})");
    EXPECT_EQ(cfg, expected);
    EXPECT_EQ(parse_config_text(expected.dump()), expected);
    EXPECT_THROW(parse_config_text("grid.N 161"), ConfigError);
    EXPECT_THROW(parse_config_text("a = 1\na.b = 2"), ConfigError);
    EXPECT_THROW(parse_config_text("{ bad json"), ConfigError);
    EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
}

TEST(Oracles, RecordedDataReplaysBitExact) {
    ExperimentGeometry geo;
    geo.s = 0.75;
    geo.n_points = 41;
    geo.n_steps = 8;
    GroundTruth truth;
    truth.terms.push_back({2, CoefficientSpec{"constant", 1.0}});
    const SyntheticOracle synth(geo, truth);
    const Grid grid = geo.grid();
    const TimeGrid tg = geo.time_grid();
    const fs::path dir = scratch("oracle");
    const RecordingOracle rec(synth, dir, provenance({}, 0, "record"), grid, tg);
    const auto tuple = default_tuples(grid, tg, 2, 1)[0];
    const ExteriorInput input{{0.02, tuple[0]}, {0.03, tuple[1]}};
    const DNData live = rec.measure(input, "k2_t0_e0_pp");
    ASSERT_TRUE(fs::exists(dir / "k2_t0_e0_pp.csv"));
    const FileOracle files(dir, tg.n_levels(), grid.v_set().size());
    const DNData replay = files.measure(input, "k2_t0_e0_pp");
    EXPECT_TRUE(replay.values == live.values);
    EXPECT_NE(replay.provenance.find("k2_t0_e0_pp"), std::string::npos);
    EXPECT_THROW(files.measure(input, "absent"), ConfigError);
    EXPECT_THROW(FileOracle(dir / "nope", 9, 3), ConfigError);
    const FileOracle wrong(dir, tg.n_levels() + 1, grid.v_set().size());
    EXPECT_THROW(wrong.measure(input, "k2_t0_e0_pp"), ShapeError);
}

TEST(Files, GridSidecar) {
    const Grid grid = build_grid(3.0, 61, {-1.0, 1.0}, {1.2, 2.4}, {-2.4, -1.2});
    const json g = grid_json(grid, TimeGrid(1.0, 16), 0.5);
    EXPECT_EQ(g["N"], 61);
    EXPECT_EQ(g["n_steps"], 16);
    EXPECT_DOUBLE_EQ(g["omega"][1].get<double>(), 1.0);
    const std::string text = field_csv(json::object(), MatrixXd::Zero(17, 3), TimeGrid(1.0, 16), grid, 5);
    const CsvTable t = parse_csv(text);
    EXPECT_EQ(t.header[1], "x=" + format_double(grid.x(5)));
    EXPECT_DOUBLE_EQ(t.values(16, 0), 1.0);
}
