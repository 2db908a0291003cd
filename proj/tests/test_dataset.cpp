#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <tuple>
#include <vector>

#include "plt/dataset.hpp"

namespace {

std::filesystem::path tmp_dir() {
    auto p = std::filesystem::path(PLT_TEST_TMP) /
             "dataset";
    std::filesystem::create_directories(p);
    return p;
}

// One pacing-period, one velocity: the whole grid shares a single simulation,
// which keeps the suite fast while exercising every code path.
std::vector<plt::CaseSpec> micro_grid(uint64_t base_seed) {
    std::vector<plt::CaseSpec> grid;
    uint64_t idx = 0;
    for (double h : {10.0, 50.0})
        for (int xp : {448, 512, 640}) {
            plt::CaseSpec s;
            s.fr = 2000;
            s.cv = 10;
            s.h = h;
            s.x_prime = xp;
            s.seed = plt::mix_seed(base_seed, idx++);
            grid.push_back(s);
        }
    return grid;
}

std::vector<plt::CaseSpec> split_specs(const std::vector<plt::DatasetCase>& cases) {
    std::vector<plt::CaseSpec> out;
    for (const auto& c : cases) out.push_back(c.spec);
    return out;
}

void rewrite_checksum(const std::filesystem::path& data, const std::filesystem::path& sidecar) {
    std::ifstream is(data, std::ios::binary);
    std::vector<char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    std::ofstream cs(sidecar, std::ios::trunc);
    cs << plt::sha256_hex(buf.data(), buf.size()) << "  " << data.filename().string() << "\n";
}

}  // namespace

TEST_CASE("full grid covers every parameter combination once", "[dataset]") {
    const auto grid = plt::make_grid(7);
    REQUIRE(grid.size() == 300);

    std::set<std::tuple<double, double, double, int>> combos;
    std::set<uint64_t> seeds;
    for (const auto& s : grid) {
        combos.insert({s.fr, s.cv, s.h, s.x_prime});
        seeds.insert(s.seed);
    }
    CHECK(combos.size() == 300);
    CHECK(seeds.size() == 300);

    for (double fr : {2000.0, 1000.0, 500.0, 300.0, 200.0})
        for (double cv : {10.0, 20.0, 40.0, 80.0})
            for (double h : {5.0, 10.0, 20.0, 50.0, 80.0})
                for (int xp : {448, 512, 640})
                    CHECK(combos.count({fr, cv, h, xp}) == 1);

    CHECK(plt::make_ci_grid().size() == 60);
}

TEST_CASE("case spec validation collects every violation", "[dataset]") {
    plt::CaseSpec s;
    s.fr = 0;
    s.cv = -1;
    s.h = 0;
    s.x_prime = 1024;
    try {
        s.validate();
        FAIL("expected config_error");
    } catch (const plt::config_error& e) {
        CHECK(e.violations.size() == 4);
    }
}

TEST_CASE("case spec json round trip", "[dataset]") {
    plt::CaseSpec s;
    s.fr = 300;
    s.cv = 80;
    s.h = 5;
    s.x_prime = 448;
    s.seed = 0xdeadbeefcafeull;
    CHECK(plt::CaseSpec::from_json(s.to_json()) == s);
}

TEST_CASE("generated case matches the pacing protocol", "[dataset][slow]") {
    plt::CaseSpec spec;
    spec.fr = 2000;
    spec.cv = 10;
    spec.h = 10;
    spec.x_prime = 512;
    spec.seed = 42;

    const auto c = plt::generate_case(spec);
    REQUIRE(c.input.size() == size_t(plt::kCaseSamples));
    REQUIRE(c.target.size() == size_t(plt::kCaseSamples));

    // Two pacing onsets fit a 4096 ms run at a 2000 ms period.
    REQUIRE(c.break_indices.size() == 2);
    CHECK(std::abs(c.break_indices[1] - c.break_indices[0] - 2000) <= 2);

    float peak = 0.0f;
    for (float v : c.input) peak = std::max(peak, std::abs(v));
    CHECK(peak == 1.0f);

    for (float v : c.target) {
        CHECK(v >= 0.0f);
        CHECK(v <= 1.0f);
    }
    for (int b : c.break_indices) CHECK(c.target[size_t(b)] == 1.0f);

    const auto again = plt::generate_case(spec);
    CHECK(again == c);
}

TEST_CASE("short pacing periods produce dense break trains", "[dataset][slow]") {
    plt::CaseSpec spec;
    spec.fr = 200;
    spec.cv = 10;
    spec.h = 10;
    spec.x_prime = 512;

    // Twenty stimuli fit the run; the tissue answers with at least a 2:1
    // response depending on its refractory period at this rate.
    const auto c = plt::generate_case(spec);
    REQUIRE(c.break_indices.size() >= 8);

    std::vector<int> intervals;
    for (size_t i = 1; i < c.break_indices.size(); ++i)
        intervals.push_back(c.break_indices[i] - c.break_indices[i - 1]);
    const auto [mn, mx] = std::minmax_element(intervals.begin(), intervals.end());
    CHECK(*mx - *mn >= 0);

    // Rate-dependent interval spread is a property of the membrane model, so
    // the distribution is recorded for inspection rather than asserted.
    nlohmann::json rec;
    rec["spec"] = spec.to_json();
    rec["break_indices"] = c.break_indices;
    rec["intervals"] = intervals;
    std::ofstream os(tmp_dir() / "fr200_intervals.json", std::ios::trunc);
    os << rec.dump(2) << "\n";
}

TEST_CASE("dataset generation, split behavior, and persistence", "[dataset][slow]") {
    const auto grid = micro_grid(3);
    const auto split = plt::generate_dataset(grid, 1234);

    REQUIRE(split.size() == grid.size());
    CHECK(split.train.size() == 3);
    CHECK(split.validation.size() == 3);
    CHECK(split.split_seed == 1234);

    // Disjoint union equal to the grid.
    std::vector<plt::CaseSpec> seen;
    for (const auto& c : split.train) seen.push_back(c.spec);
    for (const auto& c : split.validation) seen.push_back(c.spec);
    for (const auto& s : grid)
        CHECK(std::count(seen.begin(), seen.end(), s) == 1);

    // Same split seed reproduces membership; a different seed moves it.
    const auto same = plt::generate_dataset(grid, 1234);
    CHECK(same == split);
    const auto other = plt::generate_dataset(grid, 99);
    CHECK(other.train.size() == 3);
    CHECK(split_specs(other.train) != split_specs(split.train));

    // Container round trip is exact.
    const auto dir = tmp_dir();
    const auto path = (dir / "micro.pltd").string();
    plt::save_dataset(split, path);
    REQUIRE(std::filesystem::exists(path + ".sha256"));
    const auto back = plt::load_dataset(path);
    CHECK(back == split);

    // A flipped payload byte fails the checksum.
    const auto corrupt = (dir / "corrupt.pltd").string();
    std::filesystem::copy_file(path, corrupt,
                               std::filesystem::copy_options::overwrite_existing);
    std::filesystem::copy_file(path + ".sha256", corrupt + ".sha256",
                               std::filesystem::copy_options::overwrite_existing);
    {
        std::fstream f(corrupt, std::ios::binary | std::ios::in | std::ios::out);
        f.seekg(600);
        char b = 0;
        f.read(&b, 1);
        b = char(b ^ 0x5a);
        f.seekp(600);
        f.write(&b, 1);
    }
    CHECK_THROWS_AS(plt::load_dataset(corrupt), plt::integrity_error);

    // Truncation is reported with a byte offset.
    const auto trunc = (dir / "trunc.pltd").string();
    std::filesystem::copy_file(path, trunc,
                               std::filesystem::copy_options::overwrite_existing);
    std::filesystem::resize_file(trunc, std::filesystem::file_size(trunc) - 100);
    rewrite_checksum(trunc, trunc + ".sha256");
    try {
        plt::load_dataset(trunc);
        FAIL("expected parse_error");
    } catch (const plt::parse_error& e) {
        CHECK(e.offset > 12);
    }

    // Bad magic is rejected at offset zero.
    const auto magic = (dir / "magic.pltd").string();
    std::filesystem::copy_file(path, magic,
                               std::filesystem::copy_options::overwrite_existing);
    {
        std::fstream f(magic, std::ios::binary | std::ios::in | std::ios::out);
        f.write("QXYZ", 4);
    }
    rewrite_checksum(magic, magic + ".sha256");
    try {
        plt::load_dataset(magic);
        FAIL("expected parse_error");
    } catch (const plt::parse_error& e) {
        CHECK(e.offset == 0);
    }

    // A missing checksum sidecar is an io error.
    const auto bare = (dir / "nosidecar.pltd").string();
    std::filesystem::copy_file(path, bare,
                               std::filesystem::copy_options::overwrite_existing);
    CHECK_THROWS_AS(plt::load_dataset(bare), plt::io_error);
}

TEST_CASE("dataset generation rejects an empty grid", "[dataset]") {
    CHECK_THROWS_AS(plt::generate_dataset({}, 1), plt::config_error);
}

TEST_CASE("saving a malformed case is rejected", "[dataset]") {
    plt::DatasetSplit split;
    plt::DatasetCase c;
    c.input.assign(100, 0.0f);
    c.target.assign(100, 0.0f);
    split.train.push_back(c);
    CHECK_THROWS_AS(plt::save_dataset(split, (tmp_dir() / "bad.pltd").string()),
                    plt::config_error);
}
