#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "plt/cell.hpp"
#include "plt/common.hpp"
#include "plt/electrogram.hpp"
#include "plt/parallel.hpp"
#include "plt/plt_signal.hpp"
#include "plt/rng.hpp"
#include "plt/sha256.hpp"
#include "plt/tissue.hpp"
#include "plt/trace_io.hpp"

namespace plt {

inline constexpr double kGridFr[] = {2000, 1000, 500, 300, 200};  // pacing period, ms
inline constexpr double kGridCv[] = {10, 20, 40, 80};             // grid units / ms
inline constexpr double kGridH[] = {5, 10, 20, 50, 80};           // electrode height
inline constexpr int kGridXPrime[] = {448, 512, 640};             // electrode node

inline constexpr int kCaseSamples = 4096;
inline constexpr int kCaseSampleRate = 1000;
inline constexpr int kStrandNodes = 1024;

struct CaseSpec {
    double fr = 1000;   // pacing period, ms
    double cv = 40;     // target conduction velocity, grid units / ms
    double h = 10;      // electrode height, grid units
    int x_prime = 512;  // electrode node index
    uint64_t seed = 0;

    void validate() const {
        std::vector<std::string> bad;
        if (!(fr > 0)) bad.push_back("fr must be > 0");
        if (!(cv > 0)) bad.push_back("cv must be > 0");
        if (!(h > 0)) bad.push_back("h must be > 0");
        if (x_prime < 0 || x_prime >= kStrandNodes)
            bad.push_back("x_prime must lie within the strand");
        if (!bad.empty()) throw config_error(bad);
    }

    nlohmann::json to_json() const {
        return {{"fr", fr}, {"cv", cv}, {"h", h}, {"x_prime", x_prime}, {"seed", seed}};
    }
    static CaseSpec from_json(const nlohmann::json& j) {
        CaseSpec s;
        s.fr = j.at("fr").get<double>();
        s.cv = j.at("cv").get<double>();
        s.h = j.at("h").get<double>();
        s.x_prime = j.at("x_prime").get<int>();
        s.seed = j.at("seed").get<uint64_t>();
        return s;
    }
    bool operator==(const CaseSpec&) const = default;
};

struct DatasetCase {
    CaseSpec spec;
    std::vector<float> input;   // normalized electrogram, 4096 samples
    std::vector<float> target;  // sawtooth target, 4096 samples
    std::vector<int> break_indices;

    bool operator==(const DatasetCase&) const = default;
};

struct DatasetSplit {
    std::vector<DatasetCase> train;
    std::vector<DatasetCase> validation;
    uint64_t split_seed = 0;

    size_t size() const { return train.size() + validation.size(); }
    bool operator==(const DatasetSplit&) const = default;
};

inline std::vector<CaseSpec> make_grid(uint64_t base_seed = 1) {
    std::vector<CaseSpec> grid;
    uint64_t idx = 0;
    for (double fr : kGridFr)
        for (double cv : kGridCv)
            for (double h : kGridH)
                for (int xp : kGridXPrime) {
                    CaseSpec s;
                    s.fr = fr;
                    s.cv = cv;
                    s.h = h;
                    s.x_prime = xp;
                    s.seed = mix_seed(base_seed, idx++);
                    grid.push_back(s);
                }
    return grid;
}

// Reduced grid for continuous-integration runs: cv in {10, 20}, h in {10, 50}.
inline std::vector<CaseSpec> make_ci_grid(uint64_t base_seed = 1) {
    std::vector<CaseSpec> grid;
    uint64_t idx = 0;
    for (double fr : kGridFr)
        for (double cv : {10.0, 20.0})
            for (double h : {10.0, 50.0})
                for (int xp : kGridXPrime) {
                    CaseSpec s;
                    s.fr = fr;
                    s.cv = cv;
                    s.h = h;
                    s.x_prime = xp;
                    s.seed = mix_seed(base_seed, idx++);
                    grid.push_back(s);
                }
    return grid;
}

namespace detail {

// Calibrations are deterministic, so the cache only saves repeated work.
inline double calibrated_diffusion(double cv, const CellParams& p = {}) {
    static std::mutex mu;
    static std::map<double, double> cache;
    {
        std::lock_guard<std::mutex> lock(mu);
        auto it = cache.find(cv);
        if (it != cache.end()) return it->second;
    }
    const double d = calibrate_diffusion(cv, p, kStrandNodes);
    std::lock_guard<std::mutex> lock(mu);
    cache.emplace(cv, d);
    return d;
}

inline VoltageTrace simulate_strand(double fr, double diffusion, const CellParams& p = {}) {
    TissueGeometry g;
    g.dims = 1;
    g.nodes = kStrandNodes;
    g.diffusion = diffusion;
    const auto stim = StimulusProtocol::paced_1d(fr, diffusion);
    VoltageTrace tr = run_simulation(g, stim, p, double(kCaseSamples));
    for (float s : tr.samples)
        if (s < -0.2f || s > 1.2f)
            throw sim_diverged_error("strand simulation left the expected voltage range",
                                     tr.duration_ms());
    return tr;
}

inline DatasetCase assemble_case(const CaseSpec& spec, const VoltageTrace& tr) {
    const auto node = tr.node_series(spec.x_prime);
    const auto breaks = detect_upstrokes(node, 0.5, tr.sample_rate);
    if (breaks.empty())
        throw case_generation_error("no depolarization reached the electrode node",
                                    spec.to_json().dump());

    ElectrodeSpec e;
    e.col = spec.x_prime;
    e.height = spec.h;
    Electrogram egm = normalize(compute_egm_1d(tr, e));

    const PLTSignal target = build_plt_target(breaks, int(node.size()), tr.sample_rate);

    DatasetCase c;
    c.spec = spec;
    c.input.resize(egm.samples.size());
    for (size_t i = 0; i < egm.samples.size(); ++i) c.input[i] = float(egm.samples[i]);
    c.target.resize(target.samples.size());
    for (size_t i = 0; i < target.samples.size(); ++i) c.target[i] = float(target.samples[i]);
    c.break_indices = breaks;
    return c;
}

}  // namespace detail

inline DatasetCase generate_case(const CaseSpec& spec, const CellParams& p = {}) {
    spec.validate();
    const double d = detail::calibrated_diffusion(spec.cv, p);
    const VoltageTrace tr = detail::simulate_strand(spec.fr, d, p);
    return detail::assemble_case(spec, tr);
}

// All cases are generated in grid order; the random split only assigns
// membership, preserving that order inside each half.
inline DatasetSplit generate_dataset(const std::vector<CaseSpec>& grid, uint64_t split_seed,
                                     const CellParams& p = {}) {
    if (grid.empty()) throw config_error("generate_dataset: empty grid");
    for (const auto& s : grid) s.validate();

    struct Pair {
        double fr, cv;
        std::vector<size_t> case_idx;
    };
    std::vector<Pair> pairs;
    for (size_t i = 0; i < grid.size(); ++i) {
        auto it = std::find_if(pairs.begin(), pairs.end(), [&](const Pair& q) {
            return q.fr == grid[i].fr && q.cv == grid[i].cv;
        });
        if (it == pairs.end()) {
            pairs.push_back({grid[i].fr, grid[i].cv, {i}});
        } else {
            it->case_idx.push_back(i);
        }
    }

    std::vector<double> cvs;
    for (const auto& q : pairs)
        if (std::find(cvs.begin(), cvs.end(), q.cv) == cvs.end()) cvs.push_back(q.cv);
    std::vector<std::string> cal_errs(cvs.size());
    parallel_for(int64_t(cvs.size()), [&](int64_t i) {
        try {
            detail::calibrated_diffusion(cvs[size_t(i)], p);
        } catch (const std::exception& ex) {
            cal_errs[size_t(i)] = ex.what();
        }
    });
    for (size_t i = 0; i < cvs.size(); ++i)
        if (!cal_errs[i].empty())
            throw case_generation_error("calibration failed: " + cal_errs[i],
                                        "{\"cv\":" + std::to_string(cvs[i]) + "}");

    std::vector<DatasetCase> cases(grid.size());
    std::vector<std::string> pair_errs(pairs.size());
    parallel_for(int64_t(pairs.size()), [&](int64_t pi) {
        Pair& q = pairs[size_t(pi)];
        try {
            const double d = detail::calibrated_diffusion(q.cv, p);
            const VoltageTrace tr = detail::simulate_strand(q.fr, d, p);
            for (size_t idx : q.case_idx) {
                try {
                    cases[idx] = detail::assemble_case(grid[idx], tr);
                } catch (const std::exception& ex) {
                    pair_errs[size_t(pi)] += std::string(ex.what()) + "; ";
                }
            }
        } catch (const std::exception& ex) {
            pair_errs[size_t(pi)] += std::string(ex.what()) + "; ";
        }
    });
    std::string all_errs;
    for (const auto& e : pair_errs) all_errs += e;
    if (!all_errs.empty())
        throw case_generation_error("dataset generation failed for some cases", all_errs);

    std::vector<size_t> order(grid.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(split_seed);
    for (size_t i = order.size() - 1; i > 0; --i) {
        const size_t j = size_t(rng.next_u64() % (i + 1));
        std::swap(order[i], order[j]);
    }
    const size_t n_train = order.size() / 2;
    std::vector<size_t> tr_idx(order.begin(), order.begin() + ptrdiff_t(n_train));
    std::vector<size_t> va_idx(order.begin() + ptrdiff_t(n_train), order.end());
    std::sort(tr_idx.begin(), tr_idx.end());
    std::sort(va_idx.begin(), va_idx.end());

    DatasetSplit split;
    split.split_seed = split_seed;
    split.train.reserve(tr_idx.size());
    split.validation.reserve(va_idx.size());
    for (size_t i : tr_idx) split.train.push_back(std::move(cases[i]));
    for (size_t i : va_idx) split.validation.push_back(std::move(cases[i]));
    return split;
}

namespace detail {

inline void append_u32(std::vector<char>& buf, uint32_t v) {
    buf.insert(buf.end(), reinterpret_cast<const char*>(&v),
               reinterpret_cast<const char*>(&v) + 4);
}

inline void append_case(std::vector<char>& buf, const DatasetCase& c, const char* split_name,
                        uint64_t split_seed) {
    if (int(c.input.size()) != kCaseSamples || int(c.target.size()) != kCaseSamples)
        throw config_error("save_dataset: every case must hold exactly 4096 samples");
    nlohmann::json j;
    j["spec"] = c.spec.to_json();
    j["split"] = split_name;
    j["split_seed"] = split_seed;
    j["break_indices"] = c.break_indices;
    const std::string js = j.dump();
    append_u32(buf, uint32_t(js.size()));
    buf.insert(buf.end(), js.begin(), js.end());
    const char* in = reinterpret_cast<const char*>(c.input.data());
    buf.insert(buf.end(), in, in + sizeof(float) * c.input.size());
    const char* tg = reinterpret_cast<const char*>(c.target.data());
    buf.insert(buf.end(), tg, tg + sizeof(float) * c.target.size());
}

inline std::string basename_of(const std::string& path) {
    const size_t pos = path.find_last_of('/');
    return pos == std::string::npos ? path : path.substr(pos + 1);
}

}  // namespace detail

inline void save_dataset(const DatasetSplit& split, const std::string& path) {
    std::vector<char> buf;
    buf.reserve(split.size() * (2 * sizeof(float) * kCaseSamples + 256) + 16);
    buf.insert(buf.end(), {'P', 'L', 'T', 'D'});
    detail::append_u32(buf, 1);
    detail::append_u32(buf, uint32_t(split.size()));
    for (const auto& c : split.train) detail::append_case(buf, c, "train", split.split_seed);
    for (const auto& c : split.validation)
        detail::append_case(buf, c, "validation", split.split_seed);

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw io_error("cannot write " + path);
    os.write(buf.data(), std::streamsize(buf.size()));
    if (!os) throw io_error("write failed for " + path);
    os.close();

    std::ofstream cs(path + ".sha256", std::ios::trunc);
    if (!cs) throw io_error("cannot write " + path + ".sha256");
    cs << sha256_hex(buf.data(), buf.size()) << "  " << detail::basename_of(path) << "\n";
}

inline DatasetSplit load_dataset(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open " + path);
    std::vector<char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    is.close();

    {
        std::ifstream cs(path + ".sha256");
        if (!cs) throw io_error("cannot open " + path + ".sha256");
        std::string expected;
        cs >> expected;
        if (expected != sha256_hex(buf.data(), buf.size()))
            throw integrity_error("checksum mismatch for " + path);
    }

    size_t off = 0;
    auto need = [&](size_t n, const char* what) {
        if (off + n > buf.size())
            throw parse_error(std::string("truncated dataset while reading ") + what, off);
    };
    auto read_u32 = [&](const char* what) {
        need(4, what);
        uint32_t v;
        std::memcpy(&v, buf.data() + off, 4);
        off += 4;
        return v;
    };

    need(4, "magic");
    if (std::string(buf.data(), 4) != "PLTD") throw parse_error("bad dataset magic", 0);
    off = 4;
    const uint32_t version = read_u32("version");
    if (version != 1)
        throw parse_error("unsupported dataset version " + std::to_string(version), 4);
    const uint32_t count = read_u32("case count");

    DatasetSplit split;
    bool have_seed = false;
    for (uint32_t ci = 0; ci < count; ++ci) {
        const uint32_t jlen = read_u32("case header length");
        need(jlen, "case header");
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(buf.data() + off, buf.data() + off + jlen);
        } catch (const nlohmann::json::exception& ex) {
            throw parse_error(std::string("bad case header: ") + ex.what(), off);
        }
        off += jlen;

        DatasetCase c;
        std::string split_name;
        try {
            c.spec = CaseSpec::from_json(j.at("spec"));
            split_name = j.at("split").get<std::string>();
            c.break_indices = j.at("break_indices").get<std::vector<int>>();
            if (!have_seed) {
                split.split_seed = j.at("split_seed").get<uint64_t>();
                have_seed = true;
            }
        } catch (const nlohmann::json::exception& ex) {
            throw parse_error(std::string("bad case header: ") + ex.what(), off - jlen);
        }
        if (split_name != "train" && split_name != "validation")
            throw parse_error("bad split label '" + split_name + "'", off - jlen);

        c.input.resize(kCaseSamples);
        need(sizeof(float) * kCaseSamples, "input samples");
        std::memcpy(c.input.data(), buf.data() + off, sizeof(float) * kCaseSamples);
        off += sizeof(float) * kCaseSamples;
        c.target.resize(kCaseSamples);
        need(sizeof(float) * kCaseSamples, "target samples");
        std::memcpy(c.target.data(), buf.data() + off, sizeof(float) * kCaseSamples);
        off += sizeof(float) * kCaseSamples;

        if (split_name == "train") {
            split.train.push_back(std::move(c));
        } else {
            split.validation.push_back(std::move(c));
        }
    }
    if (off != buf.size()) throw parse_error("trailing bytes after last case", off);
    return split;
}

}  // namespace plt
