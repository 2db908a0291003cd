#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <string>
#include <vector>

#include <json.hpp>

#include "plt/common.hpp"
#include "plt/electrogram.hpp"
#include "plt/nn/unet.hpp"
#include "plt/parallel.hpp"
#include "plt/plt_signal.hpp"
#include "plt/tissue.hpp"

namespace plt {

// Uniformly spaced electrode grid over a 2-D sheet, all at one height.
struct ElectrodeArray {
    std::vector<double> row_pos;
    std::vector<double> col_pos;
    double height = 10.0;
    double kappa = 1.0;

    int rows() const { return int(row_pos.size()); }
    int cols() const { return int(col_pos.size()); }
    int count() const { return rows() * cols(); }

    static ElectrodeArray uniform(int rows, int cols, int sheet_rows, int sheet_cols,
                                  double height = 10.0) {
        if (rows <= 0 || cols <= 0) throw config_error("ElectrodeArray: grid must be positive");
        if (sheet_rows % rows != 0 || sheet_cols % cols != 0)
            throw config_error("ElectrodeArray: sheet size must be a multiple of the array size");
        ElectrodeArray a;
        a.height = height;
        const int sr = sheet_rows / rows, sc = sheet_cols / cols;
        for (int r = 0; r < rows; ++r) a.row_pos.push_back(double(sr / 2 + sr * r));
        for (int c = 0; c < cols; ++c) a.col_pos.push_back(double(sc / 2 + sc * c));
        return a;
    }

    void validate(int sheet_rows, int sheet_cols) const {
        std::vector<std::string> bad;
        if (row_pos.empty() || col_pos.empty()) bad.push_back("array must be nonempty");
        if (!(height > 0)) bad.push_back("height must be > 0");
        for (double r : row_pos)
            if (r < 0 || r > sheet_rows - 1) bad.push_back("row position outside the sheet");
        for (double c : col_pos)
            if (c < 0 || c > sheet_cols - 1) bad.push_back("col position outside the sheet");
        if (!bad.empty()) throw config_error(bad);
    }

    std::vector<ElectrodeSpec> electrodes() const {
        std::vector<ElectrodeSpec> out;
        out.reserve(size_t(count()));
        for (double r : row_pos)
            for (double c : col_pos) {
                ElectrodeSpec e;
                e.row = r;
                e.col = c;
                e.height = height;
                e.kappa = kappa;
                out.push_back(e);
            }
        return out;
    }
};

struct Singularity {
    int row = 0;
    int col = 0;
    int chirality = 0;  // +1 or -1
};

struct PhaseMapSequence {
    int rows = 0;
    int cols = 0;
    int sample_rate = 1000;
    std::vector<std::vector<double>> frames;  // per sample: rows*cols phase values in [0,1]
    std::vector<std::vector<Singularity>> singularities;  // per frame
    std::vector<uint8_t> degenerate;  // per electrode, row-major
};

struct GroundTruthFrame {
    int rows = 0;
    int cols = 0;
    std::vector<double> values;  // membrane variable at the electrode positions
};

// Topological charge per 2x2 plaquette: the four phase differences around
// the loop, each wrapped into (-pi, pi], sum to 2*pi*charge exactly (up to
// rounding), so any nonzero charge marks a singularity.
inline std::vector<Singularity> detect_singularities(const std::vector<double>& frame, int rows,
                                                     int cols) {
    if (int(frame.size()) != rows * cols) throw shape_error("detect_singularities: bad frame");
    constexpr double two_pi = 2.0 * std::numbers::pi;
    auto wrap = [&](double d) {
        double w = std::fmod(d + std::numbers::pi, two_pi);
        if (w <= 0.0) w += two_pi;
        return w - std::numbers::pi;
    };
    auto ang = [&](int r, int c) { return two_pi * frame[size_t(r) * cols + c]; };
    std::vector<Singularity> out;
    for (int r = 0; r + 1 < rows; ++r)
        for (int c = 0; c + 1 < cols; ++c) {
            const double s = wrap(ang(r, c + 1) - ang(r, c)) +
                             wrap(ang(r + 1, c + 1) - ang(r, c + 1)) +
                             wrap(ang(r + 1, c) - ang(r + 1, c + 1)) +
                             wrap(ang(r, c) - ang(r + 1, c));
            const long q = std::lround(s / two_pi);
            if (q != 0) out.push_back({r, c, q > 0 ? 1 : -1});
        }
    return out;
}

// Per electrode: forward-model electrogram, normalization, network inference;
// the predictions are reassembled into per-sample phase frames.
template <class T>
PhaseMapSequence build_phase_maps(const VoltageTrace& tr, const ElectrodeArray& array,
                                  const nn::UNetModel<T>& model) {
    if (tr.dims != 2) throw shape_error("build_phase_maps: need a 2-D trace");
    array.validate(tr.rows, tr.cols);
    if (tr.n_samples <= 0 || tr.n_samples % 4096 != 0)
        throw config_error("build_phase_maps: trace duration must be a multiple of 4096 ms");

    const auto specs = array.electrodes();
    auto egms = compute_egm_2d_batch(tr, specs);

    PhaseMapSequence seq;
    seq.rows = array.rows();
    seq.cols = array.cols();
    seq.sample_rate = tr.sample_rate;
    seq.degenerate.assign(egms.size(), 0);

    std::vector<std::vector<double>> pred(egms.size());
    std::vector<std::string> errs(egms.size());
    parallel_for(int64_t(egms.size()), [&](int64_t i) {
        try {
            auto& egm = egms[size_t(i)];
            double peak = 0.0;
            for (double s : egm.samples) peak = std::max(peak, std::abs(s));
            if (peak == 0.0) seq.degenerate[size_t(i)] = 1;
            egm = normalize(std::move(egm));
            std::vector<float> in(egm.samples.size());
            for (size_t k = 0; k < in.size(); ++k) in[k] = float(egm.samples[k]);
            pred[size_t(i)] = nn::infer_values(model, std::span<const float>(in.data(), in.size()));
        } catch (const std::exception& ex) {
            errs[size_t(i)] = ex.what();
        }
    });
    for (const auto& e : errs)
        if (!e.empty()) throw error("build_phase_maps: " + e);

    seq.frames.assign(size_t(tr.n_samples), std::vector<double>(size_t(seq.rows) * seq.cols));
    for (size_t m = 0; m < pred.size(); ++m)
        for (int t = 0; t < tr.n_samples; ++t) seq.frames[size_t(t)][m] = pred[m][size_t(t)];

    seq.singularities.resize(seq.frames.size());
    parallel_for(int64_t(seq.frames.size()), [&](int64_t t) {
        seq.singularities[size_t(t)] =
            detect_singularities(seq.frames[size_t(t)], seq.rows, seq.cols);
    });
    return seq;
}

inline GroundTruthFrame ground_truth_frame(const VoltageTrace& tr, const ElectrodeArray& array,
                                           int t) {
    if (tr.dims != 2) throw shape_error("ground_truth_frame: need a 2-D trace");
    if (t < 0 || t >= tr.n_samples) throw shape_error("ground_truth_frame: sample out of range");
    GroundTruthFrame f;
    f.rows = array.rows();
    f.cols = array.cols();
    for (double r : array.row_pos)
        for (double c : array.col_pos) {
            const int node = int(std::lround(r)) * tr.cols + int(std::lround(c));
            f.values.push_back(double(tr.at(node, t)));
        }
    return f;
}

namespace detail {

inline void write_pgm(const std::vector<double>& frame, int rows, int cols,
                      const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw io_error("cannot write " + path);
    os << "P5\n" << cols << " " << rows << "\n255\n";
    std::vector<unsigned char> bytes(frame.size());
    for (size_t i = 0; i < frame.size(); ++i) {
        const double v = std::clamp(frame[i], 0.0, 1.0);
        bytes[i] = (unsigned char)(std::lround(255.0 * v));
    }
    os.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    if (!os) throw io_error("write failed for " + path);
}

inline void write_frame_csv(const std::vector<double>& frame, int rows, int cols,
                            const std::string& path) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw io_error("cannot write " + path);
    char cell[32];
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            std::snprintf(cell, sizeof cell, "%.17g", frame[size_t(r) * cols + c]);
            os << cell << (c + 1 < cols ? "," : "\n");
        }
    }
    if (!os) throw io_error("write failed for " + path);
}

}  // namespace detail

// One PGM and one CSV per exported frame plus a JSON index of singularities.
inline void export_frames(const PhaseMapSequence& seq, const std::string& dir,
                          double stride_ms) {
    const double duration_ms = double(seq.frames.size()) * 1000.0 / seq.sample_rate;
    if (!(stride_ms > 0) || std::fmod(duration_ms, stride_ms) != 0.0)
        throw config_error("export_frames: stride must be positive and divide the duration");

    nlohmann::json index;
    index["rows"] = seq.rows;
    index["cols"] = seq.cols;
    index["sample_rate"] = seq.sample_rate;
    index["stride_ms"] = stride_ms;
    index["frames"] = nlohmann::json::array();

    const int n_frames = int(duration_ms / stride_ms);
    char name[64];
    for (int k = 0; k < n_frames; ++k) {
        const double t_ms = k * stride_ms;
        const size_t t = size_t(t_ms * seq.sample_rate / 1000.0);
        std::snprintf(name, sizeof name, "frame_%04d", k);
        const std::string base = std::string(name);
        detail::write_pgm(seq.frames[t], seq.rows, seq.cols, dir + "/" + base + ".pgm");
        detail::write_frame_csv(seq.frames[t], seq.rows, seq.cols, dir + "/" + base + ".csv");
        nlohmann::json fr;
        fr["t_ms"] = t_ms;
        fr["pgm"] = base + ".pgm";
        fr["csv"] = base + ".csv";
        fr["singularities"] = nlohmann::json::array();
        for (const auto& s : seq.singularities[t])
            fr["singularities"].push_back(
                {{"row", s.row}, {"col", s.col}, {"chirality", s.chirality}});
        index["frames"].push_back(fr);
    }
    std::ofstream os(dir + "/index.json", std::ios::trunc);
    if (!os) throw io_error("cannot write " + dir + "/index.json");
    os << index.dump(2) << "\n";
}

// Scans S2 delays until the induced wave keeps re-exciting the sheet center
// through the final 2000 ms of a 4096 ms run.
struct SpiralScanResult {
    double s2_delay_ms = 0.0;
    VoltageTrace trace;
};

inline SpiralScanResult find_sustained_s2_delay(int nodes = 256, double diffusion = 1.0,
                                                double start_delay_ms = 250.0,
                                                double step_ms = 10.0,
                                                double max_delay_ms = 600.0,
                                                const CellParams& p = {}) {
    TissueGeometry g;
    g.dims = 2;
    g.nodes = nodes;
    g.diffusion = diffusion;
    const int center = (nodes / 2) * nodes + nodes / 2;
    for (double delay = start_delay_ms; delay <= max_delay_ms; delay += step_ms) {
        const auto stim = StimulusProtocol::s1s2_2d(delay, nodes);
        VoltageTrace tr = run_simulation(g, stim, p, 4096.0);
        const auto node = tr.node_series(center);
        const int tail_start = tr.n_samples - 2000;
        const auto breaks = detect_upstrokes(node, 0.5, tr.sample_rate);
        int tail_breaks = 0;
        for (int b : breaks)
            if (b >= tail_start) ++tail_breaks;
        if (tail_breaks >= 4) return {delay, std::move(tr)};
    }
    throw error("find_sustained_s2_delay: no sustained re-entry found in the scanned range");
}

}  // namespace plt
