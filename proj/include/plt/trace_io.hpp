#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "plt/common.hpp"
#include "plt/sha256.hpp"
#include "plt/tissue.hpp"

namespace plt {

static_assert(std::endian::native == std::endian::little,
              "binary container code assumes a little-endian host");

namespace detail {

inline void put_u32(std::ofstream& os, uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), 4);
}

class FileReader {
public:
    explicit FileReader(const std::string& path) : path_(path), is_(path, std::ios::binary) {
        if (!is_) throw io_error("cannot open " + path);
    }

    void read(void* dst, std::size_t n, const char* what) {
        is_.read(reinterpret_cast<char*>(dst), std::streamsize(n));
        if (std::size_t(is_.gcount()) != n)
            throw parse_error(path_ + ": truncated while reading " + std::string(what),
                              off_ + std::size_t(std::max<std::streamsize>(is_.gcount(), 0)));
        off_ += n;
    }

    uint32_t read_u32(const char* what) {
        uint32_t v = 0;
        read(&v, 4, what);
        return v;
    }

    std::string read_bytes(std::size_t n, const char* what) {
        std::string s(n, '\0');
        read(s.data(), n, what);
        return s;
    }

    std::size_t offset() const { return off_; }

    bool at_eof() {
        is_.peek();
        return is_.eof();
    }

private:
    std::string path_;
    std::ifstream is_;
    std::size_t off_ = 0;
};

}  // namespace detail

inline std::string trace_sha256(const VoltageTrace& tr) {
    return sha256_hex(tr.samples.data(), tr.samples.size() * sizeof(float));
}

// Standard sidecar content for a simulated trace.
inline nlohmann::json trace_metadata(const TissueGeometry& g, const StimulusProtocol& s,
                                     const CellParams& p, uint64_t seed) {
    nlohmann::json j;
    j["geometry"] = {{"dims", g.dims}, {"nodes", g.nodes}, {"dx", g.dx}, {"diffusion", g.diffusion}};
    j["cell"] = {{"k", p.k}, {"a", p.a}, {"eps0", p.eps0}, {"mu1", p.mu1}, {"mu2", p.mu2}};
    nlohmann::json stim;
    stim["kind"] = s.kind == StimKind::Periodic ? "periodic" : "s1s2";
    stim["amplitude"] = s.amplitude;
    stim["duration_ms"] = s.duration_ms;
    stim["region"] = {s.region.row_lo, s.region.row_hi, s.region.col_lo, s.region.col_hi};
    if (s.kind == StimKind::Periodic) {
        stim["period_ms"] = s.period_ms;
    } else {
        stim["s2_delay_ms"] = s.s2_delay_ms;
        stim["s2_region"] = {s.s2_region.row_lo, s.s2_region.row_hi, s.s2_region.col_lo,
                             s.s2_region.col_hi};
    }
    j["stimulus"] = stim;
    j["seed"] = seed;
    return j;
}

// VTRC container: 32-byte header (magic, version, dims, rows, cols, sample
// rate, sample count, reserved; little-endian 32-bit fields) followed by the
// node-major float32 sample matrix. Metadata goes to <path>.json.
inline void save_trace(const VoltageTrace& tr, const std::string& path,
                       const nlohmann::json& metadata = nlohmann::json::object()) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw io_error("cannot write " + path);
    os.write("VTRC", 4);
    detail::put_u32(os, 1);
    detail::put_u32(os, uint32_t(tr.dims));
    detail::put_u32(os, uint32_t(tr.rows));
    detail::put_u32(os, uint32_t(tr.cols));
    detail::put_u32(os, uint32_t(tr.sample_rate));
    detail::put_u32(os, uint32_t(tr.n_samples));
    detail::put_u32(os, 0);
    os.write(reinterpret_cast<const char*>(tr.samples.data()),
             std::streamsize(tr.samples.size() * sizeof(float)));
    if (!os) throw io_error("write failed for " + path);
    os.close();

    std::ofstream ms(path + ".json", std::ios::trunc);
    if (!ms) throw io_error("cannot write " + path + ".json");
    ms << metadata.dump(2) << "\n";
}

inline VoltageTrace load_trace(const std::string& path) {
    detail::FileReader in(path);
    char magic[4];
    in.read(magic, 4, "magic");
    if (std::memcmp(magic, "VTRC", 4) != 0) throw parse_error(path + ": bad magic", 0);
    const uint32_t version = in.read_u32("version");
    if (version != 1) throw parse_error(path + ": unsupported version", 4);
    VoltageTrace tr;
    tr.dims = int(in.read_u32("dims"));
    tr.rows = int(in.read_u32("rows"));
    tr.cols = int(in.read_u32("cols"));
    tr.sample_rate = int(in.read_u32("sample rate"));
    tr.n_samples = int(in.read_u32("sample count"));
    in.read_u32("reserved");
    if (tr.dims != 1 && tr.dims != 2) throw parse_error(path + ": bad dims", 8);
    if (tr.rows <= 0 || tr.cols <= 0 || tr.n_samples <= 0 || tr.sample_rate <= 0)
        throw parse_error(path + ": bad shape fields", 12);
    tr.samples.resize(size_t(tr.n_nodes()) * tr.n_samples);
    in.read(tr.samples.data(), tr.samples.size() * sizeof(float), "samples");
    return tr;
}

}  // namespace plt
