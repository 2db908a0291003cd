#pragma once

#include <array>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "plt/common.hpp"
#include "plt/nn/unet.hpp"
#include "plt/sha256.hpp"

namespace plt::nn {

// Checkpoint layout: "PLTN", version, architecture JSON (length-prefixed),
// parameters as little-endian float32 in flat order, then a raw 32-byte
// SHA-256 of everything preceding the footer.
template <class T>
void save_checkpoint(const UNetModel<T>& m, const std::string& path) {
    nlohmann::json arch;
    arch["input_channels"] = m.input_channels;
    arch["encoder_channels"] = {m.encoder_channels[0], m.encoder_channels[1],
                                m.encoder_channels[2]};
    arch["bottleneck_channels"] = m.bottleneck_channels;
    arch["dropout_rate"] = m.dropout_rate;
    arch["noise_sigma"] = m.noise_sigma;
    arch["param_count"] = m.params.size();
    const std::string js = arch.dump();

    std::vector<char> buf;
    buf.reserve(16 + js.size() + 4 * m.params.size());
    buf.insert(buf.end(), {'P', 'L', 'T', 'N'});
    const uint32_t version = 1, jlen = uint32_t(js.size());
    buf.insert(buf.end(), reinterpret_cast<const char*>(&version),
               reinterpret_cast<const char*>(&version) + 4);
    buf.insert(buf.end(), reinterpret_cast<const char*>(&jlen),
               reinterpret_cast<const char*>(&jlen) + 4);
    buf.insert(buf.end(), js.begin(), js.end());
    for (const T& p : m.params) {
        const float f = float(p);
        buf.insert(buf.end(), reinterpret_cast<const char*>(&f),
                   reinterpret_cast<const char*>(&f) + 4);
    }

    Sha256 hash;
    hash.update(buf.data(), buf.size());
    const auto digest = hash.finish();

    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw io_error("cannot write " + path);
    os.write(buf.data(), std::streamsize(buf.size()));
    os.write(reinterpret_cast<const char*>(digest.data()), std::streamsize(digest.size()));
    if (!os) throw io_error("write failed for " + path);
}

inline UNetModel<float> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw io_error("cannot open " + path);
    std::vector<char> buf((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    is.close();

    if (buf.size() < 44) throw parse_error("checkpoint too short", buf.size());
    const size_t payload = buf.size() - 32;
    Sha256 hash;
    hash.update(buf.data(), payload);
    const auto digest = hash.finish();
    if (std::memcmp(digest.data(), buf.data() + payload, 32) != 0)
        throw integrity_error("checkpoint digest mismatch for " + path);

    size_t off = 0;
    auto read_u32 = [&](const char* what) {
        if (off + 4 > payload)
            throw parse_error(std::string("truncated checkpoint reading ") + what, off);
        uint32_t v;
        std::memcpy(&v, buf.data() + off, 4);
        off += 4;
        return v;
    };
    if (std::string(buf.data(), 4) != "PLTN") throw parse_error("bad checkpoint magic", 0);
    off = 4;
    const uint32_t version = read_u32("version");
    if (version != 1)
        throw checkpoint_error("unsupported checkpoint version " + std::to_string(version));
    const uint32_t jlen = read_u32("header length");
    if (off + jlen > payload) throw parse_error("truncated checkpoint header", off);

    nlohmann::json arch;
    try {
        arch = nlohmann::json::parse(buf.data() + off, buf.data() + off + jlen);
    } catch (const nlohmann::json::exception& ex) {
        throw parse_error(std::string("bad checkpoint header: ") + ex.what(), off);
    }
    off += jlen;

    UNetModel<float> m;
    try {
        const auto enc = arch.at("encoder_channels").get<std::vector<int>>();
        if (enc.size() != 3) throw checkpoint_error("encoder_channels must list 3 levels");
        m = make_unet<float>({enc[0], enc[1], enc[2]}, arch.at("bottleneck_channels").get<int>(),
                             arch.at("dropout_rate").get<double>(),
                             arch.at("noise_sigma").get<double>());
        if (arch.at("input_channels").get<int>() != m.input_channels)
            throw checkpoint_error("unsupported input channel count");
        if (arch.at("param_count").get<size_t>() != m.params.size())
            throw checkpoint_error("parameter count does not match architecture");
    } catch (const nlohmann::json::exception& ex) {
        throw parse_error(std::string("bad checkpoint header: ") + ex.what(), off - jlen);
    }

    if (off + 4 * m.params.size() != payload)
        throw parse_error("checkpoint parameter block has wrong size", off);
    std::memcpy(m.params.data(), buf.data() + off, 4 * m.params.size());
    return m;
}

}  // namespace plt::nn
