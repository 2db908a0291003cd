#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>

#include <openssl/evp.h>

#include "plt/common.hpp"

namespace plt {

class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new()) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_, EVP_sha256(), nullptr) != 1)
            throw error("sha256 init failed");
    }
    ~Sha256() { EVP_MD_CTX_free(ctx_); }
    Sha256(const Sha256&) = delete;
    Sha256& operator=(const Sha256&) = delete;

    void update(const void* data, std::size_t n) {
        if (EVP_DigestUpdate(ctx_, data, n) != 1) throw error("sha256 update failed");
    }

    std::array<uint8_t, 32> finish() {
        std::array<uint8_t, 32> out{};
        unsigned int len = 0;
        if (EVP_DigestFinal_ex(ctx_, out.data(), &len) != 1 || len != 32)
            throw error("sha256 final failed");
        return out;
    }

private:
    EVP_MD_CTX* ctx_;
};

inline std::string to_hex(const std::array<uint8_t, 32>& digest) {
    static const char* hex = "0123456789abcdef";
    std::string s;
    s.reserve(64);
    for (uint8_t b : digest) {
        s += hex[b >> 4];
        s += hex[b & 0xf];
    }
    return s;
}

inline std::string sha256_hex(const void* data, std::size_t n) {
    Sha256 h;
    h.update(data, n);
    return to_hex(h.finish());
}

}  // namespace plt
