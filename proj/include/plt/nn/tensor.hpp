#pragma once

#include <cstddef>
#include <vector>

#include "plt/common.hpp"

namespace plt::nn {

enum class Mode { train, infer };

// Channels x length feature map, row-major by channel.
template <class T>
struct FeatureMap {
    int channels = 0;
    int length = 0;
    std::vector<T> v;

    FeatureMap() = default;
    FeatureMap(int ch, int len) : channels(ch), length(len), v(checked_size(ch, len), T(0)) {}

    size_t elements() const { return size_t(channels) * length; }
    T* row(int c) { return v.data() + size_t(c) * length; }
    const T* row(int c) const { return v.data() + size_t(c) * length; }
    T& at(int c, int i) { return v[size_t(c) * length + i]; }
    T at(int c, int i) const { return v[size_t(c) * length + i]; }

    void reshape(int ch, int len) {
        v.assign(checked_size(ch, len), T(0));
        channels = ch;
        length = len;
    }

private:
    static size_t checked_size(int ch, int len) {
        if (ch <= 0 || len <= 0) throw shape_error("FeatureMap: dimensions must be positive");
        return size_t(ch) * size_t(len);
    }
};

}  // namespace plt::nn
