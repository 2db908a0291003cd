#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "plt/common.hpp"
#include "plt/nn/tensor.hpp"
#include "plt/rng.hpp"

namespace plt::nn {

// Cross-correlation with zero same-padding. Weights are laid out
// [out_ch][in_ch][tap]; kernel width 1 or 3.
template <class T>
void conv1d_forward(const FeatureMap<T>& x, std::span<const T> w, std::span<const T> b,
                    int in_ch, int out_ch, int k, FeatureMap<T>& y) {
    if (x.channels != in_ch) throw shape_error("conv1d: input channel mismatch");
    if (k != 1 && k != 3) throw shape_error("conv1d: kernel width must be 1 or 3");
    if (w.size() != size_t(in_ch) * out_ch * k || b.size() != size_t(out_ch))
        throw shape_error("conv1d: weight buffer size mismatch");
    const int n = x.length;
    if (y.channels != out_ch || y.length != n) y.reshape(out_ch, n);

    for (int oc = 0; oc < out_ch; ++oc) {
        T* __restrict out = y.row(oc);
        std::fill(out, out + n, b[oc]);
        for (int ic = 0; ic < in_ch; ++ic) {
            const T* __restrict in = x.row(ic);
            const T* wp = w.data() + (size_t(oc) * in_ch + ic) * k;
            if (k == 1) {
                const T w0 = wp[0];
                for (int i = 0; i < n; ++i) out[i] += w0 * in[i];
            } else {
                const T w0 = wp[0], w1 = wp[1], w2 = wp[2];
                out[0] += w1 * in[0];
                if (n > 1) out[0] += w2 * in[1];
                for (int i = 1; i < n - 1; ++i)
                    out[i] += w0 * in[i - 1] + w1 * in[i] + w2 * in[i + 1];
                if (n > 1) out[n - 1] += w0 * in[n - 2] + w1 * in[n - 1];
            }
        }
    }
}

// dx is overwritten; dw/db are accumulated so batches can share buffers.
template <class T>
void conv1d_backward(const FeatureMap<T>& x, std::span<const T> w, int in_ch, int out_ch, int k,
                     const FeatureMap<T>& dy, FeatureMap<T>& dx, std::span<T> dw,
                     std::span<T> db) {
    if (x.channels != in_ch || dy.channels != out_ch || dy.length != x.length)
        throw shape_error("conv1d backward: shape mismatch");
    if (k != 1 && k != 3) throw shape_error("conv1d: kernel width must be 1 or 3");
    const int n = x.length;
    if (dx.channels != in_ch || dx.length != n) dx.reshape(in_ch, n);
    std::fill(dx.v.begin(), dx.v.end(), T(0));

    for (int oc = 0; oc < out_ch; ++oc) {
        const T* __restrict g = dy.row(oc);
        T dbo = 0;
        for (int i = 0; i < n; ++i) dbo += g[i];
        db[oc] += dbo;
        for (int ic = 0; ic < in_ch; ++ic) {
            const T* __restrict in = x.row(ic);
            T* __restrict dxr = dx.row(ic);
            const size_t wo = (size_t(oc) * in_ch + ic) * k;
            const T* wp = w.data() + wo;
            if (k == 1) {
                const T w0 = wp[0];
                T acc = 0;
                for (int i = 0; i < n; ++i) {
                    acc += g[i] * in[i];
                    dxr[i] += w0 * g[i];
                }
                dw[wo] += acc;
            } else {
                const T w0 = wp[0], w1 = wp[1], w2 = wp[2];
                T a0 = 0, a1 = 0, a2 = 0;
                for (int i = 1; i < n; ++i) a0 += g[i] * in[i - 1];
                for (int i = 0; i < n; ++i) a1 += g[i] * in[i];
                for (int i = 0; i + 1 < n; ++i) a2 += g[i] * in[i + 1];
                dw[wo] += a0;
                dw[wo + 1] += a1;
                dw[wo + 2] += a2;
                dxr[0] += w1 * g[0];
                if (n > 1) dxr[0] += w0 * g[1];
                for (int j = 1; j < n - 1; ++j)
                    dxr[j] += w2 * g[j - 1] + w1 * g[j] + w0 * g[j + 1];
                if (n > 1) dxr[n - 1] += w2 * g[n - 2] + w1 * g[n - 1];
            }
        }
    }
}

template <class T>
void relu_inplace(FeatureMap<T>& x) {
    for (auto& s : x.v) s = s > T(0) ? s : T(0);
}

// Gradient through ReLU using the post-activation values.
template <class T>
void relu_backward_inplace(const FeatureMap<T>& post, FeatureMap<T>& d) {
    if (post.channels != d.channels || post.length != d.length)
        throw shape_error("relu backward: shape mismatch");
    for (size_t i = 0; i < d.v.size(); ++i)
        if (!(post.v[i] > T(0))) d.v[i] = T(0);
}

// Window max with the first-maximum index recorded for gradient routing.
template <class T>
void maxpool4_forward(const FeatureMap<T>& x, FeatureMap<T>& y, std::vector<int32_t>& argmax) {
    if (x.length % 4 != 0) throw shape_error("maxpool4: length not divisible by 4");
    const int n = x.length / 4;
    if (y.channels != x.channels || y.length != n) y.reshape(x.channels, n);
    argmax.resize(y.elements());
    for (int c = 0; c < x.channels; ++c) {
        const T* __restrict in = x.row(c);
        T* __restrict out = y.row(c);
        int32_t* am = argmax.data() + size_t(c) * n;
        for (int i = 0; i < n; ++i) {
            int best = 4 * i;
            T m = in[best];
            for (int t = 1; t < 4; ++t)
                if (in[4 * i + t] > m) {
                    m = in[4 * i + t];
                    best = 4 * i + t;
                }
            out[i] = m;
            am[i] = int32_t(size_t(c) * x.length + best);
        }
    }
}

template <class T>
void maxpool4_backward(const FeatureMap<T>& dy, const std::vector<int32_t>& argmax, int in_len,
                       FeatureMap<T>& dx) {
    if (argmax.size() != dy.elements()) throw shape_error("maxpool4 backward: argmax mismatch");
    if (dx.channels != dy.channels || dx.length != in_len) dx.reshape(dy.channels, in_len);
    std::fill(dx.v.begin(), dx.v.end(), T(0));
    for (size_t i = 0; i < dy.v.size(); ++i) dx.v[argmax[i]] += dy.v[i];
}

template <class T>
void upsample4_forward(const FeatureMap<T>& x, FeatureMap<T>& y) {
    const int n = x.length * 4;
    if (y.channels != x.channels || y.length != n) y.reshape(x.channels, n);
    for (int c = 0; c < x.channels; ++c) {
        const T* __restrict in = x.row(c);
        T* __restrict out = y.row(c);
        for (int i = 0; i < x.length; ++i) {
            const T s = in[i];
            out[4 * i] = s;
            out[4 * i + 1] = s;
            out[4 * i + 2] = s;
            out[4 * i + 3] = s;
        }
    }
}

template <class T>
void upsample4_backward(const FeatureMap<T>& dy, FeatureMap<T>& dx) {
    if (dy.length % 4 != 0) throw shape_error("upsample4 backward: length not divisible by 4");
    const int n = dy.length / 4;
    if (dx.channels != dy.channels || dx.length != n) dx.reshape(dy.channels, n);
    for (int c = 0; c < dy.channels; ++c) {
        const T* __restrict in = dy.row(c);
        T* __restrict out = dx.row(c);
        for (int i = 0; i < n; ++i)
            out[i] = in[4 * i] + in[4 * i + 1] + in[4 * i + 2] + in[4 * i + 3];
    }
}

template <class T>
void concat_forward(const FeatureMap<T>& a, const FeatureMap<T>& b, FeatureMap<T>& y) {
    if (a.length != b.length) throw shape_error("concat: length mismatch");
    if (y.channels != a.channels + b.channels || y.length != a.length)
        y.reshape(a.channels + b.channels, a.length);
    std::copy(a.v.begin(), a.v.end(), y.v.begin());
    std::copy(b.v.begin(), b.v.end(), y.v.begin() + ptrdiff_t(a.elements()));
}

template <class T>
void concat_backward(const FeatureMap<T>& dy, int a_channels, FeatureMap<T>& da,
                     FeatureMap<T>& db) {
    const int b_channels = dy.channels - a_channels;
    if (a_channels <= 0 || b_channels <= 0) throw shape_error("concat backward: bad split");
    if (da.channels != a_channels || da.length != dy.length) da.reshape(a_channels, dy.length);
    if (db.channels != b_channels || db.length != dy.length) db.reshape(b_channels, dy.length);
    const auto na = da.v.size();
    std::copy(dy.v.begin(), dy.v.begin() + ptrdiff_t(na), da.v.begin());
    std::copy(dy.v.begin() + ptrdiff_t(na), dy.v.end(), db.v.begin());
}

// Inverted dropout: kept values are scaled by 1/(1-rate) so inference is an
// identity. The mask holds the applied scale factors. RNG draws happen in
// flat element order.
template <class T>
void dropout_forward(const FeatureMap<T>& x, double rate, Mode mode, Rng& rng, FeatureMap<T>& y,
                     std::vector<T>& mask) {
    if (!(rate >= 0.0 && rate < 1.0)) throw config_error("dropout: rate must be in [0, 1)");
    if (y.channels != x.channels || y.length != x.length) y.reshape(x.channels, x.length);
    if (mode == Mode::infer || rate == 0.0) {
        y.v = x.v;
        mask.assign(x.elements(), T(1));
        return;
    }
    mask.resize(x.elements());
    const T scale = T(1.0 / (1.0 - rate));
    for (size_t i = 0; i < x.v.size(); ++i) {
        const T m = rng.uniform() >= rate ? scale : T(0);
        mask[i] = m;
        y.v[i] = x.v[i] * m;
    }
}

template <class T>
void dropout_backward(const std::vector<T>& mask, const FeatureMap<T>& dy, FeatureMap<T>& dx) {
    if (mask.size() != dy.elements()) throw shape_error("dropout backward: mask mismatch");
    if (dx.channels != dy.channels || dx.length != dy.length) dx.reshape(dy.channels, dy.length);
    for (size_t i = 0; i < dy.v.size(); ++i) dx.v[i] = dy.v[i] * mask[i];
}

// Additive zero-mean noise in train mode; identity in infer mode. Gradient is
// the identity either way. RNG draws happen in flat element order.
template <class T>
void gaussian_noise_forward(const FeatureMap<T>& x, double sigma, Mode mode, Rng& rng,
                            FeatureMap<T>& y) {
    if (sigma < 0.0) throw config_error("gaussian_noise: sigma must be >= 0");
    if (y.channels != x.channels || y.length != x.length) y.reshape(x.channels, x.length);
    if (mode == Mode::infer || sigma == 0.0) {
        y.v = x.v;
        return;
    }
    for (size_t i = 0; i < x.v.size(); ++i) y.v[i] = x.v[i] + T(sigma * rng.gaussian());
}

template <class T>
void logistic_inplace(FeatureMap<T>& x) {
    for (auto& s : x.v) {
        if (s >= T(0)) {
            s = T(1) / (T(1) + std::exp(-s));
        } else {
            const T e = std::exp(s);
            s = e / (T(1) + e);
        }
    }
}

template <class T>
void logistic_backward_inplace(const FeatureMap<T>& post, FeatureMap<T>& d) {
    if (post.channels != d.channels || post.length != d.length)
        throw shape_error("logistic backward: shape mismatch");
    for (size_t i = 0; i < d.v.size(); ++i) d.v[i] *= post.v[i] * (T(1) - post.v[i]);
}

}  // namespace plt::nn
