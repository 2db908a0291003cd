#pragma once

#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "plt/common.hpp"
#include "plt/electrogram.hpp"
#include "plt/nn/ops.hpp"
#include "plt/nn/tensor.hpp"
#include "plt/plt_signal.hpp"
#include "plt/rng.hpp"

namespace plt::nn {

struct LayerShape {
    int in_ch = 0;
    int out_ch = 0;
    int k = 3;
    size_t w_off = 0;
    size_t b_off = 0;
    size_t w_count() const { return size_t(in_ch) * out_ch * k; }
};

// Three-level 1-D U-Net with pool/upsample factor 4: the full network maps a
// single channel of length divisible by 64 back to a single channel of the
// same length through a logistic head. All parameters live in one flat
// vector addressed by per-layer offsets.
template <class T>
struct UNetModel {
    int input_channels = 1;
    std::array<int, 3> encoder_channels{16, 32, 64};
    int bottleneck_channels = 128;
    double dropout_rate = 0.3;
    double noise_sigma = 0.2;
    std::vector<LayerShape> layers;  // 15 convolutions in forward order
    std::vector<T> params;

    size_t param_count() const { return params.size(); }
};

template <class T>
UNetModel<T> make_unet(std::array<int, 3> enc = {16, 32, 64}, int bottleneck = 128,
                       double dropout_rate = 0.3, double noise_sigma = 0.2) {
    for (int c : enc)
        if (c <= 0) throw config_error("make_unet: channel counts must be positive");
    if (bottleneck <= 0) throw config_error("make_unet: channel counts must be positive");
    UNetModel<T> m;
    m.encoder_channels = enc;
    m.bottleneck_channels = bottleneck;
    m.dropout_rate = dropout_rate;
    m.noise_sigma = noise_sigma;

    const int e0 = enc[0], e1 = enc[1], e2 = enc[2], bn = bottleneck;
    const int plan[15][3] = {
        {1, e0, 3},        {e0, e0, 3},       {e0, e1, 3},  {e1, e1, 3},  {e1, e2, 3},
        {e2, e2, 3},       {e2, bn, 3},       {bn, bn, 3},  {bn + e2, e2, 3},
        {e2, e2, 3},       {e2 + e1, e1, 3},  {e1, e1, 3},  {e1 + e0, e0, 3},
        {e0, e0, 3},       {e0, 1, 1},
    };
    size_t off = 0;
    for (const auto& p : plan) {
        LayerShape ls;
        ls.in_ch = p[0];
        ls.out_ch = p[1];
        ls.k = p[2];
        ls.w_off = off;
        off += ls.w_count();
        ls.b_off = off;
        off += size_t(ls.out_ch);
        m.layers.push_back(ls);
    }
    m.params.assign(off, T(0));
    return m;
}

template <class T>
UNetModel<T> make_mini_unet() {
    return make_unet<T>({2, 4, 8}, 16);
}

// He-uniform weight init (limit sqrt(6 / fan_in)), zero biases, drawn layer
// by layer in parameter order.
template <class T>
void init_params(UNetModel<T>& m, Rng& rng) {
    for (const auto& ls : m.layers) {
        const double limit = std::sqrt(6.0 / (double(ls.in_ch) * ls.k));
        for (size_t i = 0; i < ls.w_count(); ++i)
            m.params[ls.w_off + i] = T(rng.uniform(-limit, limit));
        for (int i = 0; i < ls.out_ch; ++i) m.params[ls.b_off + i] = T(0);
    }
}

// Every intermediate needed by the backward pass.
template <class T>
struct ForwardCache {
    FeatureMap<T> x;
    FeatureMap<T> enc[6];                  // post-ReLU conv outputs 0..5
    FeatureMap<T> pool[3];
    std::vector<int32_t> argmax[3];
    FeatureMap<T> bott[2];                 // post-ReLU conv outputs 6..7
    FeatureMap<T> dropped;
    std::vector<T> drop_mask;
    FeatureMap<T> noised;
    FeatureMap<T> up[3];
    FeatureMap<T> cat[3];
    FeatureMap<T> dec[6];                  // post-ReLU conv outputs 8..13
    FeatureMap<T> y;                       // post-logistic head output
};

namespace detail {

template <class T>
std::span<const T> wspan(const UNetModel<T>& m, int l) {
    return {m.params.data() + m.layers[l].w_off, m.layers[l].w_count()};
}

template <class T>
std::span<const T> bspan(const UNetModel<T>& m, int l) {
    return {m.params.data() + m.layers[l].b_off, size_t(m.layers[l].out_ch)};
}

template <class T>
void conv_relu(const UNetModel<T>& m, int l, const FeatureMap<T>& in, FeatureMap<T>& out) {
    const auto& ls = m.layers[l];
    if (in.channels != ls.in_ch)
        throw shape_error("forward: channel mismatch at convolution " + std::to_string(l));
    conv1d_forward(in, wspan(m, l), bspan(m, l), ls.in_ch, ls.out_ch, ls.k, out);
    relu_inplace(out);
}

}  // namespace detail

template <class T>
const FeatureMap<T>& forward(const UNetModel<T>& m, const FeatureMap<T>& x, Mode mode, Rng& rng,
                             ForwardCache<T>& c) {
    if (x.channels != m.input_channels) throw shape_error("forward: input must have 1 channel");
    if (x.length % 64 != 0 || x.length <= 0)
        throw shape_error("forward: input length must be a positive multiple of 64");

    c.x = x;
    detail::conv_relu(m, 0, c.x, c.enc[0]);
    detail::conv_relu(m, 1, c.enc[0], c.enc[1]);
    maxpool4_forward(c.enc[1], c.pool[0], c.argmax[0]);
    detail::conv_relu(m, 2, c.pool[0], c.enc[2]);
    detail::conv_relu(m, 3, c.enc[2], c.enc[3]);
    maxpool4_forward(c.enc[3], c.pool[1], c.argmax[1]);
    detail::conv_relu(m, 4, c.pool[1], c.enc[4]);
    detail::conv_relu(m, 5, c.enc[4], c.enc[5]);
    maxpool4_forward(c.enc[5], c.pool[2], c.argmax[2]);

    detail::conv_relu(m, 6, c.pool[2], c.bott[0]);
    detail::conv_relu(m, 7, c.bott[0], c.bott[1]);
    dropout_forward(c.bott[1], m.dropout_rate, mode, rng, c.dropped, c.drop_mask);
    gaussian_noise_forward(c.dropped, m.noise_sigma, mode, rng, c.noised);

    upsample4_forward(c.noised, c.up[0]);
    concat_forward(c.up[0], c.enc[5], c.cat[0]);
    detail::conv_relu(m, 8, c.cat[0], c.dec[0]);
    detail::conv_relu(m, 9, c.dec[0], c.dec[1]);
    upsample4_forward(c.dec[1], c.up[1]);
    concat_forward(c.up[1], c.enc[3], c.cat[1]);
    detail::conv_relu(m, 10, c.cat[1], c.dec[2]);
    detail::conv_relu(m, 11, c.dec[2], c.dec[3]);
    upsample4_forward(c.dec[3], c.up[2]);
    concat_forward(c.up[2], c.enc[1], c.cat[2]);
    detail::conv_relu(m, 12, c.cat[2], c.dec[4]);
    detail::conv_relu(m, 13, c.dec[4], c.dec[5]);

    const auto& ls = m.layers[14];
    conv1d_forward(c.dec[5], detail::wspan(m, 14), detail::bspan(m, 14), ls.in_ch, ls.out_ch,
                   ls.k, c.y);
    logistic_inplace(c.y);
    return c.y;
}

// Scratch buffers reused across backward calls within a batch.
template <class T>
struct BackwardScratch {
    FeatureMap<T> d1, d2, da, db;
};

// Accumulates parameter gradients into `grads` (caller zeroes per batch);
// dy is the loss gradient w.r.t. the network output.
template <class T>
void backward(const UNetModel<T>& m, const ForwardCache<T>& c, const FeatureMap<T>& dy,
              std::span<T> grads, BackwardScratch<T>& s) {
    if (grads.size() != m.params.size()) throw shape_error("backward: gradient buffer mismatch");
    auto dw = [&](int l) { return grads.subspan(m.layers[l].w_off, m.layers[l].w_count()); };
    auto db = [&](int l) { return grads.subspan(m.layers[l].b_off, size_t(m.layers[l].out_ch)); };
    auto cb = [&](int l, const FeatureMap<T>& in, FeatureMap<T>& g, FeatureMap<T>& dx) {
        conv1d_backward(in, detail::wspan(m, l), m.layers[l].in_ch, m.layers[l].out_ch,
                        m.layers[l].k, g, dx, dw(l), db(l));
    };

    FeatureMap<T>& g = s.d1;
    FeatureMap<T>& t = s.d2;

    g = dy;
    logistic_backward_inplace(c.y, g);
    cb(14, c.dec[5], g, t);

    relu_backward_inplace(c.dec[5], t);
    cb(13, c.dec[4], t, g);
    relu_backward_inplace(c.dec[4], g);
    cb(12, c.cat[2], g, t);
    concat_backward(t, c.up[2].channels, g, s.da);  // g: d(up[2]); da: d(enc[1]) skip part
    upsample4_backward(g, t);                       // t: d(dec[3])

    relu_backward_inplace(c.dec[3], t);
    cb(11, c.dec[2], t, g);
    relu_backward_inplace(c.dec[2], g);
    cb(10, c.cat[1], g, t);
    concat_backward(t, c.up[1].channels, g, s.db);  // db: d(enc[3]) skip part
    upsample4_backward(g, t);                       // t: d(dec[1])

    relu_backward_inplace(c.dec[1], t);
    cb(9, c.dec[0], t, g);
    relu_backward_inplace(c.dec[0], g);
    cb(8, c.cat[0], g, t);
    FeatureMap<T> dskip3;
    concat_backward(t, c.up[0].channels, g, dskip3);  // dskip3: d(enc[5]) skip part
    upsample4_backward(g, t);                         // t: d(noised)

    // noise layer gradient is the identity
    dropout_backward(c.drop_mask, t, g);  // g: d(bott[1])

    relu_backward_inplace(c.bott[1], g);
    cb(7, c.bott[0], g, t);
    relu_backward_inplace(c.bott[0], t);
    cb(6, c.pool[2], t, g);  // g: d(pool[2])

    maxpool4_backward(g, c.argmax[2], c.enc[5].length, t);
    for (size_t i = 0; i < t.v.size(); ++i) t.v[i] += dskip3.v[i];
    relu_backward_inplace(c.enc[5], t);
    cb(5, c.enc[4], t, g);
    relu_backward_inplace(c.enc[4], g);
    cb(4, c.pool[1], g, t);

    maxpool4_backward(t, c.argmax[1], c.enc[3].length, g);
    for (size_t i = 0; i < g.v.size(); ++i) g.v[i] += s.db.v[i];
    relu_backward_inplace(c.enc[3], g);
    cb(3, c.enc[2], g, t);
    relu_backward_inplace(c.enc[2], t);
    cb(2, c.pool[0], t, g);

    maxpool4_backward(g, c.argmax[0], c.enc[1].length, t);
    for (size_t i = 0; i < t.v.size(); ++i) t.v[i] += s.da.v[i];
    relu_backward_inplace(c.enc[1], t);
    cb(1, c.enc[0], t, g);
    relu_backward_inplace(c.enc[0], g);
    cb(0, c.x, g, t);
}

// Inference over consecutive 4096-sample windows.
template <class T>
std::vector<double> infer_values(const UNetModel<T>& m, std::span<const float> input) {
    constexpr int kWindow = 4096;
    if (input.empty() || input.size() % kWindow != 0)
        throw shape_error("infer: input length must be a positive multiple of 4096");
    std::vector<double> out;
    out.reserve(input.size());
    Rng rng(0);  // unused: inference disables stochastic layers
    ForwardCache<T> cache;
    FeatureMap<T> x(1, kWindow);
    for (size_t w = 0; w < input.size(); w += kWindow) {
        for (int i = 0; i < kWindow; ++i) x.v[size_t(i)] = T(input[w + i]);
        const auto& y = forward(m, x, Mode::infer, rng, cache);
        for (int i = 0; i < kWindow; ++i) out.push_back(double(y.v[size_t(i)]));
    }
    return out;
}

template <class T>
PLTSignal infer(const UNetModel<T>& m, const Electrogram& egm) {
    std::vector<float> in(egm.samples.size());
    for (size_t i = 0; i < in.size(); ++i) in[i] = float(egm.samples[i]);
    PLTSignal out;
    out.sample_rate = egm.sample_rate;
    out.samples = infer_values(m, std::span<const float>(in.data(), in.size()));
    return out;
}

}  // namespace plt::nn
