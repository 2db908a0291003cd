#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <functional>
#include <vector>

#include "plt/nn/loss.hpp"
#include "plt/nn/ops.hpp"
#include "plt/nn/unet.hpp"
#include "plt/rng.hpp"

using plt::nn::FeatureMap;

namespace {

constexpr double kStep = 1e-6;

// Central finite difference against the analytic value with a combined
// tolerance: relative 1e-5 at ordinary magnitudes, absolute 1e-9 below the
// scale a second-order difference of an O(1) function can resolve.
bool grad_close(double analytic, double numeric, double rtol = 1e-5, double atol = 1e-9) {
    return std::abs(analytic - numeric) <=
           atol + rtol * std::max(std::abs(analytic), std::abs(numeric));
}

double central_diff(const std::function<double()>& f, double& coord) {
    const double keep = coord;
    coord = keep + kStep;
    const double hi = f();
    coord = keep - kStep;
    const double lo = f();
    coord = keep;
    return (hi - lo) / (2.0 * kStep);
}

}  // namespace

TEST_CASE("convolution gradients match finite differences", "[nn-grad]") {
    const int in_ch = 2, out_ch = 3, n = 12, k = 3;
    plt::Rng rng(17);
    FeatureMap<double> x(in_ch, n);
    for (auto& v : x.v) v = rng.uniform(-1.0, 1.0);
    std::vector<double> w(size_t(in_ch) * out_ch * k), b(out_ch);
    for (auto& v : w) v = rng.uniform(-1.0, 1.0);
    for (auto& v : b) v = rng.uniform(-1.0, 1.0);
    std::vector<double> c(size_t(out_ch) * n);
    for (auto& v : c) v = rng.uniform(-1.0, 1.0);

    FeatureMap<double> y;
    auto loss = [&]() {
        plt::nn::conv1d_forward<double>(x, w, b, in_ch, out_ch, k, y);
        double acc = 0.0;
        for (size_t i = 0; i < y.v.size(); ++i) acc += c[i] * y.v[i];
        return acc;
    };
    loss();

    FeatureMap<double> dy(out_ch, n), dx;
    dy.v = c;
    std::vector<double> dw(w.size(), 0.0), db(b.size(), 0.0);
    plt::nn::conv1d_backward<double>(x, w, in_ch, out_ch, k, dy, dx, dw, db);

    for (size_t i = 0; i < w.size(); ++i) CHECK(grad_close(dw[i], central_diff(loss, w[i])));
    for (size_t i = 0; i < b.size(); ++i) CHECK(grad_close(db[i], central_diff(loss, b[i])));
    for (size_t i = 0; i < x.v.size(); ++i)
        CHECK(grad_close(dx.v[i], central_diff(loss, x.v[i])));
}

TEST_CASE("pointwise convolution gradients match finite differences", "[nn-grad]") {
    const int in_ch = 3, out_ch = 2, n = 8, k = 1;
    plt::Rng rng(23);
    FeatureMap<double> x(in_ch, n);
    for (auto& v : x.v) v = rng.uniform(-1.0, 1.0);
    std::vector<double> w(size_t(in_ch) * out_ch), b(out_ch);
    for (auto& v : w) v = rng.uniform(-1.0, 1.0);
    for (auto& v : b) v = rng.uniform(-1.0, 1.0);
    std::vector<double> c(size_t(out_ch) * n);
    for (auto& v : c) v = rng.uniform(-1.0, 1.0);

    FeatureMap<double> y;
    auto loss = [&]() {
        plt::nn::conv1d_forward<double>(x, w, b, in_ch, out_ch, k, y);
        double acc = 0.0;
        for (size_t i = 0; i < y.v.size(); ++i) acc += c[i] * y.v[i];
        return acc;
    };
    loss();

    FeatureMap<double> dy(out_ch, n), dx;
    dy.v = c;
    std::vector<double> dw(w.size(), 0.0), db(b.size(), 0.0);
    plt::nn::conv1d_backward<double>(x, w, in_ch, out_ch, k, dy, dx, dw, db);

    for (size_t i = 0; i < w.size(); ++i) CHECK(grad_close(dw[i], central_diff(loss, w[i])));
    for (size_t i = 0; i < b.size(); ++i) CHECK(grad_close(db[i], central_diff(loss, b[i])));
    for (size_t i = 0; i < x.v.size(); ++i)
        CHECK(grad_close(dx.v[i], central_diff(loss, x.v[i])));
}

TEST_CASE("pooling gradients match finite differences away from ties", "[nn-grad]") {
    plt::Rng rng(31);
    FeatureMap<double> x(2, 16);
    for (size_t i = 0; i < x.v.size(); ++i) x.v[i] = rng.uniform(-1.0, 1.0) + 0.01 * double(i);
    std::vector<double> c(2 * 4);
    for (auto& v : c) v = rng.uniform(-1.0, 1.0);

    FeatureMap<double> y;
    std::vector<int32_t> argmax;
    auto loss = [&]() {
        plt::nn::maxpool4_forward(x, y, argmax);
        double acc = 0.0;
        for (size_t i = 0; i < y.v.size(); ++i) acc += c[i] * y.v[i];
        return acc;
    };
    loss();

    // Precondition: every window's top two values are separated by far more
    // than the probe step, so the argmax never flips.
    for (int cch = 0; cch < 2; ++cch)
        for (int wnd = 0; wnd < 4; ++wnd) {
            double top = -1e30, second = -1e30;
            for (int t = 0; t < 4; ++t) {
                const double v = x.at(cch, 4 * wnd + t);
                if (v > top) {
                    second = top;
                    top = v;
                } else if (v > second) {
                    second = v;
                }
            }
            REQUIRE(top - second > 100 * kStep);
        }

    FeatureMap<double> dy(2, 4), dx;
    dy.v = c;
    plt::nn::maxpool4_backward(dy, argmax, x.length, dx);
    for (size_t i = 0; i < x.v.size(); ++i)
        CHECK(grad_close(dx.v[i], central_diff(loss, x.v[i])));
}

TEST_CASE("upsampling gradients match finite differences", "[nn-grad]") {
    plt::Rng rng(37);
    FeatureMap<double> x(2, 4);
    for (auto& v : x.v) v = rng.uniform(-1.0, 1.0);
    std::vector<double> c(2 * 16);
    for (auto& v : c) v = rng.uniform(-1.0, 1.0);

    FeatureMap<double> y;
    auto loss = [&]() {
        plt::nn::upsample4_forward(x, y);
        double acc = 0.0;
        for (size_t i = 0; i < y.v.size(); ++i) acc += c[i] * y.v[i];
        return acc;
    };
    loss();

    FeatureMap<double> dy(2, 16), dx;
    dy.v = c;
    plt::nn::upsample4_backward(dy, dx);
    for (size_t i = 0; i < x.v.size(); ++i)
        CHECK(grad_close(dx.v[i], central_diff(loss, x.v[i])));
}

TEST_CASE("activation gradients match finite differences", "[nn-grad]") {
    plt::Rng rng(41);
    FeatureMap<double> x(1, 24);
    for (auto& v : x.v) {
        v = rng.uniform(-2.0, 2.0);
        if (std::abs(v) < 1e-3) v += 0.01;  // keep clear of the ReLU kink
    }
    std::vector<double> c(24);
    for (auto& v : c) v = rng.uniform(-1.0, 1.0);

    SECTION("relu") {
        FeatureMap<double> y;
        auto loss = [&]() {
            y = x;
            plt::nn::relu_inplace(y);
            double acc = 0.0;
            for (size_t i = 0; i < y.v.size(); ++i) acc += c[i] * y.v[i];
            return acc;
        };
        loss();
        FeatureMap<double> d(1, 24);
        d.v = c;
        plt::nn::relu_backward_inplace(y, d);
        for (size_t i = 0; i < x.v.size(); ++i)
            CHECK(grad_close(d.v[i], central_diff(loss, x.v[i])));
    }
    SECTION("logistic") {
        FeatureMap<double> y;
        auto loss = [&]() {
            y = x;
            plt::nn::logistic_inplace(y);
            double acc = 0.0;
            for (size_t i = 0; i < y.v.size(); ++i) acc += c[i] * y.v[i];
            return acc;
        };
        loss();
        FeatureMap<double> d(1, 24);
        d.v = c;
        plt::nn::logistic_backward_inplace(y, d);
        for (size_t i = 0; i < x.v.size(); ++i)
            CHECK(grad_close(d.v[i], central_diff(loss, x.v[i])));
    }
}

TEST_CASE("loss gradient matches finite differences away from kinks", "[nn-grad]") {
    plt::Rng rng(47);
    FeatureMap<double> pred(1, 32);
    std::vector<double> target(32);
    for (auto& v : pred.v) v = rng.uniform(0.0, 1.0);
    for (auto& v : target) v = rng.uniform(0.0, 1.0);

    FeatureMap<double> grad;
    const double base = plt::nn::loss_mae_mse(
        pred, std::span<const double>(target.data(), target.size()), &grad);
    CHECK(base > 0.0);

    auto loss = [&]() {
        return plt::nn::loss_mae_mse(pred, std::span<const double>(target.data(), target.size()),
                                     static_cast<FeatureMap<double>*>(nullptr));
    };
    int checked = 0;
    for (size_t i = 0; i < pred.v.size(); ++i) {
        if (std::abs(pred.v[i] - target[i]) < 1e-4) continue;  // MAE kink
        const double num = central_diff(loss, pred.v[i]);
        const double rel = std::abs(grad.v[i] - num) /
                           std::max({std::abs(grad.v[i]), std::abs(num), 1e-12});
        CHECK(rel < 1e-6);
        ++checked;
    }
    CHECK(checked >= 30);
}

TEST_CASE("miniature network end-to-end gradient check", "[nn-grad]") {
    // Stochastic layers disabled so the loss is a deterministic function of
    // the parameters; rate 0 and sigma 0 make train mode an identity there.
    auto m = plt::nn::make_unet<double>({2, 4, 8}, 16, 0.0, 0.0);
    REQUIRE(m.param_count() == 2629);
    plt::Rng init(20260819);
    plt::nn::init_params(m, init);
    // Zero biases put dead-window units exactly on the ReLU kink, where the
    // subgradient convention (0) and a central difference (half slope)
    // legitimately disagree; check at a generic point instead.
    for (const auto& ls : m.layers)
        for (int i = 0; i < ls.out_ch; ++i)
            m.params[ls.b_off + size_t(i)] =
                (init.uniform() < 0.5 ? -1.0 : 1.0) * init.uniform(0.02, 0.2);

    FeatureMap<double> x(1, 64);
    std::vector<double> target(64);
    plt::Rng data(7);
    for (auto& v : x.v) v = data.uniform(-1.0, 1.0);
    for (auto& v : target) v = data.uniform(0.05, 0.95);

    plt::nn::ForwardCache<double> cache;
    plt::nn::BackwardScratch<double> scratch;
    plt::Rng rng(1);
    FeatureMap<double> dLdy;

    auto loss = [&]() {
        const auto& y = plt::nn::forward(m, x, plt::nn::Mode::train, rng, cache);
        return plt::nn::loss_mae_mse(y, std::span<const double>(target.data(), target.size()),
                                     static_cast<FeatureMap<double>*>(nullptr));
    };

    // Preconditions that keep the finite differences trustworthy: predictions
    // clear of the MAE kink and pooling windows clear of argmax ties.
    loss();
    for (size_t i = 0; i < cache.y.v.size(); ++i)
        REQUIRE(std::abs(cache.y.v[i] - target[i]) > 1e-3);
    for (int lvl = 0; lvl < 3; ++lvl) {
        const auto& pre = lvl == 0 ? cache.enc[1] : (lvl == 1 ? cache.enc[3] : cache.enc[5]);
        for (int ch = 0; ch < pre.channels; ++ch)
            for (int wnd = 0; wnd < pre.length / 4; ++wnd) {
                double top = -1e30, second = -1e30;
                for (int t = 0; t < 4; ++t) {
                    const double v = pre.at(ch, 4 * wnd + t);
                    if (v > top) {
                        second = top;
                        top = v;
                    } else if (v > second) {
                        second = v;
                    }
                }
                // Constant windows (dead regions lifted by a bias) are safe:
                // all four candidates move together under any perturbation.
                // Distinct values must be separated beyond the probe step.
                if (top - second > 0.0) REQUIRE(top - second > 100 * kStep);
            }
    }

    const auto& y = plt::nn::forward(m, x, plt::nn::Mode::train, rng, cache);
    plt::nn::loss_mae_mse(y, std::span<const double>(target.data(), target.size()), &dLdy);
    std::vector<double> grads(m.params.size(), 0.0);
    plt::nn::backward(m, cache, dLdy, std::span<double>(grads.data(), grads.size()), scratch);

    size_t worst_i = 0;
    double worst = 0.0;
    for (size_t i = 0; i < m.params.size(); ++i) {
        const double num = central_diff(loss, m.params[i]);
        const double err = std::abs(grads[i] - num) -
                           1e-5 * std::max(std::abs(grads[i]), std::abs(num));
        if (err > worst) {
            worst = err;
            worst_i = i;
        }
        CHECK(grad_close(grads[i], num));
    }
    INFO("largest combined-tolerance excess at parameter " << worst_i);
    CHECK(worst <= 1e-9);
}
