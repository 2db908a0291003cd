#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "plt/common.hpp"
#include "plt/dataset.hpp"
#include "plt/nn/adam.hpp"
#include "plt/nn/loss.hpp"
#include "plt/nn/unet.hpp"
#include "plt/rng.hpp"

namespace plt::nn {

struct TrainConfig {
    int epochs = 150;
    int batch_size = 8;
    double learning_rate = 1e-3;
    double plateau_factor = 0.5;
    int plateau_patience = 10;
    double lr_floor = 1e-5;
    double w_mae = 1.0;
    double w_mse = 1.0;
    uint64_t seed = 1;

    void validate() const {
        std::vector<std::string> bad;
        if (epochs < 0) bad.push_back("epochs must be >= 0");
        if (batch_size < 1) bad.push_back("batch_size must be >= 1");
        if (!(learning_rate > 0)) bad.push_back("learning_rate must be > 0");
        if (!(plateau_factor > 0 && plateau_factor < 1))
            bad.push_back("plateau_factor must be in (0, 1)");
        if (plateau_patience < 1) bad.push_back("plateau_patience must be >= 1");
        if (!(lr_floor > 0)) bad.push_back("lr_floor must be > 0");
        if (!(w_mae > 0) || !(w_mse > 0)) bad.push_back("loss weights must be > 0");
        if (!bad.empty()) throw config_error(bad);
    }
};

struct SplitMetrics {
    double mae = 0.0;
    double mse = 0.0;
};

struct TrainReport {
    std::vector<double> train_loss;  // per epoch
    std::vector<double> val_loss;    // per epoch
    std::vector<double> lr;          // per epoch (rate used during that epoch)
    SplitMetrics final_train;
    SplitMetrics final_validation;
    int best_epoch = -1;
    double best_val_loss = 0.0;
};

namespace detail {

template <class T>
FeatureMap<T> case_input(const DatasetCase& c) {
    FeatureMap<T> x(1, int(c.input.size()));
    for (size_t i = 0; i < c.input.size(); ++i) x.v[i] = T(c.input[i]);
    return x;
}

template <class T>
SplitMetrics evaluate_split(const UNetModel<T>& m, const std::vector<DatasetCase>& cases) {
    SplitMetrics out;
    if (cases.empty()) return out;
    Rng rng(0);
    ForwardCache<T> cache;
    for (const auto& c : cases) {
        const auto x = case_input<T>(c);
        const auto& y = forward(m, x, Mode::infer, rng, cache);
        double amae = 0.0, amse = 0.0;
        for (size_t i = 0; i < c.target.size(); ++i) {
            const double d = double(y.v[i]) - double(c.target[i]);
            amae += std::abs(d);
            amse += d * d;
        }
        out.mae += amae / double(c.target.size());
        out.mse += amse / double(c.target.size());
    }
    out.mae /= double(cases.size());
    out.mse /= double(cases.size());
    return out;
}

}  // namespace detail

// Mini-batch training with seeded shuffling, ADAM, plateau LR scheduling and
// a best-validation snapshot. One RNG drives shuffling and the stochastic
// layers in a fixed serial order, so identical seeds give identical runs.
template <class T>
std::pair<UNetModel<T>, TrainReport> train(const UNetModel<T>& model, const DatasetSplit& split,
                                           const TrainConfig& cfg) {
    cfg.validate();
    if (split.train.empty()) throw config_error("train: empty training split");
    TrainReport report;
    if (cfg.epochs == 0) return {model, report};

    UNetModel<T> m = model;
    UNetModel<T> best = model;
    double best_val = std::numeric_limits<double>::infinity();
    AdamState<T> adam(m.params.size());
    std::vector<T> grads(m.params.size(), T(0));
    Rng rng(cfg.seed);
    ForwardCache<T> cache;
    BackwardScratch<T> scratch;
    FeatureMap<T> dLdy;

    double lr = cfg.learning_rate;
    int wait = 0;

    std::vector<size_t> order(split.train.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (size_t i = order.size() - 1; i > 0; --i) {
            const size_t j = size_t(rng.next_u64() % (i + 1));
            std::swap(order[i], order[j]);
        }

        double epoch_loss = 0.0;
        for (size_t b0 = 0; b0 < order.size(); b0 += size_t(cfg.batch_size)) {
            const size_t b1 = std::min(order.size(), b0 + size_t(cfg.batch_size));
            std::fill(grads.begin(), grads.end(), T(0));
            for (size_t s = b0; s < b1; ++s) {
                const DatasetCase& c = split.train[order[s]];
                const auto x = detail::case_input<T>(c);
                const auto& y = forward(m, x, Mode::train, rng, cache);
                const double loss = loss_mae_mse(
                    y, std::span<const float>(c.target.data(), c.target.size()), &dLdy,
                    cfg.w_mae, cfg.w_mse);
                if (!std::isfinite(loss))
                    throw error("train: non-finite loss at epoch " + std::to_string(epoch) +
                                ", batch " + std::to_string(b0 / size_t(cfg.batch_size)));
                epoch_loss += loss;
                backward(m, cache, dLdy, std::span<T>(grads.data(), grads.size()), scratch);
            }
            const T inv = T(1.0 / double(b1 - b0));
            for (auto& g : grads) g *= inv;
            adam_step(std::span<T>(m.params.data(), m.params.size()),
                      std::span<const T>(grads.data(), grads.size()), adam, lr);
        }
        epoch_loss /= double(order.size());

        const auto val = detail::evaluate_split(m, split.validation);
        const double val_loss = cfg.w_mae * val.mae + cfg.w_mse * val.mse;

        report.train_loss.push_back(epoch_loss);
        report.val_loss.push_back(val_loss);
        report.lr.push_back(lr);

        if (val_loss < best_val) {
            best_val = val_loss;
            best = m;
            report.best_epoch = epoch;
            report.best_val_loss = val_loss;
            wait = 0;
        } else if (++wait >= cfg.plateau_patience) {
            if (lr * cfg.plateau_factor >= cfg.lr_floor) lr *= cfg.plateau_factor;
            wait = 0;
        }
    }

    if (report.best_epoch < 0) best = m;  // no validation split: keep the last state
    report.final_train = detail::evaluate_split(best, split.train);
    report.final_validation = detail::evaluate_split(best, split.validation);
    return {std::move(best), report};
}

inline nlohmann::json report_to_json(const TrainReport& r) {
    return {{"train_loss", r.train_loss},
            {"val_loss", r.val_loss},
            {"learning_rate", r.lr},
            {"best_epoch", r.best_epoch},
            {"best_val_loss", r.best_val_loss},
            {"final", {{"train", {{"mae", r.final_train.mae}, {"mse", r.final_train.mse}}},
                       {"validation", {{"mae", r.final_validation.mae},
                                       {"mse", r.final_validation.mse}}}}}};
}

}  // namespace plt::nn
