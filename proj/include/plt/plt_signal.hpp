#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <mutex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <fftw3.h>
#include <json.hpp>

#include "plt/common.hpp"
#include "plt/electrogram.hpp"

namespace plt {

// Sawtooth phase-like signal in [0, 1]: 1 at each depolarization break,
// affine decay toward 0 until the next break.
struct PLTSignal {
    std::vector<double> samples;
    int sample_rate = 1000;
    std::vector<int> break_indices;
};

// Strictly upward threshold crossings (v[i-1] < thr <= v[i]) with a
// refractory lockout after each detection to suppress double counting.
template <class T>
std::vector<int> detect_upstrokes(std::span<const T> v, double threshold, int sample_rate = 1000,
                                  double lockout_ms = 50.0) {
    std::vector<int> breaks;
    const double lockout = lockout_ms * sample_rate / 1000.0;
    for (size_t i = 1; i < v.size(); ++i) {
        if (!(double(v[i - 1]) < threshold && double(v[i]) >= threshold)) continue;
        if (!breaks.empty() && double(int(i) - breaks.back()) < lockout) continue;
        breaks.push_back(int(i));
    }
    return breaks;
}

template <class T>
std::vector<int> detect_upstrokes(const std::vector<T>& v, double threshold,
                                  int sample_rate = 1000, double lockout_ms = 50.0) {
    return detect_upstrokes(std::span<const T>(v.data(), v.size()), threshold, sample_rate,
                            lockout_ms);
}

// Zero before the first break; 1 at a break; affine decay reaching 0 at the
// next break. Past the last break the previous inter-break interval keeps the
// slope (a 1000 ms interval if there is only one break), clamped at 0.
inline PLTSignal build_plt_target(const std::vector<int>& breaks, int length,
                                  int sample_rate = 1000, double tail_default_ms = 1000.0) {
    if (length <= 0) throw config_error("build_plt_target: length must be > 0");
    for (size_t i = 0; i < breaks.size(); ++i) {
        if (breaks[i] < 0 || breaks[i] >= length)
            throw config_error("build_plt_target: break index out of range");
        if (i > 0 && breaks[i] <= breaks[i - 1])
            throw config_error("build_plt_target: breaks must be sorted and unique");
    }
    PLTSignal out;
    out.sample_rate = sample_rate;
    out.break_indices = breaks;
    out.samples.assign(size_t(length), 0.0);
    for (size_t bi = 0; bi < breaks.size(); ++bi) {
        const int b = breaks[bi];
        if (bi + 1 < breaks.size()) {
            const int len = breaks[bi + 1] - b;
            for (int m = 0; m < len; ++m) out.samples[size_t(b) + m] = 1.0 - double(m) / len;
        } else {
            const double tail = bi > 0 ? double(b - breaks[bi - 1])
                                       : tail_default_ms * sample_rate / 1000.0;
            for (int m = 0; b + m < length; ++m)
                out.samples[size_t(b) + m] = std::max(0.0, 1.0 - double(m) / tail);
        }
    }
    return out;
}

struct HilbertPhase {
    std::vector<double> phase;  // in [0, 1)
    bool degenerate = false;
};

// Instantaneous phase of the analytic signal: mean removed, negative
// frequency bins zeroed, positive bins doubled, DC and Nyquist kept single.
inline HilbertPhase hilbert_phase(std::span<const double> x) {
    const int n = int(x.size());
    if (n < 4) throw config_error("hilbert_phase: need at least 4 samples");

    double mean = 0.0;
    for (double s : x) mean += s;
    mean /= n;

    HilbertPhase out;
    double spread = 0.0;
    for (double s : x) spread = std::max(spread, std::abs(s - x[0]));
    if (spread == 0.0) {
        out.phase.assign(size_t(n), 0.0);
        out.degenerate = true;
        return out;
    }

    fftw_complex* buf = fftw_alloc_complex(size_t(n));
    fftw_plan fwd, inv;
    {
        std::lock_guard<std::mutex> lock(detail::fftw_plan_mutex());
        fwd = fftw_plan_dft_1d(n, buf, buf, FFTW_FORWARD, FFTW_ESTIMATE);
        inv = fftw_plan_dft_1d(n, buf, buf, FFTW_BACKWARD, FFTW_ESTIMATE);
    }
    for (int i = 0; i < n; ++i) {
        buf[i][0] = x[i] - mean;
        buf[i][1] = 0.0;
    }
    fftw_execute(fwd);
    const int half = n / 2;
    for (int k = 1; k < half; ++k) {
        buf[k][0] *= 2.0;
        buf[k][1] *= 2.0;
    }
    for (int k = half + 1; k < n; ++k) buf[k][0] = buf[k][1] = 0.0;
    if (n % 2 != 0 && half >= 1) {
        // odd length: bin half is still a positive frequency
        buf[half][0] *= 2.0;
        buf[half][1] *= 2.0;
    }
    fftw_execute(inv);

    double zmax = 0.0;
    for (int i = 0; i < n; ++i)
        zmax = std::max(zmax, std::abs(buf[i][0]) + std::abs(buf[i][1]));
    if (zmax == 0.0) {
        out.phase.assign(size_t(n), 0.0);
        out.degenerate = true;
    } else {
        out.phase.resize(size_t(n));
        for (int i = 0; i < n; ++i) {
            const double re = buf[i][0] / n, im = buf[i][1] / n;
            double ph = std::atan2(im, re) / (2.0 * std::numbers::pi);
            if (ph < 0.0) ph += 1.0;
            if (ph >= 1.0) ph = 0.0;
            out.phase[i] = ph;
        }
    }
    {
        std::lock_guard<std::mutex> lock(detail::fftw_plan_mutex());
        fftw_destroy_plan(fwd);
        fftw_destroy_plan(inv);
    }
    fftw_free(buf);
    return out;
}

inline HilbertPhase hilbert_phase(const Electrogram& egm) {
    return hilbert_phase(std::span<const double>(egm.samples.data(), egm.samples.size()));
}

template <class A, class B>
double mae(std::span<const A> a, std::span<const B> b) {
    if (a.size() != b.size()) throw shape_error("mae: length mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += std::abs(double(a[i]) - double(b[i]));
    return a.empty() ? 0.0 : acc / double(a.size());
}

template <class A, class B>
double mse(std::span<const A> a, std::span<const B> b) {
    if (a.size() != b.size()) throw shape_error("mse: length mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = double(a[i]) - double(b[i]);
        acc += d * d;
    }
    return a.empty() ? 0.0 : acc / double(a.size());
}

template <class A, class B>
double mae(const std::vector<A>& a, const std::vector<B>& b) {
    return mae(std::span<const A>(a.data(), a.size()), std::span<const B>(b.data(), b.size()));
}

template <class A, class B>
double mse(const std::vector<A>& a, const std::vector<B>& b) {
    return mse(std::span<const A>(a.data(), a.size()), std::span<const B>(b.data(), b.size()));
}

struct UpstrokeMatchReport {
    int true_count = 0;
    int detected_count = 0;
    int matched_count = 0;
    double error_rate = 0.0;
    double tolerance_ms = 20.0;
};

// Break detections on a predicted signal: a rise of more than 0.5 completing
// within 5 samples, with a 50 ms lockout.
template <class T>
std::vector<int> detect_predicted_breaks(std::span<const T> pred, int sample_rate = 1000) {
    std::vector<int> det;
    const double lockout = 50.0 * sample_rate / 1000.0;
    for (size_t i = 1; i < pred.size(); ++i) {
        bool rise = false;
        for (size_t d = 1; d <= 5 && d <= i; ++d) {
            if (double(pred[i]) - double(pred[i - d]) > 0.5) {
                rise = true;
                break;
            }
        }
        if (!rise) continue;
        if (!det.empty() && double(int(i) - det.back()) < lockout) continue;
        det.push_back(int(i));
    }
    return det;
}

// Greedy nearest matching of detected breaks against the truth.
inline UpstrokeMatchReport match_upstrokes(const PLTSignal& predicted,
                                           const std::vector<int>& true_breaks,
                                           double tolerance_ms = 20.0) {
    UpstrokeMatchReport rep;
    rep.tolerance_ms = tolerance_ms;
    const auto detected = detect_predicted_breaks(
        std::span<const double>(predicted.samples.data(), predicted.samples.size()),
        predicted.sample_rate);
    rep.true_count = int(true_breaks.size());
    rep.detected_count = int(detected.size());

    const double tol = tolerance_ms * predicted.sample_rate / 1000.0;
    struct Pair {
        double dist;
        int ti, di;
    };
    std::vector<Pair> pairs;
    for (int ti = 0; ti < rep.true_count; ++ti)
        for (int di = 0; di < rep.detected_count; ++di) {
            const double dist = std::abs(double(true_breaks[ti] - detected[di]));
            if (dist <= tol) pairs.push_back({dist, ti, di});
        }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
        if (a.dist != b.dist) return a.dist < b.dist;
        if (a.ti != b.ti) return a.ti < b.ti;
        return a.di < b.di;
    });
    std::vector<char> tu(size_t(rep.true_count), 0), du(size_t(rep.detected_count), 0);
    for (const auto& pr : pairs) {
        if (tu[pr.ti] || du[pr.di]) continue;
        tu[pr.ti] = du[pr.di] = 1;
        ++rep.matched_count;
    }
    if (rep.true_count > 0)
        rep.error_rate =
            double(rep.true_count + rep.detected_count - 2 * rep.matched_count) / rep.true_count;
    else
        rep.error_rate = rep.detected_count > 0 ? 1.0 : 0.0;
    return rep;
}

// Same CSV convention as electrograms; break indices go to the sidecar.
inline void save_plt_csv(const PLTSignal& sig, const std::string& path,
                         const nlohmann::json& extra = nlohmann::json::object()) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw io_error("cannot write " + path);
    os << "t_ms,value\n";
    char line[64];
    for (size_t i = 0; i < sig.samples.size(); ++i) {
        std::snprintf(line, sizeof line, "%.17g,%.17g\n", double(i) * 1000.0 / sig.sample_rate,
                      sig.samples[i]);
        os << line;
    }
    if (!os) throw io_error("write failed for " + path);
    os.close();

    nlohmann::json meta = extra;
    meta["sample_rate"] = sig.sample_rate;
    meta["break_indices"] = sig.break_indices;
    std::ofstream ms(path + ".json", std::ios::trunc);
    if (!ms) throw io_error("cannot write " + path + ".json");
    ms << meta.dump(2) << "\n";
}

}  // namespace plt
