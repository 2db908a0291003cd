#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "plt/cell.hpp"
#include "plt/common.hpp"
#include "plt/parallel.hpp"

namespace plt {

struct TissueGeometry {
    int dims = 1;
    int nodes = 1024;  // per axis
    double dx = 1.0;   // grid units
    double diffusion = 1.0;  // grid-units^2 / ms

    int n_nodes() const { return dims == 1 ? nodes : nodes * nodes; }

    // Explicit-Euler stability bound for the diffusion term.
    double stability_dt_ms() const { return dx * dx / (2.0 * dims * diffusion); }

    void validate() const {
        std::vector<std::string> bad;
        if (dims != 1 && dims != 2) bad.push_back("geometry: dims must be 1 or 2");
        if (nodes < 16) bad.push_back("geometry: need at least 16 nodes per axis");
        if (!(dx > 0)) bad.push_back("geometry: dx must be > 0");
        if (!(diffusion > 0)) bad.push_back("geometry: diffusion must be > 0");
        if (!bad.empty()) throw config_error(std::move(bad));
    }
};

// Internal step count per millisecond of simulated time. The reaction cap is
// 0.02 model time units; the diffusion cap carries a 0.8 safety factor
// because at the exact bound the fastest spatial mode sits at amplification
// -1, which is not safe over the ~1e8 steps of high-diffusion runs.
inline int steps_per_ms(const TissueGeometry& g) {
    const double dt_react = 0.02 * kMsPerTimeUnit;
    const double dt_diff = 0.8 * g.stability_dt_ms();
    const double dt = std::min(dt_react, dt_diff);
    if (!(dt > 0) || !std::isfinite(dt)) throw config_error("geometry: no valid internal dt");
    return int(std::ceil(1.0 / dt));
}

inline double internal_dt_ms(const TissueGeometry& g) { return 1.0 / steps_per_ms(g); }

enum class StimKind { Periodic, S1S2 };

// Axis-aligned node box [row_lo,row_hi) x [col_lo,col_hi). 1-D strands use
// the column range with rows [0,1).
struct StimRegion {
    int row_lo = 0, row_hi = 1;
    int col_lo = 0, col_hi = 0;

    static StimRegion range1d(int lo, int hi) { return {0, 1, lo, hi}; }
    bool empty() const { return row_lo >= row_hi || col_lo >= col_hi; }
};

struct StimulusProtocol {
    StimKind kind = StimKind::Periodic;
    double period_ms = 1000.0;   // Periodic: pacing period (houses FR)
    double s2_delay_ms = 0.0;    // S1S2: premature-beat delay
    StimRegion region;           // Periodic region, or S1
    StimRegion s2_region;        // S1S2 only
    double amplitude = 4.0;      // dimensionless current
    double duration_ms = 10.0;

    // Pacing train over nodes [0, 128).
    static StimulusProtocol periodic_1d(double period_ms, double amplitude = 4.0,
                                        double duration_ms = 10.0) {
        StimulusProtocol s;
        s.kind = StimKind::Periodic;
        s.period_ms = period_ms;
        s.region = StimRegion::range1d(0, 128);
        s.amplitude = amplitude;
        s.duration_ms = duration_ms;
        return s;
    }

    // One pulse at t = 0 (period beyond any run length).
    static StimulusProtocol single_1d(double amplitude = 4.0, double duration_ms = 10.0) {
        auto s = periodic_1d(1.0e12, amplitude, duration_ms);
        return s;
    }

    // Pacing pulse sized to the medium: a gentle pulse suffices in slow
    // tissue where the injected charge stays put (and a strong one would
    // overshoot u = 1.2 locally), while fast tissue spreads the charge below
    // threshold before the wave can nucleate and needs the strong pulse.
    // The cut sits between the calibrated cv = 40 and cv = 80 diffusivities.
    static StimulusProtocol paced_1d(double period_ms, double diffusion) {
        const bool fast = diffusion >= 10500.0;
        return periodic_1d(period_ms, fast ? 4.0 : 2.0, fast ? 10.0 : 5.0);
    }

    // S1 strip on the left edge, premature S2 over the lower-left quadrant.
    static StimulusProtocol s1s2_2d(double s2_delay_ms, int nodes, double amplitude = 4.0,
                                    double duration_ms = 10.0) {
        StimulusProtocol s;
        s.kind = StimKind::S1S2;
        s.s2_delay_ms = s2_delay_ms;
        s.region = {0, nodes, 0, std::min(8, nodes)};
        s.s2_region = {nodes / 2, nodes, 0, nodes / 2};
        s.amplitude = amplitude;
        s.duration_ms = duration_ms;
        return s;
    }

    void validate(const TissueGeometry& g) const {
        std::vector<std::string> bad;
        if (!(amplitude >= 0)) bad.push_back("stimulus: amplitude must be >= 0");
        if (!(duration_ms > 0)) bad.push_back("stimulus: duration must be > 0");
        if (kind == StimKind::Periodic && !(period_ms > duration_ms))
            bad.push_back("stimulus: period must exceed duration");
        if (kind == StimKind::S1S2 && !(s2_delay_ms >= 0))
            bad.push_back("stimulus: s2 delay must be >= 0");
        const int rows = g.dims == 1 ? 1 : g.nodes;
        auto check = [&](const StimRegion& r, const char* name) {
            if (r.empty() || r.row_lo < 0 || r.row_hi > rows || r.col_lo < 0 || r.col_hi > g.nodes)
                bad.push_back(std::string("stimulus: ") + name + " region outside tissue");
        };
        check(region, "primary");
        if (kind == StimKind::S1S2) check(s2_region, "s2");
        if (!bad.empty()) throw config_error(std::move(bad));
    }
};

// Potential of every node over time, node-major: samples[node * n_samples + t].
struct VoltageTrace {
    int dims = 1;
    int rows = 1;
    int cols = 0;
    int sample_rate = 1000;  // Hz
    int n_samples = 0;
    std::vector<float> samples;

    int n_nodes() const { return rows * cols; }
    double duration_ms() const { return double(n_samples) * 1000.0 / sample_rate; }
    float at(int node, int t) const { return samples[size_t(node) * n_samples + t]; }
    std::span<const float> node_series(int node) const {
        return {samples.data() + size_t(node) * n_samples, size_t(n_samples)};
    }
};

namespace detail {

// Per-step stimulus: at most two active (region, amplitude) windows. A paced
// beat after the first is delivered only when a full pacing cycle of the run
// remains past its onset, so every recorded beat is followed by one complete
// cycle; the initial beat at t = 0 always fires.
inline double stim_level(const StimulusProtocol& s, double t, bool s2, double run_ms) {
    if (!s2) {
        if (s.kind == StimKind::Periodic) {
            const double k = std::floor(t / s.period_ms);
            const double onset = k * s.period_ms;
            if (k > 0 && onset + s.period_ms > run_ms) return 0.0;
            return t - onset < s.duration_ms ? s.amplitude : 0.0;
        }
        return t < s.duration_ms ? s.amplitude : 0.0;
    }
    if (s.kind != StimKind::S1S2) return 0.0;
    return (t >= s.s2_delay_ms && t < s.s2_delay_ms + s.duration_ms) ? s.amplitude : 0.0;
}

class StrandSim {
public:
    StrandSim(const TissueGeometry& g, const StimulusProtocol& s, const CellParams& p,
              double run_ms)
        : geom_(g), stim_(s), p_(p), run_ms_(run_ms), n_(g.nodes), spm_(steps_per_ms(g)),
          dt_(1.0 / spm_), u_(n_, 0.0), v_(n_, 0.0), un_(n_, 0.0), vn_(n_, 0.0) {}

    void step_once() {
        step(double(ms_) + j_ * dt_);
        if (++j_ == spm_) {
            j_ = 0;
            ++ms_;
        }
    }

    void advance_ms() {
        for (int j = 0; j < spm_; ++j) step_once();
    }

    double time_ms() const { return double(ms_) + j_ * dt_; }
    int64_t whole_ms() const { return ms_; }
    int steps_per_ms_count() const { return spm_; }
    const std::vector<double>& u() const { return u_; }
    const std::vector<double>& v() const { return v_; }

    void set_state(std::vector<double> u, std::vector<double> v) {
        u_ = std::move(u);
        v_ = std::move(v);
    }

private:
    void step(double t) {
        const double* __restrict up = u_.data();
        const double* __restrict vp = v_.data();
        double* __restrict un = un_.data();
        double* __restrict vn = vn_.data();
        const double k = p_.k, a = p_.a, eps0 = p_.eps0, mu1 = p_.mu1, mu2 = p_.mu2;
        const double dcoef = geom_.diffusion * dt_ / (geom_.dx * geom_.dx);
        const double sr = dt_ / kMsPerTimeUnit;
        const int n = n_;
        for (int i = 1; i < n - 1; ++i) {
            const double ui = up[i], vi = vp[i];
            const double react = -k * ui * (ui - a) * (ui - 1.0) - ui * vi;
            const double eps = eps0 + mu1 * vi / (ui + mu2);
            const double dv = eps * (-vi - k * ui * (ui - a - 1.0));
            un[i] = ui + dcoef * (up[i - 1] - 2.0 * ui + up[i + 1]) + sr * react;
            vn[i] = vi + sr * dv;
        }
        edge(0, 1, dcoef, sr);
        edge(n - 1, n - 2, dcoef, sr);
        apply_stim(stim_level(stim_, t, false, run_ms_), stim_.region, sr, un);
        if (stim_.kind == StimKind::S1S2)
            apply_stim(stim_level(stim_, t, true, run_ms_), stim_.s2_region, sr, un);
        u_.swap(un_);
        v_.swap(vn_);
    }

    // No-flux boundary in conservative form: the missing neighbor carries no
    // flux, so only the interior neighbor contributes.
    void edge(int i, int nb, double dcoef, double sr) {
        const double ui = u_[i], vi = v_[i];
        const double react = -p_.k * ui * (ui - p_.a) * (ui - 1.0) - ui * vi;
        const double eps = p_.eps0 + p_.mu1 * vi / (ui + p_.mu2);
        const double dv = eps * (-vi - p_.k * ui * (ui - p_.a - 1.0));
        un_[i] = ui + dcoef * (u_[nb] - ui) + sr * react;
        vn_[i] = vi + sr * dv;
    }

    void apply_stim(double amp, const StimRegion& r, double sr, double* un) {
        if (amp == 0.0) return;
        const double add = sr * amp;
        for (int i = r.col_lo; i < r.col_hi; ++i) un[i] += add;
    }

    TissueGeometry geom_;
    StimulusProtocol stim_;
    CellParams p_;
    double run_ms_;
    int n_;
    int spm_;
    double dt_;
    int64_t ms_ = 0;
    int j_ = 0;
    std::vector<double> u_, v_, un_, vn_;
};

class SheetSim {
public:
    SheetSim(const TissueGeometry& g, const StimulusProtocol& s, const CellParams& p,
             double run_ms)
        : geom_(g), stim_(s), p_(p), run_ms_(run_ms), n_(g.nodes), spm_(steps_per_ms(g)),
          dt_(1.0 / spm_), u_(size_t(n_) * n_, 0.0), v_(size_t(n_) * n_, 0.0), un_(u_), vn_(v_) {}

    void advance_ms() {
        for (int j = 0; j < spm_; ++j) step(double(ms_) + j * dt_);
        ++ms_;
    }

    int64_t whole_ms() const { return ms_; }
    const std::vector<double>& u() const { return u_; }
    const std::vector<double>& v() const { return v_; }

    void set_state(std::vector<double> u, std::vector<double> v) {
        u_ = std::move(u);
        v_ = std::move(v);
    }

private:
    void step(double t) {
        const double k = p_.k, a = p_.a, eps0 = p_.eps0, mu1 = p_.mu1, mu2 = p_.mu2;
        const double dcoef = geom_.diffusion * dt_ / (geom_.dx * geom_.dx);
        const double sr = dt_ / kMsPerTimeUnit;
        const int n = n_;
        const double* __restrict up = u_.data();
        const double* __restrict vp = v_.data();
        double* __restrict un = un_.data();
        double* __restrict vn = vn_.data();
        parallel_for(n, [&](int64_t r) {
            // Conservative no-flux boundaries: a missing neighbor is clamped
            // to the center node, so it contributes nothing to the Laplacian.
            const double* um = up + size_t(r == 0 ? 0 : r - 1) * n;
            const double* uc = up + size_t(r) * n;
            const double* upl = up + size_t(r == n - 1 ? n - 1 : r + 1) * n;
            const double* vc = vp + size_t(r) * n;
            double* ur = un + size_t(r) * n;
            double* vr = vn + size_t(r) * n;
            for (int c = 1; c < n - 1; ++c) {
                const double ui = uc[c], vi = vc[c];
                const double react = -k * ui * (ui - a) * (ui - 1.0) - ui * vi;
                const double eps = eps0 + mu1 * vi / (ui + mu2);
                const double dv = eps * (-vi - k * ui * (ui - a - 1.0));
                const double lap = um[c] + upl[c] + uc[c - 1] + uc[c + 1] - 4.0 * ui;
                ur[c] = ui + dcoef * lap + sr * react;
                vr[c] = vi + sr * dv;
            }
            for (int c : {0, n - 1}) {
                const int cm = c == 0 ? 1 : n - 2;
                const double ui = uc[c], vi = vc[c];
                const double react = -k * ui * (ui - a) * (ui - 1.0) - ui * vi;
                const double eps = eps0 + mu1 * vi / (ui + mu2);
                const double dv = eps * (-vi - k * ui * (ui - a - 1.0));
                const double lap = um[c] + upl[c] + uc[cm] + ui - 4.0 * ui;
                ur[c] = ui + dcoef * lap + sr * react;
                vr[c] = vi + sr * dv;
            }
        });
        apply_stim(stim_level(stim_, t, false, run_ms_), stim_.region, sr);
        if (stim_.kind == StimKind::S1S2)
            apply_stim(stim_level(stim_, t, true, run_ms_), stim_.s2_region, sr);
        u_.swap(un_);
        v_.swap(vn_);
    }

    void apply_stim(double amp, const StimRegion& reg, double sr) {
        if (amp == 0.0) return;
        const double add = sr * amp;
        for (int r = reg.row_lo; r < reg.row_hi; ++r) {
            double* row = un_.data() + size_t(r) * n_;
            for (int c = reg.col_lo; c < reg.col_hi; ++c) row[c] += add;
        }
    }

    TissueGeometry geom_;
    StimulusProtocol stim_;
    CellParams p_;
    double run_ms_;
    int n_;
    int spm_;
    double dt_;
    int64_t ms_ = 0;
    std::vector<double> u_, v_, un_, vn_;
};

inline void check_sample_health(const std::vector<double>& u, double t_ms) {
    for (double x : u)
        if (!std::isfinite(x) || std::abs(x) > 100.0) throw sim_diverged_error(t_ms);
}

}  // namespace detail

// Explicit finite-difference monodomain integration with no-flux boundaries,
// sampled at 1000 Hz. duration_ms must be a whole number of milliseconds.
inline VoltageTrace run_simulation(const TissueGeometry& g, const StimulusProtocol& stim,
                                   const CellParams& p, double duration_ms) {
    g.validate();
    p.validate();
    stim.validate(g);
    if (!(duration_ms > 0) || duration_ms != std::floor(duration_ms))
        throw config_error("run_simulation: duration must be a positive whole number of ms");

    VoltageTrace tr;
    tr.dims = g.dims;
    tr.rows = g.dims == 1 ? 1 : g.nodes;
    tr.cols = g.nodes;
    tr.sample_rate = 1000;
    tr.n_samples = int(duration_ms);
    tr.samples.assign(size_t(tr.n_nodes()) * tr.n_samples, 0.0f);

    auto record = [&tr](const std::vector<double>& u, int t) {
        float* s = tr.samples.data();
        const int nt = tr.n_samples;
        for (size_t node = 0; node < u.size(); ++node) s[node * nt + t] = float(u[node]);
    };

    if (g.dims == 1) {
        detail::StrandSim sim(g, stim, p, duration_ms);
        for (int t = 0; t < tr.n_samples; ++t) {
            detail::check_sample_health(sim.u(), double(t));
            record(sim.u(), t);
            if (t + 1 < tr.n_samples) sim.advance_ms();
        }
    } else {
        detail::SheetSim sim(g, stim, p, duration_ms);
        for (int t = 0; t < tr.n_samples; ++t) {
            detail::check_sample_health(sim.u(), double(t));
            record(sim.u(), t);
            if (t + 1 < tr.n_samples) sim.advance_ms();
        }
    }
    return tr;
}

// Conduction velocity of a single left-initiated wave, from interpolated
// 0.5-crossing times at the quarter and three-quarter nodes.
inline double measure_cv(const TissueGeometry& g, const CellParams& p) {
    g.validate();
    p.validate();
    if (g.dims != 1) throw config_error("measure_cv: 1-D geometry required");
    const auto stim = StimulusProtocol::single_1d();
    const double t_max = 2000.0;
    detail::StrandSim sim(g, stim, p, t_max);
    const int p1 = g.nodes / 4, p2 = 3 * g.nodes / 4;
    double t1 = -1.0, t2 = -1.0;
    double prev1 = sim.u()[p1], prev2 = sim.u()[p2];
    while (t2 < 0 && sim.time_ms() < t_max) {
        const double tb = sim.time_ms();
        sim.step_once();
        const double ta = sim.time_ms();
        const double c1 = sim.u()[p1], c2 = sim.u()[p2];
        if (t1 < 0 && prev1 < 0.5 && c1 >= 0.5) t1 = tb + (ta - tb) * (0.5 - prev1) / (c1 - prev1);
        if (t2 < 0 && prev2 < 0.5 && c2 >= 0.5) t2 = tb + (ta - tb) * (0.5 - prev2) / (c2 - prev2);
        prev1 = c1;
        prev2 = c2;
    }
    if (t1 < 0 || t2 < 0)
        throw no_propagation_error("measure_cv: wave did not reach both probe nodes");
    return (p2 - p1) * g.dx / (t2 - t1);
}

// Feasible target range, established by a diffusion scan: at the bracket
// floor D = 0.8 the wave crawls at ~0.68 grid-units/ms (true conduction
// block sits near D = 0.01), so targets below 1 are unreachable within the
// bracket; the ceiling is a runtime budget, not a physical limit.
inline constexpr double kMinCalibratedCv = 1.0;
inline constexpr double kMaxCalibratedCv = 150.0;

// Geometric bisection of D until measure_cv lands within 2% of the target.
inline double calibrate_diffusion(double target_cv, const CellParams& p = {}, int nodes = 1024) {
    if (!(target_cv >= kMinCalibratedCv && target_cv <= kMaxCalibratedCv))
        throw calibration_error(
            "calibrate_diffusion: target " + std::to_string(target_cv) +
            " grid-units/ms outside achievable range [" + std::to_string(kMinCalibratedCv) +
            ", " + std::to_string(kMaxCalibratedCv) + "]");
    double d_lo = 0.8, d_hi = 2.0e5;
    for (int it = 0; it < 80; ++it) {
        const double d = std::sqrt(d_lo * d_hi);
        TissueGeometry g;
        g.dims = 1;
        g.nodes = nodes;
        g.diffusion = d;
        double cv;
        try {
            cv = measure_cv(g, p);
        } catch (const no_propagation_error&) {
            d_lo = d;
            continue;
        }
        if (std::abs(cv - target_cv) <= 0.02 * target_cv) return d;
        (cv < target_cv ? d_lo : d_hi) = d;
        if (d_hi / d_lo < 1.0 + 1e-12) break;
    }
    throw calibration_error("calibrate_diffusion: bisection failed to converge for target " +
                            std::to_string(target_cv));
}

}  // namespace plt
