#pragma once

#include <cmath>
#include <utility>

#include "plt/common.hpp"

namespace plt {

// Two-variable excitable cell: u is the dimensionless membrane potential
// (rest 0, peak ~1), v the recovery variable.
//
//   du/dt = -k u (u - a)(u - 1) - u v + i_stim
//   dv/dt = (eps0 + mu1 v / (u + mu2)) (-v - k u (u - a - 1))
//
// with t in model time units; one model time unit is 12.9 ms, which puts the
// action potential duration near 300 ms.
inline constexpr double kMsPerTimeUnit = 12.9;

struct CellParams {
    double k = 8.0;
    double a = 0.15;
    double eps0 = 0.002;
    double mu1 = 0.2;
    double mu2 = 0.3;

    void validate() const {
        std::vector<std::string> bad;
        if (!(k >= 0)) bad.push_back("cell: k must be >= 0");
        if (!(a > 0 && a < 1)) bad.push_back("cell: a must be in (0, 1)");
        if (!(eps0 >= 0)) bad.push_back("cell: eps0 must be >= 0");
        if (!(mu1 >= 0)) bad.push_back("cell: mu1 must be >= 0");
        if (!(mu2 > 0)) bad.push_back("cell: mu2 must be > 0");
        if (!bad.empty()) throw config_error(std::move(bad));
    }
};

struct CellDerivs {
    double du;  // per model time unit
    double dv;
};

inline CellDerivs cell_rhs(double u, double v, double i_stim, const CellParams& p) {
    const double du = -p.k * u * (u - p.a) * (u - 1.0) - u * v + i_stim;
    const double eps = p.eps0 + p.mu1 * v / (u + p.mu2);
    const double dv = eps * (-v - p.k * u * (u - p.a - 1.0));
    return {du, dv};
}

// One forward-Euler step of the reaction terms alone; dt is in ms.
inline std::pair<double, double> step_cell(double u, double v, double i_stim, double dt_ms,
                                           const CellParams& p) {
    if (!(dt_ms > 0)) throw config_error("step_cell: dt must be > 0");
    const auto d = cell_rhs(u, v, i_stim, p);
    const double s = dt_ms / kMsPerTimeUnit;
    const double un = u + s * d.du;
    const double vn = v + s * d.dv;
    if (!std::isfinite(un) || !std::isfinite(vn)) throw sim_diverged_error(dt_ms);
    return {un, vn};
}

}  // namespace plt
