#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <string>
#include <vector>

#include <fftw3.h>
#include <json.hpp>

#include "plt/common.hpp"
#include "plt/tissue.hpp"

namespace plt {

// Unipolar electrode. Positions and height are in grid units (node spacings),
// matching the trace's node index space. kappa stays 1: the scale drops out
// under peak normalization.
struct ElectrodeSpec {
    double row = 0.0;  // 2-D only
    double col = 0.0;  // position along the strand / sheet column axis
    double height = 10.0;
    double kappa = 1.0;

    void validate() const {
        if (!(height > 0)) throw config_error("electrode: height must be > 0");
        if (kappa != 1.0) throw config_error("electrode: kappa is fixed at 1");
    }
};

struct Electrogram {
    std::vector<double> samples;
    int sample_rate = 1000;
    ElectrodeSpec electrode;
    bool normalized = false;
};

namespace detail {

// phi(t) = -kappa * sum_x w_trap(x) * dV/dx(x,t) * Kx(x), with the kernel
// derivative Kx(x) = -(x - x') / ((x - x')^2 + h^2)^(3/2) evaluated
// analytically, central differences inside, one-sided at the ends. The sum is
// refactored into fixed per-node weights so each node's time series streams
// through once: phi(t) = sum_m alpha[m] * V[m][t].
inline std::vector<double> egm_weights_1d(int n, const ElectrodeSpec& e) {
    std::vector<double> alpha(n, 0.0);
    for (int x = 0; x < n; ++x) {
        const double d = double(x) - e.col;
        const double s = d * d + e.height * e.height;
        const double kx = -d / (s * std::sqrt(s));
        const double w = (x == 0 || x == n - 1) ? 0.5 : 1.0;
        const double c = -e.kappa * w * kx;
        if (x == 0) {
            alpha[1] += c;
            alpha[0] -= c;
        } else if (x == n - 1) {
            alpha[n - 1] += c;
            alpha[n - 2] -= c;
        } else {
            alpha[x + 1] += 0.5 * c;
            alpha[x - 1] -= 0.5 * c;
        }
    }
    return alpha;
}

// 2-D analog, gradient dot gradient with tensor trapezoid area weights.
inline std::vector<double> egm_weights_2d(int rows, int cols, const ElectrodeSpec& e) {
    std::vector<double> alpha(size_t(rows) * cols, 0.0);
    auto wt = [](int i, int n) { return (i == 0 || i == n - 1) ? 0.5 : 1.0; };
    auto at = [&](int r, int c) -> double& { return alpha[size_t(r) * cols + c]; };
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            const double dr = double(r) - e.row;
            const double dc = double(c) - e.col;
            const double s = dr * dr + dc * dc + e.height * e.height;
            const double den = s * std::sqrt(s);
            const double w = -e.kappa * wt(r, rows) * wt(c, cols);
            const double cr = w * (-dr / den);
            const double cc = w * (-dc / den);
            if (r == 0) {
                at(1, c) += cr;
                at(0, c) -= cr;
            } else if (r == rows - 1) {
                at(r, c) += cr;
                at(r - 1, c) -= cr;
            } else {
                at(r + 1, c) += 0.5 * cr;
                at(r - 1, c) -= 0.5 * cr;
            }
            if (c == 0) {
                at(r, 1) += cc;
                at(r, 0) -= cc;
            } else if (c == cols - 1) {
                at(r, c) += cc;
                at(r, c - 1) -= cc;
            } else {
                at(r, c + 1) += 0.5 * cc;
                at(r, c - 1) -= 0.5 * cc;
            }
        }
    }
    return alpha;
}

inline std::vector<double> weighted_node_sum(const VoltageTrace& tr,
                                             const std::vector<double>& alpha) {
    const int nt = tr.n_samples;
    std::vector<double> phi(nt, 0.0);
    double* __restrict out = phi.data();
    for (size_t m = 0; m < alpha.size(); ++m) {
        const double am = alpha[m];
        if (am == 0.0) continue;
        const float* __restrict row = tr.samples.data() + m * size_t(nt);
        for (int t = 0; t < nt; ++t) out[t] += am * double(row[t]);
    }
    return phi;
}

}  // namespace detail

inline Electrogram compute_egm_1d(const VoltageTrace& tr, const ElectrodeSpec& e) {
    if (tr.dims != 1) throw shape_error("compute_egm_1d: 1-D trace required");
    e.validate();
    Electrogram out;
    out.sample_rate = tr.sample_rate;
    out.electrode = e;
    out.samples = detail::weighted_node_sum(tr, detail::egm_weights_1d(tr.cols, e));
    return out;
}

inline Electrogram compute_egm_2d(const VoltageTrace& tr, const ElectrodeSpec& e) {
    if (tr.dims != 2) throw shape_error("compute_egm_2d: 2-D trace required");
    e.validate();
    Electrogram out;
    out.sample_rate = tr.sample_rate;
    out.electrode = e;
    out.samples = detail::weighted_node_sum(tr, detail::egm_weights_2d(tr.rows, tr.cols, e));
    return out;
}

[[nodiscard]] inline Electrogram normalize(Electrogram egm) {
    double peak = 0.0;
    for (double s : egm.samples) peak = std::max(peak, std::abs(s));
    if (peak > 0.0)
        for (double& s : egm.samples) s /= peak;
    egm.normalized = true;
    return egm;
}

namespace detail {

inline std::mutex& fftw_plan_mutex() {
    static std::mutex m;
    return m;
}

// Batched 2-D electrograms for electrodes on integer grid positions sharing
// one height. The kernel field is translation invariant, so the per-frame sum
// over nodes is a cross-correlation of the weighted gradient fields with the
// two kernel components, evaluated with zero-padded FFTs: one pass over the
// trace serves every electrode. Agrees with compute_egm_2d up to FFT
// round-off (~1e-12 relative).
class EgmBatch2d {
public:
    EgmBatch2d(int rows, int cols, double height, double kappa = 1.0)
        : nr_(rows), nc_(cols), pr_(2 * rows), pc_(2 * cols), h_(height), kappa_(kappa) {
        const size_t real_n = size_t(pr_) * pc_;
        const size_t cplx_n = size_t(pr_) * (pc_ / 2 + 1);
        buf_ = fftw_alloc_real(real_n);
        spec_ = fftw_alloc_complex(cplx_n);
        acc_ = fftw_alloc_complex(cplx_n);
        kr_hat_ = fftw_alloc_complex(cplx_n);
        kc_hat_ = fftw_alloc_complex(cplx_n);
        {
            std::lock_guard<std::mutex> lock(fftw_plan_mutex());
            fwd_ = fftw_plan_dft_r2c_2d(pr_, pc_, buf_, spec_, FFTW_ESTIMATE);
            inv_ = fftw_plan_dft_c2r_2d(pr_, pc_, acc_, buf_, FFTW_ESTIMATE);
        }
        fill_kernel_hat(true, kr_hat_);
        fill_kernel_hat(false, kc_hat_);
    }

    ~EgmBatch2d() {
        std::lock_guard<std::mutex> lock(fftw_plan_mutex());
        fftw_destroy_plan(fwd_);
        fftw_destroy_plan(inv_);
        fftw_free(buf_);
        fftw_free(spec_);
        fftw_free(acc_);
        fftw_free(kr_hat_);
        fftw_free(kc_hat_);
    }

    EgmBatch2d(const EgmBatch2d&) = delete;
    EgmBatch2d& operator=(const EgmBatch2d&) = delete;

    // frame: rows*cols node potentials at one time sample.
    // correlation(r, c) afterwards holds phi for an electrode at (r, c).
    void process_frame(const std::vector<double>& frame) {
        const size_t cplx_n = size_t(pr_) * (pc_ / 2 + 1);
        grad_fields(frame);
        load_padded(gr_);
        fftw_execute(fwd_);
        for (size_t i = 0; i < cplx_n; ++i) {
            acc_[i][0] = spec_[i][0] * kr_hat_[i][0] - spec_[i][1] * kr_hat_[i][1];
            acc_[i][1] = spec_[i][0] * kr_hat_[i][1] + spec_[i][1] * kr_hat_[i][0];
        }
        load_padded(gc_);
        fftw_execute(fwd_);
        for (size_t i = 0; i < cplx_n; ++i) {
            acc_[i][0] += spec_[i][0] * kc_hat_[i][0] - spec_[i][1] * kc_hat_[i][1];
            acc_[i][1] += spec_[i][0] * kc_hat_[i][1] + spec_[i][1] * kc_hat_[i][0];
        }
        fftw_execute(inv_);
    }

    double correlation(int r, int c) const {
        return buf_[size_t(r) * pc_ + c] / (double(pr_) * pc_);
    }

private:
    // Weighted gradient fields: g(m) = -kappa * w_area(m) * dV/daxis(m).
    void grad_fields(const std::vector<double>& v) {
        gr_.assign(size_t(nr_) * nc_, 0.0);
        gc_.assign(size_t(nr_) * nc_, 0.0);
        auto wt = [](int i, int n) { return (i == 0 || i == n - 1) ? 0.5 : 1.0; };
        for (int r = 0; r < nr_; ++r) {
            const double wr = wt(r, nr_);
            for (int c = 0; c < nc_; ++c) {
                const double w = -kappa_ * wr * wt(c, nc_);
                double dvr, dvc;
                if (r == 0)
                    dvr = v[size_t(1) * nc_ + c] - v[c];
                else if (r == nr_ - 1)
                    dvr = v[size_t(r) * nc_ + c] - v[size_t(r - 1) * nc_ + c];
                else
                    dvr = 0.5 * (v[size_t(r + 1) * nc_ + c] - v[size_t(r - 1) * nc_ + c]);
                if (c == 0)
                    dvc = v[size_t(r) * nc_ + 1] - v[size_t(r) * nc_];
                else if (c == nc_ - 1)
                    dvc = v[size_t(r) * nc_ + c] - v[size_t(r) * nc_ + c - 1];
                else
                    dvc = 0.5 * (v[size_t(r) * nc_ + c + 1] - v[size_t(r) * nc_ + c - 1]);
                gr_[size_t(r) * nc_ + c] = w * dvr;
                gc_[size_t(r) * nc_ + c] = w * dvc;
            }
        }
    }

    void load_padded(const std::vector<double>& g) {
        std::memset(buf_, 0, sizeof(double) * size_t(pr_) * pc_);
        for (int r = 0; r < nr_; ++r)
            std::memcpy(buf_ + size_t(r) * pc_, g.data() + size_t(r) * nc_,
                        sizeof(double) * nc_);
    }

    // FFT of the flipped kernel K(-d), wrapped circularly, so that the
    // circular convolution with the padded gradient yields the correlation
    // sum_m g[m] K[m - e] at every electrode offset e in [0, n).
    void fill_kernel_hat(bool row_component, fftw_complex* dst) {
        std::memset(buf_, 0, sizeof(double) * size_t(pr_) * pc_);
        for (int dr = -(nr_ - 1); dr <= nr_ - 1; ++dr) {
            for (int dc = -(nc_ - 1); dc <= nc_ - 1; ++dc) {
                const double s = double(dr) * dr + double(dc) * dc + h_ * h_;
                const double den = s * std::sqrt(s);
                const double k = row_component ? -double(dr) / den : -double(dc) / den;
                const int r = ((-dr) % pr_ + pr_) % pr_;
                const int c = ((-dc) % pc_ + pc_) % pc_;
                buf_[size_t(r) * pc_ + c] = k;
            }
        }
        fftw_execute(fwd_);
        std::memcpy(dst, spec_, sizeof(fftw_complex) * size_t(pr_) * (pc_ / 2 + 1));
    }

    int nr_, nc_, pr_, pc_;
    double h_, kappa_;
    std::vector<double> gr_, gc_;
    double* buf_;
    fftw_complex* spec_;
    fftw_complex* acc_;
    fftw_complex* kr_hat_;
    fftw_complex* kc_hat_;
    fftw_plan fwd_, inv_;
};

}  // namespace detail

// All electrodes must sit on integer grid coordinates and share one height.
inline std::vector<Electrogram> compute_egm_2d_batch(const VoltageTrace& tr,
                                                     const std::vector<ElectrodeSpec>& electrodes) {
    if (tr.dims != 2) throw shape_error("compute_egm_2d_batch: 2-D trace required");
    if (electrodes.empty()) return {};
    const double h = electrodes.front().height;
    for (const auto& e : electrodes) {
        e.validate();
        if (e.height != h)
            throw config_error("compute_egm_2d_batch: electrodes must share one height");
        if (e.row != std::floor(e.row) || e.col != std::floor(e.col) || e.row < 0 ||
            e.col < 0 || e.row >= tr.rows || e.col >= tr.cols)
            throw config_error("compute_egm_2d_batch: electrode positions must be integer grid nodes");
    }

    detail::EgmBatch2d batch(tr.rows, tr.cols, h, electrodes.front().kappa);
    std::vector<Electrogram> out(electrodes.size());
    for (size_t i = 0; i < electrodes.size(); ++i) {
        out[i].sample_rate = tr.sample_rate;
        out[i].electrode = electrodes[i];
        out[i].samples.assign(tr.n_samples, 0.0);
    }
    std::vector<double> frame(size_t(tr.rows) * tr.cols);
    const int nt = tr.n_samples;
    for (int t = 0; t < nt; ++t) {
        const float* s = tr.samples.data() + t;
        for (size_t m = 0; m < frame.size(); ++m) frame[m] = double(s[m * size_t(nt)]);
        batch.process_frame(frame);
        for (size_t i = 0; i < electrodes.size(); ++i)
            out[i].samples[t] = batch.correlation(int(electrodes[i].row), int(electrodes[i].col));
    }
    return out;
}

// CSV export: "t_ms,value" plus a metadata sidecar at <path>.json.
inline void save_egm_csv(const Electrogram& egm, const std::string& path,
                         const nlohmann::json& extra = nlohmann::json::object()) {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw io_error("cannot write " + path);
    os << "t_ms,value\n";
    char line[64];
    for (size_t i = 0; i < egm.samples.size(); ++i) {
        std::snprintf(line, sizeof line, "%.17g,%.17g\n", double(i) * 1000.0 / egm.sample_rate,
                      egm.samples[i]);
        os << line;
    }
    if (!os) throw io_error("write failed for " + path);
    os.close();

    nlohmann::json meta = extra;
    meta["electrode"] = {{"row", egm.electrode.row},
                         {"col", egm.electrode.col},
                         {"height", egm.electrode.height},
                         {"kappa", egm.electrode.kappa}};
    meta["normalized"] = egm.normalized;
    meta["sample_rate"] = egm.sample_rate;
    std::ofstream ms(path + ".json", std::ios::trunc);
    if (!ms) throw io_error("cannot write " + path + ".json");
    ms << meta.dump(2) << "\n";
}

inline std::vector<double> load_series_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw io_error("cannot open " + path);
    std::string line;
    if (!std::getline(is, line)) throw parse_error(path + ": empty file", 0);
    std::size_t off = line.size() + 1;
    if (line != "t_ms,value") throw parse_error(path + ": expected header t_ms,value", 0);
    std::vector<double> out;
    while (std::getline(is, line)) {
        if (line.empty()) {
            off += 1;
            continue;
        }
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw parse_error(path + ": missing comma", off);
        try {
            out.push_back(std::stod(line.substr(comma + 1)));
        } catch (const std::exception&) {
            throw parse_error(path + ": bad value field", off + comma + 1);
        }
        off += line.size() + 1;
    }
    return out;
}

}  // namespace plt
