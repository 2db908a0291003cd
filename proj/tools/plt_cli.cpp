#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "plt/dataset.hpp"
#include "plt/nn/checkpoint.hpp"
#include "plt/nn/train.hpp"
#include "plt/phase_map.hpp"

using nlohmann::json;

namespace {

double now_s() {
    using clock = std::chrono::steady_clock;
    return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

json load_config(const std::string& path) {
    if (path.empty()) return json::object();
    std::ifstream is(path);
    if (!is) throw plt::io_error("cannot open config " + path);
    try {
        return json::parse(is);
    } catch (const json::exception& ex) {
        throw plt::parse_error(std::string("bad config JSON: ") + ex.what(), 0);
    }
}

// Rejects unknown keys at every nesting level, collecting all violations.
void check_keys(const json& j, const json& allowed, const std::string& path,
                std::vector<std::string>& bad) {
    if (!j.is_object()) {
        bad.push_back("config node '" + (path.empty() ? "<root>" : path) + "' must be an object");
        return;
    }
    for (const auto& [key, value] : j.items()) {
        const std::string full = path.empty() ? key : path + "." + key;
        if (!allowed.contains(key)) {
            bad.push_back("unknown config key '" + full + "'");
        } else if (allowed[key].is_object()) {
            check_keys(value, allowed[key], full, bad);
        }
    }
}

void validate_config(const json& j, const json& allowed) {
    std::vector<std::string> bad;
    check_keys(j, allowed, "", bad);
    if (!bad.empty()) throw plt::config_error(bad);
}

json overrides_json(const std::vector<std::string>& overrides) {
    json arr = json::array();
    for (const auto& o : overrides) arr.push_back(o);
    return arr;
}

struct SimulateArgs {
    std::string config, out;
    double duration = -1, cv = -1, period = -1;
    bool duration_set = false, cv_set = false, period_set = false;
};

int run_simulate(const SimulateArgs& a) {
    json cfg = load_config(a.config);
    validate_config(cfg, json{{"geometry",
                               {{"dims", true},
                                {"nodes", true},
                                {"dx", true},
                                {"diffusion", true},
                                {"cv", true}}},
                              {"stimulus",
                               {{"kind", true},
                                {"period_ms", true},
                                {"s2_delay_ms", true},
                                {"amplitude", true},
                                {"duration_ms", true}}},
                              {"duration_ms", true},
                              {"seed", true}});
    std::vector<std::string> overrides;

    json gj = cfg.value("geometry", json::object());
    plt::TissueGeometry g;
    g.dims = gj.value("dims", 1);
    g.nodes = gj.value("nodes", g.dims == 1 ? 1024 : 256);
    g.dx = gj.value("dx", 1.0);
    double cv = gj.value("cv", 0.0);
    if (a.cv_set) {
        cv = a.cv;
        overrides.push_back("geometry.cv=" + std::to_string(cv));
    }
    const bool has_cv = a.cv_set || gj.contains("cv");
    if (has_cv && !(cv > 0)) throw plt::config_error({"geometry.cv must be > 0"});
    if (has_cv && gj.contains("diffusion"))
        throw plt::config_error({"give either geometry.cv or geometry.diffusion, not both"});
    g.diffusion = has_cv ? plt::calibrate_diffusion(cv) : gj.value("diffusion", 1.0);

    json sj = cfg.value("stimulus", json::object());
    const std::string kind = sj.value("kind", "periodic");
    plt::StimulusProtocol stim;
    double period = sj.value("period_ms", 1000.0);
    if (a.period_set) {
        period = a.period;
        overrides.push_back("stimulus.period_ms=" + std::to_string(period));
    }
    if (kind == "periodic") {
        stim = plt::StimulusProtocol::paced_1d(period, g.diffusion);
        if (g.dims == 2) {
            stim.region = plt::StimRegion{0, g.nodes, 0, std::min(8, g.nodes)};
        }
    } else if (kind == "s1s2") {
        if (g.dims != 2) throw plt::config_error({"stimulus.kind s1s2 requires geometry.dims=2"});
        stim = plt::StimulusProtocol::s1s2_2d(sj.value("s2_delay_ms", 420.0), g.nodes);
    } else {
        throw plt::config_error({"stimulus.kind must be 'periodic' or 's1s2'"});
    }
    stim.amplitude = sj.value("amplitude", stim.amplitude);
    stim.duration_ms = sj.value("duration_ms", stim.duration_ms);

    double duration = cfg.value("duration_ms", 4096.0);
    if (a.duration_set) {
        duration = a.duration;
        overrides.push_back("duration_ms=" + std::to_string(duration));
    }
    const uint64_t seed = cfg.value("seed", uint64_t(1));

    std::cerr << "simulate: dims=" << g.dims << " nodes=" << g.nodes
              << " diffusion=" << g.diffusion << " duration=" << duration << " ms\n";
    const double t0 = now_s();
    const plt::VoltageTrace tr = plt::run_simulation(g, stim, {}, duration);
    std::cerr << "simulate: done in " << now_s() - t0 << " s\n";

    json meta = plt::trace_metadata(g, stim, {}, seed);
    if (cv > 0) meta["geometry"]["calibrated_cv"] = cv;
    meta["overrides"] = overrides_json(overrides);
    plt::save_trace(tr, a.out, meta);
    std::cerr << "simulate: wrote " << a.out << "\n";
    return 0;
}

struct DatasetArgs {
    std::string config, out, grid;
    int64_t base_seed = -1, split_seed = -1;
    bool base_seed_set = false, split_seed_set = false;
};

int run_dataset(const DatasetArgs& a) {
    json cfg = load_config(a.config);
    validate_config(cfg, json{{"grid", true}, {"base_seed", true}, {"split_seed", true}});
    std::string grid_name = cfg.value("grid", "full");
    uint64_t base_seed = cfg.value("base_seed", uint64_t(1));
    uint64_t split_seed = cfg.value("split_seed", uint64_t(1));
    if (!a.grid.empty()) grid_name = a.grid;
    if (a.base_seed_set || a.split_seed_set) {
        std::vector<std::string> bad;
        if (a.base_seed_set && a.base_seed < 0) bad.push_back("base_seed must be >= 0");
        if (a.split_seed_set && a.split_seed < 0) bad.push_back("split_seed must be >= 0");
        if (!bad.empty()) throw plt::config_error(bad);
    }
    if (a.base_seed_set) base_seed = uint64_t(a.base_seed);
    if (a.split_seed_set) split_seed = uint64_t(a.split_seed);

    std::vector<plt::CaseSpec> grid;
    if (grid_name == "full") {
        grid = plt::make_grid(base_seed);
    } else if (grid_name == "ci") {
        grid = plt::make_ci_grid(base_seed);
    } else {
        throw plt::config_error({"grid must be 'full' or 'ci'"});
    }

    std::cerr << "dataset: generating " << grid.size() << " cases (grid=" << grid_name
              << ", base_seed=" << base_seed << ", split_seed=" << split_seed << ")\n";
    const double t0 = now_s();
    const plt::DatasetSplit split = plt::generate_dataset(grid, split_seed);
    std::cerr << "dataset: generated " << split.size() << " cases in " << now_s() - t0 << " s\n";
    plt::save_dataset(split, a.out);
    std::cerr << "dataset: wrote " << a.out << " (train " << split.train.size() << ", validation "
              << split.validation.size() << ")\n";
    return 0;
}

struct TrainArgs {
    std::string config, dataset, out;
    int epochs = -1, batch = -1;
    double lr = -1;
    int64_t seed = -1;
    bool epochs_set = false, batch_set = false, lr_set = false, seed_set = false;
};

int run_train(const TrainArgs& a) {
    json cfg = load_config(a.config);
    validate_config(cfg, json{{"epochs", true},
                              {"batch_size", true},
                              {"learning_rate", true},
                              {"plateau_factor", true},
                              {"plateau_patience", true},
                              {"lr_floor", true},
                              {"seed", true}});
    std::vector<std::string> overrides;
    plt::nn::TrainConfig tc;
    tc.epochs = cfg.value("epochs", tc.epochs);
    tc.batch_size = cfg.value("batch_size", tc.batch_size);
    tc.learning_rate = cfg.value("learning_rate", tc.learning_rate);
    tc.plateau_factor = cfg.value("plateau_factor", tc.plateau_factor);
    tc.plateau_patience = cfg.value("plateau_patience", tc.plateau_patience);
    tc.lr_floor = cfg.value("lr_floor", tc.lr_floor);
    tc.seed = cfg.value("seed", tc.seed);
    if (a.epochs_set) {
        tc.epochs = a.epochs;
        overrides.push_back("epochs=" + std::to_string(a.epochs));
    }
    if (a.batch_set) {
        tc.batch_size = a.batch;
        overrides.push_back("batch_size=" + std::to_string(a.batch));
    }
    if (a.lr_set) {
        tc.learning_rate = a.lr;
        overrides.push_back("learning_rate=" + std::to_string(a.lr));
    }
    if (a.seed_set) {
        if (a.seed < 0) throw plt::config_error({"seed must be >= 0"});
        tc.seed = uint64_t(a.seed);
        overrides.push_back("seed=" + std::to_string(a.seed));
    }
    tc.validate();

    const plt::DatasetSplit split = plt::load_dataset(a.dataset);
    std::cerr << "train: " << split.train.size() << " train / " << split.validation.size()
              << " validation cases, " << tc.epochs << " epochs\n";

    auto model = plt::nn::make_unet<float>();
    plt::Rng init_rng(plt::mix_seed(tc.seed, 0x1717));
    plt::nn::init_params(model, init_rng);

    const double t0 = now_s();
    auto [best, report] = plt::nn::train(model, split, tc);
    std::cerr << "train: finished in " << now_s() - t0 << " s";
    if (!report.val_loss.empty())
        std::cerr << ", best validation loss " << report.best_val_loss << " at epoch "
                  << report.best_epoch;
    std::cerr << "\n";
    std::cerr << "train: final validation mae=" << report.final_validation.mae
              << " mse=" << report.final_validation.mse << "\n";

    plt::nn::save_checkpoint(best, a.out);
    json meta;
    meta["report"] = plt::nn::report_to_json(report);
    meta["config"] = {{"epochs", tc.epochs},
                      {"batch_size", tc.batch_size},
                      {"learning_rate", tc.learning_rate},
                      {"plateau_factor", tc.plateau_factor},
                      {"plateau_patience", tc.plateau_patience},
                      {"lr_floor", tc.lr_floor},
                      {"seed", tc.seed}};
    meta["overrides"] = overrides_json(overrides);
    meta["dataset"] = a.dataset;
    std::ofstream ms(a.out + ".json", std::ios::trunc);
    if (!ms) throw plt::io_error("cannot write " + a.out + ".json");
    ms << meta.dump(2) << "\n";
    std::cerr << "train: wrote " << a.out << "\n";
    return 0;
}

struct InferArgs {
    std::string model, egm, out;
};

int run_infer(const InferArgs& a) {
    const auto model = plt::nn::load_checkpoint(a.model);
    plt::Electrogram egm;
    egm.samples = plt::load_series_csv(a.egm);
    egm = plt::normalize(std::move(egm));
    const plt::PLTSignal pred = plt::nn::infer(model, egm);
    json meta;
    meta["model"] = a.model;
    meta["input"] = a.egm;
    meta["normalized_input"] = true;
    plt::save_plt_csv(pred, a.out, meta);
    std::cerr << "infer: wrote " << a.out << " (" << pred.samples.size() << " samples)\n";
    return 0;
}

struct MapArgs {
    std::string config, model, trace, out;
    double stride = -1;
    bool stride_set = false;
};

int run_map(const MapArgs& a) {
    json cfg = load_config(a.config);
    validate_config(cfg, json{{"array_rows", true},
                              {"array_cols", true},
                              {"height", true},
                              {"stride_ms", true}});
    std::vector<std::string> overrides;
    const plt::VoltageTrace tr = plt::load_trace(a.trace);
    const int ar = cfg.value("array_rows", 32);
    const int ac = cfg.value("array_cols", 32);
    const double h = cfg.value("height", 10.0);
    double stride = cfg.value("stride_ms", 512.0);
    if (a.stride_set) {
        stride = a.stride;
        overrides.push_back("stride_ms=" + std::to_string(stride));
    }

    const auto model = plt::nn::load_checkpoint(a.model);
    const auto array = plt::ElectrodeArray::uniform(ar, ac, tr.rows, tr.cols, h);
    std::cerr << "map: " << ar << "x" << ac << " electrodes at h=" << h << " over " << tr.rows
              << "x" << tr.cols << " sheet, " << tr.n_samples << " samples\n";
    const double t0 = now_s();
    const plt::PhaseMapSequence seq = plt::build_phase_maps(tr, array, model);
    std::cerr << "map: built " << seq.frames.size() << " frames in " << now_s() - t0 << " s\n";

    std::filesystem::create_directories(a.out);
    plt::export_frames(seq, a.out, stride);
    json meta;
    meta["model"] = a.model;
    meta["trace"] = a.trace;
    meta["array"] = {{"rows", ar}, {"cols", ac}, {"height", h}};
    meta["overrides"] = overrides_json(overrides);
    int degenerate = 0;
    for (uint8_t d : seq.degenerate) degenerate += d;
    meta["degenerate_electrodes"] = degenerate;
    std::ofstream ms(a.out + "/map.json", std::ios::trunc);
    if (!ms) throw plt::io_error("cannot write " + a.out + "/map.json");
    ms << meta.dump(2) << "\n";
    std::cerr << "map: wrote frames to " << a.out << "\n";
    return 0;
}

struct EvalArgs {
    std::string model, dataset;
};

void eval_split(const plt::nn::UNetModel<float>& model, const std::vector<plt::DatasetCase>& cases,
                const char* name) {
    if (cases.empty()) {
        std::printf("%-12s %10s %10s %14s\n", name, "-", "-", "-");
        return;
    }
    const auto metrics = plt::nn::detail::evaluate_split(model, cases);
    long total_true = 0, total_det = 0, total_matched = 0;
    for (const auto& c : cases) {
        plt::PLTSignal pred;
        pred.sample_rate = plt::kCaseSampleRate;
        pred.samples = plt::nn::infer_values(
            model, std::span<const float>(c.input.data(), c.input.size()));
        const auto rep = plt::match_upstrokes(pred, c.break_indices);
        total_true += rep.true_count;
        total_det += rep.detected_count;
        total_matched += rep.matched_count;
    }
    const double up_err =
        total_true > 0 ? double(total_true + total_det - 2 * total_matched) / double(total_true)
                       : 0.0;
    std::printf("%-12s %10.4f %10.4f %13.2f%%\n", name, metrics.mae, metrics.mse, 100.0 * up_err);
}

int run_eval(const EvalArgs& a) {
    const auto model = plt::nn::load_checkpoint(a.model);
    const plt::DatasetSplit split = plt::load_dataset(a.dataset);
    std::printf("%-12s %10s %10s %14s\n", "split", "mae", "mse", "upstroke_err");
    eval_split(model, split.train, "train");
    eval_split(model, split.validation, "validation");
    return 0;
}

json error_json(const char* type, const std::string& message) {
    return json{{"type", type}, {"message", message}};
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"unipolar electrogram to phase-like signal pipeline"};
    app.require_subcommand(1);

    SimulateArgs sim;
    auto* c_sim = app.add_subcommand("simulate", "run a tissue simulation and save the trace");
    c_sim->add_option("--config", sim.config, "JSON config file");
    c_sim->add_option("--out", sim.out, "output trace path")->required();
    c_sim->add_option("--duration", sim.duration, "override duration_ms");
    c_sim->add_option("--cv", sim.cv, "override geometry.cv");
    c_sim->add_option("--period", sim.period, "override stimulus.period_ms");

    DatasetArgs ds;
    auto* c_ds = app.add_subcommand("dataset", "generate the paired training corpus");
    c_ds->add_option("--config", ds.config, "JSON config file");
    c_ds->add_option("--out", ds.out, "output dataset path")->required();
    c_ds->add_option("--grid", ds.grid, "grid name: full or ci");
    c_ds->add_option("--base-seed", ds.base_seed, "override base_seed");
    c_ds->add_option("--split-seed", ds.split_seed, "override split_seed");

    TrainArgs tr;
    auto* c_tr = app.add_subcommand("train", "train the network on a dataset");
    c_tr->add_option("--config", tr.config, "JSON config file");
    c_tr->add_option("--dataset", tr.dataset, "dataset path")->required();
    c_tr->add_option("--out", tr.out, "output checkpoint path")->required();
    c_tr->add_option("--epochs", tr.epochs, "override epochs");
    c_tr->add_option("--batch", tr.batch, "override batch_size");
    c_tr->add_option("--lr", tr.lr, "override learning_rate");
    c_tr->add_option("--seed", tr.seed, "override seed");

    InferArgs inf;
    auto* c_inf = app.add_subcommand("infer", "run the network on an electrogram CSV");
    c_inf->add_option("--model", inf.model, "checkpoint path")->required();
    c_inf->add_option("--egm", inf.egm, "input electrogram CSV")->required();
    c_inf->add_option("--out", inf.out, "output CSV path")->required();

    MapArgs mp;
    auto* c_mp = app.add_subcommand("map", "build phase maps from a 2-D trace");
    c_mp->add_option("--config", mp.config, "JSON config file");
    c_mp->add_option("--model", mp.model, "checkpoint path")->required();
    c_mp->add_option("--trace", mp.trace, "2-D trace path")->required();
    c_mp->add_option("--out", mp.out, "output directory")->required();
    c_mp->add_option("--stride", mp.stride, "override stride_ms");

    EvalArgs ev;
    auto* c_ev = app.add_subcommand("eval", "print metrics for a model on a dataset");
    c_ev->add_option("--model", ev.model, "checkpoint path")->required();
    c_ev->add_option("--dataset", ev.dataset, "dataset path")->required();

    CLI11_PARSE(app, argc, argv);

    // A supplied flag always overrides the config, even with an invalid
    // value: the validation layer owns the rejection, not the parser.
    sim.duration_set = c_sim->count("--duration") > 0;
    sim.cv_set = c_sim->count("--cv") > 0;
    sim.period_set = c_sim->count("--period") > 0;
    ds.base_seed_set = c_ds->count("--base-seed") > 0;
    ds.split_seed_set = c_ds->count("--split-seed") > 0;
    tr.epochs_set = c_tr->count("--epochs") > 0;
    tr.batch_set = c_tr->count("--batch") > 0;
    tr.lr_set = c_tr->count("--lr") > 0;
    tr.seed_set = c_tr->count("--seed") > 0;
    mp.stride_set = c_mp->count("--stride") > 0;

    try {
        if (*c_sim) return run_simulate(sim);
        if (*c_ds) return run_dataset(ds);
        if (*c_tr) return run_train(tr);
        if (*c_inf) return run_infer(inf);
        if (*c_mp) return run_map(mp);
        if (*c_ev) return run_eval(ev);
    } catch (const plt::config_error& ex) {
        std::cerr << "error: " << error_json("config", ex.what()).dump() << "\n";
        return 2;
    } catch (const plt::parse_error& ex) {
        std::cerr << "error: " << error_json("parse", ex.what()).dump() << "\n";
        return 3;
    } catch (const plt::integrity_error& ex) {
        std::cerr << "error: " << error_json("integrity", ex.what()).dump() << "\n";
        return 4;
    } catch (const plt::checkpoint_error& ex) {
        std::cerr << "error: " << error_json("checkpoint", ex.what()).dump() << "\n";
        return 5;
    } catch (const plt::io_error& ex) {
        std::cerr << "error: " << error_json("io", ex.what()).dump() << "\n";
        return 6;
    } catch (const plt::error& ex) {
        std::cerr << "error: " << error_json("runtime", ex.what()).dump() << "\n";
        return 1;
    } catch (const std::exception& ex) {
        std::cerr << "error: " << error_json("internal", ex.what()).dump() << "\n";
        return 1;
    }
    return 0;
}
