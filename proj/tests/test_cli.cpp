#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "plt/dataset.hpp"
#include "plt/electrogram.hpp"
#include "plt/nn/checkpoint.hpp"
#include "plt/plt_signal.hpp"
#include "plt/rng.hpp"

#ifndef PLT_CLI_PATH
#error "PLT_CLI_PATH must point at the CLI binary"
#endif

namespace {

namespace fs = std::filesystem;

fs::path tmp_dir() {
    auto p = fs::path(PLT_TEST_TMP) / "cli";
    fs::create_directories(p);
    return p;
}

struct RunResult {
    int code = -1;
    std::string out, err;
};

std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

RunResult run_cli(const std::string& args) {
    const auto dir = tmp_dir();
    const auto out = dir / "stdout.txt";
    const auto err = dir / "stderr.txt";
    const std::string cmd = std::string(PLT_CLI_PATH) + " " + args + " > " + out.string() +
                            " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    RunResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream os(p, std::ios::trunc);
    os << text;
}

// A small corpus with real file-format shape but synthetic contents, so the
// train/infer/eval commands run in seconds.
fs::path tiny_dataset() {
    static fs::path cached;
    if (!cached.empty()) return cached;
    const auto path = tmp_dir() / "tiny.pltd";
    plt::DatasetSplit split;
    split.split_seed = 5;
    for (int i = 0; i < 8; ++i) {
        plt::DatasetCase c;
        c.spec.fr = 2000;
        c.spec.cv = 10;
        c.spec.h = 10 + i;
        c.spec.x_prime = 512;
        c.spec.seed = uint64_t(i);
        c.break_indices = {500 + 7 * i, 2500 + 11 * i};
        const auto target = plt::build_plt_target(c.break_indices, plt::kCaseSamples);
        c.target.resize(plt::kCaseSamples);
        c.input.resize(plt::kCaseSamples);
        plt::Rng rng(100 + uint64_t(i));
        for (int k = 0; k < plt::kCaseSamples; ++k) {
            c.target[size_t(k)] = float(target.samples[size_t(k)]);
            c.input[size_t(k)] = float(0.8 * std::sin(0.01 * k + double(i)) +
                                       0.2 * rng.uniform(-1.0, 1.0));
        }
        if (i < 6)
            split.train.push_back(std::move(c));
        else
            split.validation.push_back(std::move(c));
    }
    plt::save_dataset(split, path.string());
    cached = path;
    return cached;
}

fs::path trained_checkpoint() {
    static fs::path cached;
    if (!cached.empty()) return cached;
    const auto model = tmp_dir() / "tiny.pltn";
    const auto r = run_cli("train --dataset " + tiny_dataset().string() + " --out " +
                           model.string() + " --epochs 1 --batch 4 --seed 7");
    REQUIRE(r.code == 0);
    cached = model;
    return cached;
}

}  // namespace

TEST_CASE("cli help and argument parsing", "[cli]") {
    const auto help = run_cli("--help");
    CHECK(help.code == 0);
    for (const char* sub : {"simulate", "dataset", "train", "infer", "map", "eval"})
        CHECK(help.out.find(sub) != std::string::npos);

    CHECK(run_cli("").code != 0);
    CHECK(run_cli("simulate").code != 0);
    CHECK(run_cli("frobnicate --out x").code != 0);
}

TEST_CASE("cli simulate produces identical traces on identical configs", "[cli]") {
    const auto dir = tmp_dir();
    const auto cfg = dir / "sim.json";
    write_text(cfg, R"({"geometry":{"dims":1,"nodes":128,"diffusion":5.0},)"
                    R"("stimulus":{"period_ms":1000.0},"duration_ms":256.0})");

    const auto t1 = dir / "a.trace";
    const auto t2 = dir / "b.trace";
    const auto r1 = run_cli("simulate --config " + cfg.string() + " --out " + t1.string());
    REQUIRE(r1.code == 0);
    const auto r2 = run_cli("simulate --config " + cfg.string() + " --out " + t2.string());
    REQUIRE(r2.code == 0);

    const auto b1 = slurp(t1), b2 = slurp(t2);
    REQUIRE(!b1.empty());
    CHECK(b1 == b2);
    CHECK(slurp(dir / "a.trace.sha256") == slurp(dir / "b.trace.sha256"));

    // A flag override changes the bytes and is recorded in the metadata.
    const auto t3 = dir / "c.trace";
    const auto r3 = run_cli("simulate --config " + cfg.string() + " --out " + t3.string() +
                            " --duration 512");
    REQUIRE(r3.code == 0);
    CHECK(slurp(t3) != b1);
}

TEST_CASE("cli simulate rejects bad configs with exit code 2", "[cli]") {
    const auto dir = tmp_dir();

    const auto unknown = dir / "unknown.json";
    write_text(unknown, R"({"geometry":{"nodez":64},"stimulusz":{},"duration_ms":64.0})");
    const auto r = run_cli("simulate --config " + unknown.string() + " --out " +
                           (dir / "x.trace").string());
    CHECK(r.code == 2);
    CHECK(r.err.find("geometry.nodez") != std::string::npos);
    CHECK(r.err.find("stimulusz") != std::string::npos);

    const auto both = dir / "both.json";
    write_text(both, R"({"geometry":{"cv":10.0,"diffusion":5.0}})");
    CHECK(run_cli("simulate --config " + both.string() + " --out " + (dir / "x.trace").string())
              .code == 2);

    const auto badkind = dir / "kind.json";
    write_text(badkind, R"({"stimulus":{"kind":"spiral"}})");
    CHECK(run_cli("simulate --config " + badkind.string() + " --out " + (dir / "x.trace").string())
              .code == 2);

    const auto truncated = dir / "trunc.json";
    write_text(truncated, R"({"geometry":{"dims":1)");
    CHECK(run_cli("simulate --config " + truncated.string() + " --out " +
                  (dir / "x.trace").string())
              .code == 3);

    // Supplied flags reach the validator even when their values are junk.
    CHECK(run_cli("simulate --out " + (dir / "x.trace").string() + " --duration 0").code == 2);
    CHECK(run_cli("simulate --out " + (dir / "x.trace").string() + " --cv 0").code == 2);
}

TEST_CASE("cli dataset rejects unknown grids", "[cli]") {
    const auto r = run_cli("dataset --grid nope --out " + (tmp_dir() / "d.pltd").string());
    CHECK(r.code == 2);
    CHECK(r.err.find("full") != std::string::npos);
}

TEST_CASE("cli train writes a checkpoint with a sidecar report", "[cli]") {
    const auto model = trained_checkpoint();
    REQUIRE(fs::exists(model));

    const auto loaded = plt::nn::load_checkpoint(model.string());
    CHECK(loaded.params.size() == 162817);

    const auto meta = nlohmann::json::parse(slurp(model.string() + ".json"));
    CHECK(meta.at("config").at("epochs") == 1);
    CHECK(meta.at("config").at("batch_size") == 4);
    CHECK(meta.at("config").at("seed") == 7);
    REQUIRE(meta.at("report").at("train_loss").size() == 1);
    CHECK(meta.at("report").at("learning_rate").size() == 1);
    const auto overrides = meta.at("overrides");
    REQUIRE(overrides.is_array());
    bool saw_epochs = false;
    for (const auto& o : overrides) saw_epochs |= (o == "epochs=1");
    CHECK(saw_epochs);

    // Same data, same seed, same flags: the checkpoint bytes must repeat.
    const auto again = tmp_dir() / "tiny_again.pltn";
    const auto r = run_cli("train --dataset " + tiny_dataset().string() + " --out " +
                           again.string() + " --epochs 1 --batch 4 --seed 7");
    REQUIRE(r.code == 0);
    CHECK(slurp(model) == slurp(again));

    CHECK(run_cli("train --dataset " + tiny_dataset().string() + " --out " +
                  (tmp_dir() / "z.pltn").string() + " --epochs 1 --batch 0")
              .code == 2);
    CHECK(run_cli("train --dataset " + (tmp_dir() / "absent.pltd").string() + " --out " +
                  (tmp_dir() / "z.pltn").string() + " --epochs 1")
              .code == 6);
}

TEST_CASE("cli infer runs the model over an electrogram csv", "[cli]") {
    const auto dir = tmp_dir();
    const auto model = trained_checkpoint();

    plt::Electrogram egm;
    egm.samples.resize(4096);
    for (int i = 0; i < 4096; ++i) egm.samples[size_t(i)] = 0.4 * std::sin(0.02 * i);
    const auto egm_path = dir / "egm.csv";
    plt::save_egm_csv(egm, egm_path.string());

    const auto out = dir / "pred.csv";
    const auto r = run_cli("infer --model " + model.string() + " --egm " + egm_path.string() +
                           " --out " + out.string());
    REQUIRE(r.code == 0);
    const auto pred = plt::load_series_csv(out.string());
    REQUIRE(pred.size() == 4096);
    for (double v : pred) {
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
    }

    plt::Electrogram odd;
    odd.samples.resize(5000, 0.1);
    const auto odd_path = dir / "odd.csv";
    plt::save_egm_csv(odd, odd_path.string());
    CHECK(run_cli("infer --model " + model.string() + " --egm " + odd_path.string() + " --out " +
                  (dir / "nope.csv").string())
              .code == 1);

    CHECK(run_cli("infer --model " + (dir / "absent.pltn").string() + " --egm " +
                  egm_path.string() + " --out " + (dir / "nope.csv").string())
              .code == 6);

    const auto broken = dir / "broken.pltn";
    {
        auto bytes = slurp(model);
        bytes[bytes.size() / 2] = char(bytes[bytes.size() / 2] ^ 0x1);
        std::ofstream os(broken, std::ios::binary | std::ios::trunc);
        os.write(bytes.data(), std::streamsize(bytes.size()));
    }
    CHECK(run_cli("infer --model " + broken.string() + " --egm " + egm_path.string() + " --out " +
                  (dir / "nope.csv").string())
              .code == 4);
}

TEST_CASE("cli map exports frames from a 2-D trace", "[cli]") {
    const auto dir = tmp_dir();
    const auto model = trained_checkpoint();

    const auto simc = dir / "sheet.json";
    write_text(simc, R"({"geometry":{"dims":2,"nodes":16,"diffusion":1.0},)"
                     R"("stimulus":{"period_ms":1000000.0,"amplitude":0.0},)"
                     R"("duration_ms":4096.0})");
    const auto trace = dir / "sheet.trace";
    REQUIRE(run_cli("simulate --config " + simc.string() + " --out " + trace.string()).code == 0);

    const auto mapc = dir / "map.json";
    write_text(mapc, R"({"array_rows":4,"array_cols":4,"stride_ms":1024.0})");
    const auto out = dir / "frames";
    const auto r = run_cli("map --config " + mapc.string() + " --model " + model.string() +
                           " --trace " + trace.string() + " --out " + out.string());
    REQUIRE(r.code == 0);

    const auto index = nlohmann::json::parse(slurp(out / "index.json"));
    CHECK(index.at("rows") == 4);
    REQUIRE(index.at("frames").size() == 4);
    for (int k = 0; k < 4; ++k) {
        char name[32];
        std::snprintf(name, sizeof name, "frame_%04d.pgm", k);
        const auto pgm = slurp(out / name);
        REQUIRE(pgm.size() == 11 + 16);
        CHECK(pgm.substr(0, 11) == "P5\n4 4\n255\n");
    }
    const auto meta = nlohmann::json::parse(slurp(out / "map.json"));
    CHECK(meta.at("degenerate_electrodes") == 16);

    CHECK(run_cli("map --model " + model.string() + " --trace " + trace.string() + " --out " +
                  (dir / "frames2").string() + " --stride 3000")
              .code == 2);
}

TEST_CASE("cli eval prints split metrics", "[cli]") {
    const auto r = run_cli("eval --model " + trained_checkpoint().string() + " --dataset " +
                           tiny_dataset().string());
    REQUIRE(r.code == 0);
    CHECK(r.out.find("split") != std::string::npos);
    CHECK(r.out.find("train") != std::string::npos);
    CHECK(r.out.find("validation") != std::string::npos);
    CHECK(r.out.find("upstroke_err") != std::string::npos);
}
