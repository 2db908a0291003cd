#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace plt {

struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid configuration. Carries every violation found, not just the first.
struct config_error : error {
    std::vector<std::string> violations;

    explicit config_error(std::vector<std::string> v)
        : error(join(v)), violations(std::move(v)) {}
    explicit config_error(const std::string& msg)
        : error(msg), violations{msg} {}
    config_error(std::initializer_list<std::string> v)
        : config_error(std::vector<std::string>(v)) {}

private:
    static std::string join(const std::vector<std::string>& v) {
        std::string s = "invalid configuration:";
        for (const auto& m : v) s += "\n  - " + m;
        return s;
    }
};

struct shape_error : error {
    using error::error;
};

struct io_error : error {
    using error::error;
};

// Malformed file content; offset is the byte position where parsing failed.
struct parse_error : error {
    std::size_t offset;

    parse_error(const std::string& msg, std::size_t off)
        : error(msg + " (byte offset " + std::to_string(off) + ")"), offset(off) {}
};

struct integrity_error : error {
    using error::error;
};

struct checkpoint_error : error {
    using error::error;
};

// Numerical blow-up during integration; t_ms is the simulated time of failure.
struct sim_diverged_error : error {
    double t_ms;

    explicit sim_diverged_error(double t)
        : error("simulation diverged at t = " + std::to_string(t) + " ms"), t_ms(t) {}
    sim_diverged_error(const std::string& msg, double t)
        : error(msg + " at t = " + std::to_string(t) + " ms"), t_ms(t) {}
};

struct no_propagation_error : error {
    using error::error;
};

struct calibration_error : error {
    using error::error;
};

struct case_generation_error : error {
    std::string spec_json;

    case_generation_error(const std::string& msg, std::string spec)
        : error(msg + " [case " + spec + "]"), spec_json(std::move(spec)) {}
};

}  // namespace plt
