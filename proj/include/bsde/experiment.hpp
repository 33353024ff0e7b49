#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "bsde/backward.hpp"
#include "bsde/forward.hpp"
#include "bsde/model.hpp"

namespace bsde {

enum class ExperimentKind {
    ladder_deterministic,
    ladder_exit,
    xi1,
    xi2,
    pde_crosscheck,
    oracle_table,
};

const char* experiment_kind_name(ExperimentKind kind);

class ConfigError : public std::invalid_argument {
public:
    explicit ConfigError(const std::string& what) : std::invalid_argument(what) {}
};

// Flat, fully validated experiment description. Every key is documented in
// the README; unknown keys are hard errors.
struct ExperimentConfig {
    ExperimentKind kind = ExperimentKind::ladder_deterministic;

    enum class DriverKind { canonical, zero };

    double q = 2.0;
    double eta = 1.0;  // constant eta
    DriverKind driver_kind = DriverKind::canonical;  // zero: linear baseline

    // forward problem (1D)
    bool has_domain = false;
    double domain_lo = 0.0;
    double domain_hi = 2.0;
    double x0 = 1.0;
    double drift = 0.0;
    double sigma = 1.0;
    double t_max = 0.0;  // 0: calibrate until the censored fraction is < 1e-3
    std::size_t n_steps = 200;
    std::size_t n_paths = 10000;
    bool bridge = true;

    std::vector<double> k_list;
    double k = 50.0;  // truncation level of the xi experiments

    // second stopping time (xi experiments)
    bool has_tau_domain = false;
    double tau_domain_lo = 0.0;
    double tau_domain_hi = 2.0;
    double tau_x0 = 1.0;
    double tau_drift = 0.0;
    double tau_sigma = 1.0;
    uint64_t tau_seed = 0;  // 0: derived from seed

    RegressionConfig reg;

    // pde / oracle table
    double L = 2.0;
    double n_boundary = 5.0;
    std::size_t m_grid = 1999;
    std::vector<double> n_list;
    int points = 101;

    uint64_t seed = 1;
    std::size_t threads = 0;
    std::string out_dir;  // empty: BSDE_OUT_ROOT or ./out

    Domain domain() const { return Domain::interval(domain_lo, domain_hi); }
    Domain tau_domain() const { return Domain::interval(tau_domain_lo, tau_domain_hi); }
    Driver driver() const;
    uint64_t effective_tau_seed() const;
};

// Parses the flat key = value format ('#' comments). Unknown keys, missing
// required keys and type mismatches throw ConfigError with line context.
ExperimentConfig parse_config(std::string_view text);
ExperimentConfig load_config(const std::filesystem::path& file);

struct CheckLine {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct ExperimentResult {
    bool all_passed = false;
    std::vector<CheckLine> checks;
    std::filesystem::path out_dir;
    // rung-level copies for callers that do not want to re-read the CSVs
    std::vector<double> k_values;
    std::vector<double> y0_values;
    std::vector<double> y0_stderrs;
    std::vector<double> oracle_values;  // NaN when undefined
    double t_max_used = 0.0;
};

// Runs the experiment, writing summary.csv, curves.csv and meta.json into the
// output directory. CSV bodies are byte-stable for a fixed config and seed;
// timestamps are confined to meta.json.
ExperimentResult run_experiment(const ExperimentConfig& config);

// Converts an artifact directory's curves into per-curve whitespace-delimited
// files (t value lower upper) plus a ladder file from the summary.
void emit_plot_data(const std::filesystem::path& artifact_dir);

}  // namespace bsde
