// Batch experiment runner for the singular-terminal BSDE library.
//
// Subcommands:
//   simulate              forward paths + exit statistics, optional binary dump
//   oracle                closed-form reference tables (v*, v_n, profiles)
//   pde                   finite-difference solve and boundary ladder
//   experiment <config>   full experiment from a key = value config file
//   report <dir>          plot-ready files from an artifact directory

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>

#include "bsde/csv.hpp"
#include "bsde/experiment.hpp"
#include "bsde/forward.hpp"

namespace {

int finish(const bsde::ExperimentResult& result) {
    for (const auto& c : result.checks) {
        std::cout << (c.passed ? "[pass] " : "[FAIL] ") << c.name << ": " << c.detail << '\n';
    }
    std::cout << "artifacts: " << result.out_dir.string() << '\n';
    return result.all_passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"singular-terminal BSDE lab"};
    app.require_subcommand(1);
    app.fallthrough();  // global flags may follow the subcommand

    uint64_t seed = 1;
    std::size_t threads = 0;
    std::string out;
    app.add_option("--seed", seed, "RNG seed")->capture_default_str();
    app.add_option("--threads", threads, "worker threads (0 = hardware)")->capture_default_str();
    app.add_option("--out", out, "output directory (default: $BSDE_OUT_ROOT or ./out)");

    // simulate
    auto* sim = app.add_subcommand("simulate", "forward paths and exit statistics");
    double s_lo = 0.0, s_hi = 2.0, s_x0 = 1.0, s_drift = 0.0, s_sigma = 1.0, s_tmax = 8.0;
    std::size_t s_steps = 2000, s_paths = 10000;
    bool s_bridge = true, s_dump = false;
    sim->add_option("--lo", s_lo, "domain lower end")->capture_default_str();
    sim->add_option("--hi", s_hi, "domain upper end")->capture_default_str();
    sim->add_option("--x0", s_x0, "start point")->capture_default_str();
    sim->add_option("--drift", s_drift, "constant drift")->capture_default_str();
    sim->add_option("--sigma", s_sigma, "constant diffusion")->capture_default_str();
    sim->add_option("--t-max", s_tmax, "horizon cap")->capture_default_str();
    sim->add_option("--steps", s_steps, "time steps")->capture_default_str();
    sim->add_option("--paths", s_paths, "path count")->capture_default_str();
    sim->add_flag("--bridge,!--no-bridge", s_bridge, "Brownian-bridge exit correction");
    sim->add_flag("--dump", s_dump, "write bundle.bin next to the stats");

    // oracle
    auto* orc = app.add_subcommand("oracle", "reference tables");
    double o_q = 3.0, o_L = 2.0;
    std::string o_nlist;
    int o_points = 101;
    orc->add_option("--q", o_q, "driver exponent")->capture_default_str();
    orc->add_option("--L", o_L, "interval length")->capture_default_str();
    orc->add_option("--n-list", o_nlist, "boundary levels, comma separated");
    orc->add_option("--points", o_points, "profile sample points")->capture_default_str();

    // pde
    auto* fd = app.add_subcommand("pde", "finite-difference solve");
    double p_q = 3.0, p_L = 2.0, p_n = 5.0;
    std::size_t p_m = 1999;
    std::string p_ladder;
    fd->add_option("--q", p_q, "driver exponent")->capture_default_str();
    fd->add_option("--L", p_L, "interval length")->capture_default_str();
    fd->add_option("--n", p_n, "boundary value")->capture_default_str();
    fd->add_option("--m", p_m, "interior grid points")->capture_default_str();
    fd->add_option("--ladder", p_ladder, "boundary ladder levels, comma separated");

    // experiment
    auto* exp = app.add_subcommand("experiment", "run a config file");
    std::string config_path;
    exp->add_option("config", config_path, "path to the config file")->required();

    // report
    auto* rep = app.add_subcommand("report", "emit plot-ready files");
    std::string report_dir;
    rep->add_option("dir", report_dir, "artifact directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed()) {
            const auto domain = bsde::Domain::interval(s_lo, s_hi);
            const auto coeffs = bsde::SDECoefficients::constant_1d(s_drift, s_sigma);
            bsde::SimulateOptions opts;
            opts.bridge_correction = s_bridge;
            opts.n_threads = threads;
            const auto bundle = bsde::simulate_paths(coeffs, std::span<const double>(&s_x0, 1),
                                                     domain, bsde::TimeGrid{s_tmax, s_steps},
                                                     s_paths, seed, opts);
            double mean_exit = 0.0;
            std::size_t exited = 0;
            for (const auto& e : bundle.exit_S) {
                if (e.exited) {
                    mean_exit += e.time;
                    ++exited;
                }
            }
            if (exited > 0) mean_exit /= static_cast<double>(exited);
            std::cout << "paths: " << s_paths << "\nexited: " << exited
                      << "\ncensored fraction: "
                      << bsde::csv::format_double(bundle.censored_fraction())
                      << "\nmean exit time: " << bsde::csv::format_double(mean_exit) << '\n';
            if (s_dump) {
                const std::filesystem::path dir = out.empty() ? "out" : out;
                std::filesystem::create_directories(dir);
                bsde::save_bundle(bundle, dir / "bundle.bin");
                std::cout << "bundle: " << (dir / "bundle.bin").string() << '\n';
            }
            return 0;
        }
        if (orc->parsed()) {
            bsde::ExperimentConfig cfg;
            cfg.kind = bsde::ExperimentKind::oracle_table;
            cfg.q = o_q;
            cfg.L = o_L;
            cfg.points = o_points;
            cfg.seed = seed;
            cfg.threads = threads;
            cfg.out_dir = out;
            if (!o_nlist.empty())
                cfg = bsde::parse_config("experiment = oracle-table\nq = " + std::to_string(o_q) +
                                         "\nL = " + std::to_string(o_L) +
                                         "\nn_list = " + o_nlist +
                                         "\npoints = " + std::to_string(o_points) +
                                         "\nseed = " + std::to_string(seed) +
                                         (out.empty() ? "" : "\nout = " + out));
            return finish(bsde::run_experiment(cfg));
        }
        if (fd->parsed()) {
            bsde::ExperimentConfig cfg;
            cfg.kind = bsde::ExperimentKind::pde_crosscheck;
            cfg.q = p_q;
            cfg.L = p_L;
            cfg.n_boundary = p_n;
            cfg.m_grid = p_m;
            cfg.seed = seed;
            cfg.threads = threads;
            cfg.out_dir = out;
            if (!p_ladder.empty()) {
                std::stringstream ss(p_ladder);
                std::string item;
                while (std::getline(ss, item, ',')) cfg.n_list.push_back(std::stod(item));
            }
            return finish(bsde::run_experiment(cfg));
        }
        if (exp->parsed()) {
            auto cfg = bsde::load_config(config_path);
            if (app.count("--seed") > 0) cfg.seed = seed;
            if (app.count("--threads") > 0) cfg.threads = threads;
            if (!out.empty()) cfg.out_dir = out;
            return finish(bsde::run_experiment(cfg));
        }
        if (rep->parsed()) {
            bsde::emit_plot_data(report_dir);
            std::cout << "plot data written to " << report_dir << '\n';
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    }
    return 2;
}
