#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "bsde/forward.hpp"
#include "bsde/linalg.hpp"

using namespace bsde;

namespace {
std::span<const double> one(const double& x) { return std::span<const double>(&x, 1); }
}  // namespace

TEST_CASE("free paths: martingale mean") {
    const auto coeffs = SDECoefficients::constant_1d(0.0, 1.0);
    const double x0 = 1.0;
    const std::size_t n = 100000;
    const auto bundle = simulate_free_paths(coeffs, one(x0), TimeGrid{1.0, 200}, n, 42);
    std::vector<double> finals(n);
    for (std::size_t p = 0; p < n; ++p) finals[p] = bundle.exit_S[p].state[0];
    const auto s = linalg::mean_stderr(finals);
    CHECK(std::abs(s.mean - 1.0) <= 3.0 * std::sqrt(1.0 / static_cast<double>(n)));
}

TEST_CASE("degenerate dynamics") {
    const double x0 = 1.0;
    {
        const auto coeffs = SDECoefficients::constant_1d(0.0, 0.0);
        const auto bundle = simulate_free_paths(coeffs, one(x0), TimeGrid{1.0, 50}, 8, 1);
        for (std::size_t p = 0; p < 8; ++p)
            for (std::size_t i = 0; i <= 50; ++i)
                CHECK(bundle.state(p, i)[0] == doctest::Approx(1.0).epsilon(1e-15));
    }
    {
        const double z = 0.0;
        const auto coeffs = SDECoefficients::constant_1d(1.0, 0.0);
        const auto bundle = simulate_free_paths(coeffs, one(z), TimeGrid{1.0, 128}, 2, 1);
        CHECK(std::abs(bundle.exit_S[0].state[0] - 1.0) <= 1e-12);
    }
}

TEST_CASE("simulate_paths validates the start point") {
    const auto coeffs = SDECoefficients::constant_1d(0.0, 1.0);
    const auto domain = Domain::interval(0.0, 2.0);
    const double outside = 2.5;
    CHECK_THROWS_AS(
        simulate_paths(coeffs, one(outside), domain, TimeGrid{1.0, 10}, 4, 1),
        std::invalid_argument);
}

TEST_CASE("detect_exit: discrete crossing") {
    const std::vector<double> path = {1.5, 0.9, -0.2};
    const auto domain = Domain::interval(0.0, 2.0);
    const TimeGrid grid{1.0, 2};
    const PathStream stream(1, 0);
    const auto info = detect_exit(path, 1, domain, grid, false, stream);
    CHECK(info.exited);
    CHECK(info.index == 2);
    CHECK(info.state[0] == doctest::Approx(0.0));
    CHECK(info.time > 0.5);
    CHECK(info.time <= 1.0);
}

TEST_CASE("detect_exit: interior path is censored") {
    const std::vector<double> path = {1.0, 1.1, 0.9, 1.0};
    const auto domain = Domain::interval(0.0, 2.0);
    const TimeGrid grid{1.0, 3};
    const PathStream stream(1, 0);
    const auto info = detect_exit(path, 1, domain, grid, false, stream);
    CHECK(!info.exited);
}

TEST_CASE("bridge crossing probability") {
    CHECK(bridge_crossing_prob(0.05, 0.05, 1.0, 0.01) ==
          doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
    CHECK(bridge_crossing_prob(-0.1, 0.05, 1.0, 0.01) == doctest::Approx(1.0));
    CHECK(bridge_crossing_prob(0.05, 0.05, 0.0, 0.01) == doctest::Approx(0.0));
}

TEST_CASE("bridge sampling hits the closed-form rate") {
    // one step hugging the boundary: d0 = d1 = 0.05, sigma = 1, dt = 0.01
    const std::vector<double> path = {0.05, 0.05};
    const auto domain = Domain::interval(0.0, 2.0);
    const auto coeffs = SDECoefficients::constant_1d(0.0, 1.0);
    const TimeGrid grid{0.01, 1};
    const std::size_t trials = 20000;
    std::size_t crossed = 0;
    for (std::size_t t = 0; t < trials; ++t) {
        const PathStream stream(99, t);
        if (detect_exit(path, 1, domain, grid, true, stream, &coeffs).exited) ++crossed;
    }
    const double p = std::exp(-0.5);
    const double freq = static_cast<double>(crossed) / trials;
    const double se = std::sqrt(p * (1.0 - p) / trials);
    CHECK(std::abs(freq - p) <= 3.0 * se);
}

TEST_CASE("approach times") {
    const std::vector<double> path = {0.8, 0.4, 0.09};  // dist equals the state here
    const auto domain = Domain::interval(0.0, 2.0);
    const std::vector<int> ns = {1, 2, 20};
    const auto times = approach_times(path, 1, domain, ns);
    CHECK(times.at(1).value() == 0);   // dist(x0) = 0.8 <= 1
    CHECK(times.at(2).value() == 1);   // 0.4 <= 0.5
    CHECK(!times.at(20).has_value());  // 0.09 > 0.05

    // nested thresholds: indices non-decreasing in n
    const std::vector<double> shrink = {0.9, 0.6, 0.35, 0.2, 0.12, 0.04};
    const std::vector<int> ns2 = {1, 2, 4, 8, 16};
    const auto t2 = approach_times(shrink, 1, domain, ns2);
    std::size_t prev = 0;
    for (int n : ns2) {
        REQUIRE(t2.at(n).has_value());
        CHECK(t2.at(n).value() >= prev);
        prev = t2.at(n).value();
    }
}

TEST_CASE("exit-time mean matches x0(L - x0)") {
    const auto coeffs = SDECoefficients::constant_1d(0.0, 1.0);
    const auto domain = Domain::interval(0.0, 2.0);
    const double x0 = 1.0;
    SimulateOptions opts;
    opts.bridge_correction = true;
    const std::size_t n = 20000;
    const auto bundle =
        simulate_paths(coeffs, one(x0), domain, TimeGrid{8.0, 1000}, n, 4242, opts);
    CHECK(bundle.censored_fraction() < 1e-3);
    std::vector<double> times;
    times.reserve(n);
    for (const auto& e : bundle.exit_S)
        if (e.exited) times.push_back(e.time);
    const auto s = linalg::mean_stderr(times);
    // dt-level detection bias allowance on top of the 3 SE band
    CHECK(std::abs(s.mean - 1.0) <= 3.0 * s.stderr_ + 2.0 * bundle.grid.dt());
}

TEST_CASE("horizon calibration reaches the censoring target") {
    const auto coeffs = SDECoefficients::constant_1d(0.0, 1.0);
    const auto domain = Domain::interval(0.0, 2.0);
    const double x0 = 1.0;
    const double t_max = calibrate_t_max(coeffs, one(x0), domain, 4000, 5);
    const auto bundle = simulate_paths(coeffs, one(x0), domain, TimeGrid{t_max, 512}, 4000, 5);
    CHECK(bundle.censored_fraction() < 1e-3);
}

TEST_CASE("determinism across worker counts") {
    const auto coeffs = SDECoefficients::constant_1d(0.1, 0.7);
    const auto domain = Domain::interval(0.0, 2.0);
    const double x0 = 0.8;
    SimulateOptions a, b;
    a.bridge_correction = b.bridge_correction = true;
    a.n_threads = 1;
    b.n_threads = 4;
    const auto ba = simulate_paths(coeffs, one(x0), domain, TimeGrid{2.0, 100}, 257, 7, a);
    const auto bb = simulate_paths(coeffs, one(x0), domain, TimeGrid{2.0, 100}, 257, 7, b);
    for (std::size_t p = 0; p < ba.n_paths; ++p) {
        CHECK(ba.exit_S[p].exited == bb.exit_S[p].exited);
        CHECK(ba.exit_S[p].index == bb.exit_S[p].index);
        CHECK(ba.exit_S[p].time == bb.exit_S[p].time);
        for (std::size_t i = 0; i <= 100; i += 17)
            CHECK(ba.state(p, i)[0] == bb.state(p, i)[0]);
    }
}

TEST_CASE("checkpointed storage reproduces the full-storage bundle") {
    const auto coeffs = SDECoefficients::constant_1d(0.0, 1.0);
    const auto domain = Domain::interval(0.0, 2.0);
    const double x0 = 1.0;
    SimulateOptions full, tiny;
    full.bridge_correction = tiny.bridge_correction = true;
    tiny.memory_budget_mb = 0;  // force checkpointing
    const TimeGrid grid{2.0, 333};
    const auto bf = simulate_paths(coeffs, one(x0), domain, grid, 101, 13, full);
    const auto bc = simulate_paths(coeffs, one(x0), domain, grid, 101, 13, tiny);
    REQUIRE(!bf.checkpointed());
    REQUIRE(bc.checkpointed());

    for (std::size_t p = 0; p < 101; p += 7) {
        for (std::size_t i = 0; i <= 333; i += 11) {
            CHECK(bf.state(p, i)[0] == bc.state(p, i)[0]);
        }
        CHECK(bf.exit_S[p].exited == bc.exit_S[p].exited);
        CHECK(bf.exit_S[p].time == bc.exit_S[p].time);
    }

    // cursors agree in both directions
    auto cf = bf.backward_cursor();
    auto cc = bc.backward_cursor();
    while (!cf.done() && !cc.done()) {
        const auto pf = cf.plane();
        const auto pc = cc.plane();
        REQUIRE(pf.size() == pc.size());
        for (std::size_t j = 0; j < pf.size(); j += 29) CHECK(pf[j] == pc[j]);
        cf.advance();
        cc.advance();
    }
    CHECK(cf.done());
    CHECK(cc.done());
}

TEST_CASE("joint exits and the tie rule") {
    ExitInfo s, t;
    s.exited = true;
    s.index = 20;
    s.time = 0.20;
    t.exited = true;
    t.index = 10;
    t.time = 0.10;
    CHECK(tau_le_S(s, t));
    t.time = 0.20;  // tie resolves toward tau <= S
    CHECK(tau_le_S(s, t));
    t.exited = false;
    CHECK(!tau_le_S(s, t));

    // independent identical problems: P(tau <= S) is about 1/2 by symmetry
    const auto coeffs = SDECoefficients::constant_1d(0.0, 1.0);
    const auto domain = Domain::interval(0.0, 2.0);
    const double x0 = 1.0;
    SimulateOptions opts;
    opts.bridge_correction = true;
    const std::size_t n = 40000;
    auto bundle = simulate_paths(coeffs, one(x0), domain, TimeGrid{8.0, 800}, n, 100, opts);
    joint_exit(bundle, TauSource::independent(coeffs, {x0}, domain), 200);
    std::size_t hits = 0;
    for (std::size_t p = 0; p < n; ++p)
        if (tau_le_S(bundle.exit_S[p], (*bundle.exit_tau)[p])) ++hits;
    const double frac = static_cast<double>(hits) / n;
    const double se = std::sqrt(0.25 / n);
    CHECK(std::abs(frac - 0.5) <= 3.0 * se + 2.0 * bundle.grid.dt());
}

TEST_CASE("joint exit from a second bundle requires matching grids") {
    const auto coeffs = SDECoefficients::constant_1d(0.0, 1.0);
    const auto domain = Domain::interval(0.0, 2.0);
    const double x0 = 1.0;
    auto main = simulate_paths(coeffs, one(x0), domain, TimeGrid{2.0, 100}, 16, 1);
    const auto other = simulate_paths(coeffs, one(x0), domain, TimeGrid{2.0, 50}, 16, 2);
    CHECK_THROWS_AS(joint_exit(main, TauSource::from_bundle(other), 0), std::invalid_argument);
    const auto matching = simulate_paths(coeffs, one(x0), domain, TimeGrid{2.0, 100}, 16, 2);
    joint_exit(main, TauSource::from_bundle(matching), 0);
    CHECK(main.exit_tau.has_value());
}

TEST_CASE("bundle dump round-trips") {
    const auto coeffs = SDECoefficients::constant_1d(0.0, 1.0);
    const auto domain = Domain::interval(0.0, 2.0);
    const double x0 = 1.0;
    SimulateOptions opts;
    opts.bridge_correction = true;
    auto bundle = simulate_paths(coeffs, one(x0), domain, TimeGrid{2.0, 64}, 33, 77, opts);
    joint_exit(bundle, TauSource::independent(coeffs, {x0}, domain), 78);

    const auto file = std::filesystem::temp_directory_path() / "bsde_bundle_test.bin";
    save_bundle(bundle, file);
    const auto loaded = load_bundle(file);
    std::filesystem::remove(file);

    CHECK(loaded.n_paths == bundle.n_paths);
    CHECK(loaded.grid.n_steps == bundle.grid.n_steps);
    CHECK(loaded.seed == bundle.seed);
    REQUIRE(loaded.exit_tau.has_value());
    for (std::size_t p = 0; p < bundle.n_paths; p += 5) {
        CHECK(loaded.exit_S[p].time == bundle.exit_S[p].time);
        CHECK((*loaded.exit_tau)[p].time == (*bundle.exit_tau)[p].time);
        for (std::size_t i = 0; i <= 64; i += 13)
            CHECK(loaded.state(p, i)[0] == bundle.state(p, i)[0]);
    }
}

TEST_CASE("paths stay inside until the recorded exit") {
    const auto coeffs = SDECoefficients::constant_1d(0.0, 1.0);
    const auto domain = Domain::interval(0.0, 2.0);
    const double x0 = 1.0;
    const auto bundle = simulate_paths(coeffs, one(x0), domain, TimeGrid{4.0, 400}, 50, 3);
    for (std::size_t p = 0; p < bundle.n_paths; ++p) {
        const auto& e = bundle.exit_S[p];
        if (!e.exited) continue;
        for (std::size_t i = 0; i < e.index; ++i) {
            CHECK(domain.signed_distance(bundle.state(p, i)) > 0.0);
        }
        CHECK(std::abs(domain.signed_distance(e.state)) <= 1e-9);
    }
}
