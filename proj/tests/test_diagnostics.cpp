#include <doctest.h>

#include <cmath>

#include "bsde/diagnostics.hpp"
#include "bsde/errors.hpp"
#include "bsde/oracle.hpp"

using namespace bsde;
using namespace bsde::diagnostics;

namespace {

std::span<const double> one(const double& x) { return std::span<const double>(&x, 1); }

PathBundle joint_bundle(std::size_t n_paths, std::size_t n_steps, uint64_t seed,
                        double t_max = 8.0) {
    const auto coeffs = SDECoefficients::constant_1d(0.0, 1.0);
    const auto domain = Domain::interval(0.0, 2.0);
    const double x0 = 1.0;
    SimulateOptions opts;
    opts.bridge_correction = true;
    auto bundle =
        simulate_paths(coeffs, one(x0), domain, TimeGrid{t_max, n_steps}, n_paths, seed, opts);
    joint_exit(bundle, TauSource::independent(coeffs, {x0}, domain), seed + 1);
    return bundle;
}

}  // namespace

TEST_CASE("xi1 and xi2 payoffs partition the truncation level") {
    const auto bundle = joint_bundle(5000, 300, 7);
    const auto s1 = TerminalSpec::xi1(11.0);
    const auto s2 = TerminalSpec::xi2(11.0);
    for (std::size_t p = 0; p < bundle.n_paths; ++p) {
        if (!bundle.exit_S[p].exited) continue;
        const double sum = terminal_payoff(s1, bundle.exit_S[p], &(*bundle.exit_tau)[p]) +
                           terminal_payoff(s2, bundle.exit_S[p], &(*bundle.exit_tau)[p]);
        CHECK(sum == 11.0);
    }
}

TEST_CASE("continuity curve decays on the vanishing event (xi2)") {
    const auto bundle = joint_bundle(20000, 500, 17);
    const auto field = lsmc_solve(bundle, Driver::canonical_driver(3.0), TerminalSpec::xi2(50.0),
                                  RegressionConfig{});
    const auto curve = continuity_curve(field, bundle, EventKind::tau_le_S);
    const auto* first = curve.first_ok();
    const auto* last = curve.last_ok();
    REQUIRE(first != nullptr);
    REQUIRE(last != nullptr);
    CHECK(first->mean > 0.0);
    CHECK(last->mean <= 0.25 * first->mean);  // desk-scale decay; tighter at full scale
}

TEST_CASE("continuity curve on an empty event is all low-sample") {
    auto bundle = joint_bundle(500, 100, 23);
    // tau never fires: the event {tau <= S} is empty
    std::vector<ExitInfo> taus(bundle.n_paths);
    for (auto& t : taus) {
        t.exited = false;
        t.index = bundle.grid.n_steps;
        t.time = bundle.grid.t_max;
        t.state = {0.0};
    }
    bundle.exit_tau = std::move(taus);
    const auto field = lsmc_solve(bundle, Driver::canonical_driver(3.0), TerminalSpec::xi2(5.0),
                                  RegressionConfig{});
    const auto curve = continuity_curve(field, bundle, EventKind::tau_le_S);
    CHECK(curve.first_ok() == nullptr);
    for (const auto& p : curve.points) CHECK(p.low_sample);
}

TEST_CASE("zero truncation level gives the zero curve") {
    const auto bundle = joint_bundle(2000, 100, 29);
    const auto field = lsmc_solve(bundle, Driver::canonical_driver(3.0), TerminalSpec::xi2(0.0),
                                  RegressionConfig{});
    const auto curve = continuity_curve(field, bundle, EventKind::tau_le_S);
    for (const auto& p : curve.points) CHECK(p.mean == 0.0);
}

TEST_CASE("curves are pure functions of field and bundle") {
    const auto bundle = joint_bundle(3000, 200, 31);
    const auto field = lsmc_solve(bundle, Driver::canonical_driver(3.0), TerminalSpec::xi2(10.0),
                                  RegressionConfig{});
    const auto a = continuity_curve(field, bundle, EventKind::tau_le_S);
    const auto b = continuity_curve(field, bundle, EventKind::tau_le_S);
    REQUIRE(a.points.size() == b.points.size());
    for (std::size_t i = 0; i < a.points.size(); ++i) {
        CHECK(a.points[i].mean == b.points[i].mean);
        CHECK(a.points[i].stderr_ == b.points[i].stderr_);
    }
}

TEST_CASE("moment estimate with tau fixed at zero is exact") {
    auto bundle = joint_bundle(300, 100, 37);
    std::vector<ExitInfo> taus(bundle.n_paths);
    for (auto& t : taus) {
        t.exited = true;
        t.index = 0;
        t.time = 0.0;
        t.state = {1.0};
    }
    bundle.exit_tau = std::move(taus);
    const double q = 3.0, varrho = 1.5, c_fit = 2.0;
    const auto report = moment_estimate_xi1(bundle, q, varrho, c_fit);
    // dist(x0) = 1, so every sample equals c_fit^varrho
    CHECK(report.estimate == doctest::Approx(std::pow(c_fit, varrho)).epsilon(1e-12));
    CHECK(!report.divergence_suspect);
}

TEST_CASE("moment estimate flags the divergent regime") {
    const auto bundle = joint_bundle(20000, 500, 41);
    // q=4, rho=1.2 satisfies q > 1 + 2 rho: stable
    const auto stable = moment_estimate_xi1(bundle, 4.0, 1.2, 1.0);
    CHECK(!stable.divergence_suspect);
    // q=2, rho=2 violates it: the trimmed estimate collapses
    const auto heavy = moment_estimate_xi1(bundle, 2.0, 2.0, 1.0);
    CHECK(heavy.divergence_suspect);
}

TEST_CASE("moment estimate with no event samples is an error") {
    auto bundle = joint_bundle(100, 50, 43);
    std::vector<ExitInfo> taus(bundle.n_paths);
    for (auto& t : taus) {
        t.exited = false;
        t.index = bundle.grid.n_steps;
        t.time = bundle.grid.t_max;
        t.state = {0.0};
    }
    bundle.exit_tau = std::move(taus);
    CHECK_THROWS_AS(moment_estimate_xi1(bundle, 3.0, 1.5, 1.0), NumericalError);
}

TEST_CASE("ko fit rejects bundles without a boundary") {
    const auto coeffs = SDECoefficients::constant_1d(0.0, 0.0);
    const double x0 = 1.0;
    const auto free_bundle = simulate_free_paths(coeffs, one(x0), TimeGrid{1.0, 50}, 8, 3);
    const auto field = lsmc_solve(free_bundle, Driver::canonical_driver(2.0),
                                  TerminalSpec::constant(5.0), RegressionConfig{});
    CHECK_THROWS_AS(ko_bound_fit(field, free_bundle, 2.0), std::invalid_argument);
}

TEST_CASE("ko fit is stable across the truncation ladder") {
    const auto bundle = joint_bundle(10000, 400, 47);
    const Driver driver = Driver::canonical_driver(3.0);
    std::vector<double> hats;
    for (double k : {5.0, 10.0, 20.0}) {
        const auto field = lsmc_solve(bundle, driver, TerminalSpec::constant(k),
                                      RegressionConfig{});
        hats.push_back(ko_bound_fit(field, bundle, 3.0).c_hat);
    }
    for (std::size_t i = 1; i < hats.size(); ++i) {
        CHECK(std::abs(hats[i] - hats[i - 1]) / hats[i - 1] < 0.2);
    }
}

TEST_CASE("profile oracle reproduces the boundary-asymptotics constant") {
    // replacing Yhat by the infinite profile pins the envelope constant near 1 at q = 3
    const auto profile = oracle::ExitProfile::infinite(3.0, 2.0);
    double c_hat = 0.0;
    for (double d = 1e-4; d <= 0.1; d *= 1.3) {
        const double v = oracle::profile_v(d, profile);
        c_hat = std::max(c_hat, v * std::pow(d, blowup_exponent(3.0)));
    }
    CHECK(c_hat == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("bounded before the approach times") {
    const auto bundle = joint_bundle(5000, 300, 53);
    const auto field = lsmc_solve(bundle, Driver::canonical_driver(3.0),
                                  TerminalSpec::constant(5.0), RegressionConfig{});
    const auto ko = ko_bound_fit(field, bundle, 3.0);
    const std::vector<int> ns = {1, 2, 4, 8};
    const auto entries = bounded_before_sn(field, bundle, ns, 3.0, ko.c_hat);
    REQUIRE(entries.size() == 4);
    CHECK(entries[0].vacuous);  // dist(x0) = 1 <= 1/1
    double prev_max = 0.0;
    for (const auto& e : entries) {
        CHECK(!e.violated);
        CHECK(e.max_y >= prev_max);  // nested windows
        prev_max = e.max_y;
    }
}

TEST_CASE("weighted Z integral") {
    // frozen paths that drift across the interval: Z is identically zero
    {
        const auto coeffs = SDECoefficients::constant_1d(0.2, 0.0);
        const auto domain = Domain::interval(0.0, 2.0);
        const double x0 = 1.0;
        const auto bundle =
            simulate_paths(coeffs, one(x0), domain, TimeGrid{8.0, 200}, 64, 5);
        RegressionConfig reg;
        reg.estimate_z = true;
        const auto field = lsmc_solve(bundle, Driver::canonical_driver(2.0),
                                      TerminalSpec::constant(5.0), reg);
        const auto z = weighted_z_integral(field, bundle, 2.0, 1.5);
        CHECK(z.estimate == doctest::Approx(0.0).epsilon(1e-20));
    }
    // missing Z estimates are a parameter error
    {
        const auto bundle = joint_bundle(500, 100, 59);
        const auto field = lsmc_solve(bundle, Driver::canonical_driver(3.0),
                                      TerminalSpec::constant(5.0), RegressionConfig{});
        CHECK_THROWS_AS(weighted_z_integral(field, bundle, 3.0, 1.5), std::invalid_argument);
    }
    // linear case: martingale with constant terminal, finite and stable in k
    {
        const auto bundle = joint_bundle(4000, 200, 61);
        RegressionConfig reg;
        reg.estimate_z = true;
        const Driver zero = Driver::zero_driver();
        const auto f1 = lsmc_solve(bundle, zero, TerminalSpec::constant(5.0), reg);
        const auto f2 = lsmc_solve(bundle, zero, TerminalSpec::constant(10.0), reg);
        const auto z1 = weighted_z_integral(f1, bundle, 3.0, 1.5);
        const auto z2 = weighted_z_integral(f2, bundle, 3.0, 1.5);
        CHECK(std::isfinite(z1.estimate));
        // payoff doubles, so Z doubles and the integral quadruples
        CHECK(z2.estimate == doctest::Approx(4.0 * z1.estimate).epsilon(0.05));
    }
}
