#include <doctest.h>

#include <cmath>

#include "bsde/backward.hpp"
#include "bsde/oracle.hpp"
#include "bsde/pde.hpp"

using namespace bsde;
using namespace bsde::pde;

TEST_CASE("fd solve matches the profile oracle") {
    const FDGrid grid{2.0, 499};
    const auto sol = fd_solve_1d(3.0, 2.0, 5.0, grid);
    const auto profile = oracle::ExitProfile::finite(3.0, 2.0, 5.0);
    double max_err = 0.0;
    for (std::size_t i = 0; i <= grid.m + 1; ++i) {
        max_err = std::max(max_err, std::abs(sol.values[i] - oracle::profile_v(grid.x(i),
                                                                               profile)));
    }
    CHECK(max_err <= 2e-2);
    CHECK(sol.residual_inf <= 1e-10 * (1.0 + std::pow(5.0, 3.0)));

    // second-order convergence under mesh halving
    const FDGrid coarse{2.0, 249};
    const auto sol2 = fd_solve_1d(3.0, 2.0, 5.0, coarse);
    double max_err2 = 0.0;
    for (std::size_t i = 0; i <= coarse.m + 1; ++i) {
        max_err2 = std::max(max_err2,
                            std::abs(sol2.values[i] - oracle::profile_v(coarse.x(i), profile)));
    }
    CHECK(max_err2 / max_err >= 3.0);
    CHECK(max_err2 / max_err <= 5.0);
}

TEST_CASE("zero boundary data gives the zero solution") {
    const FDGrid grid{2.0, 99};
    const auto sol = fd_solve_1d(3.0, 2.0, 0.0, grid);
    for (double v : sol.values) CHECK(v == 0.0);
    CHECK(sol.residual_inf == 0.0);
}

TEST_CASE("solution is symmetric and below the boundary value") {
    const FDGrid grid{2.0, 400};  // even interior count exercises the midpoint interpolation
    const auto sol = fd_solve_1d(2.0, 2.0, 7.0, grid);
    const std::size_t n = sol.values.size();
    for (std::size_t i = 0; i < n / 2; ++i) {
        CHECK(std::abs(sol.values[i] - sol.values[n - 1 - i]) <= 1e-10);
    }
    for (std::size_t i = 1; i <= grid.m; ++i) {
        CHECK(sol.values[i] <= 7.0 + 1e-12);  // maximum principle
    }
}

TEST_CASE("residual recompute matches the solver") {
    const FDGrid grid{2.0, 199};
    const auto sol = fd_solve_1d(3.0, 2.0, 5.0, grid);
    CHECK(std::abs(residual_check(sol, 3.0) - sol.residual_inf) <= 1e-12);

    // a midpoint perturbation bumps the residual by about delta / h^2
    FDSolution bumped = sol;
    bumped.values[(grid.m + 1) / 2] += 1e-3;
    const double jump = residual_check(bumped, 3.0);
    const double scale = 1e-3 / (grid.h() * grid.h());
    CHECK(jump >= 0.2 * scale);
    CHECK(jump <= 5.0 * scale);
}

TEST_CASE("boundary ladder is monotone with limit v*") {
    const FDGrid grid{2.0, 799};
    const std::vector<double> ns = {5.0, 50.0, 500.0, 5000.0};
    const auto rungs = boundary_ladder_fd(3.0, 2.0, ns, grid);
    REQUIRE(rungs.size() == 4);

    double prev_mid = 0.0;
    for (std::size_t i = 0; i < rungs.size(); ++i) {
        const double mid = rungs[i].midpoint_value();
        CHECK(mid > prev_mid);
        prev_mid = mid;
        if (i > 0) {
            double worst = 0.0;
            for (std::size_t j = 1; j <= grid.m; ++j)
                worst = std::min(worst, rungs[i].values[j] - rungs[i - 1].values[j]);
            CHECK(worst >= -1e-8);
        }
    }
    const double v_star = oracle::solve_vstar(2.0, 3.0);
    CHECK(std::abs(rungs.back().midpoint_value() - v_star) <= 1e-2);
}

TEST_CASE("single-rung ladder equals a direct solve") {
    const FDGrid grid{2.0, 149};
    const std::vector<double> ns = {5.0};
    const auto rungs = boundary_ladder_fd(3.0, 2.0, ns, grid);
    const auto direct = fd_solve_1d(3.0, 2.0, 5.0, grid);
    REQUIRE(rungs.size() == 1);
    for (std::size_t i = 0; i < direct.values.size(); ++i)
        CHECK(rungs[0].values[i] == direct.values[i]);
}

TEST_CASE("Monte Carlo solve agrees with the elliptic solve at the start point") {
    // Feynman-Kac consistency: the LSMC value at x0 matches the PDE solution
    const auto coeffs = SDECoefficients::constant_1d(0.0, 1.0);
    const auto domain = Domain::interval(0.0, 2.0);
    const double x0 = 1.0;
    SimulateOptions opts;
    opts.bridge_correction = true;
    const auto bundle = simulate_paths(coeffs, std::span<const double>(&x0, 1), domain,
                                       TimeGrid{8.0, 1000}, 30000, 17, opts);
    const auto field = lsmc_solve(bundle, Driver::canonical_driver(3.0),
                                  TerminalSpec::constant(5.0), RegressionConfig{});
    const FDGrid grid{2.0, 499};
    const auto sol = fd_solve_1d(3.0, 2.0, 5.0, grid);
    CHECK(field.y0 == doctest::Approx(sol.midpoint_value()).epsilon(0.05));
}

TEST_CASE("parameter validation") {
    const FDGrid grid{2.0, 99};
    CHECK_THROWS_AS(fd_solve_1d(0.9, 2.0, 5.0, grid), std::invalid_argument);
    CHECK_THROWS_AS(fd_solve_1d(3.0, 2.0, -1.0, grid), std::invalid_argument);
    CHECK_THROWS_AS(fd_solve_1d(3.0, 3.0, 5.0, grid), std::invalid_argument);
    const std::vector<double> bad = {5.0, 4.0};
    CHECK_THROWS_AS(boundary_ladder_fd(3.0, 2.0, bad, grid), std::invalid_argument);
}
