#include "bsde/pde.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "bsde/errors.hpp"
#include "bsde/linalg.hpp"
#include "bsde/oracle.hpp"

namespace bsde::pde {

namespace {

double residual_inf_of(const std::vector<double>& v, double q, double h) {
    const std::size_t m = v.size() - 2;
    const double inv_h2 = 1.0 / (h * h);
    double worst = 0.0;
    for (std::size_t i = 1; i <= m; ++i) {
        const double r = 0.5 * (v[i - 1] - 2.0 * v[i] + v[i + 1]) * inv_h2 - std::pow(v[i], q);
        worst = std::max(worst, std::abs(r));
    }
    return worst;
}

void mirror(std::vector<double>& v) {
    const std::size_t n = v.size();
    for (std::size_t i = 0; i < n / 2; ++i) {
        const double avg = 0.5 * (v[i] + v[n - 1 - i]);
        v[i] = avg;
        v[n - 1 - i] = avg;
    }
}

}  // namespace

double FDSolution::midpoint_value() const {
    const std::size_t n = values.size();
    if (n % 2 == 1) return values[n / 2];
    return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

FDSolution fd_solve_1d(double q, double L, double n, const FDGrid& grid,
                       const std::vector<double>* v_init) {
    if (!(q > 1.0)) throw std::invalid_argument("fd_solve_1d: q must exceed 1");
    if (!(L > 0.0)) throw std::invalid_argument("fd_solve_1d: L must be positive");
    if (!(n >= 0.0)) throw std::invalid_argument("fd_solve_1d: boundary value must be >= 0");
    if (grid.m < 3) throw std::invalid_argument("fd_solve_1d: grid needs m >= 3");
    if (grid.L != L) throw std::invalid_argument("fd_solve_1d: grid length disagrees with L");

    const std::size_t m = grid.m;
    const double h = grid.h();
    const double inv_h2 = 1.0 / (h * h);
    const double tol = 1e-10 * (1.0 + std::pow(n, q));

    FDSolution sol;
    sol.grid = grid;
    sol.boundary_value = n;
    sol.values.assign(m + 2, 0.0);
    sol.values.front() = n;
    sol.values.back() = n;

    if (n == 0.0) {
        sol.residual_inf = 0.0;
        return sol;  // zero is the exact solution
    }

    if (v_init != nullptr) {
        if (v_init->size() != m + 2)
            throw std::invalid_argument("fd_solve_1d: v_init size disagrees with the grid");
        sol.values = *v_init;
        sol.values.front() = n;
        sol.values.back() = n;
        for (auto& v : sol.values) v = std::max(v, 0.0);
    } else {
        const double trough = oracle::solve_vn(n, L, q);
        const double c = std::min(n, trough);
        for (std::size_t i = 1; i <= m; ++i) sol.values[i] = c;
    }

    std::vector<double>& v = sol.values;
    std::vector<double> resid(m), lower(m), diag(m), upper(m), trial(m + 2);
    double r_norm = residual_inf_of(v, q, h);

    for (int it = 0; it < 200; ++it) {
        if (r_norm <= tol) {
            sol.newton_iters = it;
            sol.residual_inf = residual_inf_of(v, q, h);
            return sol;
        }
        for (std::size_t i = 1; i <= m; ++i) {
            resid[i - 1] =
                0.5 * (v[i - 1] - 2.0 * v[i] + v[i + 1]) * inv_h2 - std::pow(v[i], q);
            lower[i - 1] = 0.5 * inv_h2;
            upper[i - 1] = 0.5 * inv_h2;
            diag[i - 1] = -inv_h2 - q * std::pow(v[i], q - 1.0);
        }
        std::vector<double> rhs(m);
        for (std::size_t i = 0; i < m; ++i) rhs[i] = -resid[i];
        linalg::tridiag_solve(lower, diag, upper, rhs);

        double lambda = 1.0;
        bool improved = false;
        for (int bt = 0; bt < 40; ++bt) {
            trial = v;
            for (std::size_t i = 1; i <= m; ++i)
                trial[i] = std::max(v[i] + lambda * rhs[i - 1], 0.0);
            mirror(trial);
            const double r_trial = residual_inf_of(trial, q, h);
            if (r_trial < r_norm) {
                v = trial;
                r_norm = r_trial;
                improved = true;
                break;
            }
            lambda *= 0.5;
        }
        if (!improved)
            throw NumericalError("fd_solve_1d: Newton stalled at residual " +
                                 std::to_string(r_norm));
    }
    throw NumericalError("fd_solve_1d: Newton did not converge within 200 damped steps, last "
                         "residual " +
                         std::to_string(r_norm));
}

std::vector<FDSolution> boundary_ladder_fd(double q, double L, std::span<const double> n_list,
                                           const FDGrid& grid) {
    for (std::size_t i = 1; i < n_list.size(); ++i)
        if (!(n_list[i] > n_list[i - 1]))
            throw std::invalid_argument("boundary_ladder_fd: n_list must be increasing");
    std::vector<FDSolution> out;
    const std::vector<double>* warm = nullptr;
    for (double n : n_list) {
        std::vector<double> init;
        if (warm != nullptr) {
            init = *warm;
            init.front() = n;
            init.back() = n;
        }
        out.push_back(fd_solve_1d(q, L, n, grid, warm ? &init : nullptr));
        warm = &out.back().values;
    }
    return out;
}

double residual_check(const FDSolution& solution, double q) {
    if (solution.values.size() < 3)
        throw std::invalid_argument("residual_check: solution too small");
    return residual_inf_of(solution.values, q, solution.grid.h());
}

}  // namespace bsde::pde
