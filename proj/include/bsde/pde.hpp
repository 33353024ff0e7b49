#pragma once

#include <span>
#include <vector>

namespace bsde::pde {

// Uniform grid on [0, L] with m interior points, h = L/(m+1).
struct FDGrid {
    double L = 2.0;
    std::size_t m = 199;

    double h() const { return L / static_cast<double>(m + 1); }
    double x(std::size_t i) const { return h() * static_cast<double>(i); }  // i in [0, m+1]
};

struct FDSolution {
    FDGrid grid;
    std::vector<double> values;  // m+2 entries including both boundary values
    double boundary_value = 0.0;
    int newton_iters = 0;
    double residual_inf = 0.0;

    double midpoint_value() const;
};

// Damped Newton solve of (1/2) v'' = v^q on (0, L) with Dirichlet data n on
// both sides; iterates are clipped to v >= 0 and mirrored (the problem is
// symmetric about L/2). Converged when max |R| <= 1e-10 (1 + n^q).
FDSolution fd_solve_1d(double q, double L, double n, const FDGrid& grid,
                       const std::vector<double>* v_init = nullptr);

// Warm-started continuation along increasing boundary values.
std::vector<FDSolution> boundary_ladder_fd(double q, double L, std::span<const double> n_list,
                                           const FDGrid& grid);

// Recomputes max |R_i| from the stored values, independent of the solver path.
double residual_check(const FDSolution& solution, double q);

}  // namespace bsde::pde
