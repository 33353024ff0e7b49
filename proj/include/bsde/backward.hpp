#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "bsde/forward.hpp"
#include "bsde/model.hpp"

namespace bsde {

// upper bound on the basis size, so field evaluation can run allocation-free
inline constexpr std::size_t kMaxBasis = 64;

// Regression basis over the forward state: monomials of total degree <= m,
// optionally augmented with inverse powers of the boundary distance (useful
// for singular Markovian data, where global polynomials miss the blow-up).
//
// For exit problems a one-step crossing feature erfc(dist / (scale sqrt(2)))/2
// is appended: regression targets jump to the payoff on paths about to exit,
// a layer of width sigma sqrt(dt) that global polynomials cannot represent
// without ringing at the scale of the truncation level. The feature is
// dropped automatically (rank fallback) at steps where no path is near the
// boundary.
class Basis {
public:
    enum class Kind { poly_state, poly_state_dist };

    Basis() = default;
    Basis(Kind kind, int degree, std::size_t dim, std::optional<Domain> domain,
          double layer_scale = 0.0);

    std::size_t size() const { return n_funcs_; }
    void eval(std::span<const double> x, std::span<double> out) const;
    Kind kind() const { return kind_; }
    int degree() const { return degree_; }
    // prefix lengths to try when the Gram matrix is rank deficient
    const std::vector<std::size_t>& fallback_sizes() const { return fallback_sizes_; }

private:
    Kind kind_ = Kind::poly_state;
    int degree_ = 3;
    std::size_t dim_ = 1;
    std::size_t n_funcs_ = 4;
    std::optional<Domain> domain_;
    double layer_scale_ = 0.0;
    std::vector<std::vector<int>> powers_;  // multi-indices, |alpha| <= degree
    std::vector<std::size_t> fallback_sizes_;
};

struct RegressionConfig {
    Basis::Kind basis = Basis::Kind::poly_state;
    int degree = 3;
    double ridge = 0.0;
    bool estimate_z = false;
    // backward-Euler substeps of the driver integration per grid step;
    // > 1 sharpens the stiff terminal layer of large truncation levels
    int driver_substeps = 8;
    // append the one-step exit-layer feature for bundles with a boundary
    bool exit_layer_feature = true;
    std::size_t n_threads = 0;
};

// Per-step regression output. For the non-Markovian terminal values the
// active paths are fitted separately by tau-regime: `coeffs` covers paths
// whose tau has not fired yet, `fired_coeffs` those where it has. `cap` is
// the largest regression target seen at the step; a conditional-expectation
// estimate is never trusted above it (extrapolation guard).
struct StepFit {
    std::vector<double> coeffs;
    std::vector<double> fired_coeffs;
    bool has_fired = false;
    double cap = 0.0;
};

// Regression-estimated Y (optionally Z) on the time grid plus the scalar Y_0.
struct ValueField {
    double y0 = 0.0;
    double y0_stderr = 0.0;
    TimeGrid grid;
    Basis basis;
    TerminalSpec::Kind spec_kind = TerminalSpec::Kind::constant;
    double k = 0.0;
    std::vector<StepFit> steps;               // fits at steps 0 .. n_steps-1
    std::vector<std::vector<double>> z_steps; // optional: dim * basis coefficients per step
    std::vector<uint32_t> active_counts;      // active paths entering each step's regression
    std::vector<double> payoffs;              // realized terminal payoff per path
    double censored_fraction = 0.0;
    double censor_bias_bound = 0.0;      // censored_fraction * k
    std::size_t regression_floor = 0;    // below this count steps were propagated pathwise

    bool has_z() const { return !z_steps.empty(); }
    double eval_y(std::size_t step, std::span<const double> x, bool tau_fired = false) const;
    double eval_z(std::size_t step, std::span<const double> x, std::size_t component) const;
    // Realized payoff at/after the path's exit step, regression value before.
    double path_value(const PathBundle& bundle, std::size_t path, std::size_t step) const;
};

// Realized terminal payoff of a path under the truncated terminal condition.
double terminal_payoff(const TerminalSpec& spec, const ExitInfo& exit_S,
                       const ExitInfo* exit_tau);

// One backward-Euler step of y' = -f: solves y - dt f(t, y, 0) = c with the
// superlinear part implicit, by safeguarded Newton with bisection fallback on
// [0, max(c, 0)] (bracket grown when the driver is positive at zero).
double implicit_driver_step(double c, const Driver& driver, double dt, double t);

// Least-squares Monte Carlo sweep for the truncated BSDE on [0, S].
ValueField lsmc_solve(const PathBundle& bundle, const Driver& driver, const TerminalSpec& spec,
                      const RegressionConfig& reg);

struct LadderResult {
    std::vector<double> k_list;
    std::vector<ValueField> fields;
    std::vector<double> y0_sequence;
    std::vector<double> y0_stderr;
    double monotone_violation = 0.0;  // most negative consecutive increment (0 when monotone)
};

// Runs lsmc_solve for every truncation level on the same bundle (common
// random numbers), so the monotone limit construction is testable above the
// Monte Carlo noise.
LadderResult truncation_ladder(const PathBundle& bundle, const Driver& driver,
                               const std::function<TerminalSpec(double)>& spec_family,
                               std::span<const double> k_list, const RegressionConfig& reg);

}  // namespace bsde
