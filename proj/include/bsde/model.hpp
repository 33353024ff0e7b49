#pragma once

#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "bsde/errors.hpp"

namespace bsde {

// Holder conjugate p = q/(q-1) of q > 1.
double conjugate_exponent(double q);

// Blow-up exponent 2(p-1) = 2/(q-1) of the near-boundary envelope.
double blowup_exponent(double q);

// Bounded open domain with a closed-form signed distance: positive inside,
// zero on the boundary, negative outside.
struct Domain {
    enum class Kind { interval, ball, box };

    Kind kind = Kind::interval;
    std::size_t dim = 1;
    std::vector<double> a;  // interval/box: lower corner; ball: center
    std::vector<double> b;  // interval/box: upper corner; ball: b[0] = radius

    static Domain interval(double lo, double hi);
    static Domain ball(std::vector<double> center, double radius);
    static Domain box(std::vector<double> lo, std::vector<double> hi);

    double signed_distance(std::span<const double> x) const;
    bool contains(std::span<const double> x) const { return signed_distance(x) > 0.0; }
    // Nearest boundary point (first-order projection).
    std::vector<double> project_to_boundary(std::span<const double> x) const;
    double diameter() const;
};

// Generator f of the BSDE together with the structural constants of its
// monotonicity/growth conditions. eta is deterministic in time.
struct Driver {
    double q = 2.0;                          // superlinearity exponent, q > 1
    double chi = 0.0;                        // one-sided monotonicity constant
    double l_z = 0.0;                        // Lipschitz constant in z
    std::function<double(double)> eta;       // positive, bounded by eta_max
    double eta_max = 1.0;
    std::function<double(double, double, std::span<const double>)> eval;  // f(t, y, z)
    bool canonical = false;                  // eval is exactly -y|y|^{q-1}/eta(t)

    double operator()(double t, double y, std::span<const double> z) const {
        return eval(t, y, z);
    }

    // f(y) = -y|y|^{q-1} with eta == 1.
    static Driver canonical_driver(double q);
    // f(t,y) = -y|y|^{q-1}/eta(t).
    static Driver canonical_driver(double q, std::function<double(double)> eta, double eta_max);
    // f == 0 (linear-case baseline; violates the superlinear growth condition on purpose).
    static Driver zero_driver();
};

// Coefficients of the forward SDE dXi = b dt + sigma dW.
struct SDECoefficients {
    std::size_t dim = 1;
    std::function<void(std::span<const double>, std::span<double>)> drift;      // b(x), size d
    std::function<void(std::span<const double>, std::span<double>)> diffusion;  // sigma(x), d*d row-major
    double lipschitz_bound = 0.0;

    static SDECoefficients constant_1d(double b, double sigma);
    static SDECoefficients brownian(std::size_t dim);
};

// Terminal condition of the truncated problem.
struct TerminalSpec {
    enum class Kind { constant, markovian, xi1, xi2 };

    Kind kind = Kind::constant;
    double k = 0.0;  // truncation level
    std::function<double(std::span<const double>)> g;  // markovian: boundary value, may be +inf

    static TerminalSpec constant(double k);
    static TerminalSpec markovian(std::function<double(std::span<const double>)> g, double k);
    static TerminalSpec xi1(double k);
    static TerminalSpec xi2(double k);

    bool needs_tau() const { return kind == Kind::xi1 || kind == Kind::xi2; }
};

// Sampling grid for the numerical spot checks of the driver conditions.
struct SampleSpec {
    double t0 = 0.0;
    double t1 = 1.0;
    int n_t = 9;
    double y_max = 2.0;
    int n_y = 17;
    double z_max = 1.0;
    int n_z = 3;
};

struct ConditionCheck {
    std::string name;
    bool passed = true;
    double worst_violation = 0.0;
    std::string detail;  // location of the worst violating sample
};

struct ValidationReport {
    std::vector<ConditionCheck> checks;
    std::vector<std::string> notes;  // informational only (e.g. constants not computable)

    bool all_passed() const;
    const ConditionCheck& check(std::string_view name) const;
};

// Spot checks of the driver conditions (monotonicity, z-Lipschitz, superlinear
// growth, eta bounds) on the given sample grid. Failures are reported, not thrown.
ValidationReport validate_driver(const Driver& driver, const SampleSpec& spec);

}  // namespace bsde
