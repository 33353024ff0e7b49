#pragma once

#include "bsde/model.hpp"

namespace bsde::oracle {

// Deterministic blow-up profile y_t = ((q-1)(T-t))^{1-p}, p the conjugate of q.
double blowup_profile(double q, double T, double t);

// Solution of y' = y^q with y_T = k: (k^{1-q} + (q-1)(T-t))^{-1/(q-1)}.
// Increases to blowup_profile as k -> infinity.
double truncated_profile(double q, double T, double k, double t);

// Theta transform for the canonical generator g(y) = -y^q/eta:
// theta(x) = eta * x^{1-q}/(q-1), and its exact inverse.
double theta(double x, double q, double eta);
double theta_inv(double u, double q, double eta);

// Two-sided exit construction of the interval problem.
// bmx(v, v_l, q) = v_l^{(1-q)/2} sqrt((q+1)/4) * int_1^{v/v_l} (u^{q+1}-1)^{-1/2} du,
// the distance from the trough at which the symmetric profile reaches value v.
double bmx(double v, double v_l, double q);

// bmx with infinite upper limit; strictly decreasing in v_l, with
// bmL -> infinity as v_l -> 0+ and bmL -> 0 as v_l -> infinity.
double bmL(double v_l, double q);

// Unique v* with bmL(v*) = L/2 (trough value of the fully singular profile).
double solve_vstar(double L, double q);

// Root v_n < v* of bmx(n, v) = L/2 (trough value of the profile with
// boundary value n); increasing in n with limit v*.
double solve_vn(double n, double L, double q);

// Symmetric profile on [0, L]: trough value v_l at the midpoint, boundary
// value n (finite) or blow-up (infinite).
struct ExitProfile {
    enum class Kind { finite, infinite };

    double q = 3.0;
    double L = 2.0;
    double v_l = 1.0;  // value at the midpoint
    Kind kind = Kind::infinite;
    double n = 0.0;  // boundary value for the finite kind

    static ExitProfile finite(double q, double L, double n);
    static ExitProfile infinite(double q, double L);
};

// Value of the profile at position x in [0, L]; inverse of bmx at |x - L/2|.
// For the infinite profile the boundary value is +infinity.
double profile_v(double x, const ExitProfile& profile);

// Envelope C * dist^{-2(p-1)} controlling blow-up near the boundary.
double keller_osserman_envelope(double dist_value, double C, double q);

// Independent special-function route for int_1^inf (u^{q+1}-1)^{-1/2} du
// = B(1/2 - 1/(q+1), 1/2)/(q+1), used to cross-check the quadrature.
double tail_integral_beta(double q);

}  // namespace bsde::oracle
