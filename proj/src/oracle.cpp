#include "bsde/oracle.hpp"

#include <array>
#include <cmath>
#include <limits>

#include "bsde/errors.hpp"

namespace bsde::oracle {

namespace {

// 32-point Gauss-Legendre rule on [-1, 1], nodes by Newton iteration on the
// Legendre recurrence (computed once).
struct GaussRule {
    std::array<double, 32> node{};
    std::array<double, 32> weight{};

    GaussRule() {
        constexpr int n = 32;
        for (int i = 0; i < n; ++i) {
            double x = std::cos(std::numbers::pi * (i + 0.75) / (n + 0.5));
            double dp = 0.0;
            for (int it = 0; it < 100; ++it) {
                double p0 = 1.0, p1 = x;
                for (int k = 2; k <= n; ++k) {
                    const double p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n * (x * p1 - p0) / (x * x - 1.0);
                const double dx = p1 / dp;
                x -= dx;
                if (std::abs(dx) < 1e-16) break;
            }
            node[i] = x;
            weight[i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
    }
};

const GaussRule& gauss32() {
    static const GaussRule rule;
    return rule;
}

// Fixed-panel Gauss integration; the panel structure depends only on (a, b),
// keeping the evaluation smooth in the limits.
template <typename F>
double integrate_panels(F&& f, double a, double b, int n_panels) {
    const GaussRule& g = gauss32();
    double total = 0.0;
    const double w = (b - a) / n_panels;
    for (int p = 0; p < n_panels; ++p) {
        const double lo = a + p * w;
        const double mid = lo + 0.5 * w;
        double s = 0.0;
        for (int i = 0; i < 32; ++i) s += g.weight[i] * f(mid + 0.5 * w * g.node[i]);
        total += 0.5 * w * s;
    }
    return total;
}

constexpr double kTailSwitch = 10.0;  // series tail used beyond u = kTailSwitch

// int_1^{min(U, kTailSwitch)} (u^{q+1}-1)^{-1/2} du with the substitution
// u = 1 + s^2 removing the inverse-square-root endpoint singularity.
double core_integral(double U, double q) {
    const double top = std::min(U, kTailSwitch);
    if (top <= 1.0) return 0.0;
    const double s_max = std::sqrt(top - 1.0);
    auto f = [q](double s) {
        return 2.0 * s / std::sqrt(std::expm1((q + 1.0) * std::log1p(s * s)));
    };
    return integrate_panels(f, 0.0, s_max, 6);
}

// int_a^inf (u^{q+1}-1)^{-1/2} du for a >= kTailSwitch, via the binomial
// expansion of (1 - u^{-(q+1)})^{-1/2}; geometric ratio <= a^{-(q+1)}.
double tail_integral(double a, double q) {
    if (std::isinf(a)) return 0.0;
    const double r = q + 1.0;
    double coeff = 1.0;  // central binomial / 4^j
    double sum = 0.0;
    for (int j = 0; j < 80; ++j) {
        const double expo = r * (j + 0.5) - 1.0;
        const double term = coeff * std::pow(a, -expo) / expo;
        sum += term;
        if (std::abs(term) < 1e-18 * std::abs(sum)) break;
        coeff *= (2.0 * j + 1.0) / (2.0 * j + 2.0);
    }
    return sum;
}

// int_1^U (u^{q+1}-1)^{-1/2} du, U may be infinite.
double kernel_integral(double U, double q) {
    double s = core_integral(U, q);
    if (U > kTailSwitch) s += tail_integral(kTailSwitch, q) - tail_integral(U, q);
    return s;
}

double bmx_prefactor(double v_l, double q) {
    return std::pow(v_l, 0.5 * (1.0 - q)) * std::sqrt(0.25 * (q + 1.0));
}

// d bmx / dv at fixed v_l (closed form; used to polish root finds).
double bmx_dv(double v, double v_l, double q) {
    const double U = v / v_l;
    return bmx_prefactor(v_l, q) / (v_l * std::sqrt(std::pow(U, q + 1.0) - 1.0));
}

void require_q(double q) {
    if (!(q > 1.0)) throw std::invalid_argument("oracle: q must exceed 1");
}

}  // namespace

double blowup_profile(double q, double T, double t) {
    require_q(q);
    if (!(t < T)) throw std::invalid_argument("blowup_profile: requires t < T");
    const double p = conjugate_exponent(q);
    return std::pow((q - 1.0) * (T - t), 1.0 - p);
}

double truncated_profile(double q, double T, double k, double t) {
    require_q(q);
    if (!(k > 0.0)) throw std::invalid_argument("truncated_profile: k must be positive");
    if (!(t <= T)) throw std::invalid_argument("truncated_profile: requires t <= T");
    return std::pow(std::pow(k, 1.0 - q) + (q - 1.0) * (T - t), -1.0 / (q - 1.0));
}

double theta(double x, double q, double eta) {
    require_q(q);
    if (!(x > 0.0) || !(eta > 0.0)) throw std::invalid_argument("theta: requires x > 0, eta > 0");
    return eta * std::pow(x, 1.0 - q) / (q - 1.0);
}

double theta_inv(double u, double q, double eta) {
    require_q(q);
    if (!(u > 0.0) || !(eta > 0.0))
        throw std::invalid_argument("theta_inv: requires u > 0, eta > 0");
    return std::pow(u * (q - 1.0) / eta, -1.0 / (q - 1.0));
}

double bmx(double v, double v_l, double q) {
    require_q(q);
    if (!(v_l > 0.0)) throw std::invalid_argument("bmx: v_l must be positive");
    if (!(v >= v_l)) throw std::invalid_argument("bmx: requires v >= v_l");
    return bmx_prefactor(v_l, q) * kernel_integral(v / v_l, q);
}

double bmL(double v_l, double q) {
    require_q(q);
    if (!(v_l > 0.0)) throw std::invalid_argument("bmL: v_l must be positive");
    return bmx_prefactor(v_l, q) * kernel_integral(std::numeric_limits<double>::infinity(), q);
}

double solve_vstar(double L, double q) {
    require_q(q);
    if (!(L > 0.0)) throw std::invalid_argument("solve_vstar: L must be positive");
    const double target = 0.5 * L;
    // bmL is strictly decreasing in v; grow a bracket geometrically from 1.
    double lo = 1.0, hi = 1.0;
    int guard = 0;
    while (bmL(hi, q) > target) {
        hi *= 2.0;
        if (++guard > 200) throw NumericalError("solve_vstar: bracket growth failed (hi)");
    }
    guard = 0;
    while (bmL(lo, q) < target) {
        lo *= 0.5;
        if (++guard > 200) throw NumericalError("solve_vstar: bracket growth failed (lo)");
    }
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (bmL(mid, q) > target)
            lo = mid;
        else
            hi = mid;
        if (hi - lo < 1e-15 * hi) break;
    }
    const double v = 0.5 * (lo + hi);
    if (std::abs(bmL(v, q) - target) > 1e-9)
        throw NumericalError("solve_vstar: residual above tolerance");
    return v;
}

double solve_vn(double n, double L, double q) {
    require_q(q);
    if (!(n > 0.0)) throw std::invalid_argument("solve_vn: n must be positive");
    if (!(L > 0.0)) throw std::invalid_argument("solve_vn: L must be positive");
    const double target = 0.5 * L;
    // v -> bmx(n, v) decreases from +infinity (v -> 0) to 0 (v = n).
    double hi = n;
    double lo = 0.5 * n;
    int guard = 0;
    while (bmx(n, lo, q) < target) {
        lo *= 0.5;
        if (++guard > 2000)
            throw std::invalid_argument(
                "solve_vn: no root with v <= n (bmx requires v >= v_l); n too small");
    }
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (bmx(n, mid, q) > target)
            lo = mid;
        else
            hi = mid;
        if (hi - lo < 1e-15 * hi) break;
    }
    const double v = 0.5 * (lo + hi);
    if (std::abs(bmx(n, v, q) - target) > 1e-9)
        throw NumericalError("solve_vn: residual above tolerance");
    return v;
}

ExitProfile ExitProfile::finite(double q, double L, double n) {
    ExitProfile p;
    p.q = q;
    p.L = L;
    p.kind = Kind::finite;
    p.n = n;
    p.v_l = solve_vn(n, L, q);
    return p;
}

ExitProfile ExitProfile::infinite(double q, double L) {
    ExitProfile p;
    p.q = q;
    p.L = L;
    p.kind = Kind::infinite;
    p.v_l = solve_vstar(L, q);
    return p;
}

double profile_v(double x, const ExitProfile& profile) {
    const double q = profile.q;
    const double v_l = profile.v_l;
    const double half = 0.5 * profile.L;
    const double xi = std::abs(x - half);
    if (xi > half * (1.0 + 1e-12))
        throw std::invalid_argument("profile_v: x outside the profile range");
    if (xi == 0.0) return v_l;

    if (profile.kind == ExitProfile::Kind::infinite && xi >= half)
        return std::numeric_limits<double>::infinity();

    // bracket: bmx(., v_l) increases from 0 at v_l
    double lo = v_l;
    double hi = (profile.kind == ExitProfile::Kind::finite) ? profile.n : 2.0 * v_l;
    if (profile.kind == ExitProfile::Kind::infinite) {
        int guard = 0;
        while (bmx(hi, v_l, q) < xi) {
            hi *= 2.0;
            if (++guard > 400) throw NumericalError("profile_v: bracket growth failed");
        }
    }
    for (int it = 0; it < 120; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (bmx(mid, v_l, q) < xi)
            lo = mid;
        else
            hi = mid;
        if (hi - lo < 1e-12 * hi) break;
    }
    // Newton polish with the closed-form derivative; the finite-difference
    // checks downstream need the inverse accurate to near machine precision.
    double v = 0.5 * (lo + hi);
    for (int it = 0; it < 8; ++it) {
        const double r = bmx(v, v_l, q) - xi;
        const double step = r / bmx_dv(v, v_l, q);
        const double next = v - step;
        if (!(next > v_l) || !std::isfinite(next)) break;
        v = next;
        if (std::abs(step) < 1e-16 * v) break;
    }
    return v;
}

double keller_osserman_envelope(double dist_value, double C, double q) {
    require_q(q);
    if (!(dist_value > 0.0))
        throw std::invalid_argument("keller_osserman_envelope: dist must be positive");
    if (!(C > 0.0)) throw std::invalid_argument("keller_osserman_envelope: C must be positive");
    return C * std::pow(dist_value, -blowup_exponent(q));
}

double tail_integral_beta(double q) {
    require_q(q);
    const double a = 0.5 - 1.0 / (q + 1.0);
    const double b = 0.5;
    return std::exp(std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b)) / (q + 1.0);
}

}  // namespace bsde::oracle
