#include "bsde/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace bsde {

double conjugate_exponent(double q) {
    if (!(q > 1.0)) throw std::invalid_argument("conjugate_exponent: q must exceed 1");
    return q / (q - 1.0);
}

double blowup_exponent(double q) { return 2.0 * (conjugate_exponent(q) - 1.0); }

Domain Domain::interval(double lo, double hi) {
    if (!(lo < hi)) throw std::invalid_argument("Domain::interval: requires lo < hi");
    Domain d;
    d.kind = Kind::interval;
    d.dim = 1;
    d.a = {lo};
    d.b = {hi};
    return d;
}

Domain Domain::ball(std::vector<double> center, double radius) {
    if (!(radius > 0.0)) throw std::invalid_argument("Domain::ball: radius must be positive");
    if (center.empty()) throw std::invalid_argument("Domain::ball: empty center");
    Domain d;
    d.kind = Kind::ball;
    d.dim = center.size();
    d.a = std::move(center);
    d.b = {radius};
    return d;
}

Domain Domain::box(std::vector<double> lo, std::vector<double> hi) {
    if (lo.size() != hi.size() || lo.empty())
        throw std::invalid_argument("Domain::box: corner dimensions disagree");
    for (std::size_t i = 0; i < lo.size(); ++i)
        if (!(lo[i] < hi[i])) throw std::invalid_argument("Domain::box: requires lo < hi per axis");
    Domain d;
    d.kind = Kind::box;
    d.dim = lo.size();
    d.a = std::move(lo);
    d.b = std::move(hi);
    return d;
}

double Domain::signed_distance(std::span<const double> x) const {
    if (x.size() != dim) throw std::invalid_argument("signed_distance: dimension mismatch");
    switch (kind) {
        case Kind::interval:
            return std::min(x[0] - a[0], b[0] - x[0]);
        case Kind::ball: {
            double s = 0.0;
            for (std::size_t i = 0; i < dim; ++i) {
                const double d = x[i] - a[i];
                s += d * d;
            }
            return b[0] - std::sqrt(s);
        }
        case Kind::box: {
            double m = std::numeric_limits<double>::infinity();
            for (std::size_t i = 0; i < dim; ++i) m = std::min({m, x[i] - a[i], b[i] - x[i]});
            return m;
        }
    }
    return 0.0;
}

std::vector<double> Domain::project_to_boundary(std::span<const double> x) const {
    if (x.size() != dim) throw std::invalid_argument("project_to_boundary: dimension mismatch");
    std::vector<double> p(x.begin(), x.end());
    switch (kind) {
        case Kind::interval:
            p[0] = (x[0] - a[0] < b[0] - x[0]) ? a[0] : b[0];
            break;
        case Kind::ball: {
            double s = 0.0;
            for (std::size_t i = 0; i < dim; ++i) {
                const double d = x[i] - a[i];
                s += d * d;
            }
            const double r = std::sqrt(s);
            if (r == 0.0) {
                // center: any boundary point is nearest; pick the first axis
                p = a;
                p[0] += b[0];
            } else {
                for (std::size_t i = 0; i < dim; ++i) p[i] = a[i] + (x[i] - a[i]) * b[0] / r;
            }
            break;
        }
        case Kind::box: {
            // snap the axis with the smallest face distance to its nearer face
            std::size_t axis = 0;
            double best = std::numeric_limits<double>::infinity();
            bool lo_side = true;
            for (std::size_t i = 0; i < dim; ++i) {
                const double dlo = std::abs(x[i] - a[i]);
                const double dhi = std::abs(b[i] - x[i]);
                if (dlo < best) {
                    best = dlo;
                    axis = i;
                    lo_side = true;
                }
                if (dhi < best) {
                    best = dhi;
                    axis = i;
                    lo_side = false;
                }
            }
            for (std::size_t i = 0; i < dim; ++i) p[i] = std::clamp(x[i], a[i], b[i]);
            p[axis] = lo_side ? a[axis] : b[axis];
            break;
        }
    }
    return p;
}

double Domain::diameter() const {
    switch (kind) {
        case Kind::interval:
            return b[0] - a[0];
        case Kind::ball:
            return 2.0 * b[0];
        case Kind::box: {
            double s = 0.0;
            for (std::size_t i = 0; i < dim; ++i) {
                const double d = b[i] - a[i];
                s += d * d;
            }
            return std::sqrt(s);
        }
    }
    return 0.0;
}

Driver Driver::canonical_driver(double q) {
    return canonical_driver(q, [](double) { return 1.0; }, 1.0);
}

Driver Driver::canonical_driver(double q, std::function<double(double)> eta, double eta_max) {
    if (!(q > 1.0)) throw std::invalid_argument("Driver: q must exceed 1");
    if (!(eta_max > 0.0)) throw std::invalid_argument("Driver: eta_max must be positive");
    Driver d;
    d.q = q;
    d.chi = 0.0;
    d.l_z = 0.0;
    d.eta = std::move(eta);
    d.eta_max = eta_max;
    d.canonical = true;
    auto eta_copy = d.eta;
    d.eval = [q, eta_copy](double t, double y, std::span<const double>) {
        return -y * std::pow(std::abs(y), q - 1.0) / eta_copy(t);
    };
    return d;
}

Driver Driver::zero_driver() {
    Driver d;
    d.q = 2.0;
    d.eta = [](double) { return 1.0; };
    d.eta_max = 1.0;
    d.canonical = false;
    d.eval = [](double, double, std::span<const double>) { return 0.0; };
    return d;
}

SDECoefficients SDECoefficients::constant_1d(double b, double sigma) {
    SDECoefficients c;
    c.dim = 1;
    c.drift = [b](std::span<const double>, std::span<double> out) { out[0] = b; };
    c.diffusion = [sigma](std::span<const double>, std::span<double> out) { out[0] = sigma; };
    c.lipschitz_bound = 0.0;
    return c;
}

SDECoefficients SDECoefficients::brownian(std::size_t dim) {
    SDECoefficients c;
    c.dim = dim;
    c.drift = [dim](std::span<const double>, std::span<double> out) {
        for (std::size_t i = 0; i < dim; ++i) out[i] = 0.0;
    };
    c.diffusion = [dim](std::span<const double>, std::span<double> out) {
        for (std::size_t i = 0; i < dim * dim; ++i) out[i] = 0.0;
        for (std::size_t i = 0; i < dim; ++i) out[i * dim + i] = 1.0;
    };
    c.lipschitz_bound = 0.0;
    return c;
}

TerminalSpec TerminalSpec::constant(double k) {
    if (!(k >= 0.0) || !std::isfinite(k))
        throw std::invalid_argument("TerminalSpec: k must be finite and >= 0");
    TerminalSpec s;
    s.kind = Kind::constant;
    s.k = k;
    return s;
}

TerminalSpec TerminalSpec::markovian(std::function<double(std::span<const double>)> g, double k) {
    TerminalSpec s = constant(k);
    s.kind = Kind::markovian;
    if (!g) throw std::invalid_argument("TerminalSpec::markovian: missing g");
    s.g = std::move(g);
    return s;
}

TerminalSpec TerminalSpec::xi1(double k) {
    TerminalSpec s = constant(k);
    s.kind = Kind::xi1;
    return s;
}

TerminalSpec TerminalSpec::xi2(double k) {
    TerminalSpec s = constant(k);
    s.kind = Kind::xi2;
    return s;
}

bool ValidationReport::all_passed() const {
    for (const auto& c : checks)
        if (!c.passed) return false;
    return true;
}

const ConditionCheck& ValidationReport::check(std::string_view name) const {
    for (const auto& c : checks)
        if (c.name == name) return c;
    throw std::invalid_argument("ValidationReport: unknown check " + std::string(name));
}

namespace {

std::string sample_location(double t, double y) {
    std::ostringstream os;
    os << "t=" << t << ", y=" << y;
    return os.str();
}

}  // namespace

ValidationReport validate_driver(const Driver& driver, const SampleSpec& spec) {
    ValidationReport report;
    const double tol = 1e-9;

    std::vector<double> ts(spec.n_t), ys(spec.n_y), zs(spec.n_z);
    for (int i = 0; i < spec.n_t; ++i)
        ts[i] = spec.t0 + (spec.t1 - spec.t0) * i / std::max(1, spec.n_t - 1);
    for (int i = 0; i < spec.n_y; ++i)
        ys[i] = spec.y_max * i / std::max(1, spec.n_y - 1);
    for (int i = 0; i < spec.n_z; ++i)
        zs[i] = -spec.z_max + 2.0 * spec.z_max * i / std::max(1, spec.n_z - 1);

    const double z0v = 0.0;
    std::span<const double> z0(&z0v, 1);

    // eta positive and bounded
    {
        ConditionCheck c{"eta-bounds", true, 0.0, ""};
        for (double t : ts) {
            const double e = driver.eta(t);
            const double viol = std::max(-e, e - driver.eta_max);
            if (viol > tol && viol > c.worst_violation) {
                c.passed = false;
                c.worst_violation = viol;
                c.detail = sample_location(t, 0.0);
            }
        }
        report.checks.push_back(std::move(c));
    }

    // superlinear growth: f(t,y,z) <= -y^q/eta(t) + f(t,0,z) for y >= 0
    {
        ConditionCheck c{"B1-superlinear-growth", true, 0.0, ""};
        for (double t : ts) {
            const double inv_eta = 1.0 / driver.eta(t);
            const double f0 = driver(t, 0.0, z0);
            for (double y : ys) {
                const double bound = -std::pow(y, driver.q) * inv_eta + f0;
                const double viol = driver(t, y, z0) - bound;
                if (viol > tol * (1.0 + std::abs(bound)) && viol > c.worst_violation) {
                    c.passed = false;
                    c.worst_violation = viol;
                    c.detail = sample_location(t, y);
                }
            }
        }
        report.checks.push_back(std::move(c));
    }

    // one-sided monotonicity: (f(y)-f(y'))(y-y') <= chi (y-y')^2
    {
        ConditionCheck c{"A1-monotonicity", true, 0.0, ""};
        for (double t : ts) {
            for (double y : ys) {
                for (double yp : ys) {
                    if (y == yp) continue;
                    const double lhs = (driver(t, y, z0) - driver(t, yp, z0)) * (y - yp);
                    const double rhs = driver.chi * (y - yp) * (y - yp);
                    const double viol = lhs - rhs;
                    if (viol > tol * (1.0 + std::abs(rhs)) && viol > c.worst_violation) {
                        c.passed = false;
                        c.worst_violation = viol;
                        c.detail = sample_location(t, y) + ", y'=" + std::to_string(yp);
                    }
                }
            }
        }
        report.checks.push_back(std::move(c));
    }

    // z-Lipschitz: |f(t,y,z)-f(t,y,z')| <= l_z |z-z'|
    {
        ConditionCheck c{"A4-z-lipschitz", true, 0.0, ""};
        for (double t : ts) {
            for (double y : ys) {
                for (double z1 : zs) {
                    for (double z2 : zs) {
                        std::span<const double> s1(&z1, 1), s2(&z2, 1);
                        const double lhs = std::abs(driver(t, y, s1) - driver(t, y, s2));
                        const double rhs = driver.l_z * std::abs(z1 - z2);
                        const double viol = lhs - rhs;
                        if (viol > tol * (1.0 + rhs) && viol > c.worst_violation) {
                            c.passed = false;
                            c.worst_violation = viol;
                            c.detail = sample_location(t, y);
                        }
                    }
                }
            }
        }
        report.checks.push_back(std::move(c));
    }

    if (driver.chi == 0.0) {
        const double k2 = 0.5 * driver.l_z * driver.l_z;
        report.notes.push_back(
            "exponential-moment constants for chi=0: delta* = " + std::to_string(2.0 * k2) +
            ", m* = 2*delta/(delta - delta*) for any admissible delta > delta*");
    } else {
        report.notes.push_back(
            "exponential-moment constants delta*, m* are not computable for chi != 0; "
            "condition (B3)/(B4) reported informationally only");
    }

    return report;
}

}  // namespace bsde
