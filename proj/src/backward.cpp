#include "bsde/backward.hpp"

#include <algorithm>
#include <cmath>
#include <thread>

#include "bsde/errors.hpp"
#include "bsde/linalg.hpp"

namespace bsde {

namespace {

std::size_t resolve_threads(std::size_t n_threads) {
    if (n_threads != 0) return n_threads;
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : hc;
}

std::vector<std::vector<int>> monomial_powers(std::size_t dim, int degree) {
    std::vector<std::vector<int>> out;
    std::vector<int> alpha(dim, 0);
    // enumerate multi-indices with |alpha| <= degree in graded order
    std::function<void(std::size_t, int)> rec = [&](std::size_t pos, int left) {
        if (pos == dim) {
            out.push_back(alpha);
            return;
        }
        for (int p = 0; p <= left; ++p) {
            alpha[pos] = p;
            rec(pos + 1, left - p);
        }
        alpha[pos] = 0;
    };
    rec(0, degree);
    std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
        int sa = 0, sb = 0;
        for (int v : a) sa += v;
        for (int v : b) sb += v;
        return sa < sb;
    });
    return out;
}

}  // namespace

Basis::Basis(Kind kind, int degree, std::size_t dim, std::optional<Domain> domain,
             double layer_scale)
    : kind_(kind), degree_(degree), dim_(dim), domain_(std::move(domain)),
      layer_scale_(layer_scale) {
    if (degree < 0) throw std::invalid_argument("Basis: degree must be >= 0");
    powers_ = monomial_powers(dim, degree);
    n_funcs_ = powers_.size();
    const std::size_t n_monomials = n_funcs_;
    if (kind_ == Kind::poly_state_dist) {
        if (!domain_) throw std::invalid_argument("Basis: distance basis needs a domain");
        n_funcs_ += static_cast<std::size_t>(std::max(0, degree));
    }
    if (!domain_ || !(layer_scale_ > 0.0)) layer_scale_ = 0.0;
    if (layer_scale_ > 0.0) n_funcs_ += 2;
    if (n_funcs_ > kMaxBasis)
        throw std::invalid_argument("Basis: more than " + std::to_string(kMaxBasis) +
                                    " functions; lower the degree");
    fallback_sizes_ = {n_funcs_};
    if (n_monomials != n_funcs_) fallback_sizes_.push_back(n_monomials);
    if (n_monomials > 1) fallback_sizes_.push_back(1);
}

void Basis::eval(std::span<const double> x, std::span<double> out) const {
    std::size_t idx = 0;
    for (const auto& alpha : powers_) {
        double v = 1.0;
        for (std::size_t j = 0; j < dim_; ++j) {
            for (int p = 0; p < alpha[j]; ++p) v *= x[j];
        }
        out[idx++] = v;
    }
    if (kind_ == Kind::poly_state_dist) {
        const double d = std::max(domain_->signed_distance(x), 1e-12);
        double inv = 1.0;
        for (int p = 1; p <= degree_; ++p) {
            inv /= d;
            out[idx++] = inv;
        }
    }
    if (layer_scale_ > 0.0) {
        const double u = std::max(domain_->signed_distance(x), 0.0) / layer_scale_;
        // one-step crossing shapes: Gaussian endpoint and Brownian bridge
        out[idx++] = 0.5 * std::erfc(u / std::numbers::sqrt2);
        out[idx++] = std::exp(-2.0 * u * u);
    }
}

double terminal_payoff(const TerminalSpec& spec, const ExitInfo& exit_S,
                       const ExitInfo* exit_tau) {
    if (spec.needs_tau() && exit_tau == nullptr)
        throw std::invalid_argument("terminal_payoff: xi1/xi2 spec requires exit_tau");
    if (!exit_S.exited) return 0.0;  // censored path, counted in the reported bias bound
    switch (spec.kind) {
        case TerminalSpec::Kind::constant:
            return spec.k;
        case TerminalSpec::Kind::markovian:
            return std::min(spec.g(exit_S.state), spec.k);
        case TerminalSpec::Kind::xi1:
            return tau_le_S(exit_S, *exit_tau) ? spec.k : 0.0;
        case TerminalSpec::Kind::xi2:
            return tau_le_S(exit_S, *exit_tau) ? 0.0 : spec.k;
    }
    return 0.0;
}

double implicit_driver_step(double c, const Driver& driver, double dt, double t) {
    if (dt < 0.0) throw std::invalid_argument("implicit_driver_step: dt must be >= 0");
    if (dt == 0.0) return std::max(c, 0.0);
    if (!(c > 0.0)) return 0.0;  // zero is a fixed point of the canonical dynamics

    if (driver.canonical) {
        // y + a y^q = c with a = dt/eta(t); Newton from y = c is monotone
        // (the residual is convex and positive there).
        const double a = dt / driver.eta(t);
        const double q = driver.q;
        double y = c;
        for (int it = 0; it < 100; ++it) {
            const double yq1 = std::pow(y, q - 1.0);
            const double g = y + a * y * yq1 - c;
            const double dg = 1.0 + a * q * yq1;
            const double step = g / dg;
            y -= step;
            if (!(y > 0.0)) return 0.0;
            if (std::abs(step) <= 1e-15 * (1.0 + y)) return y;
        }
        throw NumericalError("implicit_driver_step: no convergence (c=" + std::to_string(c) +
                             ", dt=" + std::to_string(dt) + ", t=" + std::to_string(t) + ")");
    }

    const double z0 = 0.0;
    const std::span<const double> z(&z0, 1);
    auto residual = [&](double y) { return y - dt * driver(t, y, z) - c; };

    double lo = 0.0;
    double r_lo = residual(0.0);
    if (!std::isfinite(r_lo))
        throw NumericalError("implicit_driver_step: non-finite driver value at y=0 (c=" +
                             std::to_string(c) + ", dt=" + std::to_string(dt) +
                             ", t=" + std::to_string(t) + ")");
    if (r_lo >= 0.0) return 0.0;
    double hi = std::max(c, 1e-30);
    double r_hi = residual(hi);
    int guard = 0;
    while (r_hi < 0.0) {
        hi *= 2.0;
        r_hi = residual(hi);
        if (!std::isfinite(r_hi) || ++guard > 200)
            throw NumericalError("implicit_driver_step: bracket growth failed (c=" +
                                 std::to_string(c) + ", dt=" + std::to_string(dt) +
                                 ", t=" + std::to_string(t) + ")");
    }
    double y = hi;
    for (int it = 0; it < 100; ++it) {
        const double r = residual(y);
        if (std::abs(r) <= 1e-14 * (1.0 + std::abs(c))) return y;
        if (r > 0.0)
            hi = y;
        else
            lo = y;
        const double h = 1e-7 * (1.0 + std::abs(y));
        const double dr = (residual(y + h) - residual(y - h)) / (2.0 * h);
        double next = (std::isfinite(dr) && dr > 0.0) ? y - r / dr : 0.5 * (lo + hi);
        if (!(next > lo) || !(next < hi)) next = 0.5 * (lo + hi);
        if (std::abs(next - y) <= 1e-15 * (1.0 + std::abs(y))) return next;
        y = next;
    }
    throw NumericalError("implicit_driver_step: no convergence (c=" + std::to_string(c) +
                         ", dt=" + std::to_string(dt) + ", t=" + std::to_string(t) + ")");
}

namespace {

// Driver integration over one grid step, substepped to resolve the stiff
// layer near large truncation levels. Substepping is skipped when the local
// stiffness q c^{q-1} dt / eta is already small.
double driver_advance(double c, const Driver& driver, double dt, double t_left, int substeps) {
    if (substeps <= 1) return implicit_driver_step(c, driver, dt, t_left);
    const double stiffness =
        driver.q * std::pow(std::max(c, 0.0), driver.q - 1.0) * dt / driver.eta(t_left);
    if (stiffness < 0.02) return implicit_driver_step(c, driver, dt, t_left);
    const double h = dt / substeps;
    double y = c;
    for (int j = substeps - 1; j >= 0; --j) {
        y = implicit_driver_step(y, driver, h, t_left + j * h);
    }
    return y;
}

struct FitResult {
    std::vector<double> coeffs;
    bool valid = false;
};

// Least-squares fit of targets on the basis over the listed paths. The normal
// equations are accumulated over fixed path-index leaves and combined in leaf
// order, so the result is independent of the worker count. Rank-deficient
// systems retry on the basis prefixes (dropping layer/distance terms first)
// down to an intercept-only fit.
FitResult fit_regression(const Basis& basis, std::span<const double> plane, std::size_t dim,
                         std::span<const std::size_t> paths, const std::vector<double>& targets,
                         double ridge, std::size_t n_threads) {
    FitResult result;
    const std::size_t nb = basis.size();
    if (paths.empty()) return result;

    auto intercept_only = [&]() {
        std::vector<double> vals(paths.size());
        for (std::size_t i = 0; i < paths.size(); ++i) vals[i] = targets[paths[i]];
        result.coeffs.assign(nb, 0.0);
        result.coeffs[0] = linalg::pairwise_sum(vals) / static_cast<double>(vals.size());
        result.valid = true;
        return result;
    };
    if (paths.size() < nb) return intercept_only();

    constexpr std::size_t kLeaf = 8192;
    const std::size_t n_leaves = (paths.size() + kLeaf - 1) / kLeaf;
    std::vector<std::vector<double>> leaf_gram(n_leaves, std::vector<double>(nb * nb, 0.0));
    std::vector<std::vector<double>> leaf_rhs(n_leaves, std::vector<double>(nb, 0.0));

    const std::size_t workers = std::min(resolve_threads(n_threads), n_leaves);
    auto leaf_job = [&](std::size_t leaf_lo, std::size_t leaf_hi) {
        std::vector<double> phi(nb);
        for (std::size_t leaf = leaf_lo; leaf < leaf_hi; ++leaf) {
            auto& gram = leaf_gram[leaf];
            auto& rhs = leaf_rhs[leaf];
            const std::size_t i_lo = leaf * kLeaf;
            const std::size_t i_hi = std::min(paths.size(), i_lo + kLeaf);
            for (std::size_t i = i_lo; i < i_hi; ++i) {
                const std::size_t p = paths[i];
                basis.eval(plane.subspan(p * dim, dim), phi);
                const double y = targets[p];
                for (std::size_t r = 0; r < nb; ++r) {
                    const double pr = phi[r];
                    rhs[r] += pr * y;
                    for (std::size_t c2 = r; c2 < nb; ++c2) gram[r * nb + c2] += pr * phi[c2];
                }
            }
        }
    };
    if (workers <= 1) {
        leaf_job(0, n_leaves);
    } else {
        std::vector<std::thread> threads;
        const std::size_t chunk = (n_leaves + workers - 1) / workers;
        for (std::size_t w = 0; w < workers; ++w) {
            const std::size_t lo = w * chunk;
            const std::size_t hi = std::min(n_leaves, lo + chunk);
            if (lo >= hi) break;
            threads.emplace_back(leaf_job, lo, hi);
        }
        for (auto& t : threads) t.join();
    }

    std::vector<double> gram(nb * nb, 0.0);
    std::vector<double> rhs(nb, 0.0);
    for (std::size_t leaf = 0; leaf < n_leaves; ++leaf) {
        for (std::size_t i = 0; i < nb * nb; ++i) gram[i] += leaf_gram[leaf][i];
        for (std::size_t i = 0; i < nb; ++i) rhs[i] += leaf_rhs[leaf][i];
    }
    for (std::size_t r = 0; r < nb; ++r)
        for (std::size_t c2 = 0; c2 < r; ++c2) gram[r * nb + c2] = gram[c2 * nb + r];

    for (std::size_t s : basis.fallback_sizes()) {
        if (s > paths.size()) continue;
        std::vector<double> sub(s * s);
        std::vector<double> sol(s);
        for (std::size_t r = 0; r < s; ++r) {
            for (std::size_t c2 = 0; c2 < s; ++c2) sub[r * s + c2] = gram[r * nb + c2];
            sub[r * s + r] += ridge;
            sol[r] = rhs[r];
        }
        if (linalg::cholesky_solve(sub, sol, s)) {
            result.coeffs.assign(nb, 0.0);
            std::copy(sol.begin(), sol.end(), result.coeffs.begin());
            result.valid = true;
            return result;
        }
    }
    return intercept_only();
}

double dot_basis(const Basis& basis, std::span<const double> x, std::span<const double> coeffs,
                 std::vector<double>& scratch) {
    basis.eval(x, scratch);
    double s = 0.0;
    for (std::size_t i = 0; i < coeffs.size(); ++i) s += scratch[i] * coeffs[i];
    return s;
}

}  // namespace

double ValueField::eval_y(std::size_t step, std::span<const double> x, bool tau_fired) const {
    if (step >= steps.size()) throw std::invalid_argument("ValueField::eval_y: step out of range");
    const StepFit& fit = steps[step];
    const std::vector<double>& c =
        (tau_fired && fit.has_fired) ? fit.fired_coeffs : fit.coeffs;
    double phi[kMaxBasis];
    basis.eval(x, std::span<double>(phi, basis.size()));
    double s = 0.0;
    for (std::size_t i = 0; i < c.size(); ++i) s += phi[i] * c[i];
    return std::clamp(s, 0.0, std::min(k, fit.cap));
}

double ValueField::eval_z(std::size_t step, std::span<const double> x,
                          std::size_t component) const {
    if (!has_z()) throw std::invalid_argument("ValueField::eval_z: Z estimates absent");
    if (step >= z_steps.size())
        throw std::invalid_argument("ValueField::eval_z: step out of range");
    const std::size_t nb = basis.size();
    double phi[kMaxBasis];
    basis.eval(x, std::span<double>(phi, nb));
    double s = 0.0;
    for (std::size_t i = 0; i < nb; ++i) s += phi[i] * z_steps[step][component * nb + i];
    return s;
}

double ValueField::path_value(const PathBundle& bundle, std::size_t path, std::size_t step) const {
    const ExitInfo& e = bundle.exit_S[path];
    if (e.exited && step >= e.index) return payoffs[path];
    bool fired = false;
    if (bundle.exit_tau) {
        const ExitInfo& tau = (*bundle.exit_tau)[path];
        fired = tau.exited && tau.index <= step;
    }
    return eval_y(step, bundle.state(path, step), fired);
}

ValueField lsmc_solve(const PathBundle& bundle, const Driver& driver, const TerminalSpec& spec,
                      const RegressionConfig& reg) {
    if (spec.needs_tau() && !bundle.exit_tau)
        throw std::invalid_argument("lsmc_solve: spec requires exit_tau in the bundle");
    const std::size_t n_paths = bundle.n_paths;
    const std::size_t n_steps = bundle.grid.n_steps;
    const std::size_t dim = bundle.dim;
    const double dt = bundle.grid.dt();

    ValueField field;
    field.grid = bundle.grid;
    const double layer_scale =
        (bundle.domain && reg.exit_layer_feature) ? bundle.sigma_x0 * std::sqrt(dt) : 0.0;
    field.basis = Basis(reg.basis, reg.degree, dim, bundle.domain, layer_scale);
    field.spec_kind = spec.kind;
    field.k = spec.k;
    field.steps.resize(n_steps);
    field.active_counts.assign(n_steps, 0);
    if (reg.estimate_z) field.z_steps.assign(n_steps, {});

    // realized payoffs
    field.payoffs.resize(n_paths);
    for (std::size_t p = 0; p < n_paths; ++p) {
        const ExitInfo* tau = bundle.exit_tau ? &(*bundle.exit_tau)[p] : nullptr;
        field.payoffs[p] = terminal_payoff(spec, bundle.exit_S[p], tau);
    }
    field.censored_fraction = bundle.censored_fraction();
    field.censor_bias_bound = field.censored_fraction * spec.k;

    const std::size_t nb = field.basis.size();
    const bool stratify = spec.needs_tau();

    // V holds the value at the cursor step: payoff once exited, estimate before
    std::vector<double> values(n_paths);
    for (std::size_t p = 0; p < n_paths; ++p) values[p] = field.payoffs[p];

    std::vector<std::size_t> active, active_unfired, active_fired;
    active.reserve(n_paths);
    std::vector<uint8_t> fired_flag(stratify ? n_paths : 0, 0);

    auto cursor = bundle.backward_cursor();
    if (cursor.step() == n_steps) cursor.advance();  // regressions live at steps n-1 .. 0

    for (; !cursor.done(); cursor.advance()) {
        const std::size_t i = cursor.step();
        const std::span<const double> plane = cursor.plane();

        active.clear();
        active_unfired.clear();
        active_fired.clear();
        for (std::size_t p = 0; p < n_paths; ++p) {
            const ExitInfo& e = bundle.exit_S[p];
            if (e.exited && e.index <= i) continue;  // value already realized
            active.push_back(p);
            if (stratify) {
                const ExitInfo& tau = (*bundle.exit_tau)[p];
                const bool fired = tau.exited && tau.index <= i;
                fired_flag[p] = fired ? 1 : 0;
                if (fired)
                    active_fired.push_back(p);
                else
                    active_unfired.push_back(p);
            }
        }
        field.active_counts[i] = static_cast<uint32_t>(active.size());
        StepFit& fit = field.steps[i];
        fit.coeffs.assign(nb, 0.0);
        if (reg.estimate_z) field.z_steps[i].assign(dim * nb, 0.0);
        if (active.empty()) continue;
        if (active.size() < nb && active.size() == n_paths)
            throw NumericalError("lsmc_solve: regression degeneracy at step " + std::to_string(i) +
                                 ": " + std::to_string(active.size()) + " active paths for " +
                                 std::to_string(nb) + " basis functions");

        // Attrition tail: with few surviving paths a cross-sectional fit is
        // noise at the scale of the truncation level and would feed back into
        // the sweep. Propagate the values pathwise instead and record the
        // plain mean for field evaluation.
        const std::size_t tail_floor =
            std::max<std::size_t>(30 * nb, std::min<std::size_t>(1000, n_paths / 4));
        field.regression_floor = tail_floor;
        if (active.size() < tail_floor && active.size() < n_paths) {
            const double t_left = bundle.grid.time(i);
            std::vector<double> updated(active.size());
            for (std::size_t j = 0; j < active.size(); ++j) {
                const std::size_t p = active[j];
                updated[j] = std::clamp(
                    driver_advance(values[p], driver, dt, t_left, reg.driver_substeps), 0.0,
                    spec.k);
                values[p] = updated[j];
            }
            fit.coeffs[0] =
                linalg::pairwise_sum(updated) / static_cast<double>(updated.size());
            for (double v : updated) fit.cap = std::max(fit.cap, v);
            continue;
        }
        FitResult main_fit, fired_fit;
        if (stratify) {
            main_fit = fit_regression(field.basis, plane, dim, active_unfired, values, reg.ridge,
                                      reg.n_threads);
            fired_fit = fit_regression(field.basis, plane, dim, active_fired, values, reg.ridge,
                                       reg.n_threads);
            if (!main_fit.valid && fired_fit.valid) main_fit = fired_fit;
        } else {
            main_fit =
                fit_regression(field.basis, plane, dim, active, values, reg.ridge, reg.n_threads);
        }
        if (main_fit.valid) fit.coeffs = main_fit.coeffs;
        if (fired_fit.valid) {
            fit.fired_coeffs = fired_fit.coeffs;
            fit.has_fired = true;
        }
        for (std::size_t p : active) fit.cap = std::max(fit.cap, values[p]);

        // fitted continuation per active path
        std::vector<double> fitted(n_paths, 0.0);
        {
            const std::size_t workers = resolve_threads(reg.n_threads);
            auto fit_chunk = [&](std::size_t lo, std::size_t hi) {
                std::vector<double> phi(nb);
                for (std::size_t j = lo; j < hi; ++j) {
                    const std::size_t p = active[j];
                    const bool fired = stratify && fit.has_fired && fired_flag[p] != 0;
                    const double raw = dot_basis(field.basis, plane.subspan(p * dim, dim),
                                                 fired ? fit.fired_coeffs : fit.coeffs, phi);
                    fitted[p] = std::clamp(raw, 0.0, std::min(spec.k, fit.cap));
                }
            };
            if (workers <= 1 || active.size() < 4096) {
                fit_chunk(0, active.size());
            } else {
                std::vector<std::thread> threads;
                const std::size_t chunk = (active.size() + workers - 1) / workers;
                for (std::size_t w = 0; w < workers; ++w) {
                    const std::size_t lo = w * chunk;
                    const std::size_t hi = std::min(active.size(), lo + chunk);
                    if (lo >= hi) break;
                    threads.emplace_back(fit_chunk, lo, hi);
                }
                for (auto& t : threads) t.join();
            }
        }

        // optional Z regression on centered targets (V_{i+1} - c_i) dW_i / dt;
        // centering removes the 1/dt variance blow-up and makes deterministic
        // bundles yield Z identically zero. Samples inside the one-step
        // collapse layer are excluded: their residuals are payoff-indicator
        // noise at the scale of the truncation level and would ring through
        // the global fit.
        if (reg.estimate_z) {
            std::vector<double>& zc = field.z_steps[i];
            zc.assign(dim * nb, 0.0);
            const double sqrt_dt = std::sqrt(dt);
            std::vector<std::size_t> z_active;
            if (bundle.domain) {
                // design points restricted to the smooth region; the fit is
                // only evaluated there. Restricting on the start point alone
                // keeps the targets conditionally unbiased.
                const double layer = 5.0 * bundle.sigma_x0 * sqrt_dt;
                z_active.reserve(active.size());
                for (std::size_t p : active) {
                    if (bundle.domain->signed_distance(plane.subspan(p * dim, dim)) > layer)
                        z_active.push_back(p);
                }
            } else {
                z_active = active;
            }
            std::vector<double> ztarget(n_paths, 0.0);
            for (std::size_t comp = 0; comp < dim; ++comp) {
                for (std::size_t p : z_active) {
                    const PathStream stream(bundle.seed, p);
                    const double dw = sqrt_dt * stream.gauss(static_cast<uint32_t>(i),
                                                             static_cast<uint32_t>(comp));
                    ztarget[p] = (values[p] - fitted[p]) * dw / dt;
                }
                FitResult zfit = fit_regression(field.basis, plane, dim, z_active, ztarget,
                                                reg.ridge, reg.n_threads);
                if (zfit.valid)
                    std::copy(zfit.coeffs.begin(), zfit.coeffs.end(), zc.begin() + comp * nb);
            }
        }

        // implicit driver step on the continuation value, clipped to [0, k]
        const double t_left = bundle.grid.time(i);
        const std::size_t workers = resolve_threads(reg.n_threads);
        auto update_chunk = [&](std::size_t lo, std::size_t hi) {
            for (std::size_t j = lo; j < hi; ++j) {
                const std::size_t p = active[j];
                const double y =
                    driver_advance(fitted[p], driver, dt, t_left, reg.driver_substeps);
                values[p] = std::clamp(y, 0.0, spec.k);
            }
        };
        if (workers <= 1 || active.size() < 4096) {
            update_chunk(0, active.size());
        } else {
            std::vector<std::thread> threads;
            const std::size_t chunk = (active.size() + workers - 1) / workers;
            for (std::size_t w = 0; w < workers; ++w) {
                const std::size_t lo = w * chunk;
                const std::size_t hi = std::min(active.size(), lo + chunk);
                if (lo >= hi) break;
                threads.emplace_back(update_chunk, lo, hi);
            }
            for (auto& t : threads) t.join();
        }
    }

    std::vector<double> v0(n_paths);
    for (std::size_t p = 0; p < n_paths; ++p) v0[p] = values[p];
    field.y0 = std::max(linalg::mean_stderr(v0).mean, 0.0);

    // Monte Carlo error scale: re-integrate the BSDE along each path with the
    // fitted field, y0_p = payoff_p + sum f(t_i, Yhat_i) dt. The dispersion of
    // this pathwise estimator carries the real sampling noise, which the
    // regression-smoothed step-0 values no longer show.
    {
        std::vector<double> pathwise = field.payoffs;
        const double z0 = 0.0;
        const std::span<const double> z(&z0, 1);
        for (auto cur = bundle.forward_cursor(); !cur.done(); cur.advance()) {
            const std::size_t i = cur.step();
            if (i >= n_steps) break;
            const double t = bundle.grid.time(i);
            for (std::size_t p = 0; p < n_paths; ++p) {
                const ExitInfo& e = bundle.exit_S[p];
                if (e.exited && e.index <= i) continue;
                bool fired = false;
                if (stratify) {
                    const ExitInfo& tau = (*bundle.exit_tau)[p];
                    fired = tau.exited && tau.index <= i;
                }
                const double yhat = field.eval_y(i, cur.path_state(p), fired);
                pathwise[p] += driver(t, yhat, z) * dt;
            }
        }
        field.y0_stderr = linalg::mean_stderr(pathwise).stderr_;
    }
    return field;
}

LadderResult truncation_ladder(const PathBundle& bundle, const Driver& driver,
                               const std::function<TerminalSpec(double)>& spec_family,
                               std::span<const double> k_list, const RegressionConfig& reg) {
    if (k_list.size() < 2)
        throw std::invalid_argument("truncation_ladder: k_list needs at least 2 entries");
    for (std::size_t i = 1; i < k_list.size(); ++i)
        if (!(k_list[i] >= k_list[i - 1]))
            throw std::invalid_argument("truncation_ladder: k_list must be non-decreasing");

    LadderResult out;
    out.k_list.assign(k_list.begin(), k_list.end());
    for (double k : k_list) {
        out.fields.push_back(lsmc_solve(bundle, driver, spec_family(k), reg));
        out.y0_sequence.push_back(out.fields.back().y0);
        out.y0_stderr.push_back(out.fields.back().y0_stderr);
    }
    out.monotone_violation = 0.0;
    for (std::size_t i = 1; i < out.y0_sequence.size(); ++i) {
        const double inc = out.y0_sequence[i] - out.y0_sequence[i - 1];
        out.monotone_violation = std::min(out.monotone_violation, inc);
    }
    return out;
}

}  // namespace bsde
