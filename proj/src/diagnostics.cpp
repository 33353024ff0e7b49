#include "bsde/diagnostics.hpp"

#include <algorithm>
#include <cmath>

#include "bsde/errors.hpp"
#include "bsde/linalg.hpp"

namespace bsde::diagnostics {

namespace {

constexpr uint32_t kLowSampleFloor = 30;

std::vector<uint8_t> event_mask(const PathBundle& bundle, EventKind event) {
    if (!bundle.exit_tau)
        throw std::invalid_argument("diagnostics: bundle carries no exit_tau");
    std::vector<uint8_t> mask(bundle.n_paths, 0);
    for (std::size_t p = 0; p < bundle.n_paths; ++p) {
        const bool le = tau_le_S(bundle.exit_S[p], (*bundle.exit_tau)[p]);
        mask[p] = (event == EventKind::tau_le_S) ? le : !le;
    }
    return mask;
}

}  // namespace

const CurvePoint* ContinuityCurve::first_ok() const {
    for (const auto& p : points)
        if (!p.low_sample) return &p;
    return nullptr;
}

const CurvePoint* ContinuityCurve::last_ok() const {
    for (auto it = points.rbegin(); it != points.rend(); ++it)
        if (!it->low_sample) return &*it;
    return nullptr;
}

// The reported value is E-hat[Yhat_t 1{event, t < S}], the expectation over
// all paths of the field times the event-and-active indicator. On the
// complementary events this converges to E[xi 1{event}] = 0, the expectation
// form of the continuity statements; the event-conditional mean would not
// vanish for xi1, where the Xi-marginal field cannot see the second clock.
ContinuityCurve continuity_curve(const ValueField& field, const PathBundle& bundle,
                                 EventKind event, std::size_t report_every) {
    if (field.spec_kind != TerminalSpec::Kind::xi1 && field.spec_kind != TerminalSpec::Kind::xi2)
        throw std::invalid_argument("continuity_curve: field must come from an xi1/xi2 spec");
    const std::vector<uint8_t> mask = event_mask(bundle, event);
    if (report_every == 0) report_every = std::max<std::size_t>(1, bundle.grid.n_steps / 256);

    ContinuityCurve curve;
    curve.event = event;
    std::vector<double> contributions(bundle.n_paths);

    for (auto cur = bundle.forward_cursor(); !cur.done(); cur.advance()) {
        const std::size_t i = cur.step();
        if (i >= bundle.grid.n_steps) break;  // terminal plane carries payoffs, not estimates
        if (i % report_every != 0) continue;
        std::size_t n_event = 0;
        for (std::size_t p = 0; p < bundle.n_paths; ++p) {
            contributions[p] = 0.0;
            if (!mask[p]) continue;
            const ExitInfo& e = bundle.exit_S[p];
            if (e.exited && e.index <= i) continue;  // no longer active
            const ExitInfo& tau = (*bundle.exit_tau)[p];
            const bool fired = tau.exited && tau.index <= i;
            contributions[p] = field.eval_y(i, cur.path_state(p), fired);
            ++n_event;
        }
        CurvePoint pt;
        pt.t = bundle.grid.time(i);
        pt.n = static_cast<uint32_t>(n_event);
        pt.low_sample = n_event < kLowSampleFloor;
        const auto s = linalg::mean_stderr(contributions);
        pt.mean = s.mean;
        pt.stderr_ = s.stderr_;
        curve.points.push_back(pt);
    }
    return curve;
}

MomentReport moment_estimate_xi1(const PathBundle& bundle, double q, double varrho, double c_fit) {
    if (!(varrho > 1.0)) throw std::invalid_argument("moment_estimate_xi1: varrho must exceed 1");
    if (!(c_fit > 0.0)) throw std::invalid_argument("moment_estimate_xi1: c_fit must be positive");
    if (!bundle.exit_tau)
        throw std::invalid_argument("moment_estimate_xi1: bundle carries no exit_tau");
    if (!bundle.domain)
        throw std::invalid_argument("moment_estimate_xi1: bundle has no domain");

    const double expo = blowup_exponent(q) * varrho;
    MomentReport report;
    std::vector<double> samples;
    for (std::size_t p = 0; p < bundle.n_paths; ++p) {
        const ExitInfo& tau = (*bundle.exit_tau)[p];
        if (!tau_le_S(bundle.exit_S[p], tau)) continue;
        const std::vector<double> x = bundle.state(p, tau.index);
        const double d = bundle.domain->signed_distance(x);
        if (!(d > 0.0)) {
            ++report.n_boundary_excluded;  // grid tie sitting on/over the boundary
            continue;
        }
        samples.push_back(std::pow(c_fit, varrho) * std::pow(d, -expo));
    }
    if (samples.empty())
        throw NumericalError("moment_estimate_xi1: undefined estimate, no tau <= S samples");

    report.n_samples = samples.size();
    report.estimate = linalg::pairwise_sum(samples) / static_cast<double>(samples.size());

    std::vector<double> sorted = samples;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t drop =
        std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(0.001 * sorted.size())));
    const std::size_t keep = sorted.size() > drop ? sorted.size() - drop : 0;
    if (keep > 0) {
        report.trimmed_estimate =
            linalg::pairwise_sum(std::span<const double>(sorted.data(), keep)) /
            static_cast<double>(keep);
    }
    report.rel_change = report.estimate > 0.0
                            ? std::abs(report.estimate - report.trimmed_estimate) / report.estimate
                            : 0.0;
    report.divergence_suspect = report.rel_change > 0.25;
    return report;
}

KoFit ko_bound_fit(const ValueField& field, const PathBundle& bundle, double q,
                   std::size_t report_every) {
    if (!bundle.domain)
        throw std::invalid_argument(
            "ko_bound_fit: invalid for unbounded (deterministic-horizon) bundles");
    if (field.spec_kind != TerminalSpec::Kind::constant &&
        field.spec_kind != TerminalSpec::Kind::markovian)
        throw std::invalid_argument("ko_bound_fit: field must come from a constant/markovian spec");
    if (report_every == 0) report_every = std::max<std::size_t>(1, bundle.grid.n_steps / 512);

    const double expo = blowup_exponent(q);
    const std::size_t step_floor = std::max<std::size_t>(kLowSampleFloor, field.regression_floor);
    KoFit fit;
    std::vector<double> dists;
    for (auto cur = bundle.forward_cursor(); !cur.done(); cur.advance()) {
        const std::size_t i = cur.step();
        if (i >= bundle.grid.n_steps) break;
        if (i % report_every != 0) continue;
        // only steps backed by a genuine cross-sectional fit enter the max
        if (field.active_counts[i] < step_floor) continue;
        dists.clear();
        for (std::size_t p = 0; p < bundle.n_paths; ++p) {
            const ExitInfo& e = bundle.exit_S[p];
            if (e.exited && e.index <= i) continue;
            const double d = bundle.domain->signed_distance(cur.path_state(p));
            if (d > 0.0) dists.push_back(d);
        }
        if (dists.size() < kLowSampleFloor) continue;
        // exclude the extrapolation fringe (no cross-sectional support) and
        // the one-step collapse layer, where the discrete field is payoff-
        // dominated and carries no envelope information
        std::nth_element(dists.begin(), dists.begin() + (kLowSampleFloor - 1), dists.end());
        const double layer = 3.0 * bundle.sigma_x0 * std::sqrt(bundle.grid.dt());
        const double fringe = std::max(dists[kLowSampleFloor - 1], layer);
        for (std::size_t p = 0; p < bundle.n_paths; ++p) {
            const ExitInfo& e = bundle.exit_S[p];
            if (e.exited && e.index <= i) continue;
            const auto x = cur.path_state(p);
            const double d = bundle.domain->signed_distance(x);
            if (!(d >= fringe)) continue;
            const double cand = field.eval_y(i, x) * std::pow(d, expo);
            if (cand > fit.c_hat) {
                fit.c_hat = cand;
                fit.argmax_path = p;
                fit.argmax_step = i;
                fit.argmax_dist = d;
            }
        }
    }
    return fit;
}

std::vector<BoundedBeforeSnEntry> bounded_before_sn(const ValueField& field,
                                                    const PathBundle& bundle,
                                                    std::span<const int> n_list, double q,
                                                    double c_hat, double eps_tol) {
    if (!bundle.domain)
        throw std::invalid_argument("bounded_before_sn: bundle has no domain");
    const auto approach = approach_index_table(bundle, n_list);
    const double expo = blowup_exponent(q);

    std::vector<BoundedBeforeSnEntry> out(n_list.size());
    for (std::size_t j = 0; j < n_list.size(); ++j) {
        out[j].n = n_list[j];
        out[j].bound =
            c_hat * std::pow(static_cast<double>(n_list[j]), expo) * (1.0 + eps_tol);
        out[j].vacuous =
            bundle.domain->signed_distance(bundle.x0) <= 1.0 / static_cast<double>(n_list[j]);
    }

    const std::size_t step_floor = std::max<std::size_t>(kLowSampleFloor, field.regression_floor);
    for (auto cur = bundle.forward_cursor(); !cur.done(); cur.advance()) {
        const std::size_t i = cur.step();
        if (i >= bundle.grid.n_steps) break;
        if (field.active_counts[i] < step_floor) continue;
        for (std::size_t p = 0; p < bundle.n_paths; ++p) {
            const ExitInfo& e = bundle.exit_S[p];
            if (e.exited && e.index <= i) continue;
            double y = -1.0;
            for (std::size_t j = 0; j < n_list.size(); ++j) {
                if (i >= approach[p][j]) continue;  // window is strictly before S_n
                if (y < 0.0) y = field.eval_y(i, cur.path_state(p));
                out[j].max_y = std::max(out[j].max_y, y);
            }
        }
    }
    for (auto& entry : out) entry.violated = !entry.vacuous && entry.max_y > entry.bound;
    return out;
}

WeightedZResult weighted_z_integral(const ValueField& field, const PathBundle& bundle, double q,
                                    double eps) {
    if (!field.has_z())
        throw std::invalid_argument("weighted_z_integral: field carries no Z estimates");
    if (!(eps > 1.0)) throw std::invalid_argument("weighted_z_integral: eps must exceed 1");
    if (!bundle.domain)
        throw std::invalid_argument("weighted_z_integral: bundle has no domain");

    const double expo = 2.0 * blowup_exponent(q) + eps;
    const double dt = bundle.grid.dt();
    // the one-step collapse layer carries indicator noise at the scale of the
    // truncation level, not the continuum Z; keep the estimate outside it
    const double layer = 5.0 * bundle.sigma_x0 * std::sqrt(dt);
    std::vector<double> per_path(bundle.n_paths, 0.0);
    for (auto cur = bundle.forward_cursor(); !cur.done(); cur.advance()) {
        const std::size_t i = cur.step();
        if (i >= bundle.grid.n_steps) break;
        for (std::size_t p = 0; p < bundle.n_paths; ++p) {
            const ExitInfo& e = bundle.exit_S[p];
            if (e.exited && e.index <= i) continue;
            const auto x = cur.path_state(p);
            const double d = bundle.domain->signed_distance(x);
            if (!(d > layer)) continue;
            double z2 = 0.0;
            for (std::size_t comp = 0; comp < bundle.dim; ++comp) {
                const double z = field.eval_z(i, x, comp);
                z2 += z * z;
            }
            per_path[p] += z2 * std::pow(d, expo) * dt;
        }
    }
    const auto s = linalg::mean_stderr(per_path);
    return WeightedZResult{s.mean, s.stderr_};
}

}  // namespace bsde::diagnostics
