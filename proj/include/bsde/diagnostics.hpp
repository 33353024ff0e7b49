#pragma once

#include <span>
#include <vector>

#include "bsde/backward.hpp"
#include "bsde/forward.hpp"

namespace bsde::diagnostics {

enum class EventKind { tau_le_S, tau_gt_S };

struct CurvePoint {
    double t = 0.0;
    double mean = 0.0;
    double stderr_ = 0.0;
    uint32_t n = 0;
    bool low_sample = false;  // fewer than 30 event paths at this time
};

struct ContinuityCurve {
    EventKind event = EventKind::tau_le_S;
    std::vector<CurvePoint> points;

    // first/last point backed by an adequate sample, nullptr when none
    const CurvePoint* first_ok() const;
    const CurvePoint* last_ok() const;
};

// E-hat[Yhat_t 1{event, t < S}] per reported time: the field averaged over
// all paths against the event-and-active indicator. Decay of this curve
// toward the exit-time bulk is the observable (expectation) form of
// continuity at S. `n` counts the event paths backing each point.
ContinuityCurve continuity_curve(const ValueField& field, const PathBundle& bundle,
                                 EventKind event, std::size_t report_every = 0);

struct MomentReport {
    double estimate = 0.0;
    double trimmed_estimate = 0.0;  // top 0.1% of samples removed
    double rel_change = 0.0;
    bool divergence_suspect = false;  // removal moved the estimate by > 25%
    std::size_t n_samples = 0;
    std::size_t n_boundary_excluded = 0;  // grid ties sitting on the boundary
};

// Empirical rho-moment of the Keller-Osserman surrogate of Y at tau on
// {tau <= S}: mean of (c_fit * dist(Xi_tau)^{-2(p-1)})^rho, with a trimmed
// re-estimate as the heavy-tail probe.
MomentReport moment_estimate_xi1(const PathBundle& bundle, double q, double varrho, double c_fit);

struct KoFit {
    double c_hat = 0.0;
    std::size_t argmax_path = 0;
    std::size_t argmax_step = 0;
    double argmax_dist = 0.0;
};

// Envelope constant fit: max over sampled (path, time) of Yhat * dist^{2(p-1)}.
KoFit ko_bound_fit(const ValueField& field, const PathBundle& bundle, double q,
                   std::size_t report_every = 0);

struct BoundedBeforeSnEntry {
    int n = 0;
    double max_y = 0.0;   // max of Yhat strictly before the approach time S_n
    double bound = 0.0;   // c_hat * n^{2(p-1)} * (1 + eps_tol)
    bool violated = false;
    bool vacuous = false;  // dist(x0) <= 1/n: the window is empty at the start
};

std::vector<BoundedBeforeSnEntry> bounded_before_sn(const ValueField& field,
                                                    const PathBundle& bundle,
                                                    std::span<const int> n_list, double q,
                                                    double c_hat, double eps_tol = 0.1);

struct WeightedZResult {
    double estimate = 0.0;
    double stderr_ = 0.0;
};

// Monte Carlo estimate of E int_0^S |Zhat|^2 dist^{4(p-1)+eps} dt; bounded in
// the truncation level when the Z-integral estimate is sound.
WeightedZResult weighted_z_integral(const ValueField& field, const PathBundle& bundle, double q,
                                    double eps);

}  // namespace bsde::diagnostics
