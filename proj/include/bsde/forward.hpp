#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "bsde/model.hpp"
#include "bsde/rng.hpp"

namespace bsde {

struct TimeGrid {
    double t_max = 1.0;
    std::size_t n_steps = 1;

    double dt() const { return t_max / static_cast<double>(n_steps); }
    double time(std::size_t i) const { return dt() * static_cast<double>(i); }

    bool operator==(const TimeGrid&) const = default;
};

struct ExitInfo {
    bool exited = false;
    std::size_t index = 0;  // first grid index at/after the crossing
    double time = 0.0;      // estimated exit time
    std::vector<double> state;  // exit state projected to the boundary
};

// Exit-time order with grid-resolution ties broken toward tau <= S.
bool tau_le_S(const ExitInfo& exit_S, const ExitInfo& exit_tau);

// Brownian-bridge probability that a 1D path with boundary distances d0, d1
// at consecutive grid points crossed in between: exp(-2 d0 d1 / (sigma^2 dt)).
double bridge_crossing_prob(double d0, double d1, double sigma, double dt);

struct SimulateOptions {
    bool bridge_correction = false;
    std::size_t n_threads = 0;          // 0: hardware concurrency
    std::size_t memory_budget_mb = 384; // above this, states are checkpointed
};

namespace detail {
struct BundleAccess;
}

// Discretized forward paths with per-path exit bookkeeping.
//
// States are stored step-major (all paths of one step contiguous). When the
// full state array exceeds the memory budget only every stride-th step is
// kept and blocks are regenerated on demand from the counter-based stream,
// which reproduces the original simulation bit for bit.
class PathBundle {
public:
    TimeGrid grid;
    uint64_t seed = 0;
    std::size_t n_paths = 0;
    std::size_t dim = 1;
    std::optional<Domain> domain;       // absent for deterministic-horizon bundles
    bool deterministic_horizon = false;
    bool bridge_correction = false;
    bool tau_tie_to_le = true;          // metadata: tie rule for {tau <= S}
    std::vector<double> x0;
    double sigma_x0 = 0.0;              // diffusion scale at x0 (layer width reference)
    std::vector<ExitInfo> exit_S;
    std::optional<std::vector<ExitInfo>> exit_tau;

    double censored_fraction() const;

    // state of `path` at grid step `step` (regenerates a block when checkpointed)
    std::vector<double> state(std::size_t path, std::size_t step) const;

    bool checkpointed() const { return stride_ > 1; }
    std::size_t stride() const { return stride_; }

    // Sequential access to the per-step state planes. `plane` holds
    // n_paths * dim doubles, path-major.
    class StepCursor {
    public:
        StepCursor(const PathBundle& b, std::size_t start_step, bool backward);
        std::size_t step() const { return step_; }
        std::span<const double> plane() const;
        std::span<const double> path_state(std::size_t path) const;
        bool done() const;
        void advance();  // moves toward 0 (backward) or n_steps (forward)

    private:
        void load_block(std::size_t block);
        const PathBundle* bundle_;
        bool backward_;
        std::size_t step_;
        std::size_t block_ = static_cast<std::size_t>(-1);
        std::vector<double> buffer_;  // (block_len+1) planes when checkpointed
    };

    StepCursor forward_cursor() const { return StepCursor(*this, 0, false); }
    StepCursor backward_cursor() const { return StepCursor(*this, grid.n_steps, true); }

    // internal wiring (used by simulate_paths and the cursors)
    struct Storage {
        std::vector<double> full;         // full mode
        std::vector<double> checkpoints;  // every stride-th plane
        std::size_t stride = 1;
    };

private:
    friend struct detail::BundleAccess;

    void regenerate_block(std::size_t first_step, std::size_t n_steps_in_block,
                          std::vector<double>& out) const;

    std::vector<double> full_states_;   // (n_steps+1) planes
    std::vector<double> checkpoints_;   // ceil((n_steps+1)/stride) planes
    std::size_t stride_ = 1;
    SDECoefficients coeffs_;            // retained for regeneration
    bool has_coeffs_ = false;
};

// Euler-Maruyama simulation of dXi = b dt + sigma dW started at x0, with exit
// detection against `domain` (discrete rule plus optional Brownian-bridge
// correction for 1D intervals). Censored paths are flagged, not errors.
PathBundle simulate_paths(const SDECoefficients& coeffs, std::span<const double> x0,
                          const Domain& domain, const TimeGrid& grid, std::size_t n_paths,
                          uint64_t seed, const SimulateOptions& opts = {});

// Same dynamics without a domain: every path is marked exited at t_max with
// its final state (deterministic-horizon convention).
PathBundle simulate_free_paths(const SDECoefficients& coeffs, std::span<const double> x0,
                               const TimeGrid& grid, std::size_t n_paths, uint64_t seed,
                               const SimulateOptions& opts = {});

// Standalone exit detection on a stored path (path-major: step*dim + j).
ExitInfo detect_exit(std::span<const double> path_states, std::size_t dim, const Domain& domain,
                     const TimeGrid& grid, bool bridge_correction, const PathStream& stream,
                     const SDECoefficients* coeffs = nullptr);

// First grid index with signed distance <= 1/n, per requested n (absent when
// the threshold is never reached).
std::map<int, std::optional<std::size_t>> approach_times(std::span<const double> path_states,
                                                         std::size_t dim, const Domain& domain,
                                                         std::span<const int> n_list);

// Per-path approach indices over a whole bundle; row i holds path i's first
// index with dist <= 1/n for each n in n_list (n_steps+1 when never).
std::vector<std::vector<std::size_t>> approach_index_table(const PathBundle& bundle,
                                                           std::span<const int> n_list);

// Source of the second stopping time tau.
struct TauSource {
    enum class Kind { independent_diffusion, subdomain, from_bundle };

    Kind kind = Kind::independent_diffusion;
    // independent_diffusion
    SDECoefficients coeffs;
    std::vector<double> x0;
    Domain domain;
    // subdomain of the same path
    Domain sub;
    // exits copied from another bundle (grids must match)
    const PathBundle* other = nullptr;

    static TauSource independent(SDECoefficients coeffs, std::vector<double> x0, Domain domain);
    static TauSource subdomain_of_same_path(Domain sub);
    static TauSource from_bundle(const PathBundle& other);
};

// Fills bundle.exit_tau; ties at grid resolution are broken toward tau <= S.
void joint_exit(PathBundle& bundle, const TauSource& source, uint64_t seed_tau,
                std::size_t n_threads = 0);

// Doubles t_max until the non-exit fraction of a pilot run drops below
// `target_fraction`. The pilot reuses `seed` so calibration is reproducible.
double calibrate_t_max(const SDECoefficients& coeffs, std::span<const double> x0,
                       const Domain& domain, std::size_t pilot_paths, uint64_t seed,
                       double target_fraction = 1e-3, double t0 = 1.0,
                       std::size_t pilot_steps = 512);

// Versioned binary dump (layout documented in the README).
void save_bundle(const PathBundle& bundle, const std::filesystem::path& file);
PathBundle load_bundle(const std::filesystem::path& file);

}  // namespace bsde
