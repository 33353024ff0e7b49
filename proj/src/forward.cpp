#include "bsde/forward.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <thread>

#include "bsde/errors.hpp"

namespace bsde {

namespace detail {
struct BundleAccess {
    static std::vector<double>& full(PathBundle& b) { return b.full_states_; }
    static std::vector<double>& checkpoints(PathBundle& b) { return b.checkpoints_; }
    static std::size_t& stride(PathBundle& b) { return b.stride_; }
    static SDECoefficients& coeffs(PathBundle& b) { return b.coeffs_; }
    static bool& has_coeffs(PathBundle& b) { return b.has_coeffs_; }
};
}  // namespace detail

namespace {

using detail::BundleAccess;

constexpr std::size_t kMaxDim = 8;
constexpr char kBundleMagic[8] = {'B', 'S', 'D', 'E', 'B', 'N', 'D', 'L'};

std::size_t resolve_threads(std::size_t n_threads) {
    if (n_threads != 0) return n_threads;
    const unsigned hc = std::thread::hardware_concurrency();
    return hc == 0 ? 1 : hc;
}

// Fixed-size path chunks assigned to threads; chunk boundaries do not depend
// on the thread count, so per-path results are scheduling independent.
template <typename Fn>
void parallel_over_paths(std::size_t n_paths, std::size_t n_threads, Fn&& fn) {
    n_threads = std::min(resolve_threads(n_threads), std::max<std::size_t>(1, n_paths));
    if (n_threads <= 1) {
        fn(0, n_paths);
        return;
    }
    std::vector<std::thread> workers;
    const std::size_t chunk = (n_paths + n_threads - 1) / n_threads;
    for (std::size_t t = 0; t < n_threads; ++t) {
        const std::size_t lo = t * chunk;
        const std::size_t hi = std::min(n_paths, lo + chunk);
        if (lo >= hi) break;
        workers.emplace_back([&fn, lo, hi] { fn(lo, hi); });
    }
    for (auto& w : workers) w.join();
}

// One Euler-Maruyama step; shared by simulation and block regeneration so the
// two produce identical bits.
inline void euler_step(const SDECoefficients& coeffs, const PathStream& stream, std::size_t dim,
                       std::size_t step, double dt, double sqrt_dt, std::span<const double> in,
                       std::span<double> out, std::span<double> drift_buf,
                       std::span<double> sigma_buf) {
    coeffs.drift(in, drift_buf.subspan(0, dim));
    coeffs.diffusion(in, sigma_buf.subspan(0, dim * dim));
    double dw[kMaxDim];
    for (std::size_t j = 0; j < dim; ++j)
        dw[j] = sqrt_dt * stream.gauss(static_cast<uint32_t>(step), static_cast<uint32_t>(j));
    for (std::size_t i = 0; i < dim; ++i) {
        double v = in[i] + drift_buf[i] * dt;
        for (std::size_t j = 0; j < dim; ++j) v += sigma_buf[i * dim + j] * dw[j];
        out[i] = v;
    }
}

double sigma_scalar_1d(const SDECoefficients& coeffs, std::span<const double> x) {
    double s = 0.0;
    coeffs.diffusion(x, std::span<double>(&s, 1));
    return s;
}

// Incremental exit detection along a path.
class ExitDetector {
public:
    ExitDetector(const Domain& domain, const TimeGrid& grid, bool bridge)
        : domain_(&domain),
          grid_(grid),
          bridge_(bridge && domain.kind == Domain::Kind::interval && domain.dim == 1) {}

    void start(std::span<const double> x0) {
        d_prev_ = domain_->signed_distance(x0);
        x_prev_.assign(x0.begin(), x0.end());
        done_ = false;
    }

    // Returns true when the exit has been resolved at step -> step+1.
    bool feed(std::size_t step, std::span<const double> x_next, const PathStream& stream,
              const SDECoefficients* coeffs, ExitInfo& out) {
        if (done_) return false;
        const double d_next = domain_->signed_distance(x_next);
        const double dt = grid_.dt();
        if (d_next <= 0.0) {
            out.exited = true;
            out.index = step + 1;
            const double span = d_prev_ - d_next;
            const double theta = span > 0.0 ? d_prev_ / span : 1.0;
            out.time = grid_.time(step) + std::clamp(theta, 0.0, 1.0) * dt;
            out.state = domain_->project_to_boundary(x_next);
            done_ = true;
        } else if (bridge_ && coeffs != nullptr && d_prev_ > 0.0) {
            const double sigma = sigma_scalar_1d(*coeffs, x_prev_);
            const double p = bridge_crossing_prob(d_prev_, d_next, sigma, dt);
            const double u =
                stream.uniform(static_cast<uint32_t>(step), DrawPurpose::bridge, slot_);
            if (u < p) {
                out.exited = true;
                out.index = step + 1;
                out.time = grid_.time(step) + 0.5 * dt;
                out.state = domain_->project_to_boundary(x_prev_);
                done_ = true;
            }
        }
        d_prev_ = d_next;
        x_prev_.assign(x_next.begin(), x_next.end());
        return done_;
    }

    void set_bridge_slot(uint32_t slot) { slot_ = slot; }
    bool done() const { return done_; }

private:
    const Domain* domain_;
    TimeGrid grid_;
    bool bridge_;
    bool done_ = false;
    double d_prev_ = 0.0;
    std::vector<double> x_prev_;
    uint32_t slot_ = 0;
};

ExitInfo censored_info(const TimeGrid& grid, std::span<const double> last_state) {
    ExitInfo e;
    e.exited = false;
    e.index = grid.n_steps;
    e.time = grid.t_max;
    e.state.assign(last_state.begin(), last_state.end());
    return e;
}

struct BinWriter {
    std::ofstream out;
    explicit BinWriter(const std::filesystem::path& p) : out(p, std::ios::binary) {
        if (!out) throw std::invalid_argument("save_bundle: cannot open " + p.string());
    }
    template <typename T>
    void put(const T& v) {
        out.write(reinterpret_cast<const char*>(&v), sizeof(T));
    }
    void put_doubles(std::span<const double> v) {
        out.write(reinterpret_cast<const char*>(v.data()),
                  static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
};

struct BinReader {
    std::ifstream in;
    explicit BinReader(const std::filesystem::path& p) : in(p, std::ios::binary) {
        if (!in) throw std::invalid_argument("load_bundle: cannot open " + p.string());
    }
    template <typename T>
    T get() {
        T v;
        in.read(reinterpret_cast<char*>(&v), sizeof(T));
        if (!in) throw std::invalid_argument("load_bundle: truncated file");
        return v;
    }
    void get_doubles(std::span<double> v) {
        in.read(reinterpret_cast<char*>(v.data()),
                static_cast<std::streamsize>(v.size() * sizeof(double)));
        if (!in) throw std::invalid_argument("load_bundle: truncated file");
    }
};

void write_exits(BinWriter& w, const std::vector<ExitInfo>& exits, std::size_t dim) {
    for (const auto& e : exits) {
        w.put<uint8_t>(e.exited ? 1 : 0);
        w.put<uint64_t>(e.index);
        w.put<double>(e.time);
        for (std::size_t j = 0; j < dim; ++j) w.put<double>(j < e.state.size() ? e.state[j] : 0.0);
    }
}

std::vector<ExitInfo> read_exits(BinReader& r, std::size_t n, std::size_t dim) {
    std::vector<ExitInfo> exits(n);
    for (auto& e : exits) {
        e.exited = r.get<uint8_t>() != 0;
        e.index = r.get<uint64_t>();
        e.time = r.get<double>();
        e.state.resize(dim);
        r.get_doubles(e.state);
    }
    return exits;
}

PathBundle simulate_impl(const SDECoefficients& coeffs, std::span<const double> x0,
                         const Domain* domain, const TimeGrid& grid, std::size_t n_paths,
                         uint64_t seed, const SimulateOptions& opts) {
    if (coeffs.dim != x0.size()) throw std::invalid_argument("simulate_paths: x0 dimension mismatch");
    if (coeffs.dim > kMaxDim) throw std::invalid_argument("simulate_paths: dimension above 8");
    if (n_paths < 1) throw std::invalid_argument("simulate_paths: n_paths must be >= 1");
    if (!(grid.t_max > 0.0) || grid.n_steps < 1)
        throw std::invalid_argument("simulate_paths: invalid time grid");
    if (domain != nullptr && !(domain->signed_distance(x0) > 0.0))
        throw std::invalid_argument("simulate_paths: x0 not inside the domain");

    PathBundle b;
    b.grid = grid;
    b.seed = seed;
    b.n_paths = n_paths;
    b.dim = coeffs.dim;
    b.x0.assign(x0.begin(), x0.end());
    {
        std::vector<double> sig(coeffs.dim * coeffs.dim);
        coeffs.diffusion(x0, sig);
        double fro = 0.0;
        for (double v : sig) fro += v * v;
        b.sigma_x0 = std::sqrt(fro / static_cast<double>(coeffs.dim));
    }
    b.deterministic_horizon = (domain == nullptr);
    b.bridge_correction = opts.bridge_correction && domain != nullptr;
    if (domain != nullptr) b.domain = *domain;
    BundleAccess::coeffs(b) = coeffs;
    BundleAccess::has_coeffs(b) = true;
    b.exit_S.resize(n_paths);

    const std::size_t dim = coeffs.dim;
    const std::size_t plane = n_paths * dim;
    const std::size_t n_planes = grid.n_steps + 1;
    const std::size_t full_bytes = n_planes * plane * sizeof(double);
    std::size_t& stride = BundleAccess::stride(b);
    std::vector<double>& full_states = BundleAccess::full(b);
    std::vector<double>& checkpoints = BundleAccess::checkpoints(b);
    if (full_bytes <= opts.memory_budget_mb * (1u << 20)) {
        stride = 1;
        full_states.resize(n_planes * plane);
    } else {
        stride = 64;
        checkpoints.resize(((n_planes + stride - 1) / stride) * plane);
    }

    const double dt = grid.dt();
    const double sqrt_dt = std::sqrt(dt);

    parallel_over_paths(n_paths, opts.n_threads, [&](std::size_t lo, std::size_t hi) {
        double cur[kMaxDim], nxt[kMaxDim], drift_buf[kMaxDim], sigma_buf[kMaxDim * kMaxDim];
        for (std::size_t p = lo; p < hi; ++p) {
            const PathStream stream(seed, p);
            std::copy(x0.begin(), x0.end(), cur);
            std::optional<ExitDetector> detector;
            if (domain) {
                detector.emplace(*domain, grid, b.bridge_correction);
                detector->start(std::span<const double>(cur, dim));
            }
            ExitInfo info;
            auto store = [&](std::size_t step, const double* s) {
                if (stride == 1) {
                    std::copy(s, s + dim, full_states.data() + step * plane + p * dim);
                } else if (step % stride == 0) {
                    std::copy(s, s + dim, checkpoints.data() + (step / stride) * plane + p * dim);
                }
            };
            store(0, cur);
            for (std::size_t step = 0; step < grid.n_steps; ++step) {
                euler_step(coeffs, stream, dim, step, dt, sqrt_dt,
                           std::span<const double>(cur, dim), std::span<double>(nxt, dim),
                           std::span<double>(drift_buf, kMaxDim),
                           std::span<double>(sigma_buf, kMaxDim * kMaxDim));
                bool finite = true;
                for (std::size_t j = 0; j < dim; ++j) finite = finite && std::isfinite(nxt[j]);
                if (!finite)
                    throw NumericalError("simulate_paths: non-finite state on path " +
                                         std::to_string(p) + " at step " + std::to_string(step));
                if (detector && !detector->done())
                    detector->feed(step, std::span<const double>(nxt, dim), stream, &coeffs, info);
                std::copy(nxt, nxt + dim, cur);
                store(step + 1, cur);
            }
            if (domain) {
                b.exit_S[p] = detector->done()
                                  ? info
                                  : censored_info(grid, std::span<const double>(cur, dim));
            } else {
                ExitInfo e;
                e.exited = true;
                e.index = grid.n_steps;
                e.time = grid.t_max;
                e.state.assign(cur, cur + dim);
                b.exit_S[p] = e;
            }
        }
    });

    return b;
}

}  // namespace

bool tau_le_S(const ExitInfo& exit_S, const ExitInfo& exit_tau) {
    if (!exit_tau.exited) return false;
    if (!exit_S.exited) return true;
    return exit_tau.time <= exit_S.time;  // ties toward tau <= S
}

double bridge_crossing_prob(double d0, double d1, double sigma, double dt) {
    if (d0 <= 0.0 || d1 <= 0.0) return 1.0;
    if (sigma == 0.0 || dt <= 0.0) return 0.0;
    return std::exp(-2.0 * d0 * d1 / (sigma * sigma * dt));
}

double PathBundle::censored_fraction() const {
    if (exit_S.empty()) return 0.0;
    std::size_t n = 0;
    for (const auto& e : exit_S)
        if (!e.exited) ++n;
    return static_cast<double>(n) / static_cast<double>(exit_S.size());
}

void PathBundle::regenerate_block(std::size_t first_step, std::size_t n_steps_in_block,
                                  std::vector<double>& out) const {
    const std::size_t plane = n_paths * dim;
    out.resize((n_steps_in_block + 1) * plane);
    if (stride_ == 1) {
        std::copy(full_states_.begin() + static_cast<std::ptrdiff_t>(first_step * plane),
                  full_states_.begin() +
                      static_cast<std::ptrdiff_t>((first_step + n_steps_in_block + 1) * plane),
                  out.begin());
        return;
    }
    if (!has_coeffs_)
        throw NumericalError("PathBundle: checkpointed bundle without coefficients");
    if (first_step % stride_ != 0)
        throw NumericalError("PathBundle: block must start at a checkpoint");
    std::copy(checkpoints_.begin() + static_cast<std::ptrdiff_t>((first_step / stride_) * plane),
              checkpoints_.begin() +
                  static_cast<std::ptrdiff_t>((first_step / stride_ + 1) * plane),
              out.begin());
    const double dt = grid.dt();
    const double sqrt_dt = std::sqrt(dt);
    const SDECoefficients& cf = coeffs_;
    const std::size_t d = dim;
    parallel_over_paths(n_paths, 0, [&](std::size_t lo, std::size_t hi) {
        double drift_buf[kMaxDim], sigma_buf[kMaxDim * kMaxDim];
        for (std::size_t p = lo; p < hi; ++p) {
            const PathStream stream(seed, p);
            for (std::size_t j = 0; j < n_steps_in_block; ++j) {
                euler_step(cf, stream, d, first_step + j, dt, sqrt_dt,
                           std::span<const double>(out.data() + j * plane + p * d, d),
                           std::span<double>(out.data() + (j + 1) * plane + p * d, d),
                           std::span<double>(drift_buf, kMaxDim),
                           std::span<double>(sigma_buf, kMaxDim * kMaxDim));
            }
        }
    });
}

std::vector<double> PathBundle::state(std::size_t path, std::size_t step) const {
    if (path >= n_paths || step > grid.n_steps)
        throw std::invalid_argument("PathBundle::state: index out of range");
    if (stride_ == 1) {
        const std::size_t plane = n_paths * dim;
        const double* p = full_states_.data() + step * plane + path * dim;
        return std::vector<double>(p, p + dim);
    }
    const std::size_t cp = step / stride_;
    std::vector<double> x(checkpoints_.begin() +
                              static_cast<std::ptrdiff_t>(cp * n_paths * dim + path * dim),
                          checkpoints_.begin() +
                              static_cast<std::ptrdiff_t>(cp * n_paths * dim + (path + 1) * dim));
    if (!has_coeffs_ && step != cp * stride_)
        throw NumericalError("PathBundle::state: checkpointed bundle without coefficients");
    const double dt = grid.dt();
    const double sqrt_dt = std::sqrt(dt);
    const PathStream stream(seed, path);
    double buf[kMaxDim], drift_buf[kMaxDim], sigma_buf[kMaxDim * kMaxDim];
    std::copy(x.begin(), x.end(), buf);
    for (std::size_t s = cp * stride_; s < step; ++s) {
        euler_step(coeffs_, stream, dim, s, dt, sqrt_dt, std::span<const double>(buf, dim),
                   std::span<double>(buf, dim), std::span<double>(drift_buf, kMaxDim),
                   std::span<double>(sigma_buf, kMaxDim * kMaxDim));
    }
    return std::vector<double>(buf, buf + dim);
}

PathBundle::StepCursor::StepCursor(const PathBundle& b, std::size_t start_step, bool backward)
    : bundle_(&b), backward_(backward), step_(start_step) {
    if (b.checkpointed()) load_block(step_ / b.stride_);
}

void PathBundle::StepCursor::load_block(std::size_t block) {
    const std::size_t first = block * bundle_->stride_;
    const std::size_t len = std::min(bundle_->stride_, bundle_->grid.n_steps - first);
    bundle_->regenerate_block(first, len, buffer_);
    block_ = block;
}

std::span<const double> PathBundle::StepCursor::plane() const {
    const std::size_t plane_size = bundle_->n_paths * bundle_->dim;
    if (!bundle_->checkpointed())
        return std::span<const double>(bundle_->full_states_.data() + step_ * plane_size,
                                       plane_size);
    const std::size_t offset = step_ - block_ * bundle_->stride_;
    return std::span<const double>(buffer_.data() + offset * plane_size, plane_size);
}

std::span<const double> PathBundle::StepCursor::path_state(std::size_t path) const {
    return plane().subspan(path * bundle_->dim, bundle_->dim);
}

bool PathBundle::StepCursor::done() const {
    return backward_ ? step_ == static_cast<std::size_t>(-1) : step_ > bundle_->grid.n_steps;
}

void PathBundle::StepCursor::advance() {
    if (backward_) {
        if (step_ == 0) {
            step_ = static_cast<std::size_t>(-1);
            return;
        }
        --step_;
    } else {
        ++step_;
        if (done()) return;
    }
    if (bundle_->checkpointed()) {
        const std::size_t block = step_ / bundle_->stride_;
        if (block != block_) load_block(block);
    }
}

PathBundle simulate_paths(const SDECoefficients& coeffs, std::span<const double> x0,
                          const Domain& domain, const TimeGrid& grid, std::size_t n_paths,
                          uint64_t seed, const SimulateOptions& opts) {
    return simulate_impl(coeffs, x0, &domain, grid, n_paths, seed, opts);
}

PathBundle simulate_free_paths(const SDECoefficients& coeffs, std::span<const double> x0,
                               const TimeGrid& grid, std::size_t n_paths, uint64_t seed,
                               const SimulateOptions& opts) {
    return simulate_impl(coeffs, x0, nullptr, grid, n_paths, seed, opts);
}

ExitInfo detect_exit(std::span<const double> path_states, std::size_t dim, const Domain& domain,
                     const TimeGrid& grid, bool bridge_correction, const PathStream& stream,
                     const SDECoefficients* coeffs) {
    if (dim == 0 || path_states.size() % dim != 0)
        throw std::invalid_argument("detect_exit: bad state array");
    const std::size_t n = path_states.size() / dim;
    if (n == 0) throw std::invalid_argument("detect_exit: empty path");
    if (bridge_correction && coeffs == nullptr)
        throw std::invalid_argument("detect_exit: bridge correction needs SDE coefficients");
    auto at = [&](std::size_t i) { return path_states.subspan(i * dim, dim); };
    if (!(domain.signed_distance(at(0)) > 0.0))
        throw std::invalid_argument("detect_exit: path starts outside the domain");
    ExitDetector detector(domain, grid, bridge_correction);
    detector.start(at(0));
    ExitInfo info;
    for (std::size_t i = 0; i + 1 < n; ++i) {
        if (detector.feed(i, at(i + 1), stream, coeffs, info)) return info;
    }
    return censored_info(grid, at(n - 1));
}

std::map<int, std::optional<std::size_t>> approach_times(std::span<const double> path_states,
                                                         std::size_t dim, const Domain& domain,
                                                         std::span<const int> n_list) {
    if (dim == 0 || path_states.size() % dim != 0)
        throw std::invalid_argument("approach_times: bad state array");
    std::map<int, std::optional<std::size_t>> out;
    for (int n : n_list) {
        if (n < 1) throw std::invalid_argument("approach_times: n must be >= 1");
        out[n] = std::nullopt;
    }
    const std::size_t n_states = path_states.size() / dim;
    for (std::size_t i = 0; i < n_states; ++i) {
        const double d = domain.signed_distance(path_states.subspan(i * dim, dim));
        for (auto& [n, idx] : out) {
            if (!idx && d <= 1.0 / static_cast<double>(n)) idx = i;
        }
    }
    return out;
}

std::vector<std::vector<std::size_t>> approach_index_table(const PathBundle& bundle,
                                                           std::span<const int> n_list) {
    if (!bundle.domain) throw std::invalid_argument("approach_index_table: bundle has no domain");
    const std::size_t sentinel = bundle.grid.n_steps + 1;
    std::vector<std::vector<std::size_t>> table(bundle.n_paths,
                                                std::vector<std::size_t>(n_list.size(), sentinel));
    std::vector<double> thresholds(n_list.size());
    for (std::size_t j = 0; j < n_list.size(); ++j) {
        if (n_list[j] < 1) throw std::invalid_argument("approach_index_table: n must be >= 1");
        thresholds[j] = 1.0 / static_cast<double>(n_list[j]);
    }
    for (auto cur = bundle.forward_cursor(); !cur.done(); cur.advance()) {
        const std::size_t i = cur.step();
        for (std::size_t p = 0; p < bundle.n_paths; ++p) {
            if (i > bundle.exit_S[p].index) continue;
            const double d = bundle.domain->signed_distance(cur.path_state(p));
            for (std::size_t j = 0; j < thresholds.size(); ++j) {
                if (table[p][j] == sentinel && d <= thresholds[j]) table[p][j] = i;
            }
        }
    }
    return table;
}

TauSource TauSource::independent(SDECoefficients coeffs, std::vector<double> x0, Domain domain) {
    TauSource s;
    s.kind = Kind::independent_diffusion;
    s.coeffs = std::move(coeffs);
    s.x0 = std::move(x0);
    s.domain = std::move(domain);
    return s;
}

TauSource TauSource::subdomain_of_same_path(Domain sub) {
    TauSource s;
    s.kind = Kind::subdomain;
    s.sub = std::move(sub);
    return s;
}

TauSource TauSource::from_bundle(const PathBundle& other) {
    TauSource s;
    s.kind = Kind::from_bundle;
    s.other = &other;
    return s;
}

void joint_exit(PathBundle& bundle, const TauSource& source, uint64_t seed_tau,
                std::size_t n_threads) {
    std::vector<ExitInfo> taus(bundle.n_paths);
    switch (source.kind) {
        case TauSource::Kind::independent_diffusion: {
            if (source.coeffs.dim != source.x0.size())
                throw std::invalid_argument("joint_exit: tau x0 dimension mismatch");
            if (!(source.domain.signed_distance(source.x0) > 0.0))
                throw std::invalid_argument("joint_exit: tau x0 not inside its domain");
            const TimeGrid grid = bundle.grid;
            const double dt = grid.dt();
            const double sqrt_dt = std::sqrt(dt);
            const std::size_t dim = source.coeffs.dim;
            const bool bridge = bundle.bridge_correction;
            parallel_over_paths(bundle.n_paths, n_threads, [&](std::size_t lo, std::size_t hi) {
                double cur[kMaxDim], nxt[kMaxDim], drift_buf[kMaxDim],
                    sigma_buf[kMaxDim * kMaxDim];
                for (std::size_t p = lo; p < hi; ++p) {
                    const PathStream stream(seed_tau, p);
                    std::copy(source.x0.begin(), source.x0.end(), cur);
                    ExitDetector detector(source.domain, grid, bridge);
                    detector.start(std::span<const double>(cur, dim));
                    ExitInfo info;
                    for (std::size_t step = 0; step < grid.n_steps && !detector.done(); ++step) {
                        euler_step(source.coeffs, stream, dim, step, dt, sqrt_dt,
                                   std::span<const double>(cur, dim), std::span<double>(nxt, dim),
                                   std::span<double>(drift_buf, kMaxDim),
                                   std::span<double>(sigma_buf, kMaxDim * kMaxDim));
                        detector.feed(step, std::span<const double>(nxt, dim), stream,
                                      &source.coeffs, info);
                        std::copy(nxt, nxt + dim, cur);
                    }
                    taus[p] = detector.done()
                                  ? info
                                  : censored_info(grid, std::span<const double>(cur, dim));
                }
            });
            break;
        }
        case TauSource::Kind::subdomain: {
            if (source.sub.dim != bundle.dim)
                throw std::invalid_argument("joint_exit: subdomain dimension mismatch");
            std::vector<ExitDetector> detectors(bundle.n_paths,
                                                ExitDetector(source.sub, bundle.grid, false));
            std::vector<ExitInfo> infos(bundle.n_paths);
            std::vector<bool> resolved(bundle.n_paths, false);
            auto cur = bundle.forward_cursor();
            for (std::size_t p = 0; p < bundle.n_paths; ++p) detectors[p].start(cur.path_state(p));
            std::size_t prev_step = 0;
            for (cur.advance(); !cur.done(); cur.advance()) {
                for (std::size_t p = 0; p < bundle.n_paths; ++p) {
                    if (resolved[p]) continue;
                    const PathStream stream(seed_tau, p);
                    if (detectors[p].feed(prev_step, cur.path_state(p), stream, nullptr, infos[p]))
                        resolved[p] = true;
                }
                ++prev_step;
            }
            for (std::size_t p = 0; p < bundle.n_paths; ++p) {
                taus[p] = resolved[p]
                              ? infos[p]
                              : censored_info(bundle.grid,
                                              std::span<const double>(bundle.exit_S[p].state));
            }
            break;
        }
        case TauSource::Kind::from_bundle: {
            if (source.other == nullptr)
                throw std::invalid_argument("joint_exit: missing source bundle");
            if (!(source.other->grid == bundle.grid))
                throw std::invalid_argument("joint_exit: mismatched grids");
            if (source.other->n_paths != bundle.n_paths)
                throw std::invalid_argument("joint_exit: mismatched path counts");
            taus = source.other->exit_S;
            break;
        }
    }
    bundle.exit_tau = std::move(taus);
    bundle.tau_tie_to_le = true;
}

double calibrate_t_max(const SDECoefficients& coeffs, std::span<const double> x0,
                       const Domain& domain, std::size_t pilot_paths, uint64_t seed,
                       double target_fraction, double t0, std::size_t pilot_steps) {
    double t_max = t0;
    for (int it = 0; it < 24; ++it) {
        SimulateOptions opts;
        opts.bridge_correction = false;
        const PathBundle pilot = simulate_paths(coeffs, x0, domain, TimeGrid{t_max, pilot_steps},
                                                pilot_paths, seed, opts);
        if (pilot.censored_fraction() < target_fraction) return t_max;
        t_max *= 2.0;
    }
    throw NumericalError("calibrate_t_max: horizon grew beyond 2^24 * t0 without satisfying the "
                         "censoring target");
}

void save_bundle(const PathBundle& bundle, const std::filesystem::path& file) {
    BinWriter w(file);
    w.out.write(kBundleMagic, 8);
    w.put<uint32_t>(1u);  // version
    w.put<uint32_t>(static_cast<uint32_t>(bundle.dim));
    w.put<uint64_t>(bundle.n_paths);
    w.put<uint64_t>(bundle.grid.n_steps);
    w.put<double>(bundle.grid.t_max);
    w.put<uint64_t>(bundle.seed);
    uint8_t flags = 0;
    if (bundle.exit_tau) flags |= 1;
    if (bundle.deterministic_horizon) flags |= 2;
    if (bundle.bridge_correction) flags |= 4;
    if (bundle.domain) flags |= 8;
    w.put<uint8_t>(flags);
    if (bundle.domain) {
        w.put<uint8_t>(static_cast<uint8_t>(bundle.domain->kind));
        w.put<uint32_t>(static_cast<uint32_t>(bundle.domain->dim));
        w.put<uint32_t>(static_cast<uint32_t>(bundle.domain->a.size()));
        w.put_doubles(bundle.domain->a);
        w.put<uint32_t>(static_cast<uint32_t>(bundle.domain->b.size()));
        w.put_doubles(bundle.domain->b);
    }
    w.put_doubles(bundle.x0);
    w.put<double>(bundle.sigma_x0);
    for (auto cur = bundle.forward_cursor(); !cur.done(); cur.advance()) w.put_doubles(cur.plane());
    write_exits(w, bundle.exit_S, bundle.dim);
    if (bundle.exit_tau) write_exits(w, *bundle.exit_tau, bundle.dim);
    if (!w.out) throw NumericalError("save_bundle: write failed");
}

PathBundle load_bundle(const std::filesystem::path& file) {
    BinReader r(file);
    char magic[8];
    r.in.read(magic, 8);
    if (!r.in || std::memcmp(magic, kBundleMagic, 8) != 0)
        throw std::invalid_argument("load_bundle: not a bundle file");
    const uint32_t version = r.get<uint32_t>();
    if (version != 1) throw std::invalid_argument("load_bundle: unsupported version");
    PathBundle b;
    b.dim = r.get<uint32_t>();
    b.n_paths = r.get<uint64_t>();
    b.grid.n_steps = r.get<uint64_t>();
    b.grid.t_max = r.get<double>();
    b.seed = r.get<uint64_t>();
    const uint8_t flags = r.get<uint8_t>();
    b.deterministic_horizon = (flags & 2) != 0;
    b.bridge_correction = (flags & 4) != 0;
    if (flags & 8) {
        Domain d;
        d.kind = static_cast<Domain::Kind>(r.get<uint8_t>());
        d.dim = r.get<uint32_t>();
        d.a.resize(r.get<uint32_t>());
        r.get_doubles(d.a);
        d.b.resize(r.get<uint32_t>());
        r.get_doubles(d.b);
        b.domain = std::move(d);
    }
    b.x0.resize(b.dim);
    r.get_doubles(b.x0);
    b.sigma_x0 = r.get<double>();
    const std::size_t plane = b.n_paths * b.dim;
    BundleAccess::stride(b) = 1;
    BundleAccess::full(b).resize((b.grid.n_steps + 1) * plane);
    r.get_doubles(BundleAccess::full(b));
    b.exit_S = read_exits(r, b.n_paths, b.dim);
    if (flags & 1) b.exit_tau = read_exits(r, b.n_paths, b.dim);
    return b;
}

}  // namespace bsde
