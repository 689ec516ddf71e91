#ifndef GFFPERC_TILT_HPP
#define GFFPERC_TILT_HPP

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "gffperc/gff.hpp"
#include "gffperc/lattice.hpp"
#include "gffperc/potential.hpp"

namespace gffperc {

// Cameron-Martin shift f(x) = delta P_x[H_K < T_U] on a box U.
struct TiltSpec {
    PointSet K;
    Box U;
    double delta = 0.0;
    std::vector<double> f;             // over U, row-major
    EquilibriumMeasure e;              // e_{K,U}
    double cap = 0.0;                  // cap_U(K)
    double log_normalizer = 0.0;       // delta^2 cap / 2, also H(tilted | P_U)
    double harmonic_residual = 0.0;    // max over U \ K of |f - P f|
    std::shared_ptr<const BoxSpectral> spectral;

    double f_at(const Point& x) const { return U.contains(x) ? f[U.index(x)] : 0.0; }
    std::string id() const;
};

// Throws std::invalid_argument unless K is inside the interior of U.
TiltSpec make_tilt(const PointSet& K, const Box& U, double delta, const PotentialOptions& opts = {});

// phi + f with phi ~ P_U; delta = 0 gives the untilted sample bit for bit.
FieldSample sample_tilted(const TiltSpec& spec, std::uint64_t seed, std::uint32_t replica = 0);

// <e_{K,U}, phi>
double equilibrium_pairing(const TiltSpec& spec, const FieldSample& phi);
// (1/delta) sum_x phi(x) ((I - P) f)(x); equals the above by the last-exit identity.
double dirichlet_pairing(const TiltSpec& spec, const FieldSample& phi);
// log dP_U/dtilted at a tilted sample: -delta <e, phi> + delta^2 cap / 2.
double log_weight(const TiltSpec& spec, const FieldSample& phi);

struct ImportanceOptions {
    double z = 1.96;
    double kurtosis_threshold = 6.0;   // log-weight kurtosis above which the CI is bootstrapped
    int bootstrap_resamples = 2000;
    double ess_warn = 100.0;
    double ess_unreliable = 10.0;
};

struct ImportanceEstimate {
    std::string event;
    std::string tilt_id;
    std::int64_t n = 0;
    std::int64_t hits = 0;             // tilted replicas in the event
    double p_hat = 0.0;
    double se = 0.0;
    double ci_lo = 0.0, ci_hi = 0.0;
    double ess = 0.0;
    double kurtosis = 0.0;             // of the log-weights
    bool bootstrap = false;
    bool warning = false;              // ess below ImportanceOptions::ess_warn
    bool unreliable = false;           // ess below ImportanceOptions::ess_unreliable
};

using EventDetector = std::function<bool(const FieldSample&)>;

ImportanceEstimate importance_estimate(const EventDetector& event, const std::string& name, const TiltSpec& spec,
                                       std::int64_t n, std::uint64_t seed, const ImportanceOptions& opts = {});
// Plain Monte Carlo under P_U with a Wilson interval; se is the binomial one.
ImportanceEstimate naive_estimate(const EventDetector& event, const std::string& name, const Box& U,
                                  std::int64_t n, std::uint64_t seed);

// Mean and standard error of delta <e, phi> - delta^2 cap / 2 under the tilt.
struct EntropyEstimate {
    double mean = 0.0;
    double se = 0.0;
    double exact = 0.0;
    std::int64_t n = 0;
};
EntropyEstimate empirical_relative_entropy(const TiltSpec& spec, std::int64_t n, std::uint64_t seed);

struct EntropyBoundRecord {
    double p_tilted = 0.0;
    double H = 0.0;
    double bound = 0.0;                // p exp(-(H + 1/e) / p)
    bool degenerate = false;           // p_tilted = 0
};
EntropyBoundRecord entropic_lower_bound(double p_tilted, double H);

// event,h,delta,N,L,n,p_hat,ci_lo,ci_hi,ess,seed
void write_importance_csv_header(std::ostream& os);
void write_importance_csv(std::ostream& os, const ImportanceEstimate& est, double h, double delta, int N, int L,
                          std::uint64_t seed);

}  // namespace gffperc

#endif
