#include "gffperc/tilt.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include <tbb/parallel_for.h>

#include "gffperc/digest.hpp"
#include "gffperc/excursion.hpp"
#include "gffperc/rng.hpp"

namespace gffperc {

namespace {

struct Moments {
    double mean = 0.0, var = 0.0;
};

Moments moments(const std::vector<double>& v) {
    Moments m;
    if (v.empty()) return m;
    m.mean = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
    for (double x : v) m.var += (x - m.mean) * (x - m.mean);
    m.var = v.size() > 1 ? m.var / double(v.size() - 1) : 0.0;
    return m;
}

double kurtosis(const std::vector<double>& v) {
    const double mu = std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
    double m2 = 0, m4 = 0;
    for (double x : v) {
        const double t = (x - mu) * (x - mu);
        m2 += t;
        m4 += t * t;
    }
    m2 /= double(v.size());
    m4 /= double(v.size());
    return m2 > 0 ? m4 / (m2 * m2) : 0.0;
}

}  // namespace

std::string TiltSpec::id() const {
    std::ostringstream os;
    os.precision(17);
    os << "tilt;" << U.describe() << ";delta=" << delta << ";K=";
    for (const auto& x : K) os << to_string(x);
    return sha256_hex(os.str()).substr(0, 16);
}

TiltSpec make_tilt(const PointSet& K, const Box& U, double delta, const PotentialOptions& opts) {
    if (K.empty()) throw std::invalid_argument("make_tilt: K is empty");
    if (!std::all_of(K.begin(), K.end(), [&](const Point& x) { return U.contains(x) && !U.on_boundary(x); }))
        throw std::invalid_argument("make_tilt: K must lie in the interior of U");
    TiltSpec s;
    s.K = K;
    s.U = U;
    s.delta = delta;
    const PointSet Uset = PointSet::from_box(U);
    const Eigen::VectorXd h = hitting_probability(K, Uset, opts);
    s.f.assign(static_cast<std::size_t>(U.volume()), 0.0);
    for (std::size_t i = 0; i < Uset.size(); ++i) {
        const double v = h(Eigen::Index(i));
        if (v < -1e-9 || v > 1 + 1e-9) throw std::runtime_error("make_tilt: hitting probability outside [0, 1]");
        s.f[U.index(Uset[i])] = delta * std::clamp(v, 0.0, 1.0);
    }
    for (const auto& x : K) s.f[U.index(x)] = delta;

    const auto& nn = neighbour_offsets(U.d, Adjacency::Nearest);
    for (std::int64_t i = 0; i < U.volume(); ++i) {
        const Point x = U.point(i);
        if (K.contains(x)) continue;
        double avg = 0;
        for (const auto& o : nn) avg += s.f_at(x + o);
        avg /= double(nn.size());
        s.harmonic_residual = std::max(s.harmonic_residual, std::abs(s.f[i] - avg));
    }
    if (delta != 0) s.harmonic_residual /= std::abs(delta);

    s.e = equilibrium_measure(K, Domain(Uset), GreenOracle(U.d), opts);
    s.cap = s.e.capacity;
    s.log_normalizer = delta * delta * s.cap / 2.0;
    s.spectral = std::make_shared<const BoxSpectral>(U);
    return s;
}

FieldSample sample_tilted(const TiltSpec& spec, std::uint64_t seed, std::uint32_t replica) {
    FieldSample phi = sample_dirichlet(*spec.spectral, seed, replica);
    if (spec.delta == 0.0) return phi;
    for (std::size_t i = 0; i < phi.values.size(); ++i) phi.values[i] += spec.f[i];
    phi.law = "tilted";
    return phi;
}

double equilibrium_pairing(const TiltSpec& spec, const FieldSample& phi) {
    double s = 0;
    for (std::size_t j = 0; j < spec.e.support.size(); ++j) s += spec.e.weights[j] * phi.at(spec.e.support[j]);
    return s;
}

double dirichlet_pairing(const TiltSpec& spec, const FieldSample& phi) {
    if (spec.delta == 0.0) throw std::invalid_argument("dirichlet_pairing: delta = 0");
    const auto& nn = neighbour_offsets(spec.U.d, Adjacency::Nearest);
    double s = 0;
    for (std::int64_t i = 0; i < spec.U.volume(); ++i) {
        const Point x = spec.U.point(i);
        double lap = spec.f[i];
        for (const auto& o : nn) lap -= spec.f_at(x + o) / double(nn.size());
        s += phi.at(x) * lap;
    }
    return s / spec.delta;
}

double log_weight(const TiltSpec& spec, const FieldSample& phi) {
    return -spec.delta * equilibrium_pairing(spec, phi) + spec.log_normalizer;
}

ImportanceEstimate importance_estimate(const EventDetector& event, const std::string& name, const TiltSpec& spec,
                                       std::int64_t n, std::uint64_t seed, const ImportanceOptions& opts) {
    if (n < 2) throw std::invalid_argument("importance_estimate: need at least 2 replicas");
    std::vector<double> lw(static_cast<std::size_t>(n));
    std::vector<char> hit(static_cast<std::size_t>(n));
    tbb::parallel_for(std::int64_t(0), n, [&](std::int64_t r) {
        const FieldSample phi = sample_tilted(spec, seed, std::uint32_t(r));
        lw[r] = log_weight(spec, phi);
        hit[r] = event(phi);
    });
    ImportanceEstimate est;
    est.event = name;
    est.tilt_id = spec.id();
    est.n = n;
    std::vector<double> w(lw.size()), y(lw.size());
    double sw = 0, sw2 = 0;
    for (std::size_t i = 0; i < lw.size(); ++i) {
        w[i] = std::exp(lw[i]);
        y[i] = hit[i] ? w[i] : 0.0;
        est.hits += hit[i];
        sw += w[i];
        sw2 += w[i] * w[i];
    }
    est.ess = sw2 > 0 ? sw * sw / sw2 : 0.0;
    est.kurtosis = kurtosis(lw);
    const Moments m = moments(y);
    est.p_hat = m.mean;
    est.se = std::sqrt(m.var / double(n));
    if (est.kurtosis > opts.kurtosis_threshold) {
        est.bootstrap = true;
        RandomStream rs(seed, 0, Purpose::Bootstrap);
        std::vector<double> means(static_cast<std::size_t>(opts.bootstrap_resamples));
        for (auto& mb : means) {
            double s = 0;
            for (std::int64_t i = 0; i < n; ++i) s += y[rs.below(std::uint32_t(n))];
            mb = s / double(n);
        }
        std::sort(means.begin(), means.end());
        const auto q = [&](double a) { return means[std::size_t(a * double(means.size() - 1) + 0.5)]; };
        est.ci_lo = q(0.025);
        est.ci_hi = q(0.975);
    } else {
        est.ci_lo = est.p_hat - opts.z * est.se;
        est.ci_hi = est.p_hat + opts.z * est.se;
    }
    est.ci_lo = std::clamp(est.ci_lo, 0.0, 1.0);
    est.ci_hi = std::clamp(est.ci_hi, 0.0, 1.0);
    est.warning = est.ess < opts.ess_warn;
    est.unreliable = est.ess < opts.ess_unreliable;
    return est;
}

ImportanceEstimate naive_estimate(const EventDetector& event, const std::string& name, const Box& U,
                                  std::int64_t n, std::uint64_t seed) {
    const BoxSpectral spec(U);
    std::vector<char> hit(static_cast<std::size_t>(n));
    tbb::parallel_for(std::int64_t(0), n,
                      [&](std::int64_t r) { hit[r] = event(sample_dirichlet(spec, seed, std::uint32_t(r))); });
    ImportanceEstimate est;
    est.event = name;
    est.tilt_id = "none";
    est.n = n;
    est.hits = std::count(hit.begin(), hit.end(), 1);
    const auto wi = wilson(est.hits, n);
    est.p_hat = wi.p;
    est.ci_lo = wi.ci_lo;
    est.ci_hi = wi.ci_hi;
    est.se = std::sqrt(wi.p * (1 - wi.p) / double(n));
    est.ess = double(n);
    return est;
}

EntropyEstimate empirical_relative_entropy(const TiltSpec& spec, std::int64_t n, std::uint64_t seed) {
    std::vector<double> v(static_cast<std::size_t>(n));
    tbb::parallel_for(std::int64_t(0), n,
                      [&](std::int64_t r) { v[r] = -log_weight(spec, sample_tilted(spec, seed, std::uint32_t(r))); });
    const Moments m = moments(v);
    return {m.mean, std::sqrt(m.var / double(n)), spec.log_normalizer, n};
}

EntropyBoundRecord entropic_lower_bound(double p_tilted, double H) {
    if (!(p_tilted >= 0 && p_tilted <= 1) || !(H >= 0))
        throw std::invalid_argument("entropic_lower_bound: need p in [0, 1] and H >= 0");
    EntropyBoundRecord r;
    r.p_tilted = p_tilted;
    r.H = H;
    if (p_tilted == 0) {
        r.degenerate = true;
        return r;
    }
    r.bound = p_tilted * std::exp(-(H + std::exp(-1.0)) / p_tilted);
    return r;
}

void write_importance_csv_header(std::ostream& os) { os << "event,h,delta,N,L,n,p_hat,ci_lo,ci_hi,ess,seed\n"; }

void write_importance_csv(std::ostream& os, const ImportanceEstimate& est, double h, double delta, int N, int L,
                          std::uint64_t seed) {
    os << est.event << ',' << h << ',' << delta << ',' << N << ',' << L << ',' << est.n << ',' << est.p_hat << ','
       << est.ci_lo << ',' << est.ci_hi << ',' << est.ess << ',' << seed << '\n';
}

}  // namespace gffperc
