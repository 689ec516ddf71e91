#include "gffperc/gff.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <map>
#include <numbers>
#include <ostream>
#include <stdexcept>

#include <fftw3.h>

#include "detail/numerics.hpp"
#include "gffperc/rng.hpp"

namespace gffperc {

struct BoxSpectral::Impl {
    fftw_plan plan = nullptr;
    double scale = 1.0;
    ~Impl() {
        std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
        if (plan) fftw_destroy_plan(plan);
    }
};

BoxSpectral::BoxSpectral(const Box& box) : box_(box), impl_(std::make_unique<Impl>()) {
    const int d = box.d;
    if (box.empty()) throw std::invalid_argument("BoxSpectral: empty box");
    const std::int64_t vol = box.volume();
    if (vol > (std::int64_t(1) << 27))
        throw std::length_error("BoxSpectral: box " + box.describe() + " exceeds the memory budget");
    std::array<int, kMaxDim> n{};
    std::array<fftw_r2r_kind, kMaxDim> kinds{};
    std::vector<std::vector<double>> cosv(d);
    for (int i = 0; i < d; ++i) {
        n[i] = box.extent(i);
        kinds[i] = FFTW_RODFT00;
        impl_->scale /= std::sqrt(2.0 * (n[i] + 1));
        cosv[i].resize(n[i]);
        for (int k = 0; k < n[i]; ++k) cosv[i][k] = std::cos(std::numbers::pi * (k + 1) / (n[i] + 1));
    }
    gap_.resize(std::size_t(vol));
    std::array<int, kMaxDim> k{};
    for (std::int64_t idx = 0; idx < vol; ++idx) {
        double mu = 0;
        for (int i = 0; i < d; ++i) mu += cosv[i][k[i]];
        gap_[idx] = 1.0 - mu / d;
        for (int i = d - 1; i >= 0; --i) {
            if (++k[i] < n[i]) break;
            k[i] = 0;
        }
    }
    std::vector<double> scratch(static_cast<std::size_t>(vol));
    std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
    impl_->plan = fftw_plan_r2r(d, n.data(), scratch.data(), scratch.data(), kinds.data(),
                                FFTW_ESTIMATE | FFTW_UNALIGNED);
    if (!impl_->plan) throw std::runtime_error("BoxSpectral: FFTW planning failed");
}

BoxSpectral::~BoxSpectral() = default;

void BoxSpectral::transform(std::vector<double>& v) const {
    if (v.size() != gap_.size()) throw std::invalid_argument("BoxSpectral::transform: size mismatch");
    fftw_execute_r2r(impl_->plan, v.data(), v.data());
    for (double& x : v) x *= impl_->scale;
}

std::vector<double> BoxSpectral::solve(std::vector<double> b) const {
    transform(b);
    for (std::size_t i = 0; i < b.size(); ++i) b[i] /= gap_[i];
    transform(b);
    return b;
}

FieldSample sample_dirichlet(const BoxSpectral& spec, std::uint64_t seed, std::uint32_t replica) {
    FieldSample f;
    f.box = spec.box();
    f.parent = spec.box();
    f.law = "dirichlet";
    f.seed = seed;
    f.replica = replica;
    RandomStream rng(seed, replica, Purpose::Field);
    const auto& gap = spec.gap();
    f.values.resize(gap.size());
    for (std::size_t i = 0; i < gap.size(); ++i) f.values[i] = rng.normal() / std::sqrt(gap[i]);
    spec.transform(f.values);
    return f;
}

FieldSample sample_dirichlet(const Box& U, std::uint64_t seed, std::uint32_t replica) {
    const BoxSpectral spec(U);
    return sample_dirichlet(spec, seed, replica);
}

FieldSample restrict_sample(const FieldSample& f, const Box& sub) {
    if (!f.box.contains(sub)) throw std::invalid_argument("restrict_sample: sub-box outside the sample");
    FieldSample r;
    r.box = sub;
    r.law = f.law;
    r.seed = f.seed;
    r.replica = f.replica;
    r.R = f.R;
    r.parent = f.parent;
    r.bias_bound = f.bias_bound;
    r.values.resize(std::size_t(sub.volume()));
    for (std::int64_t i = 0; i < sub.volume(); ++i) r.values[i] = f.values[f.box.index(sub.point(i))];
    return r;
}

double bulk_bias_bound(const Box& B, const Box& parent, const GreenOracle& g) {
    static std::mutex mu;
    static std::map<std::pair<std::string, std::string>, double> cache;
    const auto key = std::make_pair(B.describe(), parent.describe());
    {
        std::lock_guard<std::mutex> lock(mu);
        auto it = cache.find(key);
        if (it != cache.end()) return it->second;
    }
    const int d = B.d;
    const BoxSpectral spec(parent);
    const double g0 = g(Point::zero(d));
    // Center and corners; the killed Green function at x is smallest near the
    // corners of B.
    std::vector<Point> probes;
    Point c(d);
    for (int i = 0; i < d; ++i) c.c[i] = (B.lo[i] + B.hi[i] - 1) / 2;
    probes.push_back(c);
    for (int mask = 0; mask < (1 << d); ++mask) {
        Point p(d);
        for (int i = 0; i < d; ++i) p.c[i] = (mask >> i & 1) ? B.hi[i] - 1 : B.lo[i];
        probes.push_back(p);
    }
    double worst = 0;
    for (const auto& p : probes) {
        std::vector<double> b(spec.gap().size(), 0.0);
        b[parent.index(p)] = 1.0;
        const auto u = spec.solve(std::move(b));
        worst = std::max(worst, g0 - u[parent.index(p)]);
    }
    std::lock_guard<std::mutex> lock(mu);
    cache.emplace(key, worst);
    return worst;
}

FieldSample sample_bulk(const Box& B, int R, std::uint64_t seed, std::uint32_t replica, const GreenOracle& g) {
    if (R < 2) throw std::invalid_argument("sample_bulk: R >= 2 required");
    Box parent = B;
    for (int i = 0; i < B.d; ++i) {
        const int n = (B.extent(i) - 1) / 2;
        const int c = B.lo[i] + n;
        parent.lo[i] = c - R * n;
        parent.hi[i] = c + R * n + 1;
    }
    FieldSample full = sample_dirichlet(parent, seed, replica);
    FieldSample f = restrict_sample(full, B);
    f.law = "bulk";
    f.R = R;
    f.parent = parent;
    f.bias_bound = bulk_bias_bound(B, parent, g);
    return f;
}

DecompositionRecord harmonic_decompose(const FieldSample& f, const Box& U) {
    const int d = U.d;
    const auto& nn = neighbour_offsets(d, Adjacency::Nearest);
    const double q = 1.0 / (2.0 * d);
    std::vector<double> r(std::size_t(U.volume()), 0.0), phi(r.size());
    for (std::int64_t i = 0; i < U.volume(); ++i) {
        const Point x = U.point(i);
        if (!f.box.contains(x)) throw std::invalid_argument("harmonic_decompose: U escapes the sample box");
        phi[i] = f.values[f.box.index(x)];
        if (!U.on_boundary(x)) continue;
        for (const auto& o : nn) {
            const Point y = x + o;
            if (U.contains(y)) continue;
            if (!f.box.contains(y))
                throw std::invalid_argument("harmonic_decompose: outer boundary of U escapes the sample box");
            r[i] += q * f.values[f.box.index(y)];
        }
    }
    DecompositionRecord rec;
    rec.U = U;
    rec.parent_seed = f.seed;
    rec.parent_replica = f.replica;
    const BoxSpectral spec(U);
    rec.xi = spec.solve(std::move(r));
    rec.psi.resize(phi.size());
    for (std::size_t i = 0; i < phi.size(); ++i) rec.psi[i] = phi[i] - rec.xi[i];
    return rec;
}

DecompositionRecord harmonic_decompose(const FieldSample& f, const Point& z, const RenormLattice& lat) {
    DecompositionRecord rec = harmonic_decompose(f, lat.U(z));
    rec.z = z;
    return rec;
}

double harmonic_sup(const DecompositionRecord& rec, const Box& region, bool include_midpoints) {
    if (!rec.U.contains(region)) throw std::invalid_argument("harmonic_sup: region not inside U");
    double best = -std::numeric_limits<double>::infinity();
    const auto& nn = neighbour_offsets(region.d, Adjacency::Nearest);
    for (std::int64_t i = 0; i < region.volume(); ++i) {
        const Point x = region.point(i);
        const double v = rec.xi[rec.U.index(x)];
        best = std::max(best, v);
        if (!include_midpoints) continue;
        for (const auto& o : nn) {
            const Point y = x + o;
            if (rec.U.contains(y)) best = std::max(best, 0.5 * (v + rec.xi[rec.U.index(y)]));
        }
    }
    return best;
}

MidpointExtension extend_midpoints(const FieldSample& f, std::uint64_t seed, std::uint32_t replica) {
    const int d = f.dim();
    MidpointExtension m;
    m.sigma2 = 0.5 * d;
    const double sigma = std::sqrt(m.sigma2);
    RandomStream rng(seed, replica, Purpose::Midpoint);
    const std::int64_t vol = f.box.volume();
    m.mid.assign(d, std::vector<double>(std::size_t(vol), std::numeric_limits<double>::quiet_NaN()));
    for (int a = 0; a < d; ++a) {
        const Point e = Point::unit(d, a);
        for (std::int64_t i = 0; i < vol; ++i) {
            const Point x = f.box.point(i);
            const Point y = x + e;
            if (!f.box.contains(y)) continue;
            m.mid[a][i] = 0.5 * (f.values[i] + f.values[f.box.index(y)]) + sigma * rng.normal();
        }
    }
    return m;
}

std::vector<double> midpoint_residual(const FieldSample& f, const MidpointExtension& m) {
    const int d = f.dim();
    const std::int64_t vol = f.box.volume();
    std::vector<double> out(std::size_t(vol), std::numeric_limits<double>::quiet_NaN());
    for (std::int64_t i = 0; i < vol; ++i) {
        const Point x = f.box.point(i);
        double sum = 0;
        bool ok = true;
        for (int a = 0; a < d && ok; ++a) {
            const Point lo = x - Point::unit(d, a);
            if (!f.box.contains(lo) || !f.box.contains(x + Point::unit(d, a))) {
                ok = false;
                break;
            }
            sum += m.mid[a][i] + m.mid[a][f.box.index(lo)];
        }
        if (ok) out[i] = f.values[i] - sum / (2.0 * d);
    }
    return out;
}

namespace {

template <class T>
void put(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <class T>
T get(std::istream& is) {
    T v;
    if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw std::runtime_error("read_sample: truncated input");
    return v;
}
void put_box(std::ostream& os, const Box& b) {
    for (int i = 0; i < b.d; ++i) {
        put<std::int32_t>(os, b.lo[i]);
        put<std::int32_t>(os, b.hi[i]);
    }
}
Box get_box(std::istream& is, int d) {
    Box b;
    b.d = d;
    for (int i = 0; i < d; ++i) {
        b.lo[i] = get<std::int32_t>(is);
        b.hi[i] = get<std::int32_t>(is);
    }
    return b;
}

}  // namespace

void write_sample(std::ostream& os, const FieldSample& f) {
    os.write("GFFS", 4);
    put<std::uint32_t>(os, 1);
    put<std::int32_t>(os, f.box.d);
    put_box(os, f.box);
    put<std::uint32_t>(os, std::uint32_t(f.law.size()));
    os.write(f.law.data(), std::streamsize(f.law.size()));
    put<std::uint64_t>(os, f.seed);
    put<std::uint32_t>(os, f.replica);
    put<std::int32_t>(os, f.R);
    put_box(os, f.parent.d == f.box.d ? f.parent : f.box);
    put<double>(os, f.bias_bound);
    put<std::uint64_t>(os, f.values.size());
    os.write(reinterpret_cast<const char*>(f.values.data()), std::streamsize(f.values.size() * sizeof(double)));
    put<std::uint8_t>(os, f.midpoints ? 1 : 0);
    if (f.midpoints) {
        put<double>(os, f.midpoints->sigma2);
        for (const auto& axis : f.midpoints->mid)
            os.write(reinterpret_cast<const char*>(axis.data()), std::streamsize(axis.size() * sizeof(double)));
    }
}

FieldSample read_sample(std::istream& is) {
    char magic[4];
    if (!is.read(magic, 4) || std::memcmp(magic, "GFFS", 4) != 0) throw std::runtime_error("read_sample: bad magic");
    if (get<std::uint32_t>(is) != 1) throw std::runtime_error("read_sample: unsupported version");
    FieldSample f;
    const int d = get<std::int32_t>(is);
    if (d < 1 || d > kMaxDim) throw std::runtime_error("read_sample: bad dimension");
    f.box = get_box(is, d);
    f.law.resize(get<std::uint32_t>(is));
    is.read(f.law.data(), std::streamsize(f.law.size()));
    f.seed = get<std::uint64_t>(is);
    f.replica = get<std::uint32_t>(is);
    f.R = get<std::int32_t>(is);
    f.parent = get_box(is, d);
    f.bias_bound = get<double>(is);
    const auto n = get<std::uint64_t>(is);
    if (n != std::uint64_t(f.box.volume())) throw std::runtime_error("read_sample: value count does not match box");
    f.values.resize(n);
    if (!is.read(reinterpret_cast<char*>(f.values.data()), std::streamsize(n * sizeof(double))))
        throw std::runtime_error("read_sample: truncated values");
    if (get<std::uint8_t>(is)) {
        MidpointExtension m;
        m.sigma2 = get<double>(is);
        m.mid.assign(d, std::vector<double>(n));
        for (auto& axis : m.mid)
            if (!is.read(reinterpret_cast<char*>(axis.data()), std::streamsize(n * sizeof(double))))
                throw std::runtime_error("read_sample: truncated midpoints");
        f.midpoints = std::move(m);
    }
    return f;
}

}  // namespace gffperc
