#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <fftw3.h>

#include "detail/numerics.hpp"
#include "gffperc/potential.hpp"
#include "gffperc/rng.hpp"

namespace gffperc {

namespace {

template <class T>
struct FftwFree {
    void operator()(T* p) const { fftw_free(p); }
};
using RealBuf = std::unique_ptr<double[], FftwFree<double>>;
using CplxBuf = std::unique_ptr<fftw_complex[], FftwFree<fftw_complex>>;

RealBuf alloc_real(std::size_t n) { return RealBuf(fftw_alloc_real(n)); }
CplxBuf alloc_cplx(std::size_t n) { return CplxBuf(fftw_alloc_complex(n)); }

std::array<int, kMaxDim> extents_of(const Box& b) {
    std::array<int, kMaxDim> e{};
    for (int i = 0; i < b.d; ++i) e[i] = b.extent(i);
    return e;
}

}  // namespace

struct FreeGramOperator::Impl {
    int d = 0;
    std::array<int, kMaxDim> n{};  // box extents
    std::array<int, kMaxDim> m{};  // embedding sizes
    std::size_t real_size = 1, cplx_size = 1;
    std::vector<double> kernel_hat;  // real spectrum of the symmetric kernel
    fftw_plan fwd = nullptr, bwd = nullptr;

    ~Impl() {
        std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
        if (fwd) fftw_destroy_plan(fwd);
        if (bwd) fftw_destroy_plan(bwd);
    }
};

FreeGramOperator::FreeGramOperator(const Box& box, const GreenOracle& g)
    : FreeGramOperator(box, g.table(extents_of(box))) {}

FreeGramOperator::FreeGramOperator(const Box& box, DisplacementTable table)
    : box_(box), table_(std::move(table)), impl_(std::make_unique<Impl>()) {
    auto& im = *impl_;
    im.d = box.d;
    for (int i = 0; i < im.d; ++i) {
        im.n[i] = box.extent(i);
        if (table_.ext[i] < im.n[i]) throw std::invalid_argument("FreeGramOperator: table smaller than box");
        im.m[i] = im.n[i] == 1 ? 1 : 2 * im.n[i];
        im.real_size *= im.m[i];
        im.cplx_size *= (i == im.d - 1) ? im.m[i] / 2 + 1 : im.m[i];
    }
    RealBuf kr = alloc_real(im.real_size);
    CplxBuf kc = alloc_cplx(im.cplx_size);
    {
        std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
        im.fwd = fftw_plan_dft_r2c(im.d, im.m.data(), kr.get(), kc.get(), FFTW_ESTIMATE);
        im.bwd = fftw_plan_dft_c2r(im.d, im.m.data(), kc.get(), kr.get(), FFTW_ESTIMATE);
    }
    // Circulant kernel: index j maps to displacement j or j - m; the middle
    // slot of an even-length axis is never read by the product and is zero.
    Point disp(im.d);
    for (std::size_t idx = 0; idx < im.real_size; ++idx) {
        std::size_t r = idx;
        bool unused = false;
        for (int i = im.d - 1; i >= 0; --i) {
            const int j = int(r % im.m[i]);
            r /= im.m[i];
            if (j < im.n[i]) disp.c[i] = j;
            else if (j > im.m[i] - im.n[i]) disp.c[i] = j - im.m[i];
            else unused = true;
        }
        kr[idx] = unused ? 0.0 : table_.at(disp);
    }
    fftw_execute_dft_r2c(im.fwd, kr.get(), kc.get());
    im.kernel_hat.resize(im.cplx_size);
    for (std::size_t i = 0; i < im.cplx_size; ++i) im.kernel_hat[i] = kc[i][0] / double(im.real_size);
}

FreeGramOperator::~FreeGramOperator() = default;

void FreeGramOperator::apply(const double* in, double* out) const {
    const auto& im = *impl_;
    RealBuf buf = alloc_real(im.real_size);
    CplxBuf spec = alloc_cplx(im.cplx_size);
    std::fill(buf.get(), buf.get() + im.real_size, 0.0);
    const std::int64_t vol = box_.volume();
    // Box index -> embedding index.
    auto embed = [&](std::int64_t bi) {
        std::size_t e = 0;
        std::array<int, kMaxDim> c{};
        std::int64_t r = bi;
        for (int i = im.d - 1; i >= 0; --i) {
            c[i] = int(r % im.n[i]);
            r /= im.n[i];
        }
        for (int i = 0; i < im.d; ++i) e = e * im.m[i] + c[i];
        return e;
    };
    const int n_last = im.n[im.d - 1];
    for (std::int64_t bi = 0; bi < vol; bi += n_last) {
        const std::size_t e = embed(bi);
        std::copy(in + bi, in + bi + n_last, buf.get() + e);
    }
    fftw_execute_dft_r2c(im.fwd, buf.get(), spec.get());
    for (std::size_t i = 0; i < im.cplx_size; ++i) {
        spec[i][0] *= im.kernel_hat[i];
        spec[i][1] *= im.kernel_hat[i];
    }
    fftw_execute_dft_c2r(im.bwd, spec.get(), buf.get());
    for (std::int64_t bi = 0; bi < vol; bi += n_last) {
        const std::size_t e = embed(bi);
        std::copy(buf.get() + e, buf.get() + e + n_last, out + bi);
    }
}

namespace {

struct MaskedSolve {
    Eigen::VectorXd e;
    detail::CGResult cg;
};

// Solves sum_{y in S} g(x - y) e(y) = 1 for x in S, S a subset of op.box().
MaskedSolve solve_masked(const FreeGramOperator& op, const std::vector<std::int64_t>& idx,
                         const PotentialOptions& opts) {
    const std::size_t vol = std::size_t(op.box().volume());
    std::vector<double> in(vol), out(vol);
    auto apply = [&](const Eigen::VectorXd& x, Eigen::VectorXd& y) {
        std::fill(in.begin(), in.end(), 0.0);
        for (std::size_t i = 0; i < idx.size(); ++i) in[idx[i]] = x(Eigen::Index(i));
        op.apply(in.data(), out.data());
        y.resize(x.size());
        for (std::size_t i = 0; i < idx.size(); ++i) y(Eigen::Index(i)) = out[idx[i]];
    };
    MaskedSolve s;
    const Eigen::VectorXd b = Eigen::VectorXd::Ones(Eigen::Index(idx.size()));
    // Diagonal start: e = 1/g(0) is exact for a single point.
    s.e = b / op.table().v[0];
    s.cg = detail::conjugate_gradient(apply, b, s.e, opts.cg_tol, opts.cg_max_iter);
    if (!s.cg.converged) {
        std::ostringstream os;
        os << "Toeplitz CG stagnated: relative residual " << s.cg.rel_residual << " after " << s.cg.iterations
           << " iterations";
        throw std::runtime_error(os.str());
    }
    return s;
}

}  // namespace

EquilibriumMeasure equilibrium_measure_fft(const PointSet& K, const GreenOracle& g, const PotentialOptions& opts) {
    EquilibriumMeasure em;
    em.U_desc = "free";
    {
        std::ostringstream os;
        os << "set(|K|=" << K.size() << ", bbox " << K.bbox().describe() << ")";
        em.K_desc = os.str();
    }
    if (K.empty()) return em;
    const auto& nn = neighbour_offsets(K.dim(), Adjacency::Nearest);
    std::vector<Point> bd;
    for (const auto& x : K)
        for (const auto& o : nn)
            if (!K.contains(x + o)) {
                bd.push_back(x);
                break;
            }
    em.support = PointSet(std::move(bd));
    const Box box = K.bbox();
    FreeGramOperator op(box, g);
    std::vector<std::int64_t> idx;
    idx.reserve(em.support.size());
    for (const auto& p : em.support) idx.push_back(box.index(p));
    const MaskedSolve s = solve_masked(op, idx, opts);
    em.weights.assign(s.e.data(), s.e.data() + s.e.size());
    for (double& v : em.weights) {
        if (v < -opts.negative_tol) throw std::runtime_error("equilibrium_measure_fft: negative weight");
        if (v < opts.clip_tol) v = 0.0;
    }
    em.method = "toeplitz";
    // Potential on all of K.
    std::vector<double> in(std::size_t(box.volume()), 0.0), out(in.size());
    for (std::size_t i = 0; i < idx.size(); ++i) in[idx[i]] = em.weights[i];
    op.apply(in.data(), out.data());
    double res = 0;
    for (const auto& x : K) res = std::max(res, std::abs(out[box.index(x)] - 1.0));
    em.residual = res;
    em.capacity = std::accumulate(em.weights.begin(), em.weights.end(), 0.0);
    return em;
}

double line_capacity_dense(int N, const GreenOracle& g) {
    const auto t = g.axis_table(N);
    Eigen::MatrixXd G(N + 1, N + 1);
    for (int i = 0; i <= N; ++i)
        for (int j = 0; j <= N; ++j) G(i, j) = t[std::abs(i - j)];
    const Eigen::VectorXd e = Eigen::LLT<Eigen::MatrixXd>(G).solve(Eigen::VectorXd::Ones(N + 1));
    return e.sum();
}

LineCapacity line_subset_capacity(const std::vector<int>& positions, const GreenOracle& g,
                                  const PotentialOptions& opts) {
    LineCapacity lc;
    if (positions.empty()) return lc;
    std::vector<int> pos = positions;
    std::sort(pos.begin(), pos.end());
    pos.erase(std::unique(pos.begin(), pos.end()), pos.end());
    const int lo = pos.front(), hi = pos.back();
    const int span = hi - lo + 1;
    const int d = g.dim();

    DisplacementTable t;
    t.d = d;
    t.ext.fill(1);
    t.ext[0] = span;
    t.v = g.axis_table(span - 1);

    lc.positions = pos;
    if (pos.size() <= 512) {
        const Eigen::Index n = Eigen::Index(pos.size());
        Eigen::MatrixXd G(n, n);
        for (Eigen::Index i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < n; ++j) G(i, j) = t.v[std::abs(pos[i] - pos[j])];
        const Eigen::VectorXd e = Eigen::LLT<Eigen::MatrixXd>(G).solve(Eigen::VectorXd::Ones(n));
        lc.e.assign(e.data(), e.data() + n);
        lc.report.method = "dense";
        lc.report.err = (G * e - Eigen::VectorXd::Ones(n)).cwiseAbs().maxCoeff() * e.sum();
    } else {
        Box box;
        box.d = d;
        for (int i = 0; i < d; ++i) {
            box.lo[i] = 0;
            box.hi[i] = 1;
        }
        box.lo[0] = lo;
        box.hi[0] = hi + 1;
        FreeGramOperator op(box, std::move(t));
        std::vector<std::int64_t> idx;
        for (int p : pos) idx.push_back(p - lo);
        const MaskedSolve s = solve_masked(op, idx, opts);
        lc.e.assign(s.e.data(), s.e.data() + s.e.size());
        lc.iterations = s.cg.iterations;
        lc.report.method = "toeplitz";
        lc.report.err = s.cg.rel_residual * s.e.sum();
    }
    lc.report.value = std::accumulate(lc.e.begin(), lc.e.end(), 0.0);
    lc.report.N = hi - lo;
    std::ostringstream os;
    os << "line(d=" << d << ", " << pos.size() << " of " << span << " sites)";
    lc.report.set = os.str();
    return lc;
}

LineCapacity line_capacity_fast(int N, const GreenOracle& g, const PotentialOptions& opts) {
    if (N < 0) throw std::invalid_argument("line_capacity_fast: N < 0");
    std::vector<int> pos(N + 1);
    std::iota(pos.begin(), pos.end(), 0);
    LineCapacity lc = line_subset_capacity(pos, g, opts);
    std::ostringstream os;
    os << "T_" << N << "(d=" << g.dim() << ")";
    lc.report.set = os.str();
    lc.report.N = N;
    return lc;
}

int tube_width(int N, double delta, double k) {
    return int(std::floor(k * std::pow(double(N), delta) + 1e-9));
}

CapacityReport tube_capacity_width(int N, int width, const GreenOracle& g, const PotentialOptions& opts) {
    const PointSet K = PointSet::from_box(Box::tube(g.dim(), N, width));
    const EquilibriumMeasure em = width == 0 ? EquilibriumMeasure{} : equilibrium_measure_fft(K, g, opts);
    CapacityReport r;
    if (width == 0) {
        r = line_capacity_fast(N, g, opts).report;
    } else {
        r.value = em.capacity;
        r.err = em.residual * em.capacity;
        r.method = "toeplitz";
    }
    std::ostringstream os;
    os << "T_" << N << "(" << width << ")";
    r.set = os.str();
    r.N = N;
    r.L = width;
    return r;
}

CapacityReport tube_capacity(int N, double delta, double k, const GreenOracle& g, const PotentialOptions& opts) {
    const int w = tube_width(N, delta, k);
    if (w < 1) throw std::invalid_argument("tube_capacity: k N^delta < 1");
    return tube_capacity_width(N, w, g, opts);
}

CapacityReport tube_relative_capacity(int N, double delta, const PotentialOptions& opts) {
    const int w1 = tube_width(N, delta, 1.0), w2 = tube_width(N, delta, 2.0);
    if (w1 < 1 || w2 <= w1) throw std::invalid_argument("tube_relative_capacity: widths degenerate");
    const PointSet K = PointSet::from_box(Box::tube(3, N, w1));
    const PointSet U = PointSet::from_box(Box::tube(3, N, w2));
    // Only the weights are needed; the last-exit residual would cost a
    // second solve on all of U.
    const Eigen::VectorXd h = hitting_probability(K, U, opts);
    const auto& nn = neighbour_offsets(3, Adjacency::Nearest);
    double cap = 0;
    for (const auto& x : K) {
        double hit = 0;
        bool bd = false;
        for (const auto& o : nn) {
            const Point y = x + o;
            if (!K.contains(y)) bd = true;
            const auto j = U.find(y);
            if (j >= 0) hit += h(j) / 6.0;
        }
        if (bd) cap += 1.0 - hit;
    }
    CapacityReport r;
    std::ostringstream os;
    os << "T_" << N << "(" << w1 << ")";
    r.set = os.str();
    r.domain = "T_" + std::to_string(N) + "(" + std::to_string(w2) + ")";
    r.method = "sparse";
    r.N = N;
    r.L = w1;
    r.value = cap;
    r.err = opts.cg_tol * double(K.size());
    return r;
}

EscapeEstimate escape_probability(const Point& x, const std::vector<int>& T, int N, std::int64_t n_walks,
                                  std::uint64_t seed, const GreenOracle& g, double C_gamma, int release_radius) {
    if (g.dim() != 3 || x.d != 3) throw std::invalid_argument("escape_probability: d = 3 only");
    EscapeEstimate est;
    std::vector<char> inT(std::size_t(N) + 1, 0);
    for (int t : T) {
        if (t < 0 || t > N) throw std::invalid_argument("escape_probability: T not inside T_N");
        inT[t] = 1;
    }
    auto on_T = [&](const Point& p) { return p.c[1] == 0 && p.c[2] == 0 && p.c[0] >= 0 && p.c[0] <= N && inT[p.c[0]]; };
    auto dist_T = [&](const Point& p) {
        int best = std::numeric_limits<int>::max();
        for (int t : T) best = std::min(best, std::max({std::abs(p.c[0] - t), std::abs(p.c[1]), std::abs(p.c[2])}));
        return best;
    };
    const double dx = double(dist_T(x));
    est.bound = C_gamma * std::log(1.0 + dx) / std::log(double(N));
    if (on_T(x)) {
        est.bound_holds = true;
        return est;
    }
    const LineCapacity lc = line_subset_capacity(T, g);
    auto hull_dist = [&](const Point& p) {
        const int along = p.c[0] < 0 ? -p.c[0] : (p.c[0] > N ? p.c[0] - N : 0);
        return std::max({along, std::abs(p.c[1]), std::abs(p.c[2])});
    };
    auto remaining_escape = [&](const Point& y) {
        double hit = 0;
        for (std::size_t i = 0; i < lc.positions.size(); ++i) {
            const Point d{y.c[0] - lc.positions[i], y.c[1], y.c[2]};
            hit += g.far_field(d) * lc.e[i];
        }
        return std::clamp(1.0 - hit, 0.0, 1.0);
    };
    const auto& nn = neighbour_offsets(3, Adjacency::Nearest);
    double sum = 0, sum2 = 0;
    for (std::int64_t w = 0; w < n_walks; ++w) {
        RandomStream rng(seed, std::uint32_t(w), Purpose::Walk);
        Point y = x;
        double val = 0;
        for (;;) {
            if (hull_dist(y) >= release_radius) {
                val = remaining_escape(y);
                break;
            }
            y = y + nn[rng.below(6)];
            if (on_T(y)) break;
        }
        sum += val;
        sum2 += val * val;
    }
    const double n = double(n_walks);
    est.walks = n_walks;
    est.estimate = sum / n;
    est.se = std::sqrt(std::max(0.0, sum2 / n - est.estimate * est.estimate) / std::max(1.0, n - 1));
    est.ci_lo = std::max(0.0, est.estimate - 1.96 * est.se);
    est.ci_hi = std::min(1.0, est.estimate + 1.96 * est.se);
    est.bound_holds = est.ci_lo <= est.bound;
    return est;
}

}  // namespace gffperc
