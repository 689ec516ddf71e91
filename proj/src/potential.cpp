#include "gffperc/potential.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseCholesky>
#include <json.hpp>

#include "detail/numerics.hpp"

namespace gffperc {

namespace {

PointSet inner_boundary(const PointSet& K) {
    if (K.empty()) return {};
    const auto& nn = neighbour_offsets(K.dim(), Adjacency::Nearest);
    std::vector<Point> out;
    for (const auto& x : K)
        for (const auto& o : nn)
            if (!K.contains(x + o)) {
                out.push_back(x);
                break;
            }
    return PointSet(std::move(out));
}

std::string describe_set(const PointSet& s) {
    std::ostringstream os;
    os << "set(|K|=" << s.size() << ", bbox " << s.bbox().describe() << ")";
    return os.str();
}

std::array<int, kMaxDim> extents_of(const Box& b) {
    std::array<int, kMaxDim> e{};
    for (int i = 0; i < b.d; ++i) e[i] = b.extent(i);
    return e;
}

Eigen::SparseMatrix<double> dirichlet_matrix(const PointSet& W) {
    const int d = W.dim();
    const double q = 1.0 / (2.0 * d);
    const auto& nn = neighbour_offsets(d, Adjacency::Nearest);
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(W.size() * (2 * d + 1));
    for (std::size_t i = 0; i < W.size(); ++i) {
        trip.emplace_back(int(i), int(i), 1.0);
        for (const auto& o : nn) {
            const auto j = W.find(W[i] + o);
            if (j >= 0) trip.emplace_back(int(i), int(j), -q);
        }
    }
    Eigen::SparseMatrix<double> A(Eigen::Index(W.size()), Eigen::Index(W.size()));
    A.setFromTriplets(trip.begin(), trip.end());
    return A;
}

// Clips round-off and rejects genuinely negative weights.
void clip_weights(std::vector<double>& w, const PotentialOptions& opts, const char* who) {
    for (double& v : w) {
        if (v < -opts.negative_tol) {
            std::ostringstream os;
            os << who << ": negative equilibrium weight " << v << " (ill-conditioned solve)";
            throw std::runtime_error(os.str());
        }
        if (v < opts.clip_tol) v = 0.0;
    }
}

Eigen::MatrixXd dense_gram(const std::vector<Point>& pts, const DisplacementTable& t) {
    const Eigen::Index n = Eigen::Index(pts.size());
    Eigen::MatrixXd G(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j <= i; ++j) G(i, j) = G(j, i) = t.at(pts[i] - pts[j]);
    return G;
}

}  // namespace

namespace detail {
std::mutex& fftw_planner_mutex() {
    static std::mutex m;
    return m;
}
}  // namespace detail

double KilledGreenOperator::operator()(const Point& x, const Point& y) const {
    const auto i = U.find(x), j = U.find(y);
    if (i < 0 || j < 0) return 0.0;
    return G(i, j);
}

KilledGreenOperator killed_green(const PointSet& U, const PotentialOptions& opts) {
    if (U.size() > opts.dense_limit)
        throw std::length_error("killed_green: |U| = " + std::to_string(U.size()) + " exceeds dense limit " +
                                std::to_string(opts.dense_limit) + "; use DirichletSolver (iterative mode)");
    KilledGreenOperator op;
    op.U = U;
    if (U.empty()) return op;
    const Eigen::MatrixXd A = Eigen::MatrixXd(dirichlet_matrix(U));
    Eigen::LLT<Eigen::MatrixXd> llt(A);
    if (llt.info() != Eigen::Success) throw std::runtime_error("killed_green: I - P_U not positive definite");
    op.G = llt.solve(Eigen::MatrixXd::Identity(A.rows(), A.cols()));
    op.G = 0.5 * (op.G + op.G.transpose()).eval();
    return op;
}

struct DirichletSolver::Impl {
    Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> direct;
    Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper> cg;
    bool use_direct = true;
};

DirichletSolver::DirichletSolver(PointSet W, const PotentialOptions& opts)
    : W_(std::move(W)), opts_(opts), impl_(std::make_unique<Impl>()) {
    A_ = dirichlet_matrix(W_);
    impl_->use_direct = W_.size() <= opts_.direct_limit;
    if (W_.empty()) return;
    if (impl_->use_direct) {
        impl_->direct.compute(A_);
        if (impl_->direct.info() != Eigen::Success) throw std::runtime_error("DirichletSolver: factorization failed");
    } else {
        impl_->cg.setTolerance(opts_.cg_tol);
        impl_->cg.setMaxIterations(opts_.cg_max_iter);
        impl_->cg.compute(A_);
    }
}

DirichletSolver::~DirichletSolver() = default;
DirichletSolver::DirichletSolver(DirichletSolver&&) noexcept = default;
DirichletSolver& DirichletSolver::operator=(DirichletSolver&&) noexcept = default;

Eigen::VectorXd DirichletSolver::solve(const Eigen::VectorXd& b) const {
    if (W_.empty()) return {};
    if (impl_->use_direct) return impl_->direct.solve(b);
    Eigen::VectorXd x = impl_->cg.solve(b);
    if (impl_->cg.info() != Eigen::Success) {
        std::ostringstream os;
        os << "DirichletSolver: CG stagnated, error " << impl_->cg.error() << " after " << impl_->cg.iterations()
           << " iterations";
        throw std::runtime_error(os.str());
    }
    return x;
}

Eigen::VectorXd hitting_probability(const PointSet& K, const PointSet& U, const PotentialOptions& opts) {
    if (!K.subset_of(U)) throw std::invalid_argument("hitting_probability: K not inside U");
    const PointSet W = U.minus(K);
    Eigen::VectorXd h = Eigen::VectorXd::Zero(Eigen::Index(U.size()));
    for (const auto& x : K) h(U.find(x)) = 1.0;
    if (W.empty()) return h;
    const int d = U.dim();
    const double q = 1.0 / (2.0 * d);
    const auto& nn = neighbour_offsets(d, Adjacency::Nearest);
    Eigen::VectorXd b = Eigen::VectorXd::Zero(Eigen::Index(W.size()));
    for (std::size_t i = 0; i < W.size(); ++i)
        for (const auto& o : nn)
            if (K.contains(W[i] + o)) b(i) += q;
    const Eigen::VectorXd hw = DirichletSolver(W, opts).solve(b);
    for (std::size_t i = 0; i < W.size(); ++i) h(U.find(W[i])) = hw(i);
    return h;
}

Eigen::MatrixXd hitting_matrix(const PointSet& K, const PointSet& U, const PotentialOptions& opts) {
    if (!K.subset_of(U)) throw std::invalid_argument("hitting_matrix: K not inside U");
    const PointSet W = U.minus(K);
    if (W.size() > opts.dense_limit) throw std::length_error("hitting_matrix: U \\ K too large for dense mode");
    Eigen::MatrixXd H = Eigen::MatrixXd::Zero(Eigen::Index(U.size()), Eigen::Index(K.size()));
    for (std::size_t j = 0; j < K.size(); ++j) H(U.find(K[j]), Eigen::Index(j)) = 1.0;
    if (W.empty()) return H;
    const int d = U.dim();
    const double q = 1.0 / (2.0 * d);
    const auto& nn = neighbour_offsets(d, Adjacency::Nearest);
    Eigen::MatrixXd B = Eigen::MatrixXd::Zero(Eigen::Index(W.size()), Eigen::Index(K.size()));
    for (std::size_t i = 0; i < W.size(); ++i)
        for (const auto& o : nn) {
            const auto j = K.find(W[i] + o);
            if (j >= 0) B(Eigen::Index(i), j) += q;
        }
    const Eigen::MatrixXd A = Eigen::MatrixXd(dirichlet_matrix(W));
    const Eigen::MatrixXd HW = Eigen::LLT<Eigen::MatrixXd>(A).solve(B);
    for (std::size_t i = 0; i < W.size(); ++i) H.row(U.find(W[i])) = HW.row(Eigen::Index(i));
    return H;
}

double EquilibriumMeasure::weight(const Point& x) const {
    const auto i = support.find(x);
    return i < 0 ? 0.0 : weights[i];
}

EquilibriumMeasure equilibrium_measure(const PointSet& K, const Domain& U, const GreenOracle& g,
                                       const PotentialOptions& opts) {
    EquilibriumMeasure em;
    em.K_desc = describe_set(K);
    em.U_desc = U ? describe_set(*U) : "free";
    if (K.empty()) return em;
    if (K.dim() != g.dim()) throw std::invalid_argument("equilibrium_measure: dimension mismatch");
    const PointSet B = inner_boundary(K);

    if (!U) {
        if (B.size() > opts.dense_limit) return equilibrium_measure_fft(K, g, opts);
        const DisplacementTable t = g.table(extents_of(K.bbox()));
        const Eigen::MatrixXd G = dense_gram(B.points(), t);
        Eigen::LLT<Eigen::MatrixXd> llt(G);
        if (llt.info() != Eigen::Success) throw std::runtime_error("equilibrium_measure: Gram not positive definite");
        const Eigen::VectorXd e = llt.solve(Eigen::VectorXd::Ones(G.rows()));
        em.support = B;
        em.weights.assign(e.data(), e.data() + e.size());
        clip_weights(em.weights, opts, "equilibrium_measure");
        em.method = "dense";
        double res = 0;
        for (const auto& x : K) {
            double pot = 0;
            for (std::size_t j = 0; j < B.size(); ++j) pot += t.at(x - B[j]) * em.weights[j];
            res = std::max(res, std::abs(pot - 1.0));
        }
        em.residual = res;
    } else {
        const PointSet& Uset = *U;
        if (!K.subset_of(Uset)) throw std::invalid_argument("equilibrium_measure: K not inside U");
        const Eigen::VectorXd h = hitting_probability(K, Uset, opts);
        const double q = 1.0 / (2.0 * K.dim());
        const auto& nn = neighbour_offsets(K.dim(), Adjacency::Nearest);
        std::vector<double> w(B.size());
        for (std::size_t i = 0; i < B.size(); ++i) {
            double hit = 0;
            for (const auto& o : nn) {
                const auto j = Uset.find(B[i] + o);
                if (j >= 0) hit += q * h(j);
            }
            w[i] = 1.0 - hit;
        }
        em.support = B;
        em.weights = std::move(w);
        clip_weights(em.weights, opts, "equilibrium_measure");
        em.method = "sparse";
        // Last-exit check: G_U e = 1 on K.
        Eigen::VectorXd ev = Eigen::VectorXd::Zero(Eigen::Index(Uset.size()));
        for (std::size_t i = 0; i < B.size(); ++i) ev(Uset.find(B[i])) = em.weights[i];
        const Eigen::VectorXd pot = DirichletSolver(Uset, opts).solve(ev);
        double res = 0;
        for (const auto& x : K) res = std::max(res, std::abs(pot(Uset.find(x)) - 1.0));
        em.residual = res;
    }
    em.capacity = std::accumulate(em.weights.begin(), em.weights.end(), 0.0);
    return em;
}

CapacityReport capacity(const PointSet& K, const Domain& U, const GreenOracle& g, const PotentialOptions& opts) {
    const EquilibriumMeasure em = equilibrium_measure(K, U, g, opts);
    CapacityReport r;
    r.set = em.K_desc;
    r.domain = em.U_desc;
    r.method = em.method;
    r.value = em.capacity;
    r.err = em.capacity * std::max(em.residual, 0.0) + g.max_error_estimate() * em.capacity * em.capacity;
    return r;
}

double variational_energy(const PointSet& K, const std::vector<double>& nu, const Domain& U, const GreenOracle& g,
                          const PotentialOptions& opts) {
    if (nu.size() != K.size()) throw std::invalid_argument("variational_energy: nu not aligned with K");
    double mass = 0;
    for (double v : nu) {
        if (v < 0) throw std::invalid_argument("variational_energy: nu has negative mass");
        mass += v;
    }
    if (std::abs(mass - 1.0) > 1e-10) throw std::invalid_argument("variational_energy: nu is not normalized");
    if (!U) {
        std::vector<Point> pts;
        std::vector<double> w;
        for (std::size_t i = 0; i < K.size(); ++i)
            if (nu[i] != 0) {
                pts.push_back(K[i]);
                w.push_back(nu[i]);
            }
        if (pts.size() <= opts.dense_limit) {
            const DisplacementTable t = g.table(extents_of(bounding_box(pts)));
            double E = 0;
            for (std::size_t i = 0; i < pts.size(); ++i) {
                E += w[i] * w[i] * t.v[0];
                for (std::size_t j = 0; j < i; ++j) E += 2 * w[i] * w[j] * t.at(pts[i] - pts[j]);
            }
            return E;
        }
        const Box box = bounding_box(pts);
        FreeGramOperator op(box, g);
        std::vector<double> in(std::size_t(box.volume()), 0.0), out(in.size());
        for (std::size_t i = 0; i < pts.size(); ++i) in[box.index(pts[i])] = w[i];
        op.apply(in.data(), out.data());
        double E = 0;
        for (std::size_t i = 0; i < in.size(); ++i) E += in[i] * out[i];
        return E;
    }
    const PointSet& Uset = *U;
    if (!K.subset_of(Uset)) throw std::invalid_argument("variational_energy: K not inside U");
    Eigen::VectorXd v = Eigen::VectorXd::Zero(Eigen::Index(Uset.size()));
    for (std::size_t i = 0; i < K.size(); ++i) v(Uset.find(K[i])) = nu[i];
    const Eigen::VectorXd gv = DirichletSolver(Uset, opts).solve(v);
    return v.dot(gv);
}

UnionCapacityBounds union_capacity_bounds(const std::vector<Point>& anchors, int L, const GreenOracle& g) {
    UnionCapacityBounds out;
    if (anchors.empty()) return out;
    const int d = g.dim();
    const Box C = Box::cube(Point::zero(d), 0, L);
    const EquilibriumMeasure em = equilibrium_measure(PointSet::from_box(C), kFree, g);
    const double cap = em.capacity;
    out.single = cap;
    out.upper = cap * double(anchors.size());

    // Autocorrelation of the normalized equilibrium measure over displacements
    // in (-(L-1)..L-1)^d.
    const Box disp = Box::cube(Point::zero(d), -(L - 1), L);
    std::vector<double> corr(std::size_t(disp.volume()), 0.0);
    const auto& sup = em.support;
    for (std::size_t i = 0; i < sup.size(); ++i) {
        const double wi = em.weights[i] / cap;
        if (wi == 0) continue;
        for (std::size_t j = 0; j < sup.size(); ++j) {
            const double wj = em.weights[j] / cap;
            if (wj != 0) corr[disp.index(sup[j] - sup[i])] += wi * wj;
        }
    }
    std::vector<std::pair<Point, double>> terms;
    for (std::size_t u = 0; u < corr.size(); ++u)
        if (corr[u] != 0) terms.emplace_back(disp.point(std::int64_t(u)), corr[u]);

    const Eigen::Index n = Eigen::Index(anchors.size());
    Eigen::MatrixXd M(n, n);
    for (Eigen::Index a = 0; a < n; ++a) {
        M(a, a) = 1.0 / cap;
        for (Eigen::Index b = 0; b < a; ++b) {
            const Point delta = anchors[a] - anchors[b];
            double s = 0;
            const bool far = sup_norm(delta) - (L - 1) > 24;
            for (const auto& [u, c] : terms) s += c * (far ? g.far_field(delta + u) : g(delta + u));
            M(a, b) = M(b, a) = s;
        }
    }
    const Eigen::VectorXd ones = Eigen::VectorXd::Ones(n);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(M);
    out.lower = ones.dot(ldlt.solve(ones));
    return out;
}

std::string to_json(const CapacityReport& r) {
    nlohmann::json j = {{"set", r.set}, {"domain", r.domain}, {"method", r.method}, {"N", r.N},
                        {"L", r.L},     {"value", r.value},   {"err", r.err}};
    return j.dump();
}

std::string to_json(const EquilibriumMeasure& e) {
    nlohmann::json pts = nlohmann::json::array();
    for (std::size_t i = 0; i < e.support.size(); ++i) {
        const auto& p = e.support[i];
        pts.push_back({{"x", std::vector<int>(p.c.begin(), p.c.begin() + p.d)}, {"w", e.weights[i]}});
    }
    nlohmann::json j = {{"K", e.K_desc},       {"U", e.U_desc},         {"capacity", e.capacity},
                        {"method", e.method},  {"residual", e.residual}, {"support", pts}};
    return j.dump();
}

}  // namespace gffperc
