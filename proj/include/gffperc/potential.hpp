#ifndef GFFPERC_POTENTIAL_HPP
#define GFFPERC_POTENTIAL_HPP

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "gffperc/green.hpp"
#include "gffperc/lattice.hpp"

namespace gffperc {

// Domain of a potential-theoretic quantity: a finite U, or all of Z^d.
using Domain = std::optional<PointSet>;
inline const Domain kFree = std::nullopt;

struct PotentialOptions {
    std::size_t dense_limit = 3000;   // dense killed Green / Gram solves
    std::size_t direct_limit = 40000; // sparse Cholesky below, CG above
    double cg_tol = 1e-12;
    int cg_max_iter = 20000;
    double negative_tol = 1e-8;
    double clip_tol = 1e-12;
};

// g_U on U x U; rows/columns follow the sorted order of U.
struct KilledGreenOperator {
    PointSet U;
    Eigen::MatrixXd G;

    double operator()(const Point& x, const Point& y) const;
};

// Throws std::length_error past opts.dense_limit; use DirichletSolver then.
KilledGreenOperator killed_green(const PointSet& U, const PotentialOptions& opts = {});

// Solver for (I - P_W) u = b on a finite set W (u = 0 off W), i.e.
// u = G_W b. Sparse Cholesky for small W, CG otherwise.
class DirichletSolver {
public:
    explicit DirichletSolver(PointSet W, const PotentialOptions& opts = {});
    ~DirichletSolver();
    DirichletSolver(DirichletSolver&&) noexcept;
    DirichletSolver& operator=(DirichletSolver&&) noexcept;

    const PointSet& domain() const { return W_; }
    Eigen::VectorXd solve(const Eigen::VectorXd& b) const;
    const Eigen::SparseMatrix<double>& matrix() const { return A_; }

private:
    struct Impl;
    PointSet W_;
    PotentialOptions opts_;
    Eigen::SparseMatrix<double> A_;
    std::unique_ptr<Impl> impl_;
};

// h(x) = P_x[H_K < T_U] for x in U (K subset of U), in U's sorted order.
Eigen::VectorXd hitting_probability(const PointSet& K, const PointSet& U, const PotentialOptions& opts = {});

// H(x, y) = P_x[H_K < T_U, X_{H_K} = y], rows over U, columns over K (dense).
Eigen::MatrixXd hitting_matrix(const PointSet& K, const PointSet& U, const PotentialOptions& opts = {});

struct EquilibriumMeasure {
    PointSet support;              // subset of the inner boundary of K
    std::vector<double> weights;   // aligned with support
    std::string K_desc;
    std::string U_desc;            // "free" or a description of U
    double capacity = 0.0;
    double residual = 0.0;         // max_{x in K} |sum_y g_U(x,y) e(y) - 1| when checked, else -1
    std::string method;

    double weight(const Point& x) const;
};

EquilibriumMeasure equilibrium_measure(const PointSet& K, const Domain& U, const GreenOracle& g,
                                       const PotentialOptions& opts = {});

struct CapacityReport {
    std::string set;
    std::string domain = "free";
    std::string method;  // dense | toeplitz | sparse | variational | mc
    int N = 0;
    int L = 0;
    double value = 0.0;
    double err = 0.0;
};

CapacityReport capacity(const PointSet& K, const Domain& U, const GreenOracle& g,
                        const PotentialOptions& opts = {});

// E_U(nu) = sum nu(x) g_U(x,y) nu(y) for a probability measure nu on K
// (weights aligned with K's sorted order).
double variational_energy(const PointSet& K, const std::vector<double>& nu, const Domain& U,
                          const GreenOracle& g, const PotentialOptions& opts = {});

// Gram operator x -> sum_y g(x - y) v(y) on the points of a box, applied by
// multilevel-Toeplitz circulant embedding.
class FreeGramOperator {
public:
    FreeGramOperator(const Box& box, const GreenOracle& g);
    FreeGramOperator(const Box& box, DisplacementTable table);
    ~FreeGramOperator();
    FreeGramOperator(const FreeGramOperator&) = delete;
    FreeGramOperator& operator=(const FreeGramOperator&) = delete;

    const Box& box() const { return box_; }
    const DisplacementTable& table() const { return table_; }
    // in/out indexed by box.index()
    void apply(const double* in, double* out) const;

private:
    struct Impl;
    Box box_;
    DisplacementTable table_;
    std::unique_ptr<Impl> impl_;
};

// Equilibrium measure of an arbitrary finite K in Z^d from the free Gram
// system on its inner boundary, solved by CG with the FFT matvec.
EquilibriumMeasure equilibrium_measure_fft(const PointSet& K, const GreenOracle& g,
                                           const PotentialOptions& opts = {});

// Capacity of the segment T_N = {0..N} e_1 (Toeplitz CG, dense below 512).
struct LineCapacity {
    CapacityReport report;
    std::vector<int> positions;  // axis coordinates of the support
    std::vector<double> e;       // equilibrium weights
    int iterations = 0;
};
LineCapacity line_capacity_fast(int N, const GreenOracle& g, const PotentialOptions& opts = {});
// Same for a subset of the segment (porous line); positions in [0, N].
LineCapacity line_subset_capacity(const std::vector<int>& positions, const GreenOracle& g,
                                  const PotentialOptions& opts = {});
// Dense reference for small N.
double line_capacity_dense(int N, const GreenOracle& g);

// T_{N,k}^delta = T_N(floor(k N^delta)).
int tube_width(int N, double delta, double k = 1.0);
CapacityReport tube_capacity(int N, double delta, double k, const GreenOracle& g,
                             const PotentialOptions& opts = {});
// cap_{T_{N,2}^delta}(T_N^delta).
CapacityReport tube_relative_capacity(int N, double delta, const PotentialOptions& opts = {});
// Free capacity of T_N(width).
CapacityReport tube_capacity_width(int N, int width, const GreenOracle& g, const PotentialOptions& opts = {});

// P_x[H_T = infinity] for T a subset of the segment T_N in d=3.
struct EscapeEstimate {
    double estimate = 0.0;
    double se = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    std::int64_t walks = 0;
    double bound = 0.0;  // C * log(1 + d(x,T)) / log N for the configured C
    bool bound_holds = false;
};
EscapeEstimate escape_probability(const Point& x, const std::vector<int>& T, int N, std::int64_t n_walks,
                                  std::uint64_t seed, const GreenOracle& g, double C_gamma = 1.0,
                                  int release_radius = 32);

// Lower bound on cap(union of the boxes z + [0, L)^d) from the variational
// principle, with trial measures spanned by the single-box equilibrium
// measures; upper bound from subadditivity.
struct UnionCapacityBounds {
    double lower = 0.0;
    double upper = 0.0;
    double single = 0.0;
};
UnionCapacityBounds union_capacity_bounds(const std::vector<Point>& anchors, int L, const GreenOracle& g);

// JSON records.
std::string to_json(const CapacityReport& r);
std::string to_json(const EquilibriumMeasure& e);

}  // namespace gffperc

#endif
