#ifndef GFFPERC_COARSE_GRAIN_HPP
#define GFFPERC_COARSE_GRAIN_HPP

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gffperc/gff.hpp"
#include "gffperc/green.hpp"
#include "gffperc/lattice.hpp"

namespace gffperc {

// The crossing domains Lambda_N.
enum class LambdaKind {
    Ball,           // B_N, crossed from 0
    Annulus,        // B_{2N} \ B_N
    BoxAnnulus,     // Dtilde_{0,N} \ Ctilde_{0,N}
    PuncturedBall,  // B_N \ B_{eps N}
};
std::string to_string(LambdaKind k);
LambdaKind lambda_from_string(const std::string& s);

struct CrossingDomain {
    LambdaKind kind = LambdaKind::Ball;
    int d = 3;
    int N = 0;
    double eps = 0.25;  // PuncturedBall only

    Box outer() const;
    // The set a crossing path starts from; {0} for Ball.
    Box inner() const;
    // x in Lambda_N
    bool contains(const Point& x) const;
    bool contains(const Box& b) const;
    std::string describe() const;
};

// Indices (first, last) of a sub-path running from the inner set to the
// inner boundary of the outer box, touching the inner set only at `first`;
// first > last when the path runs backwards. nullopt when it does not cross.
std::optional<std::pair<std::size_t, std::size_t>> crossing_segment(const LatticePath& path,
                                                                    const CrossingDomain& dom);

struct CGParams {
    int d = 3;
    int K = 100;
    int L = 1;
    int N = 1000;
    CrossingDomain domain;  // domain.N and domain.d are overwritten from N, d
    double rho = 0.25;
    bool relaxed = false;   // K >= 4 accepted instead of K >= 100

    // Throws std::invalid_argument listing every violated constraint.
    void validate() const;
    CrossingDomain lambda() const;
    RenormLattice lattice() const { return RenormLattice{d, L, K}; }
    std::string label() const;
};

// Multiscale lengths L_0 = 1, L_{m+1} = ceil(2 (1 + eps_m) L_m), eps_m = (m+1)^-2.
int shape_scale(int m);
double shape_eps(int m);

// Node of the shape recursion. Shapes are lazy: the witness sub-path and the
// region constraints are kept, the explicit point set only when small.
struct ShapeNode {
    int level = 0;
    Point anchor;
    std::size_t first = 0, last = 0;   // induced crossing, indices into the oriented segment
    int parent = -1;
    int child[2] = {-1, -1};           // T_1 (cover) and T_2 (last exit) children
    double separation = -1.0;          // internal nodes: certified d_inf between child shapes
    std::optional<PointSet> points;    // materialized shape

    Box C() const { return Box::cube(anchor, 0, shape_scale(level)); }
    Box Ctilde() const;
    Box Chat() const;                  // anchor + [-L_n + L_{n-1}, 2 L_n - L_{n-1})^d
};

struct ShapeTree {
    std::vector<ShapeNode> nodes;      // nodes[0] is the root
    int n0 = 0;                        // root level
    int k = 0;                         // level of the pruned leaves
    int k0 = 0;                        // bottom level
    std::vector<int> leaves;           // level-k0 nodes, ordered by their level-k ancestor
    double log_family_bound = 0.0;     // log |A_S| bound from the recursion
};

struct AdmissibleCollection {
    CGParams params;
    std::string scheme;                // "shells" (d = 3) or "shapes" (d >= 4)
    std::vector<Point> z;              // ordered (shell index / leaf order)
    std::vector<std::pair<std::size_t, std::size_t>> crossing;  // per z: sub-path crossing Dtilde_z \ C_z
    std::uint64_t path_id = 0;
    std::pair<std::size_t, std::size_t> segment;  // crossing segment of the source path; indices
                                                  // in `crossing` and the tree refer to it, oriented
    double gamma_budget = 0.0;         // explicit log-cardinality bound of the family
    double gamma_constant = 0.0;       // gamma_budget / Gamma-shape(N/L)
    std::vector<double> tau;           // d = 3: projection gauge lambda(z_i)
    std::optional<ShapeTree> tree;

    int n() const { return int(z.size()); }
    std::string id() const;            // SHA-256 of the sorted points and parameters
};

struct AdmissibilityReport {
    bool separation = false;
    bool inclusion = false;
    bool cardinality = false;
    bool crossing = false;
    bool lipschitz = true;             // d = 3 projection; vacuous otherwise
    bool shapes = true;                // d >= 4 tree checks; vacuous otherwise
    double c_nLB = 0.0;                // achieved n u(KL) / N
    std::string message;

    bool ok() const { return separation && inclusion && cardinality && crossing && lipschitz && shapes; }
};

// Cardinality window normalizer u(KL): KL for d = 3, KL (log KL)^2 otherwise.
double cardinality_unit(int d, int K, int L);

// Shells S_i around the inner set; the i-th box is the first-hit box of S_i.
AdmissibleCollection coarse_grain_d3(const LatticePath& path, const CGParams& p, std::uint64_t path_id = 0);

struct D4Options {
    int max_tree_depth = 6;            // n0 - k
    std::int64_t materialize_limit = 20000;  // shapes with |Ctilde| above this stay lazy
};
AdmissibleCollection coarse_grain_d4(const LatticePath& path, const CGParams& p, std::uint64_t path_id = 0,
                                     const D4Options& opts = {});
// Dispatches on p.d.
AdmissibleCollection coarse_grain(const LatticePath& path, const CGParams& p, std::uint64_t path_id = 0);

AdmissibilityReport verify_collection(const AdmissibleCollection& c, const LatticePath& path);

// Explicit point set of a shape node: the *-component of the region chain
// containing the node's witness.
PointSet materialize_shape(const AdmissibleCollection& c, int node, const LatticePath& path);

// Level scales of the d >= 4 scheme for given (N, K, L): n0, k, k0.
struct ShapeLevels {
    int n0 = -1, k = -1, k0 = -1;
};
ShapeLevels shape_levels(int N, int K, int L);

// Projected porous line of the first ceil((1 - rho) n) elements (d = 3).
struct PorousProjection {
    std::vector<int> positions;        // axis coordinates of Ttilde_N
    int line_length = 0;               // N, or (1 - eps) N for the punctured ball
    double cap_line = 0.0;
    double cap_porous = 0.0;
    double porous_ratio = 0.0;         // cap(Ttilde_N) / cap(T_N)
    double sigma_lower = 0.0;          // variational lower bound on cap(Sigma(Ctilde))
    double sigma_upper = 0.0;
    double sigma_ratio = 0.0;          // sigma_lower / cap(T_N)
    int kept = 0;
};
PorousProjection porous_projection(const AdmissibleCollection& c, double rho, const GreenOracle& g);

// Random *-path crossing the domain: a walk with drift away from the inner set.
LatticePath random_crossing_path(const CrossingDomain& dom, std::uint64_t seed, std::uint32_t replica,
                                 double drift = 0.5);

struct KappaReport {
    int n = 0, k = 0;
    int instances = 0;
    double kappa_hat = 0.0;            // min over instances and sub-collections of cap / rho
    double kappa_kk = 0.0;             // min single-box capacity
    double c_fit = 0.0;                // kappa_hat / (2^{n-k} kappa_kk), when below 2^n
    double lower_bound = 0.0;          // 2^n ^ c_fit 2^{n-k} kappa_kk
    double two_leaf_C = 0.0;           // max fitted C in the two-leaf inequality (n = k + 1)
    bool dominates = false;
    std::vector<double> per_instance;  // min cap / rho per instance
};
// d = 4 shape instances crossing Ctilde_{0,n} \ C_{0,n}, coarse-grained to level k.
KappaReport kappa_check(int n, int k, int instances, std::uint64_t seed, const GreenOracle& g, int d = 4);

// Badness of the sites of a collection in a field sample.
struct BadnessReport {
    std::string collection_id;
    double h = 0.0, h_prime = 0.0, eps = 0.0, rho = 0.0;
    std::vector<Point> z;
    std::vector<char> psi_bad, xi_bad;
    std::vector<double> xi_sup;
    int psi_count = 0, xi_count = 0;
    bool E = false;                    // >= ceil(rho n) psi-bad sites
    bool F = false;                    // >= n - ceil(rho n) xi-bad sites
};
BadnessReport classify_badness(const FieldSample& f, const AdmissibleCollection& c, double h, double h_prime,
                               double eps, double rho);
void write_badness_csv_header(std::ostream& os);
void write_badness_csv(std::ostream& os, const BadnessReport& r, std::uint32_t replica, std::uint64_t seed);

// Joint tail of the harmonic averages sup_{D_z} xi^z over a collection.
struct TailEstimate {
    double a = 0.0;
    std::int64_t hits = 0, n = 0;
    double p_hat = 0.0, ci_lo = 0.0, ci_hi = 0.0;
    bool one_sided = false;            // no hits: log_p from the upper 95% bound
    double log_p = 0.0;
    double cap_sigma = 0.0;
    double slack = 0.0;
    double bound_exponent = 0.0;       // (a - slack)_+^2 cap / 2, to be divided by alpha
    double alpha_hat = 0.0;            // least alpha with log_p <= -(a - slack)^2 cap / (2 alpha)
};
// Per-sample maxima are computed once; one estimate per level a.
std::vector<TailEstimate> harmonic_collection_tail(const std::vector<FieldSample>& samples,
                                                   const std::vector<Point>& anchors, const RenormLattice& lat,
                                                   const std::vector<double>& levels, const GreenOracle& g,
                                                   double c_btis = 1.0);
// Same from precomputed sup values: sups[sample][z].
std::vector<TailEstimate> harmonic_collection_tail(const std::vector<std::vector<double>>& sups,
                                                   const std::vector<Point>& anchors, const RenormLattice& lat,
                                                   const std::vector<double>& levels, const GreenOracle& g,
                                                   double c_btis = 1.0);
std::vector<double> collection_xi_sups(const FieldSample& f, const std::vector<Point>& anchors,
                                       const RenormLattice& lat);

std::string to_json(const AdmissibleCollection& c, const AdmissibilityReport* rep = nullptr);

}  // namespace gffperc

#endif
