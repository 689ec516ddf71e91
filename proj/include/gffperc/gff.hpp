#ifndef GFFPERC_GFF_HPP
#define GFFPERC_GFF_HPP

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "gffperc/green.hpp"
#include "gffperc/lattice.hpp"

namespace gffperc {

// Midpoint values: mid[axis][box.index(x)] is the value at the midpoint of
// {x, x + e_axis}, NaN when x + e_axis leaves the box.
struct MidpointExtension {
    double sigma2 = 0.0;
    std::vector<std::vector<double>> mid;
};

struct FieldSample {
    Box box;
    std::vector<double> values;  // row-major over box
    std::string law;             // "dirichlet", "bulk", "tilted", ...
    std::uint64_t seed = 0;
    std::uint32_t replica = 0;
    int R = 0;                   // bulk enlargement, 0 otherwise
    Box parent;                  // box the field was sampled on
    double bias_bound = 0.0;     // bulk: max_x g(0) - g_parent(x, x) over probes
    std::optional<MidpointExtension> midpoints;

    // 0 outside the box (Dirichlet convention).
    double at(const Point& x) const { return box.contains(x) ? values[box.index(x)] : 0.0; }
    double& ref(const Point& x) { return values[box.index(x)]; }
    int dim() const { return box.d; }
};

// Spectral machinery of the Dirichlet walk on a box: product sine modes,
// P-eigenvalues mu_k = (1/d) sum_i cos(pi k_i / (n_i + 1)).
class BoxSpectral {
public:
    explicit BoxSpectral(const Box& box);
    ~BoxSpectral();
    BoxSpectral(const BoxSpectral&) = delete;
    BoxSpectral& operator=(const BoxSpectral&) = delete;

    const Box& box() const { return box_; }
    // 1 - mu_k for every mode, row-major over k.
    const std::vector<double>& gap() const { return gap_; }
    // In-place orthonormal sine transform (its own inverse).
    void transform(std::vector<double>& v) const;
    // Solves (I - P_U) u = b on the box, u = 0 outside.
    std::vector<double> solve(std::vector<double> b) const;

private:
    struct Impl;
    Box box_;
    std::vector<double> gap_;
    std::unique_ptr<Impl> impl_;
};

// Exact sample of P_U, U a box.
FieldSample sample_dirichlet(const Box& U, std::uint64_t seed, std::uint32_t replica = 0);
// Same, reusing the transform of an existing spectral object.
FieldSample sample_dirichlet(const BoxSpectral& spec, std::uint64_t seed, std::uint32_t replica = 0);

// Dirichlet sample on B_{R N}(center) restricted to B = B_N(center).
FieldSample sample_bulk(const Box& B, int R, std::uint64_t seed, std::uint32_t replica, const GreenOracle& g);
// Restriction of a parent sample; pointwise equal.
FieldSample restrict_sample(const FieldSample& f, const Box& sub);

// max over probe points of g(0) - g_{parent}(x, x) for x in B.
double bulk_bias_bound(const Box& B, const Box& parent, const GreenOracle& g);

struct DecompositionRecord {
    Point z;
    Box U;                    // U_z
    std::vector<double> xi;   // over U, row-major
    std::vector<double> psi;  // over U, row-major
    std::uint64_t parent_seed = 0;
    std::uint32_t parent_replica = 0;

    double xi_at(const Point& x) const { return U.contains(x) ? xi[U.index(x)] : 0.0; }
    double psi_at(const Point& x) const { return U.contains(x) ? psi[U.index(x)] : 0.0; }
};

// phi = xi + psi on U (any box; U plus its outer boundary inside f.box).
DecompositionRecord harmonic_decompose(const FieldSample& f, const Box& U);
DecompositionRecord harmonic_decompose(const FieldSample& f, const Point& z, const RenormLattice& lat);

// sup of xi over region (a box inside rec.U); with include_midpoints the
// midpoints of edges with an endpoint in region (both ends in U) are included,
// their harmonic value being the endpoint average.
double harmonic_sup(const DecompositionRecord& rec, const Box& region, bool include_midpoints = false);

// phi~_m = (phi_x + phi_y)/2 + eta_m, eta_m ~ N(0, d/2) independent.
MidpointExtension extend_midpoints(const FieldSample& f, std::uint64_t seed, std::uint32_t replica = 0);
// psi^_x = phi_x - average of the 2d incident midpoints, for x whose edges
// all lie in the box; NaN elsewhere.
std::vector<double> midpoint_residual(const FieldSample& f, const MidpointExtension& m);

// Binary container: "GFFS" v1 header, row-major float64 values, optional
// midpoint section.
void write_sample(std::ostream& os, const FieldSample& f);
FieldSample read_sample(std::istream& is);

}  // namespace gffperc

#endif
