#ifndef GFFPERC_GREEN_HPP
#define GFFPERC_GREEN_HPP

#include <array>
#include <cstdint>
#include <memory>
#include <mutex>
#include <map>
#include <vector>

#include "gffperc/lattice.hpp"

namespace gffperc {

// g(x) for |x_i| < ext[i], indexed by absolute coordinates (row-major).
struct DisplacementTable {
    int d = 0;
    std::array<int, kMaxDim> ext{};
    std::vector<double> v;

    std::size_t size() const { return v.size(); }
    std::size_t offset(const Point& x) const;
    double at(const Point& x) const { return v[offset(x)]; }
    bool covers(const Point& x) const;
};

// Free Green function of the simple random walk, g(x) = sum_n P_0[X_n = x],
// from the lattice Fourier integral written as
//   g(x) = d * int_0^inf prod_i e^{-s} I_{|x_i|}(s) ds
// (the angular integrals done in closed form). Gauss-Legendre panels in
// log s, an asymptotic-series tail, and a half-width panel rule for the
// error estimate.
class GreenOracle {
public:
    explicit GreenOracle(int d, double tol = 1e-9);

    int dim() const { return d_; }
    double tol() const { return tol_; }

    // Exact value, cached. Throws std::runtime_error if the two panel rules
    // disagree by more than tol.
    double operator()(const Point& x) const;
    // Exact values on the whole displacement range of a box.
    DisplacementTable table(const std::array<int, kMaxDim>& ext) const;
    // g(j e_1) for j = 0..m.
    std::vector<double> axis_table(int m) const;

    // Large-|x| expansion; second-order accurate in d=3, leading order otherwise.
    double far_field(const Point& x) const;
    // Exact below `exact_radius` (sup-norm), far field beyond.
    double approx(const Point& x, int exact_radius = 24) const;

    // Largest panel-rule discrepancy seen so far.
    double max_error_estimate() const;

private:
    int d_;
    double tol_;
    mutable std::mutex mu_;
    mutable std::map<std::array<int, kMaxDim>, double> cache_;
    mutable double max_err_ = 0.0;
};

// Leading constant of g(x) ~ c_g(d) |x|^{2-d}; c_g(3) = 3/(2 pi).
double green_constant(int d);

// g_3(0) from the return probabilities of the 3-d walk,
//   p_{2n} = C(2n,n) 4^{-n} 9^{-n} sum_k C(n,k)^2 C(2k,k),
// summed to M, 2M, 4M terms with the M^{-1/2}, M^{-3/2} tail removed by
// Richardson extrapolation. Independent of GreenOracle.
struct ReturnSeriesResult {
    double value;
    double error_estimate;
};
ReturnSeriesResult green3_origin_return_series(std::int64_t m = 1 << 20);

// Scaled modified Bessel functions e^{-s} I_n(s), n = 0..m.
void scaled_bessel_i(double s, int m, std::vector<double>& out);

}  // namespace gffperc

#endif
