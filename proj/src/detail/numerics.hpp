#ifndef GFFPERC_DETAIL_NUMERICS_HPP
#define GFFPERC_DETAIL_NUMERICS_HPP

#include <cmath>
#include <mutex>

#include <Eigen/Dense>

namespace gffperc::detail {

// FFTW planning is not thread-safe; every planner call takes this lock.
std::mutex& fftw_planner_mutex();

struct CGResult {
    int iterations = 0;
    double rel_residual = 0.0;
    bool converged = false;
};

// Conjugate gradients for a symmetric positive definite operator given as
// apply(in, out).
template <class Apply>
CGResult conjugate_gradient(Apply&& apply, const Eigen::VectorXd& b, Eigen::VectorXd& x, double rtol,
                            int max_iter) {
    CGResult res;
    const double bnorm = b.norm();
    if (bnorm == 0.0) {
        x.setZero(b.size());
        res.converged = true;
        return res;
    }
    if (x.size() != b.size()) x.setZero(b.size());
    Eigen::VectorXd r(b.size()), ap(b.size());
    apply(x, ap);
    r = b - ap;
    Eigen::VectorXd p = r;
    double rr = r.squaredNorm();
    for (res.iterations = 0; res.iterations < max_iter; ++res.iterations) {
        if (std::sqrt(rr) <= rtol * bnorm) break;
        apply(p, ap);
        const double alpha = rr / p.dot(ap);
        x += alpha * p;
        r -= alpha * ap;
        const double rr_new = r.squaredNorm();
        p = r + (rr_new / rr) * p;
        rr = rr_new;
    }
    // True residual, not the recursively updated one.
    apply(x, ap);
    res.rel_residual = (b - ap).norm() / bnorm;
    res.converged = res.rel_residual <= 10 * rtol;
    return res;
}

}  // namespace gffperc::detail

#endif
