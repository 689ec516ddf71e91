#include "gffperc/green.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/special_functions/bessel.hpp>
#include <boost/math/special_functions/gamma.hpp>

namespace gffperc {

namespace {

constexpr double kUMin = -40.0;
constexpr int kTailOrder = 8;
constexpr double kAsymptoticSwitch = 700.0;

// e^{-s} I_nu(s) ~ (2 pi s)^{-1/2} sum_k (-1)^k a_k(nu) s^{-k}
std::vector<double> asymptotic_coeffs(int nu, int order) {
    std::vector<double> c(order + 1);
    c[0] = 1.0;
    const double mu = 4.0 * double(nu) * nu;
    for (int k = 1; k <= order; ++k) {
        const double odd = 2.0 * k - 1.0;
        c[k] = -c[k - 1] * (mu - odd * odd) / (8.0 * k);
    }
    return c;
}

double scaled_i_asymptotic(int nu, double s) {
    const auto c = asymptotic_coeffs(nu, 30);
    double sum = 0, pw = 1;
    for (double ck : c) {
        const double term = ck * pw;
        sum += term;
        if (std::abs(term) < 1e-18 * std::abs(sum)) break;
        pw /= s;
    }
    return sum / std::sqrt(2.0 * std::numbers::pi * s);
}

double scaled_i01(int n, double s) {
    if (s >= kAsymptoticSwitch) return scaled_i_asymptotic(n, s);
    return boost::math::cyl_bessel_i(n, s) * std::exp(-s);
}

struct Rule {
    std::vector<double> s, w;  // w includes ds = s du
};

Rule make_rule(double umax, double width) {
    using G = boost::math::quadrature::gauss<double, 10>;
    const auto& x = G::abscissa();
    const auto& wt = G::weights();
    Rule r;
    const int panels = static_cast<int>(std::ceil((umax - kUMin) / width));
    const double h = (umax - kUMin) / panels;
    for (int p = 0; p < panels; ++p) {
        const double mid = kUMin + (p + 0.5) * h;
        for (std::size_t i = 0; i < x.size(); ++i)
            for (int sgn : {-1, 1}) {
                if (x[i] == 0 && sgn > 0) continue;
                const double u = mid + sgn * 0.5 * h * x[i];
                const double s = std::exp(u);
                r.s.push_back(s);
                r.w.push_back(0.5 * h * wt[i] * s);
            }
    }
    return r;
}

double tail_cutoff(int m) { return std::max(1e4, 100.0 * double(m) * m); }

// Multiplies truncated series in 1/s.
std::vector<double> series_mul(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> c(kTailOrder + 1, 0.0);
    for (int i = 0; i <= kTailOrder; ++i)
        for (int j = 0; i + j <= kTailOrder; ++j) c[i + j] += a[i] * b[j];
    return c;
}

// d * int_S^inf (2 pi s)^{-d/2} sum_k c_k s^{-k} ds
double tail_integral(int d, const std::vector<double>& c, double S) {
    double sum = 0;
    for (int k = 0; k <= kTailOrder; ++k) {
        const double p = 0.5 * d + k - 1.0;
        sum += c[k] * std::pow(S, -p) / p;
    }
    return d * std::pow(2.0 * std::numbers::pi, -0.5 * d) * sum;
}

// Accumulates out[idx] += w * prod_i I[x_i] over the table ext, row-major,
// recursing over leading axes so the innermost axis is a single fused loop.
void accumulate_products(int d, const std::array<int, kMaxDim>& ext, const std::vector<double>& I,
                         double w, double* out) {
    if (d == 1) {
        for (int k = 0; k < ext[0]; ++k) out[k] += w * I[k];
        return;
    }
    std::size_t inner = 1;
    for (int i = 1; i < d; ++i) inner *= ext[i];
    std::array<int, kMaxDim> sub{};
    for (int i = 1; i < d; ++i) sub[i - 1] = ext[i];
    for (int k = 0; k < ext[0]; ++k) {
        const double wk = w * I[k];
        if (wk == 0.0) continue;
        accumulate_products(d - 1, sub, I, wk, out + k * inner);
    }
}

void accumulate_tails(int dim, int d, const std::array<int, kMaxDim>& ext,
                      const std::vector<std::vector<double>>& coeffs, const std::vector<double>& prefix,
                      double S, double* out) {
    std::size_t inner = 1;
    for (int i = 1; i < d; ++i) inner *= ext[i];
    std::array<int, kMaxDim> sub{};
    for (int i = 1; i < d; ++i) sub[i - 1] = ext[i];
    for (int k = 0; k < ext[0]; ++k) {
        const auto p = series_mul(prefix, coeffs[k]);
        if (d == 1) out[k] += tail_integral(dim, p, S);
        else accumulate_tails(dim, d - 1, sub, coeffs, p, S, out + k * inner);
    }
}

std::array<int, kMaxDim> canonical(const Point& x) {
    std::array<int, kMaxDim> a{};
    for (int i = 0; i < x.d; ++i) a[i] = std::abs(x.c[i]);
    std::sort(a.begin(), a.begin() + x.d, std::greater<int>());
    return a;
}

}  // namespace

void scaled_bessel_i(double s, int m, std::vector<double>& out) {
    out.assign(m + 1, 0.0);
    const double i0 = scaled_i01(0, s);
    out[0] = i0;
    if (m == 0) return;
    const double i1 = scaled_i01(1, s);
    if (s >= double(m) * m) {
        out[1] = i1;
        for (int n = 1; n < m; ++n) out[n + 1] = out[n - 1] - (2.0 * n / s) * out[n];
        return;
    }
    const int start = static_cast<int>(std::ceil(std::sqrt(double(m) * m + 40.0 * s))) + 20;
    std::vector<double> r(std::max(start, m) + 2, 0.0);
    double rn = 0.0;
    for (int n = start; n >= 1; --n) {
        rn = 1.0 / (2.0 * n / s + rn);
        if (n <= m) r[n] = rn;
    }
    for (int n = 1; n <= m; ++n) {
        out[n] = out[n - 1] * r[n];
        if (out[n] == 0.0) break;
    }
}

std::size_t DisplacementTable::offset(const Point& x) const {
    std::size_t idx = 0;
    for (int i = 0; i < d; ++i) idx = idx * ext[i] + std::abs(x.c[i]);
    return idx;
}

bool DisplacementTable::covers(const Point& x) const {
    for (int i = 0; i < d; ++i)
        if (std::abs(x.c[i]) >= ext[i]) return false;
    return true;
}

double green_constant(int d) {
    return 0.5 * d * std::tgamma(0.5 * d - 1.0) * std::pow(std::numbers::pi, -0.5 * d);
}

GreenOracle::GreenOracle(int d, double tol) : d_(d), tol_(tol) {
    if (d < 3 || d > kMaxDim) throw std::invalid_argument("GreenOracle: need 3 <= d <= 6");
}

DisplacementTable GreenOracle::table(const std::array<int, kMaxDim>& ext) const {
    DisplacementTable t;
    t.d = d_;
    t.ext = ext;
    std::size_t size = 1;
    int m = 0;
    for (int i = 0; i < d_; ++i) {
        if (ext[i] < 1) throw std::invalid_argument("GreenOracle::table: extent < 1");
        size *= ext[i];
        m = std::max(m, ext[i] - 1);
    }
    const double S = tail_cutoff(m);
    const double umax = std::log(S);

    std::vector<double> coarse(size, 0.0), fine(size, 0.0);
    std::vector<double> I;
    for (auto [rule, out] : {std::pair{make_rule(umax, 0.5), &coarse}, std::pair{make_rule(umax, 0.25), &fine}}) {
        for (std::size_t n = 0; n < rule.s.size(); ++n) {
            scaled_bessel_i(rule.s[n], m, I);
            accumulate_products(d_, ext, I, d_ * rule.w[n], out->data());
        }
    }

    std::vector<std::vector<double>> coeffs(m + 1);
    for (int n = 0; n <= m; ++n) {
        coeffs[n] = asymptotic_coeffs(n, kTailOrder);
    }
    std::vector<double> tails(size, 0.0);
    std::vector<double> unit(kTailOrder + 1, 0.0);
    unit[0] = 1.0;
    accumulate_tails(d_, d_, ext, coeffs, unit, S, tails.data());

    double err = 0.0;
    t.v.resize(size);
    for (std::size_t i = 0; i < size; ++i) {
        t.v[i] = fine[i] + tails[i];
        err = std::max(err, std::abs(fine[i] - coarse[i]));
    }
    {
        std::lock_guard<std::mutex> lock(mu_);
        max_err_ = std::max(max_err_, err);
    }
    if (!(err <= tol_)) {
        std::ostringstream os;
        os << "GreenOracle: quadrature did not converge (panel-rule gap " << err << " > tol " << tol_
           << ", d=" << d_ << ", max index " << m << ", cutoff " << S << ")";
        throw std::runtime_error(os.str());
    }
    return t;
}

double GreenOracle::operator()(const Point& x) const {
    if (x.d != d_) throw std::invalid_argument("GreenOracle: dimension mismatch");
    const auto key = canonical(x);
    {
        std::lock_guard<std::mutex> lock(mu_);
        auto it = cache_.find(key);
        if (it != cache_.end()) return it->second;
    }
    // One-entry table at the canonical displacement: run the quadrature on
    // the needed indices only.
    const int m = key[0];
    const double S = tail_cutoff(m);
    const double umax = std::log(S);
    double vals[2] = {0, 0};
    std::vector<double> I;
    int which = 0;
    for (double width : {0.5, 0.25}) {
        const Rule rule = make_rule(umax, width);
        double acc = 0;
        for (std::size_t n = 0; n < rule.s.size(); ++n) {
            scaled_bessel_i(rule.s[n], m, I);
            double p = rule.w[n];
            for (int i = 0; i < d_; ++i) p *= I[key[i]];
            acc += p;
        }
        vals[which++] = d_ * acc;
    }
    std::vector<double> c(kTailOrder + 1, 0.0);
    c[0] = 1.0;
    for (int i = 0; i < d_; ++i) c = series_mul(c, asymptotic_coeffs(key[i], kTailOrder));
    const double tail = tail_integral(d_, c, S);
    const double err = std::abs(vals[1] - vals[0]);
    if (!(err <= tol_)) {
        std::ostringstream os;
        os << "GreenOracle: quadrature did not converge at " << to_string(x) << " (gap " << err << ")";
        throw std::runtime_error(os.str());
    }
    const double g = vals[1] + tail;
    std::lock_guard<std::mutex> lock(mu_);
    max_err_ = std::max(max_err_, err);
    cache_.emplace(key, g);
    return g;
}

std::vector<double> GreenOracle::axis_table(int m) const {
    const double S = tail_cutoff(m);
    const double umax = std::log(S);
    std::vector<double> coarse(m + 1, 0.0), fine(m + 1, 0.0);
    std::vector<double> I;
    for (auto [width, out] : {std::pair{0.5, &coarse}, std::pair{0.25, &fine}}) {
        const Rule rule = make_rule(umax, width);
        for (std::size_t n = 0; n < rule.s.size(); ++n) {
            scaled_bessel_i(rule.s[n], m, I);
            const double w = d_ * rule.w[n] * std::pow(I[0], d_ - 1);
            for (int j = 0; j <= m; ++j) (*out)[j] += w * I[j];
        }
    }
    auto c0 = asymptotic_coeffs(0, kTailOrder);
    std::vector<double> base(kTailOrder + 1, 0.0);
    base[0] = 1.0;
    for (int i = 1; i < d_; ++i) base = series_mul(base, c0);
    double err = 0;
    for (int j = 0; j <= m; ++j) {
        err = std::max(err, std::abs(fine[j] - coarse[j]));
        fine[j] += tail_integral(d_, series_mul(base, asymptotic_coeffs(j, kTailOrder)), S);
    }
    {
        std::lock_guard<std::mutex> lock(mu_);
        max_err_ = std::max(max_err_, err);
    }
    if (!(err <= tol_)) throw std::runtime_error("GreenOracle::axis_table: quadrature did not converge");
    return fine;
}

double GreenOracle::far_field(const Point& x) const {
    const double r2 = [&] {
        double s = 0;
        for (int i = 0; i < x.d; ++i) s += double(x.c[i]) * x.c[i];
        return s;
    }();
    const double r = std::sqrt(r2);
    const double lead = green_constant(d_) * std::pow(r, 2.0 - d_);
    if (d_ != 3) return lead;
    double s4 = 0;
    for (int i = 0; i < 3; ++i) s4 += std::pow(double(x.c[i]), 4);
    return lead * (1.0 + (5.0 * s4 / (r2 * r2) - 3.0) / (8.0 * r2));
}

double GreenOracle::approx(const Point& x, int exact_radius) const {
    if (sup_norm(x) <= exact_radius) return (*this)(x);
    return far_field(x);
}

double GreenOracle::max_error_estimate() const {
    std::lock_guard<std::mutex> lock(mu_);
    return max_err_;
}

ReturnSeriesResult green3_origin_return_series(std::int64_t m) {
    if (m < 16) throw std::invalid_argument("green3_origin_return_series: m too small");
    // Kahan-summed partial sums of p_{2n}, n < M, 2M, 4M.
    double sums[3] = {0, 0, 0};
    const std::int64_t marks[3] = {m, 2 * m, 4 * m};
    double sum = 0, comp = 0;
    double q_prev = 0, q = 1.0, b = 1.0;  // q_n = a_n / 9^n, b_n = C(2n,n)/4^n
    int mark = 0;
    for (std::int64_t n = 0; n < 4 * m; ++n) {
        const double term = b * q;
        const double y = term - comp;
        const double t = sum + y;
        comp = (t - sum) - y;
        sum = t;
        if (n + 1 == marks[mark]) sums[mark++] = sum;
        const double nn = double(n);
        const double q_next = ((10 * nn * nn + 10 * nn + 3) * q - nn * nn * q_prev) / (9.0 * (nn + 1) * (nn + 1));
        q_prev = q;
        q = q_next;
        b *= (2 * nn + 1) / (2 * nn + 2);
    }
    // S(M) = g - A M^{-1/2} - B M^{-3/2}: solve for g from three partial sums.
    auto solve3 = [&](const double* s, const std::int64_t* ms) {
        double A[3][4];
        for (int i = 0; i < 3; ++i) {
            const double mm = double(ms[i]);
            A[i][0] = 1;
            A[i][1] = -std::pow(mm, -0.5);
            A[i][2] = -std::pow(mm, -1.5);
            A[i][3] = s[i];
        }
        for (int c = 0; c < 3; ++c)
            for (int r = c + 1; r < 3; ++r) {
                const double f = A[r][c] / A[c][c];
                for (int k = c; k < 4; ++k) A[r][k] -= f * A[c][k];
            }
        double x[3];
        for (int r = 2; r >= 0; --r) {
            double v = A[r][3];
            for (int k = r + 1; k < 3; ++k) v -= A[r][k] * x[k];
            x[r] = v / A[r][r];
        }
        return x[0];
    };
    const double g3 = solve3(sums, marks);
    // Two-term elimination on (2M, 4M) as the error yardstick.
    const double r = std::sqrt(2.0);
    const double g2 = (r * sums[2] - sums[1]) / (r - 1.0);
    return {g3, std::abs(g3 - g2)};
}

}  // namespace gffperc
