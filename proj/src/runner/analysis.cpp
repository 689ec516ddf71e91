#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <tbb/parallel_for.h>

#include "gffperc/gff.hpp"
#include "gffperc/runner.hpp"

namespace gffperc::runner {

LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
    LineFit f;
    f.points = int(x.size());
    if (x.size() < 2) {
        f.se = std::numeric_limits<double>::infinity();
        return f;
    }
    const double n = double(x.size());
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    if (x.size() < 3) {
        f.se = std::numeric_limits<double>::infinity();
        return f;
    }
    double rss = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = y[i] - f.intercept - f.slope * x[i];
        rss += r * r;
    }
    f.se = std::sqrt(rss / (n - 2) / sxx);
    return f;
}

std::vector<std::vector<double>> arm_thresholds(int n_max, int R, std::int64_t replicas, std::uint64_t seed,
                                                const GreenOracle& g, std::uint32_t first_replica) {
    std::vector<std::vector<double>> out(static_cast<std::size_t>(replicas));
    const Box B = Box::ball(Point::zero(g.dim()), n_max);
    tbb::parallel_for(std::int64_t(0), replicas, [&](std::int64_t r) {
        const FieldSample f = sample_bulk(B, R, seed, first_replica + std::uint32_t(r), g);
        out[r] = one_arm_thresholds(f, n_max);
    });
    return out;
}

std::vector<std::vector<double>> face_thresholds(const std::vector<int>& sizes, int R, std::int64_t replicas,
                                                 std::uint64_t seed, const GreenOracle& g) {
    const int n_max = *std::max_element(sizes.begin(), sizes.end());
    const Box B = Box::ball(Point::zero(g.dim()), n_max);
    std::vector<std::vector<double>> out(static_cast<std::size_t>(replicas));
    tbb::parallel_for(std::int64_t(0), replicas, [&](std::int64_t r) {
        const FieldSample f = sample_bulk(B, R, seed, std::uint32_t(r), g);
        for (int n : sizes) out[r].push_back(face_crossing_threshold(f, Box::ball(Point::zero(g.dim()), n), 0));
    });
    return out;
}

HstarBracket hstar_bracket(const std::vector<int>& sizes, const std::vector<double>& h_grid,
                           const std::vector<std::vector<double>>& thresholds) {
    HstarBracket b;
    const std::int64_t n = std::int64_t(thresholds.size());
    const std::size_t S = sizes.size(), H = h_grid.size();
    b.curves.assign(S, std::vector<ProportionEstimate>(H));
    for (std::size_t s = 0; s < S; ++s) {
        for (std::size_t j = 0; j < H; ++j) {
            std::int64_t hits = 0;
            for (const auto& t : thresholds) hits += t[s] >= h_grid[j];
            b.curves[s][j] = wilson(hits, n);
        }
        for (std::size_t j = 1; j < H; ++j)
            if (b.curves[s][j].p > b.curves[s][j - 1].ci_hi) {
                b.widened = true;
                b.warnings.push_back("curve N=" + std::to_string(sizes[s]) + " increases beyond its CI at h=" +
                                     std::to_string(h_grid[j]));
            }
    }
    b.lo = std::numeric_limits<double>::infinity();
    b.hi = -std::numeric_limits<double>::infinity();
    double est_sum = 0;
    int est_count = 0;
    for (std::size_t s = 0; s + 1 < S; ++s) {
        // Larger boxes cross more often below the critical level and less often above it.
        std::vector<double> D(H), se(H);
        for (std::size_t j = 0; j < H; ++j) {
            const double p1 = b.curves[s][j].p, p2 = b.curves[s + 1][j].p;
            D[j] = p2 - p1;
            se[j] = std::sqrt((p1 * (1 - p1) + p2 * (1 - p2)) / double(n));
        }
        // Sign change of D to the right of its maximum, then the run of grid
        // points around it where D is within 2 SE of zero and the curves are
        // not both degenerate, extended by one grid step.
        const std::size_t jmax = std::size_t(std::max_element(D.begin(), D.end()) - D.begin());
        std::size_t jc = H;
        for (std::size_t j = jmax; j + 1 < H; ++j)
            if (D[j] >= 0 && D[j + 1] < 0) {
                jc = j;
                break;
            }
        if (jc == H) {
            b.widened = true;
            b.warnings.push_back("sizes " + std::to_string(sizes[s]) + "," + std::to_string(sizes[s + 1]) +
                                 ": curves do not cross on the grid, bracket widened to the grid");
            b.lo = std::min(b.lo, h_grid.front());
            b.hi = std::max(b.hi, h_grid.back());
            continue;
        }
        auto undecided = [&](std::size_t j) {
            const double p1 = b.curves[s][j].p, p2 = b.curves[s + 1][j].p;
            const bool degenerate = (p1 < 0.05 && p2 < 0.05) || (p1 > 0.95 && p2 > 0.95);
            return !degenerate && std::abs(D[j]) <= 2 * se[j];
        };
        std::size_t lo = jc, hi = jc + 1;
        while (lo > 0 && undecided(lo)) --lo;
        while (hi + 1 < H && undecided(hi)) ++hi;
        b.lo = std::min(b.lo, h_grid[lo]);
        b.hi = std::max(b.hi, h_grid[hi]);
        est_sum += h_grid[jc] + (h_grid[jc + 1] - h_grid[jc]) * D[jc] / (D[jc] - D[jc + 1]);
        ++est_count;
    }
    b.estimate = est_count ? est_sum / est_count : 0.5 * (b.lo + b.hi);
    return b;
}

std::vector<ScanCell> scan_cells(const std::vector<std::vector<double>>& arm, const std::vector<int>& sizes,
                                 const std::vector<double>& h, double hstar_lo, double hstar_hi, int nout_factor) {
    std::vector<ScanCell> cells;
    const std::int64_t n = std::int64_t(arm.size());
    for (double level : h) {
        for (int N : sizes) {
            ScanCell c;
            c.h = level;
            c.N = N;
            std::int64_t hits = 0;
            if (level > hstar_hi) {
                c.event = "one_arm";
                for (const auto& a : arm) hits += a.at(N) >= level;
            } else if (level < hstar_lo) {
                c.event = "truncated_one_arm";
                c.N_out = nout_factor * N;
                for (const auto& a : arm) hits += a.at(N) >= level && a.at(c.N_out) < level;
            } else {
                throw std::invalid_argument("scan_cells: level inside the h* bracket");
            }
            c.p = wilson(hits, n);
            c.flagged = hits == 0;
            cells.push_back(c);
        }
    }
    return cells;
}

std::vector<ScanFit> scan_fits(const std::vector<ScanCell>& cells, double hstar) {
    std::vector<ScanFit> fits;
    for (std::size_t i = 0; i < cells.size();) {
        std::size_t j = i;
        std::vector<double> x, y;
        while (j < cells.size() && cells[j].h == cells[i].h) {
            const auto& c = cells[j];
            if (!c.flagged) {
                x.push_back(c.N / std::log(double(c.N)));
                y.push_back(-std::log(c.p.p));
            }
            ++j;
        }
        ScanFit f;
        f.h = cells[i].h;
        f.event = cells[i].event;
        f.fit = fit_line(x, y);
        f.reference = std::numbers::pi / 6 * (f.h - hstar) * (f.h - hstar);
        fits.push_back(f);
        i = j;
    }
    return fits;
}

}  // namespace gffperc::runner
