#include "gffperc/excursion.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include <boost/pending/disjoint_sets.hpp>

namespace gffperc {

namespace {

using DSU = boost::disjoint_sets_with_storage<>;

void require_inside(const FieldSample& f, const Box& b, const char* who) {
    if (!f.box.contains(b))
        throw std::invalid_argument(std::string(who) + ": " + b.describe() + " not inside the sample box " +
                                    f.box.describe());
}

// Shortest nn-path inside `region` through allowed sites from any source to
// any target; empty if none.
template <class Allowed, class Target>
std::vector<Point> bfs_path(const Box& region, const std::vector<Point>& sources, Allowed allowed, Target target) {
    const std::int64_t vol = region.volume();
    std::vector<std::int64_t> prev(static_cast<std::size_t>(vol), -2);
    std::deque<std::int64_t> q;
    for (const auto& s : sources) {
        if (!region.contains(s) || !allowed(s)) continue;
        const auto i = region.index(s);
        if (prev[i] != -2) continue;
        prev[i] = -1;
        q.push_back(i);
    }
    const auto& nn = neighbour_offsets(region.d, Adjacency::Nearest);
    while (!q.empty()) {
        const auto i = q.front();
        q.pop_front();
        const Point p = region.point(i);
        if (target(p)) {
            std::vector<Point> path;
            for (std::int64_t k = i; k != -1; k = prev[k]) path.push_back(region.point(k));
            std::reverse(path.begin(), path.end());
            return path;
        }
        for (const auto& o : nn) {
            const Point y = p + o;
            if (!region.contains(y)) continue;
            const auto j = region.index(y);
            if (prev[j] != -2 || !allowed(y)) continue;
            prev[j] = i;
            q.push_back(j);
        }
    }
    return {};
}

Point origin(int d) { return Point::zero(d); }

}  // namespace

ClusterLabeling label_clusters(const FieldSample& f, double h, Adjacency mode, std::optional<Box> region,
                               const std::function<bool(const Point&)>& mask) {
    ClusterLabeling cl;
    cl.region = region ? *region : f.box;
    cl.h = h;
    cl.mode = mode;
    require_inside(f, cl.region, "label_clusters");
    const Box& R = cl.region;
    const std::int64_t vol = R.volume();
    std::vector<char> on(static_cast<std::size_t>(vol), 0);
    for (std::int64_t i = 0; i < vol; ++i) {
        const Point x = R.point(i);
        on[i] = f.values[f.box.index(x)] >= h && (!mask || mask(x));
    }
    DSU ds(static_cast<std::size_t>(vol));
    const auto& offs = neighbour_offsets(R.d, mode);
    for (std::int64_t i = 0; i < vol; ++i) {
        if (!on[i]) continue;
        const Point x = R.point(i);
        for (const auto& o : offs) {
            const Point y = x + o;
            if (!(y < x) || !R.contains(y)) continue;  // each pair once
            const auto j = R.index(y);
            if (on[j]) ds.union_set(i, j);
        }
    }
    cl.label.assign(static_cast<std::size_t>(vol), 0);
    std::vector<std::int32_t> root_label(static_cast<std::size_t>(vol), 0);
    std::vector<std::array<int, kMaxDim>> lo, hi;
    for (std::int64_t i = 0; i < vol; ++i) {
        if (!on[i]) continue;
        const auto r = ds.find_set(i);
        if (!root_label[r]) {
            root_label[r] = ++cl.count;
            cl.size.push_back(0);
            lo.emplace_back();
            hi.emplace_back();
            lo.back().fill(std::numeric_limits<int>::max());
            hi.back().fill(std::numeric_limits<int>::min());
        }
        const int l = root_label[r];
        cl.label[i] = l;
        ++cl.size[l - 1];
        const Point x = R.point(i);
        for (int a = 0; a < R.d; ++a) {
            lo[l - 1][a] = std::min(lo[l - 1][a], x.c[a]);
            hi[l - 1][a] = std::max(hi[l - 1][a], x.c[a]);
        }
    }
    cl.diameter.resize(cl.count);
    for (int l = 0; l < cl.count; ++l) {
        int dm = 0;
        for (int a = 0; a < R.d; ++a) dm = std::max(dm, hi[l][a] - lo[l][a]);
        cl.diameter[l] = dm;
    }
    return cl;
}

EventReport one_arm(const FieldSample& f, double h, int N) {
    const int d = f.dim();
    const Box B = Box::ball(origin(d), N);
    require_inside(f, B, "one_arm");
    EventReport r;
    r.event = "one_arm";
    r.h = h;
    r.N = N;
    r.ambient = B.describe();
    r.witness = bfs_path(
        B, {origin(d)}, [&](const Point& x) { return f.at(x) >= h; }, [&](const Point& x) { return B.on_boundary(x); });
    r.outcome = !r.witness.empty();
    return r;
}

EventReport truncated_one_arm(const FieldSample& f, double h, int N, int N_out) {
    if (N_out <= N) throw std::invalid_argument("truncated_one_arm: N_out must exceed N");
    const int d = f.dim();
    const Box Bout = Box::ball(origin(d), N_out);
    require_inside(f, Bout, "truncated_one_arm");
    EventReport r = one_arm(f, h, N);
    r.event = "truncated_one_arm";
    r.N_out = N_out;
    r.ambient = Bout.describe();
    if (!r.outcome) return r;
    const auto escape = bfs_path(
        Bout, {origin(d)}, [&](const Point& x) { return f.at(x) >= h; },
        [&](const Point& x) { return Bout.on_boundary(x); });
    r.outcome = escape.empty();
    if (!r.outcome) r.witness.clear();
    return r;
}

namespace {

struct Crossing {
    std::vector<int> labels;
    ClusterLabeling cl;
};

Crossing crossing_clusters_ball(const FieldSample& f, double h, int N) {
    const int d = f.dim();
    const Box B2 = Box::ball(origin(d), 2 * N);
    require_inside(f, B2, "annulus event");
    Crossing c;
    c.cl = label_clusters(f, h, Adjacency::Nearest, B2);
    std::vector<char> inner(c.cl.count + 1, 0), outer(c.cl.count + 1, 0);
    for (std::int64_t i = 0; i < B2.volume(); ++i) {
        const int l = c.cl.label[i];
        if (!l) continue;
        const Point x = B2.point(i);
        if (sup_norm(x) <= N) inner[l] = 1;
        if (B2.on_boundary(x)) outer[l] = 1;
    }
    for (int l = 1; l <= c.cl.count; ++l)
        if (inner[l] && outer[l]) c.labels.push_back(l);
    return c;
}

}  // namespace

EventReport loc_uniq(const FieldSample& f, double h, int N) {
    const int d = f.dim();
    const Crossing c = crossing_clusters_ball(f, h, N);
    EventReport r;
    r.event = "loc_uniq";
    r.h = h;
    r.N = N;
    r.ambient = c.cl.region.describe();
    r.count = int(c.labels.size());
    r.outcome = r.count == 1;
    if (r.outcome) {
        const int l = c.labels[0];
        const Box B = Box::ball(origin(d), N);
        std::vector<Point> src;
        for (std::int64_t i = 0; i < B.volume(); ++i) {
            const Point x = B.point(i);
            if (c.cl.at(x) == l) src.push_back(x);
        }
        const Box& B2 = c.cl.region;
        r.witness = bfs_path(
            B2, src, [&](const Point& x) { return c.cl.at(x) == l; }, [&](const Point& x) { return B2.on_boundary(x); });
    }
    return r;
}

EventReport two_arms(const FieldSample& f, double h, int N) {
    const int d = f.dim();
    const Box B2 = Box::ball(origin(d), 2 * N);
    require_inside(f, B2, "two_arms");
    const auto cl = label_clusters(f, h, Adjacency::Nearest, B2, [N](const Point& x) { return sup_norm(x) > N; });
    std::vector<char> inner(cl.count + 1, 0), outer(cl.count + 1, 0);
    for (std::int64_t i = 0; i < B2.volume(); ++i) {
        const int l = cl.label[i];
        if (!l) continue;
        const Point x = B2.point(i);
        if (sup_norm(x) == N + 1) inner[l] = 1;
        if (B2.on_boundary(x)) outer[l] = 1;
    }
    EventReport r;
    r.event = "two_arms";
    r.h = h;
    r.N = N;
    r.ambient = B2.describe();
    int first = 0;
    for (int l = 1; l <= cl.count; ++l)
        if (inner[l] && outer[l]) {
            ++r.count;
            if (!first) first = l;
        }
    r.outcome = r.count >= 2;
    if (r.outcome) {
        std::vector<Point> src;
        for (std::int64_t i = 0; i < B2.volume(); ++i)
            if (cl.label[i] == first && sup_norm(B2.point(i)) == N + 1) src.push_back(B2.point(i));
        r.witness = bfs_path(
            B2, src, [&](const Point& x) { return cl.at(x) == first; }, [&](const Point& x) { return B2.on_boundary(x); });
    }
    return r;
}

std::pair<EventReport, EventReport> exist_unique_diagnostics(const FieldSample& f, double h, int N) {
    const int d = f.dim();
    const Box B = Box::ball(origin(d), N);
    const Box B2 = Box::ball(origin(d), 2 * N);
    require_inside(f, B2, "exist_unique_diagnostics");
    const auto in = label_clusters(f, h, Adjacency::Nearest, B);
    EventReport ex, un;
    ex.event = "exist";
    un.event = "unique";
    ex.h = un.h = h;
    ex.N = un.N = N;
    ex.ambient = B.describe();
    un.ambient = B2.describe();
    for (int l = 0; l < in.count; ++l)
        if (5 * in.diameter[l] >= N) ex.outcome = true;
    const auto out = label_clusters(f, h, Adjacency::Nearest, B2);
    std::vector<std::int32_t> big_parent;  // B_{2N} label of each big B_N cluster
    std::vector<char> seen(in.count + 1, 0);
    for (std::int64_t i = 0; i < B.volume(); ++i) {
        const int l = in.label[i];
        if (!l || seen[l] || 10 * in.diameter[l - 1] < N) continue;
        seen[l] = 1;
        big_parent.push_back(out.at(B.point(i)));
    }
    un.count = int(big_parent.size());
    un.outcome = std::all_of(big_parent.begin(), big_parent.end(),
                             [&](std::int32_t p) { return p == big_parent.front(); });
    return {ex, un};
}

EventReport tube_crossing(const FieldSample& f, double h, int N, int L) {
    const int d = f.dim();
    const Box T = Box::tube(d, N, L);
    require_inside(f, T, "tube_crossing");
    EventReport r;
    r.event = "tube_crossing";
    r.h = h;
    r.N = N;
    r.L = L;
    r.ambient = T.describe();
    std::vector<Point> src;
    for (std::int64_t i = 0; i < T.volume(); ++i) {
        const Point x = T.point(i);
        if (x.c[0] == 0) src.push_back(x);
    }
    r.witness = bfs_path(
        T, src, [&](const Point& x) { return f.at(x) >= h; }, [&](const Point& x) { return x.c[0] == N; });
    r.outcome = !r.witness.empty();
    return r;
}

bool verify_witness(const EventReport& r, const FieldSample& f) {
    if (!r.outcome) return true;
    const auto& w = r.witness;
    if (w.empty()) return r.event == "exist" || r.event == "unique";
    LatticePath path{w, Adjacency::Nearest};
    if (!path.valid()) return false;
    for (const auto& x : w)
        if (!f.box.contains(x) || f.at(x) < r.h) return false;
    const int d = f.dim();
    auto all_in = [&](const Box& b) {
        return std::all_of(w.begin(), w.end(), [&](const Point& x) { return b.contains(x); });
    };
    if (r.event == "one_arm" || r.event == "truncated_one_arm") {
        const Box B = Box::ball(origin(d), r.N);
        return w.front() == origin(d) && B.on_boundary(w.back()) && all_in(B);
    }
    if (r.event == "loc_uniq") {
        const Box B2 = Box::ball(origin(d), 2 * r.N);
        return sup_norm(w.front()) <= r.N && B2.on_boundary(w.back()) && all_in(B2);
    }
    if (r.event == "two_arms") {
        const Box B2 = Box::ball(origin(d), 2 * r.N);
        return sup_norm(w.front()) == r.N + 1 && B2.on_boundary(w.back()) && all_in(B2) &&
               std::all_of(w.begin(), w.end(), [&](const Point& x) { return sup_norm(x) > r.N; });
    }
    if (r.event == "tube_crossing") {
        const Box T = Box::tube(d, r.N, r.L);
        return w.front().c[0] == 0 && w.back().c[0] == r.N && all_in(T);
    }
    return false;
}

ProportionEstimate wilson(std::int64_t hits, std::int64_t n, double z) {
    ProportionEstimate e;
    e.n = n;
    e.hits = hits;
    if (n == 0) {
        e.ci_hi = 1.0;
        return e;
    }
    const double p = double(hits) / double(n);
    const double z2 = z * z;
    const double denom = 1.0 + z2 / n;
    const double center = (p + z2 / (2.0 * n)) / denom;
    const double half = z * std::sqrt(p * (1 - p) / n + z2 / (4.0 * n * n)) / denom;
    e.p = p;
    e.ci_lo = std::max(0.0, center - half);
    e.ci_hi = std::min(1.0, center + half);
    return e;
}

ProportionEstimate truncated_two_point(const std::vector<FieldSample>& samples, double h, const Point& x,
                                       const Point& y, int N_out) {
    std::int64_t hits = 0;
    for (const auto& f : samples) {
        const Box Bout = Box::ball(x, N_out);
        require_inside(f, Bout, "truncated_two_point");
        if (!Bout.contains(y)) throw std::invalid_argument("truncated_two_point: y outside B_{N_out}(x)");
        bool reaches_y = false, escapes = false;
        bfs_path(
            Bout, {x}, [&](const Point& p) { return f.at(p) >= h; },
            [&](const Point& p) {
                reaches_y = reaches_y || p == y;
                escapes = escapes || Bout.on_boundary(p);
                return false;  // explore the whole cluster
            });
        if (reaches_y && !escapes) ++hits;
    }
    return wilson(hits, std::int64_t(samples.size()));
}

std::vector<double> one_arm_thresholds(const FieldSample& f, int n_max) {
    const int d = f.dim();
    const Box B = Box::ball(origin(d), n_max);
    require_inside(f, B, "one_arm_thresholds");
    const std::int64_t vol = B.volume();
    std::vector<double> val(static_cast<std::size_t>(vol));
    for (std::int64_t i = 0; i < vol; ++i) val[i] = f.values[f.box.index(B.point(i))];
    std::vector<std::int64_t> order(static_cast<std::size_t>(vol));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return val[a] > val[b]; });
    DSU ds(static_cast<std::size_t>(vol));
    std::vector<int> radius(static_cast<std::size_t>(vol));
    std::vector<char> on(static_cast<std::size_t>(vol), 0);
    const auto& nn = neighbour_offsets(d, Adjacency::Nearest);
    const auto o = B.index(origin(d));
    std::vector<double> arm(n_max + 1, -std::numeric_limits<double>::infinity());
    int next = 0;
    for (const auto i : order) {
        on[i] = 1;
        const Point x = B.point(i);
        radius[i] = sup_norm(x);
        for (const auto& off : nn) {
            const Point y = x + off;
            if (!B.contains(y)) continue;
            const auto j = B.index(y);
            if (!on[j]) continue;
            const auto ri = ds.find_set(i), rj = ds.find_set(j);
            if (ri == rj) continue;
            const int rad = std::max(radius[ri], radius[rj]);
            ds.link(ri, rj);
            radius[ds.find_set(i)] = rad;
        }
        if (!on[o]) continue;
        const int r0 = radius[ds.find_set(o)];
        while (next <= n_max && next <= r0) arm[next++] = val[i];
        if (next > n_max) break;
    }
    return arm;
}

double face_crossing_threshold(const FieldSample& f, const Box& box, int axis) {
    require_inside(f, box, "face_crossing_threshold");
    const std::int64_t vol = box.volume();
    std::vector<double> val(static_cast<std::size_t>(vol));
    for (std::int64_t i = 0; i < vol; ++i) val[i] = f.values[f.box.index(box.point(i))];
    std::vector<std::int64_t> order(static_cast<std::size_t>(vol));
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](auto a, auto b) { return val[a] > val[b]; });
    DSU ds(static_cast<std::size_t>(vol));
    std::vector<std::uint8_t> flags(static_cast<std::size_t>(vol), 0), on(static_cast<std::size_t>(vol), 0);
    const auto& nn = neighbour_offsets(box.d, Adjacency::Nearest);
    for (const auto i : order) {
        on[i] = 1;
        const Point x = box.point(i);
        std::uint8_t fl = (x.c[axis] == box.lo[axis] ? 1 : 0) | (x.c[axis] == box.hi[axis] - 1 ? 2 : 0);
        flags[i] = fl;
        for (const auto& off : nn) {
            const Point y = x + off;
            if (!box.contains(y)) continue;
            const auto j = box.index(y);
            if (!on[j]) continue;
            const auto ri = ds.find_set(i), rj = ds.find_set(j);
            if (ri == rj) continue;
            const std::uint8_t merged = flags[ri] | flags[rj];
            ds.link(ri, rj);
            flags[ds.find_set(i)] = merged;
        }
        if (flags[ds.find_set(i)] == 3) return val[i];
    }
    return -std::numeric_limits<double>::infinity();
}

void write_event_csv_header(std::ostream& os) { os << "event,h,N,N_out,outcome,replica,seed\n"; }

void write_event_csv(std::ostream& os, const EventReport& r, std::uint32_t replica, std::uint64_t seed) {
    os << r.event << ',' << r.h << ',' << r.N << ',' << r.N_out << ',' << (r.outcome ? 1 : 0) << ',' << replica << ','
       << seed << '\n';
}

}  // namespace gffperc
