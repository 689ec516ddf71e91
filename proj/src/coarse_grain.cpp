#include "gffperc/coarse_grain.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "gffperc/digest.hpp"
#include "gffperc/excursion.hpp"
#include "gffperc/potential.hpp"
#include "gffperc/rng.hpp"

namespace gffperc {

namespace {

int floor_div(int a, int b) { return a >= 0 ? a / b : -((-a + b - 1) / b); }
int ceil_div(int a, int b) { return -floor_div(-a, b); }

Point origin(int d) { return Point::zero(d); }

// Number of z in s Z^d with z + [0, s)^d meeting the inner boundary of b.
double boxes_meeting_boundary(const Box& b, int s) {
    double meet = 1.0, inside = 1.0;
    for (int i = 0; i < b.d; ++i) {
        meet *= floor_div(b.hi[i] - 1, s) - floor_div(b.lo[i], s) + 1;
        const int lo = b.lo[i] + 1, hi = b.hi[i] - 1;  // interior
        const int c = floor_div(hi - s, s) - ceil_div(lo, s) + 1;
        inside *= std::max(0, c);
    }
    return meet - inside;
}

// Least d_inf from a point of box a to a point outside the interior of h
// (a inside h).
int margin_to_outside(const Box& a, const Box& h) {
    int m = std::numeric_limits<int>::max();
    for (int i = 0; i < a.d; ++i) m = std::min({m, a.lo[i] - h.lo[i], h.hi[i] - a.hi[i]});
    return m;
}

int dist_to_box(const Point& x, const Box& b) {
    int m = 0;
    for (int i = 0; i < b.d; ++i) {
        if (x.c[i] < b.lo[i]) m = std::max(m, b.lo[i] - x.c[i]);
        if (x.c[i] > b.hi[i] - 1) m = std::max(m, x.c[i] - b.hi[i] + 1);
    }
    return m;
}

Box interior(const Box& b) { return b.expanded(-1); }

// Oriented copy of the crossing segment.
std::vector<Point> oriented(const LatticePath& path, std::pair<std::size_t, std::size_t> seg) {
    std::vector<Point> out;
    if (seg.first <= seg.second) {
        out.assign(path.pts.begin() + std::ptrdiff_t(seg.first), path.pts.begin() + std::ptrdiff_t(seg.second) + 1);
    } else {
        for (std::size_t i = seg.first + 1; i-- > seg.second;) out.push_back(path.pts[i]);
    }
    return out;
}

// Sub-path of seg[t0..tmax] from the last visit of A (after first reaching
// it) to the first visit of the inner boundary of B.
std::optional<std::pair<std::size_t, std::size_t>> induced(const std::vector<Point>& seg, std::size_t t0,
                                                           std::size_t tmax, const Box& A, const Box& B) {
    std::size_t t = t0;
    while (t <= tmax && !A.contains(seg[t])) ++t;
    if (t > tmax) return std::nullopt;
    std::size_t u = t;
    while (u <= tmax && !B.on_boundary(seg[u])) ++u;
    if (u > tmax) return std::nullopt;
    std::size_t s = u;
    while (!A.contains(seg[s])) --s;
    return std::make_pair(s, u);
}

Point scale_anchor(const Point& x, int s) {
    Point z = x;
    for (int i = 0; i < x.d; ++i) z.c[i] = s * floor_div(x.c[i], s);
    return z;
}

const char* kLambdaNames[] = {"ball", "annulus", "box-annulus", "punctured-ball"};

}  // namespace

std::string to_string(LambdaKind k) { return kLambdaNames[int(k)]; }

LambdaKind lambda_from_string(const std::string& s) {
    for (int i = 0; i < 4; ++i)
        if (s == kLambdaNames[i]) return LambdaKind(i);
    throw std::invalid_argument("unknown crossing domain '" + s + "'");
}

Box CrossingDomain::outer() const {
    switch (kind) {
    case LambdaKind::Ball:
    case LambdaKind::PuncturedBall: return Box::ball(origin(d), N);
    case LambdaKind::Annulus: return Box::ball(origin(d), 2 * N);
    case LambdaKind::BoxAnnulus: return Box::cube(origin(d), -2 * N, 3 * N);
    }
    return {};
}

Box CrossingDomain::inner() const {
    switch (kind) {
    case LambdaKind::Ball: return Box::ball(origin(d), 0);
    case LambdaKind::Annulus: return Box::ball(origin(d), N);
    case LambdaKind::BoxAnnulus: return Box::cube(origin(d), -N, 2 * N);
    case LambdaKind::PuncturedBall: return Box::ball(origin(d), int(std::floor(eps * N)));
    }
    return {};
}

bool CrossingDomain::contains(const Point& x) const {
    if (!outer().contains(x)) return false;
    return kind == LambdaKind::Ball || !inner().contains(x);
}

bool CrossingDomain::contains(const Box& b) const {
    if (!outer().contains(b)) return false;
    return kind == LambdaKind::Ball || b.intersect(inner()).empty();
}

std::string CrossingDomain::describe() const {
    std::ostringstream os;
    os << to_string(kind) << "(d=" << d << ",N=" << N;
    if (kind == LambdaKind::PuncturedBall) os << ",eps=" << eps;
    os << ')';
    return os.str();
}

std::optional<std::pair<std::size_t, std::size_t>> crossing_segment(const LatticePath& path,
                                                                    const CrossingDomain& dom) {
    const Box in = dom.inner(), out = dom.outer();
    const auto& p = path.pts;
    auto is_in = [&](std::size_t i) { return in.contains(p[i]); };
    auto is_out = [&](std::size_t i) { return out.on_boundary(p[i]); };
    std::size_t a = 0;
    while (a < p.size() && !is_in(a) && !is_out(a)) ++a;
    if (a == p.size()) return std::nullopt;
    const bool forward = is_in(a);
    std::size_t b = a + 1;
    while (b < p.size() && !(forward ? is_out(b) : is_in(b))) ++b;
    if (b >= p.size()) return std::nullopt;
    if (forward) {
        std::size_t s = b;
        while (!is_in(s)) --s;
        return std::make_pair(s, b);
    }
    // Run backwards from b to the last visit of the outer boundary before it.
    std::size_t e = b;
    while (!is_out(e)) --e;
    return std::make_pair(b, e);
}

void CGParams::validate() const {
    std::vector<std::string> errs;
    if (d < 3 || d > kMaxDim) errs.push_back("d must be in [3, " + std::to_string(kMaxDim) + "]");
    if (L < 1) errs.push_back("L must be >= 1");
    if (relaxed) {
        if (K < 4) errs.push_back("K must be >= 4 in relaxed mode");
    } else if (K < 100) {
        errs.push_back("K must be >= 100 (use relaxed mode for K >= 4)");
    }
    if (std::int64_t(N) < 10LL * K * L) errs.push_back("N must be >= 10 K L");
    if (!(rho > 0 && rho < 1)) errs.push_back("rho must be in (0, 1)");
    if (domain.kind == LambdaKind::PuncturedBall && !(domain.eps > 0 && domain.eps < 1.0 / 3))
        errs.push_back("eps must be in (0, 1/3)");
    if (!errs.empty()) {
        std::string msg = "invalid coarse-graining parameters:";
        for (const auto& e : errs) msg += "\n  - " + e;
        throw std::invalid_argument(msg);
    }
}

CrossingDomain CGParams::lambda() const {
    CrossingDomain c = domain;
    c.d = d;
    c.N = N;
    return c;
}

std::string CGParams::label() const {
    std::ostringstream os;
    os << "d=" << d << " K=" << K << " L=" << L << " N=" << N << " rho=" << rho << ' ' << lambda().describe();
    if (relaxed) os << " [relaxed]";
    return os.str();
}

int shape_scale(int m) {
    static const std::vector<int> table = [] {
        std::vector<int> t{1};
        for (int j = 0; j < 40; ++j) {
            const double next = std::ceil(2.0 * (1.0 + shape_eps(j)) * t.back() - 1e-9);
            if (next > 1e9) break;
            t.push_back(int(next));
        }
        return t;
    }();
    if (m < 0 || m >= int(table.size())) throw std::out_of_range("shape_scale: level out of range");
    return table[m];
}

double shape_eps(int m) { return 1.0 / double((m + 1) * (m + 1)); }

Box ShapeNode::Ctilde() const {
    const int l = shape_scale(level);
    return Box::cube(anchor, -l, 2 * l);
}

Box ShapeNode::Chat() const {
    const int l = shape_scale(level), lm = shape_scale(level - 1);
    return Box::cube(anchor, -l + lm, 2 * l - lm);
}

double cardinality_unit(int d, int K, int L) {
    const double x = double(K) * L;
    if (d == 3) return x;
    const double lg = std::log(x);
    return x * lg * lg;
}

std::string AdmissibleCollection::id() const {
    std::ostringstream os;
    os << params.label() << '|' << scheme;
    for (const auto& p : z) os << '|' << to_string(p);
    return sha256_hex(os.str()).substr(0, 16);
}

namespace {

// Radius of the i-th enclosed set of the d = 3 shells.
Box shell_box(const CGParams& p, int i) {
    const int s = 3 * p.K * p.L * i;
    const int d = p.d;
    switch (p.domain.kind) {
    case LambdaKind::Ball: return Box::ball(origin(d), s);
    case LambdaKind::Annulus: return Box::ball(origin(d), p.N + s);
    case LambdaKind::BoxAnnulus: return Box::cube(origin(d), -s - p.N, 2 * p.N + s);
    case LambdaKind::PuncturedBall: return Box::ball(origin(d), int(std::ceil(p.domain.eps * p.N)) + s);
    }
    return {};
}

int shell_count(const CGParams& p) {
    const int unit = 3 * p.K * p.L;
    if (p.domain.kind == LambdaKind::PuncturedBall)
        return int(std::floor((1.0 - p.domain.eps) * p.N / unit)) - 1;
    return p.N / unit - 1;
}

// Axis position of the porous-line box of shell i.
int porous_anchor(const CGParams& p, int i) {
    const int s = 3 * p.K * p.L * i;
    switch (p.domain.kind) {
    case LambdaKind::Ball: return s;
    case LambdaKind::Annulus: return p.N + s;
    case LambdaKind::BoxAnnulus: return 2 * p.N + s - 1;
    case LambdaKind::PuncturedBall: return int(std::ceil(p.domain.eps * p.N)) + s;
    }
    return 0;
}

// 1-Lipschitz gauge whose level sets are the shells.
double shell_gauge(const CGParams& p, const Point& z) {
    double m = 0;
    if (p.domain.kind == LambdaKind::BoxAnnulus) {
        const double c = 0.5 * (p.N - 1);
        for (int i = 0; i < p.d; ++i) m = std::max(m, std::abs(z.c[i] - c));
        return m + 0.5 * (p.N - 1);
    }
    for (int i = 0; i < p.d; ++i) m = std::max(m, double(std::abs(z.c[i])));
    return m;
}

}  // namespace

AdmissibleCollection coarse_grain_d3(const LatticePath& path, const CGParams& p, std::uint64_t path_id) {
    p.validate();
    const auto dom = p.lambda();
    const auto segr = crossing_segment(path, dom);
    if (!segr) throw std::invalid_argument("coarse_grain_d3: path does not cross " + dom.describe());
    const auto seg = oriented(path, *segr);
    const RenormLattice lat = p.lattice();
    AdmissibleCollection c;
    c.params = p;
    c.params.domain = dom;
    c.scheme = "shells";
    c.path_id = path_id;
    c.segment = *segr;
    const int n = shell_count(p);
    if (n < 1) throw std::invalid_argument("coarse_grain_d3: no shells fit in " + dom.describe());
    std::size_t j = 0;
    for (int i = 1; i <= n; ++i) {
        const Box E = shell_box(p, i);
        while (j < seg.size() && !E.on_boundary(seg[j])) ++j;
        if (j == seg.size()) throw std::logic_error("coarse_grain_d3: crossing segment misses a shell");
        const Point z = lat.anchor(seg[j]);
        const auto cr = induced(seg, j, seg.size() - 1, lat.C(z), lat.Dtilde(z));
        if (!cr) throw std::logic_error("coarse_grain_d3: no crossing of Dtilde_z \\ C_z");
        c.z.push_back(z);
        c.crossing.push_back(*cr);
        c.tau.push_back(shell_gauge(p, z));
        c.gamma_budget += std::log(boxes_meeting_boundary(E, p.L));
    }
    const double r = double(p.N) / p.L;
    c.gamma_constant = c.gamma_budget / (r * std::log(std::max(r, 2.0)) / p.K);
    return c;
}

ShapeLevels shape_levels(int N, int K, int L) {
    ShapeLevels s;
    for (int m = 0;; ++m) {
        if (10LL * shape_scale(m) > N) break;
        s.n0 = m;
    }
    for (int m = 0;; ++m)
        if (shape_scale(m) >= 5 * L) {
            s.k0 = m;
            break;
        }
    const double target = 2.0 * K * L + 3.0 * L;
    for (int m = 0;; ++m)
        if (2.0 * shape_eps(m) * shape_scale(m) >= target) {
            s.k = std::max(m + 1, s.k0);
            break;
        }
    return s;
}

namespace {

struct ShapeBuilder {
    const std::vector<Point>& seg;
    ShapeTree tree;
    int d;

    // Region chain test: x in every ancestor's Ctilde \ C^-, and outside the
    // interior of Chat of the parent for T_2 children.
    bool in_region(int node, const Point& x) const {
        for (int v = node; v != -1; v = tree.nodes[v].parent) {
            const auto& nd = tree.nodes[v];
            if (!nd.Ctilde().contains(x)) return false;
            if (interior(nd.C()).contains(x)) return false;
            if (nd.parent != -1 && tree.nodes[nd.parent].child[1] == v &&
                interior(tree.nodes[nd.parent].Chat()).contains(x))
                return false;
        }
        return true;
    }

    int add(int parent, int level, const Point& anchor, std::pair<std::size_t, std::size_t> w) {
        ShapeNode nd;
        nd.level = level;
        nd.anchor = anchor;
        nd.first = w.first;
        nd.last = w.second;
        nd.parent = parent;
        tree.nodes.push_back(nd);
        return int(tree.nodes.size()) - 1;
    }

    Point t1_anchor(const ShapeNode& nd, const Point& x) const {
        const int l = shape_scale(nd.level), lm = shape_scale(nd.level - 1);
        const int cand[3] = {0, lm, l - lm};
        Point w = nd.anchor;
        for (int i = 0; i < d; ++i) {
            const int o = x.c[i] - nd.anchor.c[i];
            for (int a : cand)
                if (o >= a && o < a + lm) {
                    w.c[i] = nd.anchor.c[i] + a;
                    break;
                }
        }
        return w;
    }

    Point t2_anchor(const ShapeNode& nd, const Point& x) const {
        const Box H = nd.Chat();
        const int lm = shape_scale(nd.level - 1);
        Point w = x;
        for (int i = 0; i < d; ++i) {
            const int W = H.extent(i);
            const int o = x.c[i] - H.lo[i];
            w.c[i] = H.lo[i] + std::min((o / lm) * lm, W - lm);
        }
        return w;
    }

    void split(int v, bool both) {
        const ShapeNode nd = tree.nodes[v];
        const int lm = shape_scale(nd.level - 1);
        const Point z1 = t1_anchor(nd, seg[nd.first]);
        const auto w1 = induced(seg, nd.first, nd.last, Box::cube(z1, 0, lm), Box::cube(z1, -lm, 2 * lm));
        if (!w1) throw std::logic_error("coarse_grain_d4: T1 sub-crossing missing at level " +
                                        std::to_string(nd.level));
        const int c1 = add(v, nd.level - 1, z1, *w1);
        tree.nodes[v].child[0] = c1;
        if (!both) return;
        const Box H = nd.Chat();
        std::size_t t = nd.last;
        while (!H.contains(seg[t])) --t;
        const Point z2 = t2_anchor(nd, seg[t]);
        const auto w2 = induced(seg, t, nd.last, Box::cube(z2, 0, lm), Box::cube(z2, -lm, 2 * lm));
        if (!w2) throw std::logic_error("coarse_grain_d4: T2 sub-crossing missing at level " +
                                        std::to_string(nd.level));
        const int c2 = add(v, nd.level - 1, z2, *w2);
        tree.nodes[v].child[1] = c2;
        tree.nodes[v].separation = margin_to_outside(Box::cube(z1, -lm, 2 * lm), H);
    }

    // Full binary recursion down to level k, T_1 chains below.
    void build(int root, int k, int k0) {
        std::vector<int> stack{root};
        std::vector<int> level_k;
        while (!stack.empty()) {
            const int v = stack.back();
            stack.pop_back();
            const int lev = tree.nodes[v].level;
            if (lev == k) level_k.push_back(v);
            if (lev == k0) continue;
            split(v, lev > k);
            const auto& nd = tree.nodes[v];
            if (nd.child[1] != -1) stack.push_back(nd.child[1]);
            stack.push_back(nd.child[0]);
        }
        for (int v : level_k) {
            int u = v;
            while (tree.nodes[u].level > k0) u = tree.nodes[u].child[0];
            tree.leaves.push_back(u);
        }
    }
};

// log |T_1| + log |T_2| at level n (children at n - 1).
double split_entropy(int d, int n) {
    const int l = shape_scale(n), lm = shape_scale(n - 1);
    const double t1 = std::pow(3.0, d) - 1.0;
    const int W = 3 * l - 2 * lm;
    const int m = (W + lm - 1) / lm;
    const double t2 = std::pow(double(m), d) - std::pow(double(std::max(0, m - 2)), d);
    return std::log(t1) + std::log(t2);
}

PointSet materialize(const ShapeBuilder& b, int node) {
    const auto& nd = b.tree.nodes[node];
    const Box box = nd.Ctilde();
    std::vector<char> seen(static_cast<std::size_t>(box.volume()), 0);
    std::deque<Point> q;
    std::vector<Point> out;
    for (std::size_t t = nd.first; t <= nd.last; ++t) {
        const Point& x = b.seg[t];
        const auto i = box.index(x);
        if (seen[i] || !b.in_region(node, x)) continue;
        seen[i] = 1;
        q.push_back(x);
    }
    const auto& star = neighbour_offsets(box.d, Adjacency::Star);
    while (!q.empty()) {
        const Point x = q.front();
        q.pop_front();
        out.push_back(x);
        for (const auto& o : star) {
            const Point y = x + o;
            if (!box.contains(y)) continue;
            const auto j = box.index(y);
            if (seen[j] || !b.in_region(node, y)) continue;
            seen[j] = 1;
            q.push_back(y);
        }
    }
    return PointSet(std::move(out));
}

}  // namespace

AdmissibleCollection coarse_grain_d4(const LatticePath& path, const CGParams& p, std::uint64_t path_id,
                                     const D4Options& opts) {
    p.validate();
    if (p.d < 4) throw std::invalid_argument("coarse_grain_d4: d >= 4 required");
    const auto dom = p.lambda();
    const auto segr = crossing_segment(path, dom);
    if (!segr) throw std::invalid_argument("coarse_grain_d4: path does not cross " + dom.describe());
    const auto lv = shape_levels(p.N, p.K, p.L);
    if (lv.n0 < lv.k)
        throw std::invalid_argument("coarse_grain_d4: N too small for the scale hierarchy (n0=" +
                                    std::to_string(lv.n0) + " < k=" + std::to_string(lv.k) + ")");
    if (lv.n0 - lv.k > opts.max_tree_depth)
        throw std::length_error("coarse_grain_d4: recursion depth n0 - k = " + std::to_string(lv.n0 - lv.k) +
                                " exceeds the cap " + std::to_string(opts.max_tree_depth) + " (level reached " +
                                std::to_string(lv.n0 - opts.max_tree_depth) + ")");

    // The punctured ball is coarse-grained as B_N \ B_{N/2}.
    std::vector<Point> seg;
    std::pair<std::size_t, std::size_t> used = *segr;
    CrossingDomain work = dom;
    if (dom.kind == LambdaKind::PuncturedBall) {
        work.eps = 0.5;
        const auto s2 = crossing_segment(path, work);
        if (!s2) throw std::logic_error("coarse_grain_d4: punctured crossing lost");
        used = *s2;
    }
    seg = oriented(path, used);

    // Entry point on the mid-shell.
    const int d = p.d, N = p.N;
    std::size_t j0 = 0;
    Box mid;
    bool has_mid = true;
    switch (dom.kind) {
    case LambdaKind::Ball: has_mid = false; break;
    case LambdaKind::Annulus: mid = Box::ball(origin(d), 3 * N / 2); break;
    case LambdaKind::BoxAnnulus: mid = Box::cube(origin(d), -(3 * N) / 2, (5 * N) / 2); break;
    case LambdaKind::PuncturedBall: mid = Box::ball(origin(d), 3 * N / 4); break;
    }
    if (has_mid)
        while (j0 < seg.size() && !mid.on_boundary(seg[j0])) ++j0;
    if (j0 == seg.size()) throw std::logic_error("coarse_grain_d4: mid-shell not reached");

    const int Ln0 = shape_scale(lv.n0);
    const Point root_anchor = scale_anchor(seg[j0], Ln0);
    const auto rw = induced(seg, j0, seg.size() - 1, Box::cube(root_anchor, 0, Ln0),
                            Box::cube(root_anchor, -Ln0, 2 * Ln0));
    if (!rw) throw std::logic_error("coarse_grain_d4: root crossing missing");

    ShapeBuilder b{seg, {}, d};
    b.tree.n0 = lv.n0;
    b.tree.k = lv.k;
    b.tree.k0 = lv.k0;
    const int root = b.add(-1, lv.n0, root_anchor, *rw);
    b.build(root, lv.k, lv.k0);
    for (std::size_t v = 0; v < b.tree.nodes.size(); ++v)
        if (b.tree.nodes[v].Ctilde().volume() <= opts.materialize_limit)
            b.tree.nodes[v].points = materialize(b, int(v));

    // Entropy: recursion bound, root choices, leaf-box choices.
    double logA = 0;
    for (int m = lv.k0 + 1; m <= lv.n0; ++m) logA = split_entropy(d, m) + 2.0 * logA;
    const double roots = has_mid ? boxes_meeting_boundary(mid, Ln0) : 1.0;
    const int leaves = 1 << (lv.n0 - lv.k);
    const double ychoices = d * std::log(3.0 * shape_scale(lv.k0) / p.L + 2.0);
    b.tree.log_family_bound = logA;

    AdmissibleCollection c;
    c.params = p;
    c.params.domain = dom;
    c.scheme = "shapes";
    c.path_id = path_id;
    c.segment = used;
    const RenormLattice lat = p.lattice();
    for (int leaf : b.tree.leaves) {
        const auto& nd = b.tree.nodes[leaf];
        const Point y = lat.anchor(seg[nd.first]);
        const auto cr = induced(seg, nd.first, seg.size() - 1, lat.C(y), lat.Dtilde(y));
        if (!cr) throw std::logic_error("coarse_grain_d4: leaf box not crossed");
        c.z.push_back(y);
        c.crossing.push_back(*cr);
    }
    c.gamma_budget = logA + std::log(roots) + leaves * ychoices;
    c.gamma_constant = c.gamma_budget / (double(N) / p.L);
    c.tree = std::move(b.tree);
    return c;
}

AdmissibleCollection coarse_grain(const LatticePath& path, const CGParams& p, std::uint64_t path_id) {
    return p.d == 3 ? coarse_grain_d3(path, p, path_id) : coarse_grain_d4(path, p, path_id);
}

PointSet materialize_shape(const AdmissibleCollection& c, int node, const LatticePath& path) {
    if (!c.tree) throw std::invalid_argument("materialize_shape: collection has no shape tree");
    const auto seg = oriented(path, c.segment);
    const ShapeBuilder b{seg, *c.tree, c.params.d};
    return materialize(b, node);
}

AdmissibilityReport verify_collection(const AdmissibleCollection& c, const LatticePath& path) {
    AdmissibilityReport rep;
    std::ostringstream msg;
    const auto& p = c.params;
    const auto dom = p.lambda();
    const RenormLattice lat = p.lattice();
    const auto seg = oriented(path, c.segment);
    const int n = c.n();

    rep.separation = true;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j)
            if (sup_dist(c.z[i], c.z[j]) < lat.separation()) {
                rep.separation = false;
                msg << "separation " << to_string(c.z[i]) << ' ' << to_string(c.z[j]) << "; ";
            }

    rep.inclusion = std::all_of(c.z.begin(), c.z.end(), [&](const Point& z) { return dom.contains(lat.Dtilde(z)); });
    if (!rep.inclusion) msg << "Dtilde_z not inside " << dom.describe() << "; ";

    const double u = cardinality_unit(p.d, p.K, p.L);
    rep.c_nLB = n * u / p.N;
    rep.cardinality = n >= 1 && n <= p.N / u + 1e-9;
    if (!rep.cardinality) msg << "cardinality " << n << " outside [1, " << p.N / u << "]; ";

    rep.crossing = LatticePath{seg, Adjacency::Star}.valid() && c.crossing.size() == c.z.size();
    for (int i = 0; rep.crossing && i < n; ++i) {
        const auto [s, e] = c.crossing[i];
        const Box C = lat.C(c.z[i]), Dt = lat.Dtilde(c.z[i]);
        bool ok = s <= e && e < seg.size() && C.contains(seg[s]) && Dt.on_boundary(seg[e]);
        for (std::size_t t = s; ok && t <= e; ++t) ok = Dt.contains(seg[t]);
        if (!ok) {
            rep.crossing = false;
            msg << "no crossing of Dtilde_z \\ C_z at " << to_string(c.z[i]) << "; ";
        }
    }

    if (c.scheme == "shells") {
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j)
                if (std::abs(c.tau[i] - c.tau[j]) > euclid_norm(c.z[i] - c.z[j]) + 1e-9) {
                    rep.lipschitz = false;
                    msg << "projection not 1-Lipschitz at " << i << ',' << j << "; ";
                }
    }

    if (c.tree) {
        const ShapeBuilder b{seg, *c.tree, p.d};
        const auto& nodes = c.tree->nodes;
        for (std::size_t v = 0; v < nodes.size(); ++v) {
            const auto& nd = nodes[v];
            const Box C = nd.C(), Ct = nd.Ctilde();
            bool ok = nd.first <= nd.last && nd.last < seg.size() && C.on_boundary(seg[nd.first]) &&
                      Ct.on_boundary(seg[nd.last]);
            for (std::size_t t = nd.first; ok && t <= nd.last; ++t)
                ok = b.in_region(int(v), seg[t]) && (t == nd.first || !C.contains(seg[t]));
            for (int ch : nd.child)
                if (ch != -1)
                    ok = ok && nodes[ch].first >= nd.first && nodes[ch].last <= nd.last &&
                         nodes[ch].level == nd.level - 1;
            if (nd.child[1] != -1) {
                const double need = 2.0 * shape_eps(nd.level - 1) * shape_scale(nd.level - 1);
                ok = ok && nd.separation + 1e-9 >= need;
                const auto& c1 = nodes[nd.child[0]];
                const auto& c2 = nodes[nd.child[1]];
                for (std::size_t t = c2.first; ok && t <= c2.last; ++t)
                    ok = dist_to_box(seg[t], c1.Ctilde()) >= nd.separation;
            }
            if (nd.points) {
                const auto& S = *nd.points;
                bool meetC = false, meetCt = false;
                for (const auto& x : S) {
                    meetC = meetC || C.on_boundary(x);
                    meetCt = meetCt || Ct.on_boundary(x);
                    ok = ok && b.in_region(int(v), x);
                }
                for (std::size_t t = nd.first; ok && t <= nd.last; ++t) ok = S.contains(seg[t]);
                ok = ok && meetC && meetCt && is_connected(S, Adjacency::Star);
            }
            if (!ok) {
                rep.shapes = false;
                msg << "shape node " << v << " (level " << nd.level << ") fails; ";
            }
        }
        if (int(c.tree->leaves.size()) != (1 << (c.tree->n0 - c.tree->k))) {
            rep.shapes = false;
            msg << "leaf count " << c.tree->leaves.size() << "; ";
        }
    }
    rep.message = msg.str();
    return rep;
}

PorousProjection porous_projection(const AdmissibleCollection& c, double rho, const GreenOracle& g) {
    const auto& p = c.params;
    if (p.d != 3 || c.scheme != "shells") throw std::invalid_argument("porous_projection: d = 3 shells only");
    PorousProjection out;
    const int n = c.n();
    out.kept = std::min(n, int(std::ceil((1.0 - rho) * n - 1e-12)));
    for (int i = 1; i <= out.kept; ++i) {
        const int a = porous_anchor(p, i);
        for (int t = 0; t < p.L; ++t) out.positions.push_back(a + t);
    }
    std::vector<int> shifted = out.positions;
    for (auto& x : shifted) x -= out.positions.front();
    out.line_length =
        p.domain.kind == LambdaKind::PuncturedBall ? int(std::floor((1.0 - p.domain.eps) * p.N)) : p.N;
    out.cap_line = line_capacity_fast(out.line_length, g).report.value;
    out.cap_porous = line_subset_capacity(shifted, g).report.value;
    out.porous_ratio = out.cap_porous / out.cap_line;
    const std::vector<Point> anchors(c.z.begin(), c.z.begin() + out.kept);
    const auto ub = union_capacity_bounds(anchors, p.L, g);
    out.sigma_lower = ub.lower;
    out.sigma_upper = ub.upper;
    out.sigma_ratio = ub.lower / out.cap_line;
    return out;
}

namespace {

// One step of a walk drifting away from the doubled center c2 in sup-norm.
Point drift_step(const Point& x, int c2, double drift, RandomStream& rs) {
    const int d = x.d;
    if (rs.uniform() >= drift) {
        const auto& star = neighbour_offsets(d, Adjacency::Star);
        return star[rs.below(std::uint32_t(star.size()))];
    }
    Point step = Point::zero(d);
    int m = 0;
    for (int i = 0; i < d; ++i) m = std::max(m, std::abs(2 * x.c[i] - c2));
    for (int i = 0; i < d; ++i) {
        const int v = 2 * x.c[i] - c2;
        if (std::abs(v) == m)
            step.c[i] = v > 0 ? 1 : v < 0 ? -1 : (rs.below(2) ? 1 : -1);
        else
            step.c[i] = int(rs.below(3)) - 1;
    }
    return step;
}

// Capacity of a union of boxes. Spread-out unions use a pairwise Gram on the
// inner boundary with the far-field Green function beyond sup-distance 24.
double cap_of_boxes(const std::vector<Box>& boxes, const GreenOracle& g) {
    std::vector<Point> pts;
    for (const auto& b : boxes)
        for (std::int64_t i = 0; i < b.volume(); ++i) pts.push_back(b.point(i));
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    PointSet K(std::move(pts));
    if (K.bbox().volume() <= (std::int64_t(1) << 18)) return capacity(K, kFree, g).value;
    std::vector<Point> B;
    const auto& nn = neighbour_offsets(K.dim(), Adjacency::Nearest);
    for (const auto& x : K)
        if (std::any_of(nn.begin(), nn.end(), [&](const Point& o) { return !K.contains(x + o); })) B.push_back(x);
    const Eigen::Index n = Eigen::Index(B.size());
    Eigen::MatrixXd G(n, n);
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j <= i; ++j) G(i, j) = G(j, i) = g.approx(B[i] - B[j]);
    Eigen::LLT<Eigen::MatrixXd> llt(G);
    if (llt.info() != Eigen::Success) throw std::runtime_error("cap_of_boxes: Gram not positive definite");
    return llt.solve(Eigen::VectorXd::Ones(n)).sum();
}

}  // namespace

LatticePath random_crossing_path(const CrossingDomain& dom, std::uint64_t seed, std::uint32_t replica,
                                 double drift) {
    RandomStream rs(seed, replica, Purpose::Path);
    const int d = dom.d;
    const Box in = dom.inner(), out = dom.outer();
    Point x = Point::zero(d);
    for (int i = 0; i < d; ++i) x.c[i] = in.lo[i] + int(rs.below(std::uint32_t(in.extent(i))));
    const int c2 = dom.kind == LambdaKind::BoxAnnulus ? dom.N - 1 : 0;
    LatticePath path;
    path.adj = Adjacency::Star;
    path.pts.push_back(x);
    const std::int64_t max_steps = 400LL * dom.N * d + 1000;
    while (!out.on_boundary(x)) {
        if (std::int64_t(path.pts.size()) > max_steps)
            throw std::runtime_error("random_crossing_path: step limit reached");
        x = x + drift_step(x, c2, drift, rs);
        path.pts.push_back(x);
    }
    return path;
}

KappaReport kappa_check(int n, int k, int instances, std::uint64_t seed, const GreenOracle& g, int d) {
    if (k < 1 || n < k || n - k > 6) throw std::invalid_argument("kappa_check: need 1 <= k <= n <= k + 6");
    if (g.dim() != d) throw std::invalid_argument("kappa_check: Green oracle dimension mismatch");
    KappaReport rep;
    rep.n = n;
    rep.k = k;
    rep.instances = instances;
    const int Lk = shape_scale(k), Ln = shape_scale(n);
    const int r = std::max(1, int(std::floor(shape_eps(k) * Lk / 2.0)));
    rep.kappa_kk = cap_of_boxes({Box::cube(Point::zero(d), 0, r)}, g);
    rep.kappa_hat = std::numeric_limits<double>::infinity();
    const Box C = Box::cube(Point::zero(d), 0, Ln), Ct = Box::cube(Point::zero(d), -Ln, 2 * Ln);
    const double sep = std::pow(shape_eps(k) * Lk, d - 2);
    for (int inst = 0; inst < instances; ++inst) {
        RandomStream rs(seed, std::uint32_t(inst), Purpose::Path);
        // Start on a random face of C, drift away from its center.
        Point x = Point::zero(d);
        for (int i = 0; i < d; ++i) x.c[i] = int(rs.below(std::uint32_t(Ln)));
        x.c[rs.below(std::uint32_t(d))] = rs.below(2) ? Ln - 1 : 0;
        std::vector<Point> seg{x};
        while (!Ct.on_boundary(x)) {
            x = x + drift_step(x, Ln - 1, 0.5, rs);
            seg.push_back(x);
        }
        const auto w = induced(seg, 0, seg.size() - 1, C, Ct);
        if (!w) throw std::logic_error("kappa_check: walk does not cross");
        ShapeBuilder b{seg, {}, d};
        const int root = b.add(-1, n, Point::zero(d), *w);
        b.build(root, k, k);
        std::vector<Box> boxes;
        for (int leaf : b.tree.leaves) boxes.push_back(Box::cube(seg[b.tree.nodes[leaf].first], 0, r));
        const int m = int(boxes.size());

        std::vector<std::vector<int>> subsets;
        std::vector<int> all(m);
        std::iota(all.begin(), all.end(), 0);
        subsets.push_back(all);
        for (int i = 0; i < m; ++i) subsets.push_back({i});
        if (m > 1) {
            subsets.emplace_back(all.begin(), all.begin() + m / 2);
            subsets.emplace_back(all.begin() + m / 2, all.end());
            for (int i = 0; i < m; ++i) {
                auto rest = all;
                rest.erase(rest.begin() + i);
                subsets.push_back(rest);
            }
            RandomStream sub(seed, std::uint32_t(inst), Purpose::Misc);
            for (int t = 0; t < 4; ++t) {
                auto perm = all;
                for (int i = m - 1; i > 0; --i) std::swap(perm[i], perm[sub.below(std::uint32_t(i + 1))]);
                perm.resize((m + 1) / 2);
                subsets.push_back(perm);
            }
        }
        double best = std::numeric_limits<double>::infinity();
        for (const auto& s : subsets) {
            std::vector<Box> bs;
            for (int i : s) bs.push_back(boxes[i]);
            best = std::min(best, cap_of_boxes(bs, g) * m / double(s.size()));
        }
        rep.per_instance.push_back(best);
        rep.kappa_hat = std::min(rep.kappa_hat, best);

        // Two-leaf inequality at the level-(k+1) nodes.
        for (const auto& nd : b.tree.nodes) {
            if (nd.level != k + 1 || nd.child[1] == -1) continue;
            auto leaf_box = [&](int ch) { return Box::cube(seg[b.tree.nodes[ch].first], 0, r); };
            const Box b1 = leaf_box(nd.child[0]), b2 = leaf_box(nd.child[1]);
            const double c1 = cap_of_boxes({b1}, g), c2 = cap_of_boxes({b2}, g), cu = cap_of_boxes({b1, b2}, g);
            rep.two_leaf_C = std::max(rep.two_leaf_C, ((c1 + c2) / cu - 1.0) * sep / std::max(c1, c2));
        }
    }
    double lb = rep.kappa_kk;
    for (int m = k; m < n; ++m) {
        const double p2 = std::ldexp(1.0, m + 1);
        lb = std::min(p2, 2.0 * lb / (1.0 + rep.two_leaf_C * p2 / std::pow(shape_eps(m) * shape_scale(m), d - 2)));
    }
    rep.lower_bound = lb;
    rep.c_fit = rep.kappa_hat / (std::ldexp(1.0, n - k) * rep.kappa_kk);
    rep.dominates = rep.kappa_hat >= lb * (1 - 1e-9);
    return rep;
}

BadnessReport classify_badness(const FieldSample& f, const AdmissibleCollection& c, double h, double h_prime,
                               double eps, double rho) {
    if (!(h > h_prime) || !(eps > 0 && eps < h - h_prime))
        throw std::invalid_argument("classify_badness: need h > h' and eps in (0, h - h')");
    BadnessReport r;
    r.collection_id = c.id();
    r.h = h;
    r.h_prime = h_prime;
    r.eps = eps;
    r.rho = rho;
    const RenormLattice lat = c.params.lattice();
    const double psi_level = h_prime + eps / 4, xi_level = h - h_prime - eps / 4;
    const auto& nn = neighbour_offsets(f.dim(), Adjacency::Nearest);
    for (const auto& z : c.z) {
        const Box U = lat.U(z);
        if (!f.box.contains(U.expanded(1)))
            throw std::invalid_argument("classify_badness: U_z of " + to_string(z) + " leaves the sample box");
        const auto rec = harmonic_decompose(f, U);
        const Box Cz = lat.C(z), Ct = lat.Ctilde(z);
        // nn-crossing of {psi^z >= h' + eps/4} from C_z to the boundary of Ctilde_z
        std::vector<char> seen(static_cast<std::size_t>(Ct.volume()), 0);
        std::deque<Point> q;
        for (std::int64_t i = 0; i < Cz.volume(); ++i) {
            const Point x = Cz.point(i);
            if (rec.psi_at(x) >= psi_level) {
                seen[Ct.index(x)] = 1;
                q.push_back(x);
            }
        }
        bool psi_bad = false;
        while (!q.empty() && !psi_bad) {
            const Point x = q.front();
            q.pop_front();
            psi_bad = Ct.on_boundary(x);
            for (const auto& o : nn) {
                const Point y = x + o;
                if (!Ct.contains(y) || seen[Ct.index(y)] || rec.psi_at(y) < psi_level) continue;
                seen[Ct.index(y)] = 1;
                q.push_back(y);
            }
        }
        const double xs = harmonic_sup(rec, lat.D(z), false);
        r.z.push_back(z);
        r.psi_bad.push_back(psi_bad);
        r.xi_bad.push_back(xs >= xi_level);
        r.xi_sup.push_back(xs);
        r.psi_count += psi_bad;
        r.xi_count += xs >= xi_level;
    }
    const int n = int(r.z.size());
    const int need = int(std::ceil(rho * n - 1e-12));
    r.E = r.psi_count >= need;
    r.F = r.xi_count >= n - need;
    return r;
}

void write_badness_csv_header(std::ostream& os) {
    os << "collection,replica,seed,h,h_prime,eps,rho,site,z,psi_bad,xi_bad,xi_sup,E,F\n";
}

void write_badness_csv(std::ostream& os, const BadnessReport& r, std::uint32_t replica, std::uint64_t seed) {
    for (std::size_t i = 0; i < r.z.size(); ++i)
        os << r.collection_id << ',' << replica << ',' << seed << ',' << r.h << ',' << r.h_prime << ',' << r.eps
           << ',' << r.rho << ',' << i << ",\"" << to_string(r.z[i]) << "\"," << int(r.psi_bad[i]) << ','
           << int(r.xi_bad[i]) << ',' << r.xi_sup[i] << ',' << int(r.E) << ',' << int(r.F) << '\n';
}

std::vector<double> collection_xi_sups(const FieldSample& f, const std::vector<Point>& anchors,
                                       const RenormLattice& lat) {
    std::vector<double> out;
    out.reserve(anchors.size());
    for (const auto& z : anchors) out.push_back(harmonic_sup(harmonic_decompose(f, lat.U(z)), lat.D(z), false));
    return out;
}

std::vector<TailEstimate> harmonic_collection_tail(const std::vector<std::vector<double>>& sups,
                                                   const std::vector<Point>& anchors, const RenormLattice& lat,
                                                   const std::vector<double>& levels, const GreenOracle& g,
                                                   double c_btis) {
    for (std::size_t i = 0; i < anchors.size(); ++i)
        for (std::size_t j = i + 1; j < anchors.size(); ++j)
            if (sup_dist(anchors[i], anchors[j]) < lat.separation())
                throw std::invalid_argument("harmonic_collection_tail: collection not separated");
    std::vector<Box> boxes;
    for (const auto& z : anchors) boxes.push_back(lat.C(z));
    const double cap = cap_of_boxes(boxes, g);
    const double slack = c_btis / lat.K * std::sqrt(double(anchors.size()) / cap);
    std::vector<TailEstimate> out;
    for (double a : levels) {
        TailEstimate t;
        t.a = a;
        t.n = std::int64_t(sups.size());
        for (const auto& s : sups)
            if (*std::min_element(s.begin(), s.end()) >= a) ++t.hits;
        const auto w = wilson(t.hits, t.n);
        t.p_hat = w.p;
        t.ci_lo = w.ci_lo;
        t.ci_hi = w.ci_hi;
        t.one_sided = t.hits == 0;
        t.log_p = std::log(t.one_sided ? w.ci_hi : t.p_hat);
        t.cap_sigma = cap;
        t.slack = slack;
        const double gap = std::max(0.0, a - slack);
        t.bound_exponent = gap * gap * cap / 2.0;
        t.alpha_hat = t.log_p < 0 ? t.bound_exponent / -t.log_p : std::numeric_limits<double>::infinity();
        out.push_back(t);
    }
    return out;
}

std::vector<TailEstimate> harmonic_collection_tail(const std::vector<FieldSample>& samples,
                                                   const std::vector<Point>& anchors, const RenormLattice& lat,
                                                   const std::vector<double>& levels, const GreenOracle& g,
                                                   double c_btis) {
    std::vector<std::vector<double>> sups;
    sups.reserve(samples.size());
    for (const auto& f : samples) sups.push_back(collection_xi_sups(f, anchors, lat));
    return harmonic_collection_tail(sups, anchors, lat, levels, g, c_btis);
}

std::string to_json(const AdmissibleCollection& c, const AdmissibilityReport* rep) {
    nlohmann::json j;
    const auto& p = c.params;
    j["schema"] = "gffperc.collection/1";
    j["id"] = c.id();
    j["scheme"] = c.scheme;
    j["params"] = {{"d", p.d},     {"K", p.K},
                   {"L", p.L},     {"N", p.N},
                   {"rho", p.rho}, {"domain", p.lambda().describe()},
                   {"relaxed", p.relaxed}};
    j["path_id"] = c.path_id;
    j["n"] = c.n();
    auto pts = nlohmann::json::array();
    for (const auto& z : c.z) pts.push_back(std::vector<int>(z.c.begin(), z.c.begin() + z.d));
    j["points"] = pts;
    j["gamma_budget"] = c.gamma_budget;
    j["gamma_constant"] = c.gamma_constant;
    if (c.tree)
        j["tree"] = {{"n0", c.tree->n0},
                     {"k", c.tree->k},
                     {"k0", c.tree->k0},
                     {"nodes", c.tree->nodes.size()},
                     {"log_family_bound", c.tree->log_family_bound}};
    if (rep)
        j["verification"] = {{"separation", rep->separation}, {"inclusion", rep->inclusion},
                             {"cardinality", rep->cardinality}, {"crossing", rep->crossing},
                             {"lipschitz", rep->lipschitz},   {"shapes", rep->shapes},
                             {"c_nLB", rep->c_nLB},           {"ok", rep->ok()},
                             {"message", rep->message}};
    return j.dump();
}

}  // namespace gffperc
