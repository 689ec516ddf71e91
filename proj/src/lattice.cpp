#include "gffperc/lattice.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <istream>
#include <mutex>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace gffperc {

Point::Point(std::initializer_list<int> coords) : d(static_cast<int>(coords.size())) {
    if (d > kMaxDim) throw std::invalid_argument("Point: dimension exceeds kMaxDim");
    int i = 0;
    for (int v : coords) c[i++] = v;
}

Point Point::unit(int dim, int axis, int sign) {
    Point p(dim);
    p.c[axis] = sign;
    return p;
}

Point Point::operator+(const Point& o) const {
    Point r(d);
    for (int i = 0; i < d; ++i) r.c[i] = c[i] + o.c[i];
    return r;
}

Point Point::operator-(const Point& o) const {
    Point r(d);
    for (int i = 0; i < d; ++i) r.c[i] = c[i] - o.c[i];
    return r;
}

bool Point::operator==(const Point& o) const {
    if (d != o.d) return false;
    for (int i = 0; i < d; ++i)
        if (c[i] != o.c[i]) return false;
    return true;
}

bool Point::operator<(const Point& o) const {
    for (int i = 0; i < d; ++i)
        if (c[i] != o.c[i]) return c[i] < o.c[i];
    return false;
}

int sup_norm(const Point& p) {
    int m = 0;
    for (int i = 0; i < p.d; ++i) m = std::max(m, std::abs(p.c[i]));
    return m;
}

double euclid_norm(const Point& p) {
    double s = 0;
    for (int i = 0; i < p.d; ++i) s += double(p.c[i]) * p.c[i];
    return std::sqrt(s);
}

int sup_dist(const Point& a, const Point& b) { return sup_norm(a - b); }

int l1_norm(const Point& p) {
    int s = 0;
    for (int i = 0; i < p.d; ++i) s += std::abs(p.c[i]);
    return s;
}

std::string to_string(const Point& p) {
    std::ostringstream os;
    os << '(';
    for (int i = 0; i < p.d; ++i) os << (i ? "," : "") << p.c[i];
    os << ')';
    return os.str();
}

const std::vector<Point>& neighbour_offsets(int d, Adjacency adj) {
    static std::array<std::vector<Point>, 2 * (kMaxDim + 1)> cache;
    static std::once_flag once;
    std::call_once(once, [] {
        for (int dim = 1; dim <= kMaxDim; ++dim) {
            auto& nn = cache[2 * dim];
            for (int i = 0; i < dim; ++i) {
                nn.push_back(Point::unit(dim, i, -1));
                nn.push_back(Point::unit(dim, i, 1));
            }
            auto& st = cache[2 * dim + 1];
            int total = 1;
            for (int i = 0; i < dim; ++i) total *= 3;
            for (int code = 0; code < total; ++code) {
                Point p(dim);
                int r = code;
                bool zero = true;
                for (int i = dim - 1; i >= 0; --i) {
                    p.c[i] = r % 3 - 1;
                    r /= 3;
                    zero = zero && p.c[i] == 0;
                }
                if (!zero) st.push_back(p);
            }
        }
    });
    if (d < 1 || d > kMaxDim) throw std::invalid_argument("neighbour_offsets: bad dimension");
    return cache[2 * d + (adj == Adjacency::Star ? 1 : 0)];
}

bool adjacent(const Point& a, const Point& b, Adjacency adj) {
    Point diff = a - b;
    if (adj == Adjacency::Star) return sup_norm(diff) == 1;
    return l1_norm(diff) == 1;
}

Box::Box(int dim, const std::array<int, kMaxDim>& l, const std::array<int, kMaxDim>& h)
    : d(dim), lo(l), hi(h) {}

Box Box::ball(const Point& center, int radius) {
    Box b;
    b.d = center.d;
    for (int i = 0; i < b.d; ++i) {
        b.lo[i] = center.c[i] - radius;
        b.hi[i] = center.c[i] + radius + 1;
    }
    return b;
}

Box Box::cube(const Point& z, int a, int b) {
    Box r;
    r.d = z.d;
    for (int i = 0; i < r.d; ++i) {
        r.lo[i] = z.c[i] + a;
        r.hi[i] = z.c[i] + b;
    }
    return r;
}

Box Box::tube(int d, int length, int width) {
    Box r;
    r.d = d;
    r.lo[0] = -width;
    r.hi[0] = length + width + 1;
    for (int i = 1; i < d; ++i) {
        r.lo[i] = -width;
        r.hi[i] = width + 1;
    }
    return r;
}

std::int64_t Box::volume() const {
    std::int64_t v = 1;
    for (int i = 0; i < d; ++i) v *= std::max(0, extent(i));
    return v;
}

bool Box::empty() const { return volume() == 0; }

bool Box::contains(const Point& p) const {
    for (int i = 0; i < d; ++i)
        if (p.c[i] < lo[i] || p.c[i] >= hi[i]) return false;
    return true;
}

bool Box::contains(const Box& b) const {
    if (b.empty()) return true;
    for (int i = 0; i < d; ++i)
        if (b.lo[i] < lo[i] || b.hi[i] > hi[i]) return false;
    return true;
}

bool Box::on_boundary(const Point& p) const {
    if (!contains(p)) return false;
    for (int i = 0; i < d; ++i)
        if (p.c[i] == lo[i] || p.c[i] == hi[i] - 1) return true;
    return false;
}

std::int64_t Box::index(const Point& p) const {
    std::int64_t idx = 0;
    for (int i = 0; i < d; ++i) idx = idx * extent(i) + (p.c[i] - lo[i]);
    return idx;
}

Point Box::point(std::int64_t idx) const {
    Point p(d);
    for (int i = d - 1; i >= 0; --i) {
        const std::int64_t e = extent(i);
        p.c[i] = lo[i] + static_cast<int>(idx % e);
        idx /= e;
    }
    return p;
}

Point Box::lower() const {
    Point p(d);
    for (int i = 0; i < d; ++i) p.c[i] = lo[i];
    return p;
}

Box Box::expanded(int m) const {
    Box b = *this;
    for (int i = 0; i < d; ++i) {
        b.lo[i] -= m;
        b.hi[i] += m;
    }
    return b;
}

Box Box::intersect(const Box& o) const {
    Box b = *this;
    for (int i = 0; i < d; ++i) {
        b.lo[i] = std::max(lo[i], o.lo[i]);
        b.hi[i] = std::max(b.lo[i], std::min(hi[i], o.hi[i]));
    }
    return b;
}

bool Box::operator==(const Box& o) const {
    if (d != o.d) return false;
    for (int i = 0; i < d; ++i)
        if (lo[i] != o.lo[i] || hi[i] != o.hi[i]) return false;
    return true;
}

std::string Box::describe() const {
    std::ostringstream os;
    for (int i = 0; i < d; ++i) os << (i ? "x" : "") << '[' << lo[i] << ',' << hi[i] << ')';
    return os.str();
}

int sup_dist(const Box& a, const Box& b) {
    int m = 0;
    for (int i = 0; i < a.d; ++i) {
        int gap = 0;
        if (a.hi[i] - 1 < b.lo[i]) gap = b.lo[i] - (a.hi[i] - 1);
        else if (b.hi[i] - 1 < a.lo[i]) gap = a.lo[i] - (b.hi[i] - 1);
        m = std::max(m, gap);
    }
    return m;
}

Box bounding_box(const std::vector<Point>& pts) {
    Box b;
    if (pts.empty()) return b;
    b.d = pts.front().d;
    for (int i = 0; i < b.d; ++i) {
        b.lo[i] = pts.front().c[i];
        b.hi[i] = pts.front().c[i] + 1;
    }
    for (const auto& p : pts)
        for (int i = 0; i < b.d; ++i) {
            b.lo[i] = std::min(b.lo[i], p.c[i]);
            b.hi[i] = std::max(b.hi[i], p.c[i] + 1);
        }
    return b;
}

PointSet::PointSet(std::vector<Point> pts) : pts_(std::move(pts)) {
    std::sort(pts_.begin(), pts_.end());
    pts_.erase(std::unique(pts_.begin(), pts_.end()), pts_.end());
    if (!pts_.empty()) {
        d_ = pts_.front().d;
        for (const auto& p : pts_)
            if (p.d != d_) throw std::invalid_argument("PointSet: mixed dimensions");
    }
    bbox_ = bounding_box(pts_);
    build_mask();
}

PointSet PointSet::from_box(const Box& b) {
    std::vector<Point> pts;
    pts.reserve(static_cast<std::size_t>(b.volume()));
    for (std::int64_t i = 0; i < b.volume(); ++i) pts.push_back(b.point(i));
    return PointSet(std::move(pts));
}

void PointSet::build_mask() {
    mask_.clear();
    if (pts_.empty()) return;
    const std::int64_t vol = bbox_.volume();
    if (vol > (std::int64_t(1) << 30)) return;
    if (double(pts_.size()) <= 0.05 * double(vol)) return;
    mask_.assign(static_cast<std::size_t>(vol), 0);
    for (const auto& p : pts_) mask_[bbox_.index(p)] = 1;
}

bool PointSet::contains(const Point& p) const {
    if (pts_.empty() || p.d != d_ || !bbox_.contains(p)) return false;
    if (!mask_.empty()) return mask_[bbox_.index(p)] != 0;
    return std::binary_search(pts_.begin(), pts_.end(), p);
}

std::int64_t PointSet::find(const Point& p) const {
    if (!contains(p)) return -1;
    auto it = std::lower_bound(pts_.begin(), pts_.end(), p);
    return it - pts_.begin();
}

PointSet PointSet::unite(const PointSet& o) const {
    std::vector<Point> v = pts_;
    v.insert(v.end(), o.pts_.begin(), o.pts_.end());
    return PointSet(std::move(v));
}

PointSet PointSet::minus(const PointSet& o) const {
    std::vector<Point> v;
    for (const auto& p : pts_)
        if (!o.contains(p)) v.push_back(p);
    return PointSet(std::move(v));
}

bool PointSet::subset_of(const PointSet& o) const {
    for (const auto& p : pts_)
        if (!o.contains(p)) return false;
    return true;
}

namespace {

// Flood fill over the cells of `box` where `open(idx)` holds, starting from
// the seeds, with the given adjacency. Returns visited flags.
template <class Open>
std::vector<std::uint8_t> flood(const Box& box, const std::vector<std::int64_t>& seeds,
                                Adjacency adj, Open open) {
    std::vector<std::uint8_t> seen(static_cast<std::size_t>(box.volume()), 0);
    std::deque<std::int64_t> q;
    for (auto s : seeds)
        if (!seen[s] && open(s)) {
            seen[s] = 1;
            q.push_back(s);
        }
    const auto& offs = neighbour_offsets(box.d, adj);
    while (!q.empty()) {
        const Point p = box.point(q.front());
        q.pop_front();
        for (const auto& o : offs) {
            const Point y = p + o;
            if (!box.contains(y)) continue;
            const auto iy = box.index(y);
            if (seen[iy] || !open(iy)) continue;
            seen[iy] = 1;
            q.push_back(iy);
        }
    }
    return seen;
}

std::vector<std::int64_t> box_boundary_indices(const Box& box) {
    std::vector<std::int64_t> out;
    for (std::int64_t i = 0; i < box.volume(); ++i)
        if (box.on_boundary(box.point(i))) out.push_back(i);
    return out;
}

std::vector<std::uint8_t> mask_of(const Box& box, const PointSet& s) {
    std::vector<std::uint8_t> m(static_cast<std::size_t>(box.volume()), 0);
    for (const auto& p : s)
        if (box.contains(p)) m[box.index(p)] = 1;
    return m;
}

}  // namespace

Boundaries boundaries(const PointSet& s, std::optional<Box> ambient) {
    Boundaries out;
    if (s.empty()) return out;
    const int d = s.dim();
    const auto& nn = neighbour_offsets(d, Adjacency::Nearest);

    std::vector<Point> inner, outer;
    for (const auto& x : s) {
        bool on = false;
        for (const auto& o : nn) {
            const Point y = x + o;
            if (!s.contains(y)) {
                on = true;
                outer.push_back(y);
            }
        }
        if (on) inner.push_back(x);
    }
    out.inner = PointSet(std::move(inner));
    out.outer = PointSet(std::move(outer));

    const Box amb = ambient ? *ambient : s.bbox().expanded(1);
    for (const auto& x : s)
        if (!amb.contains(x) || amb.on_boundary(x))
            throw std::runtime_error("boundaries: ambient box " + amb.describe() +
                                     " too small to certify the infinite component");
    out.ambient = amb;
    const auto in_s = mask_of(amb, s);
    const auto inf = flood(amb, box_boundary_indices(amb), Adjacency::Nearest,
                           [&](std::int64_t i) { return in_s[i] == 0; });
    std::vector<Point> ext;
    for (std::int64_t i = 0; i < amb.volume(); ++i) {
        if (!inf[i]) continue;
        const Point y = amb.point(i);
        for (const auto& o : nn) {
            const Point z = y + o;
            if (amb.contains(z) && !inf[amb.index(z)]) {
                ext.push_back(y);
                break;
            }
        }
    }
    out.exterior = PointSet(std::move(ext));
    return out;
}

bool LatticePath::valid() const {
    for (std::size_t i = 1; i < pts.size(); ++i)
        if (!adjacent(pts[i - 1], pts[i], adj)) return false;
    return true;
}

bool crosses(const LatticePath& path, const PointSet& u, const PointSet& v) {
    bool hit_u = false, hit_dv = false;
    if (path.pts.empty()) return false;
    const auto& nn = neighbour_offsets(path.pts.front().d, Adjacency::Nearest);
    for (const auto& p : path.pts) {
        hit_u = hit_u || u.contains(p);
        if (!hit_dv && v.contains(p)) {
            for (const auto& o : nn)
                if (!v.contains(p + o)) {
                    hit_dv = true;
                    break;
                }
        }
        if (hit_u && hit_dv) return true;
    }
    return false;
}

bool crosses(const LatticePath& path, const PointSet& u, const Box& v) {
    bool hit_u = false, hit_dv = false;
    for (const auto& p : path.pts) {
        hit_u = hit_u || u.contains(p);
        hit_dv = hit_dv || v.on_boundary(p);
        if (hit_u && hit_dv) return true;
    }
    return false;
}

std::vector<PointSet> components(const PointSet& s, Adjacency adj) {
    std::vector<PointSet> out;
    if (s.empty()) return out;
    const auto& offs = neighbour_offsets(s.dim(), adj);
    std::vector<int> label(s.size(), -1);
    int next = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (label[i] >= 0) continue;
        std::vector<Point> comp;
        std::deque<std::size_t> q{i};
        label[i] = next;
        while (!q.empty()) {
            const std::size_t j = q.front();
            q.pop_front();
            comp.push_back(s[j]);
            for (const auto& o : offs) {
                const auto k = s.find(s[j] + o);
                if (k >= 0 && label[k] < 0) {
                    label[k] = next;
                    q.push_back(static_cast<std::size_t>(k));
                }
            }
        }
        out.emplace_back(std::move(comp));
        ++next;
    }
    return out;
}

bool is_connected(const PointSet& s, Adjacency adj) { return components(s, adj).size() <= 1; }

bool surrounded_by(const PointSet& u1, const PointSet& u2) {
    if (u1.empty()) return true;
    const Box amb = u1.unite(u2).bbox().expanded(1);
    const auto in2 = mask_of(amb, u2);
    if (in2[amb.index(u1[0])]) return false;
    const auto comp = flood(amb, {amb.index(u1[0])}, Adjacency::Nearest,
                            [&](std::int64_t i) { return in2[i] == 0; });
    for (std::int64_t i = 0; i < amb.volume(); ++i)
        if (comp[i] && amb.on_boundary(amb.point(i))) return false;
    for (const auto& p : u1)
        if (!comp[amb.index(p)]) return false;
    return true;
}

int min_star_cut(const PointSet& u, const Box& v, const PointSet& sigma) {
    const auto in_sigma = mask_of(v, sigma);
    const std::int64_t vol = v.volume();
    std::vector<int> dist(static_cast<std::size_t>(vol), std::numeric_limits<int>::max());
    std::deque<std::int64_t> q;
    for (const auto& p : u) {
        if (!v.contains(p)) continue;
        const auto i = v.index(p);
        const int c = in_sigma[i];
        if (c < dist[i]) {
            dist[i] = c;
            if (c == 0) q.push_front(i);
            else q.push_back(i);
        }
    }
    const auto& offs = neighbour_offsets(v.d, Adjacency::Star);
    int best = std::numeric_limits<int>::max();
    while (!q.empty()) {
        const auto i = q.front();
        q.pop_front();
        const Point p = v.point(i);
        if (v.on_boundary(p)) best = std::min(best, dist[i]);
        for (const auto& o : offs) {
            const Point y = p + o;
            if (!v.contains(y)) continue;
            const auto j = v.index(y);
            const int nd = dist[i] + in_sigma[j];
            if (nd < dist[j]) {
                dist[j] = nd;
                if (in_sigma[j]) q.push_back(j);
                else q.push_front(j);
            }
        }
    }
    return best;
}

BlockingResult blocking_layers(const PointSet& u, const Box& v, const PointSet& sigma, int k) {
    BlockingResult res;
    res.min_cut = min_star_cut(u, v, sigma);
    res.hypothesis_holds = res.min_cut >= k;

    const Box amb = v.expanded(1);
    std::vector<std::uint8_t> sig = mask_of(v, sigma);
    std::vector<std::uint8_t> cur = mask_of(v, u);
    for (std::int64_t i = 0; i < v.volume(); ++i)
        if (cur[i] && sig[i]) throw std::invalid_argument("blocking_layers: Sigma meets U");

    for (int layer = 0; layer < k; ++layer) {
        std::vector<std::int64_t> seeds;
        for (std::int64_t i = 0; i < v.volume(); ++i)
            if (cur[i]) seeds.push_back(i);
        const auto a = flood(v, seeds, Adjacency::Star, [&](std::int64_t i) { return sig[i] == 0; });
        bool touches = false;
        for (std::int64_t i = 0; i < v.volume() && !touches; ++i)
            touches = a[i] && v.on_boundary(v.point(i));
        if (touches) {
            res.diagnostic = "layer " + std::to_string(layer + 1) +
                             ": U is *-connected to dV outside Sigma (min cut " +
                             std::to_string(res.min_cut) + " < k=" + std::to_string(k) + ")";
            break;
        }
        // Infinite nn-component of the complement of A, on the padded box.
        std::vector<std::uint8_t> a_amb(static_cast<std::size_t>(amb.volume()), 0);
        for (std::int64_t i = 0; i < v.volume(); ++i)
            if (a[i]) a_amb[amb.index(v.point(i))] = 1;
        const auto inf = flood(amb, box_boundary_indices(amb), Adjacency::Nearest,
                               [&](std::int64_t i) { return a_amb[i] == 0; });
        std::vector<Point> o;
        const auto& star = neighbour_offsets(v.d, Adjacency::Star);
        for (std::int64_t i = 0; i < amb.volume(); ++i) {
            if (!inf[i]) continue;
            const Point y = amb.point(i);
            for (const auto& off : star) {
                const Point z = y + off;
                if (amb.contains(z) && a_amb[amb.index(z)]) {
                    o.push_back(y);
                    break;
                }
            }
        }
        PointSet layer_set(std::move(o));
        for (const auto& p : layer_set) {
            if (!v.contains(p) || !sig[v.index(p)])
                throw std::logic_error("blocking_layers: interface left Sigma");
            sig[v.index(p)] = 0;
            cur[v.index(p)] = 1;
        }
        for (std::int64_t i = 0; i < v.volume(); ++i)
            if (a[i]) cur[i] = 1;
        res.layers.push_back(std::move(layer_set));
    }
    if (static_cast<int>(res.layers.size()) == k && res.diagnostic.empty()) res.diagnostic = "ok";
    return res;
}

Point RenormLattice::anchor(const Point& x) const {
    Point z(x.d);
    for (int i = 0; i < x.d; ++i) {
        const int q = x.c[i] >= 0 ? x.c[i] / L : -((-x.c[i] + L - 1) / L);
        z.c[i] = q * L;
    }
    return z;
}

void write_points(std::ostream& os, const PointSet& s) {
    os << "d=" << s.dim() << '\n';
    for (const auto& p : s) {
        for (int i = 0; i < p.d; ++i) os << (i ? " " : "") << p.c[i];
        os << '\n';
    }
}

PointSet read_points(std::istream& is) {
    std::string line;
    if (!std::getline(is, line) || line.rfind("d=", 0) != 0)
        throw std::runtime_error("read_points: missing 'd=<dim>' header");
    const int d = std::stoi(line.substr(2));
    if (d < 1 || d > kMaxDim) throw std::runtime_error("read_points: unsupported dimension");
    std::vector<Point> pts;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        Point p(d);
        for (int i = 0; i < d; ++i)
            if (!(ls >> p.c[i])) throw std::runtime_error("read_points: short line '" + line + "'");
        int extra;
        if (ls >> extra) throw std::runtime_error("read_points: too many coordinates in '" + line + "'");
        pts.push_back(p);
    }
    return PointSet(std::move(pts));
}

}  // namespace gffperc
