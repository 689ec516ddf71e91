#ifndef GFFPERC_LATTICE_HPP
#define GFFPERC_LATTICE_HPP

#include <array>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace gffperc {

inline constexpr int kMaxDim = 6;

struct Point {
    int d = 0;
    std::array<int, kMaxDim> c{};

    Point() = default;
    explicit Point(int dim) : d(dim) {}
    Point(std::initializer_list<int> coords);

    int& operator[](int i) { return c[i]; }
    int operator[](int i) const { return c[i]; }

    static Point zero(int dim) { return Point(dim); }
    static Point unit(int dim, int axis, int sign = 1);

    Point operator+(const Point& o) const;
    Point operator-(const Point& o) const;
    bool operator==(const Point& o) const;
    bool operator!=(const Point& o) const { return !(*this == o); }
    bool operator<(const Point& o) const;
};

int sup_norm(const Point& p);
double euclid_norm(const Point& p);
int sup_dist(const Point& a, const Point& b);
int l1_norm(const Point& p);
std::string to_string(const Point& p);

// Neighbour offsets: 2d nearest neighbours, or the 3^d - 1 points at sup-distance 1.
enum class Adjacency { Nearest, Star };
const std::vector<Point>& neighbour_offsets(int d, Adjacency adj);
bool adjacent(const Point& a, const Point& b, Adjacency adj);

// Half-open axis-aligned box [lo, hi).
struct Box {
    int d = 0;
    std::array<int, kMaxDim> lo{};
    std::array<int, kMaxDim> hi{};

    Box() = default;
    Box(int dim, const std::array<int, kMaxDim>& l, const std::array<int, kMaxDim>& h);

    // B_N(x) = {y : |y - x|_inf <= N}
    static Box ball(const Point& center, int radius);
    // z + [a, b)^d
    static Box cube(const Point& z, int a, int b);
    // T_N(L) = [-L, N+L] x [-L, L]^{d-1}
    static Box tube(int d, int length, int width);

    int extent(int i) const { return hi[i] - lo[i]; }
    std::int64_t volume() const;
    bool empty() const;
    bool contains(const Point& p) const;
    bool contains(const Box& b) const;
    // Inner vertex boundary of the box.
    bool on_boundary(const Point& p) const;
    std::int64_t index(const Point& p) const;
    Point point(std::int64_t idx) const;
    Point lower() const;
    Box expanded(int m) const;
    Box intersect(const Box& b) const;
    bool operator==(const Box& o) const;
    std::string describe() const;
};

// Sup-norm distance between two boxes (0 when they intersect).
int sup_dist(const Box& a, const Box& b);
Box bounding_box(const std::vector<Point>& pts);

// Sorted point set; keeps a dense bitmask over its bounding box when the
// occupancy exceeds 5%. Membership answers from both agree by construction.
class PointSet {
public:
    PointSet() = default;
    explicit PointSet(std::vector<Point> pts);
    static PointSet from_box(const Box& b);

    int dim() const { return d_; }
    std::size_t size() const { return pts_.size(); }
    bool empty() const { return pts_.empty(); }
    const std::vector<Point>& points() const { return pts_; }
    const Point& operator[](std::size_t i) const { return pts_[i]; }
    auto begin() const { return pts_.begin(); }
    auto end() const { return pts_.end(); }

    bool contains(const Point& p) const;
    // Position of p in the sorted order, or -1.
    std::int64_t find(const Point& p) const;
    const Box& bbox() const { return bbox_; }
    bool has_mask() const { return !mask_.empty(); }

    PointSet unite(const PointSet& o) const;
    PointSet minus(const PointSet& o) const;
    bool subset_of(const PointSet& o) const;

private:
    void build_mask();

    int d_ = 0;
    std::vector<Point> pts_;
    Box bbox_;
    std::vector<std::uint8_t> mask_;
};

struct Boundaries {
    PointSet inner;     // {x in S : some nn neighbour outside S}
    PointSet outer;     // boundary of the complement
    PointSet exterior;  // inner boundary of the infinite component of S^c
    Box ambient;        // box used to certify the infinite component
};

// Throws std::runtime_error if S touches the ambient box boundary.
Boundaries boundaries(const PointSet& s, std::optional<Box> ambient = std::nullopt);

struct LatticePath {
    std::vector<Point> pts;
    Adjacency adj = Adjacency::Star;

    bool valid() const;
    std::size_t size() const { return pts.size(); }
};

// True iff the path meets U and the inner boundary of V.
bool crosses(const LatticePath& path, const PointSet& u, const PointSet& v);
bool crosses(const LatticePath& path, const PointSet& u, const Box& v);

// Components of a point set under the given adjacency (labels in sorted order).
std::vector<PointSet> components(const PointSet& s, Adjacency adj);
bool is_connected(const PointSet& s, Adjacency adj);

// U1 is surrounded by U2: U1 lies in a finite nn-component of Z^d \ U2.
bool surrounded_by(const PointSet& u1, const PointSet& u2);

struct BlockingResult {
    std::vector<PointSet> layers;
    int min_cut = 0;  // least number of Sigma points met by a *-path from U to dV
    bool hypothesis_holds = false;
    std::string diagnostic;
};

// Nested *-connected interfaces O_1 <= ... <= O_k inside Sigma.
BlockingResult blocking_layers(const PointSet& u, const Box& v, const PointSet& sigma, int k);

// Least number of Sigma points on a *-path from U to the inner boundary of V.
int min_star_cut(const PointSet& u, const Box& v, const PointSet& sigma);

// Renormalized lattice L Z^d with the box families attached to each site.
struct RenormLattice {
    int d = 3;
    int L = 1;
    int K = 1;

    Point anchor(const Point& x) const;  // z with x in C_z
    Box C(const Point& z) const { return Box::cube(z, 0, L); }
    Box Ctilde(const Point& z) const { return Box::cube(z, -L, 2 * L); }
    Box Dtilde(const Point& z) const { return Box::cube(z, -2 * L, 3 * L); }
    Box D(const Point& z) const { return Box::cube(z, -3 * L, 4 * L); }
    Box U(const Point& z) const { return Box::cube(z, -K * L + 1, L + K * L - 1); }
    int separation() const { return 2 * K * L + L; }
};

// Point set text format: "d=<dim>" then one point per line.
void write_points(std::ostream& os, const PointSet& s);
PointSet read_points(std::istream& is);

}  // namespace gffperc

#endif
