#include <random>
#include <set>
#include <sstream>

#include <gtest/gtest.h>

#include "gffperc/lattice.hpp"
#include "gffperc/rng.hpp"
#include "oracles.hpp"

using namespace gffperc;

namespace {

PointSet shell(int d, int outer, int inner) {
    return PointSet::from_box(Box::ball(Point::zero(d), outer))
        .minus(PointSet::from_box(Box::ball(Point::zero(d), inner)));
}

PointSet box_boundary(int d, int r) { return shell(d, r, r - 1); }

}  // namespace

TEST(Lattice, BallCardinality) {
    for (int d : {3, 4})
        for (int N : {0, 1, 3, 7}) {
            const Box b = Box::ball(Point::zero(d), N);
            std::int64_t expect = 1;
            for (int i = 0; i < d; ++i) expect *= 2 * N + 1;
            EXPECT_EQ(b.volume(), expect);
            EXPECT_TRUE(b.contains(Point::unit(d, 0, N)));
            EXPECT_FALSE(b.contains(Point::unit(d, 0, N + 1)));
        }
}

TEST(Lattice, TubeGeometry) {
    const Box t = Box::tube(3, 10, 2);
    EXPECT_EQ(t.lo[0], -2);
    EXPECT_EQ(t.hi[0], 13);
    EXPECT_EQ(t.lo[1], -2);
    EXPECT_EQ(t.hi[2], 3);
    EXPECT_EQ(Box::tube(4, 5, 0).volume(), 6);
}

TEST(Lattice, IndexRoundTrip) {
    const Box b = Box::cube(Point{2, -3, 5, 1}, -2, 3);
    for (std::int64_t i = 0; i < b.volume(); ++i) EXPECT_EQ(b.index(b.point(i)), i);
}

TEST(Boundaries, UnitBallInnerBoundary) {
    const auto s = PointSet::from_box(Box::ball(Point::zero(3), 1));
    const auto b = boundaries(s);
    EXPECT_EQ(b.inner.size(), 26u);
    EXPECT_FALSE(b.inner.contains(Point::zero(3)));
}

TEST(Boundaries, Singleton) {
    const PointSet s({Point::zero(3)});
    const auto b = boundaries(s);
    ASSERT_EQ(b.inner.size(), 1u);
    EXPECT_EQ(b.inner[0], Point::zero(3));
    EXPECT_EQ(b.outer.size(), 6u);
    for (const auto& y : b.outer) EXPECT_EQ(l1_norm(y), 1);
}

TEST(Boundaries, HollowShellExteriorAgainstFloodFill) {
    const PointSet s = shell(3, 3, 1);
    const Box amb = Box::ball(Point::zero(3), 6);
    const auto b = boundaries(s, amb);
    // Infinite component of the complement: flood from the ambient boundary.
    std::vector<Point> starts;
    for (const auto& x : oracle::box_points(amb))
        if (oracle::on_box_boundary(amb, x)) starts.push_back(x);
    const auto inf = oracle::flood(amb, starts, [&](const Point& x) { return !s.contains(x); });
    std::set<Point> expect;
    for (const auto& y : inf)
        for (const auto& o : oracle::nn_offsets(3))
            if (amb.contains(y + o) && !inf.count(y + o)) expect.insert(y);
    EXPECT_EQ(b.exterior.size(), expect.size());
    for (const auto& y : b.exterior) {
        EXPECT_TRUE(expect.count(y));
        // only the outer side of the shell; the hole is not seen
        EXPECT_EQ(sup_norm(y), 4);
    }
}

TEST(Boundaries, AmbientTooSmallThrows) {
    const PointSet s = PointSet::from_box(Box::ball(Point::zero(3), 2));
    EXPECT_THROW(boundaries(s, Box::ball(Point::zero(3), 2)), std::runtime_error);
}

TEST(Boundaries, EmptySet) {
    const auto b = boundaries(PointSet{});
    EXPECT_TRUE(b.inner.empty());
    EXPECT_TRUE(b.outer.empty());
    EXPECT_TRUE(b.exterior.empty());
}

TEST(Crosses, StraightSegment) {
    const int N = 6;
    LatticePath p;
    p.adj = Adjacency::Nearest;
    for (int j = 0; j <= N; ++j) p.pts.push_back(Point::unit(3, 0, j));
    ASSERT_TRUE(p.valid());
    const PointSet u({Point::zero(3)});
    EXPECT_TRUE(crosses(p, u, Box::ball(Point::zero(3), N)));
    EXPECT_TRUE(crosses(p, u, PointSet::from_box(Box::ball(Point::zero(3), N))));
}

TEST(Crosses, InteriorPathDoesNotCross) {
    const int N = 5;
    LatticePath p;
    for (int j = -(N - 1); j <= N - 1; ++j) p.pts.push_back(Point{j, 0, 0});
    EXPECT_FALSE(crosses(p, PointSet({Point::zero(3)}), Box::ball(Point::zero(3), N)));
}

TEST(Crosses, RandomWalkAgainstSetMembership) {
    const Box V = Box::ball(Point::zero(3), 4);
    const PointSet Vs = PointSet::from_box(V);
    const PointSet U = PointSet::from_box(Box::ball(Point{1, 0, 0}, 1));
    const auto& offs = neighbour_offsets(3, Adjacency::Star);
    for (std::uint32_t r = 0; r < 200; ++r) {
        RandomStream rs(7, r, Purpose::Path);
        LatticePath p;
        Point x{int(rs.below(9)) - 4, int(rs.below(9)) - 4, int(rs.below(9)) - 4};
        const int len = 1 + int(rs.below(12));
        for (int s = 0; s < len; ++s) {
            p.pts.push_back(x);
            x = x + offs[rs.below(std::uint32_t(offs.size()))];
        }
        bool hu = false, hv = false;
        for (const auto& q : p.pts) {
            hu = hu || U.contains(q);
            hv = hv || (V.contains(q) && oracle::on_box_boundary(V, q));
        }
        EXPECT_EQ(crosses(p, U, V), hu && hv) << "replica " << r;
        EXPECT_EQ(crosses(p, U, Vs), hu && hv) << "replica " << r;
    }
}

TEST(Blocking, FullAnnulusSingleLayer) {
    const Box V = Box::ball(Point::zero(3), 5);
    const PointSet U({Point::zero(3)});
    const auto r = blocking_layers(U, V, shell(3, 3, 1), 1);
    ASSERT_TRUE(r.hypothesis_holds);
    ASSERT_EQ(r.layers.size(), 1u);
    EXPECT_TRUE(r.layers[0].subset_of(shell(3, 3, 1)));
    EXPECT_TRUE(is_connected(r.layers[0], Adjacency::Star));
    EXPECT_TRUE(surrounded_by(U, r.layers[0]));
}

TEST(Blocking, ThreeNestedShells) {
    const Box V = Box::ball(Point::zero(3), 8);
    const PointSet U({Point::zero(3)});
    const PointSet sigma = box_boundary(3, 2).unite(box_boundary(3, 4)).unite(box_boundary(3, 6));
    const auto r = blocking_layers(U, V, sigma, 3);
    ASSERT_TRUE(r.hypothesis_holds) << r.diagnostic;
    ASSERT_EQ(r.layers.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_TRUE(r.layers[i].subset_of(sigma));
        EXPECT_TRUE(is_connected(r.layers[i], Adjacency::Star));
        for (std::size_t j = i + 1; j < 3; ++j) {
            EXPECT_TRUE(surrounded_by(r.layers[i], r.layers[j]));
            EXPECT_TRUE(r.layers[i].minus(r.layers[j]).size() == r.layers[i].size());
        }
    }
}

TEST(Blocking, RandomSparseSigmaMatchesMaxFlow) {
    const Box V = Box::ball(Point::zero(3), 3);
    const std::vector<Point> U{Point::zero(3)};
    int nontrivial = 0;
    for (std::uint32_t r = 0; r < 25; ++r) {
        RandomStream rs(11, r, Purpose::Misc);
        std::vector<Point> pts;
        std::set<Point> sig;
        // perforated shells at radii 1 and 2 plus scattered points
        for (const auto& x : oracle::box_points(V))
            if (x != Point::zero(3) && rs.uniform() < (sup_norm(x) == 3 ? 0.3 : 0.97)) {
                pts.push_back(x);
                sig.insert(x);
            }
        const PointSet sigma(pts);
        const int m = oracle::min_cut(U, V, sig);
        EXPECT_EQ(min_star_cut(PointSet(U), V, sigma), m) << "replica " << r;
        if (m == 0) continue;
        ++nontrivial;
        const auto res = blocking_layers(PointSet(U), V, sigma, m);
        EXPECT_TRUE(res.hypothesis_holds);
        ASSERT_EQ(int(res.layers.size()), m) << "replica " << r;
        for (int i = 0; i < m; ++i) {
            EXPECT_TRUE(res.layers[i].subset_of(sigma));
            for (int j = i + 1; j < m; ++j)
                EXPECT_EQ(res.layers[i].minus(res.layers[j]).size(), res.layers[i].size());
        }
        // Asking for one more than the cut reports the violation.
        const auto over = blocking_layers(PointSet(U), V, sigma, m + 1);
        EXPECT_FALSE(over.hypothesis_holds);
        EXPECT_FALSE(over.diagnostic.empty());
    }
    EXPECT_GT(nontrivial, 5);
}

TEST(Surround, OrderOnShells) {
    std::vector<PointSet> s;
    for (int r = 1; r <= 4; ++r) s.push_back(box_boundary(3, r));
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (i == j) continue;
            EXPECT_EQ(surrounded_by(s[i], s[j]), i < j);
            // transitivity through every k
            for (std::size_t k = 0; k < s.size(); ++k)
                if (k != i && k != j && surrounded_by(s[i], s[j]) && surrounded_by(s[j], s[k])) {
                    EXPECT_TRUE(surrounded_by(s[i], s[k]));
                }
        }
}

TEST(Renorm, TilingAndNesting) {
    for (int L : {1, 3, 10}) {
        const RenormLattice lat{3, L, 4};
        RandomStream rs(3, std::uint32_t(L), Purpose::Misc);
        for (int t = 0; t < 500; ++t) {
            const Point x{int(rs.below(200)) - 100, int(rs.below(200)) - 100, int(rs.below(200)) - 100};
            const Point z = lat.anchor(x);
            EXPECT_TRUE(lat.C(z).contains(x));
            int hits = 0;
            for (const auto& o : neighbour_offsets(3, Adjacency::Star)) {
                Point w = z;
                for (int i = 0; i < 3; ++i) w[i] += L * o[i];
                hits += lat.C(w).contains(x);
            }
            EXPECT_EQ(hits, 0);
            for (int i = 0; i < 3; ++i) EXPECT_EQ(((z[i] % L) + L) % L, 0);
        }
        const Point z = Point::zero(3);
        EXPECT_TRUE(lat.Ctilde(z).contains(lat.C(z)));
        EXPECT_TRUE(lat.Dtilde(z).contains(lat.Ctilde(z)));
        EXPECT_TRUE(lat.D(z).contains(lat.Dtilde(z)));
        EXPECT_TRUE(lat.U(z).contains(lat.D(z)));
        EXPECT_EQ(lat.separation(), 2 * 4 * L + L);
    }
}

TEST(Renorm, ShellsAreDisjoint) {
    const int K = 4, L = 2;
    std::vector<PointSet> s;
    for (int i = 1; i <= 3; ++i) s.push_back(box_boundary(3, 3 * K * L * i));
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = i + 1; j < s.size(); ++j) EXPECT_EQ(s[i].minus(s[j]).size(), s[i].size());
}

TEST(PointSetTest, MaskAndSortedMembershipAgree) {
    const Box b = Box::ball(Point::zero(3), 5);
    for (double density : {0.01, 0.3}) {
        RandomStream rs(5, std::uint32_t(density * 100), Purpose::Misc);
        std::vector<Point> pts;
        std::set<Point> ref;
        for (const auto& x : oracle::box_points(b))
            if (rs.uniform() < density) {
                pts.push_back(x);
                ref.insert(x);
            }
        const PointSet s(pts);
        EXPECT_EQ(s.has_mask(), density > 0.05);
        for (const auto& x : oracle::box_points(b.expanded(1))) EXPECT_EQ(s.contains(x), ref.count(x) == 1);
    }
}

TEST(PointSetTest, TextRoundTrip) {
    const PointSet s = shell(4, 2, 1);
    std::stringstream ss;
    write_points(ss, s);
    EXPECT_EQ(ss.str().substr(0, 4), "d=4\n");
    const PointSet t = read_points(ss);
    ASSERT_EQ(t.size(), s.size());
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_EQ(t[i], s[i]);
}

TEST(PointSetTest, ComponentsOfTwoBlobs) {
    const PointSet a = PointSet::from_box(Box::ball(Point::zero(3), 1));
    const PointSet b = PointSet::from_box(Box::ball(Point{3, 0, 0}, 1));
    // sup-distance 1 between the blobs: one *-component, two nn-components
    const PointSet c = PointSet::from_box(Box::ball(Point{4, 2, 0}, 0));
    const PointSet u = a.unite(b);
    EXPECT_EQ(components(u, Adjacency::Star).size(), 1u);
    EXPECT_EQ(components(u, Adjacency::Nearest).size(), 1u);
    const PointSet v = a.unite(PointSet::from_box(Box::ball(Point{3, 2, 0}, 0)));
    EXPECT_EQ(components(v, Adjacency::Nearest).size(), 2u);
    EXPECT_EQ(components(v.unite(c), Adjacency::Star).size(), 2u);
}
