#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "gffperc/green.hpp"

using namespace gffperc;

namespace {

// Watson's integral for the cubic lattice, g_3(0) = 1/(1 - return probability).
constexpr double kG3Origin = 1.516386059151978;
// d = 4: return probability 0.193206210....
constexpr double kG4Origin = 1.239467121912;

}  // namespace

TEST(Green, OriginMatchesWatsonConstant) {
    GreenOracle g(3);
    EXPECT_NEAR(g(Point::zero(3)), kG3Origin, 1e-8);
}

TEST(Green, OriginMatchesReturnSeries) {
    const auto rs = green3_origin_return_series();
    EXPECT_NEAR(rs.value, kG3Origin, 1e-6);
    GreenOracle g(3);
    EXPECT_NEAR(g(Point::zero(3)), rs.value, 1e-6);
}

TEST(Green, OriginFourDimensions) {
    GreenOracle g(4);
    EXPECT_NEAR(g(Point::zero(4)), kG4Origin, 1e-6);
}

TEST(Green, HarmonicOffOrigin) {
    // (I - P) g = delta_0
    GreenOracle g(3);
    for (const Point& x : {Point{0, 0, 0}, Point{1, 0, 0}, Point{2, 1, 0}, Point{3, 2, 1}}) {
        double avg = 0;
        for (const auto& o : neighbour_offsets(3, Adjacency::Nearest)) avg += g(x + o);
        avg /= 6;
        EXPECT_NEAR(g(x) - avg, x == Point::zero(3) ? 1.0 : 0.0, 1e-8) << to_string(x);
    }
}

TEST(Green, AsymptoticConstant) {
    GreenOracle g(3);
    const double v = g(Point{100, 0, 0});
    EXPECT_LT(std::abs(v * 100 * 2 * std::numbers::pi / 3 - 1), 0.02);
    EXPECT_NEAR(green_constant(3), 3 / (2 * std::numbers::pi), 1e-15);
}

TEST(Green, LatticeSymmetries) {
    GreenOracle g(3);
    const Point x{3, -1, 2};
    const double v = g(x);
    EXPECT_EQ(v, g(Point{-3, 1, -2}));
    EXPECT_EQ(v, g(Point{2, 3, -1}));
    EXPECT_EQ(v, g(Point{-1, 2, 3}));
    EXPECT_GT(v, 0);
}

TEST(Green, MonotoneAlongAxis) {
    GreenOracle g(3);
    const auto t = g.axis_table(40);
    for (int j = 1; j <= 40; ++j) {
        EXPECT_LT(t[j], t[j - 1]);
        EXPECT_NEAR(t[j], g(Point::unit(3, 0, j)), 1e-12);
    }
}

TEST(Green, FarFieldAgreesAtModerateDistance) {
    for (int d : {3, 4}) {
        GreenOracle g(d);
        Point x(d);
        x[0] = 30;
        x[1] = 11;
        const double rel = std::abs(g.far_field(x) / g(x) - 1);
        EXPECT_LT(rel, d == 3 ? 1e-4 : 2e-2) << "d=" << d;
        EXPECT_EQ(g.approx(x, 24), g.far_field(x));
        EXPECT_EQ(g.approx(Point::unit(d, 0, 3), 24), g(Point::unit(d, 0, 3)));
    }
}

TEST(Green, TableMatchesPointEvaluation) {
    GreenOracle g(3);
    const auto t = g.table({4, 3, 2});
    for (const Point& x : {Point{0, 0, 0}, Point{3, -2, 1}, Point{-3, 2, -1}})
        EXPECT_NEAR(t.at(x), g(x), 1e-14);
    EXPECT_FALSE(t.covers(Point{4, 0, 0}));
    EXPECT_LT(g.max_error_estimate(), g.tol());
}
