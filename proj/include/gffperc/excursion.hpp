#ifndef GFFPERC_EXCURSION_HPP
#define GFFPERC_EXCURSION_HPP

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "gffperc/gff.hpp"
#include "gffperc/lattice.hpp"

namespace gffperc {

struct ClusterLabeling {
    Box region;                      // labels are indexed by region.index()
    double h = 0.0;
    Adjacency mode = Adjacency::Nearest;
    std::vector<std::int32_t> label; // 0 = below level or outside the mask
    int count = 0;
    std::vector<int> diameter;       // sup-norm, per label (index label - 1)
    std::vector<std::int64_t> size;

    std::int32_t at(const Point& x) const { return region.contains(x) ? label[region.index(x)] : 0; }
};

// Clusters of {phi >= h} inside `region` (default: the whole sample box),
// optionally restricted further by `mask`.
ClusterLabeling label_clusters(const FieldSample& f, double h, Adjacency mode = Adjacency::Nearest,
                               std::optional<Box> region = std::nullopt,
                               const std::function<bool(const Point&)>& mask = {});

struct EventReport {
    std::string event;
    double h = 0.0;
    int N = 0;
    int N_out = 0;
    int L = 0;
    std::string ambient;
    bool outcome = false;
    std::vector<Point> witness;  // nn-path in {phi >= h} certifying a true outcome
    int count = 0;               // crossing-cluster count where relevant
};

// 0 <-> dB_N in {phi >= h}.
EventReport one_arm(const FieldSample& f, double h, int N);
// 0 <-> dB_N and the cluster of 0 stays inside B_{N_out} (finite proxy of "not <-> infinity").
EventReport truncated_one_arm(const FieldSample& f, double h, int N, int N_out);
// Exactly one cluster of {phi >= h} in B_{2N} meets B_N and dB_{2N}.
EventReport loc_uniq(const FieldSample& f, double h, int N);
// At least two clusters of {phi >= h} in the annulus B_{2N} \ B_N joining the
// layer adjacent to B_N to dB_{2N}.
EventReport two_arms(const FieldSample& f, double h, int N);
// (i) some cluster of {phi >= h} in B_N has diameter >= N/5;
// (ii) all clusters of {phi >= h} in B_N of diameter >= N/10 are connected in B_{2N}.
std::pair<EventReport, EventReport> exist_unique_diagnostics(const FieldSample& f, double h, int N);
// F_N^- = {0} x [-L,L]^{d-1} <-> F_N^+ = {N} x [-L,L]^{d-1} inside {phi >= h} cap T_N(L).
EventReport tube_crossing(const FieldSample& f, double h, int N, int L);

// Re-checks a true report's witness against the field and the event geometry.
bool verify_witness(const EventReport& r, const FieldSample& f);

struct ProportionEstimate {
    double p = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    std::int64_t n = 0;
    std::int64_t hits = 0;
};
ProportionEstimate wilson(std::int64_t hits, std::int64_t n, double z = 1.96);

// x <-> y with the cluster of x inside B_{N_out}(x), over samples.
ProportionEstimate truncated_two_point(const std::vector<FieldSample>& samples, double h, const Point& x,
                                       const Point& y, int N_out);

// Level thresholds of the origin's cluster: arm[N] = sup{h : 0 <-> dB_N in
// {phi >= h}} for N = 0..n_max, by union-find in decreasing field order.
// one_arm(h, N) holds iff h <= arm[N]; the truncated event iff arm[N_out] < h <= arm[N].
std::vector<double> one_arm_thresholds(const FieldSample& f, int n_max);

// sup{h : the two faces of `box` normal to `axis` are connected inside box cap {phi >= h}}.
double face_crossing_threshold(const FieldSample& f, const Box& box, int axis = 0);

// CSV row: event,h,N,N_out,outcome,replica,seed
void write_event_csv_header(std::ostream& os);
void write_event_csv(std::ostream& os, const EventReport& r, std::uint32_t replica, std::uint64_t seed);

}  // namespace gffperc

#endif
