#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <numbers>
#include <sstream>

#include <tbb/parallel_for.h>
#include <tbb/task_arena.h>

#include "gffperc/coarse_grain.hpp"
#include "gffperc/digest.hpp"
#include "gffperc/excursion.hpp"
#include "gffperc/gff.hpp"
#include "gffperc/potential.hpp"
#include "gffperc/runner.hpp"
#include "gffperc/tilt.hpp"

namespace fs = std::filesystem;

namespace gffperc::runner {

namespace {

std::string iso_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct Task {
    std::string name;
    std::uint64_t seed = 0;
    std::function<void()> fn;
};

struct Suite {
    const RunConfig& cfg;
    fs::path dir;
    RunManifest& m;
    std::uint64_t seed;  // suite stream seed derived from the master seed

    std::ofstream open(const std::string& name) const {
        std::ofstream os(dir / name);
        if (!os) throw std::runtime_error("cannot write " + (dir / name).string());
        os << std::setprecision(12);
        return os;
    }
    void fail(const std::string& s) const { m.invariant_failures.push_back(s); }
    void warn(const std::string& s) const { m.warnings.push_back(s); }

    // Runs tasks in the bounded arena; failures are recorded, not thrown.
    bool run_tasks(std::vector<Task>& tasks) const {
        const std::size_t base = m.tasks.size();
        for (const auto& t : tasks) m.tasks.push_back({t.name, t.seed, "pending", ""});
        tbb::task_arena arena(cfg.workers);
        arena.execute([&] {
            tbb::parallel_for(std::size_t(0), tasks.size(), [&](std::size_t i) {
                auto& rec = m.tasks[base + i];
                try {
                    tasks[i].fn();
                    rec.status = "ok";
                } catch (const std::exception& e) {
                    rec.status = "failed";
                    rec.message = e.what();
                }
            });
        });
        return std::all_of(m.tasks.begin() + std::ptrdiff_t(base), m.tasks.end(),
                           [](const TaskRecord& t) { return t.status == "ok"; });
    }
};

// Replica blocks [first, first + count).
std::vector<std::pair<std::int64_t, std::int64_t>> blocks(std::int64_t n, std::int64_t size) {
    std::vector<std::pair<std::int64_t, std::int64_t>> out;
    for (std::int64_t a = 0; a < n; a += size) out.emplace_back(a, std::min(size, n - a));
    return out;
}

void capacity_sweep(const Suite& s) {
    auto N = s.cfg.N;
    std::sort(N.begin(), N.end());
    const GreenOracle g(s.cfg.d);
    std::vector<LineCapacity> res(N.size());
    std::vector<Task> tasks;
    for (std::size_t i = 0; i < N.size(); ++i)
        tasks.push_back({"line N=" + std::to_string(N[i]), 0, [&, i] { res[i] = line_capacity_fast(N[i], g); }});
    if (!s.run_tasks(tasks)) return;

    auto os = s.open("capacity.csv");
    os << "d,N,cap,ratio,reference,iterations\n";
    const bool d3 = s.cfg.d == 3;
    std::vector<double> ratio;
    for (std::size_t i = 0; i < N.size(); ++i) {
        const double cap = res[i].report.value;
        ratio.push_back(d3 ? cap * std::log(double(N[i])) / N[i] : cap / N[i]);
        os << s.cfg.d << ',' << N[i] << ',' << cap << ',' << ratio.back() << ',';
        if (d3) os << std::numbers::pi / 3;
        os << ',' << res[i].iterations << '\n';
        if (i && cap <= res[i - 1].report.value) s.fail("capacity not increasing at N=" + std::to_string(N[i]));
    }
    for (std::size_t i = 1; d3 && i < N.size(); ++i)
        if (std::abs(ratio[i] - std::numbers::pi / 3) >= std::abs(ratio[i - 1] - std::numbers::pi / 3))
            s.fail("cap log N / N does not approach pi/3 at N=" + std::to_string(N[i]));
    if (!d3 && ratio.size() > 1) {
        const auto [lo, hi] = std::minmax_element(ratio.begin(), ratio.end());
        if (*hi > 1.15 * *lo) s.warn("cap/N varies by more than 15% across the sweep");
    }
}

void field_sample(const Suite& s) {
    const auto& c = s.cfg;
    const Box B = Box::ball(Point::zero(c.d), c.N[0]);
    const GreenOracle g(c.d);
    std::vector<std::string> summary(static_cast<std::size_t>(c.replicas));
    std::vector<Task> tasks;
    for (auto [first, count] : blocks(c.replicas, 16)) {
        tasks.push_back({"replicas " + std::to_string(first) + "+" + std::to_string(count), s.seed, [&, first, count] {
                             for (std::int64_t r = first; r < first + count; ++r) {
                                 const auto rep = std::uint32_t(r);
                                 const FieldSample f = c.law == "bulk" ? sample_bulk(B, c.R, s.seed, rep, g)
                                                                       : sample_dirichlet(B, s.seed, rep);
                                 char name[32];
                                 std::snprintf(name, sizeof name, "sample-%05u.gffs", rep);
                                 std::ofstream bin(s.dir / name, std::ios::binary);
                                 write_sample(bin, f);
                                 double mean = 0, var = 0;
                                 for (double v : f.values) mean += v;
                                 mean /= double(f.values.size());
                                 for (double v : f.values) var += (v - mean) * (v - mean);
                                 var /= double(f.values.size());
                                 const auto [lo, hi] = std::minmax_element(f.values.begin(), f.values.end());
                                 if (!std::isfinite(mean) || !std::isfinite(var))
                                     throw std::runtime_error("non-finite sample values");
                                 std::ostringstream row;
                                 row << std::setprecision(12) << rep << ',' << s.seed << ',' << f.law << ','
                                     << c.N[0] << ',' << f.R << ',' << mean << ',' << var << ',' << *lo << ',' << *hi
                                     << ',' << f.at(Point::zero(c.d)) << ',' << f.bias_bound << '\n';
                                 summary[r] = row.str();
                             }
                         }});
    }
    if (!s.run_tasks(tasks)) return;
    auto os = s.open("samples.csv");
    os << "replica,seed,law,N,R,mean,var,min,max,phi0,bias_bound\n";
    for (const auto& row : summary) os << row;
}

void one_arm_scan(const Suite& s) {
    const auto& c = s.cfg;
    auto N = c.N;
    std::sort(N.begin(), N.end());
    const bool below = std::any_of(c.h.begin(), c.h.end(), [&](double x) { return x < c.hstar_lo; });
    const int n_max = below ? c.nout_factor * N.back() : N.back();
    const GreenOracle g(3);
    std::vector<std::vector<double>> arm(static_cast<std::size_t>(c.replicas));
    std::vector<Task> tasks;
    for (auto [first, count] : blocks(c.replicas, 25)) {
        tasks.push_back({"replicas " + std::to_string(first) + "+" + std::to_string(count), s.seed, [&, first, count] {
                             auto part = arm_thresholds(n_max, c.R, count, s.seed, g, std::uint32_t(first));
                             std::move(part.begin(), part.end(), arm.begin() + first);
                         }});
    }
    if (!s.run_tasks(tasks)) return;
    const auto cells = scan_cells(arm, N, c.h, c.hstar_lo, c.hstar_hi, c.nout_factor);
    const double hstar = 0.5 * (c.hstar_lo + c.hstar_hi);
    auto os = s.open("scan.csv");
    os << "h,N,N_out,event,n,hits,p_hat,ci_lo,ci_hi,flagged,seed\n";
    for (const auto& x : cells)
        os << x.h << ',' << x.N << ',' << x.N_out << ',' << x.event << ',' << x.p.n << ',' << x.p.hits << ','
           << x.p.p << ',' << x.p.ci_lo << ',' << x.p.ci_hi << ',' << int(x.flagged) << ',' << s.seed << '\n';
    for (std::size_t i = 1; i < cells.size(); ++i)
        if (cells[i].event == "one_arm" && cells[i].h == cells[i - 1].h && cells[i].p.p > cells[i - 1].p.p)
            s.fail("one-arm frequency increases in N at h=" + std::to_string(cells[i].h));
    for (const auto& x : cells)
        if (x.flagged) s.warn("no hits at h=" + std::to_string(x.h) + " N=" + std::to_string(x.N));
    auto fs_ = s.open("fit.csv");
    fs_ << "h,event,slope,se,intercept,points,reference,hstar\n";
    for (const auto& f : scan_fits(cells, hstar)) {
        fs_ << f.h << ',' << f.event << ',' << f.fit.slope << ',' << f.fit.se << ',' << f.fit.intercept << ','
            << f.fit.points << ',' << f.reference << ',' << hstar << '\n';
        if (!(f.fit.slope > 0 && f.fit.se < f.fit.slope))
            s.warn("fit at h=" + std::to_string(f.h) + " is not resolved (slope " + std::to_string(f.fit.slope) + ")");
    }
}

void tilt_estimate(const Suite& s) {
    const auto& c = s.cfg;
    const int N = c.N[0];
    const Box T = Box::tube(c.d, N, c.L);
    const int margin = c.u_margin > 0 ? c.u_margin : std::max(2, N / 2);
    const TiltSpec spec = make_tilt(PointSet::from_box(T), T.expanded(margin), c.delta);
    if (spec.harmonic_residual > 1e-10) s.fail("tilt: harmonic residual " + std::to_string(spec.harmonic_residual));
    const std::size_t H = c.h.size();
    std::vector<ImportanceEstimate> tilted(H), naive(H);
    std::vector<std::uint64_t> seed_t(H), seed_n(H);
    std::vector<Task> tasks;
    for (std::size_t i = 0; i < H; ++i) {
        std::ostringstream hs;
        hs << c.h[i];
        const std::uint64_t st = seed_t[i] = task_seed(c.seed, "tilted/h=" + hs.str());
        const std::uint64_t sn = seed_n[i] = task_seed(c.seed, "naive/h=" + hs.str());
        const double h = c.h[i];
        auto det = [h, N, L = c.L](const FieldSample& f) { return tube_crossing(f, h, N, L).outcome; };
        tasks.push_back({"tilted h=" + hs.str(), st,
                         [&, i, det, st] { tilted[i] = importance_estimate(det, "tube_crossing:tilted", spec, c.replicas, st); }});
        tasks.push_back({"naive h=" + hs.str(), sn,
                         [&, i, det, sn] { naive[i] = naive_estimate(det, "tube_crossing:naive", spec.U, c.replicas, sn); }});
    }
    if (!s.run_tasks(tasks)) return;
    auto os = s.open("estimates.csv");
    write_importance_csv_header(os);
    auto es = s.open("entropy.csv");
    es << "h,delta,p_tilted,H,bound,degenerate,naive_p,naive_ci_hi,tilted_ess\n";
    for (std::size_t i = 0; i < H; ++i) {
        write_importance_csv(os, tilted[i], c.h[i], c.delta, N, c.L, seed_t[i]);
        write_importance_csv(os, naive[i], c.h[i], 0.0, N, c.L, seed_n[i]);
        const double freq = double(tilted[i].hits) / double(tilted[i].n);
        const auto b = entropic_lower_bound(freq, spec.log_normalizer);
        es << c.h[i] << ',' << c.delta << ',' << freq << ',' << b.H << ',' << b.bound << ',' << int(b.degenerate)
           << ',' << naive[i].p_hat << ',' << naive[i].ci_hi << ',' << tilted[i].ess << '\n';
        if (b.bound > naive[i].ci_hi) s.fail("entropic bound above the naive CI at h=" + std::to_string(c.h[i]));
        if (tilted[i].unreliable)
            s.warn("tilted estimate unreliable (ESS " + std::to_string(tilted[i].ess) + ") at h=" + std::to_string(c.h[i]));
        else if (tilted[i].warning)
            s.warn("tilted ESS below 100 at h=" + std::to_string(c.h[i]));
        if (naive[i].hits > 0 && tilted[i].hits > 0 &&
            (tilted[i].ci_hi < naive[i].ci_lo || naive[i].ci_hi < tilted[i].ci_lo))
            s.warn("tilted and naive CIs do not overlap at h=" + std::to_string(c.h[i]));
    }
}

void coarse_grain_demo(const Suite& s) {
    const auto& c = s.cfg;
    struct Cell {
        int N;
        std::string domain;
        std::vector<std::string> rows, json, porous;
        int failures = 0;
        double worst_retention = 1e300;
    };
    std::vector<Cell> cells;
    for (int n : c.N)
        for (const auto& d : c.domain) cells.push_back({n, d, {}, {}, {}, 0, 1e300});
    const GreenOracle g(c.d);
    std::vector<Task> tasks;
    for (auto& cell_ref : cells) {
        tasks.push_back({"N=" + std::to_string(cell_ref.N) + " " + cell_ref.domain, s.seed, [&, pc = &cell_ref] {
                             Cell& cell = *pc;
                             CGParams p;
                             p.d = c.d;
                             p.K = c.K;
                             p.L = c.L;
                             p.N = cell.N;
                             p.rho = c.rho;
                             p.relaxed = c.relaxed_k;
                             p.domain.kind = lambda_from_string(cell.domain);
                             p.domain.eps = c.lambda_eps;
                             for (std::int64_t r = 0; r < c.replicas; ++r) {
                                 const auto path = random_crossing_path(p.lambda(), s.seed, std::uint32_t(r), c.drift);
                                 const auto col = coarse_grain(path, p, std::uint64_t(r));
                                 const auto rep = verify_collection(col, path);
                                 cell.failures += !rep.ok();
                                 std::ostringstream row;
                                 row << std::setprecision(12) << cell.N << ',' << cell.domain << ',' << r << ','
                                     << col.id() << ',' << col.n() << ',' << rep.c_nLB << ',' << col.gamma_budget << ','
                                     << col.gamma_constant << ',' << int(rep.ok()) << ",\"" << rep.message << "\","
                                     << s.seed << '\n';
                                 cell.rows.push_back(row.str());
                                 cell.json.push_back(to_json(col, &rep));
                                 if (c.d == 3 && r < c.porous_paths) {
                                     const auto pp = porous_projection(col, c.rho, g);
                                     std::ostringstream pr;
                                     pr << std::setprecision(12) << cell.N << ',' << cell.domain << ',' << r << ','
                                        << pp.kept << ',' << pp.line_length << ',' << pp.cap_line << ','
                                        << pp.cap_porous << ',' << pp.porous_ratio << ',' << pp.sigma_lower << ','
                                        << pp.sigma_upper << ',' << pp.sigma_ratio << '\n';
                                     cell.porous.push_back(pr.str());
                                     cell.worst_retention = std::min(cell.worst_retention, pp.sigma_ratio);
                                 }
                             }
                         }});
    }
    if (!s.run_tasks(tasks)) return;
    auto os = s.open("collections.csv");
    os << "N,domain,path,id,n,c_nLB,gamma_budget,gamma_constant,ok,message,seed\n";
    auto js = s.open("collections.jsonl");
    std::ofstream ps;
    if (c.d == 3) {
        ps = s.open("porous.csv");
        ps << "N,domain,path,kept,line_length,cap_line,cap_porous,porous_ratio,sigma_lower,sigma_upper,sigma_ratio\n";
    }
    for (const auto& cell : cells) {
        for (const auto& r : cell.rows) os << r;
        for (const auto& j : cell.json) js << j << '\n';
        for (const auto& p : cell.porous) ps << p;
        if (cell.failures)
            s.fail(std::to_string(cell.failures) + " collections fail re-verification at N=" + std::to_string(cell.N) +
                   " " + cell.domain);
        if (c.d == 3 && c.porous_paths > 0 && cell.worst_retention < 0.5 * (1 - c.rho))
            s.warn("capacity retention " + std::to_string(cell.worst_retention) + " below 0.5 (1 - rho) at N=" +
                   std::to_string(cell.N) + " " + cell.domain);
    }
}

void hstar_estimate(const Suite& s) {
    const auto& c = s.cfg;
    auto N = c.N;
    std::sort(N.begin(), N.end());
    const GreenOracle g(c.d);
    std::vector<std::vector<double>> thr;
    std::vector<Task> tasks{{"face thresholds", s.seed, [&] { thr = face_thresholds(N, c.R, c.replicas, s.seed, g); }}};
    if (!s.run_tasks(tasks)) return;
    const auto b = hstar_bracket(N, c.h, thr);
    auto os = s.open("curves.csv");
    os << "N,h,n,hits,p_hat,ci_lo,ci_hi,seed\n";
    for (std::size_t i = 0; i < N.size(); ++i)
        for (std::size_t j = 0; j < c.h.size(); ++j) {
            const auto& p = b.curves[i][j];
            os << N[i] << ',' << c.h[j] << ',' << p.n << ',' << p.hits << ',' << p.p << ',' << p.ci_lo << ','
               << p.ci_hi << ',' << s.seed << '\n';
        }
    auto bs = s.open("bracket.csv");
    bs << "lo,hi,estimate,widened,method,replicas,seed\n";
    bs << b.lo << ',' << b.hi << ',' << b.estimate << ',' << int(b.widened) << ",\"" << b.method << "\","
       << c.replicas << ',' << s.seed << '\n';
    for (const auto& w : b.warnings) s.warn(w);
    if (b.widened)
        s.warn("h* bracket unresolved at this replica count");
    else if (!(b.lo > 0))
        s.fail("h* bracket not inside (0, inf): [" + std::to_string(b.lo) + ", " + std::to_string(b.hi) + "]");
}

void ef_inclusion(const Suite& s) {
    const auto& c = s.cfg;
    const int N = c.N[0];
    const double h = c.h[0];
    CGParams p;
    p.d = 3;
    p.K = c.K;
    p.L = c.L;
    p.N = N;
    p.rho = c.rho;
    p.relaxed = c.relaxed_k;
    const Box B = Box::ball(Point::zero(3), N + (c.K + 1) * c.L + 2);
    const GreenOracle g(3);
    struct Out {
        bool arm = false, verified = false;
        BadnessReport bad;
    };
    std::vector<Out> out(static_cast<std::size_t>(c.replicas));
    std::vector<Task> tasks;
    for (auto [first, count] : blocks(c.replicas, 25)) {
        tasks.push_back({"replicas " + std::to_string(first) + "+" + std::to_string(count), s.seed, [&, first, count] {
                             for (std::int64_t r = first; r < first + count; ++r) {
                                 const FieldSample f = sample_bulk(B, c.R, s.seed, std::uint32_t(r), g);
                                 const auto ev = one_arm(f, h, N);
                                 out[r].arm = ev.outcome;
                                 if (!ev.outcome) continue;
                                 const LatticePath path{ev.witness, Adjacency::Nearest};
                                 const auto col = coarse_grain_d3(path, p, std::uint64_t(r));
                                 out[r].verified = verify_collection(col, path).ok();
                                 out[r].bad = classify_badness(f, col, h, c.h_prime, c.eps, c.rho);
                             }
                         }});
    }
    if (!s.run_tasks(tasks)) return;
    auto os = s.open("inclusion.csv");
    os << "replica,one_arm,n,psi_count,xi_count,E,F,E_or_F,verified,seed\n";
    auto bs = s.open("badness.csv");
    write_badness_csv_header(bs);
    std::int64_t arms = 0, covered = 0;
    for (std::size_t r = 0; r < out.size(); ++r) {
        const auto& o = out[r];
        os << r << ',' << int(o.arm);
        if (o.arm) {
            ++arms;
            covered += o.bad.E || o.bad.F;
            os << ',' << o.bad.z.size() << ',' << o.bad.psi_count << ',' << o.bad.xi_count << ',' << int(o.bad.E)
               << ',' << int(o.bad.F) << ',' << int(o.bad.E || o.bad.F) << ',' << int(o.verified);
            write_badness_csv(bs, o.bad, std::uint32_t(r), s.seed);
            if (!o.verified) s.fail("collection of replica " + std::to_string(r) + " fails re-verification");
        } else {
            os << ",,,,,,,";
        }
        os << ',' << s.seed << '\n';
    }
    if (covered != arms)
        s.fail("E or F fails on " + std::to_string(arms - covered) + " of " + std::to_string(arms) + " one-arm samples");
    if (arms == 0) s.warn("no sample with the one-arm event");
}

}  // namespace

RunManifest run(const RunConfig& cfg) {
    cfg.validate();
    RunManifest m;
    m.experiment = cfg.experiment;
    m.config = cfg.to_kv();
    m.code_version = code_version();
    const fs::path dir = allocate_run_dir(cfg.out, cfg.experiment, cfg.seed);
    m.directory = dir.string();
    m.started = iso_now();
    const Suite s{cfg, dir, m, task_seed(cfg.seed, cfg.experiment)};
    try {
        const auto& e = cfg.experiment;
        if (e == "capacity-sweep") capacity_sweep(s);
        else if (e == "field-sample") field_sample(s);
        else if (e == "one-arm-scan") one_arm_scan(s);
        else if (e == "tilt-estimate") tilt_estimate(s);
        else if (e == "coarse-grain-demo") coarse_grain_demo(s);
        else if (e == "hstar-estimate") hstar_estimate(s);
        else if (e == "ef-inclusion") ef_inclusion(s);
    } catch (const std::exception& ex) {
        m.tasks.push_back({"setup", s.seed, "failed", ex.what()});
    }
    m.complete = !m.tasks.empty() &&
                 std::all_of(m.tasks.begin(), m.tasks.end(), [](const TaskRecord& t) { return t.status == "ok"; });
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().filename() != "manifest.json") files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) m.outputs.push_back({f.filename().string(), sha256_file(f)});
    m.finished = iso_now();
    std::ofstream(dir / "manifest.json") << m.to_json() << '\n';
    return m;
}

}  // namespace gffperc::runner
