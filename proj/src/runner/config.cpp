#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <boost/algorithm/string.hpp>
#include <boost/lexical_cast.hpp>
#include <boost/program_options.hpp>

#include "gffperc/coarse_grain.hpp"
#include "gffperc/runner.hpp"

namespace po = boost::program_options;

namespace gffperc::runner {

namespace {

const std::vector<std::string> kSuites = {"capacity-sweep", "field-sample",  "one-arm-scan", "tilt-estimate",
                                          "coarse-grain-demo", "hstar-estimate", "ef-inclusion"};

template <class T>
std::vector<T> split_list(const std::string& key, const std::string& s, std::vector<std::string>& errors) {
    std::vector<T> out;
    std::vector<std::string> parts;
    boost::split(parts, s, boost::is_any_of(","));
    for (auto& p : parts) {
        boost::trim(p);
        if (p.empty()) continue;
        try {
            out.push_back(boost::lexical_cast<T>(p));
        } catch (const boost::bad_lexical_cast&) {
            errors.push_back(key + ": cannot parse '" + p + "'");
        }
    }
    return out;
}

template <class T>
std::string join(const std::vector<T>& v) {
    std::ostringstream os;
    os << std::setprecision(17);
    for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
    return os.str();
}

std::string num(double x) {
    std::ostringstream os;
    os << std::setprecision(17) << x;
    return os.str();
}

}  // namespace

const std::vector<std::string>& suite_names() { return kSuites; }

ConfigError::ConfigError(std::vector<std::string> errors)
    : std::runtime_error([&] {
          std::string m = "invalid configuration:";
          for (const auto& e : errors) m += "\n  - " + e;
          return m;
      }()),
      errors_(std::move(errors)) {}

RunConfig RunConfig::parse(std::istream& is, const std::string& source) {
    RunConfig c;
    std::string N, h, domain, a, relaxed = "false";
    po::options_description desc;
    desc.add_options()
        ("experiment", po::value(&c.experiment)->required())
        ("d", po::value(&c.d))
        ("N", po::value(&N))
        ("L", po::value(&c.L))
        ("K", po::value(&c.K))
        ("R", po::value(&c.R))
        ("nout-factor", po::value(&c.nout_factor))
        ("h", po::value(&h))
        ("h-prime", po::value(&c.h_prime))
        ("eps", po::value(&c.eps))
        ("rho", po::value(&c.rho))
        ("delta", po::value(&c.delta))
        ("replicas", po::value(&c.replicas))
        ("seed", po::value(&c.seed))
        ("out", po::value(&c.out))
        ("workers", po::value(&c.workers))
        ("relaxed-k", po::value(&relaxed))
        ("domain", po::value(&domain))
        ("lambda-eps", po::value(&c.lambda_eps))
        ("drift", po::value(&c.drift))
        ("hstar-lo", po::value(&c.hstar_lo))
        ("hstar-hi", po::value(&c.hstar_hi))
        ("a", po::value(&a))
        ("c-btis", po::value(&c.c_btis))
        ("u-margin", po::value(&c.u_margin))
        ("law", po::value(&c.law))
        ("porous-paths", po::value(&c.porous_paths));
    po::variables_map vm;
    try {
        po::store(po::parse_config_file(is, desc, false), vm);
        po::notify(vm);
    } catch (const po::error& e) {
        throw ConfigError({source + ": " + e.what()});
    }
    std::vector<std::string> errors;
    if (vm.count("N")) c.N = split_list<int>("N", N, errors);
    if (vm.count("h")) c.h = split_list<double>("h", h, errors);
    if (vm.count("a")) c.a = split_list<double>("a", a, errors);
    if (vm.count("domain")) c.domain = split_list<std::string>("domain", domain, errors);
    if (relaxed == "true" || relaxed == "1")
        c.relaxed_k = true;
    else if (relaxed != "false" && relaxed != "0")
        errors.push_back("relaxed-k: expected true or false");
    if (!errors.empty()) throw ConfigError(errors);
    return c;
}

RunConfig RunConfig::load(const std::filesystem::path& p) {
    std::ifstream is(p);
    if (!is) throw ConfigError({"cannot open " + p.string()});
    return parse(is, p.string());
}

std::map<std::string, std::string> RunConfig::to_kv() const {
    return {{"experiment", experiment},
            {"d", std::to_string(d)},
            {"N", join(N)},
            {"L", std::to_string(L)},
            {"K", std::to_string(K)},
            {"R", std::to_string(R)},
            {"nout-factor", std::to_string(nout_factor)},
            {"h", join(h)},
            {"h-prime", num(h_prime)},
            {"eps", num(eps)},
            {"rho", num(rho)},
            {"delta", num(delta)},
            {"replicas", std::to_string(replicas)},
            {"seed", std::to_string(seed)},
            {"out", out},
            {"workers", std::to_string(workers)},
            {"relaxed-k", relaxed_k ? "true" : "false"},
            {"domain", join(domain)},
            {"lambda-eps", num(lambda_eps)},
            {"drift", num(drift)},
            {"hstar-lo", num(hstar_lo)},
            {"hstar-hi", num(hstar_hi)},
            {"a", join(a)},
            {"c-btis", num(c_btis)},
            {"u-margin", std::to_string(u_margin)},
            {"law", law},
            {"porous-paths", std::to_string(porous_paths)}};
}

std::string RunConfig::to_text() const {
    std::ostringstream os;
    for (const auto& [k, v] : to_kv())
        if (!v.empty()) os << k << " = " << v << '\n';
    return os.str();
}

void RunConfig::validate() const {
    std::vector<std::string> e;
    const auto& s = kSuites;
    if (std::find(s.begin(), s.end(), experiment) == s.end()) {
        e.push_back("experiment: unknown suite '" + experiment + "'");
        throw ConfigError(e);
    }
    if (replicas <= 0 && experiment != "capacity-sweep") e.push_back("replicas: must be positive");
    if (workers < 1) e.push_back("workers: must be at least 1");
    if (N.empty()) e.push_back("N: at least one size required");
    if (std::any_of(N.begin(), N.end(), [](int n) { return n < 1; })) e.push_back("N: sizes must be positive");
    if (R < 1) e.push_back("R: must be at least 1");
    if (L < 1) e.push_back("L: must be at least 1");

    const bool d34 = d == 3 || d == 4;
    if (experiment == "capacity-sweep") {
        if (!d34) e.push_back("d: capacity-sweep supports d = 3, 4");
        if (std::any_of(N.begin(), N.end(), [](int n) { return n < 2; })) e.push_back("N: sizes must be >= 2");
    } else if (experiment == "field-sample") {
        if (d < 1 || d > 4) e.push_back("d: field-sample supports d = 1..4");
        if (law != "bulk" && law != "dirichlet") e.push_back("law: expected bulk or dirichlet");
        if (N.size() != 1) e.push_back("N: field-sample takes one size");
    } else if (experiment == "one-arm-scan") {
        if (d != 3) e.push_back("d: one-arm-scan requires d = 3");
        if (h.empty()) e.push_back("h: at least one level required");
        if (!(hstar_lo < hstar_hi)) e.push_back("hstar-lo/hstar-hi: need a bracket lo < hi");
        for (double x : h)
            if (x >= hstar_lo && x <= hstar_hi) e.push_back("h: level " + num(x) + " lies in the h* bracket");
        if (nout_factor < 2) e.push_back("nout-factor: must be at least 2");
    } else if (experiment == "tilt-estimate") {
        if (!d34) e.push_back("d: tilt-estimate supports d = 3, 4");
        if (h.empty()) e.push_back("h: at least one level required");
        if (N.size() != 1) e.push_back("N: tilt-estimate takes one tube length");
        if (delta < 0) e.push_back("delta: must be >= 0");
        if (replicas < 2) e.push_back("replicas: importance sampling needs at least 2");
    } else if (experiment == "coarse-grain-demo") {
        if (!d34) e.push_back("d: coarse-grain-demo supports d = 3, 4");
        for (const auto& n : N) {
            for (const auto& dn : domain) {
                CGParams p;
                p.d = d;
                p.K = K;
                p.L = L;
                p.N = n;
                p.rho = rho;
                p.relaxed = relaxed_k;
                try {
                    p.domain.kind = lambda_from_string(dn);
                    p.domain.eps = lambda_eps;
                    p.validate();
                } catch (const std::exception& ex) {
                    e.push_back(std::string("N=") + std::to_string(n) + " domain=" + dn + ": " + ex.what());
                }
            }
        }
        if (!(drift >= 0 && drift <= 1)) e.push_back("drift: must lie in [0, 1]");
    } else if (experiment == "hstar-estimate") {
        if (!d34) e.push_back("d: hstar-estimate requires d = 3 or 4");
        if (N.size() < 3) e.push_back("N: at least 3 sizes required");
        if (h.size() < 2) e.push_back("h: grid of at least 2 levels required");
        if (!std::is_sorted(h.begin(), h.end())) e.push_back("h: grid must be increasing");
    } else if (experiment == "ef-inclusion") {
        if (d != 3) e.push_back("d: ef-inclusion requires d = 3");
        if (h.size() != 1) e.push_back("h: ef-inclusion takes one level");
        if (!h.empty() && !(h[0] > h_prime)) e.push_back("h-prime: must be below h");
        if (!h.empty() && !(eps > 0 && eps < h[0] - h_prime)) e.push_back("eps: must lie in (0, h - h-prime)");
        if (!(rho > 0 && rho < 1)) e.push_back("rho: must lie in (0, 1)");
        if (N.size() != 1) e.push_back("N: ef-inclusion takes one size");
        for (const auto& n : N) {
            CGParams p;
            p.d = 3;
            p.K = K;
            p.L = L;
            p.N = n;
            p.rho = rho;
            p.relaxed = relaxed_k;
            try {
                p.validate();
            } catch (const std::exception& ex) {
                e.push_back(ex.what());
            }
        }
    }
    if (!e.empty()) throw ConfigError(e);
}

}  // namespace gffperc::runner
