#ifndef GFFPERC_RUNNER_HPP
#define GFFPERC_RUNNER_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "gffperc/excursion.hpp"
#include "gffperc/green.hpp"

namespace gffperc::runner {

inline constexpr const char* kManifestSchema = "gffperc.manifest/1";

const std::vector<std::string>& suite_names();

// Itemized validation failure.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(std::vector<std::string> errors);
    const std::vector<std::string>& errors() const { return errors_; }

private:
    std::vector<std::string> errors_;
};

struct RunConfig {
    std::string experiment;
    int d = 3;
    std::vector<int> N;
    int L = 1;
    int K = 4;
    int R = 2;
    int nout_factor = 2;               // truncated one-arm: N_out = factor * N
    std::vector<double> h;
    double h_prime = 0.0;
    double eps = 0.5;                  // badness margin
    double rho = 0.25;
    double delta = 0.0;
    std::int64_t replicas = 0;
    std::uint64_t seed = 1;
    std::string out = "out";
    int workers = 1;
    bool relaxed_k = false;
    std::vector<std::string> domain{"ball"};
    double lambda_eps = 0.25;          // punctured ball
    double drift = 0.5;
    double hstar_lo = 0.0, hstar_hi = 0.0;
    std::vector<double> a{1.0, 1.5};
    double c_btis = 1.0;
    int u_margin = 0;                  // tilt box: tube expanded by this (0: N/2)
    std::string law = "bulk";          // field-sample: bulk | dirichlet
    int porous_paths = 1;

    // Flat key = value text; unknown keys and malformed values are errors.
    static RunConfig parse(std::istream& is, const std::string& source = "config");
    static RunConfig load(const std::filesystem::path& p);
    // Canonical key = value lines, parseable by parse().
    std::map<std::string, std::string> to_kv() const;
    std::string to_text() const;
    // Throws ConfigError listing every violated precondition of the experiment.
    void validate() const;
};

struct TaskRecord {
    std::string name;
    std::uint64_t seed = 0;
    std::string status = "pending";    // ok | failed | pending
    std::string message;
};

struct OutputDigest {
    std::string file;
    std::string sha256;
};

struct RunManifest {
    std::string schema = kManifestSchema;
    std::string experiment;
    std::map<std::string, std::string> config;
    std::string code_version;
    std::vector<TaskRecord> tasks;
    std::string started, finished;     // ISO 8601 UTC
    std::vector<OutputDigest> outputs;
    std::vector<std::string> invariant_failures;
    std::vector<std::string> warnings;
    std::string directory;
    bool complete = false;

    bool ok() const { return complete && invariant_failures.empty(); }
    std::string to_json() const;
    static RunManifest from_json(const std::string& text);
};

std::string code_version();
std::uint64_t task_seed(std::uint64_t master, const std::string& task);

// out/<experiment>-<seed>-<NNN>, never reused; out/latest names it.
std::filesystem::path allocate_run_dir(const std::filesystem::path& out, const std::string& experiment,
                                       std::uint64_t seed);

RunManifest run(const RunConfig& cfg);
// Re-executes a manifest's config into a fresh directory; `matches` tells
// whether every output digest is reproduced.
struct RerunResult {
    RunManifest manifest;
    bool matches = false;
    std::vector<std::string> mismatches;
};
RerunResult rerun(const std::filesystem::path& manifest_path, const std::string& out_override = {},
                  int workers = 1);

// ---- analysis shared with the acceptance binary ----

struct LineFit {
    double slope = 0.0, se = 0.0, intercept = 0.0;
    int points = 0;
};
LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y);

// Per replica: one_arm_thresholds up to n_max on a bulk sample of B_{n_max}.
std::vector<std::vector<double>> arm_thresholds(int n_max, int R, std::int64_t replicas, std::uint64_t seed,
                                                const GreenOracle& g, std::uint32_t first_replica = 0);
// Per replica and size: face-crossing threshold of B_N (axis 0), one bulk sample of B_{max N} each.
std::vector<std::vector<double>> face_thresholds(const std::vector<int>& sizes, int R, std::int64_t replicas,
                                                 std::uint64_t seed, const GreenOracle& g);

struct HstarBracket {
    double lo = 0.0, hi = 0.0, estimate = 0.0;
    bool widened = false;
    std::string method = "face-crossing curves of consecutive sizes: sign change of the difference, widened over the 2 SE band";
    std::vector<std::string> warnings;
    // Curves: p[size][h] = fraction of replicas crossing at level h.
    std::vector<std::vector<ProportionEstimate>> curves;
};
HstarBracket hstar_bracket(const std::vector<int>& sizes, const std::vector<double>& h_grid,
                           const std::vector<std::vector<double>>& thresholds);

struct ScanCell {
    double h = 0.0;
    int N = 0, N_out = 0;
    std::string event;                 // one_arm | truncated_one_arm
    ProportionEstimate p;
    bool flagged = false;              // no hits
};
struct ScanFit {
    double h = 0.0;
    std::string event;
    LineFit fit;                       // -log p against N / log N
    double reference = 0.0;            // (pi/6)(h - hstar)^2
};
std::vector<ScanCell> scan_cells(const std::vector<std::vector<double>>& arm, const std::vector<int>& sizes,
                                 const std::vector<double>& h, double hstar_lo, double hstar_hi, int nout_factor);
std::vector<ScanFit> scan_fits(const std::vector<ScanCell>& cells, double hstar);

}  // namespace gffperc::runner

#endif
