#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "gffperc/runner.hpp"

namespace rn = gffperc::runner;

namespace {

struct Overrides {
    std::string config;
    std::uint64_t seed = 0;
    std::string out;
    int workers = 0;
    bool relaxed_k = false;
    bool dry_run = false;
    std::vector<std::string> set;
};

rn::RunConfig assemble(const std::string& suite, const Overrides& o, CLI::App& sub) {
    rn::RunConfig base;
    if (!o.config.empty()) {
        base = rn::RunConfig::load(o.config);
        if (base.experiment != suite)
            throw rn::ConfigError({o.config + ": experiment is '" + base.experiment + "', not '" + suite + "'"});
    }
    base.experiment = suite;
    auto kv = base.to_kv();
    std::vector<std::string> errors;
    for (const auto& s : o.set) {
        const auto eq = s.find('=');
        const std::string k = s.substr(0, eq);
        if (eq == std::string::npos || !kv.count(k)) {
            errors.push_back("--set " + s + ": unknown key or missing '='");
            continue;
        }
        kv[k] = s.substr(eq + 1);
    }
    if (!errors.empty()) throw rn::ConfigError(errors);
    if (sub.count("--seed")) kv["seed"] = std::to_string(o.seed);
    if (sub.count("--out")) kv["out"] = o.out;
    if (sub.count("--workers")) kv["workers"] = std::to_string(o.workers);
    if (o.relaxed_k) kv["relaxed-k"] = "true";
    std::ostringstream text;
    for (const auto& [k, v] : kv)
        if (!v.empty()) text << k << " = " << v << '\n';
    std::istringstream is(text.str());
    return rn::RunConfig::parse(is, "command line");
}

int report(const rn::RunManifest& m) {
    int failed = 0;
    for (const auto& t : m.tasks)
        if (t.status != "ok") {
            ++failed;
            std::cerr << "task failed: " << t.name << ": " << t.message << '\n';
        }
    for (const auto& w : m.warnings) std::cerr << "warning: " << w << '\n';
    for (const auto& f : m.invariant_failures) std::cerr << "invariant: " << f << '\n';
    std::cout << m.directory << ": " << m.tasks.size() - failed << '/' << m.tasks.size() << " tasks ok, "
              << m.invariant_failures.size() << " invariant failures\n";
    return m.ok() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Level-set percolation experiments for the lattice Gaussian free field"};
    app.require_subcommand(1);
    Overrides o;
    std::string chosen;
    for (const auto& suite : rn::suite_names()) {
        auto* sub = app.add_subcommand(suite, "run the " + suite + " suite");
        sub->add_option("--config", o.config, "flat key = value config file")->check(CLI::ExistingFile);
        sub->add_option("--seed", o.seed, "master seed");
        sub->add_option("--out", o.out, "results root directory");
        sub->add_option("--workers", o.workers, "worker threads")->check(CLI::PositiveNumber);
        sub->add_flag("--relaxed-k", o.relaxed_k, "accept K >= 4 instead of K >= 100");
        sub->add_option("--set", o.set, "override a config key, key=value")->take_all();
        sub->add_flag("--dry-run", o.dry_run, "validate the configuration and stop");
        sub->callback([&chosen, suite] { chosen = suite; });
    }
    std::string manifest;
    std::string rerun_out;
    int rerun_workers = 1;
    auto* re = app.add_subcommand("rerun", "re-execute a manifest and compare output digests");
    re->add_option("manifest", manifest, "manifest.json of an earlier run")->required()->check(CLI::ExistingFile);
    re->add_option("--out", rerun_out, "results root directory (default: the manifest's)");
    re->add_option("--workers", rerun_workers, "worker threads")->check(CLI::PositiveNumber);
    re->callback([&chosen] { chosen = "rerun"; });
    CLI11_PARSE(app, argc, argv);

    try {
        if (chosen == "rerun") {
            const auto r = rn::rerun(manifest, rerun_out, rerun_workers);
            for (const auto& mm : r.mismatches) std::cerr << "mismatch: " << mm << '\n';
            const int rc = report(r.manifest);
            std::cout << (r.matches ? "outputs reproduced\n" : "outputs differ\n");
            return rc == 0 && r.matches ? 0 : 1;
        }
        const rn::RunConfig cfg = assemble(chosen, o, *app.get_subcommand(chosen));
        cfg.validate();
        if (o.dry_run) {
            std::cout << cfg.to_text();
            return 0;
        }
        return report(rn::run(cfg));
    } catch (const rn::ConfigError& e) {
        std::cerr << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
