#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <sstream>

#include <nlohmann/json.hpp>

#include "gffperc/digest.hpp"
#include "gffperc/runner.hpp"

#ifndef GFFPERC_CODE_VERSION
#define GFFPERC_CODE_VERSION "unknown"
#endif

namespace fs = std::filesystem;

namespace gffperc::runner {

std::string code_version() { return GFFPERC_CODE_VERSION; }

std::uint64_t task_seed(std::uint64_t master, const std::string& task) {
    const std::string hex = sha256_hex(std::to_string(master) + "/" + task).substr(0, 15);
    return std::stoull(hex, nullptr, 16);
}

fs::path allocate_run_dir(const fs::path& out, const std::string& experiment, std::uint64_t seed) {
    fs::create_directories(out);
    for (int i = 0; i < 1000; ++i) {
        char buf[16];
        std::snprintf(buf, sizeof buf, "%03d", i);
        const fs::path dir = out / (experiment + "-" + std::to_string(seed) + "-" + buf);
        // create_directory is false when it already exists, so runs never share a directory
        if (fs::create_directory(dir)) {
            std::ofstream(out / "latest") << dir.filename().string() << '\n';
            return dir;
        }
    }
    throw std::runtime_error("allocate_run_dir: 1000 runs of " + experiment + " with seed " + std::to_string(seed));
}

std::string RunManifest::to_json() const {
    nlohmann::json j;
    j["schema_version"] = schema;
    j["experiment"] = experiment;
    j["config"] = config;
    j["code_version"] = code_version;
    auto tj = nlohmann::json::array();
    for (const auto& t : tasks)
        tj.push_back({{"name", t.name}, {"seed", t.seed}, {"status", t.status}, {"message", t.message}});
    j["tasks"] = tj;
    j["started"] = started;
    j["finished"] = finished;
    auto oj = nlohmann::json::array();
    for (const auto& o : outputs) oj.push_back({{"file", o.file}, {"sha256", o.sha256}});
    j["outputs"] = oj;
    j["invariant_failures"] = invariant_failures;
    j["warnings"] = warnings;
    j["directory"] = directory;
    j["complete"] = complete;
    return j.dump(2);
}

RunManifest RunManifest::from_json(const std::string& text) {
    const auto j = nlohmann::json::parse(text);
    RunManifest m;
    m.schema = j.at("schema_version").get<std::string>();
    if (m.schema != kManifestSchema) throw std::runtime_error("manifest: unsupported schema " + m.schema);
    m.experiment = j.at("experiment").get<std::string>();
    m.config = j.at("config").get<std::map<std::string, std::string>>();
    m.code_version = j.value("code_version", "");
    for (const auto& t : j.at("tasks"))
        m.tasks.push_back({t.at("name").get<std::string>(), t.at("seed").get<std::uint64_t>(),
                           t.at("status").get<std::string>(), t.value("message", "")});
    m.started = j.value("started", "");
    m.finished = j.value("finished", "");
    for (const auto& o : j.at("outputs"))
        m.outputs.push_back({o.at("file").get<std::string>(), o.at("sha256").get<std::string>()});
    m.invariant_failures = j.value("invariant_failures", std::vector<std::string>{});
    m.warnings = j.value("warnings", std::vector<std::string>{});
    m.directory = j.value("directory", "");
    m.complete = j.value("complete", false);
    return m;
}

RerunResult rerun(const fs::path& manifest_path, const std::string& out_override, int workers) {
    std::ifstream is(manifest_path);
    if (!is) throw std::runtime_error("rerun: cannot open " + manifest_path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    const RunManifest old = RunManifest::from_json(ss.str());
    std::ostringstream text;
    for (const auto& [k, v] : old.config)
        if (!v.empty()) text << k << " = " << v << '\n';
    std::istringstream cs(text.str());
    RunConfig cfg = RunConfig::parse(cs, manifest_path.string());
    if (!out_override.empty()) cfg.out = out_override;
    cfg.workers = workers;

    RerunResult r;
    r.manifest = run(cfg);
    std::map<std::string, std::string> fresh;
    for (const auto& o : r.manifest.outputs) fresh[o.file] = o.sha256;
    for (const auto& o : old.outputs) {
        const auto it = fresh.find(o.file);
        if (it == fresh.end())
            r.mismatches.push_back(o.file + ": missing");
        else if (it->second != o.sha256)
            r.mismatches.push_back(o.file + ": digest differs");
    }
    if (fresh.size() != old.outputs.size()) r.mismatches.push_back("output file sets differ");
    r.matches = r.mismatches.empty();
    return r;
}

}  // namespace gffperc::runner
