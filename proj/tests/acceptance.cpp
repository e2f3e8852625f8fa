// Runs the bundled configs and reports one PASS/FAIL line per acceptance
// criterion. Exit status is nonzero if any criterion fails.

#include "arrowlab/commands.hpp"

#include <chrono>
#include <cstdio>
#include <functional>
#include <map>
#include <string>
#include <vector>

namespace {

using namespace arrowlab;

struct Run {
    commands::Outcome outcome;
    double seconds = 0;
    std::string error;
};

struct Criterion {
    int id;
    std::string title;
    std::string command;
    std::string config;
    double max_seconds;
    std::function<bool(const std::string&)> selects;  // checks owned by this criterion
};

Run run_config(const std::string& command, const std::string& file) {
    Run r;
    auto t0 = std::chrono::steady_clock::now();
    try {
        io::Json doc = io::Json::parse(io::read_file(std::string(ARROWLAB_CONFIG_DIR) + "/" + file));
        commands::Prepared p = commands::prepare(command, doc);
        io::Sink sink;
        commands::execute(p, p.seed, sink, r.outcome);
    } catch (const std::exception& e) {
        r.error = e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

bool all(const std::string&) { return true; }
bool starts(const std::string& s, const std::string& prefix) { return s.rfind(prefix, 0) == 0; }

} // namespace

int main() {
    const std::vector<Criterion> criteria{
        {1, "entropy inequalities", "entropy-suite", "entropy_suite.json", 60, all},
        {2, "entropy production identity", "thermo-evolve", "contact_a.json", 120,
         [](const std::string& n) { return !starts(n, "clausius_"); }},
        {3, "Clausius heat flow direction", "thermo-evolve", "contact_a.json", 120,
         [](const std::string& n) { return starts(n, "clausius_"); }},
        {4, "Carnot bound", "thermo-carnot", "engine_b.json", 300, all},
        {5, "quasi-static work", "thermo-sweep", "sweep_c.json", 300, all},
        {6, "Brownian diffusion", "qbm-run", "qbm_k.json", 600, all},
        {7, "friction statics", "friction-curve", "friction_g.json", 300, all},
        {8, "friction dynamics", "friction-evolve", "decay_3d.json", 900, all},
        {9, "subsonic Bogoliubov medium", "friction-curve", "bogoliubov.json", 120, all},
        {10, "collapse histories", "eth-run", "eth.json", 120, all},
    };

    std::map<std::string, Run> runs;
    int failed = 0;
    for (const auto& c : criteria) {
        auto it = runs.find(c.config);
        if (it == runs.end()) it = runs.emplace(c.config, run_config(c.command, c.config)).first;
        const Run& r = it->second;

        std::string failing;
        int owned = 0;
        for (const auto& ch : r.outcome.checks) {
            if (!c.selects(ch.name)) continue;
            ++owned;
            if (!ch.passed) failing += (failing.empty() ? "" : ", ") + ch.name;
        }
        bool ok = r.error.empty() && owned > 0 && failing.empty() && r.seconds <= c.max_seconds;
        failed += !ok;

        std::string detail;
        if (!r.error.empty()) detail = "error: " + r.error;
        else if (owned == 0) detail = "no checks ran";
        else if (!failing.empty()) detail = "failing: " + failing;
        if (r.seconds > c.max_seconds)
            detail += std::string(detail.empty() ? "" : "; ") + "runtime over " + std::to_string(int(c.max_seconds)) + " s";
        std::printf("criterion %2d %s  %s (%d checks, %.1f s)%s%s\n", c.id, ok ? "PASS" : "FAIL", c.title.c_str(),
                    owned, r.seconds, detail.empty() ? "" : " ", detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
