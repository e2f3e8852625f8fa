#pragma once

// Run directories and manifests. A run lives in <out>/<command>-<digest>-s<seed>
// and holds its payload files plus manifest.json. Payloads are a pure
// function of (command, resolved config, seed); only the manifest carries
// timestamps.

#include "arrowlab/commands.hpp"
#include "arrowlab/error.hpp"
#include "arrowlab/io.hpp"

#include <chrono>
#include <ctime>
#include <filesystem>
#include <optional>
#include <string>

namespace arrowlab::runner {

using io::Json;

inline constexpr const char* tool_version = "1.0.0";
inline constexpr const char* out_dir_env = "ARROWLAB_OUT";

inline std::string utc_now() {
    auto now = std::chrono::system_clock::now();
    std::time_t t = std::chrono::system_clock::to_time_t(now);
    auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[40];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
    char out[48];
    std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
    return out;
}

// Digest of the resolved config without its seed, which the manifest
// records separately.
inline std::string config_digest(const Json& resolved) {
    Json c = resolved;
    c.erase("seed");
    return io::digest(c);
}

inline std::filesystem::path default_out_dir() {
    const char* e = std::getenv(out_dir_env);
    return e && *e ? std::filesystem::path(e) : std::filesystem::path("arrowlab-out");
}

struct RunResult {
    ExitCode code = ExitCode::ok;
    std::filesystem::path dir;
    Json manifest;
    std::string message;
};

inline std::string status_name(ExitCode c) {
    switch (c) {
    case ExitCode::ok: return "pass";
    case ExitCode::validation: return "validation_error";
    case ExitCode::numerical: return "numerical_error";
    case ExitCode::acceptance: return "acceptance_failure";
    }
    return "unknown";
}

// Loads, validates, runs, and records one command. Config errors surface
// before any directory is created; later failures keep the payloads already
// written and mark the manifest.
inline RunResult run_command(const std::string& command, const std::filesystem::path& config_path,
                             const std::filesystem::path& out_dir, std::optional<std::uint64_t> seed_override) {
    Json doc;
    try {
        doc = Json::parse(io::read_file(config_path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ValidationError("config " + config_path.string() + ": not valid JSON (" + e.what() + ")");
    }
    commands::Prepared p = commands::prepare(command, doc);
    const std::uint64_t seed = seed_override ? *seed_override : p.seed;
    p.resolved["seed"] = seed;
    const std::string digest = config_digest(p.resolved);

    RunResult rr;
    rr.dir = out_dir / (command + "-" + digest.substr(0, 12) + "-s" + std::to_string(seed));
    std::filesystem::create_directories(rr.dir);
    io::Sink sink(rr.dir);

    Json m;
    m["command"] = command;
    m["run_id"] = rr.dir.filename().string();
    m["config_path"] = config_path.string();
    m["config_digest"] = digest;
    m["seed"] = seed;
    m["tool_version"] = tool_version;
    m["started_at"] = utc_now();

    commands::Outcome outcome;
    std::string failure;
    try {
        commands::execute(p, seed, sink, outcome);
        rr.code = outcome.passed() ? ExitCode::ok : ExitCode::acceptance;
        if (!outcome.passed()) {
            for (const auto& c : outcome.checks)
                if (!c.passed) failure += (failure.empty() ? "" : "; ") + c.name;
            failure = "acceptance checks failed: " + failure;
        }
    } catch (const Error& e) {
        rr.code = e.code();
        failure = command + ": " + e.what();
    } catch (const std::exception& e) {
        rr.code = ExitCode::numerical;
        failure = command + ": " + e.what();
    }

    m["finished_at"] = utc_now();
    m["status"] = status_name(rr.code);
    m["exit_code"] = static_cast<int>(rr.code);
    m["failure"] = failure.empty() ? Json(nullptr) : Json(failure);
    Json files = Json::array();
    for (const auto& [name, text] : sink.files())
        files.push_back(Json{{"name", name}, {"bytes", text.size()}, {"sha256", io::sha256_hex(text)}});
    m["files"] = files;
    m["checks"] = outcome.json();
    m["config"] = p.resolved;
    io::write_file(rr.dir / "manifest.json", io::dump(m));
    rr.manifest = m;
    rr.message = failure;
    return rr;
}

} // namespace arrowlab::runner
