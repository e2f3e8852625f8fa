#include "arrowlab/runner.hpp"

#include <CLI11.hpp>

#include <iostream>

using namespace arrowlab;

int main(int argc, char** argv) {
    CLI::App app{"arrowlab: numerical experiments on irreversibility"};
    app.set_version_flag("--version", runner::tool_version);
    app.require_subcommand(1);

    std::string config;
    std::string out;
    std::uint64_t seed = 0;
    for (const auto& name : commands::command_names()) {
        CLI::App* sub = app.add_subcommand(name, "run the " + name + " pipeline");
        sub->add_option("--config", config, "JSON config file")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", out, std::string("output directory (default $") + runner::out_dir_env +
                                          " or ./arrowlab-out)");
        sub->add_option("--seed", seed, "master seed (default: the config's seed)");
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : static_cast<int>(ExitCode::validation);
    }
    CLI::App* sub = app.get_subcommands().front();
    std::optional<std::uint64_t> seed_override;
    if (sub->count("--seed")) seed_override = seed;
    const std::filesystem::path out_dir = out.empty() ? runner::default_out_dir() : std::filesystem::path(out);

    try {
        runner::RunResult r = runner::run_command(sub->get_name(), config, out_dir, seed_override);
        std::cout << r.dir.string() << "\n";
        for (const auto& c : r.manifest["checks"])
            std::cout << (c["passed"].get<bool>() ? "  ok    " : "  FAIL  ") << c["name"].get<std::string>() << " = "
                      << io::format_double(c["value"].is_number() ? c["value"].get<double>() : NAN) << " "
                      << c["relation"].get<std::string>() << " " << io::format_double(c["limit"].get<double>())
                      << "\n";
        std::cout << "status: " << r.manifest["status"].get<std::string>() << "\n";
        if (!r.message.empty()) std::cerr << r.message << "\n";
        return static_cast<int>(r.code);
    } catch (const Error& e) {
        std::cerr << sub->get_name() << ": " << e.what() << "\n";
        return static_cast<int>(e.code());
    } catch (const std::exception& e) {
        std::cerr << sub->get_name() << ": " << e.what() << "\n";
        return static_cast<int>(ExitCode::validation);
    }
}
