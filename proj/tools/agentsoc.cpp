#include <csignal>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "agentsoc/api.hpp"
#include "agentsoc/config.hpp"
#include "agentsoc/fixture.hpp"
#include "agentsoc/pipeline.hpp"

using namespace agentsoc;

namespace {

api::HttpServer* g_server = nullptr;

void on_signal(int) {
    if (g_server) g_server->stop();
}

config::Overrides parse_sets(const std::vector<std::string>& sets) {
    config::Overrides out;
    for (const auto& s : sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ConfigError("--set expects section.key=value, got '" + s + "'");
        out[trim(s.substr(0, eq))] = trim(s.substr(eq + 1));
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Closed-loop SOC triage and response engine"};
    app.require_subcommand(1);

    std::string events, snapshot, out, config_path;
    bool live = false, print_json = false;
    int workers = -1;
    std::vector<std::string> sets;
    auto* run = app.add_subcommand("run", "Run a batch of authentication events through every stage");
    run->add_option("--events", events, "LANL-format event file")->required();
    run->add_option("--snapshot", snapshot, "Knowledge snapshot JSON")->required();
    run->add_flag("--live", live, "Apply approved playbooks to the knowledge store (default: dry-run)");
    run->add_option("--out", out, "Run directory for the journal, audit log and reports");
    run->add_option("--config", config_path, "Config file");
    run->add_option("--workers", workers, "Concurrent cycles (default: logical CPUs)");
    run->add_option("--set", sets, "Override a config key, section.key=value");
    run->add_flag("--json", print_json, "Print the report as JSON instead of the text table");

    std::uint64_t seed = fixture::kDefaultSeed;
    std::string fixture_out;
    auto* fix = app.add_subcommand("fixture", "Write the synthetic 50-node fixture and data files");
    fix->add_option("--seed", seed, "Random seed");
    fix->add_option("--out", fixture_out, "Output directory")->required();

    std::string serve_config, journal, bind;
    int port = -1;
    auto* serve = app.add_subcommand("serve", "Serve the HTTP API over a run journal");
    serve->add_option("--config", serve_config, "Config file ([api] section)");
    serve->add_option("--journal", journal, "Run directory (overrides api.journal)");
    serve->add_option("--bind", bind, "Bind address (overrides api.bind)");
    serve->add_option("--port", port, "Port (overrides api.port)");
    serve->add_option("--set", sets, "Override a config key, section.key=value");

    std::string report_dir;
    auto* report = app.add_subcommand("report", "Render the report of a finished run");
    report->add_option("run-dir", report_dir, "Run directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            auto flags = parse_sets(sets);
            if (live) flags["pipeline.live"] = "true";
            if (workers >= 0) flags["pipeline.workers"] = std::to_string(workers);
            pipeline::BatchOptions opts;
            opts.events = events;
            opts.snapshot = snapshot;
            if (!out.empty()) opts.out = out;
            opts.config = config::load(config_path, flags);
            const auto result = pipeline::run_batch(opts);
            if (print_json)
                std::cout << result.report.dump(2) << "\n";
            else
                std::cout << pipeline::render_text(result.report);
            if (result.failures > 0) {
                std::cerr << result.failures << " cycle(s) failed\n";
                return 2;
            }
            return 0;
        }
        if (*fix) {
            fixture::write_fixture(fixture_out, seed);
            std::cerr << "fixture written to " << fixture_out << "\n";
            return 0;
        }
        if (*serve) {
            auto flags = parse_sets(sets);
            if (!journal.empty()) flags["api.journal"] = journal;
            if (!bind.empty()) flags["api.bind"] = bind;
            if (port >= 0) flags["api.port"] = std::to_string(port);
            const auto cfg = config::load(serve_config, flags);
            if (cfg.api.journal.empty()) throw ConfigError("api.journal is not set (use [api] journal or --journal)");
            api::Service service(cfg.api.journal, cfg.api.token);
            api::HttpServer server(service);
            const int bound = server.bind(cfg.api.bind, cfg.api.port);
            g_server = &server;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            std::cerr << "listening on " << cfg.api.bind << ":" << bound << "\n";
            server.run();
            g_server = nullptr;
            return 0;
        }
        if (*report) {
            const std::filesystem::path dir = report_dir;
            std::ifstream in(dir / "report.json");
            if (!std::filesystem::is_directory(dir) || !in)
                throw Error("no run report in " + dir.string());
            std::cout << pipeline::render_text(json::parse(in));
            return 0;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
