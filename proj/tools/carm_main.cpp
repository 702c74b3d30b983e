#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "httplib.h"
#include "json.hpp"

#include "carm/error.hpp"
#include "carm/harness.hpp"
#include "carm/http_api.hpp"

namespace {

int cmd_run(const std::string& scenario_path, const carm::RunConfig& config, double noise,
            const std::string& out_dir) {
    carm::Scenario scenario = carm::Scenario::load_file(scenario_path);
    carm::RunConfig effective = config;
    if (noise >= 0.0) effective.noise_epsilon = noise;

    carm::RunReport report = carm::run_scenario(scenario, effective);
    carm::write_outputs(report, out_dir);

    std::cout << "scenario '" << report.scenario << "' seed " << report.seed << " ticks " << report.ticks
              << "\n"
              << "conflicts " << report.conflicts.size() << ", escalations " << report.escalations.size()
              << ", resolutions " << report.resolutions.size() << ", unresolved "
              << report.unresolved_escalations << "\n"
              << "wrote " << out_dir << "/report.json, metrics.csv, timeline.csv\n";
    for (const std::string& anomaly : report.anomalies) std::cout << "note: " << anomaly << "\n";
    return report.unresolved_escalations > 0 ? 2 : 0;
}

int cmd_agent_apply(const std::string& file, const std::string& controller) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw carm::Error(carm::Err::IoFailure, "cannot read '" + file + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    nlohmann::json doc = nlohmann::json::parse(buffer.str(), nullptr, false);
    if (doc.is_discarded()) {
        throw carm::Error(carm::Err::UnknownField, "'" + file + "' is not valid JSON");
    }

    auto [host, port] = carm::split_listen_address(controller);
    httplib::Client client(host, port);
    auto res = client.Post("/agents", doc.dump(), "application/json");
    if (!res) {
        throw carm::Error(carm::Err::ConnectionFailure, "controller at '" + controller + "' unreachable");
    }
    if (res->status != 201) {
        std::cerr << res->body << "\n";
        return 1;
    }
    std::cout << nlohmann::json::parse(res->body).at("id").get<std::uint64_t>() << "\n";
    return 0;
}

int cmd_serve(const std::string& listen, const std::string& registry_dir) {
    namespace fs = std::filesystem;
    auto [host, port] = carm::split_listen_address(listen);

    carm::ModelRegistry registry;
    if (fs::exists(fs::path(registry_dir) / "manifest.json")) {
        registry = carm::ModelRegistry::load(registry_dir);
        std::cout << "loaded registry from " << registry_dir << " (" << registry.specialized_names().size()
                  << " specialized models)\n";
    } else {
        registry = carm::ModelRegistry(carm::bootstrap_meta());
        std::error_code ec;
        fs::create_directories(registry_dir, ec);
        if (ec) {
            throw carm::Error(carm::Err::IoFailure,
                              "cannot create '" + registry_dir + "': " + ec.message());
        }
        registry.save(registry_dir);
        std::cout << "initialized registry at " << registry_dir << "\n";
    }

    carm::AgentStore store;
    // Logical clock for a live controller: one tick per mutating request.
    auto clock = std::make_shared<std::atomic<long>>(0);
    carm::ControllerServer server(store, registry, [clock] { return clock->fetch_add(1) + 1; },
                                  registry_dir);
    std::cout << "controller listening on " << host << ":" << port << "\n";
    if (!server.listen(host, port)) {
        throw carm::Error(carm::Err::ConnectionFailure,
                          "cannot listen on '" + listen + "' (port in use?)");
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"carm: declarative resource agents with conflict-aware reconciliation"};
    app.set_config("--config", "", "INI file with default flag values (flags take precedence)");
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "Run a scenario end to end and write report/metrics/timeline");
    std::string scenario_path;
    std::string out_dir = "out";
    carm::RunConfig config;
    double noise = -1.0;
    run->add_option("--scenario", scenario_path, "Scenario JSON file")->required();
    run->add_option("--seed", config.seed, "Simulation seed");
    run->add_option("--ticks", config.ticks, "Horizon in ticks")->check(CLI::NonNegativeNumber);
    run->add_option("--out", out_dir, "Output directory");
    run->add_option("--interval", config.watcher.interval_ticks, "Reconcile every N ticks")
        ->check(CLI::PositiveNumber);
    run->add_option("--spec-conflict-threshold", config.watcher.spec_conflict_threshold,
                    "Consecutive reapplications before a specification conflict")
        ->check(CLI::PositiveNumber);
    run->add_option("--latency-degradation-factor", config.watcher.latency_degradation_factor,
                    "Latency ratio over baseline that counts as degradation");
    run->add_option("--baseline-window", config.watcher.baseline_window, "Observation window in ticks")
        ->check(CLI::PositiveNumber);
    run->add_option("--tolerance", config.watcher.tolerance, "Relative drift tolerance on limits");
    run->add_option("--noise-epsilon", noise, "Override the scenario demand noise (0 disables noise)")
        ->check(CLI::Range(0.0, 0.999));

    auto* repro = app.add_subcommand("reproduce", "Re-run a bundled experiment and check its figures");
    std::string experiment;
    repro->add_option("experiment", experiment, "One of table1, table2, timeline")->required();

    auto* agent = app.add_subcommand("agent", "Agent operations against a running controller");
    auto* apply = agent->add_subcommand("apply", "POST an agent spec file to the controller");
    std::string spec_file;
    std::string controller = "127.0.0.1:8080";
    apply->add_option("-f,--file", spec_file, "Agent spec JSON file")->required();
    apply->add_option("--controller", controller, "Controller host:port");
    agent->require_subcommand(1);

    auto* serve = app.add_subcommand("serve", "Run the controller as a long-lived service");
    std::string listen = "127.0.0.1:8080";
    std::string registry_dir;
    serve->add_option("--listen", listen, "Listen address host:port");
    serve->add_option("--registry", registry_dir, "Model registry directory (created when missing)")
        ->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) return cmd_run(scenario_path, config, noise, out_dir);
        if (*repro) return carm::reproduce(experiment, std::cout);
        if (*apply) return cmd_agent_apply(spec_file, controller);
        if (*serve) return cmd_serve(listen, registry_dir);
    } catch (const carm::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
