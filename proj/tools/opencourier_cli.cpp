// opencourier: server, registry service, simulator and data tools.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "opencourier/config.hpp"
#include "opencourier/deployment.hpp"
#include "opencourier/disclosure.hpp"
#include "opencourier/gateway.hpp"
#include "opencourier/harness.hpp"
#include "opencourier/http_server.hpp"
#include "opencourier/verify.hpp"

namespace oc = opencourier;

namespace {

constexpr int kUsage = 2;

std::atomic<oc::http::Server*> g_server{nullptr};

void on_signal(int) {
    if (auto* s = g_server.load()) s->stop();
}

oc::Clock wall_clock() {
    return [] { return std::chrono::time_point_cast<oc::Duration>(std::chrono::system_clock::now()); };
}

std::pair<std::string, int> split_bind(const std::string& bind) {
    const auto colon = bind.rfind(':');
    if (colon == std::string::npos) throw oc::Error(oc::ErrorCode::ValidationError, "--bind must be host:port");
    return {bind.substr(0, colon), std::stoi(bind.substr(colon + 1))};
}

int serve_until_stopped(oc::gateway::Gateway& gw, oc::deployment::Deployment& dep, const std::vector<std::string>& cors,
                        const std::string& host, int port, bool ticking) {
    oc::http::Server server(gw, cors);
    const int bound = server.bind(host, port);
    if (bound < 0) {
        std::cerr << "cannot bind " << host << ":" << port << "\n";
        return 1;
    }
    g_server = &server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::atomic<bool> running{true};
    std::thread ticker;
    if (ticking) {
        ticker = std::thread([&] {
            while (running) {
                try {
                    dep.tick(dep.clock()());
                } catch (const std::exception& e) {
                    std::cerr << "tick failed: " << e.what() << "\n";
                }
                for (int i = 0; i < 10 && running; ++i) std::this_thread::sleep_for(std::chrono::milliseconds(100));
            }
        });
    }
    std::cerr << "listening on http://" << host << ":" << bound << "\n";
    server.listen();
    running = false;
    if (ticker.joinable()) ticker.join();
    g_server = nullptr;
    return 0;
}

int cmd_serve(const std::string& config_path) {
    const auto cfg = oc::config::load_server_config(config_path);
    auto reg = std::make_shared<oc::registry::RegistryService>(
        oc::config::initial_registry(cfg),
        cfg.registryPersist ? std::optional<std::filesystem::path>(*cfg.registryPersist) : std::nullopt);
    oc::SecureIdSource ids;
    auto stores = cfg.dataDir.empty() ? oc::deployment::memory_stores() : oc::deployment::file_stores(cfg.dataDir);
    oc::deployment::Deployment dep(reg, stores, ids, wall_clock(), cfg.exchange);
    dep.set_observer([](const std::string& type, const nlohmann::json& body) {
        nlohmann::json line = body;
        line["type"] = type;
        std::cerr << line.dump() << "\n";
    });
    for (const auto& h : cfg.instances) {
        dep.host(h.config, h.record);
        for (const auto& t : h.adminTokens)
            dep.install_token(t.token, {oc::deployment::PrincipalKind::Admin, t.adminId, h.config.domain, {"admin"}});
    }
    oc::gateway::Gateway gw(dep);
    return serve_until_stopped(gw, dep, cfg.corsOrigins, cfg.host, cfg.port, true);
}

int cmd_registry_serve(const std::string& source, const std::string& bind, const std::string& persist, std::string token) {
    oc::registry::Registry initial;
    if (!persist.empty() && std::filesystem::exists(persist)) initial = oc::registry::load_registry_file(persist);
    else if (!source.empty()) initial = oc::registry::load_registry(source);
    initial.sourceKind = oc::registry::SourceKind::Service;
    auto reg = std::make_shared<oc::registry::RegistryService>(
        std::move(initial), persist.empty() ? std::nullopt : std::optional<std::filesystem::path>(persist));
    oc::SecureIdSource ids;
    oc::deployment::Deployment dep(reg, oc::deployment::memory_stores(), ids, wall_clock());
    if (token.empty())
        if (const char* env = std::getenv("OPENCOURIER_REGISTRY_TOKEN")) token = env;
    if (!token.empty())
        dep.install_token(token, {oc::deployment::PrincipalKind::Admin, "registry-admin", "", {"registry:write"}});
    oc::gateway::Gateway gw(dep);
    const auto [host, port] = split_bind(bind);
    return serve_until_stopped(gw, dep, {"*"}, host, port, false);
}

int cmd_sim_run(const std::string& scenario, std::optional<std::uint64_t> seed, const std::string& out,
                const std::string& summary_out, const std::string& snapshot_out, bool over_http) {
    const auto s = oc::harness::load_scenario(scenario);
    const auto result = oc::harness::run_scenario(s, {seed, over_http});
    if (out.empty() || out == "-") {
        std::cout << result.log_text();
    } else {
        std::ofstream f(out, std::ios::binary);
        if (!f) throw oc::Error(oc::ErrorCode::SourceUnavailable, "cannot write " + out);
        f << result.log_text();
    }
    if (!summary_out.empty()) std::ofstream(summary_out, std::ios::binary) << result.summary.dump(2) << "\n";
    if (!snapshot_out.empty()) std::ofstream(snapshot_out, std::ios::binary) << result.snapshot.dump(2) << "\n";
    std::cerr << result.summary["totals"].dump() << "\n";
    return 0;
}

int cmd_sim_verify(const std::string& log_path) {
    std::ifstream in(log_path, std::ios::binary);
    if (!in) throw oc::Error(oc::ErrorCode::SourceUnavailable, "cannot read " + log_path);
    std::stringstream ss;
    ss << in.rdbuf();
    const auto report = oc::harness::verify_log_text(ss.str());
    for (const auto& v : report.violations)
        std::cout << "line " << v.line << ": " << v.rule << ": " << v.message << "\n";
    if (report.ok()) {
        std::cout << "OK " << report.events << " events\n";
        return 0;
    }
    std::cout << "FAIL " << report.violations.size() << " violation(s)\n";
    return 1;
}

int cmd_export(const std::string& data_dir, const std::string& domain, const std::string& from, const std::string& to,
               std::string salt, const std::string& out) {
    const auto path = std::filesystem::path(data_dir) / (domain + ".log");
    if (!std::filesystem::exists(path)) throw oc::Error(oc::ErrorCode::NotFound, "no store for " + domain + " in " + data_dir);
    oc::store::FileStore st(path);
    std::vector<oc::delivery::Delivery> ds;
    for (const auto& r : st.scan("delivery")) ds.push_back(oc::delivery::delivery_from_json(nlohmann::json::parse(r.payload)));
    if (salt.empty()) salt = oc::SecureIdSource{}.token();
    const auto csv = oc::disclosure::export_csv(ds, oc::disclosure::make_range(oc::parse_iso8601(from), oc::parse_iso8601(to)), salt);
    if (out.empty() || out == "-") std::cout << csv;
    else std::ofstream(out, std::ios::binary) << csv;
    return 0;
}

int cmd_routes(bool as_json) {
    auto reg = std::make_shared<oc::registry::RegistryService>(oc::registry::Registry{});
    oc::SeededIdSource ids(1);
    oc::deployment::Deployment dep(reg, oc::deployment::memory_stores(), ids, wall_clock());
    oc::gateway::Gateway gw(dep);
    nlohmann::json all = nlohmann::json::array();
    for (const auto& r : gw.routes()) {
        if (as_json) {
            all.push_back({{"method", r.method}, {"path", r.path}, {"access", oc::gateway::to_string(r.access)},
                           {"origin", oc::gateway::to_string(r.origin)}});
        } else {
            std::printf("%-7s %-62s %-16s %s\n", r.method.c_str(), r.path.c_str(), oc::gateway::to_string(r.access).c_str(),
                        oc::gateway::to_string(r.origin).c_str());
        }
    }
    if (as_json) std::cout << all.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"OpenCourier reference stack"};
    app.require_subcommand(1);

    std::string config_path;
    auto* serve = app.add_subcommand("serve", "Run a deployment hosting the configured instances");
    serve->add_option("--config", config_path, "Server config JSON")->required()->check(CLI::ExistingFile);

    auto* registry = app.add_subcommand("registry", "Registry tools");
    registry->require_subcommand(1);
    std::string reg_source, reg_bind = "127.0.0.1:8090", reg_persist, reg_token;
    auto* reg_serve = registry->add_subcommand("serve", "Serve a registry over HTTP");
    reg_serve->add_option("--source", reg_source, "Registry file or http(s) URL to seed from");
    reg_serve->add_option("--bind", reg_bind, "host:port")->capture_default_str();
    reg_serve->add_option("--persist", reg_persist, "File that keeps registry writes");
    reg_serve->add_option("--admin-token", reg_token, "Bearer token allowed to write (or OPENCOURIER_REGISTRY_TOKEN)");

    auto* sim = app.add_subcommand("sim", "Deterministic federation simulator");
    sim->require_subcommand(1);
    std::string scenario, log_out, summary_out, snapshot_out, verify_path;
    std::optional<std::uint64_t> seed;
    bool over_http = false;
    auto* run = sim->add_subcommand("run", "Run a scenario and write its event log");
    run->add_option("scenario", scenario, "Scenario JSON")->required()->check(CLI::ExistingFile);
    run->add_option("--seed", seed, "Override the scenario seed");
    run->add_option("--out", log_out, "Event log path (default stdout)");
    run->add_option("--summary", summary_out, "Write the run summary JSON here");
    run->add_option("--snapshot", snapshot_out, "Write the final state JSON here");
    run->add_flag("--over-http", over_http, "Drive the deployment through a local HTTP server");
    auto* verify = sim->add_subcommand("verify", "Check an event log against the protocol invariants");
    verify->add_option("log", verify_path, "Event log")->required()->check(CLI::ExistingFile);

    std::string data_dir, domain, from, to, salt, csv_out;
    auto* exp = app.add_subcommand("export", "Disclosure CSV straight from an instance store");
    exp->add_option("--data-dir", data_dir, "Server data directory")->required();
    exp->add_option("--instance", domain, "Instance domain")->required();
    exp->add_option("--from", from, "Range start, ISO-8601 UTC")->required();
    exp->add_option("--to", to, "Range end (exclusive), ISO-8601 UTC")->required();
    exp->add_option("--salt", salt, "Hash salt (random when omitted)");
    exp->add_option("--out", csv_out, "Output path (default stdout)");

    bool routes_json = false;
    auto* routes = app.add_subcommand("routes", "List the HTTP routes");
    routes->add_flag("--json", routes_json, "Emit JSON");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kUsage;
    }

    try {
        if (*serve) return cmd_serve(config_path);
        if (*reg_serve) return cmd_registry_serve(reg_source, reg_bind, reg_persist, reg_token);
        if (*run) return cmd_sim_run(scenario, seed, log_out, summary_out, snapshot_out, over_http);
        if (*verify) return cmd_sim_verify(verify_path);
        if (*exp) return cmd_export(data_dir, domain, from, to, salt, csv_out);
        if (*routes) return cmd_routes(routes_json);
    } catch (const oc::Error& e) {
        std::cerr << e.envelope().dump() << "\n";
        return e.code() == oc::ErrorCode::ScenarioInvalid || e.code() == oc::ErrorCode::ValidationError ||
                       e.code() == oc::ErrorCode::ParseError
                   ? kUsage
                   : 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return kUsage;
}
