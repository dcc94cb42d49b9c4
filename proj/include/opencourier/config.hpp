#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "opencourier/assignment.hpp"
#include "opencourier/error.hpp"
#include "opencourier/geo.hpp"
#include "opencourier/instance.hpp"
#include "opencourier/money.hpp"
#include "opencourier/quoting.hpp"
#include "opencourier/registry.hpp"

namespace opencourier::config {

struct AdminToken {
    std::string token;
    std::string adminId;
};

struct HostedInstance {
    instance::InstanceConfig config;
    std::optional<registry::InstanceRecord> record;
    std::vector<AdminToken> adminTokens;
};

struct ServerConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    /// Empty means in-memory stores.
    std::string dataDir;
    std::optional<std::string> registrySource;
    std::optional<std::string> registryPersist;
    quoting::ExchangeConfig exchange;
    std::vector<HostedInstance> instances;
    /// CORS allow-list for the browser console; "*" allows any origin.
    std::vector<std::string> corsOrigins{"*"};
};

using EnvLookup = std::function<std::optional<std::string>(const std::string&)>;

inline EnvLookup process_env() {
    return [](const std::string& name) -> std::optional<std::string> {
        if (const char* v = std::getenv(name.c_str())) return std::string(v);
        return std::nullopt;
    };
}

namespace detail {

inline long long int_value(const std::string& text, const std::string& what) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(text, &used);
        if (used == text.size()) return v;
    } catch (const std::exception&) {
    }
    throw Error(ErrorCode::ValidationError, what + " must be an integer", {{"field", what}});
}

inline double number_value(const std::string& text, const std::string& what) {
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used == text.size()) return v;
    } catch (const std::exception&) {
    }
    throw Error(ErrorCode::ValidationError, what + " must be a number", {{"field", what}});
}

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
    if (!j.contains(key) || j[key].is_null()) return fallback;
    try {
        return j[key].get<T>();
    } catch (const nlohmann::json::exception&) {
        throw Error(ErrorCode::ValidationError, std::string("config field ") + key + " has the wrong type", {{"field", key}});
    }
}

}  // namespace detail

inline HostedInstance instance_from_json(const nlohmann::json& j) {
    HostedInstance h;
    auto& c = h.config;
    c.domain = detail::get_or<std::string>(j, "domain", "");
    if (!registry::detail::is_domain_name(c.domain))
        throw Error(ErrorCode::ValidationError, "instance domain must be a lowercase DNS name", {{"field", "domain"}});
    if (!j.contains("territory")) throw Error(ErrorCode::ValidationError, "instance needs a territory", {{"field", "territory"}});
    c.territory = geo::polygon_from_geojson(j["territory"]);
    c.currency = detail::get_or<std::string>(j, "currency", "USD");
    if (!is_currency_code(c.currency)) throw Error(ErrorCode::ValidationError, "unknown currency " + c.currency, {{"field", "currency"}});
    c.match.utcOffsetMinutes = detail::get_or<int>(j, "utcOffsetMinutes", 0);
    if (c.match.utcOffsetMinutes < -14 * 60 || c.match.utcOffsetMinutes > 14 * 60)
        throw Error(ErrorCode::ValidationError, "utcOffsetMinutes out of range", {{"field", "utcOffsetMinutes"}});
    if (j.contains("orderSize")) {
        c.match.smallBelowLbs = detail::get_or<double>(j["orderSize"], "smallBelowLbs", c.match.smallBelowLbs);
        c.match.mediumBelowLbs = detail::get_or<double>(j["orderSize"], "mediumBelowLbs", c.match.mediumBelowLbs);
    }
    c.lifecycle.issueGraceWindow = std::chrono::hours(detail::get_or<int>(j, "issueGraceHours", 24));
    if (j.contains("policy")) c.policy = assignment::policy_from_json(j["policy"]);
    if (j.contains("record")) h.record = registry::record_from_json(j["record"]);
    for (const auto& t : detail::get_or<nlohmann::json>(j, "adminTokens", nlohmann::json::array()))
        h.adminTokens.push_back({detail::get_or<std::string>(t, "token", ""), detail::get_or<std::string>(t, "adminId", "admin")});
    return h;
}

/// Environment variables override file values:
/// OPENCOURIER_BIND (host:port), OPENCOURIER_DATA_DIR, OPENCOURIER_UTC_OFFSET_MINUTES,
/// OPENCOURIER_MAX_ROUNDS, OPENCOURIER_STALENESS_SECONDS, OPENCOURIER_SMALL_BELOW_LBS,
/// OPENCOURIER_MEDIUM_BELOW_LBS, OPENCOURIER_MAX_ATTEMPTS.
inline void apply_env(ServerConfig& cfg, const EnvLookup& env) {
    if (auto v = env("OPENCOURIER_BIND")) {
        const auto colon = v->rfind(':');
        if (colon == std::string::npos) throw Error(ErrorCode::ValidationError, "OPENCOURIER_BIND must be host:port");
        cfg.host = v->substr(0, colon);
        cfg.port = static_cast<int>(detail::int_value(v->substr(colon + 1), "OPENCOURIER_BIND port"));
    }
    if (auto v = env("OPENCOURIER_DATA_DIR")) cfg.dataDir = *v;
    if (auto v = env("OPENCOURIER_MAX_ROUNDS")) cfg.exchange.maxRounds = static_cast<int>(detail::int_value(*v, "OPENCOURIER_MAX_ROUNDS"));
    for (auto& h : cfg.instances) {
        auto& c = h.config;
        if (auto v = env("OPENCOURIER_UTC_OFFSET_MINUTES"))
            c.match.utcOffsetMinutes = static_cast<int>(detail::int_value(*v, "OPENCOURIER_UTC_OFFSET_MINUTES"));
        if (auto v = env("OPENCOURIER_STALENESS_SECONDS"))
            c.policy.staleness = std::chrono::seconds(detail::int_value(*v, "OPENCOURIER_STALENESS_SECONDS"));
        if (auto v = env("OPENCOURIER_SMALL_BELOW_LBS")) c.match.smallBelowLbs = detail::number_value(*v, "OPENCOURIER_SMALL_BELOW_LBS");
        if (auto v = env("OPENCOURIER_MEDIUM_BELOW_LBS"))
            c.match.mediumBelowLbs = detail::number_value(*v, "OPENCOURIER_MEDIUM_BELOW_LBS");
        if (auto v = env("OPENCOURIER_MAX_ATTEMPTS"))
            c.policy.maxAttempts = static_cast<int>(detail::int_value(*v, "OPENCOURIER_MAX_ATTEMPTS"));
    }
}

inline void validate(const ServerConfig& cfg) {
    if (cfg.port < 0 || cfg.port > 65535) throw Error(ErrorCode::ValidationError, "port out of range", {{"field", "port"}});
    if (cfg.exchange.maxRounds < 1) throw Error(ErrorCode::ValidationError, "maxRounds must be >= 1", {{"field", "maxRounds"}});
    for (const auto& h : cfg.instances) {
        const auto& c = h.config;
        if (c.policy.staleness.count() < 1 || c.policy.maxAttempts < 1)
            throw Error(ErrorCode::ValidationError, "staleness and maxAttempts must be positive", {{"instance", c.domain}});
        if (!(c.match.smallBelowLbs > 0 && c.match.smallBelowLbs < c.match.mediumBelowLbs))
            throw Error(ErrorCode::ValidationError, "order-size thresholds must satisfy 0 < small < medium",
                        {{"instance", c.domain}, {"field", "orderSize"}});
        for (const auto& t : h.adminTokens)
            if (t.token.size() < 16)
                throw Error(ErrorCode::ValidationError, "admin tokens must be at least 16 characters", {{"instance", c.domain}});
    }
}

inline ServerConfig server_config_from_json(const nlohmann::json& j, const EnvLookup& env = process_env()) {
    if (!j.is_object()) throw Error(ErrorCode::ParseError, "config must be a JSON object");
    ServerConfig cfg;
    if (j.contains("bind")) {
        cfg.host = detail::get_or<std::string>(j["bind"], "host", cfg.host);
        cfg.port = detail::get_or<int>(j["bind"], "port", cfg.port);
    }
    cfg.dataDir = detail::get_or<std::string>(j, "dataDir", "");
    if (j.contains("registry")) {
        const auto& r = j["registry"];
        if (r.contains("source")) cfg.registrySource = detail::get_or<std::string>(r, "source", "");
        if (r.contains("persist")) cfg.registryPersist = detail::get_or<std::string>(r, "persist", "");
    }
    cfg.exchange.maxRounds = detail::get_or<int>(j, "maxRounds", cfg.exchange.maxRounds);
    cfg.corsOrigins = detail::get_or<std::vector<std::string>>(j, "corsOrigins", cfg.corsOrigins);
    for (const auto& i : detail::get_or<nlohmann::json>(j, "instances", nlohmann::json::array()))
        cfg.instances.push_back(instance_from_json(i));
    apply_env(cfg, env);
    validate(cfg);
    return cfg;
}

inline ServerConfig load_server_config(const std::filesystem::path& path, const EnvLookup& env = process_env()) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::SourceUnavailable, "cannot read config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCode::ParseError, std::string("config is not valid JSON: ") + e.what());
    }
    return server_config_from_json(j, env);
}

/// Registry served by a deployment: seeded from the configured source (or a
/// persisted copy) and writable, so hosted instances can register.
inline registry::Registry initial_registry(const ServerConfig& cfg) {
    registry::Registry reg;
    if (cfg.registryPersist && std::filesystem::exists(*cfg.registryPersist))
        reg = registry::load_registry_file(*cfg.registryPersist);
    else if (cfg.registrySource)
        reg = registry::load_registry(*cfg.registrySource);
    reg.sourceKind = registry::SourceKind::Service;
    return reg;
}

}  // namespace opencourier::config
