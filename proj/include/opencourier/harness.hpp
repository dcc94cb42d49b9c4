#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "opencourier/deployment.hpp"
#include "opencourier/disclosure.hpp"
#include "opencourier/gateway.hpp"
#include "opencourier/http_server.hpp"
#include "opencourier/quoting.hpp"
#include "opencourier/registry.hpp"

namespace opencourier::harness {

// ---------------------------------------------------------------------------
// Scenario

struct TraceStep {
    std::int64_t atSeconds = 0;
    std::optional<geo::LonLat> position;
    std::optional<delivery::CourierAvailability> availability;
};

struct CourierSpec {
    std::string name;
    std::optional<geo::LonLat> position;  // random inside the territory when absent
    delivery::CourierAvailability availability = delivery::CourierAvailability::Online;
    std::optional<double> acceptProbability;
    double cancelProbability = 0.0;
    double issueProbability = 0.0;
    std::int64_t stepSeconds = 120;
    nlohmann::json preferences = nlohmann::json::object();
    std::vector<TraceStep> trace;
};

/// How an instance answers quotes. Probabilities are renormalized.
struct InstanceBehavior {
    double accept = 1.0;
    double counter = 0.0;
    double reject = 0.0;
    std::int64_t delaySeconds = 30;
    std::int64_t counterStepMinor = 100;
};

struct RequesterBehavior {
    double accept = 1.0;
    std::int64_t delaySeconds = 30;
    bool autoFinalize = true;
    std::int64_t finalizeDelaySeconds = 0;
};

struct InstanceSpec {
    std::string domain;
    std::string name;
    geo::Polygon territory;
    std::vector<std::string> languages{"en"};
    std::string currency = "USD";
    int utcOffsetMinutes = 0;
    nlohmann::json policy;  // null keeps the default
    std::vector<CourierSpec> fleet;
    int fleetSize = 0;  // extra random couriers
    double courierAccept = 1.0;
    InstanceBehavior negotiation;
};

struct Action {
    std::int64_t atSeconds = 0;
    std::string kind;
    nlohmann::json args;
};

struct Generate {
    int quotes = 0;
    double broadcastShare = 0.0;
    std::int64_t intervalSeconds = 60;
};

struct Scenario {
    std::string name = "scenario";
    std::uint64_t seed = 1;
    Timestamp start = parse_iso8601("2025-03-03T12:00:00Z");
    std::int64_t durationSeconds = 3600;
    std::int64_t tickSeconds = 30;
    int maxRounds = 5;
    std::vector<InstanceSpec> instances;
    std::vector<Action> script;
    Generate generate;
    RequesterBehavior requester;
    nlohmann::json quoteTemplate = nlohmann::json::object();
};

namespace detail {

[[noreturn]] inline void invalid(const std::string& where, const std::string& why) {
    throw Error(ErrorCode::ScenarioInvalid, where + ": " + why, {{"path", where}});
}

template <typename T>
T field(const nlohmann::json& j, const char* key, T fallback, const std::string& where) {
    if (!j.contains(key) || j[key].is_null()) return fallback;
    try {
        return j[key].get<T>();
    } catch (const nlohmann::json::exception&) {
        invalid(where + "." + key, "has the wrong type");
    }
}

inline double probability(const nlohmann::json& j, const char* key, double fallback, const std::string& where) {
    const double p = field<double>(j, key, fallback, where);
    if (!(p >= 0.0 && p <= 1.0)) invalid(where + "." + key, "must be within [0, 1]");
    return p;
}

inline std::int64_t positive_seconds(const nlohmann::json& j, const char* key, std::int64_t fallback, const std::string& where,
                                     bool allow_zero = false) {
    const auto v = field<std::int64_t>(j, key, fallback, where);
    if (v < 0 || (!allow_zero && v == 0)) invalid(where + "." + key, allow_zero ? "must be >= 0" : "must be > 0");
    return v;
}

inline geo::LonLat position(const nlohmann::json& j, const std::string& where) {
    try {
        return delivery::lonlat_from_json(j, "position");
    } catch (const Error& e) {
        invalid(where, e.message());
    }
}

}  // namespace detail

inline Scenario scenario_from_json(const nlohmann::json& j) {
    using detail::field;
    using detail::invalid;
    if (!j.is_object()) invalid("$", "scenario must be a JSON object");
    Scenario s;
    s.name = field<std::string>(j, "name", s.name, "$");
    s.seed = field<std::uint64_t>(j, "seed", s.seed, "$");
    if (j.contains("start")) {
        try {
            s.start = parse_iso8601(field<std::string>(j, "start", "", "$"));
        } catch (const Error&) {
            invalid("$.start", "must be an ISO-8601 UTC timestamp");
        }
    }
    s.durationSeconds = detail::positive_seconds(j, "durationSeconds", s.durationSeconds, "$");
    s.tickSeconds = detail::positive_seconds(j, "tickSeconds", s.tickSeconds, "$");
    s.maxRounds = field<int>(j, "maxRounds", s.maxRounds, "$");
    if (s.maxRounds < 1) invalid("$.maxRounds", "must be >= 1");
    s.quoteTemplate = field<nlohmann::json>(j, "quoteTemplate", s.quoteTemplate, "$");
    if (!s.quoteTemplate.is_object()) invalid("$.quoteTemplate", "must be an object");

    if (!j.contains("instances") || !j["instances"].is_array() || j["instances"].empty())
        invalid("$.instances", "must be a non-empty list");
    std::set<std::string> domains;
    for (std::size_t i = 0; i < j["instances"].size(); ++i) {
        const auto& ij = j["instances"][i];
        const auto where = "$.instances[" + std::to_string(i) + "]";
        if (!ij.is_object()) invalid(where, "must be an object");
        InstanceSpec in;
        in.domain = field<std::string>(ij, "domain", "", where);
        if (!registry::detail::is_domain_name(in.domain)) invalid(where + ".domain", "must be a lowercase DNS name");
        if (!domains.insert(in.domain).second) invalid(where + ".domain", "duplicate domain " + in.domain);
        in.name = field<std::string>(ij, "name", in.domain, where);
        if (!ij.contains("territory")) invalid(where + ".territory", "is required");
        try {
            in.territory = geo::polygon_from_geojson(ij["territory"]);
        } catch (const Error& e) {
            invalid(where + ".territory", e.message());
        }
        in.languages = field<std::vector<std::string>>(ij, "languages", in.languages, where);
        in.currency = field<std::string>(ij, "currency", in.currency, where);
        if (!is_currency_code(in.currency)) invalid(where + ".currency", "unknown currency");
        in.utcOffsetMinutes = field<int>(ij, "utcOffsetMinutes", 0, where);
        in.policy = field<nlohmann::json>(ij, "policy", nullptr, where);
        if (!in.policy.is_null()) {
            try {
                assignment::policy_from_json(in.policy);
            } catch (const Error& e) {
                invalid(where + ".policy", e.message());
            }
        }
        in.fleetSize = field<int>(ij, "fleetSize", 0, where);
        if (in.fleetSize < 0) invalid(where + ".fleetSize", "must be >= 0");
        in.courierAccept = detail::probability(ij, "courierAcceptProbability", 1.0, where);
        if (ij.contains("negotiation")) {
            const auto& nj = ij["negotiation"];
            const auto nw = where + ".negotiation";
            in.negotiation.accept = detail::probability(nj, "acceptProbability", 1.0, nw);
            in.negotiation.counter = detail::probability(nj, "counterProbability", 0.0, nw);
            in.negotiation.reject = detail::probability(nj, "rejectProbability", 0.0, nw);
            if (in.negotiation.accept + in.negotiation.counter + in.negotiation.reject <= 0)
                invalid(nw, "at least one probability must be positive");
            in.negotiation.delaySeconds = detail::positive_seconds(nj, "delaySeconds", 30, nw, true);
            if (nj.contains("counterStep")) {
                try {
                    in.negotiation.counterStepMinor = minor_units_from_json(nj["counterStep"], currency_exponent(in.currency));
                } catch (const Error& e) {
                    invalid(nw + ".counterStep", e.message());
                }
                if (in.negotiation.counterStepMinor <= 0) invalid(nw + ".counterStep", "must be > 0");
            }
        }
        const auto fleet = field<nlohmann::json>(ij, "fleet", nlohmann::json::array(), where);
        if (!fleet.is_array()) invalid(where + ".fleet", "must be a list");
        for (std::size_t k = 0; k < fleet.size(); ++k) {
            const auto& cj = fleet[k];
            const auto cw = where + ".fleet[" + std::to_string(k) + "]";
            CourierSpec c;
            c.name = field<std::string>(cj, "name", "courier-" + std::to_string(k + 1), cw);
            if (cj.contains("position")) c.position = detail::position(cj["position"], cw + ".position");
            try {
                c.availability = delivery::availability_from_string(field<std::string>(cj, "availability", "ONLINE", cw));
            } catch (const Error& e) {
                invalid(cw + ".availability", e.message());
            }
            if (cj.contains("acceptProbability")) c.acceptProbability = detail::probability(cj, "acceptProbability", 1.0, cw);
            c.cancelProbability = detail::probability(cj, "cancelProbability", 0.0, cw);
            c.issueProbability = detail::probability(cj, "issueProbability", 0.0, cw);
            c.stepSeconds = detail::positive_seconds(cj, "stepSeconds", 120, cw);
            c.preferences = field<nlohmann::json>(cj, "preferences", nlohmann::json::object(), cw);
            if (!c.preferences.is_object()) invalid(cw + ".preferences", "must be an object");
            for (const auto& tj : field<nlohmann::json>(cj, "trace", nlohmann::json::array(), cw)) {
                TraceStep t;
                t.atSeconds = detail::positive_seconds(tj, "at", 0, cw + ".trace", true);
                if (tj.contains("position")) t.position = detail::position(tj["position"], cw + ".trace.position");
                if (tj.contains("availability")) {
                    try {
                        t.availability = delivery::availability_from_string(field<std::string>(tj, "availability", "", cw));
                    } catch (const Error& e) {
                        invalid(cw + ".trace.availability", e.message());
                    }
                }
                c.trace.push_back(t);
            }
            std::stable_sort(c.trace.begin(), c.trace.end(), [](const auto& a, const auto& b) { return a.atSeconds < b.atSeconds; });
            in.fleet.push_back(std::move(c));
        }
        s.instances.push_back(std::move(in));
    }

    static const std::set<std::string> kinds = {"quote", "broadcast", "respond", "finalize", "cancel", "policy", "courier"};
    const auto script = field<nlohmann::json>(j, "requesterScript", nlohmann::json::array(), "$");
    if (!script.is_array()) invalid("$.requesterScript", "must be a list");
    for (std::size_t i = 0; i < script.size(); ++i) {
        const auto where = "$.requesterScript[" + std::to_string(i) + "]";
        Action a;
        a.atSeconds = detail::positive_seconds(script[i], "at", 0, where, true);
        a.kind = field<std::string>(script[i], "action", "", where);
        if (!kinds.count(a.kind)) invalid(where + ".action", "unknown action '" + a.kind + "'");
        a.args = script[i];
        if ((a.kind == "quote" || a.kind == "policy" || a.kind == "courier") && !domains.count(field<std::string>(a.args, "instance", "", where)))
            invalid(where + ".instance", "must name a scenario instance");
        if ((a.kind == "respond" || a.kind == "finalize" || a.kind == "cancel") && field<std::string>(a.args, "thread", "", where).empty())
            invalid(where + ".thread", "must name a labelled quote");
        s.script.push_back(std::move(a));
    }
    std::stable_sort(s.script.begin(), s.script.end(), [](const auto& a, const auto& b) { return a.atSeconds < b.atSeconds; });

    if (j.contains("generate")) {
        const auto& g = j["generate"];
        s.generate.quotes = field<int>(g, "quotes", 0, "$.generate");
        if (s.generate.quotes < 0) invalid("$.generate.quotes", "must be >= 0");
        s.generate.broadcastShare = detail::probability(g, "broadcastShare", 0.0, "$.generate");
        s.generate.intervalSeconds = detail::positive_seconds(g, "intervalSeconds", 60, "$.generate");
    }
    if (j.contains("requester")) {
        const auto& r = j["requester"];
        s.requester.accept = detail::probability(r, "acceptProbability", 1.0, "$.requester");
        s.requester.delaySeconds = detail::positive_seconds(r, "delaySeconds", 30, "$.requester", true);
        s.requester.autoFinalize = field<bool>(r, "autoFinalize", true, "$.requester");
        s.requester.finalizeDelaySeconds = detail::positive_seconds(r, "finalizeDelaySeconds", 0, "$.requester", true);
    }
    return s;
}

inline Scenario load_scenario(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::SourceUnavailable, "cannot read scenario " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(ss.str());
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCode::ScenarioInvalid, std::string("scenario is not valid JSON: ") + e.what());
    }
    return scenario_from_json(j);
}

// ---------------------------------------------------------------------------
// Transport

class Transport {
public:
    virtual ~Transport() = default;
    virtual gateway::Response send(const gateway::Request& req) = 0;
};

class InProcessTransport final : public Transport {
public:
    explicit InProcessTransport(gateway::Gateway& gw) : gw_(&gw) {}
    gateway::Response send(const gateway::Request& req) override { return gw_->handle(req); }

private:
    gateway::Gateway* gw_;
};

class HttpTransport final : public Transport {
public:
    HttpTransport(const std::string& host, int port) : client_(host, port) {
        client_.set_connection_timeout(5);
        client_.set_read_timeout(30);
        client_.set_keep_alive(true);
        client_.set_tcp_nodelay(true);
    }

    gateway::Response send(const gateway::Request& req) override {
        std::string target = req.path;
        char sep = '?';
        for (const auto& [k, v] : req.query) {
            target += sep + gateway::percent_encode(k) + "=" + gateway::percent_encode(v);
            sep = '&';
        }
        httplib::Headers headers;
        for (const auto& [k, v] : req.headers) headers.emplace(k, v);
        httplib::Result res;
        const auto& m = req.method;
        if (m == "GET") res = client_.Get(target, headers);
        else if (m == "POST") res = client_.Post(target, headers, req.body, "application/json");
        else if (m == "PUT") res = client_.Put(target, headers, req.body, "application/json");
        else if (m == "PATCH") res = client_.Patch(target, headers, req.body, "application/json");
        else if (m == "DELETE") res = client_.Delete(target, headers, req.body, "application/json");
        if (!res) throw Error(ErrorCode::SourceUnavailable, "HTTP transport failed for " + m + " " + req.path);
        gateway::Response out;
        out.status = res->status;
        out.body = res->body;
        out.contentType = res->get_header_value("Content-Type");
        return out;
    }

private:
    httplib::Client client_;
};

// ---------------------------------------------------------------------------
// Run

struct RunOptions {
    std::optional<std::uint64_t> seed;
    bool overHttp = false;
};

struct RunResult {
    std::vector<std::string> log;  // JSON lines, no trailing newline
    nlohmann::json summary;
    nlohmann::json snapshot;

    std::string log_text() const {
        std::string out;
        for (const auto& l : log) out += l + "\n";
        return out;
    }
};

/// Portable uniform draws: mt19937_64 is fully specified, the standard
/// distributions are not.
class Dice {
public:
    explicit Dice(std::uint64_t seed) : engine_(seed) {}
    double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
    double between(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    bool chance(double p) { return uniform() < p; }
    std::uint64_t below(std::uint64_t n) { return n == 0 ? 0 : engine_() % n; }

private:
    std::mt19937_64 engine_;
};

class Simulation {
public:
    Simulation(Scenario s, RunOptions opts)
        : s_(std::move(s)),
          seed_(opts.seed.value_or(s_.seed)),
          now_ms_(to_millis(s_.start)),
          ids_(seed_),
          dice_(seed_ ^ 0x9e3779b97f4a7c15ULL),
          registry_(std::make_shared<registry::RegistryService>(registry::Registry{{}, registry::SourceKind::Service, 0})),
          dep_(registry_, deployment::memory_stores(), ids_, [this] { return from_millis(now_ms_.load()); },
               quoting::ExchangeConfig{s_.maxRounds}),
          gw_(dep_) {
        dep_.set_observer([this](const std::string& type, const nlohmann::json& body) { record(type, body); });
        if (opts.overHttp) {
            server_ = std::make_unique<http::Server>(gw_);
            const int port = server_->bind("127.0.0.1", 0);
            if (port <= 0) throw Error(ErrorCode::SourceUnavailable, "cannot bind a local port for --over-http");
            server_thread_ = std::thread([this] { server_->listen(); });
            server_->wait_until_ready();
            transport_ = std::make_unique<HttpTransport>("127.0.0.1", port);
        } else {
            transport_ = std::make_unique<InProcessTransport>(gw_);
        }
    }

    ~Simulation() {
        if (server_) {
            transport_.reset();  // closes the keep-alive socket so stop() does not wait it out
            server_->stop();
            if (server_thread_.joinable()) server_thread_.join();
        }
    }

    RunResult run() {
        setup();
        const auto end = s_.start + std::chrono::seconds(s_.durationSeconds);
        std::size_t next_action = 0;
        int generated = 0;
        for (auto t = s_.start; t <= end; t += std::chrono::seconds(s_.tickSeconds)) {
            set_now(t);
            while (next_action < s_.script.size() && s_.start + std::chrono::seconds(s_.script[next_action].atSeconds) <= t)
                perform(s_.script[next_action++]);
            while (generated < s_.generate.quotes &&
                   s_.start + std::chrono::seconds(s_.generate.intervalSeconds * generated) <= t) {
                generate_quote(generated++);
            }
            negotiate();
            move_couriers();
            dep_.tick(t);
            work_deliveries();
        }
        return finish(end);
    }

private:
    struct CourierAgent {
        CourierSpec spec;
        std::string domain;
        std::string id;
        std::string token;
        std::optional<geo::LonLat> position;
        delivery::CourierAvailability availability;
        Timestamp lastBeat{};
        std::size_t nextTrace = 0;
        double accept = 1.0;
        std::set<std::string> decided;
        std::map<std::string, Timestamp> lastStep;
    };

    Timestamp now() const { return from_millis(now_ms_.load()); }
    void set_now(Timestamp t) { now_ms_.store(to_millis(t)); }

    void record(const std::string& type, const nlohmann::json& body) {
        std::lock_guard lock(log_mu_);
        nlohmann::json line = body;
        line["seq"] = ++seq_;
        line["at"] = format_iso8601(now());
        line["type"] = type;
        log_.push_back(line.dump());
    }

    std::optional<nlohmann::json> api(const std::string& method, const std::string& target, const std::string& token,
                                      const nlohmann::json& body = nullptr) {
        auto req = gateway::make_request(method, target, body.is_null() ? std::string() : body.dump(),
                                         {{"Authorization", "Bearer " + token}, {"Content-Type", "application/json"}});
        const auto res = transport_->send(req);
        if (res.status >= 400) {
            nlohmann::json err;
            try {
                err = nlohmann::json::parse(res.body).at("error");
            } catch (const std::exception&) {
                err = {{"code", "UNKNOWN"}, {"message", res.body}};
            }
            record("harness.api_error", {{"method", method}, {"path", req.path}, {"status", res.status}, {"code", err.value("code", "")},
                                         {"message", err.value("message", "")}});
            return std::nullopt;
        }
        if (res.body.empty() || res.contentType.rfind("application/json", 0) != 0) return nlohmann::json(res.body);
        return nlohmann::json::parse(res.body);
    }

    geo::LonLat random_point(const geo::Polygon& poly) {
        double w = 180, e = -180, so = 90, n = -90;
        for (const auto& p : poly.rings.front()) {
            w = std::min(w, p.lon);
            e = std::max(e, p.lon);
            so = std::min(so, p.lat);
            n = std::max(n, p.lat);
        }
        for (int i = 0; i < 1000; ++i) {
            geo::LonLat p{dice_.between(w, e), dice_.between(so, n)};
            if (geo::contains(poly, p)) return p;
        }
        return poly.rings.front().front();
    }

    const InstanceSpec& spec(const std::string& domain) const {
        for (const auto& i : s_.instances)
            if (i.domain == domain) return i;
        throw Error(ErrorCode::ScenarioInvalid, "unknown instance " + domain);
    }

    void setup() {
        // Couriers listed first are the most senior: enrolment runs one minute
        // apart, ending at the scenario start.
        std::size_t total = 0;
        for (const auto& i : s_.instances) total += i.fleet.size() + static_cast<std::size_t>(i.fleetSize);
        set_now(s_.start - std::chrono::minutes(total));
        record("run.started", {{"scenario", s_.name}, {"seed", seed_}, {"instances", s_.instances.size()}, {"maxRounds", s_.maxRounds}});
        for (const auto& in : s_.instances) {
            instance::InstanceConfig cfg;
            cfg.domain = in.domain;
            cfg.territory = in.territory;
            cfg.currency = in.currency;
            cfg.match.utcOffsetMinutes = in.utcOffsetMinutes;
            if (!in.policy.is_null()) cfg.policy = assignment::policy_from_json(in.policy);
            registry::InstanceRecord rec;
            rec.instanceName = in.name;
            rec.admin = in.name + " cooperative";
            rec.contact = "ops@" + in.domain;
            rec.domainName = in.domain;
            rec.termsOfServiceUrl = "https://" + in.domain + "/terms";
            rec.privacyPolicyUrl = "https://" + in.domain + "/privacy";
            rec.location.polygons.push_back(in.territory);
            rec.languages = in.languages;
            rec.description = in.name + " (simulated)";
            dep_.host(cfg, rec);
            admin_[in.domain] = dep_.issue_token({deployment::PrincipalKind::Admin, "harness-admin", in.domain, {"admin"}});
        }
        if (auto r = api("POST", "/api/admin/v1/requesters", admin_.begin()->second, {{"name", "harness requester"}}))
            requester_ = (*r)["token"].get<std::string>();
        else
            throw Error(ErrorCode::ScenarioInvalid, "could not create the scenario requester");

        auto t = now();
        for (const auto& in : s_.instances) {
            std::vector<CourierSpec> fleet = in.fleet;
            for (int k = 0; k < in.fleetSize; ++k) {
                CourierSpec c;
                c.name = "sim-" + std::to_string(k + 1);
                fleet.push_back(c);
            }
            for (auto& c : fleet) {
                set_now(t);
                t += std::chrono::minutes(1);
                auto r = api("POST", "/api/admin/v1/couriers", admin_[in.domain], {{"displayName", c.name}});
                if (!r) throw Error(ErrorCode::ScenarioInvalid, "could not enrol courier " + c.name);
                CourierAgent a;
                a.spec = c;
                a.domain = in.domain;
                a.id = (*r)["courier"]["courierId"].get<std::string>();
                a.token = (*r)["token"].get<std::string>();
                a.position = c.position ? *c.position : random_point(in.territory);
                a.availability = c.availability;
                a.accept = c.acceptProbability.value_or(in.courierAccept);
                if (!c.preferences.empty()) api("PATCH", "/api/courier/v1/settings", a.token, c.preferences);
                couriers_.push_back(std::move(a));
            }
        }
        set_now(s_.start);
        for (auto& a : couriers_) heartbeat(a, true);
    }

    nlohmann::json quote_for(const InstanceSpec& in, const nlohmann::json& overrides) {
        const auto now_t = now();
        auto at = [&](int minutes) { return format_iso8601(now_t + std::chrono::minutes(minutes)); };
        const auto pickup = random_point(in.territory);
        const auto dropoff = random_point(in.territory);
        const double miles = geo::haversine_meters(pickup, dropoff) / quoting::kMetersPerMile;
        const int e = currency_exponent(in.currency);
        const auto unit = pow10(e);
        nlohmann::json q = {
            {"quote", minor_units_to_json(12 * unit, e)},
            {"quoteRangeFrom", minor_units_to_json(10 * unit, e)},
            {"quoteRangeTo", minor_units_to_json(16 * unit, e)},
            {"feePercentage", 10},
            {"currency", in.currency},
            {"duration", 25},
            {"distance", std::ceil(miles * 1.3 * 100.0 + 1.0) / 100.0},
            {"distanceUnit", "MILES"},
            {"pickupPhoneNumber", "+1 609 555 01" + std::to_string(10 + dice_.below(90))},
            {"pickupName", "Kitchen " + std::to_string(1 + dice_.below(40))},
            {"dropoffPhoneNumber", "+1 609 555 02" + std::to_string(10 + dice_.below(90))},
            {"dropoffName", "Customer " + std::to_string(1 + dice_.below(500))},
            {"expiresAt", at(30)},
            {"pickupReadyAt", at(10)},
            {"pickupDeadlineAt", at(40)},
            {"dropoffReadyAt", at(20)},
            {"dropoffEta", at(45)},
            {"dropoffDeadlineAt", at(75)},
            {"orderTotalValue", minor_units_to_json((20 + static_cast<std::int64_t>(dice_.below(60))) * unit, e)},
            {"pickupLocation", {{"lon", pickup.lon}, {"lat", pickup.lat}, {"address", "pickup street"}}},
            {"dropoffLocation", {{"lon", dropoff.lon}, {"lat", dropoff.lat}, {"address", "dropoff street"}}},
            {"itemWeightLbs", std::round(dice_.between(1.0, 25.0) * 10.0) / 10.0},
        };
        q.merge_patch(s_.quoteTemplate);
        q.merge_patch(overrides);
        return q;
    }

    void perform(const Action& a) {
        const auto& j = a.args;
        const auto label = j.value("label", "");
        if (a.kind == "quote") {
            const auto domain = j["instance"].get<std::string>();
            auto body = quote_for(spec(domain), j.value("quote", nlohmann::json::object()));
            body["instanceDomain"] = domain;
            if (auto r = api("POST", "/api/requester/v1/quotes", requester_, body)) {
                labels_[label].push_back((*r)["threadId"].get<std::string>());
                if (!j.value("auto", true)) manual_.insert((*r)["threadId"].get<std::string>());
            }
        } else if (a.kind == "broadcast") {
            const auto& in = j.contains("instance") ? spec(j["instance"].get<std::string>()) : s_.instances.front();
            auto body = quote_for(in, j.value("quote", nlohmann::json::object()));
            if (j.contains("filter")) body["filter"] = j["filter"];
            if (auto r = api("POST", "/api/requester/v1/quotes/broadcast", requester_, body)) {
                for (const auto& t : (*r)["threads"]) {
                    labels_[label].push_back(t["threadId"].get<std::string>());
                    if (!j.value("auto", true)) manual_.insert(t["threadId"].get<std::string>());
                }
            }
        } else if (a.kind == "respond" || a.kind == "finalize" || a.kind == "cancel") {
            for (const auto& id : labelled(j)) {
                if (a.kind == "finalize") {
                    api("POST", "/api/requester/v1/quotes/" + id + "/finalize", requester_);
                } else if (a.kind == "cancel") {
                    api("POST", "/api/requester/v1/quotes/" + id + "/cancel", requester_);
                } else {
                    nlohmann::json body{{"kind", j.value("kind", "ACCEPT")}, {"message", j.value("message", "")}};
                    if (j.contains("amount")) body["amount"] = j["amount"];
                    if (j.value("by", "REQUESTER") == "INSTANCE") {
                        const auto t = dep_.exchange().get(id);
                        api("POST", "/api/instance/v1/quotes/" + id + "/respond", admin_[t.instanceDomain], body);
                    } else {
                        api("POST", "/api/requester/v1/quotes/" + id + "/respond", requester_, body);
                    }
                }
            }
        } else if (a.kind == "policy") {
            api("PUT", "/api/admin/v1/assignment-policy", admin_[j["instance"].get<std::string>()], j.value("policy", nlohmann::json::object()));
        } else if (a.kind == "courier") {
            for (auto& c : couriers_) {
                if (c.domain != j["instance"].get<std::string>() || c.spec.name != j.value("courier", "")) continue;
                if (j.contains("position")) c.position = delivery::lonlat_from_json(j["position"], "position");
                if (j.contains("availability")) c.availability = delivery::availability_from_string(j["availability"].get<std::string>());
                heartbeat(c, true);
            }
        }
    }

    /// Threads behind a label; "instance" narrows a broadcast label to one sibling.
    std::vector<std::string> labelled(const nlohmann::json& j) {
        std::vector<std::string> out;
        const auto it = labels_.find(j.value("thread", ""));
        if (it == labels_.end()) return out;
        for (const auto& id : it->second) {
            if (j.contains("instance") && dep_.exchange().get(id).instanceDomain != j["instance"].get<std::string>()) continue;
            out.push_back(id);
        }
        return out;
    }

    void generate_quote(int k) {
        const auto& in = s_.instances[dice_.below(s_.instances.size())];
        if (dice_.chance(s_.generate.broadcastShare)) {
            perform({0, "broadcast", {{"instance", in.domain}, {"label", "gen-" + std::to_string(k)}}});
        } else {
            perform({0, "quote", {{"instance", in.domain}, {"label", "gen-" + std::to_string(k)}}});
        }
    }

    static const quoting::Round* last_party_round(const quoting::NegotiationThread& t) {
        for (auto it = t.rounds.rbegin(); it != t.rounds.rend(); ++it)
            if (it->by != quoting::Party::System) return &*it;
        return nullptr;
    }

    void negotiate() {
        const auto t_now = now();
        auto open = dep_.exchange().list([&](const quoting::NegotiationThread& t) {
            return t.state == quoting::ThreadState::Open && !manual_.count(t.threadId);
        });
        // Deterministic mode: equal due times resolve by ascending threadId.
        std::sort(open.begin(), open.end(), [](const auto& a, const auto& b) { return a.threadId < b.threadId; });
        for (const auto& listed : open) {
            // An earlier move this tick may have closed a broadcast sibling.
            const auto t = dep_.exchange().get(listed.threadId);
            if (t.state != quoting::ThreadState::Open) continue;
            const auto* last = last_party_round(t);
            if (!last) continue;
            if (last->by == quoting::Party::Requester) {
                const auto& behave = spec(t.instanceDomain).negotiation;
                if (t_now - last->at < std::chrono::seconds(behave.delaySeconds)) continue;
                instance_move(t, behave);
            } else {
                if (t_now - last->at < std::chrono::seconds(s_.requester.delaySeconds)) continue;
                requester_move(t);
            }
        }
        if (!s_.requester.autoFinalize) return;
        for (const auto& t : dep_.exchange().list([&](const quoting::NegotiationThread& t) {
                 return t.state == quoting::ThreadState::Accepted && !manual_.count(t.threadId);
             })) {
            if (t_now - t.updatedAt < std::chrono::seconds(s_.requester.finalizeDelaySeconds)) continue;
            api("POST", "/api/requester/v1/quotes/" + t.threadId + "/finalize", requester_);
        }
    }

    bool can_counter(const quoting::NegotiationThread& t) const {
        return static_cast<int>(t.rounds.size()) + 1 <= 2 * t.maxRounds - 1;
    }

    void instance_move(const quoting::NegotiationThread& t, const InstanceBehavior& b) {
        const auto last = quoting::last_offered(t).value_or(t.quote.quote);
        const double total = b.accept + b.counter + b.reject;
        const double r = dice_.uniform() * total;
        std::string kind = r < b.accept ? "ACCEPT" : r < b.accept + b.counter ? "COUNTER" : "REJECT";
        std::optional<std::int64_t> amount;
        if (kind == "COUNTER") {
            const auto next = std::min(last + b.counterStepMinor, t.quote.quoteRangeTo);
            if (!can_counter(t) || next <= last) kind = "ACCEPT";
            else amount = next;
        }
        respond(t, "/api/instance/v1/quotes/", admin_[t.instanceDomain], kind, amount);
    }

    void requester_move(const quoting::NegotiationThread& t) {
        const auto last = quoting::last_offered(t).value_or(t.quote.quote);
        std::string kind = "ACCEPT";
        std::optional<std::int64_t> amount;
        if (!dice_.chance(s_.requester.accept)) {
            const auto mid = (t.quote.quote + last) / 2;
            if (can_counter(t) && mid != last) {
                kind = "COUNTER";
                amount = mid;
            } else {
                kind = "REJECT";
            }
        }
        respond(t, "/api/requester/v1/quotes/", requester_, kind, amount);
    }

    void respond(const quoting::NegotiationThread& t, const std::string& base, const std::string& token, const std::string& kind,
                 std::optional<std::int64_t> amount) {
        nlohmann::json body{{"kind", kind}, {"message", kind == "COUNTER" ? "counter offer" : ""}};
        if (amount) body["amount"] = format_minor_units(*amount, currency_exponent(t.quote.currency));
        api("POST", base + t.threadId + "/respond", token, body);
    }

    void heartbeat(CourierAgent& a, bool force) {
        const auto t = now();
        if (!force && (a.availability == delivery::CourierAvailability::Offline || t - a.lastBeat < std::chrono::seconds(60))) return;
        nlohmann::json body{{"availability", std::string(delivery::to_string(a.availability))}};
        if (a.position) body["position"] = delivery::to_json(*a.position);
        api("PUT", "/api/courier/v1/status", a.token, body);
        a.lastBeat = t;
    }

    void move_couriers() {
        const auto elapsed = now() - s_.start;
        for (auto& a : couriers_) {
            bool changed = false;
            while (a.nextTrace < a.spec.trace.size() && std::chrono::seconds(a.spec.trace[a.nextTrace].atSeconds) <= elapsed) {
                const auto& step = a.spec.trace[a.nextTrace++];
                if (step.position) a.position = step.position;
                if (step.availability) a.availability = *step.availability;
                changed = true;
            }
            heartbeat(a, changed);
        }
    }

    void work_deliveries() {
        const auto t = now();
        for (auto& a : couriers_) {
            if (auto fresh = api("GET", "/api/courier/v1/deliveries/new", a.token)) {
                std::vector<std::string> ids;
                for (const auto& d : *fresh) ids.push_back(d["deliveryId"].get<std::string>());
                std::sort(ids.begin(), ids.end());
                for (const auto& id : ids) {
                    if (!a.decided.insert(id).second) continue;
                    if (dice_.chance(a.accept)) {
                        if (api("POST", "/api/courier/v1/deliveries/" + id + "/accept", a.token)) a.lastStep[id] = t;
                    } else {
                        api("POST", "/api/courier/v1/deliveries/" + id + "/reject", a.token);
                    }
                }
            }
            auto active = api("GET", "/api/courier/v1/deliveries/in-progress", a.token);
            if (!active) continue;
            std::vector<delivery::Delivery> ds;
            for (const auto& d : *active) ds.push_back(delivery::delivery_from_json(d));
            std::sort(ds.begin(), ds.end(), [](const auto& x, const auto& y) { return x.deliveryId < y.deliveryId; });
            for (const auto& d : ds) {
                auto& last = a.lastStep.try_emplace(d.deliveryId, t).first->second;
                if (t - last < std::chrono::seconds(a.spec.stepSeconds)) continue;
                last = t;
                step(a, d);
            }
        }
    }

    void step(CourierAgent& a, const delivery::Delivery& d) {
        using S = delivery::DeliveryStatus;
        using P = delivery::TripPhase;
        const auto base = "/api/courier/v1/deliveries/" + d.deliveryId + "/";
        if (d.status == S::Accepted && d.tripPhase == P::None) {
            if (dice_.chance(a.spec.cancelProbability)) {
                api("PATCH", base + "cancel", a.token);
                return;
            }
            a.position = d.pickupLocation.position;
            heartbeat(a, true);
            api("POST", base + "arrived-at-pickup", a.token);
        } else if (d.status == S::Accepted) {
            api("POST", base + "mark-as-picked-up", a.token);
        } else if (d.status == S::PickedUp && d.tripPhase == P::None) {
            if (dice_.chance(a.spec.issueProbability))
                api("PATCH", base + "report-issue", a.token, {{"code", "ACCESS"}, {"note", "gate code did not work"}});
            api("POST", base + "mark-as-on-the-way", a.token);
        } else if (d.tripPhase == P::OnTheWay) {
            a.position = d.dropoffLocation.position;
            heartbeat(a, true);
            api("POST", base + "arrived-at-dropoff", a.token);
        } else if (d.tripPhase == P::ArrivedAtDropoff) {
            api("POST", base + "mark-as-delivered", a.token);
        }
    }

    RunResult finish(Timestamp end) {
        set_now(end);
        nlohmann::json per = nlohmann::json::object();
        nlohmann::json totals = {{"finalized", 0}, {"delivered", 0}, {"canceled", 0}, {"inFlight", 0}, {"attempts", 0}};
        const auto range = disclosure::make_range(s_.start - std::chrono::hours(24), end + std::chrono::milliseconds(1));
        for (const auto& in : s_.instances) {
            auto& inst = dep_.instance(in.domain);
            int finalized = 0;
            for (const auto& t : dep_.exchange().list([&](const quoting::NegotiationThread& t) {
                     return t.instanceDomain == in.domain && t.state == quoting::ThreadState::Finalized;
                 }))
                finalized += t.deliveryId ? 1 : 0;
            int delivered = 0, canceled = 0, in_flight = 0;
            for (const auto& c : inst.chains()) {
                if (c.state == instance::ChainState::Completed) ++delivered;
                else if (c.state == instance::ChainState::Canceled) ++canceled;
                else ++in_flight;
            }
            const auto deliveries = inst.deliveries();
            per[in.domain] = {{"finalized", finalized},
                              {"delivered", delivered},
                              {"canceled", canceled},
                              {"inFlight", in_flight},
                              {"attempts", deliveries.size()},
                              {"metrics", disclosure::metrics_json(disclosure::metric_sums(deliveries, range, in.currency), range, in.currency)}};
            totals["finalized"] = totals["finalized"].get<int>() + finalized;
            totals["delivered"] = totals["delivered"].get<int>() + delivered;
            totals["canceled"] = totals["canceled"].get<int>() + canceled;
            totals["inFlight"] = totals["inFlight"].get<int>() + in_flight;
            totals["attempts"] = totals["attempts"].get<int>() + static_cast<int>(deliveries.size());
        }
        nlohmann::json threads = nlohmann::json::array();
        for (const auto& t : dep_.exchange().list()) threads.push_back(quoting::to_json(t));
        std::map<std::string, int> states;
        for (const auto& t : threads) ++states[t["state"].get<std::string>()];
        nlohmann::json summary = {{"instances", per}, {"totals", totals}, {"threads", states}};
        record("run.summary", summary);

        nlohmann::json snapshot = {{"threads", threads}, {"instances", nlohmann::json::object()}};
        for (const auto& in : s_.instances) {
            auto& inst = dep_.instance(in.domain);
            nlohmann::json ds = nlohmann::json::array(), cs = nlohmann::json::array(), cr = nlohmann::json::array();
            for (const auto& d : inst.deliveries()) ds.push_back(delivery::to_json(d));
            for (const auto& c : inst.chains()) cs.push_back(instance::to_json(c));
            for (const auto& c : inst.couriers()) cr.push_back(instance::to_json(c));
            snapshot["instances"][in.domain] = {{"deliveries", ds}, {"tasks", cs}, {"couriers", cr}};
        }
        std::lock_guard lock(log_mu_);
        return {log_, summary, snapshot};
    }

    Scenario s_;
    std::uint64_t seed_;
    std::atomic<std::int64_t> now_ms_;
    SeededIdSource ids_;
    Dice dice_;
    std::shared_ptr<registry::RegistryService> registry_;
    deployment::Deployment dep_;
    gateway::Gateway gw_;
    std::unique_ptr<http::Server> server_;
    std::thread server_thread_;
    std::unique_ptr<Transport> transport_;
    std::mutex log_mu_;
    std::uint64_t seq_ = 0;
    std::vector<std::string> log_;
    std::map<std::string, std::string> admin_;
    std::string requester_;
    std::vector<CourierAgent> couriers_;
    std::map<std::string, std::vector<std::string>> labels_;
    std::set<std::string> manual_;
};

inline RunResult run_scenario(const Scenario& s, RunOptions opts = {}) {
    Simulation sim(s, opts);
    return sim.run();
}

}  // namespace opencourier::harness
