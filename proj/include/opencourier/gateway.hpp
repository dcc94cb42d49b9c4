#pragma once

#include <algorithm>
#include <cctype>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "opencourier/deployment.hpp"
#include "opencourier/disclosure.hpp"
#include "opencourier/error.hpp"
#include "opencourier/money.hpp"
#include "opencourier/quoting.hpp"
#include "opencourier/registry.hpp"

namespace opencourier::gateway {

struct Request {
    std::string method;
    std::string path;
    std::map<std::string, std::string> query;
    /// Keys are lowercase.
    std::map<std::string, std::string> headers;
    std::string body;

    std::optional<std::string> header(std::string name) const {
        std::transform(name.begin(), name.end(), name.begin(), [](unsigned char c) { return std::tolower(c); });
        auto it = headers.find(name);
        if (it == headers.end()) return std::nullopt;
        return it->second;
    }

    std::optional<std::string> param(const std::string& name) const {
        auto it = query.find(name);
        if (it == query.end()) return std::nullopt;
        return it->second;
    }
};

struct Response {
    int status = 200;
    std::string body;
    std::string contentType = "application/json";
    std::map<std::string, std::string> headers;

    nlohmann::json json() const { return nlohmann::json::parse(body); }
};

inline std::string percent_decode(std::string_view s, bool plus_is_space) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '%' && i + 2 < s.size() && std::isxdigit(static_cast<unsigned char>(s[i + 1])) &&
            std::isxdigit(static_cast<unsigned char>(s[i + 2]))) {
            out += static_cast<char>(std::stoi(std::string(s.substr(i + 1, 2)), nullptr, 16));
            i += 2;
        } else if (s[i] == '+' && plus_is_space) {
            out += ' ';
        } else {
            out += s[i];
        }
    }
    return out;
}

inline std::string percent_encode(std::string_view s) {
    static constexpr char hex[] = "0123456789ABCDEF";
    std::string out;
    for (unsigned char c : s) {
        if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~') {
            out += static_cast<char>(c);
        } else {
            out += '%';
            out += hex[c >> 4];
            out += hex[c & 15];
        }
    }
    return out;
}

/// Builds a request from "METHOD", "/path?query" and an optional JSON body.
inline Request make_request(std::string method, std::string_view target, std::string body = {},
                            std::map<std::string, std::string> headers = {}) {
    Request r;
    r.method = std::move(method);
    const auto q = target.find('?');
    r.path = std::string(target.substr(0, q));
    if (q != std::string_view::npos) {
        std::string_view rest = target.substr(q + 1);
        while (!rest.empty()) {
            const auto amp = rest.find('&');
            const auto pair = rest.substr(0, amp);
            const auto eq = pair.find('=');
            if (!pair.empty())
                r.query[percent_decode(pair.substr(0, eq), true)] =
                    eq == std::string_view::npos ? "" : percent_decode(pair.substr(eq + 1), true);
            if (amp == std::string_view::npos) break;
            rest = rest.substr(amp + 1);
        }
    }
    for (auto& [k, v] : headers) {
        std::string key = k;
        std::transform(key.begin(), key.end(), key.begin(), [](unsigned char c) { return std::tolower(c); });
        r.headers[key] = v;
    }
    r.body = std::move(body);
    return r;
}

inline Response json_response(const nlohmann::json& j, int status = 200) { return {status, j.dump(), "application/json", {}}; }

inline Response error_response(const Error& e) { return json_response(e.envelope(), http_status(e.code())); }

enum class Access { Public, Courier, Admin, AdminOrAuditor, Requester, InstanceAdmin, Token };

inline std::string to_string(Access a) {
    switch (a) {
        case Access::Public: return "public";
        case Access::Courier: return "courier";
        case Access::Admin: return "admin";
        case Access::AdminOrAuditor: return "admin|auditor";
        case Access::Requester: return "requester";
        case Access::InstanceAdmin: return "instance-admin";
        case Access::Token: return "token";
    }
    return "?";
}

/// Where a route comes from: the delivery table, the location-note table, or
/// this stack's own additions.
enum class Origin { Deliveries, LocationNotes, Extension };

inline std::string to_string(Origin o) {
    switch (o) {
        case Origin::Deliveries: return "deliveries";
        case Origin::LocationNotes: return "location-notes";
        case Origin::Extension: return "extension";
    }
    return "?";
}

struct RouteInfo {
    std::string method;
    std::string path;
    Access access;
    Origin origin;
};

struct Context {
    const Request& req;
    std::map<std::string, std::string> params;
    std::optional<deployment::Principal> principal;
    deployment::Deployment& dep;

    const deployment::Principal& who() const { return *principal; }
    instance::Instance& home() const { return dep.instance(principal->instanceDomain); }
    const std::string& p(const std::string& name) const { return params.at(name); }
};

using Handler = std::function<Response(Context&)>;

namespace detail {

inline std::vector<std::string_view> split_path(std::string_view path) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < path.size()) {
        if (path[i] == '/') {
            ++i;
            continue;
        }
        const auto j = path.find('/', i);
        out.push_back(path.substr(i, j == std::string_view::npos ? std::string_view::npos : j - i));
        if (j == std::string_view::npos) break;
        i = j;
    }
    return out;
}

inline nlohmann::json body_object(const Request& req, bool allow_empty = false) {
    if (req.body.empty()) {
        if (allow_empty) return nlohmann::json::object();
        throw Error(ErrorCode::ValidationError, "request body must be a JSON object");
    }
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(req.body);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCode::ParseError, std::string("request body is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw Error(ErrorCode::ValidationError, "request body must be a JSON object");
    return j;
}

inline std::string string_field(const nlohmann::json& j, const char* field, bool required = true) {
    if (!j.contains(field) || j[field].is_null()) {
        if (required) throw Error(ErrorCode::ValidationError, std::string(field) + " is required", {{"field", field}});
        return {};
    }
    if (!j[field].is_string()) throw Error(ErrorCode::ValidationError, std::string(field) + " must be a string", {{"field", field}});
    return j[field].get<std::string>();
}

inline double number_param(const Request& req, const char* name) {
    auto v = req.param(name);
    if (!v) throw Error(ErrorCode::ValidationError, std::string("query parameter ") + name + " is required", {{"field", name}});
    try {
        std::size_t used = 0;
        const double d = std::stod(*v, &used);
        if (used == v->size() && std::isfinite(d)) return d;
    } catch (const std::exception&) {
    }
    throw Error(ErrorCode::ValidationError, std::string("query parameter ") + name + " must be a number", {{"field", name}});
}

inline Timestamp time_param(const Request& req, const char* name) {
    auto v = req.param(name);
    if (!v) throw Error(ErrorCode::ValidationError, std::string("query parameter ") + name + " is required", {{"field", name}});
    try {
        return parse_iso8601(*v);
    } catch (const Error&) {
        throw Error(ErrorCode::ValidationError, std::string(name) + " must be an ISO-8601 UTC timestamp", {{"field", name}});
    }
}

template <typename T, typename F>
nlohmann::json array_of(const std::vector<T>& xs, F&& f) {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& x : xs) out.push_back(f(x));
    return out;
}

inline nlohmann::json deliveries_json(const std::vector<delivery::Delivery>& ds) {
    return array_of(ds, [](const delivery::Delivery& d) { return delivery::to_json(d); });
}

inline std::optional<delivery::Issue> issue_from_body(const nlohmann::json& j) {
    delivery::Issue i;
    i.code = string_field(j, "code");
    i.note = string_field(j, "note", false);
    if (i.code.empty()) throw Error(ErrorCode::ValidationError, "code must not be empty", {{"field", "code"}});
    if (text::utf8_length(i.note) > 2000) throw Error(ErrorCode::ValidationError, "note is too long", {{"field", "note"}});
    return i;
}

}  // namespace detail

/// HTTP semantics for every module operation, independent of any socket
/// library. The HTTP server and the harness both call `handle`.
class Gateway {
public:
    explicit Gateway(deployment::Deployment& dep) : dep_(&dep) { build(); }

    std::vector<RouteInfo> routes() const {
        std::vector<RouteInfo> out;
        for (const auto& r : routes_) out.push_back(r.info);
        return out;
    }

    Response handle(const Request& req) {
        try {
            return dispatch(req);
        } catch (const Error& e) {
            return error_response(e);
        } catch (const nlohmann::json::exception& e) {
            return error_response(Error(ErrorCode::ValidationError, std::string("malformed field: ") + e.what()));
        } catch (const std::exception& e) {
            return json_response({{"error", {{"code", "INTERNAL"}, {"message", e.what()}, {"details", nlohmann::json::object()}}}},
                                 500);
        }
    }

private:
    struct Route {
        RouteInfo info;
        std::vector<std::string> segments;
        Handler handler;
    };

    static bool state_changing(const std::string& method) { return method != "GET" && method != "HEAD" && method != "OPTIONS"; }

    /// Literal segments outrank placeholders, so /location-notes/near wins over
    /// /location-notes/{locationNoteId}.
    static std::optional<std::pair<int, std::map<std::string, std::string>>> match(const Route& r,
                                                                                   const std::vector<std::string_view>& parts) {
        if (r.segments.size() != parts.size()) return std::nullopt;
        std::map<std::string, std::string> params;
        int literal = 0;
        for (std::size_t i = 0; i < parts.size(); ++i) {
            const auto& s = r.segments[i];
            if (s.size() > 2 && s.front() == '{' && s.back() == '}') {
                if (parts[i].empty()) return std::nullopt;
                params[s.substr(1, s.size() - 2)] = percent_decode(parts[i], false);
            } else if (s == parts[i]) {
                ++literal;
            } else {
                return std::nullopt;
            }
        }
        return std::make_pair(literal, std::move(params));
    }

    Response dispatch(const Request& req) {
        const auto parts = detail::split_path(req.path);
        const Route* best = nullptr;
        std::map<std::string, std::string> best_params;
        int best_score = -1;
        std::vector<std::string> allowed;
        int allowed_score = -1;
        for (const auto& r : routes_) {
            auto m = match(r, parts);
            if (!m) continue;
            if (m->first > allowed_score) {
                allowed.clear();
                allowed_score = m->first;
            }
            if (m->first == allowed_score) allowed.push_back(r.info.method);
            if (r.info.method == req.method && m->first > best_score) {
                best = &r;
                best_score = m->first;
                best_params = std::move(m->second);
            }
        }
        if (!best || best_score < allowed_score) {
            if (allowed.empty())
                throw Error(ErrorCode::NotFound, "no route for " + req.method + " " + req.path, {{"path", req.path}});
            std::sort(allowed.begin(), allowed.end());
            allowed.erase(std::unique(allowed.begin(), allowed.end()), allowed.end());
            std::string allow;
            for (const auto& m : allowed) allow += (allow.empty() ? "" : ", ") + m;
            auto resp = error_response(Error(ErrorCode::MethodNotAllowed, req.method + " is not allowed on " + req.path,
                                             {{"allowed", allowed}}));
            resp.headers["Allow"] = allow;
            return resp;
        }

        Context ctx{req, std::move(best_params), std::nullopt, *dep_};
        authorize(ctx, best->info.access);
        const auto key = req.header("idempotency-key");
        if (!key || !state_changing(req.method) || !ctx.principal) return best->handler(ctx);
        const auto& p = *ctx.principal;
        const auto scope = deployment::to_string(p.kind) + ":" + p.id + "@" + p.instanceDomain + " " + req.method + " " + req.path;
        const auto stored = dep_->idempotent(scope, *key, sha256_hex(req.body), [&] {
            const auto r = best->handler(ctx);
            return deployment::StoredResponse{r.status, r.body, r.contentType};
        });
        Response resp{stored.status, stored.body, stored.contentType, {}};
        resp.headers["Idempotency-Key"] = *key;
        return resp;
    }

    void authorize(Context& ctx, Access access) const {
        if (access == Access::Public) return;
        const auto auth = ctx.req.header("authorization");
        static constexpr std::string_view kBearer = "Bearer ";
        if (!auth || auth->size() <= kBearer.size() || auth->compare(0, kBearer.size(), kBearer) != 0)
            throw Error(ErrorCode::Unauthenticated, "bearer token required");
        ctx.principal = dep_->authenticate(auth->substr(kBearer.size()));
        using K = deployment::PrincipalKind;
        const auto kind = ctx.principal->kind;
        bool ok = false;
        switch (access) {
            case Access::Public:
            case Access::Token: ok = true; break;
            case Access::Courier: ok = kind == K::Courier; break;
            case Access::Admin:
            case Access::InstanceAdmin: ok = kind == K::Admin; break;
            case Access::AdminOrAuditor: ok = kind == K::Admin || kind == K::Auditor; break;
            case Access::Requester: ok = kind == K::Requester; break;
        }
        if (!ok)
            throw Error(ErrorCode::Unauthorized, to_string(access) + " credentials required for this route",
                        {{"principal", deployment::to_string(kind)}});
    }

    void add(std::string method, std::string path, Access access, Origin origin, Handler h) {
        Route r;
        r.info = {std::move(method), std::move(path), access, origin};
        for (auto s : detail::split_path(r.info.path)) r.segments.emplace_back(s);
        r.handler = std::move(h);
        routes_.push_back(std::move(r));
    }

    void build() {
        using E = delivery::TransitionEvent;
        const std::string courier = "/api/courier/v1";
        const std::string admin = "/api/admin/v1";

        // -- order fulfilment ----------------------------------------------
        add("GET", admin + "/deliveries/{deliveryId}", Access::Admin, Origin::Deliveries,
            [](Context& c) { return json_response(delivery::to_json(c.home().get_delivery(c.p("deliveryId")))); });
        const std::pair<const char*, delivery::Bucket> buckets[] = {
            {"new", delivery::Bucket::New}, {"in-progress", delivery::Bucket::InProgress}, {"done", delivery::Bucket::Done}};
        for (const auto& [name, bucket] : buckets) {
            const auto b = bucket;
            add("GET", courier + "/deliveries/" + name, Access::Courier, Origin::Deliveries,
                [b](Context& c) { return json_response(detail::deliveries_json(c.home().bucket(c.who().id, b))); });
        }
        const std::tuple<const char*, const char*, E> actions[] = {
            {"POST", "accept", E::Accept},
            {"POST", "reject", E::Reject},
            {"PATCH", "cancel", E::Cancel},
            {"POST", "mark-as-dispatched", E::Dispatch},
            {"POST", "arrived-at-pickup", E::ArrivedAtPickup},
            {"POST", "mark-as-picked-up", E::MarkPickedUp},
            {"POST", "mark-as-on-the-way", E::MarkOnTheWay},
            {"POST", "arrived-at-dropoff", E::ArrivedAtDropoff},
            {"POST", "mark-as-delivered", E::MarkDelivered},
            {"PATCH", "report-issue", E::ReportIssue},
        };
        for (const auto& [method, suffix, event] : actions) {
            const auto ev = event;
            add(method, courier + "/deliveries/{deliveryId}/" + suffix, Access::Courier, Origin::Deliveries, [ev](Context& c) {
                std::optional<delivery::Issue> issue;
                if (ev == E::ReportIssue) issue = detail::issue_from_body(detail::body_object(c.req));
                return json_response(delivery::to_json(c.home().courier_event(c.who().id, c.p("deliveryId"), ev, issue)));
            });
        }

        // -- location notes ------------------------------------------------
        add("POST", courier + "/location-notes", Access::Courier, Origin::LocationNotes, [](Context& c) {
            const auto j = detail::body_object(c.req);
            if (!j.contains("position")) throw Error(ErrorCode::ValidationError, "position is required", {{"field", "position"}});
            const auto pos = delivery::lonlat_from_json(j["position"], "position");
            return json_response(notes::to_json(c.home().notes().create(c.who().id, pos, detail::string_field(j, "text"))), 201);
        });
        add("GET", courier + "/location-notes", Access::Courier, Origin::LocationNotes, [](Context& c) {
            return json_response(detail::array_of(c.home().notes().list_mine(c.who().id),
                                                  [](const notes::LocationNote& n) { return notes::to_json(n); }));
        });
        add("PATCH", courier + "/location-notes/{locationNoteId}", Access::Courier, Origin::LocationNotes, [](Context& c) {
            const auto j = detail::body_object(c.req);
            return json_response(notes::to_json(c.home().notes().update(c.who().id, c.p("locationNoteId"), detail::string_field(j, "text"))));
        });
        add("GET", courier + "/location-notes/{locationNoteId}", Access::Courier, Origin::LocationNotes,
            [](Context& c) { return json_response(notes::to_json(c.home().notes().get(c.p("locationNoteId")))); });
        add("DELETE", courier + "/location-notes/{locationNoteId}", Access::Courier, Origin::LocationNotes, [](Context& c) {
            c.home().notes().remove(c.who().id, c.p("locationNoteId"));
            return json_response({{"locationNoteId", c.p("locationNoteId")}, {"deleted", true}});
        });
        add("POST", courier + "/location-notes/{locationNoteId}/react", Access::Courier, Origin::LocationNotes, [](Context& c) {
            const auto j = detail::body_object(c.req);
            return json_response(notes::to_json(c.home().notes().react(c.who().id, c.p("locationNoteId"), detail::string_field(j, "emoji"))));
        });
        add("GET", courier + "/location-notes/near", Access::Courier, Origin::Extension, [](Context& c) {
            const geo::LonLat at{detail::number_param(c.req, "lon"), detail::number_param(c.req, "lat")};
            if (!geo::valid_position(at)) throw Error(ErrorCode::ValidationError, "position outside WGS84 range", {{"field", "lat"}});
            const double radius = detail::number_param(c.req, "radius");
            if (radius < 0) throw Error(ErrorCode::ValidationError, "radius must be non-negative", {{"field", "radius"}});
            return json_response(detail::array_of(c.home().notes().list_near(at, radius),
                                                  [](const notes::LocationNote& n) { return notes::to_json(n); }));
        });

        // -- courier settings and status ------------------------------------
        add("GET", courier + "/settings", Access::Courier, Origin::Extension, [](Context& c) {
            auto [prefs, version] = c.home().preferences(c.who().id);
            auto r = json_response(preferences::to_json(prefs));
            r.headers["ETag"] = "\"" + std::to_string(version) + "\"";
            return r;
        });
        add("PATCH", courier + "/settings", Access::Courier, Origin::Extension, [](Context& c) {
            const auto patch = detail::body_object(c.req);
            auto& inst = c.home();
            if (auto match = c.req.header("if-match")) {
                const auto current = inst.preferences(c.who().id).second;
                if (*match != "\"" + std::to_string(current) + "\"")
                    throw Error(ErrorCode::VersionConflict, "settings changed since they were read",
                                {{"expected", *match}, {"current", std::to_string(current)}});
            }
            auto [prefs, version] = inst.patch_preferences(c.who().id, patch);
            auto r = json_response(preferences::to_json(prefs));
            r.headers["ETag"] = "\"" + std::to_string(version) + "\"";
            return r;
        });
        add("GET", courier + "/me", Access::Courier, Origin::Extension,
            [](Context& c) { return json_response(instance::to_json(c.home().courier(c.who().id))); });
        add("PUT", courier + "/status", Access::Courier, Origin::Extension, [](Context& c) {
            const auto j = detail::body_object(c.req);
            std::optional<delivery::CourierAvailability> availability;
            std::optional<geo::LonLat> position;
            if (j.contains("availability")) availability = delivery::availability_from_string(detail::string_field(j, "availability"));
            if (j.contains("position") && !j["position"].is_null()) position = delivery::lonlat_from_json(j["position"], "position");
            return json_response(instance::to_json(c.home().update_status(c.who().id, availability, position)));
        });

        // -- registry --------------------------------------------------------
        add("GET", "/api/registry/v1/instances", Access::Public, Origin::Extension, [](Context& c) {
            registry::QueryFilter f;
            const bool has_lon = c.req.param("lon").has_value(), has_lat = c.req.param("lat").has_value();
            if (has_lon != has_lat) throw Error(ErrorCode::ValidationError, "lon and lat must be given together", {{"field", "lon"}});
            if (has_lon) {
                f.point = geo::LonLat{detail::number_param(c.req, "lon"), detail::number_param(c.req, "lat")};
                if (!geo::valid_position(*f.point)) throw Error(ErrorCode::InvalidGeometry, "point outside WGS84 range");
            }
            if (auto v = c.req.param("language")) f.language = *v;
            if (auto v = c.req.param("q")) f.text = *v;
            const auto snap = c.dep.registry().snapshot();
            registry::Registry view;
            view.sourceKind = snap->sourceKind;
            view.version = snap->version;
            view.records = registry::query_instances(*snap, f);
            return json_response(registry::to_json(view));
        });
        add("GET", "/api/registry/v1/instances/{domainName}", Access::Public, Origin::Extension, [](Context& c) {
            const auto snap = c.dep.registry().snapshot();
            for (const auto& r : snap->records)
                if (r.domainName == c.p("domainName") && !r.tombstone) return json_response(registry::to_json(r));
            throw Error(ErrorCode::NotFound, "instance not registered: " + c.p("domainName"), {{"domainName", c.p("domainName")}});
        });
        add("POST", "/api/registry/v1/instances", Access::Token, Origin::Extension, [](Context& c) {
            auto rec = registry::record_from_json(detail::body_object(c.req));
            require_registry_writer(c, rec.domainName);
            const auto before = c.dep.registry().snapshot()->version;
            const auto after = c.dep.registry().register_instance(rec);
            return json_response(registry::to_json(rec), after->version == before ? 200 : 201);
        });
        add("PUT", "/api/registry/v1/instances/{domainName}", Access::Token, Origin::Extension, [](Context& c) {
            auto rec = registry::record_from_json(detail::body_object(c.req));
            if (rec.domainName != c.p("domainName"))
                throw Error(ErrorCode::ValidationError, "domainName in body must match the path", {{"field", "domainName"}});
            require_registry_writer(c, rec.domainName);
            c.dep.registry().update_instance(rec);
            return json_response(registry::to_json(rec));
        });

        // -- quotes ----------------------------------------------------------
        const std::string req_q = "/api/requester/v1/quotes";
        add("POST", req_q, Access::Requester, Origin::Extension, [](Context& c) {
            auto j = detail::body_object(c.req);
            const auto domain = detail::string_field(j, "instanceDomain");
            j.erase("instanceDomain");
            auto t = c.dep.create_quote(c.who().id, domain, quoting::quote_from_json(j));
            return json_response(quoting::to_json(t), 201);
        });
        add("POST", req_q + "/broadcast", Access::Requester, Origin::Extension, [](Context& c) {
            auto j = detail::body_object(c.req);
            registry::QueryFilter f;
            if (j.contains("filter")) {
                const auto& fj = j["filter"];
                if (!fj.is_object()) throw Error(ErrorCode::ValidationError, "filter must be an object", {{"field", "filter"}});
                if (fj.contains("lon") || fj.contains("lat")) {
                    if (!fj.contains("lon") || !fj.contains("lat") || !fj["lon"].is_number() || !fj["lat"].is_number())
                        throw Error(ErrorCode::ValidationError, "filter lon and lat must be numbers", {{"field", "filter"}});
                    f.point = geo::LonLat{fj["lon"].get<double>(), fj["lat"].get<double>()};
                }
                if (fj.contains("region")) f.region = geo::area_from_geojson(fj["region"]);
                if (f.point && f.region) throw Error(ErrorCode::InvalidGeometry, "give a point or a region, not both");
                if (fj.contains("language")) f.language = detail::string_field(fj, "language");
                if (fj.contains("q")) f.text = detail::string_field(fj, "q");
                j.erase("filter");
            }
            const auto ts = c.dep.broadcast_quote(c.who().id, f, quoting::quote_from_json(j));
            return json_response({{"broadcastGroupId", ts.front().broadcastGroupId.value_or("")},
                                  {"threads", detail::array_of(ts, [](const auto& t) { return quoting::to_json(t); })}},
                                 201);
        });
        add("GET", req_q, Access::Requester, Origin::Extension, [](Context& c) {
            const auto id = c.who().id;
            return json_response(detail::array_of(c.dep.exchange().list([&](const quoting::NegotiationThread& t) { return t.requesterId == id; }),
                                                  [](const auto& t) { return quoting::to_json(t); }));
        });
        add("GET", req_q + "/{threadId}", Access::Requester, Origin::Extension,
            [](Context& c) { return json_response(quoting::to_json(own_thread(c))); });
        add("POST", req_q + "/{threadId}/respond", Access::Requester, Origin::Extension, [](Context& c) {
            const auto t = own_thread(c);
            return respond(c, t, quoting::Party::Requester);
        });
        add("POST", req_q + "/{threadId}/finalize", Access::Requester, Origin::Extension, [](Context& c) {
            own_thread(c);
            return json_response(delivery::to_json(c.dep.finalize(c.p("threadId"))), 201);
        });
        add("POST", req_q + "/{threadId}/cancel", Access::Requester, Origin::Extension, [](Context& c) {
            const auto t = own_thread(c);
            if (t.state != quoting::ThreadState::Finalized)
                throw Error(ErrorCode::NotAccepted, "only finalized quotes have a task to cancel", {{"threadId", t.threadId}});
            return json_response(instance::to_json(c.dep.instance(t.instanceDomain).requester_cancel(t.threadId, c.who().id)));
        });
        const std::string inst_q = "/api/instance/v1/quotes";
        add("POST", inst_q + "/{threadId}/respond", Access::InstanceAdmin, Origin::Extension, [](Context& c) {
            const auto t = instance_thread(c);
            return respond(c, t, quoting::Party::Instance);
        });
        add("GET", inst_q, Access::InstanceAdmin, Origin::Extension, [](Context& c) {
            const auto domain = c.who().instanceDomain;
            return json_response(detail::array_of(
                c.dep.exchange().list([&](const quoting::NegotiationThread& t) { return t.instanceDomain == domain; }),
                [](const auto& t) { return quoting::to_json(t); }));
        });
        add("GET", inst_q + "/{threadId}", Access::InstanceAdmin, Origin::Extension,
            [](Context& c) { return json_response(quoting::to_json(instance_thread(c))); });

        // -- admin -----------------------------------------------------------
        add("GET", admin + "/deliveries", Access::Admin, Origin::Extension, [](Context& c) {
            std::optional<delivery::DeliveryStatus> status;
            if (auto s = c.req.param("status")) status = delivery::status_from_string(*s);
            const auto courier_id = c.req.param("courierId");
            return json_response(detail::deliveries_json(c.home().deliveries([&](const delivery::Delivery& d) {
                return (!status || d.status == *status) && (!courier_id || (d.courierId && *d.courierId == *courier_id));
            })));
        });
        add("PATCH", admin + "/deliveries/{deliveryId}/cancel", Access::Admin, Origin::Extension, [](Context& c) {
            return json_response(delivery::to_json(c.home().admin_event(c.who().id, c.p("deliveryId"), E::Cancel)));
        });
        add("PATCH", admin + "/deliveries/{deliveryId}/report-issue", Access::Admin, Origin::Extension, [](Context& c) {
            const auto issue = detail::issue_from_body(detail::body_object(c.req));
            return json_response(delivery::to_json(c.home().admin_event(c.who().id, c.p("deliveryId"), E::ReportIssue, issue)));
        });
        add("GET", admin + "/assignment-policy", Access::Admin, Origin::Extension,
            [](Context& c) { return json_response(assignment::to_json(c.home().policy())); });
        add("PUT", admin + "/assignment-policy", Access::Admin, Origin::Extension, [](Context& c) {
            return json_response(assignment::to_json(c.home().set_policy(detail::body_object(c.req), c.who().id)));
        });
        add("GET", admin + "/disclosure/export.csv", Access::AdminOrAuditor, Origin::Extension, [](Context& c) {
            const auto range = disclosure::make_range(detail::time_param(c.req, "from"), detail::time_param(c.req, "to"));
            const auto salt = c.req.param("salt").value_or(c.dep.ids().token());
            Response r{200, disclosure::export_csv(c.home().deliveries(), range, salt), "text/csv; charset=utf-8", {}};
            r.headers["Content-Disposition"] = "attachment; filename=\"disclosure.csv\"";
            return r;
        });
        add("GET", admin + "/disclosure/metrics", Access::AdminOrAuditor, Origin::Extension, [](Context& c) {
            const auto range = disclosure::make_range(detail::time_param(c.req, "from"), detail::time_param(c.req, "to"));
            const auto currency = c.req.param("currency").value_or(c.home().config().currency);
            if (!is_currency_code(currency)) throw Error(ErrorCode::ValidationError, "unknown currency " + currency, {{"field", "currency"}});
            return json_response(disclosure::metrics_json(disclosure::metric_sums(c.home().deliveries(), range, currency), range, currency));
        });
        add("GET", admin + "/couriers", Access::Admin, Origin::Extension, [](Context& c) {
            return json_response(detail::array_of(c.home().couriers(), [](const auto& r) { return instance::to_json(r); }));
        });
        add("POST", admin + "/couriers", Access::Admin, Origin::Extension, [](Context& c) {
            const auto j = detail::body_object(c.req);
            const auto name = detail::string_field(j, "displayName");
            if (name.empty()) throw Error(ErrorCode::ValidationError, "displayName must not be empty", {{"field", "displayName"}});
            auto [rec, token] = c.dep.enroll_courier(c.who().instanceDomain, name);
            return json_response({{"courier", instance::to_json(rec)}, {"token", token}}, 201);
        });
        add("POST", admin + "/couriers/{courierId}/revoke", Access::Admin, Origin::Extension, [](Context& c) {
            c.home().courier(c.p("courierId"));
            const int n = c.dep.revoke_principal(deployment::PrincipalKind::Courier, c.p("courierId"), c.who().instanceDomain);
            return json_response({{"courierId", c.p("courierId")}, {"revokedTokens", n}});
        });
        add("POST", admin + "/requesters", Access::Admin, Origin::Extension, [](Context& c) {
            const auto j = detail::body_object(c.req);
            auto [id, token] = c.dep.create_requester(detail::string_field(j, "name"));
            return json_response({{"requesterId", id}, {"token", token}}, 201);
        });
        add("POST", admin + "/auditors", Access::Admin, Origin::Extension, [](Context& c) {
            const auto j = detail::body_object(c.req);
            const auto name = detail::string_field(j, "name");
            const auto id = c.dep.ids().uuid();
            auto token = c.dep.issue_token({deployment::PrincipalKind::Auditor, id, c.who().instanceDomain, {"disclosure", "name:" + name}});
            return json_response({{"auditorId", id}, {"token", token}}, 201);
        });
        add("GET", admin + "/tasks", Access::Admin, Origin::Extension, [](Context& c) {
            return json_response(detail::array_of(c.home().chains(), [](const auto& t) { return instance::to_json(t); }));
        });
        add("GET", admin + "/alerts", Access::Admin, Origin::Extension, [](Context& c) {
            return json_response(detail::array_of(c.home().alerts(), [](const auto& a) { return instance::to_json(a); }));
        });
    }

    static void require_registry_writer(const Context& c, const std::string& domain) {
        const auto& p = c.who();
        const bool registry_admin = std::find(p.scopes.begin(), p.scopes.end(), "registry:write") != p.scopes.end();
        const bool own = p.kind == deployment::PrincipalKind::Admin && p.instanceDomain == domain;
        if (!registry_admin && !own)
            throw Error(ErrorCode::Unauthorized, "only the instance's admin or a registry operator may write this record",
                        {{"domainName", domain}});
    }

    static quoting::NegotiationThread own_thread(const Context& c) {
        auto t = c.dep.exchange().get(c.p("threadId"));
        if (t.requesterId != c.who().id)
            throw Error(ErrorCode::Unauthorized, "thread belongs to another requester", {{"threadId", t.threadId}});
        return t;
    }

    static quoting::NegotiationThread instance_thread(const Context& c) {
        auto t = c.dep.exchange().get(c.p("threadId"));
        if (t.instanceDomain != c.who().instanceDomain)
            throw Error(ErrorCode::Unauthorized, "thread is addressed to another instance", {{"threadId", t.threadId}});
        return t;
    }

    static Response respond(Context& c, const quoting::NegotiationThread& t, quoting::Party by) {
        const auto j = detail::body_object(c.req);
        const auto kind = quoting::round_kind_from_string(detail::string_field(j, "kind"));
        if (kind == quoting::RoundKind::Offer)
            throw Error(ErrorCode::ValidationError, "kind must be COUNTER, ACCEPT or REJECT", {{"field", "kind"}});
        std::optional<std::int64_t> amount;
        if (j.contains("amount") && !j["amount"].is_null())
            amount = minor_units_from_json(j["amount"], currency_exponent(t.quote.currency));
        const auto message = detail::string_field(j, "message", false);
        return json_response(quoting::to_json(c.dep.respond(t.threadId, by, kind, message, amount)));
    }

    deployment::Deployment* dep_;
    std::vector<Route> routes_;
};

}  // namespace opencourier::gateway
