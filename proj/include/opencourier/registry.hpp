#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <shared_mutex>
#include <sstream>
#include <string>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "opencourier/error.hpp"
#include "opencourier/geo.hpp"
#include "opencourier/text.hpp"

namespace opencourier::registry {

/// Directory entry describing one courier instance.
struct InstanceRecord {
    std::string instanceName;
    std::string admin;
    std::string contact;
    std::optional<std::string> logoUrl;
    std::string domainName;
    std::string termsOfServiceUrl;
    std::string privacyPolicyUrl;
    geo::Area location;
    std::vector<std::string> languages;
    std::string description;
    /// Withdrawn records stay in the document but are never returned by queries.
    bool tombstone = false;

    friend bool operator==(const InstanceRecord&, const InstanceRecord&) = default;
};

enum class SourceKind { EmbeddedFile, Service };

struct Registry {
    std::vector<InstanceRecord> records;
    SourceKind sourceKind = SourceKind::EmbeddedFile;
    std::uint64_t version = 0;

    friend bool operator==(const Registry&, const Registry&) = default;
};

/// All supplied criteria must match. At most one of `point` / `region`.
struct QueryFilter {
    std::optional<geo::LonLat> point;
    std::optional<geo::Area> region;
    std::optional<std::string> language;
    std::optional<std::string> text;
};

inline constexpr std::size_t kMaxDescriptionChars = 2000;

namespace detail {

inline bool is_domain_name(const std::string& s) {
    static const std::regex re(R"(^(?=.{1,253}$)([a-z0-9]([a-z0-9-]{0,61}[a-z0-9])?)(\.[a-z0-9]([a-z0-9-]{0,61}[a-z0-9])?)*$)");
    return std::regex_match(s, re);
}

inline bool is_url(const std::string& s) {
    static const std::regex re(R"(^https?://[^\s/$.?#][^\s]*$)", std::regex::icase);
    return std::regex_match(s, re);
}

inline bool is_language_tag(const std::string& s) {
    static const std::regex re(R"(^[A-Za-z]{2,8}(-[A-Za-z0-9]{1,8})*$)");
    return std::regex_match(s, re);
}

[[noreturn]] inline void invalid(const std::string& domain, const std::string& field, const std::string& why) {
    throw Error(ErrorCode::ValidationError, "record " + (domain.empty() ? "<unnamed>" : domain) + ": " + field + " " + why,
                {{"domainName", domain}, {"field", field}});
}

inline std::string required_string(const nlohmann::json& j, const char* field, const std::string& domain) {
    if (!j.contains(field) || !j.at(field).is_string()) invalid(domain, field, "must be a string");
    return j.at(field).get<std::string>();
}

}  // namespace detail

/// Throws VALIDATION_ERROR naming the offending field.
inline void validate(const InstanceRecord& r) {
    using detail::invalid;
    const auto& d = r.domainName;
    if (r.instanceName.empty()) invalid(d, "instanceName", "must be non-empty");
    if (r.admin.empty()) invalid(d, "admin", "must be non-empty");
    if (r.contact.empty()) invalid(d, "contact", "must be non-empty");
    if (!detail::is_domain_name(d)) invalid(d, "domainName", "must be a lowercase DNS name");
    if (r.logoUrl && !detail::is_url(*r.logoUrl)) invalid(d, "logoUrl", "must be an http(s) URL");
    if (!detail::is_url(r.termsOfServiceUrl)) invalid(d, "termsOfServiceUrl", "must be an http(s) URL");
    if (!detail::is_url(r.privacyPolicyUrl)) invalid(d, "privacyPolicyUrl", "must be an http(s) URL");
    if (r.location.polygons.empty()) invalid(d, "location", "must contain a polygon");
    for (const auto& poly : r.location.polygons) {
        for (const auto& ring : poly.rings) {
            if (ring.size() < 4) invalid(d, "location", "ring must contain at least 4 positions");
            if (!(ring.front() == ring.back())) invalid(d, "location", "ring is not closed");
            for (const auto& p : ring)
                if (!geo::valid_position(p)) invalid(d, "location", "position outside WGS84 range");
        }
    }
    if (r.languages.empty()) invalid(d, "languages", "must be non-empty");
    for (const auto& tag : r.languages)
        if (!detail::is_language_tag(tag)) invalid(d, "languages", "contains invalid BCP-47 tag '" + tag + "'");
    const auto len = text::utf8_length(r.description);
    if (r.description.empty() || len == std::string::npos || len > kMaxDescriptionChars)
        invalid(d, "description", "must be 1-2000 characters of UTF-8");
}

inline nlohmann::json to_json(const InstanceRecord& r) {
    nlohmann::json j = {{"instanceName", r.instanceName},
                        {"admin", r.admin},
                        {"contact", r.contact},
                        {"domainName", r.domainName},
                        {"termsOfServiceUrl", r.termsOfServiceUrl},
                        {"privacyPolicyUrl", r.privacyPolicyUrl},
                        {"location", geo::to_geojson(r.location)},
                        {"languages", r.languages},
                        {"description", r.description}};
    if (r.logoUrl) j["logoUrl"] = *r.logoUrl;
    if (r.tombstone) j["tombstone"] = true;
    return j;
}

/// Parses and validates one record.
inline InstanceRecord record_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw Error(ErrorCode::ValidationError, "record must be a JSON object");
    const std::string domain = j.contains("domainName") && j["domainName"].is_string() ? j["domainName"].get<std::string>() : "";
    InstanceRecord r;
    r.instanceName = detail::required_string(j, "instanceName", domain);
    r.admin = detail::required_string(j, "admin", domain);
    r.contact = detail::required_string(j, "contact", domain);
    r.domainName = detail::required_string(j, "domainName", domain);
    r.termsOfServiceUrl = detail::required_string(j, "termsOfServiceUrl", domain);
    r.privacyPolicyUrl = detail::required_string(j, "privacyPolicyUrl", domain);
    r.description = detail::required_string(j, "description", domain);
    if (j.contains("logoUrl") && !j["logoUrl"].is_null()) r.logoUrl = detail::required_string(j, "logoUrl", domain);
    if (!j.contains("location")) detail::invalid(domain, "location", "is required");
    try {
        r.location = geo::area_from_geojson(j.at("location"));
    } catch (const Error& e) {
        detail::invalid(domain, "location", e.message());
    }
    if (!j.contains("languages") || !j["languages"].is_array()) detail::invalid(domain, "languages", "must be a list");
    for (const auto& tag : j["languages"]) {
        if (!tag.is_string()) detail::invalid(domain, "languages", "must contain strings");
        r.languages.push_back(tag.get<std::string>());
    }
    if (j.contains("tombstone")) {
        if (!j["tombstone"].is_boolean()) detail::invalid(domain, "tombstone", "must be a boolean");
        r.tombstone = j["tombstone"].get<bool>();
    }
    validate(r);
    return r;
}

inline nlohmann::json to_json(const Registry& reg) {
    nlohmann::json records = nlohmann::json::array();
    for (const auto& r : reg.records) records.push_back(to_json(r));
    return {{"version", reg.version}, {"records", std::move(records)}};
}

/// Builds a registry from the {version, records:[...]} document. The whole
/// document is rejected if any record is invalid or domains collide.
inline Registry registry_from_json(const nlohmann::json& doc, SourceKind kind) {
    if (!doc.is_object() || !doc.contains("records") || !doc["records"].is_array())
        throw Error(ErrorCode::ParseError, "registry document must be an object with a records array");
    Registry reg;
    reg.sourceKind = kind;
    if (doc.contains("version")) {
        if (!doc["version"].is_number_unsigned() && !doc["version"].is_number_integer())
            throw Error(ErrorCode::ParseError, "registry version must be an integer");
        const auto v = doc["version"].get<std::int64_t>();
        if (v < 0) throw Error(ErrorCode::ParseError, "registry version must be non-negative");
        reg.version = static_cast<std::uint64_t>(v);
    }
    for (std::size_t i = 0; i < doc["records"].size(); ++i) {
        InstanceRecord r = record_from_json(doc["records"][i]);
        for (const auto& existing : reg.records) {
            if (existing.domainName == r.domainName)
                throw Error(ErrorCode::ValidationError, "duplicate domainName " + r.domainName,
                            {{"domainName", r.domainName}, {"field", "domainName"}, {"index", i}});
        }
        reg.records.push_back(std::move(r));
    }
    return reg;
}

inline Registry parse_registry(std::string_view text, SourceKind kind) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCode::ParseError, std::string("registry document is not valid JSON: ") + e.what());
    }
    return registry_from_json(doc, kind);
}

inline Registry load_registry_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::SourceUnavailable, "cannot read registry file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_registry(ss.str(), SourceKind::EmbeddedFile);
}

/// Fetches the registry document from a registry service. A bare base URL is
/// completed with the instances route.
inline Registry load_registry_url(const std::string& url) {
    static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)", std::regex::icase);
    std::smatch m;
    if (!std::regex_match(url, m, re)) throw Error(ErrorCode::SourceUnavailable, "malformed registry URL " + url);
    std::string path = m[2].matched ? m[2].str() : "";
    if (path.empty() || path == "/") path = "/api/registry/v1/instances";
    httplib::Client client(m[1].str());
    client.set_connection_timeout(5);
    client.set_read_timeout(10);
    auto res = client.Get(path);
    if (!res) throw Error(ErrorCode::SourceUnavailable, "registry service unreachable: " + url);
    if (res->status != 200)
        throw Error(ErrorCode::SourceUnavailable, "registry service returned HTTP " + std::to_string(res->status));
    return parse_registry(res->body, SourceKind::Service);
}

/// `source` is either a file path or an http(s) URL.
inline Registry load_registry(const std::string& source) {
    if (source.rfind("http://", 0) == 0 || source.rfind("https://", 0) == 0) return load_registry_url(source);
    return load_registry_file(source);
}

/// Appends a record. Re-registering identical content is a no-op.
inline Registry register_instance(Registry reg, InstanceRecord rec) {
    if (reg.sourceKind != SourceKind::Service)
        throw Error(ErrorCode::ReadOnlyRegistry, "embedded registries cannot be mutated");
    validate(rec);
    for (const auto& existing : reg.records) {
        if (existing.domainName != rec.domainName) continue;
        if (to_json(existing) == to_json(rec)) return reg;
        throw Error(ErrorCode::DuplicateDomain, "domainName already registered: " + rec.domainName,
                    {{"domainName", rec.domainName}});
    }
    reg.records.push_back(std::move(rec));
    ++reg.version;
    return reg;
}

/// Replaces the record with the same domainName (including setting a tombstone).
inline Registry update_instance(Registry reg, InstanceRecord rec) {
    if (reg.sourceKind != SourceKind::Service)
        throw Error(ErrorCode::ReadOnlyRegistry, "embedded registries cannot be mutated");
    validate(rec);
    for (auto& existing : reg.records) {
        if (existing.domainName != rec.domainName) continue;
        if (to_json(existing) == to_json(rec)) return reg;
        existing = std::move(rec);
        ++reg.version;
        return reg;
    }
    throw Error(ErrorCode::NotFound, "no record for domainName " + rec.domainName);
}

namespace detail {

inline bool language_matches(const std::vector<std::string>& tags, const std::string& wanted) {
    const auto w = text::to_lower(wanted);
    return std::any_of(tags.begin(), tags.end(), [&](const std::string& t) {
        const auto l = text::to_lower(t);
        return l == w || l.rfind(w + "-", 0) == 0;
    });
}

}  // namespace detail

/// Live records matching every supplied criterion, ordered by instanceName
/// then domainName.
inline std::vector<InstanceRecord> query_instances(const Registry& reg, const QueryFilter& filter) {
    if (filter.point && filter.region)
        throw Error(ErrorCode::InvalidGeometry, "supply at most one of point and region");
    if (filter.point && !geo::valid_position(*filter.point))
        throw Error(ErrorCode::InvalidGeometry, "point outside WGS84 range");
    std::vector<InstanceRecord> out;
    for (const auto& r : reg.records) {
        if (r.tombstone) continue;
        if (filter.point && !geo::contains(r.location, *filter.point)) continue;
        if (filter.region && !geo::intersects(r.location, *filter.region)) continue;
        if (filter.language && !detail::language_matches(r.languages, *filter.language)) continue;
        if (filter.text && !text::icontains(r.instanceName, *filter.text) && !text::icontains(r.description, *filter.text))
            continue;
        out.push_back(r);
    }
    std::sort(out.begin(), out.end(), [](const InstanceRecord& a, const InstanceRecord& b) {
        if (a.instanceName != b.instanceName) return a.instanceName < b.instanceName;
        return a.domainName < b.domainName;
    });
    return out;
}

/// Union of several registries; on a domainName collision the earliest wins.
inline Registry merge_registries(const std::vector<Registry>& regs) {
    Registry merged;
    merged.sourceKind = SourceKind::EmbeddedFile;
    for (const auto& reg : regs) {
        for (const auto& r : reg.records) {
            const bool taken = std::any_of(merged.records.begin(), merged.records.end(),
                                           [&](const InstanceRecord& m) { return m.domainName == r.domainName; });
            if (!taken) merged.records.push_back(r);
        }
        merged.version += reg.version;
    }
    return merged;
}

/// Thread-safe holder for a live registry: many readers, one writer. Readers get
/// an immutable snapshot. Mutations are persisted to `persist_path` when set.
class RegistryService {
public:
    explicit RegistryService(Registry initial, std::optional<std::filesystem::path> persist_path = std::nullopt)
        : current_(std::make_shared<const Registry>(std::move(initial))), persist_path_(std::move(persist_path)) {}

    std::shared_ptr<const Registry> snapshot() const {
        std::shared_lock lock(mu_);
        return current_;
    }

    std::vector<InstanceRecord> query(const QueryFilter& filter) const { return query_instances(*snapshot(), filter); }

    std::shared_ptr<const Registry> register_instance(InstanceRecord rec) {
        return mutate([&](const Registry& r) { return registry::register_instance(r, std::move(rec)); });
    }

    std::shared_ptr<const Registry> update_instance(InstanceRecord rec) {
        return mutate([&](const Registry& r) { return registry::update_instance(r, std::move(rec)); });
    }

private:
    template <typename F>
    std::shared_ptr<const Registry> mutate(F&& f) {
        std::lock_guard writer(write_mu_);
        auto next = std::make_shared<const Registry>(f(*snapshot()));
        if (persist_path_ && next->version != snapshot()->version) {
            const auto tmp = persist_path_->string() + ".tmp";
            {
                std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
                out << to_json(*next).dump(2) << '\n';
                if (!out) throw Error(ErrorCode::SourceUnavailable, "cannot persist registry");
            }
            std::filesystem::rename(tmp, *persist_path_);
        }
        std::unique_lock lock(mu_);
        current_ = next;
        return next;
    }

    mutable std::shared_mutex mu_;
    std::mutex write_mu_;
    std::shared_ptr<const Registry> current_;
    std::optional<std::filesystem::path> persist_path_;
};

}  // namespace opencourier::registry
