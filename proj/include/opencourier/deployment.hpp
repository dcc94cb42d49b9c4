#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "opencourier/error.hpp"
#include "opencourier/ids.hpp"
#include "opencourier/instance.hpp"
#include "opencourier/quoting.hpp"
#include "opencourier/registry.hpp"
#include "opencourier/repository.hpp"
#include "opencourier/store.hpp"
#include "opencourier/time.hpp"

namespace opencourier::deployment {

enum class PrincipalKind { Courier, Admin, Requester, Auditor };

inline std::string to_string(PrincipalKind k) {
    switch (k) {
        case PrincipalKind::Courier: return "COURIER";
        case PrincipalKind::Admin: return "ADMIN";
        case PrincipalKind::Requester: return "REQUESTER";
        case PrincipalKind::Auditor: return "AUDITOR";
    }
    return "?";
}

inline PrincipalKind principal_kind_from_string(std::string_view s) {
    for (auto k : {PrincipalKind::Courier, PrincipalKind::Admin, PrincipalKind::Requester, PrincipalKind::Auditor})
        if (to_string(k) == s) return k;
    throw Error(ErrorCode::ValidationError, "unknown principal kind " + std::string(s), {{"field", "kind"}});
}

/// Who a bearer token speaks for. Couriers, admins and auditors belong to one
/// hosted instance; requesters are deployment-wide.
struct Principal {
    PrincipalKind kind = PrincipalKind::Requester;
    std::string id;
    std::string instanceDomain;
    std::vector<std::string> scopes;
};

struct TokenRecord {
    Principal principal;
    std::string tokenHash;
    bool revoked = false;
    Timestamp issuedAt{};
};

inline nlohmann::json to_json(const Principal& p) {
    return {{"kind", to_string(p.kind)}, {"id", p.id}, {"instanceDomain", p.instanceDomain}, {"scopes", p.scopes}};
}

inline Principal principal_from_json(const nlohmann::json& j) {
    return {principal_kind_from_string(j.at("kind").get<std::string>()), j.at("id").get<std::string>(),
            j.at("instanceDomain").get<std::string>(), j.at("scopes").get<std::vector<std::string>>()};
}

inline nlohmann::json to_json(const TokenRecord& t) {
    return {{"principal", to_json(t.principal)}, {"tokenHash", t.tokenHash}, {"revoked", t.revoked},
            {"issuedAt", format_iso8601(t.issuedAt)}};
}

inline TokenRecord token_from_json(const nlohmann::json& j) {
    return {principal_from_json(j.at("principal")), j.at("tokenHash").get<std::string>(), j.at("revoked").get<bool>(),
            parse_iso8601(j.at("issuedAt").get<std::string>())};
}

/// A response remembered under an Idempotency-Key.
struct StoredResponse {
    int status = 200;
    std::string body;
    std::string contentType = "application/json";
};

struct IdempotencyRecord {
    std::string fingerprint;
    StoredResponse response;
    Timestamp at{};
};

inline nlohmann::json to_json(const IdempotencyRecord& r) {
    return {{"fingerprint", r.fingerprint},
            {"status", r.response.status},
            {"body", r.response.body},
            {"contentType", r.response.contentType},
            {"at", format_iso8601(r.at)}};
}

inline IdempotencyRecord idempotency_from_json(const nlohmann::json& j) {
    return {j.at("fingerprint").get<std::string>(),
            {j.at("status").get<int>(), j.at("body").get<std::string>(), j.at("contentType").get<std::string>()},
            parse_iso8601(j.at("at").get<std::string>())};
}

using StoreFactory = std::function<std::unique_ptr<store::Store>(const std::string& name)>;

inline StoreFactory memory_stores() {
    return [](const std::string&) { return std::make_unique<store::MemoryStore>(); };
}

/// One append-only log per name: <dir>/<name>.log.
inline StoreFactory file_stores(std::filesystem::path dir, store::FileStoreOptions options = {}) {
    std::filesystem::create_directories(dir);
    return [dir = std::move(dir), options](const std::string& name) {
        return std::make_unique<store::FileStore>(dir / (name + ".log"), options);
    };
}

/// Every hosted instance plus the shared pieces around them: the registry,
/// the quote exchange, credentials and idempotency records.
class Deployment {
public:
    Deployment(std::shared_ptr<registry::RegistryService> registry, StoreFactory stores, IdSource& ids, Clock clock,
               quoting::ExchangeConfig exchange = {})
        : registry_(std::move(registry)),
          stores_(std::move(stores)),
          shared_(stores_("deployment")),
          ids_(&ids),
          clock_(std::move(clock)),
          tokens_(*shared_, "token", [](const TokenRecord& t) { return to_json(t); }, token_from_json),
          idem_(*shared_, "idem", [](const IdempotencyRecord& r) { return to_json(r); }, idempotency_from_json),
          exchange_(*shared_, ids, clock_,
                    quoting::Directory{[this] { return registry_->snapshot(); },
                                       [this](const std::string& d) { return hosted(d); }},
                    exchange) {}

    Deployment(const Deployment&) = delete;
    Deployment& operator=(const Deployment&) = delete;

    void set_observer(instance::Observer o) {
        std::lock_guard lock(mu_);
        observer_ = std::move(o);
    }

    registry::RegistryService& registry() { return *registry_; }
    quoting::Exchange& exchange() { return exchange_; }
    const Clock& clock() const { return clock_; }
    IdSource& ids() { return *ids_; }

    /// Hosts an instance, registering its directory record when given.
    instance::Instance& host(instance::InstanceConfig config, std::optional<registry::InstanceRecord> record = std::nullopt) {
        if (record) {
            if (record->domainName != config.domain)
                throw Error(ErrorCode::ValidationError, "registry record domain differs from instance domain",
                            {{"field", "domainName"}});
            registry_->register_instance(*record);
        }
        std::lock_guard lock(mu_);
        const auto domain = config.domain;
        if (instances_.count(domain)) throw Error(ErrorCode::DuplicateDomain, "instance already hosted: " + domain);
        auto& st = instance_stores_[domain];
        st = stores_(domain);
        auto inst = std::make_unique<instance::Instance>(std::move(config), *st, *ids_, clock_,
                                                         [this](const std::string& type, const nlohmann::json& body) {
                                                             emit(type, body);
                                                         });
        auto& ref = *inst;
        instances_[domain] = std::move(inst);
        return ref;
    }

    bool hosted(const std::string& domain) const {
        std::lock_guard lock(mu_);
        return instances_.count(domain) > 0;
    }

    instance::Instance& instance(const std::string& domain) {
        std::lock_guard lock(mu_);
        auto it = instances_.find(domain);
        if (it == instances_.end())
            throw Error(ErrorCode::UnknownInstance, "instance not hosted here: " + domain, {{"instanceDomain", domain}});
        return *it->second;
    }

    std::vector<std::string> domains() const {
        std::lock_guard lock(mu_);
        std::vector<std::string> out;
        for (const auto& [d, _] : instances_) out.push_back(d);
        return out;
    }

    // -- credentials -----------------------------------------------------

    /// Issues a fresh random token; only its hash is stored.
    std::string issue_token(Principal p) {
        auto token = ids_->token();
        install_token(token, std::move(p));
        return token;
    }

    /// Stores a caller-chosen token (admin tokens from configuration).
    void install_token(const std::string& token, Principal p) {
        if (token.size() < 16) throw Error(ErrorCode::ValidationError, "token too short", {{"field", "token"}});
        TokenRecord rec{std::move(p), sha256_hex(token), false, clock_()};
        auto existing = tokens_.get(rec.tokenHash);
        tokens_.put(rec.tokenHash, rec, existing ? existing->version : 0);
    }

    Principal authenticate(const std::string& token) const {
        if (token.empty()) throw Error(ErrorCode::Unauthenticated, "bearer token required");
        const auto hash = sha256_hex(token);
        auto rec = tokens_.get(hash);
        // The store lookup is keyed by the digest; the digest comparison below
        // runs in constant time so a prefix match leaks nothing.
        if (!rec || !constant_time_equals(rec->value.tokenHash, hash) || rec->value.revoked)
            throw Error(ErrorCode::Unauthenticated, "invalid or revoked token");
        return rec->value.principal;
    }

    void revoke_token(const std::string& token) {
        tokens_.update(sha256_hex(token), "token", [](TokenRecord& t) {
            if (t.revoked) return false;
            t.revoked = true;
            return true;
        });
    }

    int revoke_principal(PrincipalKind kind, const std::string& id, const std::string& domain) {
        int n = 0;
        for (const auto& t : tokens_.scan([&](const TokenRecord& t) {
                 return !t.revoked && t.principal.kind == kind && t.principal.id == id && t.principal.instanceDomain == domain;
             })) {
            tokens_.update(t.tokenHash, "token", [](TokenRecord& r) {
                r.revoked = true;
                return true;
            });
            ++n;
        }
        return n;
    }

    std::pair<instance::CourierRecord, std::string> enroll_courier(const std::string& domain, const std::string& displayName) {
        auto c = instance(domain).enroll_courier(displayName);
        return {c, issue_token({PrincipalKind::Courier, c.courierId, domain, {"courier"}})};
    }

    std::pair<std::string, std::string> create_requester(const std::string& name) {
        const auto id = ids_->uuid();
        auto token = issue_token({PrincipalKind::Requester, id, "", {"requester", "name:" + name}});
        return {id, token};
    }

    // -- quotes ----------------------------------------------------------

    quoting::NegotiationThread create_quote(const std::string& requesterId, const std::string& domain,
                                            quoting::DeliveryQuote q) {
        auto t = exchange_.create_quote(requesterId, domain, std::move(q));
        emit("quote.created", quote_created(t));
        return t;
    }

    std::vector<quoting::NegotiationThread> broadcast_quote(const std::string& requesterId, registry::QueryFilter filter,
                                                            quoting::DeliveryQuote q) {
        auto ts = exchange_.broadcast_quote(requesterId, std::move(filter), std::move(q));
        for (const auto& t : ts) emit("quote.created", quote_created(t));
        return ts;
    }

    quoting::NegotiationThread respond(const std::string& threadId, quoting::Party by, quoting::RoundKind kind,
                                       const std::string& message, std::optional<std::int64_t> amount) {
        const auto before = exchange_.get(threadId);
        const auto siblings = sibling_states(before);
        try {
            auto t = exchange_.respond(threadId, by, kind, message, amount);
            emit("quote.round", round_event(t));
            report_closed_siblings(siblings);
            return t;
        } catch (const Error& e) {
            const auto after = exchange_.get(threadId);
            if (after.state != before.state) {
                if (after.state == quoting::ThreadState::Expired) emit("quote.expired", {{"threadId", threadId}});
                else emit("quote.round", round_event(after));
            }
            throw;
        }
    }

    /// Finalizes an accepted thread and hands the task to its instance.
    delivery::Delivery finalize(const std::string& threadId) {
        auto t = exchange_.finalize(threadId);
        const auto agreed = t.agreedAmount.value_or(0);
        emit("quote.finalized", {{"threadId", t.threadId},
                                 {"instance", t.instanceDomain},
                                 {"deliveryId", *t.deliveryId},
                                 {"broadcastGroupId", t.broadcastGroupId ? nlohmann::json(*t.broadcastGroupId) : nlohmann::json()},
                                 {"currency", t.quote.currency},
                                 {"agreedMinor", agreed},
                                 {"feeHundredths", t.quote.feePercentage.hundredths_percent},
                                 {"payoutMinor", payout_after_fee(agreed, t.quote.feePercentage)}});
        return instance(t.instanceDomain).accept_finalized(t);
    }

    /// Expires quotes, repairs finalized threads whose delivery was never
    /// created (crash between the two writes) and runs each dispatcher.
    int tick(Timestamp now) {
        int n = 0;
        const auto due = exchange_.list([&](const quoting::NegotiationThread& t) {
            return t.state == quoting::ThreadState::Open && t.quote.expiresAt <= now;
        });
        n += exchange_.expire_quotes(now);
        for (const auto& t : due)
            if (exchange_.get(t.threadId).state == quoting::ThreadState::Expired) emit("quote.expired", {{"threadId", t.threadId}});
        for (const auto& t : exchange_.list([](const quoting::NegotiationThread& t) {
                 return t.state == quoting::ThreadState::Finalized;
             })) {
            if (!hosted(t.instanceDomain)) continue;
            auto& inst = instance(t.instanceDomain);
            if (!inst.chain(t.threadId)) {
                inst.accept_finalized(t);
                ++n;
            }
        }
        for (const auto& d : domains()) n += instance(d).tick(now);
        return n;
    }

    // -- idempotency -----------------------------------------------------

    /// Runs `fn` once per (scope, key). A replay with the same fingerprint gets
    /// the stored response; a different request under the same key is refused.
    StoredResponse idempotent(const std::string& scope, const std::string& key, const std::string& fingerprint,
                              const std::function<StoredResponse()>& fn) {
        const auto id = sha256_hex(scope + "\n" + key);
        std::lock_guard lock(idem_stripes_[std::hash<std::string>{}(id) % idem_stripes_.size()]);
        if (auto rec = idem_.get(id)) {
            if (rec->value.fingerprint != fingerprint)
                throw Error(ErrorCode::IllegalState, "Idempotency-Key was already used for a different request",
                            {{"idempotencyKey", key}});
            return rec->value.response;
        }
        auto resp = fn();
        if (resp.status < 500) idem_.create(id, IdempotencyRecord{fingerprint, resp, clock_()});
        return resp;
    }

private:
    void emit(const std::string& type, const nlohmann::json& body) {
        instance::Observer o;
        {
            std::lock_guard lock(mu_);
            o = observer_;
        }
        if (o) o(type, body);
    }

    static nlohmann::json quote_created(const quoting::NegotiationThread& t) {
        return {{"threadId", t.threadId},
                {"instance", t.instanceDomain},
                {"requesterId", t.requesterId},
                {"broadcastGroupId", t.broadcastGroupId ? nlohmann::json(*t.broadcastGroupId) : nlohmann::json()},
                {"currency", t.quote.currency},
                {"amountMinor", t.quote.quote},
                {"maxRounds", t.maxRounds}};
    }

    static nlohmann::json round_event(const quoting::NegotiationThread& t) {
        const auto& r = t.rounds.back();
        return {{"threadId", t.threadId},
                {"round", t.rounds.size()},
                {"by", quoting::to_string(r.by)},
                {"kind", quoting::to_string(r.kind)},
                {"amountMinor", r.amount ? nlohmann::json(*r.amount) : nlohmann::json()},
                {"state", quoting::to_string(t.state)},
                {"agreedMinor", t.agreedAmount ? nlohmann::json(*t.agreedAmount) : nlohmann::json()}};
    }

    std::vector<std::pair<std::string, quoting::ThreadState>> sibling_states(const quoting::NegotiationThread& t) const {
        std::vector<std::pair<std::string, quoting::ThreadState>> out;
        if (!t.broadcastGroupId) return out;
        if (auto g = exchange_.group(*t.broadcastGroupId))
            for (const auto& id : g->threadIds)
                if (id != t.threadId) out.emplace_back(id, exchange_.get(id).state);
        return out;
    }

    void report_closed_siblings(const std::vector<std::pair<std::string, quoting::ThreadState>>& before) {
        for (const auto& [id, state] : before) {
            const auto now = exchange_.get(id);
            if (now.state != state) emit("quote.round", round_event(now));
        }
    }

    std::shared_ptr<registry::RegistryService> registry_;
    StoreFactory stores_;
    std::unique_ptr<store::Store> shared_;
    IdSource* ids_;
    Clock clock_;
    store::Repository<TokenRecord> tokens_;
    store::Repository<IdempotencyRecord> idem_;
    quoting::Exchange exchange_;
    mutable std::mutex mu_;
    std::map<std::string, std::unique_ptr<store::Store>> instance_stores_;
    std::map<std::string, std::unique_ptr<instance::Instance>> instances_;
    instance::Observer observer_;
    std::array<std::mutex, 32> idem_stripes_;
};

}  // namespace opencourier::deployment
