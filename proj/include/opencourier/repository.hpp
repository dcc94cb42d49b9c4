#pragma once

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
#include "opencourier/store.hpp"

namespace opencourier::store {

/// Typed view of one aggregate kind in a Store, serialized as JSON.
template <typename T>
class Repository {
public:
    using Encode = std::function<nlohmann::json(const T&)>;
    using Decode = std::function<T(const nlohmann::json&)>;

    struct Versioned {
        T value;
        std::uint64_t version;
    };

    Repository(Store& store, std::string kind, Encode encode, Decode decode)
        : store_(&store), kind_(std::move(kind)), encode_(std::move(encode)), decode_(std::move(decode)) {}

    std::optional<Versioned> get(const std::string& id) const {
        auto rec = store_->get({kind_, id});
        if (!rec) return std::nullopt;
        return Versioned{decode_payload(*rec), rec->version};
    }

    T require(const std::string& id, const std::string& what) const {
        auto v = get(id);
        if (!v) throw Error(ErrorCode::NotFound, what + " not found: " + id, {{"id", id}});
        return std::move(v->value);
    }

    /// Creates the record; VERSION_CONFLICT if it already exists.
    std::uint64_t create(const std::string& id, const T& value) { return store_->put({kind_, id}, encode_(value).dump(), 0); }

    std::uint64_t put(const std::string& id, const T& value, std::uint64_t expected) {
        return store_->put({kind_, id}, encode_(value).dump(), expected);
    }

    /// Read-modify-write with optimistic retries. `fn` may throw to abort; it
    /// returns false to leave the record untouched.
    template <typename F>
    T update(const std::string& id, const std::string& what, F&& fn) {
        for (;;) {
            auto current = get(id);
            if (!current) throw Error(ErrorCode::NotFound, what + " not found: " + id, {{"id", id}});
            T next = current->value;
            if (!fn(next)) return current->value;
            try {
                store_->put({kind_, id}, encode_(next).dump(), current->version);
                return next;
            } catch (const Error& e) {
                if (e.code() != ErrorCode::VersionConflict) throw;
            }
        }
    }

    std::vector<T> scan(const std::function<bool(const T&)>& pred = {}) const {
        std::vector<T> out;
        for (const auto& rec : store_->scan(kind_)) {
            T v = decode_payload(rec);
            if (!pred || pred(v)) out.push_back(std::move(v));
        }
        return out;
    }

private:
    struct Cached {
        std::uint64_t version;
        std::string payload;
        T value;
    };

    // Scans re-read every record; parsing dominates, so decoded values are
    // kept until the payload changes.
    T decode_payload(const VersionedRecord& rec) const {
        {
            std::lock_guard lock(cache_->mu);
            auto it = cache_->entries.find(rec.key.id);
            if (it != cache_->entries.end() && it->second.version == rec.version && it->second.payload == rec.payload)
                return it->second.value;
        }
        T value;
        try {
            value = decode_(nlohmann::json::parse(rec.payload));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorCode::CorruptRecord, "cannot decode " + kind_ + "/" + rec.key.id + ": " + e.what());
        }
        std::lock_guard lock(cache_->mu);
        cache_->entries.insert_or_assign(rec.key.id, Cached{rec.version, rec.payload, value});
        return value;
    }

    struct Cache {
        std::mutex mu;
        std::map<std::string, Cached> entries;
    };

    Store* store_;
    std::string kind_;
    Encode encode_;
    Decode decode_;
    std::shared_ptr<Cache> cache_ = std::make_shared<Cache>();
};

}  // namespace opencourier::store
