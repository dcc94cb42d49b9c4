#pragma once

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>
#include <zlib.h>

#include <compare>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <string_view>
#include <vector>

#include "opencourier/error.hpp"

namespace opencourier::store {

struct RecordKey {
    std::string kind;
    std::string id;

    auto operator<=>(const RecordKey&) const = default;
    bool operator==(const RecordKey&) const = default;
};

struct VersionedRecord {
    RecordKey key;
    std::string payload;
    std::uint64_t version = 0;
};

using Predicate = std::function<bool(const VersionedRecord&)>;

/// Versioned key-value persistence. Every write is a compare-and-set on the
/// record version; expected version 0 means "create".
class Store {
public:
    virtual ~Store() = default;

    virtual std::optional<VersionedRecord> get(const RecordKey& key) const = 0;

    /// Returns the new version. Throws VERSION_CONFLICT if `expected_version`
    /// is not the current version.
    virtual std::uint64_t put(const RecordKey& key, std::string payload, std::uint64_t expected_version) = 0;

    /// All records of one kind, ordered by id, read from a single snapshot.
    virtual std::vector<VersionedRecord> scan(std::string_view kind, const Predicate& pred = {}) const = 0;
};

namespace detail {

struct Entry {
    std::string payload;
    std::uint64_t version = 0;
};

using Table = std::map<RecordKey, Entry>;

inline std::vector<VersionedRecord> scan_table(const Table& table, std::string_view kind, const Predicate& pred) {
    std::vector<VersionedRecord> out;
    auto it = table.lower_bound(RecordKey{std::string(kind), std::string{}});
    for (; it != table.end() && it->first.kind == kind; ++it) {
        VersionedRecord rec{it->first, it->second.payload, it->second.version};
        if (!pred || pred(rec)) out.push_back(std::move(rec));
    }
    return out;
}

inline void check_version(const Table& table, const RecordKey& key, std::uint64_t expected) {
    auto it = table.find(key);
    const std::uint64_t current = it == table.end() ? 0 : it->second.version;
    if (current != expected) {
        throw Error(ErrorCode::VersionConflict, "version conflict on " + key.kind + "/" + key.id,
                    {{"expected", expected}, {"current", current}});
    }
}

}  // namespace detail

class MemoryStore final : public Store {
public:
    std::optional<VersionedRecord> get(const RecordKey& key) const override {
        std::shared_lock lock(mu_);
        auto it = table_.find(key);
        if (it == table_.end()) return std::nullopt;
        return VersionedRecord{key, it->second.payload, it->second.version};
    }

    std::uint64_t put(const RecordKey& key, std::string payload, std::uint64_t expected_version) override {
        std::unique_lock lock(mu_);
        detail::check_version(table_, key, expected_version);
        auto& entry = table_[key];
        entry.payload = std::move(payload);
        entry.version = expected_version + 1;
        return entry.version;
    }

    std::vector<VersionedRecord> scan(std::string_view kind, const Predicate& pred = {}) const override {
        std::shared_lock lock(mu_);
        return detail::scan_table(table_, kind, pred);
    }

private:
    mutable std::shared_mutex mu_;
    detail::Table table_;
};

struct FileStoreOptions {
    bool sync_each_write = false;
    /// Compaction runs once the log exceeds this size and is more than twice the live data.
    std::uint64_t compact_min_bytes = 4 * 1024 * 1024;
};

/// Append-only log engine. Layout is documented in docs/storage.md:
/// an 8-byte file magic, then records of
///   u32 body_length | u32 crc32(body) | body
/// where body = u64 seq | u32 kind_len | kind | u32 id_len | id | u64 version | u32 payload_len | payload,
/// all integers little-endian. A torn final record is discarded on open.
class FileStore final : public Store {
public:
    static constexpr char kMagic[8] = {'O', 'C', 'S', 'T', 'O', 'R', 'E', '1'};

    explicit FileStore(std::filesystem::path path, FileStoreOptions options = {})
        : path_(std::move(path)), options_(options) {
        open_and_recover();
    }

    ~FileStore() override {
        if (fd_ >= 0) ::close(fd_);
    }

    FileStore(const FileStore&) = delete;
    FileStore& operator=(const FileStore&) = delete;

    std::optional<VersionedRecord> get(const RecordKey& key) const override {
        std::shared_lock lock(mu_);
        auto it = table_.find(key);
        if (it == table_.end()) return std::nullopt;
        return VersionedRecord{key, it->second.payload, it->second.version};
    }

    std::uint64_t put(const RecordKey& key, std::string payload, std::uint64_t expected_version) override {
        std::unique_lock lock(mu_);
        detail::check_version(table_, key, expected_version);
        const std::uint64_t version = expected_version + 1;
        const std::string frame = encode(++seq_, key, version, payload);
        write_all(fd_, frame);
        if (options_.sync_each_write) ::fdatasync(fd_);
        file_bytes_ += frame.size();
        auto& entry = table_[key];
        live_bytes_ -= entry.payload.size();
        live_bytes_ += payload.size() + key.kind.size() + key.id.size() + 36;
        entry.payload = std::move(payload);
        entry.version = version;
        if (file_bytes_ > options_.compact_min_bytes && file_bytes_ > 2 * live_bytes_) compact_locked();
        return version;
    }

    std::vector<VersionedRecord> scan(std::string_view kind, const Predicate& pred = {}) const override {
        std::shared_lock lock(mu_);
        return detail::scan_table(table_, kind, pred);
    }

    /// Rewrites the log with only the latest version of each record.
    void compact() {
        std::unique_lock lock(mu_);
        compact_locked();
    }

    std::uint64_t last_sequence() const {
        std::shared_lock lock(mu_);
        return seq_;
    }

    std::uint64_t file_bytes() const {
        std::shared_lock lock(mu_);
        return file_bytes_;
    }

private:
    static void put_u32(std::string& out, std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
    }
    static void put_u64(std::string& out, std::uint64_t v) {
        for (int i = 0; i < 8; ++i) out += static_cast<char>((v >> (8 * i)) & 0xff);
    }
    static std::uint32_t get_u32(const unsigned char* p) {
        std::uint32_t v = 0;
        for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
        return v;
    }
    static std::uint64_t get_u64(const unsigned char* p) {
        std::uint64_t v = 0;
        for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
        return v;
    }
    static std::uint32_t crc(std::string_view body) {
        return static_cast<std::uint32_t>(
            ::crc32(0L, reinterpret_cast<const Bytef*>(body.data()), static_cast<uInt>(body.size())));
    }

    static std::string encode(std::uint64_t seq, const RecordKey& key, std::uint64_t version, std::string_view payload) {
        std::string body;
        put_u64(body, seq);
        put_u32(body, static_cast<std::uint32_t>(key.kind.size()));
        body += key.kind;
        put_u32(body, static_cast<std::uint32_t>(key.id.size()));
        body += key.id;
        put_u64(body, version);
        put_u32(body, static_cast<std::uint32_t>(payload.size()));
        body += payload;
        std::string frame;
        put_u32(frame, static_cast<std::uint32_t>(body.size()));
        put_u32(frame, crc(body));
        frame += body;
        return frame;
    }

    static void write_all(int fd, std::string_view data) {
        while (!data.empty()) {
            const ssize_t n = ::write(fd, data.data(), data.size());
            if (n < 0) {
                if (errno == EINTR) continue;
                throw Error(ErrorCode::SourceUnavailable, std::string("store write failed: ") + std::strerror(errno));
            }
            data.remove_prefix(static_cast<std::size_t>(n));
        }
    }

    static std::string read_file(const std::filesystem::path& path) {
        std::string data;
        const int fd = ::open(path.c_str(), O_RDONLY | O_CLOEXEC);
        if (fd < 0) return data;
        char buf[65536];
        for (;;) {
            const ssize_t n = ::read(fd, buf, sizeof buf);
            if (n < 0 && errno == EINTR) continue;
            if (n <= 0) break;
            data.append(buf, static_cast<std::size_t>(n));
        }
        ::close(fd);
        return data;
    }

    void open_and_recover() {
        if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
        const std::string data = read_file(path_);
        std::size_t valid_end = 0;
        if (data.size() >= sizeof kMagic) {
            if (std::memcmp(data.data(), kMagic, sizeof kMagic) != 0)
                throw Error(ErrorCode::CorruptRecord, "not a store file: " + path_.string());
            valid_end = replay(data);
        }
        fd_ = ::open(path_.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
        if (fd_ < 0)
            throw Error(ErrorCode::SourceUnavailable, "cannot open store file " + path_.string() + ": " + std::strerror(errno));
        if (valid_end == 0) {
            if (::ftruncate(fd_, 0) != 0) throw Error(ErrorCode::SourceUnavailable, "cannot reset store file");
            write_all(fd_, std::string_view(kMagic, sizeof kMagic));
            valid_end = sizeof kMagic;
        } else if (valid_end < data.size()) {
            // Torn tail from an interrupted append.
            if (::ftruncate(fd_, static_cast<off_t>(valid_end)) != 0)
                throw Error(ErrorCode::SourceUnavailable, "cannot truncate torn store tail");
        }
        ::lseek(fd_, 0, SEEK_END);
        file_bytes_ = valid_end;
        // O_APPEND after the header so every frame lands at the end.
        ::fcntl(fd_, F_SETFL, ::fcntl(fd_, F_GETFL) | O_APPEND);
    }

    std::size_t replay(const std::string& data) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(data.data());
        std::size_t pos = sizeof kMagic;
        while (pos + 8 <= data.size()) {
            const std::uint32_t len = get_u32(bytes + pos);
            const std::uint32_t want_crc = get_u32(bytes + pos + 4);
            if (pos + 8 + len > data.size()) break;
            const std::string_view body(data.data() + pos + 8, len);
            const bool last = pos + 8 + len == data.size();
            if (crc(body) != want_crc) {
                if (last) break;
                throw Error(ErrorCode::CorruptRecord, "CRC mismatch at offset " + std::to_string(pos));
            }
            decode_into_table(body, pos);
            pos += 8 + len;
        }
        return pos;
    }

    void decode_into_table(std::string_view body, std::size_t offset) {
        const auto* p = reinterpret_cast<const unsigned char*>(body.data());
        const std::size_t n = body.size();
        std::size_t at = 0;
        auto need = [&](std::size_t k) {
            if (at + k > n) throw Error(ErrorCode::CorruptRecord, "truncated record body at offset " + std::to_string(offset));
        };
        need(8);
        const std::uint64_t seq = get_u64(p + at);
        at += 8;
        if (seq <= seq_) throw Error(ErrorCode::CorruptRecord, "non-monotone sequence at offset " + std::to_string(offset));
        seq_ = seq;
        need(4);
        const std::uint32_t kind_len = get_u32(p + at);
        at += 4;
        need(kind_len);
        RecordKey key;
        key.kind.assign(body.data() + at, kind_len);
        at += kind_len;
        need(4);
        const std::uint32_t id_len = get_u32(p + at);
        at += 4;
        need(id_len);
        key.id.assign(body.data() + at, id_len);
        at += id_len;
        need(12);
        const std::uint64_t version = get_u64(p + at);
        at += 8;
        const std::uint32_t payload_len = get_u32(p + at);
        at += 4;
        need(payload_len);
        auto& entry = table_[key];
        if (version <= entry.version)
            throw Error(ErrorCode::CorruptRecord, "version regression for " + key.kind + "/" + key.id);
        live_bytes_ -= entry.payload.size();
        entry.payload.assign(body.data() + at, payload_len);
        entry.version = version;
        live_bytes_ += payload_len + key.kind.size() + key.id.size() + 36;
    }

    void compact_locked() {
        const auto tmp = path_.string() + ".compact";
        const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
        if (fd < 0) throw Error(ErrorCode::SourceUnavailable, "cannot create compaction file");
        std::string out(kMagic, sizeof kMagic);
        for (const auto& [key, entry] : table_) out += encode(++seq_, key, entry.version, entry.payload);
        write_all(fd, out);
        ::fsync(fd);
        ::close(fd);
        std::filesystem::rename(tmp, path_);
        ::close(fd_);
        fd_ = ::open(path_.c_str(), O_RDWR | O_APPEND | O_CLOEXEC);
        if (fd_ < 0) throw Error(ErrorCode::SourceUnavailable, "cannot reopen store after compaction");
        file_bytes_ = out.size();
    }

    std::filesystem::path path_;
    FileStoreOptions options_;
    mutable std::shared_mutex mu_;
    detail::Table table_;
    int fd_ = -1;
    std::uint64_t seq_ = 0;
    std::uint64_t file_bytes_ = 0;
    std::uint64_t live_bytes_ = 0;
};

}  // namespace opencourier::store
