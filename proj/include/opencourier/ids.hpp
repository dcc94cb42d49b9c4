#pragma once

#include <array>
#include <cstdint>
#include <mutex>
#include <random>
#include <string>
#include <string_view>

#include <openssl/crypto.h>
#include <openssl/evp.h>
#include <openssl/rand.h>

namespace opencourier {

/// Source of identifiers and secrets. The seeded variant makes harness runs reproducible.
class IdSource {
public:
    virtual ~IdSource() = default;
    virtual std::uint64_t next_u64() = 0;

    /// RFC 4122 version-4 UUID text.
    std::string uuid() {
        std::array<std::uint8_t, 16> b{};
        fill(b.data(), b.size());
        b[6] = static_cast<std::uint8_t>((b[6] & 0x0f) | 0x40);
        b[8] = static_cast<std::uint8_t>((b[8] & 0x3f) | 0x80);
        static constexpr char hex[] = "0123456789abcdef";
        std::string out;
        out.reserve(36);
        for (std::size_t i = 0; i < b.size(); ++i) {
            if (i == 4 || i == 6 || i == 8 || i == 10) out += '-';
            out += hex[b[i] >> 4];
            out += hex[b[i] & 0x0f];
        }
        return out;
    }

    /// Opaque 256-bit bearer credential, hex encoded.
    std::string token() {
        std::array<std::uint8_t, 32> b{};
        fill(b.data(), b.size());
        static constexpr char hex[] = "0123456789abcdef";
        std::string out;
        for (auto v : b) {
            out += hex[v >> 4];
            out += hex[v & 0x0f];
        }
        return out;
    }

protected:
    virtual void fill(std::uint8_t* out, std::size_t n) {
        for (std::size_t i = 0; i < n; i += 8) {
            std::uint64_t v = next_u64();
            for (std::size_t k = 0; k < 8 && i + k < n; ++k) out[i + k] = static_cast<std::uint8_t>(v >> (8 * k));
        }
    }
};

class SecureIdSource final : public IdSource {
public:
    std::uint64_t next_u64() override {
        std::uint64_t v = 0;
        fill(reinterpret_cast<std::uint8_t*>(&v), sizeof v);
        return v;
    }

protected:
    void fill(std::uint8_t* out, std::size_t n) override {
        if (RAND_bytes(out, static_cast<int>(n)) != 1) {
            std::random_device rd;
            for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<std::uint8_t>(rd());
        }
    }
};

class SeededIdSource final : public IdSource {
public:
    explicit SeededIdSource(std::uint64_t seed) : engine_(seed) {}
    std::uint64_t next_u64() override {
        std::lock_guard lock(mu_);
        return engine_();
    }

private:
    std::mutex mu_;
    std::mt19937_64 engine_;
};

inline std::string to_hex(const unsigned char* data, std::size_t n) {
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(n * 2);
    for (std::size_t i = 0; i < n; ++i) {
        out += hex[data[i] >> 4];
        out += hex[data[i] & 0x0f];
    }
    return out;
}

inline std::string sha256_hex(std::string_view data) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    EVP_Digest(data.data(), data.size(), digest, &len, EVP_sha256(), nullptr);
    return to_hex(digest, len);
}

inline bool constant_time_equals(std::string_view a, std::string_view b) {
    if (a.size() != b.size()) return false;
    return CRYPTO_memcmp(a.data(), b.data(), a.size()) == 0;
}

}  // namespace opencourier
