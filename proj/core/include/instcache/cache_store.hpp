#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "instcache/prepopulate.hpp"

namespace instcache {

struct NormalizeConfig {
    bool trim = true;
    bool nfc = false;
};

// Cache key normalization: Unicode-aware lowercase, optional whitespace trim
// (default on) and Latin-1 NFC composition (default off). Idempotent.
std::string normalize(std::string_view instruction, const NormalizeConfig& cfg = {});

struct CacheEntry {
    std::string instruction; // original casing
    std::string response;
    double nll = 0.0;
    int64_t response_token_count = 0;
};

struct CacheStats {
    int64_t entries = 0;
    int64_t lookups = 0;
    int64_t hits = 0;
    int64_t misses = 0;
    int64_t estimated_bytes = 0;
};

class Responder; // see responder.hpp

// Exact-match instruction -> response store. Loading is an exclusive phase;
// afterwards lookups are concurrent and stats counters are atomic.
class CacheStore {
public:
    CacheStore() = default;
    explicit CacheStore(NormalizeConfig norm) : norm_(norm) {}

    CacheStore(CacheStore&&) noexcept;
    CacheStore& operator=(CacheStore&&) noexcept;

    // Fills responses for pre-populated instructions. Duplicate normalized
    // keys keep the lowest-NLL entry. Responder failures skip the entry (and
    // are counted); the load continues.
    struct LoadReport {
        size_t loaded = 0;
        size_t collisions = 0;
        size_t responder_failures = 0;
        std::vector<std::string> failed_instructions; // capped at 32
    };
    LoadReport bulk_load(std::span<const InstructionRecord> records, Responder& responder);
    LoadReport bulk_load_file(const std::string& prepop_path, Responder& responder);

    // Hit iff the normalized key is present; returns the stored response
    // verbatim. A miss is a value, not an error.
    const CacheEntry* lookup(std::string_view instruction) const;

    bool contains_key(std::string_view normalized_key) const;
    const std::unordered_map<std::string, CacheEntry>& entries() const { return entries_; }
    size_t size() const { return entries_.size(); }
    double sigma() const { return sigma_; }
    void set_sigma(double sigma) { sigma_ = sigma; }
    const NormalizeConfig& normalize_config() const { return norm_; }

    CacheStats stats() const;
    void reset_counters();

    // Sum over entries of key + instruction + response byte lengths plus a
    // fixed 64-byte overhead each.
    int64_t estimated_bytes() const;
    double avg_response_tokens() const;

    // Canonical snapshot: header line then entries sorted by normalized key.
    // persist(load_snapshot(p)) is byte-identical to p.
    void persist(const std::string& path) const;
    static CacheStore load_snapshot(const std::string& path);

private:
    NormalizeConfig norm_;
    double sigma_ = 0.0;
    std::unordered_map<std::string, CacheEntry> entries_;
    mutable std::atomic<int64_t> lookups_{0};
    mutable std::atomic<int64_t> hits_{0};
};

} // namespace instcache
