#include "instcache/cache_store.hpp"

#include <algorithm>

#include "instcache/responder.hpp"
#include "instcache/text.hpp"
#include "json_util.hpp"

namespace instcache {

std::string normalize(std::string_view instruction, const NormalizeConfig& cfg) {
    std::string s = cfg.nfc ? text::compose_latin1(instruction) : std::string(instruction);
    s = text::lowercase_fold(s);
    if (cfg.trim) s = text::trim(s);
    return s;
}

CacheStore::CacheStore(CacheStore&& other) noexcept { *this = std::move(other); }

CacheStore& CacheStore::operator=(CacheStore&& other) noexcept {
    if (this != &other) {
        norm_ = other.norm_;
        sigma_ = other.sigma_;
        entries_ = std::move(other.entries_);
        lookups_.store(other.lookups_.load());
        hits_.store(other.hits_.load());
    }
    return *this;
}

CacheStore::LoadReport CacheStore::bulk_load(std::span<const InstructionRecord> records,
                                             Responder& responder) {
    LoadReport report;
    for (const auto& rec : records) {
        std::string key = normalize(rec.instruction, norm_);
        auto it = entries_.find(key);
        if (it != entries_.end()) {
            ++report.collisions;
            if (rec.nll >= it->second.nll) continue; // lowest NLL wins
        }
        std::string response;
        try {
            response = responder.respond(rec.instruction);
        } catch (const std::exception& e) {
            ++report.responder_failures;
            if (report.failed_instructions.size() < 32) {
                report.failed_instructions.push_back(rec.instruction + " (" + e.what() + ")");
            }
            continue;
        }
        CacheEntry entry;
        entry.instruction = rec.instruction;
        entry.response = std::move(response);
        entry.nll = rec.nll;
        entry.response_token_count = static_cast<int64_t>(text::word_count(entry.response));
        entries_[std::move(key)] = std::move(entry);
        ++report.loaded;
    }
    return report;
}

CacheStore::LoadReport CacheStore::bulk_load_file(const std::string& prepop_path,
                                                  Responder& responder) {
    PrepopFile file = read_prepop_file(prepop_path);
    sigma_ = file.meta.sigma;
    return bulk_load(file.records, responder);
}

const CacheEntry* CacheStore::lookup(std::string_view instruction) const {
    lookups_.fetch_add(1, std::memory_order_relaxed);
    const auto it = entries_.find(normalize(instruction, norm_));
    if (it == entries_.end()) return nullptr;
    hits_.fetch_add(1, std::memory_order_relaxed);
    return &it->second;
}

bool CacheStore::contains_key(std::string_view normalized_key) const {
    return entries_.count(std::string(normalized_key)) > 0;
}

CacheStats CacheStore::stats() const {
    CacheStats st;
    st.entries = static_cast<int64_t>(entries_.size());
    st.lookups = lookups_.load();
    st.hits = hits_.load();
    st.misses = st.lookups - st.hits;
    st.estimated_bytes = estimated_bytes();
    return st;
}

void CacheStore::reset_counters() {
    lookups_.store(0);
    hits_.store(0);
}

int64_t CacheStore::estimated_bytes() const {
    int64_t total = 0;
    for (const auto& [key, entry] : entries_) {
        total += static_cast<int64_t>(key.size() + entry.instruction.size() +
                                      entry.response.size()) +
                 64;
    }
    return total;
}

double CacheStore::avg_response_tokens() const {
    if (entries_.empty()) return 0.0;
    int64_t total = 0;
    for (const auto& [key, entry] : entries_) total += entry.response_token_count;
    return static_cast<double>(total) / static_cast<double>(entries_.size());
}

void CacheStore::persist(const std::string& path) const {
    using jsonio::json;
    std::ofstream out = jsonio::open_out(path);
    json header;
    header["format"] = "instcache-store";
    header["version"] = 1;
    header["sigma"] = sigma_;
    header["count"] = entries_.size();
    header["trim"] = norm_.trim;
    header["nfc"] = norm_.nfc;
    out << header.dump() << '\n';

    std::vector<const std::string*> keys;
    keys.reserve(entries_.size());
    for (const auto& [key, entry] : entries_) keys.push_back(&key);
    std::sort(keys.begin(), keys.end(), [](const auto* a, const auto* b) { return *a < *b; });

    for (const auto* key : keys) {
        const CacheEntry& e = entries_.at(*key);
        json row;
        row["key"] = *key;
        row["instruction"] = e.instruction;
        row["response"] = e.response;
        row["nll"] = e.nll;
        row["resp_tokens"] = e.response_token_count;
        out << row.dump() << '\n';
    }
    if (!out) throw Error("failed writing " + path);
}

CacheStore CacheStore::load_snapshot(const std::string& path) {
    using jsonio::json;
    CacheStore store;
    bool have_header = false;
    jsonio::for_each_line(path, [&](json& j, size_t lineno) {
        const std::string where = path + ":" + std::to_string(lineno);
        if (!have_header) {
            if (jsonio::require<std::string>(j, "format", where) != "instcache-store") {
                throw InvalidArgument(where + ": not an instcache-store snapshot");
            }
            if (jsonio::require<int>(j, "version", where) != 1) {
                throw InvalidArgument(where + ": unsupported snapshot version");
            }
            store.sigma_ = jsonio::require<double>(j, "sigma", where);
            store.norm_.trim = jsonio::get_or<bool>(j, "trim", true);
            store.norm_.nfc = jsonio::get_or<bool>(j, "nfc", false);
            have_header = true;
            return;
        }
        CacheEntry entry;
        std::string key = jsonio::require<std::string>(j, "key", where);
        entry.instruction = jsonio::require<std::string>(j, "instruction", where);
        entry.response = jsonio::require<std::string>(j, "response", where);
        entry.nll = jsonio::require<double>(j, "nll", where);
        entry.response_token_count = jsonio::require<int64_t>(j, "resp_tokens", where);
        store.entries_[std::move(key)] = std::move(entry);
    });
    if (!have_header) throw InvalidArgument(path + ": empty snapshot");
    return store;
}

} // namespace instcache
