#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "instcache/cache_store.hpp"
#include "instcache/text.hpp"

namespace instcache {

struct CorpusRecord {
    std::string conversation_id;
    int turn_index = 0;
    std::string instruction;
    std::string response;
    int64_t instruction_token_len = 0;
    int64_t response_token_len = 0;
    std::optional<std::string> ip_hash;
    std::optional<int64_t> timestamp; // epoch seconds, UTC
};

struct IngestReport {
    size_t lines = 0;
    size_t records = 0;
    size_t skipped = 0;
};

// One JSON object per line: either a single record
//   {"conversation_id", "turn", "instruction", "response", "ip_hash"?, "timestamp"?}
// or a whole conversation {"conversation_id", "turns": [{"instruction",
// "response"}, ...], ...} which expands to one record per turn. Token lengths
// are computed with the pipeline tokenizer. Malformed lines are skipped and
// counted; more than 10% malformed is a hard error.
std::vector<CorpusRecord> ingest(const std::string& path, IngestReport* report = nullptr,
                                 const text::TokenizerConfig& tokenizer = {});

void write_corpus_file(const std::string& path, std::span<const CorpusRecord> records);

struct FilterConfig {
    int64_t max_instr_tokens = 128; // strict <
    int64_t min_resp_tokens = 32;   // inclusive >=
    bool first_turn_only = true;
};

std::vector<CorpusRecord> filter_pipeline(std::span<const CorpusRecord> records,
                                          const FilterConfig& cfg = {});

enum class DedupMode { per_ip, global };

// per_ip keeps the first occurrence of each (ip_hash, normalized
// instruction); global keys on the normalized instruction alone. per_ip
// requires ip_hash on every record.
std::vector<CorpusRecord> dedup(std::span<const CorpusRecord> records, DedupMode mode,
                                const NormalizeConfig& norm = {});

// Best-effort personal-information scrub: drops records whose instruction
// matches any of the given ECMAScript regexes. Off by default in the
// pipeline.
std::vector<CorpusRecord> scrub(std::span<const CorpusRecord> records,
                                std::span<const std::string> deny_patterns);

struct SplitSpec {
    double train_frac = 0.8;
    double valid_frac = 0.1;
    double test_frac = 0.1;
    uint64_t seed = 42;
    enum class Mode { random, time_ordered } mode = Mode::random;

    void validate() const;
};

struct SplitResult {
    std::vector<CorpusRecord> train;
    std::vector<CorpusRecord> valid;
    std::vector<CorpusRecord> test;
};

SplitResult split(std::span<const CorpusRecord> records, const SplitSpec& spec);

struct EvalResult {
    double hit_rate = 0.0;
    size_t hits = 0;
    size_t total = 0;
    // Hit instructions, capped; when train records are supplied only hits
    // absent from the training set are listed (novel hits).
    std::vector<std::string> examples;
};

EvalResult evaluate_hit_rate(const CacheStore& store, std::span<const CorpusRecord> test_records,
                             size_t max_examples = 20,
                             std::span<const CorpusRecord> train_records = {});

// Fraction of test instructions whose normalized form appears in train — the
// repetition upper bound of traditional exact-match caching.
double repetition_baseline(std::span<const CorpusRecord> train,
                           std::span<const CorpusRecord> test,
                           const NormalizeConfig& norm = {});

struct WindowRate {
    int window = 0;
    int64_t start_ts = 0;
    int64_t end_ts = 0;
    size_t n = 0;
    size_t hits = 0;
    double hit_rate = 0.0;
};

// Sorts records by timestamp and splits them into `windows` consecutive
// equal-count slices; reports the hit rate per slice.
std::vector<WindowRate> timeslice_eval(const CacheStore& store,
                                       std::span<const CorpusRecord> records, int windows);

void write_timeslice_report(const std::string& path, std::span<const WindowRate> rows,
                            const std::map<std::string, std::string>& config_echo);

// "YYYY-MM-DDTHH:MM:SS" with optional "Z" or "+hh:mm" offset.
std::optional<int64_t> parse_iso8601(std::string_view s);
std::string format_iso8601(int64_t epoch_seconds);

} // namespace instcache
