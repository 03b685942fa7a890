#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "instcache/analytics.hpp"
#include "instcache/dataset.hpp"

namespace instcache {

// Declarative experiment manifest. Parsed from a key = value file (one per
// line, '#' comments, dotted section keys); flag overrides win. Unknown keys
// are rejected.
struct RunConfig {
    uint64_t seed = 42;
    std::string out_dir = "out";
    std::string log_level = "info";

    // dataset
    std::string corpus_path;
    double train_frac = 0.8;
    double valid_frac = 0.1;
    double test_frac = 0.1;
    std::string split_mode = "random"; // random | time-ordered
    int64_t max_instr_tokens = 128;
    int64_t min_resp_tokens = 32;
    bool first_turn_only = true;
    std::string dedup_mode = "global"; // off | global | per_ip
    std::vector<std::string> scrub_patterns;

    // model
    int ngram_order = 2;
    double smoothing_alpha = 0.01;
    int vocab_cap = 8192;
    bool case_fold = true;
    bool nfc = true;

    // prepop
    std::vector<double> sigma_ladder;
    int max_len = 16;
    int min_len = 1;
    int workers = 1;
    int split_depth = 2;
    int batch_size = 256;

    // cache
    std::string responder = "corpus-echo"; // template | corpus-echo | http:host:port
    bool norm_trim = true;
    bool norm_nfc = false;

    // analytics
    int rank_fit_positions = 2000;
    bool csv_mirror = false; // CSV copy next to predictions.ndjson

    // serving (optional stage)
    bool run_loadgen = false;
    double lambda = 10.0;
    double duration_s = 10.0;
    double per_token_ms = 10.0;
    double startup_ms = 0.0;
    int sim_response_tokens = 100;

    void apply_override(const std::string& key, const std::string& value);
    std::map<std::string, std::string> echo() const;
    void validate() const;

    static RunConfig from_file(const std::string& path);
};

struct E2eRow {
    double sigma = 0.0;
    int64_t entries = 0;
    double actual_hit_rate = 0.0;
    double predicted_hit_rate = 0.0;
    double predicted_count_full = 0.0;
    double predicted_count_simplified = 0.0;
    double avg_response_tokens = 0.0;
    int64_t estimated_bytes = 0;
    double prepop_wall_ms = 0.0; // reported in timings only, never digested
};

struct E2eReport {
    std::vector<E2eRow> rows;
    double repetition_baseline = 0.0;
    PowerLawFit fit;
    size_t train_size = 0;
    size_t valid_size = 0;
    size_t test_size = 0;
    std::string report_path;
    std::string digests_path;
    std::map<std::string, std::string> artifact_digests;
};

// One command's worth of the experimental flow: ingest, filter, dedup,
// split, train the n-gram, build a cache per sigma, compare predicted vs
// actual hit rates, and write Fig-4/5-shaped NDJSON plus artifact digests.
// Reruns with the same config and corpus produce byte-identical artifacts.
E2eReport end_to_end(const RunConfig& config);

} // namespace instcache
