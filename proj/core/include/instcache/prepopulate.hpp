#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "instcache/token_model.hpp"

namespace instcache {

enum class TraversalOrder { depth_first, breadth_first };

struct PrepopConfig {
    double sigma = 0.0; // max cumulative NLL, nats
    int max_len = 0;    // max tokens per instruction, excluding bos, including eos
    int min_len = 1;    // min content tokens; 0 admits the bare-eos empty instruction
    int batch_size = 256;
    int workers = 1;
    int split_depth = 2;
    TraversalOrder order = TraversalOrder::depth_first;
    int64_t max_live_states = 0; // 0 = unbounded; otherwise extend past it is an error
    double tolerance = 1e-9;     // slack on the sigma comparison

    void validate() const;
};

struct InstructionRecord {
    std::string instruction;
    std::vector<TokenId> tokens; // content tokens plus trailing eos
    double nll = 0.0;
};

struct PrepopStats {
    int64_t nodes_expanded = 0; // nodes whose distribution was queried
    int64_t nodes_pruned = 0;   // children cut by the sigma budget
    double wall_ms = 0.0;
    int64_t high_water_states = 0;
    int64_t high_water_bytes = 0;
};

struct PrepopResult {
    std::vector<InstructionRecord> instructions; // sorted by (nll, text, tokens)
    PrepopStats stats;
};

// Bounded tree search over the model's text space: emits every eos-terminated
// path with cumulative NLL <= sigma and length <= max_len. Children are
// visited in descending probability order; once a child exceeds the budget
// the rest of the (sorted) distribution is pruned without further model
// calls. A node's state is released as soon as its children exist; after the
// search only the root state remains live.
PrepopResult prepopulate(TokenModel& model, const PrepopConfig& config);

struct FrontierNode {
    std::vector<TokenId> path;
    double cum_nll = 0.0;
};

struct FrontierPartition {
    std::vector<InstructionRecord> shallow_hits; // emitted above the split depth
    std::vector<std::vector<FrontierNode>> assignments;
    PrepopStats stats;
};

// Single-threaded search down to split_depth; the surviving nodes at that
// depth are dealt to `workers` bins round-robin after sorting by remaining
// NLL budget (descending).
FrontierPartition partition_frontier(TokenModel& model, const PrepopConfig& config);

// partition_frontier + one search per assignment (threaded when the model is
// cloneable) + merge. The result equals prepopulate() exactly.
PrepopResult prepopulate_partitioned(TokenModel& model, const PrepopConfig& config);

struct ProfileRow {
    double sigma = 0.0;
    int64_t instructions = 0;
    PrepopStats stats;
};

// Runs the search across a sigma ladder (>= 2 values) and reports per-sigma
// cost rows for the linear-cost and memory profiles.
std::vector<ProfileRow> profile_prepopulation(TokenModel& model, std::span<const double> sigmas,
                                              const PrepopConfig& base_config);

struct PrepopFileMeta {
    double sigma = 0.0;
    int max_len = 0;
    int min_len = 1;
    std::string model_digest;
    size_t count = 0;
    std::map<std::string, std::string> config_echo; // effective config, key -> value
};

void write_prepop_file(const std::string& path, const PrepopFileMeta& meta,
                       std::span<const InstructionRecord> records);

struct PrepopFile {
    PrepopFileMeta meta;
    std::vector<InstructionRecord> records;
};

PrepopFile read_prepop_file(const std::string& path);

void write_profile_file(const std::string& path, std::span<const ProfileRow> rows,
                        const std::map<std::string, std::string>& config_echo);

} // namespace instcache
