#include "instcache/prepopulate.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <deque>
#include <exception>
#include <optional>
#include <thread>

#include "json_util.hpp"

namespace instcache {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
}

struct SearchNode {
    StateId state = 0;
    double cum_nll = 0.0;
    std::vector<TokenId> path;
    std::optional<TokenDistribution> dist;
};

struct SearchSink {
    std::vector<InstructionRecord> instructions;
    PrepopStats stats;
    // When set, nodes reaching this content length are collected instead of
    // expanded (frontier mode).
    int frontier_depth = -1;
    std::vector<FrontierNode> frontier;
};

// Core of Algorithm 1. Maintains a deque of live nodes; depth-first pushes
// children at the head, breadth-first at the tail. Each node owns a model
// state that is released once its children have been created.
void run_search(TokenModel& model, const PrepopConfig& cfg, std::deque<SearchNode> work,
                SearchSink& sink) {
    const ModelSpec& spec = model.spec();
    const double budget = cfg.sigma + cfg.tolerance;
    const StateId root = model.root_state();

    SearchNode node;
    std::vector<SearchNode> children;

    auto release_quietly = [&](StateId s) {
        if (s == 0 || s == root) return;
        try {
            model.release(s);
        } catch (...) {
        }
    };
    auto release_all = [&]() {
        release_quietly(node.state);
        for (auto& c : children) release_quietly(c.state);
        for (auto& n : work) release_quietly(n.state);
    };

    try {
        while (!work.empty()) {
            // Fetch missing distributions for the head of the deque in one
            // batched call; logical order is untouched because results are
            // memoized per node and consumed in deque order.
            if (!work.front().dist.has_value()) {
                std::vector<StateId> states;
                std::vector<size_t> indices;
                const size_t window = std::min(work.size(), static_cast<size_t>(cfg.batch_size));
                for (size_t i = 0; i < window; ++i) {
                    if (!work[i].dist.has_value()) {
                        states.push_back(work[i].state);
                        indices.push_back(i);
                    }
                }
                auto dists = model.distribution_batch(states, kAllTokens);
                for (size_t i = 0; i < indices.size(); ++i) {
                    work[indices[i]].dist = std::move(dists[i]);
                }
            }

            node = std::move(work.front());
            work.pop_front();
            sink.stats.nodes_expanded++;

            const int content_len = static_cast<int>(node.path.size());
            const bool can_extend = content_len + 1 <= cfg.max_len - 1;

            children.clear();
            const auto& entries = node.dist->entries;
            for (size_t i = 0; i < entries.size(); ++i) {
                const auto& e = entries[i];
                const double child_nll = node.cum_nll - std::log(e.prob);
                if (child_nll > budget) {
                    // Sorted descending by probability: everything after this
                    // child is at least as expensive.
                    sink.stats.nodes_pruned += static_cast<int64_t>(entries.size() - i);
                    break;
                }
                if (e.token == spec.eos_id) {
                    if (content_len >= cfg.min_len) {
                        InstructionRecord rec;
                        rec.instruction = model.decode(node.path);
                        rec.tokens = node.path;
                        rec.tokens.push_back(spec.eos_id);
                        rec.nll = child_nll;
                        sink.instructions.push_back(std::move(rec));
                    }
                    continue;
                }
                if (e.token == spec.unk_id || e.token == spec.bos_id) {
                    continue; // unk cannot decode to concrete text; bos is never extended
                }
                if (sink.frontier_depth >= 0 && content_len + 1 == sink.frontier_depth) {
                    FrontierNode f;
                    f.path = node.path;
                    f.path.push_back(e.token);
                    f.cum_nll = child_nll;
                    sink.frontier.push_back(std::move(f));
                    continue;
                }
                if (!can_extend) continue; // no room for a future eos within max_len

                if (cfg.max_live_states > 0 &&
                    model.state_stats().live_states + 1 > cfg.max_live_states) {
                    throw Error("prepopulate: live-state budget exceeded (" +
                                std::to_string(cfg.max_live_states) + ")");
                }
                SearchNode child;
                child.state = model.extend(node.state, e.token);
                child.cum_nll = child_nll;
                child.path = node.path;
                child.path.push_back(e.token);
                children.push_back(std::move(child));
            }

            // Subtree material now exists as child states; the node's own
            // state is no longer needed.
            if (node.state != root) model.release(node.state);
            node.state = 0;

            if (cfg.order == TraversalOrder::depth_first) {
                for (auto it = children.rbegin(); it != children.rend(); ++it) {
                    work.push_front(std::move(*it));
                }
            } else {
                for (auto& c : children) work.push_back(std::move(c));
            }
            children.clear();
        }
        const StateStats st = model.state_stats();
        sink.stats.high_water_states = std::max(sink.stats.high_water_states, st.high_water_states);
        sink.stats.high_water_bytes = std::max(sink.stats.high_water_bytes, st.high_water_bytes);
    } catch (...) {
        release_all();
        throw;
    }
}

// Builds the state for a frontier path by walking extends from the root,
// releasing the intermediate states.
SearchNode seed_node(TokenModel& model, const FrontierNode& f) {
    const StateId root = model.root_state();
    StateId cur = root;
    for (TokenId t : f.path) {
        const StateId next = model.extend(cur, t);
        if (cur != root) model.release(cur);
        cur = next;
    }
    SearchNode n;
    n.state = cur;
    n.cum_nll = f.cum_nll;
    n.path = f.path;
    return n;
}

void sort_records(std::vector<InstructionRecord>& records) {
    std::sort(records.begin(), records.end(),
              [](const InstructionRecord& a, const InstructionRecord& b) {
                  if (a.nll != b.nll) return a.nll < b.nll;
                  if (a.instruction != b.instruction) return a.instruction < b.instruction;
                  return a.tokens < b.tokens;
              });
}

} // namespace

void PrepopConfig::validate() const {
    if (!std::isfinite(sigma) || sigma < 0.0) throw InvalidArgument("sigma must be finite and >= 0");
    if (max_len < 1) throw InvalidArgument("max_len must be >= 1");
    if (min_len < 0 || min_len > max_len) throw InvalidArgument("min_len must be in [0, max_len]");
    if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
    if (workers < 1) throw InvalidArgument("workers must be >= 1");
    if (split_depth < 0) throw InvalidArgument("split_depth must be >= 0");
}

PrepopResult prepopulate(TokenModel& model, const PrepopConfig& config) {
    config.validate();
    const auto start = Clock::now();
    model.reset_high_water();

    std::deque<SearchNode> work;
    SearchNode root;
    root.state = model.root_state();
    work.push_back(std::move(root));

    SearchSink sink;
    run_search(model, config, std::move(work), sink);

    PrepopResult result;
    result.instructions = std::move(sink.instructions);
    sort_records(result.instructions);
    result.stats = sink.stats;
    result.stats.wall_ms = elapsed_ms(start);
    return result;
}

FrontierPartition partition_frontier(TokenModel& model, const PrepopConfig& config) {
    config.validate();
    if (config.split_depth >= config.max_len) {
        throw InvalidArgument("split_depth must be < max_len");
    }
    if (config.split_depth == 0) {
        // Degenerate partition: the whole tree goes to the first worker.
        FrontierPartition part;
        part.assignments.resize(static_cast<size_t>(config.workers));
        part.assignments[0].push_back(FrontierNode{{}, 0.0});
        return part;
    }
    model.reset_high_water();

    std::deque<SearchNode> work;
    SearchNode root;
    root.state = model.root_state();
    work.push_back(std::move(root));

    SearchSink sink;
    sink.frontier_depth = config.split_depth;
    run_search(model, config, std::move(work), sink);

    // Deterministic deal: longest remaining budget first, round-robin.
    std::sort(sink.frontier.begin(), sink.frontier.end(),
              [](const FrontierNode& a, const FrontierNode& b) {
                  if (a.cum_nll != b.cum_nll) return a.cum_nll < b.cum_nll;
                  return a.path < b.path;
              });

    FrontierPartition part;
    part.shallow_hits = std::move(sink.instructions);
    part.stats = sink.stats;
    part.assignments.resize(static_cast<size_t>(config.workers));
    for (size_t i = 0; i < sink.frontier.size(); ++i) {
        part.assignments[i % static_cast<size_t>(config.workers)].push_back(
            std::move(sink.frontier[i]));
    }
    return part;
}

PrepopResult prepopulate_partitioned(TokenModel& model, const PrepopConfig& config) {
    config.validate();
    const auto start = Clock::now();

    FrontierPartition part = partition_frontier(model, config);

    PrepopResult result;
    result.instructions = std::move(part.shallow_hits);
    result.stats = part.stats;

    auto run_assignment = [&config](TokenModel& m, const std::vector<FrontierNode>& nodes,
                                    SearchSink& sink) {
        std::deque<SearchNode> work;
        for (const auto& f : nodes) work.push_back(seed_node(m, f));
        run_search(m, config, std::move(work), sink);
    };

    std::vector<SearchSink> sinks(part.assignments.size());
    const bool threaded = model.cloneable() && config.workers > 1;
    if (threaded) {
        std::vector<std::unique_ptr<TokenModel>> clones;
        for (size_t i = 0; i < part.assignments.size(); ++i) clones.push_back(model.clone());
        std::vector<std::thread> threads;
        std::vector<std::exception_ptr> errors(part.assignments.size());
        for (size_t i = 0; i < part.assignments.size(); ++i) {
            threads.emplace_back([&, i] {
                try {
                    run_assignment(*clones[i], part.assignments[i], sinks[i]);
                } catch (...) {
                    errors[i] = std::current_exception();
                }
            });
        }
        for (auto& t : threads) t.join();
        for (auto& e : errors) {
            if (e) std::rethrow_exception(e);
        }
    } else {
        for (size_t i = 0; i < part.assignments.size(); ++i) {
            run_assignment(model, part.assignments[i], sinks[i]);
        }
    }

    for (auto& sink : sinks) {
        result.instructions.insert(result.instructions.end(),
                                   std::make_move_iterator(sink.instructions.begin()),
                                   std::make_move_iterator(sink.instructions.end()));
        result.stats.nodes_expanded += sink.stats.nodes_expanded;
        result.stats.nodes_pruned += sink.stats.nodes_pruned;
        // Upper bound: workers may peak concurrently.
        result.stats.high_water_states += sink.stats.high_water_states;
        result.stats.high_water_bytes += sink.stats.high_water_bytes;
    }
    sort_records(result.instructions);
    result.stats.wall_ms = elapsed_ms(start);
    return result;
}

std::vector<ProfileRow> profile_prepopulation(TokenModel& model, std::span<const double> sigmas,
                                              const PrepopConfig& base_config) {
    if (sigmas.size() < 2) {
        throw InvalidArgument("profile_prepopulation needs at least 2 sigma values");
    }
    std::vector<ProfileRow> rows;
    for (double sigma : sigmas) {
        PrepopConfig cfg = base_config;
        cfg.sigma = sigma;
        PrepopResult res = prepopulate(model, cfg);
        ProfileRow row;
        row.sigma = sigma;
        row.instructions = static_cast<int64_t>(res.instructions.size());
        row.stats = res.stats;
        rows.push_back(row);
    }
    return rows;
}

void write_prepop_file(const std::string& path, const PrepopFileMeta& meta,
                       std::span<const InstructionRecord> records) {
    using jsonio::json;
    std::ofstream out = jsonio::open_out(path);
    json header;
    header["format"] = "instcache-prepop";
    header["version"] = 1;
    header["sigma"] = meta.sigma;
    header["max_len"] = meta.max_len;
    header["min_len"] = meta.min_len;
    header["model_digest"] = meta.model_digest;
    header["count"] = records.size();
    if (!meta.config_echo.empty()) {
        json cfg;
        for (const auto& [k, v] : meta.config_echo) cfg[k] = v;
        header["config"] = std::move(cfg);
    }
    out << header.dump() << '\n';
    for (const auto& rec : records) {
        json row;
        row["instruction"] = rec.instruction;
        row["tokens"] = rec.tokens;
        row["nll"] = rec.nll;
        out << row.dump() << '\n';
    }
    if (!out) throw Error("failed writing " + path);
}

PrepopFile read_prepop_file(const std::string& path) {
    using jsonio::json;
    PrepopFile file;
    bool have_header = false;
    jsonio::for_each_line(path, [&](json& j, size_t lineno) {
        const std::string where = path + ":" + std::to_string(lineno);
        if (!have_header) {
            if (jsonio::require<std::string>(j, "format", where) != "instcache-prepop") {
                throw InvalidArgument(where + ": not an instcache-prepop file");
            }
            if (jsonio::require<int>(j, "version", where) != 1) {
                throw InvalidArgument(where + ": unsupported version");
            }
            file.meta.sigma = jsonio::require<double>(j, "sigma", where);
            file.meta.max_len = jsonio::require<int>(j, "max_len", where);
            file.meta.min_len = jsonio::get_or<int>(j, "min_len", 1);
            file.meta.model_digest = jsonio::get_or<std::string>(j, "model_digest", "");
            file.meta.count = jsonio::get_or<size_t>(j, "count", 0);
            have_header = true;
            return;
        }
        InstructionRecord rec;
        rec.instruction = jsonio::require<std::string>(j, "instruction", where);
        rec.tokens = jsonio::require<std::vector<TokenId>>(j, "tokens", where);
        rec.nll = jsonio::require<double>(j, "nll", where);
        file.records.push_back(std::move(rec));
    });
    if (!have_header) throw InvalidArgument(path + ": empty prepop file");
    return file;
}

void write_profile_file(const std::string& path, std::span<const ProfileRow> rows,
                        const std::map<std::string, std::string>& config_echo) {
    using jsonio::json;
    std::ofstream out = jsonio::open_out(path);
    json header;
    header["format"] = "instcache-profile";
    header["version"] = 1;
    header["rows"] = rows.size();
    if (!config_echo.empty()) {
        json cfg;
        for (const auto& [k, v] : config_echo) cfg[k] = v;
        header["config"] = std::move(cfg);
    }
    out << header.dump() << '\n';
    for (const auto& row : rows) {
        json r;
        r["sigma"] = row.sigma;
        r["instructions"] = row.instructions;
        r["nodes_expanded"] = row.stats.nodes_expanded;
        r["nodes_pruned"] = row.stats.nodes_pruned;
        r["wall_ms"] = row.stats.wall_ms;
        r["high_water_states"] = row.stats.high_water_states;
        r["high_water_bytes"] = row.stats.high_water_bytes;
        out << r.dump() << '\n';
    }
    if (!out) throw Error("failed writing " + path);
}

} // namespace instcache
