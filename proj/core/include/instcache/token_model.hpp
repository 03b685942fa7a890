#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "instcache/error.hpp"

namespace instcache {

using TokenId = int32_t;
using StateId = int64_t;

constexpr int kAllTokens = 0; // top_k value meaning "full distribution"

// Static description of a next-token model's text space.
//
// vocab_size counts generatable tokens: content plus eos. bos is never
// generated and unk, when present, is excluded from the count (smoothing
// treats the support as vocab_size + 1 outcomes).
struct ModelSpec {
    int32_t vocab_size = 0;
    int32_t max_len = 0; // max tokens per instruction, excluding bos, including eos
    TokenId bos_id = 0;
    TokenId eos_id = 1;
    TokenId unk_id = -1; // -1: model has no unk token
};

struct TokenProb {
    TokenId token = 0;
    double prob = 0.0;
};

// Ranked next-token distribution: strictly non-increasing probability,
// ties broken by ascending token id, entries sum to 1 within 1e-9.
// Zero-probability tokens are omitted (entries carry probs in (0,1]).
struct TokenDistribution {
    std::vector<TokenProb> entries;

    void sort_canonical();
    void truncate_top_k(int top_k);
    double sum() const;
    // Throws Error if an invariant is violated; used by tests and adapters.
    void validate(double tolerance = 1e-9) const;
};

struct StateStats {
    int64_t live_states = 0;
    int64_t retained_bytes = 0;
    int64_t high_water_states = 0;
    int64_t high_water_bytes = 0;
};

// Abstract next-token model. States form a tree rooted at a bos-conditioned
// root state; extend() derives a child and leaves the parent valid; release()
// retires a state and its accounted bytes. Handles are single-owner per
// lineage; distribution() may be called concurrently on live states.
class TokenModel {
public:
    virtual ~TokenModel() = default;

    virtual const ModelSpec& spec() const = 0;

    // Returns the live root state, creating one if necessary.
    virtual StateId root_state() = 0;
    virtual TokenDistribution distribution(StateId state, int top_k = kAllTokens) = 0;
    virtual StateId extend(StateId state, TokenId token) = 0;
    virtual void release(StateId state) = 0;
    virtual int depth(StateId state) const = 0;

    // P(token | state). Default scans the full distribution; models override
    // with direct computation. Returns 0 for tokens outside the support.
    virtual double token_prob(StateId state, TokenId token);

    // Distributions for several states at once. The default loops; the wire
    // adapter overrides it to pipeline requests.
    virtual std::vector<TokenDistribution> distribution_batch(std::span<const StateId> states,
                                                              int top_k = kAllTokens);

    virtual std::string token_text(TokenId token) const = 0;
    virtual std::optional<TokenId> lookup_token(std::string_view word) const = 0;

    // Tokens joined into instruction text (eos/bos excluded).
    std::string decode(std::span<const TokenId> tokens) const;

    // Whitespace-tokenizes and maps words; out-of-vocabulary words map to unk
    // when the model has one, otherwise encoding fails with nullopt.
    virtual std::optional<std::vector<TokenId>> encode(std::string_view instruction) const;

    virtual StateStats state_stats() const = 0;
    virtual void reset_high_water() = 0;

    // Identity string for artifact headers.
    virtual std::string digest() const = 0;

    virtual bool cloneable() const { return true; }
    // Independent model handle with its own state ledger. Throws Error when
    // not cloneable (e.g. a subprocess-backed adapter).
    virtual std::unique_ptr<TokenModel> clone() const = 0;
};

// State bookkeeping shared by the in-process models: id allocation, depth,
// per-state byte accounting and high-water tracking. Thread-safe.
class StateLedger {
public:
    explicit StateLedger(int64_t overhead_bytes = 64, int64_t bytes_per_token = 1024);

    StateId create(int depth);
    void remove(StateId state); // throws StateError on unknown/released ids
    int depth(StateId state) const;
    bool alive(StateId state) const;
    void check_alive(StateId state) const;

    StateStats stats() const;
    void reset_high_water();

private:
    int64_t state_bytes(int depth) const {
        return overhead_bytes_ + static_cast<int64_t>(depth) * bytes_per_token_;
    }

    struct Impl;
    std::shared_ptr<Impl> impl_;
    int64_t overhead_bytes_;
    int64_t bytes_per_token_;
};

} // namespace instcache
