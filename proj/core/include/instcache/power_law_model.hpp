#pragma once

#include <memory>
#include <string>
#include <vector>

#include "instcache/token_model.hpp"

namespace instcache {

// Synthetic context-independent model: the rank-i token has probability
// beta * i^-alpha at every step, beta the exact normalizer 1/sum(i^-alpha).
// alpha = 0 gives the uniform model. eos sits at a fixed rank (default 1);
// content tokens fill the remaining ranks in ascending token id order, and
// are named a, b, ..., z, aa, ab, ... for decoding.
struct PowerLawModelConfig {
    int32_t vocab_size = 0; // content tokens + eos
    double alpha = 1.0;     // >= 0
    int32_t eos_rank = 1;   // 1-based rank of eos among the V tokens
    int32_t max_len = 64;
    std::string kind_label = "powerlaw"; // "uniform" for the alpha=0 sugar
};

class PowerLawModel final : public TokenModel {
public:
    explicit PowerLawModel(const PowerLawModelConfig& cfg);

    const ModelSpec& spec() const override { return spec_; }
    StateId root_state() override;
    TokenDistribution distribution(StateId state, int top_k = kAllTokens) override;
    StateId extend(StateId state, TokenId token) override;
    void release(StateId state) override;
    int depth(StateId state) const override;
    double token_prob(StateId state, TokenId token) override;

    std::string token_text(TokenId token) const override;
    std::optional<TokenId> lookup_token(std::string_view word) const override;

    StateStats state_stats() const override { return ledger_.stats(); }
    void reset_high_water() override { ledger_.reset_high_water(); }
    std::string digest() const override;
    std::unique_ptr<TokenModel> clone() const override;

    double beta() const { return beta_; }
    double alpha() const { return cfg_.alpha; }
    // Probability of the token at 1-based rank i.
    double rank_prob(int32_t rank) const;
    int32_t token_rank(TokenId token) const;

    // Content token naming: 0 -> "a", 25 -> "z", 26 -> "aa", ...
    static std::string content_name(int32_t index);
    static int32_t content_index(std::string_view name); // -1 if not a name

private:
    PowerLawModelConfig cfg_;
    ModelSpec spec_;
    double beta_ = 0.0;
    TokenDistribution full_dist_; // shared by every state
    StateLedger ledger_;
    StateId root_ = 0;
};

} // namespace instcache
