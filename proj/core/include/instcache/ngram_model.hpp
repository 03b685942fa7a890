#pragma once

#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "instcache/text.hpp"
#include "instcache/token_model.hpp"

namespace instcache {

struct NgramTrainConfig {
    int order = 2;                 // conditions on the last order-1 tokens
    double smoothing_alpha = 0.01; // add-alpha over vocab_size + 1 outcomes (unk included)
    int vocab_cap = 8192;          // max content words kept; the rest map to unk
    text::TokenizerConfig tokenizer;
};

// Word n-gram model with add-alpha smoothing.
//
// Token ids: bos=0, eos=1, unk=2, words from 3 in descending training
// frequency (ties by word). Contexts are padded with bos on the left so every
// state conditions on exactly order-1 tokens. The smoothed conditional is
//   P(t | ctx) = (count(ctx,t) + a) / (count(ctx) + a * (V + 1))
// over the support {kept words, eos, unk}; with a = 0 only observed
// continuations have mass and an unseen context yields an empty distribution.
class NgramModel final : public TokenModel {
public:
    struct Tables; // immutable after training; shared across clones

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

    int order() const;
    double smoothing_alpha() const;
    const text::TokenizerConfig& tokenizer() const;

    // Canonical NDJSON artifact; save/load round-trips byte-identically.
    void save(const std::string& path) const;
    std::string serialize() const;
    static std::unique_ptr<NgramModel> load(const std::string& path);

    // Tokenizes instruction texts and counts n-grams over bos-padded,
    // eos-terminated sequences. Throws InvalidArgument on an empty corpus.
    static std::unique_ptr<NgramModel> train(std::span<const std::string> instructions,
                                             const NgramTrainConfig& cfg);
    // Pre-tokenized variant; each element is one instruction's word sequence.
    static std::unique_ptr<NgramModel> train_tokenized(
        std::span<const std::vector<std::string>> sequences, const NgramTrainConfig& cfg);

private:
    explicit NgramModel(std::shared_ptr<const Tables> tables);

    const std::vector<TokenId>& context_of(StateId state) const;

    std::shared_ptr<const Tables> tables_;
    ModelSpec spec_;
    StateLedger ledger_;
    StateId root_ = 0;

    mutable std::mutex ctx_mu_;
    std::unordered_map<StateId, std::vector<TokenId>> contexts_;
};

} // namespace instcache
