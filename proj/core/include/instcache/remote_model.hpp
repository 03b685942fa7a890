#pragma once

#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "instcache/token_model.hpp"
#include "instcache/transport.hpp"

namespace instcache {

// Wire-protocol client for external next-token models. One JSON object per
// line, one reply per request, strict ordering:
//   {"op":"root"}                         -> {"state": n}
//   {"op":"dist","state":n,"top_k":k}     -> {"tokens":[{"id","text","logp"},...]}
//   {"op":"extend","state":n,"token":t}   -> {"state": n}
//   {"op":"free","state":n}               -> {"ok": true}
//   any failure                           -> {"error": "..."}
// top_k = 0 requests the full distribution. Token ids are the server's; the
// adapter learns token texts from dist replies. The tokens named eos_text /
// unk_text (defaults "<eos>", "<unk>") identify the special ids.
struct RemoteModelConfig {
    // "tcp:host:port" or "cmd:<program> <args...>" (whitespace-split argv)
    std::string endpoint;
    int batch_size = 256;
    int max_len = 64;
    int timeout_ms = 30000;
    std::string eos_text = "<eos>";
    std::string unk_text = "<unk>";
};

class RemoteModel final : public TokenModel {
public:
    explicit RemoteModel(const RemoteModelConfig& cfg);
    RemoteModel(const RemoteModelConfig& cfg, std::unique_ptr<LineTransport> transport);
    ~RemoteModel() override;

    const ModelSpec& spec() const override { return spec_; }
    StateId root_state() override;
    TokenDistribution distribution(StateId state, int top_k = kAllTokens) override;
    std::vector<TokenDistribution> distribution_batch(std::span<const StateId> states,
                                                      int top_k = kAllTokens) override;
    StateId extend(StateId state, TokenId token) override;
    void release(StateId state) override;
    int depth(StateId state) const override;

    std::string token_text(TokenId token) const override;
    std::optional<TokenId> lookup_token(std::string_view word) const override;

    StateStats state_stats() const override { return ledger_.stats(); }
    void reset_high_water() override { ledger_.reset_high_water(); }
    std::string digest() const override;

    // tcp endpoints clone as additional connections; subprocess transports
    // are single-owner and not cloneable.
    bool cloneable() const override;
    std::unique_ptr<TokenModel> clone() const override;

private:
    struct Reply;
    Reply roundtrip(const std::string& request);
    std::vector<Reply> roundtrip_batch(std::span<const std::string> requests);
    TokenDistribution parse_distribution(const Reply& reply, int top_k);
    void learn_token(TokenId id, const std::string& text);
    int64_t remote_of(StateId state) const;

    RemoteModelConfig cfg_;
    ModelSpec spec_;
    std::unique_ptr<LineTransport> transport_;
    mutable std::mutex mu_; // serializes protocol traffic per connection

    StateLedger ledger_;
    StateId root_ = 0;
    std::unordered_map<StateId, int64_t> remote_states_;

    mutable std::mutex vocab_mu_;
    std::unordered_map<TokenId, std::string> token_texts_;
    std::unordered_map<std::string, TokenId> text_to_token_;
    bool vocab_primed_ = false;
};

} // namespace instcache
