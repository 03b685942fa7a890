#include "instcache/power_law_model.hpp"

#include <cmath>

#include "instcache/digest.hpp"

namespace instcache {

PowerLawModel::PowerLawModel(const PowerLawModelConfig& cfg) : cfg_(cfg) {
    if (cfg_.vocab_size < 2) {
        throw InvalidArgument("power-law model needs vocab_size >= 2 (eos plus one content token)");
    }
    if (cfg_.alpha < 0.0 || !std::isfinite(cfg_.alpha)) {
        throw InvalidArgument("power-law alpha must be finite and >= 0");
    }
    if (cfg_.eos_rank < 1 || cfg_.eos_rank > cfg_.vocab_size) {
        throw InvalidArgument("eos_rank out of range");
    }
    if (cfg_.max_len < 1) {
        throw InvalidArgument("max_len must be >= 1");
    }

    spec_.vocab_size = cfg_.vocab_size;
    spec_.max_len = cfg_.max_len;
    spec_.bos_id = 0;
    spec_.eos_id = 1;
    spec_.unk_id = -1;

    double harmonic = 0.0;
    for (int32_t i = 1; i <= cfg_.vocab_size; ++i) {
        harmonic += std::pow(static_cast<double>(i), -cfg_.alpha);
    }
    beta_ = 1.0 / harmonic;

    // rank -> token id: eos at eos_rank, content ids 2..V fill the rest.
    full_dist_.entries.reserve(static_cast<size_t>(cfg_.vocab_size));
    TokenId next_content = 2;
    for (int32_t rank = 1; rank <= cfg_.vocab_size; ++rank) {
        const TokenId id = (rank == cfg_.eos_rank) ? spec_.eos_id : next_content++;
        full_dist_.entries.push_back({id, rank_prob(rank)});
    }
    full_dist_.sort_canonical();
}

double PowerLawModel::rank_prob(int32_t rank) const {
    return beta_ * std::pow(static_cast<double>(rank), -cfg_.alpha);
}

int32_t PowerLawModel::token_rank(TokenId token) const {
    if (token == spec_.eos_id) return cfg_.eos_rank;
    if (token < 2 || token > cfg_.vocab_size) return -1;
    // Content id c (2-based) occupies rank c-1 before the eos slot, shifted
    // by one once the eos rank has been passed.
    const int32_t pos = token - 1; // 1-based among content tokens
    return pos < cfg_.eos_rank ? pos : pos + 1;
}

StateId PowerLawModel::root_state() {
    if (root_ == 0 || !ledger_.alive(root_)) {
        root_ = ledger_.create(0);
    }
    return root_;
}

TokenDistribution PowerLawModel::distribution(StateId state, int top_k) {
    ledger_.check_alive(state);
    TokenDistribution d = full_dist_;
    d.truncate_top_k(top_k);
    return d;
}

StateId PowerLawModel::extend(StateId state, TokenId token) {
    const int parent_depth = ledger_.depth(state); // throws if not live
    if (token == spec_.eos_id) {
        throw StateError("cannot extend past eos");
    }
    if (token_rank(token) < 0) {
        throw InvalidArgument("token " + std::to_string(token) + " outside vocabulary");
    }
    return ledger_.create(parent_depth + 1);
}

void PowerLawModel::release(StateId state) {
    ledger_.remove(state);
    if (state == root_) root_ = 0;
}

int PowerLawModel::depth(StateId state) const { return ledger_.depth(state); }

double PowerLawModel::token_prob(StateId state, TokenId token) {
    ledger_.check_alive(state);
    const int32_t rank = token_rank(token);
    return rank < 0 ? 0.0 : rank_prob(rank);
}

std::string PowerLawModel::content_name(int32_t index) {
    // Bijective base-26 over 'a'..'z'.
    std::string out;
    int64_t n = index;
    for (;;) {
        out.insert(out.begin(), static_cast<char>('a' + n % 26));
        n = n / 26 - 1;
        if (n < 0) break;
    }
    return out;
}

int32_t PowerLawModel::content_index(std::string_view name) {
    if (name.empty()) return -1;
    int64_t n = 0;
    for (char c : name) {
        if (c < 'a' || c > 'z') return -1;
        n = n * 26 + (c - 'a') + 1;
        if (n > (1 << 30)) return -1;
    }
    return static_cast<int32_t>(n - 1);
}

std::string PowerLawModel::token_text(TokenId token) const {
    if (token == spec_.bos_id) return "<bos>";
    if (token == spec_.eos_id) return "<eos>";
    if (token < 2 || token > cfg_.vocab_size) {
        throw InvalidArgument("token " + std::to_string(token) + " outside vocabulary");
    }
    return content_name(token - 2);
}

std::optional<TokenId> PowerLawModel::lookup_token(std::string_view word) const {
    const int32_t idx = content_index(word);
    if (idx < 0 || idx >= cfg_.vocab_size - 1) return std::nullopt;
    return static_cast<TokenId>(idx + 2);
}

std::string PowerLawModel::digest() const {
    std::string id = cfg_.kind_label + ":v=" + std::to_string(cfg_.vocab_size) +
                     ",alpha=" + std::to_string(cfg_.alpha) +
                     ",eos_rank=" + std::to_string(cfg_.eos_rank);
    return digest_hex(id);
}

std::unique_ptr<TokenModel> PowerLawModel::clone() const {
    return std::make_unique<PowerLawModel>(cfg_);
}

} // namespace instcache
