#include "instcache/token_model.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <unordered_map>

#include "instcache/text.hpp"

namespace instcache {

void TokenDistribution::sort_canonical() {
    std::sort(entries.begin(), entries.end(), [](const TokenProb& a, const TokenProb& b) {
        if (a.prob != b.prob) return a.prob > b.prob;
        return a.token < b.token;
    });
}

void TokenDistribution::truncate_top_k(int top_k) {
    if (top_k > 0 && static_cast<size_t>(top_k) < entries.size()) {
        entries.resize(static_cast<size_t>(top_k));
    }
}

double TokenDistribution::sum() const {
    double s = 0.0;
    for (const auto& e : entries) s += e.prob;
    return s;
}

void TokenDistribution::validate(double tolerance) const {
    double s = 0.0;
    for (size_t i = 0; i < entries.size(); ++i) {
        const auto& e = entries[i];
        if (!(e.prob > 0.0 && e.prob <= 1.0)) {
            throw Error("distribution probability out of (0,1]");
        }
        if (i > 0) {
            const auto& prev = entries[i - 1];
            if (e.prob > prev.prob || (e.prob == prev.prob && e.token <= prev.token)) {
                throw Error("distribution ordering violated");
            }
        }
        s += e.prob;
    }
    if (std::abs(s - 1.0) > tolerance) {
        throw Error("distribution does not sum to 1");
    }
}

double TokenModel::token_prob(StateId state, TokenId token) {
    const TokenDistribution dist = distribution(state, kAllTokens);
    for (const auto& e : dist.entries) {
        if (e.token == token) return e.prob;
    }
    return 0.0;
}

std::vector<TokenDistribution> TokenModel::distribution_batch(std::span<const StateId> states,
                                                              int top_k) {
    std::vector<TokenDistribution> out;
    out.reserve(states.size());
    for (StateId s : states) out.push_back(distribution(s, top_k));
    return out;
}

std::string TokenModel::decode(std::span<const TokenId> tokens) const {
    const ModelSpec& sp = spec();
    std::string out;
    for (TokenId t : tokens) {
        if (t == sp.eos_id || t == sp.bos_id) continue;
        if (!out.empty()) out.push_back(' ');
        out += token_text(t);
    }
    return out;
}

std::optional<std::vector<TokenId>> TokenModel::encode(std::string_view instruction) const {
    const ModelSpec& sp = spec();
    std::vector<TokenId> out;
    for (const auto& word : text::tokenize_words(instruction)) {
        if (auto id = lookup_token(word)) {
            out.push_back(*id);
        } else if (sp.unk_id >= 0) {
            out.push_back(sp.unk_id);
        } else {
            return std::nullopt;
        }
    }
    return out;
}

struct StateLedger::Impl {
    mutable std::mutex mu;
    std::unordered_map<StateId, std::pair<int, int64_t>> live; // id -> (depth, bytes)
    StateId next_id = 1;
    int64_t retained_bytes = 0;
    int64_t high_water_states = 0;
    int64_t high_water_bytes = 0;
};

StateLedger::StateLedger(int64_t overhead_bytes, int64_t bytes_per_token)
    : impl_(std::make_shared<Impl>()),
      overhead_bytes_(overhead_bytes),
      bytes_per_token_(bytes_per_token) {}

StateId StateLedger::create(int depth) {
    std::lock_guard<std::mutex> lock(impl_->mu);
    const StateId id = impl_->next_id++;
    const int64_t bytes = state_bytes(depth);
    impl_->live.emplace(id, std::make_pair(depth, bytes));
    impl_->retained_bytes += bytes;
    impl_->high_water_states =
        std::max(impl_->high_water_states, static_cast<int64_t>(impl_->live.size()));
    impl_->high_water_bytes = std::max(impl_->high_water_bytes, impl_->retained_bytes);
    return id;
}

void StateLedger::remove(StateId state) {
    std::lock_guard<std::mutex> lock(impl_->mu);
    auto it = impl_->live.find(state);
    if (it == impl_->live.end()) {
        throw StateError("state " + std::to_string(state) + " is not live (double release?)");
    }
    impl_->retained_bytes -= it->second.second;
    impl_->live.erase(it);
}

int StateLedger::depth(StateId state) const {
    std::lock_guard<std::mutex> lock(impl_->mu);
    auto it = impl_->live.find(state);
    if (it == impl_->live.end()) {
        throw StateError("state " + std::to_string(state) + " is not live");
    }
    return it->second.first;
}

bool StateLedger::alive(StateId state) const {
    std::lock_guard<std::mutex> lock(impl_->mu);
    return impl_->live.count(state) > 0;
}

void StateLedger::check_alive(StateId state) const {
    if (!alive(state)) {
        throw StateError("state " + std::to_string(state) + " is not live");
    }
}

StateStats StateLedger::stats() const {
    std::lock_guard<std::mutex> lock(impl_->mu);
    return StateStats{
        static_cast<int64_t>(impl_->live.size()),
        impl_->retained_bytes,
        impl_->high_water_states,
        impl_->high_water_bytes,
    };
}

void StateLedger::reset_high_water() {
    std::lock_guard<std::mutex> lock(impl_->mu);
    impl_->high_water_states = static_cast<int64_t>(impl_->live.size());
    impl_->high_water_bytes = impl_->retained_bytes;
}

} // namespace instcache
