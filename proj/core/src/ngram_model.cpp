#include "instcache/ngram_model.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>

#include "instcache/digest.hpp"
#include "json_util.hpp"

namespace instcache {

namespace {

std::string pack_context(std::span<const TokenId> ctx) {
    std::string key;
    key.reserve(ctx.size() * 4);
    for (TokenId t : ctx) {
        for (int i = 0; i < 4; ++i) key.push_back(static_cast<char>((t >> (8 * i)) & 0xFF));
    }
    return key;
}

std::vector<TokenId> unpack_context(const std::string& key) {
    std::vector<TokenId> ctx(key.size() / 4);
    for (size_t i = 0; i < ctx.size(); ++i) {
        TokenId t = 0;
        for (int b = 3; b >= 0; --b) {
            t = (t << 8) | static_cast<uint8_t>(key[i * 4 + static_cast<size_t>(b)]);
        }
        ctx[i] = t;
    }
    return ctx;
}

} // namespace

struct NgramModel::Tables {
    NgramTrainConfig cfg;
    std::vector<std::string> vocab; // content words; id = 3 + index
    std::unordered_map<std::string, TokenId> word_to_id;

    struct Ctx {
        int64_t total = 0;
        std::vector<std::pair<TokenId, int64_t>> counts; // sorted by token id
    };
    std::unordered_map<std::string, Ctx> contexts;

    int32_t vocab_size = 0; // kept words + eos (unk excluded)
    std::string digest;

    int64_t count_of(const Ctx* ctx, TokenId t) const {
        if (ctx == nullptr) return 0;
        auto it = std::lower_bound(ctx->counts.begin(), ctx->counts.end(), t,
                                   [](const auto& p, TokenId v) { return p.first < v; });
        return (it != ctx->counts.end() && it->first == t) ? it->second : 0;
    }

    const Ctx* find(std::span<const TokenId> ctx) const {
        auto it = contexts.find(pack_context(ctx));
        return it == contexts.end() ? nullptr : &it->second;
    }

    bool in_support(TokenId t) const {
        return t == 1 /*eos*/ || t == 2 /*unk*/ ||
               (t >= 3 && t < 3 + static_cast<TokenId>(vocab.size()));
    }
};

NgramModel::NgramModel(std::shared_ptr<const Tables> tables) : tables_(std::move(tables)) {
    spec_.vocab_size = tables_->vocab_size;
    spec_.max_len = 64;
    spec_.bos_id = 0;
    spec_.eos_id = 1;
    spec_.unk_id = 2;
}

int NgramModel::order() const { return tables_->cfg.order; }
double NgramModel::smoothing_alpha() const { return tables_->cfg.smoothing_alpha; }
const text::TokenizerConfig& NgramModel::tokenizer() const { return tables_->cfg.tokenizer; }

StateId NgramModel::root_state() {
    std::lock_guard<std::mutex> lock(ctx_mu_);
    if (root_ != 0 && ledger_.alive(root_)) return root_;
    root_ = ledger_.create(0);
    contexts_[root_] = std::vector<TokenId>(static_cast<size_t>(tables_->cfg.order - 1),
                                            spec_.bos_id);
    return root_;
}

const std::vector<TokenId>& NgramModel::context_of(StateId state) const {
    std::lock_guard<std::mutex> lock(ctx_mu_);
    auto it = contexts_.find(state);
    if (it == contexts_.end()) {
        throw StateError("state " + std::to_string(state) + " is not live");
    }
    return it->second;
}

TokenDistribution NgramModel::distribution(StateId state, int top_k) {
    ledger_.check_alive(state);
    const std::vector<TokenId> ctx = context_of(state);
    const Tables::Ctx* c = tables_->find(ctx);
    const double a = tables_->cfg.smoothing_alpha;
    const double total = static_cast<double>(c ? c->total : 0);

    TokenDistribution dist;
    if (a > 0.0) {
        // Full support: every kept word plus eos and unk.
        const double denom = total + a * (static_cast<double>(spec_.vocab_size) + 1.0);
        dist.entries.reserve(static_cast<size_t>(spec_.vocab_size) + 1);
        dist.entries.push_back({spec_.eos_id, (static_cast<double>(tables_->count_of(c, spec_.eos_id)) + a) / denom});
        dist.entries.push_back({spec_.unk_id, (static_cast<double>(tables_->count_of(c, spec_.unk_id)) + a) / denom});
        for (TokenId t = 3; t < 3 + static_cast<TokenId>(tables_->vocab.size()); ++t) {
            dist.entries.push_back({t, (static_cast<double>(tables_->count_of(c, t)) + a) / denom});
        }
    } else if (c != nullptr && c->total > 0) {
        dist.entries.reserve(c->counts.size());
        for (const auto& [t, n] : c->counts) {
            if (n > 0) dist.entries.push_back({t, static_cast<double>(n) / total});
        }
    }
    dist.sort_canonical();
    dist.truncate_top_k(top_k);
    return dist;
}

double NgramModel::token_prob(StateId state, TokenId token) {
    ledger_.check_alive(state);
    if (!tables_->in_support(token)) return 0.0;
    const std::vector<TokenId> ctx = context_of(state);
    const Tables::Ctx* c = tables_->find(ctx);
    const double a = tables_->cfg.smoothing_alpha;
    const double total = static_cast<double>(c ? c->total : 0);
    if (a == 0.0) {
        if (total == 0.0) return 0.0;
        return static_cast<double>(tables_->count_of(c, token)) / total;
    }
    const double denom = total + a * (static_cast<double>(spec_.vocab_size) + 1.0);
    return (static_cast<double>(tables_->count_of(c, token)) + a) / denom;
}

StateId NgramModel::extend(StateId state, TokenId token) {
    const int parent_depth = ledger_.depth(state);
    if (token == spec_.eos_id) throw StateError("cannot extend past eos");
    if (token == spec_.bos_id || !tables_->in_support(token)) {
        throw InvalidArgument("token " + std::to_string(token) + " outside vocabulary");
    }
    std::vector<TokenId> ctx = context_of(state);
    ctx.push_back(token);
    const size_t window = static_cast<size_t>(tables_->cfg.order - 1);
    if (ctx.size() > window) ctx.erase(ctx.begin(), ctx.end() - static_cast<long>(window));

    const StateId child = ledger_.create(parent_depth + 1);
    std::lock_guard<std::mutex> lock(ctx_mu_);
    contexts_[child] = std::move(ctx);
    return child;
}

void NgramModel::release(StateId state) {
    ledger_.remove(state);
    std::lock_guard<std::mutex> lock(ctx_mu_);
    contexts_.erase(state);
    if (state == root_) root_ = 0;
}

int NgramModel::depth(StateId state) const { return ledger_.depth(state); }

std::string NgramModel::token_text(TokenId token) const {
    if (token == spec_.bos_id) return "<bos>";
    if (token == spec_.eos_id) return "<eos>";
    if (token == spec_.unk_id) return "<unk>";
    const size_t idx = static_cast<size_t>(token - 3);
    if (token < 3 || idx >= tables_->vocab.size()) {
        throw InvalidArgument("token " + std::to_string(token) + " outside vocabulary");
    }
    return tables_->vocab[idx];
}

std::optional<TokenId> NgramModel::lookup_token(std::string_view word) const {
    auto it = tables_->word_to_id.find(std::string(word));
    if (it == tables_->word_to_id.end()) return std::nullopt;
    return it->second;
}

std::string NgramModel::digest() const { return tables_->digest; }

std::unique_ptr<TokenModel> NgramModel::clone() const {
    return std::unique_ptr<TokenModel>(new NgramModel(tables_));
}

std::unique_ptr<NgramModel> NgramModel::train(std::span<const std::string> instructions,
                                              const NgramTrainConfig& cfg) {
    std::vector<std::vector<std::string>> sequences;
    sequences.reserve(instructions.size());
    for (const auto& s : instructions) {
        sequences.push_back(text::tokenize_words(s, cfg.tokenizer));
    }
    return train_tokenized(sequences, cfg);
}

std::unique_ptr<NgramModel> NgramModel::train_tokenized(
    std::span<const std::vector<std::string>> sequences, const NgramTrainConfig& cfg) {
    if (sequences.empty()) throw InvalidArgument("n-gram training corpus is empty");
    if (cfg.order < 1) throw InvalidArgument("n-gram order must be >= 1");
    if (cfg.smoothing_alpha < 0.0) throw InvalidArgument("smoothing_alpha must be >= 0");
    if (cfg.vocab_cap < 1) throw InvalidArgument("vocab_cap must be >= 1");

    auto tables = std::make_shared<Tables>();
    tables->cfg = cfg;

    // Vocabulary: top vocab_cap words by frequency, ties by word.
    std::unordered_map<std::string, int64_t> freq;
    for (const auto& seq : sequences) {
        for (const auto& w : seq) ++freq[w];
    }
    std::vector<std::pair<std::string, int64_t>> ranked(freq.begin(), freq.end());
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    if (ranked.size() > static_cast<size_t>(cfg.vocab_cap)) {
        ranked.resize(static_cast<size_t>(cfg.vocab_cap));
    }
    tables->vocab.reserve(ranked.size());
    for (const auto& [w, n] : ranked) {
        tables->word_to_id.emplace(w, static_cast<TokenId>(3 + tables->vocab.size()));
        tables->vocab.push_back(w);
    }
    tables->vocab_size = static_cast<int32_t>(tables->vocab.size()) + 1; // + eos

    // Count n-grams over bos-padded, eos-terminated id sequences.
    const size_t window = static_cast<size_t>(cfg.order - 1);
    std::unordered_map<std::string, std::map<TokenId, int64_t>> raw;
    std::vector<TokenId> ids;
    for (const auto& seq : sequences) {
        ids.assign(window, 0 /*bos*/);
        for (const auto& w : seq) {
            auto it = tables->word_to_id.find(w);
            ids.push_back(it == tables->word_to_id.end() ? 2 /*unk*/ : it->second);
        }
        ids.push_back(1 /*eos*/);
        for (size_t i = window; i < ids.size(); ++i) {
            const std::string key =
                pack_context(std::span<const TokenId>(ids.data() + i - window, window));
            ++raw[key][ids[i]];
        }
    }
    for (auto& [key, counts] : raw) {
        Tables::Ctx ctx;
        ctx.counts.assign(counts.begin(), counts.end());
        for (const auto& [t, n] : ctx.counts) ctx.total += n;
        tables->contexts.emplace(key, std::move(ctx));
    }

    auto model = std::unique_ptr<NgramModel>(new NgramModel(tables));
    const_cast<Tables*>(model->tables_.get())->digest = digest_hex(model->serialize());
    return model;
}

std::string NgramModel::serialize() const {
    using jsonio::json;
    const Tables& t = *tables_;
    json header;
    header["format"] = "instcache-ngram";
    header["version"] = 1;
    header["order"] = t.cfg.order;
    header["smoothing_alpha"] = t.cfg.smoothing_alpha;
    header["vocab_cap"] = t.cfg.vocab_cap;
    header["case_fold"] = t.cfg.tokenizer.case_fold;
    header["nfc"] = t.cfg.tokenizer.nfc;
    header["vocab"] = t.vocab;

    std::string out = header.dump();
    out.push_back('\n');

    std::vector<const std::string*> keys;
    keys.reserve(t.contexts.size());
    for (const auto& [key, ctx] : t.contexts) keys.push_back(&key);
    std::sort(keys.begin(), keys.end(), [](const auto* a, const auto* b) { return *a < *b; });

    for (const auto* key : keys) {
        const auto& ctx = t.contexts.at(*key);
        json row;
        row["ctx"] = unpack_context(*key);
        json counts = json::array();
        for (const auto& [tok, n] : ctx.counts) counts.push_back(json::array({tok, n}));
        row["counts"] = std::move(counts);
        out += row.dump();
        out.push_back('\n');
    }
    return out;
}

void NgramModel::save(const std::string& path) const { jsonio::write_file(path, serialize()); }

std::unique_ptr<NgramModel> NgramModel::load(const std::string& path) {
    using jsonio::json;
    auto tables = std::make_shared<Tables>();
    bool have_header = false;

    jsonio::for_each_line(path, [&](json& j, size_t lineno) {
        if (!have_header) {
            const std::string where = path + ":" + std::to_string(lineno);
            if (jsonio::require<std::string>(j, "format", where) != "instcache-ngram") {
                throw InvalidArgument(where + ": not an instcache-ngram artifact");
            }
            if (jsonio::require<int>(j, "version", where) != 1) {
                throw InvalidArgument(where + ": unsupported artifact version");
            }
            tables->cfg.order = jsonio::require<int>(j, "order", where);
            tables->cfg.smoothing_alpha = jsonio::require<double>(j, "smoothing_alpha", where);
            tables->cfg.vocab_cap = jsonio::require<int>(j, "vocab_cap", where);
            tables->cfg.tokenizer.case_fold = jsonio::get_or<bool>(j, "case_fold", true);
            tables->cfg.tokenizer.nfc = jsonio::get_or<bool>(j, "nfc", true);
            tables->vocab = jsonio::require<std::vector<std::string>>(j, "vocab", where);
            for (size_t i = 0; i < tables->vocab.size(); ++i) {
                tables->word_to_id.emplace(tables->vocab[i], static_cast<TokenId>(3 + i));
            }
            tables->vocab_size = static_cast<int32_t>(tables->vocab.size()) + 1;
            have_header = true;
            return;
        }
        const std::string where = path + ":" + std::to_string(lineno);
        auto ctx_ids = jsonio::require<std::vector<TokenId>>(j, "ctx", where);
        Tables::Ctx ctx;
        for (const auto& pair : jsonio::require<jsonio::json>(j, "counts", where)) {
            if (!pair.is_array() || pair.size() != 2) {
                throw InvalidArgument(where + ": bad count pair");
            }
            const TokenId tok = pair[0].get<TokenId>();
            const int64_t n = pair[1].get<int64_t>();
            ctx.counts.emplace_back(tok, n);
            ctx.total += n;
        }
        std::sort(ctx.counts.begin(), ctx.counts.end());
        tables->contexts.emplace(pack_context(ctx_ids), std::move(ctx));
    });

    if (!have_header) throw InvalidArgument(path + ": empty n-gram artifact");
    auto model = std::unique_ptr<NgramModel>(new NgramModel(tables));
    const_cast<Tables*>(model->tables_.get())->digest = digest_hex(model->serialize());
    return model;
}

} // namespace instcache
