#include "instcache/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <regex>
#include <unordered_set>

#include "instcache/rng.hpp"
#include "json_util.hpp"

namespace instcache {

namespace {

// Days since 1970-01-01 for a civil date (Howard Hinnant's algorithm).
int64_t days_from_civil(int64_t y, int64_t m, int64_t d) {
    y -= m <= 2;
    const int64_t era = (y >= 0 ? y : y - 399) / 400;
    const int64_t yoe = y - era * 400;
    const int64_t doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const int64_t doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + doe - 719468;
}

void civil_from_days(int64_t z, int64_t& y, int64_t& m, int64_t& d) {
    z += 719468;
    const int64_t era = (z >= 0 ? z : z - 146096) / 146097;
    const int64_t doe = z - era * 146097;
    const int64_t yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
    y = yoe + era * 400;
    const int64_t doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    const int64_t mp = (5 * doy + 2) / 153;
    d = doy - (153 * mp + 2) / 5 + 1;
    m = mp + (mp < 10 ? 3 : -9);
    y += m <= 2;
}

std::optional<CorpusRecord> record_from_fields(const jsonio::json& j, const std::string& conv_id,
                                               int turn, const text::TokenizerConfig& tok) {
    if (!j.contains("instruction") || !j["instruction"].is_string()) return std::nullopt;
    if (!j.contains("response") || !j["response"].is_string()) return std::nullopt;
    CorpusRecord rec;
    rec.conversation_id = conv_id;
    rec.turn_index = turn;
    rec.instruction = j["instruction"].get<std::string>();
    rec.response = j["response"].get<std::string>();
    rec.instruction_token_len = static_cast<int64_t>(text::word_count(rec.instruction, tok));
    rec.response_token_len = static_cast<int64_t>(text::word_count(rec.response, tok));
    return rec;
}

} // namespace

std::optional<int64_t> parse_iso8601(std::string_view s) {
    int y = 0, mo = 0, d = 0, h = 0, mi = 0, sec = 0;
    int oh = 0, om = 0;
    char tz = '\0';
    const std::string str(s);
    int n = std::sscanf(str.c_str(), "%d-%d-%dT%d:%d:%d", &y, &mo, &d, &h, &mi, &sec);
    if (n < 3) return std::nullopt;
    if (n < 6) h = mi = sec = 0;
    int64_t offset = 0;
    const size_t tpos = str.find_first_of("Zz+-", 10);
    if (tpos != std::string::npos && tpos >= 10) {
        tz = str[tpos];
        if (tz == '+' || tz == '-') {
            if (std::sscanf(str.c_str() + tpos + 1, "%d:%d", &oh, &om) >= 1) {
                offset = (tz == '+' ? 1 : -1) * (oh * 3600 + om * 60);
            }
        }
    }
    if (mo < 1 || mo > 12 || d < 1 || d > 31) return std::nullopt;
    return days_from_civil(y, mo, d) * 86400 + h * 3600 + mi * 60 + sec - offset;
}

std::string format_iso8601(int64_t epoch_seconds) {
    int64_t days = epoch_seconds >= 0 ? epoch_seconds / 86400
                                      : (epoch_seconds - 86399) / 86400;
    int64_t rem = epoch_seconds - days * 86400;
    int64_t y, m, d;
    civil_from_days(days, y, m, d);
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%04lld-%02lld-%02lldT%02lld:%02lld:%02lldZ",
                  static_cast<long long>(y), static_cast<long long>(m),
                  static_cast<long long>(d), static_cast<long long>(rem / 3600),
                  static_cast<long long>((rem % 3600) / 60), static_cast<long long>(rem % 60));
    return buf;
}

std::vector<CorpusRecord> ingest(const std::string& path, IngestReport* report,
                                 const text::TokenizerConfig& tokenizer) {
    std::vector<CorpusRecord> records;
    auto stats = jsonio::for_each_line_lenient(path, [&](jsonio::json& j, size_t) {
        if (!j.is_object()) return false;
        const std::string conv_id = jsonio::get_or<std::string>(j, "conversation_id", "");
        std::optional<std::string> ip;
        if (j.contains("ip_hash") && j["ip_hash"].is_string()) {
            ip = j["ip_hash"].get<std::string>();
        }
        std::optional<int64_t> ts;
        if (j.contains("timestamp")) {
            if (j["timestamp"].is_string()) {
                ts = parse_iso8601(j["timestamp"].get<std::string>());
                if (!ts) return false;
            } else if (j["timestamp"].is_number()) {
                ts = j["timestamp"].get<int64_t>();
            }
        }

        if (j.contains("turns") && j["turns"].is_array()) {
            size_t added = 0;
            int turn = 0;
            for (const auto& t : j["turns"]) {
                auto rec = record_from_fields(t, conv_id, turn++, tokenizer);
                if (!rec) return false;
                rec->ip_hash = ip;
                rec->timestamp = ts;
                records.push_back(std::move(*rec));
                ++added;
            }
            return added > 0;
        }

        auto rec = record_from_fields(j, conv_id, jsonio::get_or<int>(j, "turn", 0), tokenizer);
        if (!rec) return false;
        rec->ip_hash = ip;
        rec->timestamp = ts;
        records.push_back(std::move(*rec));
        return true;
    });

    if (stats.total_lines > 0 &&
        static_cast<double>(stats.malformed) > 0.10 * static_cast<double>(stats.total_lines)) {
        throw InvalidArgument(path + ": " + std::to_string(stats.malformed) + " of " +
                              std::to_string(stats.total_lines) +
                              " lines malformed (over the 10% limit)");
    }
    if (report) {
        report->lines = stats.total_lines;
        report->records = records.size();
        report->skipped = stats.malformed;
    }
    return records;
}

void write_corpus_file(const std::string& path, std::span<const CorpusRecord> records) {
    using jsonio::json;
    std::ofstream out = jsonio::open_out(path);
    for (const auto& rec : records) {
        json j;
        j["conversation_id"] = rec.conversation_id;
        j["turn"] = rec.turn_index;
        j["instruction"] = rec.instruction;
        j["response"] = rec.response;
        if (rec.ip_hash) j["ip_hash"] = *rec.ip_hash;
        if (rec.timestamp) j["timestamp"] = format_iso8601(*rec.timestamp);
        out << j.dump() << '\n';
    }
    if (!out) throw Error("failed writing " + path);
}

std::vector<CorpusRecord> filter_pipeline(std::span<const CorpusRecord> records,
                                          const FilterConfig& cfg) {
    std::vector<CorpusRecord> out;
    for (const auto& rec : records) {
        if (cfg.first_turn_only && rec.turn_index != 0) continue;
        if (rec.instruction_token_len >= cfg.max_instr_tokens) continue; // strict <
        if (rec.response_token_len < cfg.min_resp_tokens) continue;      // >= keeps
        out.push_back(rec);
    }
    return out;
}

std::vector<CorpusRecord> dedup(std::span<const CorpusRecord> records, DedupMode mode,
                                const NormalizeConfig& norm) {
    if (mode == DedupMode::per_ip) {
        for (const auto& rec : records) {
            if (!rec.ip_hash) {
                throw InvalidArgument("per-ip dedup requires ip_hash on every record");
            }
        }
    }
    std::unordered_set<std::string> seen;
    std::vector<CorpusRecord> out;
    for (const auto& rec : records) {
        std::string key = normalize(rec.instruction, norm);
        if (mode == DedupMode::per_ip) key = *rec.ip_hash + '\x1f' + key;
        if (seen.insert(std::move(key)).second) out.push_back(rec);
    }
    return out;
}

std::vector<CorpusRecord> scrub(std::span<const CorpusRecord> records,
                                std::span<const std::string> deny_patterns) {
    std::vector<std::regex> patterns;
    patterns.reserve(deny_patterns.size());
    for (const auto& p : deny_patterns) {
        try {
            patterns.emplace_back(p, std::regex::ECMAScript | std::regex::icase);
        } catch (const std::regex_error& e) {
            throw InvalidArgument("bad scrub pattern \"" + p + "\": " + e.what());
        }
    }
    std::vector<CorpusRecord> out;
    for (const auto& rec : records) {
        bool drop = false;
        for (const auto& re : patterns) {
            if (std::regex_search(rec.instruction, re)) {
                drop = true;
                break;
            }
        }
        if (!drop) out.push_back(rec);
    }
    return out;
}

void SplitSpec::validate() const {
    const double sum = train_frac + valid_frac + test_frac;
    if (std::abs(sum - 1.0) > 1e-9) throw InvalidArgument("split fractions must sum to 1");
    for (double f : {train_frac, valid_frac, test_frac}) {
        if (!(f > 0.0 && f < 1.0)) throw InvalidArgument("split fractions must be in (0,1)");
    }
}

SplitResult split(std::span<const CorpusRecord> records, const SplitSpec& spec) {
    spec.validate();
    std::vector<size_t> order(records.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    if (spec.mode == SplitSpec::Mode::time_ordered) {
        for (const auto& rec : records) {
            if (!rec.timestamp) {
                throw InvalidArgument("time-ordered split requires timestamps on every record");
            }
        }
        std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            return *records[a].timestamp < *records[b].timestamp;
        });
    } else {
        Rng rng = Rng(spec.seed).fork("dataset-split");
        rng.shuffle(order);
    }

    const size_t n = records.size();
    size_t n_train = static_cast<size_t>(std::llround(spec.train_frac * static_cast<double>(n)));
    size_t n_valid = static_cast<size_t>(std::llround(spec.valid_frac * static_cast<double>(n)));
    n_train = std::min(n_train, n);
    n_valid = std::min(n_valid, n - n_train);

    SplitResult result;
    for (size_t i = 0; i < n; ++i) {
        const CorpusRecord& rec = records[order[i]];
        if (i < n_train) {
            result.train.push_back(rec);
        } else if (i < n_train + n_valid) {
            result.valid.push_back(rec);
        } else {
            result.test.push_back(rec);
        }
    }
    return result;
}

EvalResult evaluate_hit_rate(const CacheStore& store, std::span<const CorpusRecord> test_records,
                             size_t max_examples, std::span<const CorpusRecord> train_records) {
    if (test_records.empty()) throw InvalidArgument("evaluate_hit_rate: empty test set");

    std::unordered_set<std::string> train_keys;
    for (const auto& rec : train_records) {
        train_keys.insert(normalize(rec.instruction, store.normalize_config()));
    }

    EvalResult result;
    result.total = test_records.size();
    for (const auto& rec : test_records) {
        if (store.lookup(rec.instruction) == nullptr) continue;
        ++result.hits;
        if (result.examples.size() < max_examples) {
            if (train_records.empty() ||
                train_keys.count(normalize(rec.instruction, store.normalize_config())) == 0) {
                result.examples.push_back(rec.instruction);
            }
        }
    }
    result.hit_rate = static_cast<double>(result.hits) / static_cast<double>(result.total);
    return result;
}

double repetition_baseline(std::span<const CorpusRecord> train,
                           std::span<const CorpusRecord> test, const NormalizeConfig& norm) {
    if (train.empty() || test.empty()) {
        throw InvalidArgument("repetition_baseline: train and test must be nonempty");
    }
    std::unordered_set<std::string> train_keys;
    for (const auto& rec : train) train_keys.insert(normalize(rec.instruction, norm));
    size_t hits = 0;
    for (const auto& rec : test) {
        if (train_keys.count(normalize(rec.instruction, norm)) > 0) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(test.size());
}

std::vector<WindowRate> timeslice_eval(const CacheStore& store,
                                       std::span<const CorpusRecord> records, int windows) {
    if (windows < 1) throw InvalidArgument("timeslice_eval: windows must be >= 1");
    if (records.empty()) throw InvalidArgument("timeslice_eval: empty record set");
    for (const auto& rec : records) {
        if (!rec.timestamp) throw InvalidArgument("timeslice_eval requires timestamps");
    }

    std::vector<const CorpusRecord*> sorted;
    sorted.reserve(records.size());
    for (const auto& rec : records) sorted.push_back(&rec);
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const CorpusRecord* a, const CorpusRecord* b) {
                         return *a->timestamp < *b->timestamp;
                     });

    std::vector<WindowRate> rows;
    const size_t n = sorted.size();
    const size_t w = static_cast<size_t>(windows);
    size_t begin = 0;
    for (size_t i = 0; i < w && begin < n; ++i) {
        const size_t count = n / w + (i < n % w ? 1 : 0);
        const size_t end = std::min(n, begin + count);
        WindowRate row;
        row.window = static_cast<int>(i);
        row.start_ts = *sorted[begin]->timestamp;
        row.end_ts = *sorted[end - 1]->timestamp;
        row.n = end - begin;
        for (size_t k = begin; k < end; ++k) {
            if (store.lookup(sorted[k]->instruction) != nullptr) ++row.hits;
        }
        row.hit_rate = static_cast<double>(row.hits) / static_cast<double>(row.n);
        rows.push_back(row);
        begin = end;
    }
    return rows;
}

void write_timeslice_report(const std::string& path, std::span<const WindowRate> rows,
                            const std::map<std::string, std::string>& config_echo) {
    using jsonio::json;
    std::ofstream out = jsonio::open_out(path);
    json header;
    header["format"] = "instcache-timeslice";
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
        r["window"] = row.window;
        r["start_ts"] = format_iso8601(row.start_ts);
        r["end_ts"] = format_iso8601(row.end_ts);
        r["n"] = row.n;
        r["hits"] = row.hits;
        r["hit_rate"] = row.hit_rate;
        out << r.dump() << '\n';
    }
    if (!out) throw Error("failed writing " + path);
}

} // namespace instcache
