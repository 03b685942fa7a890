#include "instcache/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <sstream>

#include "instcache/digest.hpp"
#include "instcache/ngram_model.hpp"
#include "instcache/prepopulate.hpp"
#include "instcache/responder.hpp"
#include "instcache/serving.hpp"
#include "json_util.hpp"

namespace instcache {

namespace {

std::vector<double> parse_double_list(const std::string& v) {
    std::vector<double> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(std::stod(item));
    }
    return out;
}

std::vector<std::string> parse_string_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw InvalidArgument("config key " + key + " expects a boolean, got \"" + v + "\"");
}

std::string join_doubles(const std::vector<double>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out.push_back(',');
        out += jsonio::json(v[i]).dump();
    }
    return out;
}

std::string join_strings(const std::vector<std::string>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out.push_back(',');
        out += v[i];
    }
    return out;
}

std::string sigma_tag(double sigma) {
    std::string s = jsonio::json(sigma).dump();
    for (char& c : s) {
        if (c == '.') c = '_';
    }
    return s;
}

} // namespace

void RunConfig::apply_override(const std::string& key, const std::string& value) {
    if (key == "seed") {
        seed = std::stoull(value);
    } else if (key == "out_dir") {
        out_dir = value;
    } else if (key == "log_level") {
        log_level = value;
    } else if (key == "dataset.corpus") {
        corpus_path = value;
    } else if (key == "dataset.train_frac") {
        train_frac = std::stod(value);
    } else if (key == "dataset.valid_frac") {
        valid_frac = std::stod(value);
    } else if (key == "dataset.test_frac") {
        test_frac = std::stod(value);
    } else if (key == "dataset.split_mode") {
        split_mode = value;
    } else if (key == "dataset.max_instr_tokens") {
        max_instr_tokens = std::stoll(value);
    } else if (key == "dataset.min_resp_tokens") {
        min_resp_tokens = std::stoll(value);
    } else if (key == "dataset.first_turn_only") {
        first_turn_only = parse_bool(value, key);
    } else if (key == "dataset.dedup") {
        dedup_mode = value;
    } else if (key == "dataset.scrub_patterns") {
        scrub_patterns = parse_string_list(value);
    } else if (key == "model.order") {
        ngram_order = std::stoi(value);
    } else if (key == "model.smoothing_alpha") {
        smoothing_alpha = std::stod(value);
    } else if (key == "model.vocab_cap") {
        vocab_cap = std::stoi(value);
    } else if (key == "model.case_fold") {
        case_fold = parse_bool(value, key);
    } else if (key == "model.nfc") {
        nfc = parse_bool(value, key);
    } else if (key == "prepop.sigma_ladder") {
        sigma_ladder = parse_double_list(value);
    } else if (key == "prepop.max_len") {
        max_len = std::stoi(value);
    } else if (key == "prepop.min_len") {
        min_len = std::stoi(value);
    } else if (key == "prepop.workers") {
        workers = std::stoi(value);
    } else if (key == "prepop.split_depth") {
        split_depth = std::stoi(value);
    } else if (key == "prepop.batch_size") {
        batch_size = std::stoi(value);
    } else if (key == "cache.responder") {
        responder = value;
    } else if (key == "cache.trim") {
        norm_trim = parse_bool(value, key);
    } else if (key == "cache.nfc") {
        norm_nfc = parse_bool(value, key);
    } else if (key == "analytics.rank_fit_positions") {
        rank_fit_positions = std::stoi(value);
    } else if (key == "analytics.csv_mirror") {
        csv_mirror = parse_bool(value, key);
    } else if (key == "serving.run_loadgen") {
        run_loadgen = parse_bool(value, key);
    } else if (key == "serving.lambda") {
        lambda = std::stod(value);
    } else if (key == "serving.duration_s") {
        duration_s = std::stod(value);
    } else if (key == "serving.per_token_ms") {
        per_token_ms = std::stod(value);
    } else if (key == "serving.startup_ms") {
        startup_ms = std::stod(value);
    } else if (key == "serving.sim_response_tokens") {
        sim_response_tokens = std::stoi(value);
    } else {
        throw InvalidArgument("unknown config key: " + key);
    }
}

RunConfig RunConfig::from_file(const std::string& path) {
    RunConfig cfg;
    std::ifstream in = jsonio::open_in(path);
    std::string line;
    size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        std::string trimmed = text::trim(line);
        if (trimmed.empty()) continue;
        const size_t eq = trimmed.find('=');
        if (eq == std::string::npos) {
            throw InvalidArgument(path + ":" + std::to_string(lineno) +
                                  ": expected key = value");
        }
        const std::string key = text::trim(trimmed.substr(0, eq));
        const std::string value = text::trim(trimmed.substr(eq + 1));
        try {
            cfg.apply_override(key, value);
        } catch (const std::exception& e) {
            throw InvalidArgument(path + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return cfg;
}

std::map<std::string, std::string> RunConfig::echo() const {
    // out_dir is where artifacts land, not part of their provenance; embedding
    // it would make byte-identical reruns impossible across directories.
    std::map<std::string, std::string> m;
    m["seed"] = std::to_string(seed);
    m["dataset.corpus"] = corpus_path;
    m["dataset.train_frac"] = jsonio::json(train_frac).dump();
    m["dataset.valid_frac"] = jsonio::json(valid_frac).dump();
    m["dataset.test_frac"] = jsonio::json(test_frac).dump();
    m["dataset.split_mode"] = split_mode;
    m["dataset.max_instr_tokens"] = std::to_string(max_instr_tokens);
    m["dataset.min_resp_tokens"] = std::to_string(min_resp_tokens);
    m["dataset.first_turn_only"] = first_turn_only ? "true" : "false";
    m["dataset.dedup"] = dedup_mode;
    if (!scrub_patterns.empty()) m["dataset.scrub_patterns"] = join_strings(scrub_patterns);
    m["model.order"] = std::to_string(ngram_order);
    m["model.smoothing_alpha"] = jsonio::json(smoothing_alpha).dump();
    m["model.vocab_cap"] = std::to_string(vocab_cap);
    m["model.case_fold"] = case_fold ? "true" : "false";
    m["model.nfc"] = nfc ? "true" : "false";
    m["prepop.sigma_ladder"] = join_doubles(sigma_ladder);
    m["prepop.max_len"] = std::to_string(max_len);
    m["prepop.min_len"] = std::to_string(min_len);
    m["prepop.workers"] = std::to_string(workers);
    m["prepop.split_depth"] = std::to_string(split_depth);
    m["prepop.batch_size"] = std::to_string(batch_size);
    m["cache.responder"] = responder;
    m["cache.trim"] = norm_trim ? "true" : "false";
    m["cache.nfc"] = norm_nfc ? "true" : "false";
    m["analytics.rank_fit_positions"] = std::to_string(rank_fit_positions);
    m["analytics.csv_mirror"] = csv_mirror ? "true" : "false";
    m["serving.run_loadgen"] = run_loadgen ? "true" : "false";
    if (run_loadgen) {
        m["serving.lambda"] = jsonio::json(lambda).dump();
        m["serving.duration_s"] = jsonio::json(duration_s).dump();
        m["serving.per_token_ms"] = jsonio::json(per_token_ms).dump();
        m["serving.startup_ms"] = jsonio::json(startup_ms).dump();
        m["serving.sim_response_tokens"] = std::to_string(sim_response_tokens);
    }
    return m;
}

void RunConfig::validate() const {
    if (corpus_path.empty()) throw InvalidArgument("config: dataset.corpus is required");
    if (sigma_ladder.empty()) throw InvalidArgument("config: prepop.sigma_ladder is required");
    if (split_mode != "random" && split_mode != "time-ordered") {
        throw InvalidArgument("config: dataset.split_mode must be random or time-ordered");
    }
    if (dedup_mode != "off" && dedup_mode != "global" && dedup_mode != "per_ip") {
        throw InvalidArgument("config: dataset.dedup must be off, global, or per_ip");
    }
}

E2eReport end_to_end(const RunConfig& config) {
    namespace fs = std::filesystem;
    config.validate();
    fs::create_directories(config.out_dir);
    const auto echo = config.echo();
    auto out_path = [&](const std::string& name) {
        return (fs::path(config.out_dir) / name).string();
    };

    // Stage: dataset preparation.
    text::TokenizerConfig tok;
    tok.case_fold = config.case_fold;
    tok.nfc = config.nfc;
    std::vector<CorpusRecord> records;
    try {
        records = ingest(config.corpus_path, nullptr, tok);
        FilterConfig fcfg;
        fcfg.max_instr_tokens = config.max_instr_tokens;
        fcfg.min_resp_tokens = config.min_resp_tokens;
        fcfg.first_turn_only = config.first_turn_only;
        records = filter_pipeline(records, fcfg);
        if (!config.scrub_patterns.empty()) records = scrub(records, config.scrub_patterns);
        NormalizeConfig norm{config.norm_trim, config.norm_nfc};
        if (config.dedup_mode == "global") {
            records = dedup(records, DedupMode::global, norm);
        } else if (config.dedup_mode == "per_ip") {
            records = dedup(records, DedupMode::per_ip, norm);
        }
    } catch (const std::exception& e) {
        throw Error(std::string("end_to_end failed at stage dataset: ") + e.what());
    }
    if (records.empty()) throw Error("end_to_end failed at stage dataset: no records survived");

    SplitSpec split_spec;
    split_spec.train_frac = config.train_frac;
    split_spec.valid_frac = config.valid_frac;
    split_spec.test_frac = config.test_frac;
    split_spec.seed = config.seed;
    split_spec.mode = config.split_mode == "time-ordered" ? SplitSpec::Mode::time_ordered
                                                          : SplitSpec::Mode::random;
    SplitResult parts = split(records, split_spec);
    if (parts.train.empty() || parts.valid.empty() || parts.test.empty()) {
        throw Error("end_to_end failed at stage split: a split came out empty");
    }
    write_corpus_file(out_path("train.ndjson"), parts.train);
    write_corpus_file(out_path("valid.ndjson"), parts.valid);
    write_corpus_file(out_path("test.ndjson"), parts.test);

    // Stage: model training.
    std::unique_ptr<NgramModel> model;
    try {
        std::vector<std::string> train_texts;
        train_texts.reserve(parts.train.size());
        for (const auto& rec : parts.train) train_texts.push_back(rec.instruction);
        NgramTrainConfig ncfg;
        ncfg.order = config.ngram_order;
        ncfg.smoothing_alpha = config.smoothing_alpha;
        ncfg.vocab_cap = config.vocab_cap;
        ncfg.tokenizer = tok;
        model = NgramModel::train(train_texts, ncfg);
        model->save(out_path("model.ngram.ndjson"));
    } catch (const std::exception& e) {
        throw Error(std::string("end_to_end failed at stage train-ngram: ") + e.what());
    }

    E2eReport report;
    report.train_size = parts.train.size();
    report.valid_size = parts.valid.size();
    report.test_size = parts.test.size();

    std::vector<double> ladder = config.sigma_ladder;
    std::sort(ladder.begin(), ladder.end());

    // Stage: analytics on the validation split.
    NllDistribution cdf;
    try {
        std::vector<std::string> valid_texts;
        valid_texts.reserve(parts.valid.size());
        for (const auto& rec : parts.valid) valid_texts.push_back(rec.instruction);
        cdf = empirical_cdf(*model, valid_texts, config.max_len);
        auto samples = collect_rank_probs(*model, valid_texts,
                                          static_cast<size_t>(config.rank_fit_positions));
        report.fit = fit_power_law(samples);
        report.fit.source = "validation rank-probability samples";
        const auto predictions = predict_report(cdf, ladder, report.fit, config.max_len);
        write_predict_report(out_path("predictions.ndjson"), predictions, echo,
                             config.csv_mirror);
    } catch (const std::exception& e) {
        throw Error(std::string("end_to_end failed at stage analytics: ") + e.what());
    }

    report.repetition_baseline = repetition_baseline(
        parts.train, parts.test, NormalizeConfig{config.norm_trim, config.norm_nfc});

    // Stage: per-sigma cache builds and evaluation.
    auto responder = make_responder(
        config.responder == "corpus-echo" ? "corpus-echo:" + out_path("train.ndjson")
                                          : config.responder,
        NormalizeConfig{config.norm_trim, config.norm_nfc});

    std::string last_store_path;
    for (double sigma : ladder) {
        try {
            PrepopConfig pcfg;
            pcfg.sigma = sigma;
            pcfg.max_len = config.max_len;
            pcfg.min_len = config.min_len;
            pcfg.workers = config.workers;
            pcfg.split_depth = config.split_depth;
            pcfg.batch_size = config.batch_size;
            PrepopResult pres = pcfg.workers > 1 ? prepopulate_partitioned(*model, pcfg)
                                                 : prepopulate(*model, pcfg);

            const std::string prepop_path =
                out_path("prepop_sigma_" + sigma_tag(sigma) + ".ndjson");
            PrepopFileMeta meta;
            meta.sigma = sigma;
            meta.max_len = config.max_len;
            meta.min_len = config.min_len;
            meta.model_digest = model->digest();
            meta.count = pres.instructions.size();
            meta.config_echo = echo;
            write_prepop_file(prepop_path, meta, pres.instructions);

            CacheStore store(NormalizeConfig{config.norm_trim, config.norm_nfc});
            store.set_sigma(sigma);
            store.bulk_load(pres.instructions, *responder);
            const std::string store_path =
                out_path("store_sigma_" + sigma_tag(sigma) + ".ndjson");
            store.persist(store_path);
            last_store_path = store_path;

            EvalResult eval = evaluate_hit_rate(store, parts.test, 20, parts.train);

            E2eRow row;
            row.sigma = sigma;
            row.entries = static_cast<int64_t>(store.size());
            row.actual_hit_rate = eval.hit_rate;
            row.predicted_hit_rate = predict_hit_rate(cdf, sigma);
            const CountEstimate est =
                estimate_count(report.fit.alpha, report.fit.beta, sigma, config.max_len);
            row.predicted_count_full = est.n_full;
            row.predicted_count_simplified = est.n_simplified;
            row.avg_response_tokens = store.avg_response_tokens();
            row.estimated_bytes = store.estimated_bytes();
            row.prepop_wall_ms = pres.stats.wall_ms;
            report.rows.push_back(row);
        } catch (const std::exception& e) {
            throw Error("end_to_end failed at stage prepopulate sigma=" +
                        jsonio::json(sigma).dump() + ": " + e.what());
        }
    }

    // Optional stage: deterministic virtual loadgen against the widest store.
    if (config.run_loadgen && !last_store_path.empty()) {
        try {
            CacheStore store = CacheStore::load_snapshot(last_store_path);
            LoadProfile profile;
            profile.rate_lambda = config.lambda;
            profile.duration_s = config.duration_s;
            profile.seed = config.seed;
            for (const auto& rec : parts.test) profile.requests.push_back(rec.instruction);
            UpstreamConfig up;
            up.mode = UpstreamConfig::Mode::simulated;
            up.per_token_latency_ms = config.per_token_ms;
            up.startup_latency_ms = config.startup_ms;
            up.response_tokens = config.sim_response_tokens;
            ServingMetrics metrics = run_virtual_loadgen(store, up, profile);
            std::vector<MetricsRow> rows{metrics_row(config.lambda, metrics)};
            write_metrics_report(out_path("metrics.ndjson"), rows, echo);
        } catch (const std::exception& e) {
            throw Error(std::string("end_to_end failed at stage loadgen: ") + e.what());
        }
    }

    // Report + digests.
    {
        using jsonio::json;
        report.report_path = out_path("report.ndjson");
        std::ofstream out = jsonio::open_out(report.report_path);
        json header;
        header["format"] = "instcache-e2e";
        header["version"] = 1;
        header["corpus_digest"] = digest_file(config.corpus_path);
        header["model_digest"] = model->digest();
        header["train"] = report.train_size;
        header["valid"] = report.valid_size;
        header["test"] = report.test_size;
        header["repetition_baseline"] = report.repetition_baseline;
        header["fit_alpha"] = report.fit.alpha;
        header["fit_beta"] = report.fit.beta;
        header["fit_r2"] = report.fit.fit_r2;
        json cfg;
        for (const auto& [k, v] : echo) cfg[k] = v;
        header["config"] = std::move(cfg);
        out << header.dump() << '\n';
        for (const auto& row : report.rows) {
            json r;
            r["sigma"] = row.sigma;
            r["entries"] = row.entries;
            r["actual_hit_rate"] = row.actual_hit_rate;
            r["predicted_hit_rate"] = row.predicted_hit_rate;
            r["repetition_baseline"] = report.repetition_baseline;
            r["predicted_count_full"] = row.predicted_count_full;
            r["predicted_count_simplified"] = row.predicted_count_simplified;
            r["avg_response_tokens"] = row.avg_response_tokens;
            r["estimated_bytes"] = row.estimated_bytes;
            out << r.dump() << '\n';
        }
        if (!out) throw Error("failed writing " + report.report_path);

        // Wall times live outside the digested artifacts.
        std::ofstream timings = jsonio::open_out(out_path("timings.ndjson"));
        for (const auto& row : report.rows) {
            json t;
            t["sigma"] = row.sigma;
            t["prepop_wall_ms"] = row.prepop_wall_ms;
            timings << t.dump() << '\n';
        }
    }
    {
        using jsonio::json;
        report.digests_path = out_path("digests.json");
        json digests;
        std::vector<std::string> names{"train.ndjson",       "valid.ndjson",
                                       "test.ndjson",        "model.ngram.ndjson",
                                       "predictions.ndjson", "report.ndjson"};
        if (config.csv_mirror) names.push_back("predictions.csv");
        for (double sigma : ladder) {
            names.push_back("prepop_sigma_" + sigma_tag(sigma) + ".ndjson");
            names.push_back("store_sigma_" + sigma_tag(sigma) + ".ndjson");
        }
        if (config.run_loadgen && !last_store_path.empty()) names.push_back("metrics.ndjson");
        std::sort(names.begin(), names.end());
        for (const auto& name : names) {
            const std::string digest = digest_file(out_path(name));
            digests[name] = digest;
            report.artifact_digests[name] = digest;
        }
        jsonio::write_file(report.digests_path, digests.dump() + "\n");
    }
    return report;
}

} // namespace instcache
