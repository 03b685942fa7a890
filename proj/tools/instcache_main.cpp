// instcache: predictive instruction-response cache toolkit.
//
// Subcommands map onto the library modules: dataset preparation (ingest,
// filter, split), model training (train-ngram), analytics (fit-powerlaw,
// estimate), cache construction (prepopulate, fill-responses), evaluation
// (evaluate, baseline, timeslice), serving (serve, loadgen, model-serve),
// cost profiling (profile) and the whole pipeline (end-to-end).

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <iostream>
#include <thread>

#include "instcache/analytics.hpp"
#include "instcache/cache_store.hpp"
#include "instcache/dataset.hpp"
#include "instcache/digest.hpp"
#include "instcache/model_factory.hpp"
#include "instcache/ngram_model.hpp"
#include "instcache/pipeline.hpp"
#include "instcache/prepopulate.hpp"
#include "instcache/protocol_server.hpp"
#include "instcache/responder.hpp"
#include "instcache/serving.hpp"
#include "instcache/transport.hpp"

namespace ic = instcache;
using njson = nlohmann::ordered_json;

namespace {

std::atomic<bool> g_stop{false};

void handle_signal(int) { g_stop.store(true); }

std::vector<std::string> instructions_of(const std::vector<ic::CorpusRecord>& records) {
    std::vector<std::string> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(r.instruction);
    return out;
}

std::vector<double> parse_ladder(const std::string& csv) {
    std::vector<double> out;
    size_t pos = 0;
    while (pos < csv.size()) {
        size_t comma = csv.find(',', pos);
        if (comma == std::string::npos) comma = csv.size();
        const std::string item = csv.substr(pos, comma - pos);
        if (!item.empty()) out.push_back(std::stod(item));
        pos = comma + 1;
    }
    return out;
}

// Reads --config (or $INSTCACHE_CONFIG) ahead of CLI11 so config values can
// seed the option defaults; explicit flags then win.
ic::RunConfig preload_config(int argc, char** argv, std::string& config_path) {
    for (int i = 1; i < argc - 1; ++i) {
        if (std::string(argv[i]) == "--config") config_path = argv[i + 1];
    }
    if (config_path.empty()) {
        if (const char* env = std::getenv("INSTCACHE_CONFIG")) config_path = env;
    }
    if (!config_path.empty()) return ic::RunConfig::from_file(config_path);
    return ic::RunConfig{};
}

void print_json(const njson& j) { std::cout << j.dump() << std::endl; }

// Progress notes go to stderr so stdout stays machine-readable; reads the
// log level lazily because CLI11 runs callbacks while parsing.
struct Log {
    const std::string* level = nullptr;
    void note(const std::string& msg) const {
        if (level == nullptr || *level != "quiet") {
            std::cerr << "[instcache] " << msg << std::endl;
        }
    }
};

} // namespace

int main(int argc, char** argv) {
    std::string config_path;
    ic::RunConfig cfg;
    try {
        cfg = preload_config(argc, argv, config_path);
    } catch (const std::exception& e) {
        std::cerr << njson{{"error", e.what()}}.dump() << std::endl;
        return 1;
    }

    CLI::App app{"instcache: predictive instruction-response caching toolkit"};
    app.require_subcommand(1);
    app.add_option("--config", config_path, "experiment config file (key = value lines)");
    app.add_option("--seed", cfg.seed, "global RNG seed");
    app.add_option("--out-dir", cfg.out_dir, "artifact output directory");
    app.add_option("--log-level", cfg.log_level, "log level (quiet|info|debug)");

    std::string active;
    Log log;
    log.level = &cfg.log_level;

    // ---- ingest ----------------------------------------------------------
    auto* c_ingest = app.add_subcommand("ingest", "validate a corpus NDJSON file");
    std::string in_path, out_path;
    c_ingest->add_option("--input", in_path, "corpus NDJSON")->required();
    c_ingest->add_option("--out", out_path, "validated records NDJSON")->required();
    c_ingest->callback([&] {
        active = "ingest";
        ic::IngestReport report;
        auto records = ic::ingest(in_path, &report);
        ic::write_corpus_file(out_path, records);
        print_json({{"records", report.records}, {"skipped", report.skipped}});
    });

    // ---- filter ----------------------------------------------------------
    auto* c_filter = app.add_subcommand("filter", "length/turn filters, dedup and scrub");
    std::string f_in, f_out, f_dedup = cfg.dedup_mode;
    int64_t f_max_instr = cfg.max_instr_tokens, f_min_resp = cfg.min_resp_tokens;
    bool f_all_turns = false;
    std::vector<std::string> f_scrub = cfg.scrub_patterns;
    c_filter->add_option("--input", f_in)->required();
    c_filter->add_option("--out", f_out)->required();
    c_filter->add_option("--max-instr-tokens", f_max_instr, "keep instructions strictly below");
    c_filter->add_option("--min-resp-tokens", f_min_resp, "keep responses at or above");
    c_filter->add_flag("--all-turns", f_all_turns, "keep non-first turns too");
    c_filter->add_option("--dedup", f_dedup, "off | global | per_ip");
    c_filter->add_option("--scrub", f_scrub, "drop instructions matching regex (repeatable)");
    c_filter->callback([&] {
        active = "filter";
        auto records = ic::ingest(f_in);
        ic::FilterConfig fc;
        fc.max_instr_tokens = f_max_instr;
        fc.min_resp_tokens = f_min_resp;
        fc.first_turn_only = !f_all_turns;
        records = ic::filter_pipeline(records, fc);
        if (!f_scrub.empty()) records = ic::scrub(records, f_scrub);
        if (f_dedup == "global") {
            records = ic::dedup(records, ic::DedupMode::global);
        } else if (f_dedup == "per_ip") {
            records = ic::dedup(records, ic::DedupMode::per_ip);
        } else if (f_dedup != "off") {
            throw ic::InvalidArgument("--dedup must be off, global, or per_ip");
        }
        ic::write_corpus_file(f_out, records);
        print_json({{"records", records.size()}});
    });

    // ---- split -----------------------------------------------------------
    auto* c_split = app.add_subcommand("split", "train/valid/test split");
    std::string s_in, s_prefix, s_mode = cfg.split_mode;
    double s_train = cfg.train_frac, s_valid = cfg.valid_frac, s_test = cfg.test_frac;
    c_split->add_option("--input", s_in)->required();
    c_split->add_option("--out-prefix", s_prefix)->required();
    c_split->add_option("--train", s_train);
    c_split->add_option("--valid", s_valid);
    c_split->add_option("--test", s_test);
    c_split->add_option("--mode", s_mode, "random | time-ordered");
    c_split->callback([&] {
        active = "split";
        auto records = ic::ingest(s_in);
        ic::SplitSpec spec;
        spec.train_frac = s_train;
        spec.valid_frac = s_valid;
        spec.test_frac = s_test;
        spec.seed = cfg.seed;
        spec.mode = s_mode == "time-ordered" ? ic::SplitSpec::Mode::time_ordered
                                             : ic::SplitSpec::Mode::random;
        auto parts = ic::split(records, spec);
        ic::write_corpus_file(s_prefix + ".train.ndjson", parts.train);
        ic::write_corpus_file(s_prefix + ".valid.ndjson", parts.valid);
        ic::write_corpus_file(s_prefix + ".test.ndjson", parts.test);
        print_json({{"train", parts.train.size()},
                    {"valid", parts.valid.size()},
                    {"test", parts.test.size()}});
    });

    // ---- train-ngram -----------------------------------------------------
    auto* c_train = app.add_subcommand("train-ngram", "train the word n-gram model");
    std::string t_corpus, t_out;
    int t_order = cfg.ngram_order, t_cap = cfg.vocab_cap;
    double t_alpha = cfg.smoothing_alpha;
    bool t_no_fold = !cfg.case_fold, t_no_nfc = !cfg.nfc;
    c_train->add_option("--corpus", t_corpus, "records NDJSON")->required();
    c_train->add_option("--out", t_out, "model artifact path")->required();
    c_train->add_option("--order", t_order);
    c_train->add_option("--smoothing", t_alpha);
    c_train->add_option("--vocab-cap", t_cap);
    c_train->add_flag("--no-case-fold", t_no_fold);
    c_train->add_flag("--no-nfc", t_no_nfc);
    c_train->callback([&] {
        active = "train-ngram";
        auto records = ic::ingest(t_corpus);
        ic::NgramTrainConfig ncfg;
        ncfg.order = t_order;
        ncfg.smoothing_alpha = t_alpha;
        ncfg.vocab_cap = t_cap;
        ncfg.tokenizer.case_fold = !t_no_fold;
        ncfg.tokenizer.nfc = !t_no_nfc;
        auto model = ic::NgramModel::train(instructions_of(records), ncfg);
        model->save(t_out);
        print_json({{"vocab_size", model->spec().vocab_size},
                    {"order", t_order},
                    {"model_digest", model->digest()}});
    });

    // ---- fit-powerlaw ----------------------------------------------------
    auto* c_fit = app.add_subcommand("fit-powerlaw", "fit rank-probability power law");
    std::string fp_input, fp_model, fp_corpus, fp_out;
    int fp_positions = cfg.rank_fit_positions;
    c_fit->add_option("--input", fp_input, "NDJSON of {\"rank\",\"prob\"} rows");
    c_fit->add_option("--model", fp_model, "model spec to sample from");
    c_fit->add_option("--corpus", fp_corpus, "records NDJSON whose paths are walked");
    c_fit->add_option("--max-positions", fp_positions);
    c_fit->add_option("--out", fp_out, "fit NDJSON output");
    c_fit->callback([&] {
        active = "fit-powerlaw";
        std::vector<ic::RankProbSample> samples;
        std::string source;
        if (!fp_input.empty()) {
            std::ifstream in(fp_input);
            if (!in) throw ic::Error("cannot open " + fp_input);
            std::string line;
            while (std::getline(in, line)) {
                if (line.empty()) continue;
                auto j = njson::parse(line);
                samples.push_back(
                    {j.at("rank").get<int32_t>(), j.at("prob").get<double>()});
            }
            source = fp_input;
        } else if (!fp_model.empty() && !fp_corpus.empty()) {
            auto model = ic::model_from_spec(fp_model);
            auto records = ic::ingest(fp_corpus);
            samples = ic::collect_rank_probs(*model, instructions_of(records),
                                             static_cast<size_t>(fp_positions));
            source = fp_model + " over " + fp_corpus;
        } else {
            throw ic::InvalidArgument(
                "fit-powerlaw needs --input, or --model together with --corpus");
        }
        auto fit = ic::fit_power_law(samples);
        fit.source = source;
        njson row{{"alpha", fit.alpha},
                  {"beta", fit.beta},
                  {"r2", fit.fit_r2},
                  {"ranks_used", fit.ranks_used},
                  {"source", fit.source}};
        if (!fp_out.empty()) {
            std::ofstream out(fp_out);
            out << njson{{"format", "instcache-fit"}, {"version", 1}}.dump() << '\n'
                << row.dump() << '\n';
        }
        print_json(row);
    });

    // ---- estimate --------------------------------------------------------
    auto* c_est = app.add_subcommand("estimate", "cache size from the count formulas");
    double e_alpha = 1.0, e_beta = 1.0, e_sigma = 0.0;
    int e_length = 1;
    c_est->add_option("--alpha", e_alpha)->required();
    c_est->add_option("--sigma", e_sigma)->required();
    c_est->add_option("--length", e_length)->required();
    c_est->add_option("--beta", e_beta, "normalizer (default 1: simplified regime)");
    c_est->callback([&] {
        active = "estimate";
        const auto est = ic::estimate_count(e_alpha, e_beta, e_sigma, e_length);
        print_json({{"sigma", est.sigma},
                    {"alpha", est.alpha},
                    {"beta", est.beta},
                    {"length", est.length},
                    {"n_simplified", est.n_simplified},
                    {"n_full", est.n_full},
                    {"ln_simplified", est.ln_simplified},
                    {"ln_full", est.ln_full}});
    });

    // ---- prepopulate -----------------------------------------------------
    auto* c_prepop = app.add_subcommand("prepopulate", "enumerate instructions below sigma");
    std::string p_model, p_out;
    double p_sigma = 0.0;
    int p_max_len = cfg.max_len, p_min_len = cfg.min_len, p_workers = cfg.workers;
    int p_split_depth = cfg.split_depth, p_batch = cfg.batch_size;
    bool p_bfs = false;
    c_prepop->add_option("--model", p_model, "model spec")->required();
    c_prepop->add_option("--sigma", p_sigma)->required();
    c_prepop->add_option("--max-len", p_max_len, "defaults from config prepop.max_len");
    c_prepop->add_option("--min-len", p_min_len);
    c_prepop->add_option("--workers", p_workers);
    c_prepop->add_option("--split-depth", p_split_depth);
    c_prepop->add_option("--batch-size", p_batch);
    c_prepop->add_flag("--bfs", p_bfs, "breadth-first traversal (profiling aid)");
    c_prepop->add_option("--out", p_out, "prepop NDJSON")->required();
    c_prepop->callback([&] {
        active = "prepopulate";
        auto model = ic::model_from_spec(p_model);
        log.note("prepopulating sigma=" + std::to_string(p_sigma) + " max_len=" +
                 std::to_string(p_max_len) + " workers=" + std::to_string(p_workers));
        ic::PrepopConfig pc;
        pc.sigma = p_sigma;
        pc.max_len = p_max_len;
        pc.min_len = p_min_len;
        pc.workers = p_workers;
        pc.split_depth = p_split_depth;
        pc.batch_size = p_batch;
        pc.order = p_bfs ? ic::TraversalOrder::breadth_first : ic::TraversalOrder::depth_first;
        const auto result =
            p_workers > 1 ? ic::prepopulate_partitioned(*model, pc) : ic::prepopulate(*model, pc);
        ic::PrepopFileMeta meta;
        meta.sigma = p_sigma;
        meta.max_len = p_max_len;
        meta.min_len = p_min_len;
        meta.model_digest = model->digest();
        meta.count = result.instructions.size();
        meta.config_echo = {{"model", p_model},
                            {"workers", std::to_string(p_workers)},
                            {"batch_size", std::to_string(p_batch)},
                            {"seed", std::to_string(cfg.seed)}};
        ic::write_prepop_file(p_out, meta, result.instructions);
        print_json({{"instructions", result.instructions.size()},
                    {"nodes_expanded", result.stats.nodes_expanded},
                    {"nodes_pruned", result.stats.nodes_pruned},
                    {"wall_ms", result.stats.wall_ms},
                    {"high_water_states", result.stats.high_water_states},
                    {"high_water_bytes", result.stats.high_water_bytes}});
    });

    // ---- fill-responses --------------------------------------------------
    auto* c_fill = app.add_subcommand("fill-responses", "build a cache store from prepop output");
    std::string fr_prepop, fr_out, fr_responder = cfg.responder == "corpus-echo"
                                                      ? "template"
                                                      : cfg.responder;
    bool fr_no_trim = !cfg.norm_trim, fr_nfc = cfg.norm_nfc;
    c_fill->add_option("--prepop", fr_prepop)->required();
    c_fill->add_option("--out", fr_out, "store snapshot path")->required();
    c_fill->add_option("--responder", fr_responder,
                       "template[:prefix] | corpus-echo:FILE | http:host:port[/path]");
    c_fill->add_flag("--no-trim", fr_no_trim);
    c_fill->add_flag("--nfc", fr_nfc);
    c_fill->callback([&] {
        active = "fill-responses";
        ic::NormalizeConfig norm{!fr_no_trim, fr_nfc};
        auto responder = ic::make_responder(fr_responder, norm);
        ic::CacheStore store(norm);
        const auto report = store.bulk_load_file(fr_prepop, *responder);
        store.persist(fr_out);
        print_json({{"entries", store.size()},
                    {"collisions", report.collisions},
                    {"responder_failures", report.responder_failures},
                    {"estimated_bytes", store.estimated_bytes()}});
    });

    // ---- evaluate --------------------------------------------------------
    auto* c_eval = app.add_subcommand("evaluate", "hit rate of a store on a test set");
    std::string ev_store, ev_test, ev_train, ev_out;
    size_t ev_examples = 20;
    c_eval->add_option("--store", ev_store)->required();
    c_eval->add_option("--test", ev_test)->required();
    c_eval->add_option("--train", ev_train, "label novel hits against this training set");
    c_eval->add_option("--max-examples", ev_examples);
    c_eval->add_option("--out", ev_out, "evaluation report NDJSON");
    c_eval->callback([&] {
        active = "evaluate";
        auto store = ic::CacheStore::load_snapshot(ev_store);
        auto test = ic::ingest(ev_test);
        std::vector<ic::CorpusRecord> train;
        if (!ev_train.empty()) train = ic::ingest(ev_train);
        const auto eval = ic::evaluate_hit_rate(store, test, ev_examples, train);
        njson row{{"hit_rate", eval.hit_rate},
                  {"hits", eval.hits},
                  {"total", eval.total},
                  {"examples", eval.examples}};
        if (!ev_out.empty()) {
            std::ofstream out(ev_out);
            out << njson{{"format", "instcache-eval"},
                         {"version", 1},
                         {"store", ev_store},
                         {"sigma", store.sigma()}}
                       .dump()
                << '\n'
                << row.dump() << '\n';
        }
        print_json(row);
    });

    // ---- baseline --------------------------------------------------------
    auto* c_base = app.add_subcommand("baseline", "repetition upper bound of exact caching");
    std::string b_train, b_test;
    c_base->add_option("--train", b_train)->required();
    c_base->add_option("--test", b_test)->required();
    c_base->callback([&] {
        active = "baseline";
        auto train = ic::ingest(b_train);
        auto test = ic::ingest(b_test);
        print_json({{"repetition_baseline", ic::repetition_baseline(train, test)}});
    });

    // ---- timeslice -------------------------------------------------------
    auto* c_slice = app.add_subcommand("timeslice", "hit rate over consecutive time windows");
    std::string ts_store, ts_records, ts_out;
    int ts_windows = 4;
    c_slice->add_option("--store", ts_store)->required();
    c_slice->add_option("--records", ts_records)->required();
    c_slice->add_option("--windows", ts_windows);
    c_slice->add_option("--out", ts_out);
    c_slice->callback([&] {
        active = "timeslice";
        auto store = ic::CacheStore::load_snapshot(ts_store);
        auto records = ic::ingest(ts_records);
        const auto rows = ic::timeslice_eval(store, records, ts_windows);
        if (!ts_out.empty()) {
            ic::write_timeslice_report(ts_out, rows, {{"store", ts_store}});
        }
        njson out = njson::array();
        for (const auto& r : rows) {
            out.push_back({{"window", r.window}, {"n", r.n}, {"hit_rate", r.hit_rate}});
        }
        print_json(out);
    });

    // ---- serve -----------------------------------------------------------
    auto* c_serve = app.add_subcommand("serve", "cache-first HTTP proxy");
    std::string sv_store, sv_upstream = "sim:per_token=10", sv_bind = "127.0.0.1:8080";
    c_serve->add_option("--store", sv_store)->required();
    c_serve->add_option("--upstream", sv_upstream, "sim:k=v,... | http:host:port[/path]");
    c_serve->add_option("--bind", sv_bind, "host:port (port 0 = ephemeral)");
    c_serve->callback([&] {
        active = "serve";
        auto store = ic::CacheStore::load_snapshot(sv_store);
        const size_t colon = sv_bind.rfind(':');
        if (colon == std::string::npos) throw ic::InvalidArgument("--bind must be host:port");
        ic::ServiceConfig scfg;
        scfg.bind_host = sv_bind.substr(0, colon);
        scfg.port = std::stoi(sv_bind.substr(colon + 1));
        ic::CacheService service(store, ic::UpstreamConfig::parse(sv_upstream), scfg);
        service.start();
        print_json({{"listening", service.port()}, {"entries", store.size()}});
        std::signal(SIGINT, handle_signal);
        std::signal(SIGTERM, handle_signal);
        while (!g_stop.load()) {
            std::this_thread::sleep_for(std::chrono::milliseconds(100));
        }
        service.stop();
    });

    // ---- loadgen ---------------------------------------------------------
    auto* c_load = app.add_subcommand("loadgen", "Poisson load generator");
    std::string lg_target, lg_store, lg_upstream = "sim:per_token=10", lg_requests, lg_out;
    double lg_lambda = cfg.lambda, lg_duration = cfg.duration_s;
    int lg_concurrency = 8;
    bool lg_csv = false;
    c_load->add_option("--target", lg_target, "host:port of a live service");
    c_load->add_option("--store", lg_store, "store snapshot for a virtual-clock run");
    c_load->add_option("--upstream", lg_upstream, "simulated upstream for the virtual run");
    c_load->add_option("--requests", lg_requests, "corpus NDJSON request source")->required();
    c_load->add_option("--lambda", lg_lambda);
    c_load->add_option("--duration", lg_duration);
    c_load->add_option("--concurrency", lg_concurrency);
    c_load->add_option("--out", lg_out, "metrics NDJSON");
    c_load->add_flag("--csv", lg_csv, "CSV mirror next to --out");
    c_load->callback([&] {
        active = "loadgen";
        ic::LoadProfile profile;
        profile.rate_lambda = lg_lambda;
        profile.duration_s = lg_duration;
        profile.seed = cfg.seed;
        profile.requests = instructions_of(ic::ingest(lg_requests));

        ic::ServingMetrics metrics;
        if (!lg_target.empty()) {
            const size_t colon = lg_target.rfind(':');
            if (colon == std::string::npos) {
                throw ic::InvalidArgument("--target must be host:port");
            }
            metrics = ic::run_http_loadgen(lg_target.substr(0, colon),
                                           std::stoi(lg_target.substr(colon + 1)), profile,
                                           lg_concurrency);
        } else if (!lg_store.empty()) {
            auto store = ic::CacheStore::load_snapshot(lg_store);
            metrics = ic::run_virtual_loadgen(store, ic::UpstreamConfig::parse(lg_upstream),
                                              profile);
        } else {
            throw ic::InvalidArgument("loadgen needs --target or --store");
        }
        const auto row = ic::metrics_row(lg_lambda, metrics);
        if (!lg_out.empty()) {
            ic::write_metrics_report(lg_out, std::vector<ic::MetricsRow>{row},
                                     {{"lambda", njson(lg_lambda).dump()},
                                      {"duration_s", njson(lg_duration).dump()},
                                      {"seed", std::to_string(cfg.seed)}},
                                     lg_csv);
        }
        print_json({{"requests", row.requests},
                    {"hit_rate", row.hit_rate},
                    {"errors", row.errors},
                    {"mean_tpot_ms", row.mean_tpot_ms},
                    {"median_tpot_ms", row.median_tpot_ms},
                    {"p95_tpot_ms", row.p95_tpot_ms},
                    {"throughput_rps", row.throughput_rps}});
    });

    // ---- profile ---------------------------------------------------------
    auto* c_prof = app.add_subcommand("profile", "pre-population cost across a sigma ladder");
    std::string pr_model, pr_sigmas, pr_out;
    int pr_max_len = cfg.max_len, pr_min_len = cfg.min_len;
    bool pr_bfs = false;
    c_prof->add_option("--model", pr_model)->required();
    c_prof->add_option("--sigmas", pr_sigmas, "comma-separated ladder (>= 2)")->required();
    c_prof->add_option("--max-len", pr_max_len, "defaults from config prepop.max_len");
    c_prof->add_option("--min-len", pr_min_len);
    c_prof->add_flag("--bfs", pr_bfs);
    c_prof->add_option("--out", pr_out)->required();
    c_prof->callback([&] {
        active = "profile";
        auto model = ic::model_from_spec(pr_model);
        const auto sigmas = parse_ladder(pr_sigmas);
        ic::PrepopConfig pc;
        pc.max_len = pr_max_len;
        pc.min_len = pr_min_len;
        pc.order = pr_bfs ? ic::TraversalOrder::breadth_first : ic::TraversalOrder::depth_first;
        const auto rows = ic::profile_prepopulation(*model, sigmas, pc);
        ic::write_profile_file(pr_out, rows, {{"model", pr_model}});
        std::vector<double> counts, times;
        for (const auto& r : rows) {
            counts.push_back(static_cast<double>(r.instructions));
            times.push_back(r.stats.wall_ms);
        }
        njson summary{{"rows", rows.size()}};
        if (rows.size() >= 2) {
            const auto fit = ic::linear_least_squares(counts, times);
            summary["time_vs_count_r2"] = fit.r2;
            summary["ms_per_instruction"] = fit.slope;
        }
        print_json(summary);
    });

    // ---- end-to-end ------------------------------------------------------
    auto* c_e2e = app.add_subcommand("end-to-end", "full pipeline from corpus to report");
    std::string e2e_corpus;
    std::vector<std::string> e2e_sets;
    std::string e2e_sigmas;
    c_e2e->add_option("--corpus", e2e_corpus, "overrides dataset.corpus");
    c_e2e->add_option("--sigmas", e2e_sigmas, "overrides prepop.sigma_ladder");
    c_e2e->add_option("--set", e2e_sets, "config override key=value (repeatable)");
    c_e2e->callback([&] {
        active = "end-to-end";
        ic::RunConfig run = cfg;
        if (!e2e_corpus.empty()) run.corpus_path = e2e_corpus;
        if (!e2e_sigmas.empty()) run.apply_override("prepop.sigma_ladder", e2e_sigmas);
        for (const auto& kv : e2e_sets) {
            const size_t eq = kv.find('=');
            if (eq == std::string::npos) {
                throw ic::InvalidArgument("--set expects key=value, got " + kv);
            }
            run.apply_override(kv.substr(0, eq), kv.substr(eq + 1));
        }
        log.note("end-to-end: corpus=" + run.corpus_path + " out=" + run.out_dir);
        const auto report = ic::end_to_end(run);
        log.note("end-to-end: " + std::to_string(report.rows.size()) + " sigma points, " +
                 std::to_string(report.train_size) + " train records");
        njson rows = njson::array();
        for (const auto& r : report.rows) {
            rows.push_back({{"sigma", r.sigma},
                            {"entries", r.entries},
                            {"actual_hit_rate", r.actual_hit_rate},
                            {"predicted_hit_rate", r.predicted_hit_rate}});
        }
        print_json({{"report", report.report_path},
                    {"digests", report.digests_path},
                    {"repetition_baseline", report.repetition_baseline},
                    {"fit_alpha", report.fit.alpha},
                    {"rows", rows}});
    });

    // ---- model-serve -----------------------------------------------------
    auto* c_mserve = app.add_subcommand(
        "model-serve", "serve a model over the line-delimited JSON wire protocol");
    std::string ms_model, ms_tcp;
    bool ms_stdio = false;
    c_mserve->add_option("--model", ms_model)->required();
    c_mserve->add_flag("--stdio", ms_stdio, "speak the protocol on stdin/stdout");
    c_mserve->add_option("--tcp", ms_tcp, "listen on host:port (port 0 = ephemeral)");
    c_mserve->callback([&] {
        active = "model-serve";
        auto model = ic::model_from_spec(ms_model);
        if (ms_stdio) {
            ic::serve_model_stream(*model, std::cin, std::cout);
            return;
        }
        if (ms_tcp.empty()) {
            throw ic::InvalidArgument("model-serve needs --stdio or --tcp host:port");
        }
        const size_t colon = ms_tcp.rfind(':');
        if (colon == std::string::npos) throw ic::InvalidArgument("--tcp must be host:port");
        ic::TcpLineServer server(ms_tcp.substr(0, colon),
                                 std::stoi(ms_tcp.substr(colon + 1)));
        print_json({{"listening", server.port()}});
        ic::serve_model_tcp(*model, server);
    });

    // Global flags may appear after the subcommand name.
    for (auto* sub : app.get_subcommands({})) sub->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    } catch (const std::exception& e) {
        std::cerr << njson{{"error", e.what()}, {"command", active}}.dump() << std::endl;
        return 1;
    }
    return 0;
}
