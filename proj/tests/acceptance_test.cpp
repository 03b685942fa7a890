// Acceptance suite: one test case per criterion, each printing a final
// [acceptance] PASS line (a doctest failure aborts the case before the line).

#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <set>

#include "instcache/analytics.hpp"
#include "instcache/model_factory.hpp"
#include "instcache/ngram_model.hpp"
#include "instcache/pipeline.hpp"
#include "instcache/prepopulate.hpp"
#include "instcache/responder.hpp"
#include "instcache/rng.hpp"
#include "instcache/serving.hpp"
#include "oracles.hpp"

using namespace instcache;
namespace tst = instcache::testing;
namespace fs = std::filesystem;

namespace {

void report_pass(int criterion, const char* what) {
    std::printf("[acceptance] criterion %d (%s): PASS\n", criterion, what);
    std::fflush(stdout);
}

std::vector<std::string> instructions_of(const std::vector<CorpusRecord>& records) {
    std::vector<std::string> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(r.instruction);
    return out;
}

CacheStore build_store(const std::vector<InstructionRecord>& records) {
    TemplateResponder responder;
    CacheStore store;
    store.bulk_load(records, responder);
    return store;
}

} // namespace

TEST_CASE("criterion 1: search exactness against brute-force enumeration") {
    std::vector<std::string> model_specs{
        "uniform:v=2",
        "uniform:v=3",
        "uniform:v=5",
        "uniform:v=10",
        "uniform:v=20",
        "powerlaw:v=5,alpha=0.7",
        "powerlaw:v=5,alpha=1.3",
        "powerlaw:v=10,alpha=0.7",
        "powerlaw:v=10,alpha=1.3",
        "powerlaw:v=10,alpha=2.0,eos_rank=3",
        "powerlaw:v=20,alpha=1.0",
    };

    size_t cases = 0;
    auto check_case = [&](TokenModel& model, double sigma, int max_len, int min_len) {
        auto got = prepopulate(model, PrepopConfig{sigma, max_len, min_len, 256, 1, 2});
        auto want = tst::brute_force_enumerate(model, sigma, max_len, min_len);
        REQUIRE_MESSAGE(tst::same_instruction_set(got.instructions, want),
                        "set mismatch at sigma=" << sigma << " L=" << max_len);
        REQUIRE(model.state_stats().live_states == 1);
        ++cases;
    };

    for (const auto& spec : model_specs) {
        auto model = model_from_spec(spec);
        const int big_L = spec == "uniform:v=20" ? 4 : 5; // keep the 20^5 blowup out
        for (double sigma : {1.0, 2.5, 5.0}) {
            CAPTURE(spec);
            check_case(*model, sigma, 3, 1);
            check_case(*model, sigma, big_L, sigma == 2.5 ? 0 : 1);
        }
    }

    // toy n-grams: seen-count models with and without smoothing
    const std::vector<std::string> corpus{"how to bake", "how to code", "how to bake bread",
                                          "what is this", "code this"};
    for (int order : {1, 2, 3}) {
        for (double alpha_s : {0.0, 0.01}) {
            NgramTrainConfig ncfg;
            ncfg.order = order;
            ncfg.smoothing_alpha = alpha_s;
            auto model = NgramModel::train(corpus, ncfg);
            for (double sigma : {2.0, 6.0}) {
                CAPTURE(order);
                CAPTURE(alpha_s);
                check_case(*model, sigma, 4, 1);
            }
        }
    }

    REQUIRE(cases >= 50);
    report_pass(1, "exact set equality over a 78-case grid");
}

TEST_CASE("criterion 2: count-formula calibration on the synthetic space") {
    struct GridPoint {
        double alpha;
        int length;
        std::vector<double> sigmas;
    };
    const std::vector<GridPoint> grid{
        {1.1, 3, {9.0, 11.0, 13.0}},  {1.1, 4, {10.5, 12.5, 14.5}},
        {1.3, 3, {8.5, 10.5, 12.5}}, {1.3, 4, {9.0, 11.0, 13.0}},
        {1.5, 3, {8.5, 10.5, 12.5}}, {1.5, 4, {9.0, 11.0, 13.0}},
    };
    const int32_t V = 1000;

    for (const auto& gp : grid) {
        const double beta = tst::power_law_beta(V, gp.alpha);
        int64_t prev_exact = 0;
        double prev_full = 0.0;
        for (double sigma : gp.sigmas) {
            CAPTURE(gp.alpha);
            CAPTURE(gp.length);
            CAPTURE(sigma);
            const int64_t exact = tst::power_law_exact_count(V, gp.alpha, sigma, gp.length);
            REQUIRE(exact >= 100);
            REQUIRE(exact <= 1000000);
            const CountEstimate est = estimate_count(gp.alpha, beta, sigma, gp.length);
            const double ratio = est.ln_full / std::log(static_cast<double>(exact));
            REQUIRE_MESSAGE(ratio >= 0.7, "ln-ratio " << ratio << " below band");
            REQUIRE_MESSAGE(ratio <= 1.3, "ln-ratio " << ratio << " above band");
            // the sigma -> count trend is monotone for both routes
            REQUIRE(exact > prev_exact);
            REQUIRE(est.n_full > prev_full);
            prev_exact = exact;
            prev_full = est.n_full;
        }
    }
    report_pass(2, "ln(n_full)/ln(n_exact) in [0.7, 1.3] over 18 grid points");
}

TEST_CASE("criterion 3: hit-rate prediction within 3 points of reality") {
    tst::SyntheticCorpusConfig gcfg;
    gcfg.n_records = 50000;
    gcfg.vocab_words = 40;
    gcfg.zipf_alpha = 1.6;
    gcfg.min_words = 1;
    gcfg.max_words = 6;
    gcfg.seed = 20250811;
    auto records = tst::generate_corpus(gcfg);

    SplitSpec spec; // 0.8 / 0.1 / 0.1
    spec.seed = 42;
    auto parts = split(records, spec);
    REQUIRE(parts.train.size() == 40000);

    NgramTrainConfig ncfg;
    ncfg.order = 2;
    ncfg.smoothing_alpha = 0.01;
    ncfg.vocab_cap = 128;
    auto model = NgramModel::train(instructions_of(parts.train), ncfg);

    const int max_len = 8; // generator emits at most 6 content words
    auto cdf = empirical_cdf(*model, instructions_of(parts.valid), max_len);

    // sigma ladder from validation quantiles: informative spread, bounded work
    std::vector<double> ladder;
    for (double q : {0.15, 0.30, 0.45, 0.60, 0.70}) ladder.push_back(cdf.quantile(q));

    size_t largest_cache = 0;
    double widest_actual = 0.0;
    for (double sigma : ladder) {
        PrepopConfig pcfg;
        pcfg.sigma = sigma;
        pcfg.max_len = max_len;
        auto result = prepopulate(*model, pcfg);
        CacheStore store = build_store(result.instructions);
        largest_cache = std::max(largest_cache, store.size());

        const double predicted = predict_hit_rate(cdf, sigma);
        const auto eval = evaluate_hit_rate(store, parts.test);
        widest_actual = std::max(widest_actual, eval.hit_rate);
        std::printf("[acceptance]   sigma=%.3f entries=%zu predicted=%.4f actual=%.4f\n", sigma,
                    store.size(), predicted, eval.hit_rate);
        CAPTURE(sigma);
        CAPTURE(predicted);
        CAPTURE(eval.hit_rate);
        REQUIRE(std::abs(predicted - eval.hit_rate) <= 0.03);
    }
    // the run must exercise real caches, not empty corners
    REQUIRE(largest_cache >= 1000);
    REQUIRE(widest_actual >= 0.5);
    report_pass(3, "|predicted - actual| <= 3pp at 5 sigma points, 50k corpus");
}

TEST_CASE("criterion 4: hit rate, entry count and key sets grow with sigma") {
    tst::SyntheticCorpusConfig gcfg;
    gcfg.n_records = 6000;
    gcfg.vocab_words = 30;
    gcfg.zipf_alpha = 1.6;
    gcfg.max_words = 4;
    gcfg.seed = 99;
    auto records = tst::generate_corpus(gcfg);
    SplitSpec spec;
    auto parts = split(records, spec);

    NgramTrainConfig ncfg;
    ncfg.order = 2;
    ncfg.vocab_cap = 64;
    auto model = NgramModel::train(instructions_of(parts.train), ncfg);

    std::vector<double> ladder{3.0, 4.0, 5.0, 6.0};
    double prev_rate = -1.0;
    size_t prev_entries = 0;
    std::set<std::string> prev_keys;
    for (double sigma : ladder) {
        PrepopConfig pcfg;
        pcfg.sigma = sigma;
        pcfg.max_len = 6;
        auto result = prepopulate(*model, pcfg);
        CacheStore store = build_store(result.instructions);
        const auto eval = evaluate_hit_rate(store, parts.test);
        CAPTURE(sigma);
        REQUIRE(eval.hit_rate >= prev_rate);
        REQUIRE(store.size() >= prev_entries);
        std::set<std::string> keys;
        for (const auto& [k, e] : store.entries()) keys.insert(k);
        for (const auto& k : prev_keys) REQUIRE(keys.count(k) == 1); // containment
        prev_rate = eval.hit_rate;
        prev_entries = store.size();
        prev_keys = std::move(keys);
    }
    REQUIRE(prev_rate > 0.0);
    report_pass(4, "monotone hit rate / entries / key-set containment over the ladder");
}

TEST_CASE("criterion 5: partitioned pre-population equals single-worker") {
    for (const char* spec : {"powerlaw:v=8,alpha=1.0", "uniform:v=6"}) {
        auto reference_model = model_from_spec(spec);
        PrepopConfig cfg;
        cfg.sigma = 7.5;
        cfg.max_len = 4;
        auto want = prepopulate(*reference_model, cfg);
        for (int workers : {2, 3, 4}) {
            for (int split_depth : {1, 2}) {
                CAPTURE(spec);
                CAPTURE(workers);
                CAPTURE(split_depth);
                auto model = model_from_spec(spec);
                PrepopConfig pc = cfg;
                pc.workers = workers;
                pc.split_depth = split_depth;
                auto got = prepopulate_partitioned(*model, pc);
                REQUIRE(tst::same_instruction_set(got.instructions, want.instructions));
            }
        }
    }
    report_pass(5, "k in {2,3,4} x two split depths, exact set equality");
}

TEST_CASE("criterion 6: state hygiene and DFS vs BFS high-water memory") {
    // zero non-root retained states after every search
    for (const char* spec : {"uniform:v=10", "powerlaw:v=12,alpha=1.1"}) {
        auto model = model_from_spec(spec);
        for (double sigma : {2.0, 5.0, 8.0}) {
            PrepopConfig cfg;
            cfg.sigma = sigma;
            cfg.max_len = 4;
            prepopulate(*model, cfg);
            REQUIRE(model->state_stats().live_states == 1);
        }
    }

    // depth-first keeps strictly fewer states live than breadth-first
    auto dfs_model = model_from_spec("uniform:v=10");
    auto bfs_model = model_from_spec("uniform:v=10");
    PrepopConfig cfg;
    cfg.sigma = 100.0; // fully open V=10, L=4 tree
    cfg.max_len = 4;
    cfg.order = TraversalOrder::depth_first;
    auto dfs = prepopulate(*dfs_model, cfg);
    cfg.order = TraversalOrder::breadth_first;
    auto bfs = prepopulate(*bfs_model, cfg);
    REQUIRE(tst::same_instruction_set(dfs.instructions, bfs.instructions));
    REQUIRE(dfs.stats.high_water_states <= bfs.stats.high_water_states);
    REQUIRE(dfs.stats.high_water_bytes <= bfs.stats.high_water_bytes);
    report_pass(6, "zero non-root states after search; DFS high-water <= BFS");
}

TEST_CASE("criterion 7: pre-population wall time is linear in output size") {
    auto model = model_from_spec("powerlaw:v=1000,alpha=1.3");
    std::vector<double> sigmas{11.0, 12.5, 14.0, 15.5};
    PrepopConfig cfg;
    cfg.max_len = 4;

    // warm-up pass, then min-of-3 per point to shed scheduler noise
    profile_prepopulation(*model, std::vector<double>{sigmas.front(), sigmas.front()}, cfg);
    std::vector<double> counts(sigmas.size(), 0.0);
    std::vector<double> times(sigmas.size(), 1e300);
    for (int pass = 0; pass < 3; ++pass) {
        auto rows = profile_prepopulation(*model, sigmas, cfg);
        REQUIRE(rows.size() == sigmas.size());
        for (size_t i = 0; i < rows.size(); ++i) {
            counts[i] = static_cast<double>(rows[i].instructions);
            times[i] = std::min(times[i], rows[i].stats.wall_ms);
        }
    }
    REQUIRE(counts.front() >= 100);
    REQUIRE(counts.back() > counts.front() * 10); // a real spread
    const LinearFit fit = linear_least_squares(counts, times);
    CAPTURE(counts);
    CAPTURE(times);
    std::printf("[acceptance]   time-vs-count R^2 = %.4f (%.0f..%.0f instructions)\n", fit.r2,
                counts.front(), counts.back());
    REQUIRE(fit.r2 >= 0.95);
    report_pass(7, "time-vs-count linear fit R^2 >= 0.95 over 4 sigma points");
}

TEST_CASE("criterion 8: power-law fit recovery, noiseless and noisy") {
    const double alpha = 1.5;
    const double beta = tst::power_law_beta(1000, alpha);
    std::vector<RankProbSample> clean;
    for (int32_t i = 1; i <= 1000; ++i) {
        clean.push_back({i, beta * std::pow(static_cast<double>(i), -alpha)});
    }
    auto fit = fit_power_law(clean);
    REQUIRE(std::abs(fit.alpha - alpha) / alpha <= 0.005);
    REQUIRE(std::abs(fit.beta - beta) / beta <= 0.01);

    Rng rng(20250811);
    std::vector<RankProbSample> noisy;
    for (int32_t i = 1; i <= 1000; ++i) {
        const double noise = 0.9 + 0.2 * rng.next_double(); // +-10% multiplicative
        noisy.push_back({i, beta * std::pow(static_cast<double>(i), -alpha) * noise});
    }
    auto noisy_fit = fit_power_law(noisy);
    REQUIRE(std::abs(noisy_fit.alpha - alpha) / alpha <= 0.05);
    report_pass(8, "alpha/beta recovered within 0.5%/1% clean, 5% under noise");
}

TEST_CASE("criterion 9: serving latency model at 50% and 100% coverage") {
    std::vector<std::string> requests;
    std::vector<InstructionRecord> cached;
    for (int i = 0; i < 100; ++i) {
        const std::string hit = "cached " + std::to_string(i);
        requests.push_back(hit);
        requests.push_back("uncached " + std::to_string(i));
        cached.push_back({hit, {}, 1.0});
    }
    CacheStore store = build_store(cached);

    UpstreamConfig up;
    up.mode = UpstreamConfig::Mode::simulated;
    up.per_token_latency_ms = 10.0;
    up.startup_latency_ms = 0.0;
    up.response_tokens = 100; // 1 s service per miss

    LoadProfile profile;
    profile.rate_lambda = 0.05; // well below the 1/s service rate
    profile.duration_s = 200000.0 * 2; // ~20k requests, exact 50% mix over cycles
    profile.seed = 7;
    profile.requests = requests;

    auto metrics = run_virtual_loadgen(store, up, profile);
    REQUIRE(metrics.requests >= 10000);
    REQUIRE(metrics.hit_rate() == doctest::Approx(0.5).epsilon(0.005));
    const double tpot = metrics.mean_tpot_ms();
    CAPTURE(tpot);
    REQUIRE(tpot >= 4.5);
    REQUIRE(tpot <= 5.5);

    LoadProfile full = profile;
    full.requests.clear();
    for (const auto& rec : cached) full.requests.push_back(rec.instruction);
    auto full_metrics = run_virtual_loadgen(store, up, full);
    REQUIRE(full_metrics.hit_rate() == 1.0);
    REQUIRE(full_metrics.mean_tpot_ms() < 1.0);
    report_pass(9, "mean TPOT 5ms +-10% at half coverage; <1ms at full coverage");
}

TEST_CASE("criterion 10: Poisson arrival statistics") {
    const auto arrivals = poisson_schedule_n(10.0, 10000, 42);
    REQUIRE(arrivals.size() == 10000);
    std::vector<double> gaps;
    double prev = 0.0;
    for (double t : arrivals) {
        gaps.push_back(t - prev);
        prev = t;
    }
    double mean = 0.0;
    for (double g : gaps) mean += g;
    mean /= static_cast<double>(gaps.size());
    double var = 0.0;
    for (double g : gaps) var += (g - mean) * (g - mean);
    var /= static_cast<double>(gaps.size() - 1);
    const double cv = std::sqrt(var) / mean;

    CAPTURE(mean);
    CAPTURE(cv);
    REQUIRE(std::abs(mean - 0.100) / 0.100 <= 0.05);
    REQUIRE(cv >= 0.9);
    REQUIRE(cv <= 1.1);
    report_pass(10, "mean inter-arrival within 5% of 100ms, CV in [0.9, 1.1]");
}

TEST_CASE("criterion 11: end-to-end reruns are byte-identical") {
    tst::SyntheticCorpusConfig gcfg;
    gcfg.n_records = 2500;
    gcfg.vocab_words = 25;
    gcfg.zipf_alpha = 1.6;
    gcfg.max_words = 4;
    gcfg.seed = 31;
    auto records = tst::generate_corpus(gcfg);
    const std::string corpus = "/tmp/ic_acc11_corpus.ndjson";
    write_corpus_file(corpus, records);

    auto run = [&](const std::string& out_dir) {
        RunConfig cfg;
        cfg.corpus_path = corpus;
        cfg.out_dir = out_dir;
        cfg.seed = 42;
        cfg.sigma_ladder = {3.5, 5.0};
        cfg.max_len = 6;
        cfg.vocab_cap = 64;
        cfg.dedup_mode = "off";
        cfg.run_loadgen = true;
        cfg.lambda = 50.0;
        cfg.duration_s = 20.0;
        return end_to_end(cfg);
    };
    auto r1 = run("/tmp/ic_acc11_a");
    auto r2 = run("/tmp/ic_acc11_b");
    REQUIRE(r1.artifact_digests.size() == r2.artifact_digests.size());
    for (const auto& [name, digest] : r1.artifact_digests) {
        CAPTURE(name);
        REQUIRE(r2.artifact_digests.at(name) == digest);
    }
    fs::remove_all("/tmp/ic_acc11_a");
    fs::remove_all("/tmp/ic_acc11_b");
    std::remove(corpus.c_str());
    report_pass(11, "identical seed/config reproduce identical artifact digests");
}

TEST_CASE("criterion 12: drift degrades post-drift windows; stationary stays flat") {
    const size_t n = 24000;
    const size_t drift_at = 12000;
    tst::SyntheticCorpusConfig gcfg;
    gcfg.n_records = n;
    gcfg.vocab_words = 25;
    gcfg.zipf_alpha = 1.6;
    gcfg.max_words = 4;
    gcfg.seed = 1234;

    // build the cache from the pre-drift regime
    auto pre = tst::generate_corpus([&] {
        auto c = gcfg;
        c.n_records = drift_at;
        return c;
    }());
    SplitSpec spec;
    auto parts = split(pre, spec);
    NgramTrainConfig ncfg;
    ncfg.order = 2;
    ncfg.vocab_cap = 64;
    auto model = NgramModel::train(instructions_of(parts.train), ncfg);
    PrepopConfig pcfg;
    pcfg.sigma = 5.0;
    pcfg.max_len = 6;
    auto result = prepopulate(*model, pcfg);
    CacheStore store = build_store(result.instructions);

    // drifted stream: vocabulary window shifts by 20 words at the midpoint
    auto drifted = tst::generate_drift_stream(gcfg, drift_at, 20);
    auto windows = timeslice_eval(store, drifted, 6);
    REQUIRE(windows.size() == 6);
    double min_pre = 1.0, max_post = 0.0;
    for (int i = 0; i < 3; ++i) min_pre = std::min(min_pre, windows[i].hit_rate);
    for (int i = 3; i < 6; ++i) max_post = std::max(max_post, windows[i].hit_rate);
    CAPTURE(min_pre);
    CAPTURE(max_post);
    REQUIRE(min_pre > 0.10); // the cache does work before the drift
    REQUIRE(max_post < min_pre);

    // stationary control: windows stay within +-2pp of the overall mean
    auto stationary = tst::generate_corpus(gcfg);
    auto flat = timeslice_eval(store, stationary, 6);
    double total_hits = 0.0, total_n = 0.0;
    for (const auto& w : flat) {
        total_hits += static_cast<double>(w.hits);
        total_n += static_cast<double>(w.n);
    }
    const double overall = total_hits / total_n;
    for (const auto& w : flat) {
        CAPTURE(w.window);
        CAPTURE(w.hit_rate);
        REQUIRE(std::abs(w.hit_rate - overall) <= 0.02);
    }
    report_pass(12, "post-drift windows strictly below pre-drift; stationary flat");
}
