#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "instcache/analytics.hpp"
#include "instcache/model_factory.hpp"
#include "instcache/ngram_model.hpp"
#include "instcache/power_law_model.hpp"
#include "instcache/prepopulate.hpp"
#include "instcache/rng.hpp"
#include "oracles.hpp"

using namespace instcache;
namespace tst = instcache::testing;

TEST_CASE("nll of a sequence under the uniform model") {
    auto m = model_from_spec("uniform:v=3");
    // ["a", <eos>]: two uniform edges
    std::vector<TokenId> seq{2, m->spec().eos_id};
    CHECK(nll(*m, seq) == doctest::Approx(2 * std::log(3.0)).epsilon(1e-12));
    CHECK(m->state_stats().live_states == 1); // walk cleaned up

    // a deterministic chain assigns p=1 to every edge, so the NLL is 0
    auto chain = NgramModel::train(std::vector<std::string>{"x y"}, NgramTrainConfig{2, 0.0, 4});
    std::vector<TokenId> path{*chain->lookup_token("x"), *chain->lookup_token("y"),
                              chain->spec().eos_id};
    CHECK(nll(*chain, path) == doctest::Approx(0.0));
}

TEST_CASE("nll matches hand-computed count ratios on a toy n-gram") {
    const std::vector<std::string> corpus{"go the end", "go the end", "go a end"};
    auto m = NgramModel::train(corpus, NgramTrainConfig{2, 0.0, 16});
    // P(go|bos)=1, P(the|go)=2/3, P(end|the)=1, P(eos|end)=1
    std::vector<TokenId> seq{*m->lookup_token("go"), *m->lookup_token("the"),
                             *m->lookup_token("end"), m->spec().eos_id};
    CHECK(nll(*m, seq) == doctest::Approx(-std::log(2.0 / 3.0)).epsilon(1e-12));
}

TEST_CASE("nll sentinels and error paths") {
    auto m = model_from_spec("uniform:v=3");
    CHECK_THROWS_AS(nll(*m, std::vector<TokenId>{}), InvalidArgument);
    // eos mid-sequence is malformed
    CHECK_THROWS_AS(nll(*m, std::vector<TokenId>{1, 2}), InvalidArgument);
    // bos is never emitted: zero probability -> +inf
    CHECK(nll(*m, std::vector<TokenId>{0, 2}) == kInfNll);

    // zero-probability continuation without smoothing -> +inf
    auto ng = NgramModel::train(std::vector<std::string>{"a b"}, NgramTrainConfig{2, 0.0, 8});
    std::vector<TokenId> unseen{*ng->lookup_token("b"), *ng->lookup_token("a")};
    CHECK(nll(*ng, unseen) == kInfNll);
}

TEST_CASE("empirical cdf is a right-continuous step function") {
    NllDistribution d;
    d.samples = {5.0};
    CHECK(d.cdf(4.9) == 0.0);
    CHECK(d.cdf(5.0) == 1.0);

    d.samples = {1.0, 2.0, 3.0, 4.0};
    CHECK(d.cdf(2.5) == 0.5);
    CHECK(d.cdf(0.0) == 0.0);
    CHECK(d.cdf(100.0) == 1.0);
    CHECK(predict_hit_rate(d, 2.5) == 0.5);
    CHECK(predict_hit_rate(d, 0.5) == 0.0);
    CHECK(predict_hit_rate(d, 4.0) == 1.0); // weak inequality
}

TEST_CASE("cdf range is exactly {0, 1/n, ..., 1}") {
    NllDistribution d;
    d.samples = {1.0, 1.0, 2.0, 7.0};
    for (double x : {0.5, 1.0, 1.5, 2.0, 5.0, 7.0, 9.0}) {
        const double c = d.cdf(x);
        CHECK(c * 4 == doctest::Approx(std::round(c * 4)));
    }
}

TEST_CASE("empirical_cdf over a model's own training corpus sits low") {
    std::vector<std::string> corpus;
    for (int i = 0; i < 50; ++i) corpus.push_back(i % 2 ? "how to code" : "what is this");
    auto m = NgramModel::train(corpus, NgramTrainConfig{2, 0.01, 64});
    auto dist = empirical_cdf(*m, corpus, 8);
    // per-instruction NLLs computed directly agree with the sorted samples
    const double direct = instruction_nll(*m, "how to code", 8);
    CHECK(dist.cdf(direct + 1e-9) >= 0.5);
    CHECK(std::isfinite(dist.samples.front()));

    // untokenizable (oov -> unk) instructions are never predicted hits
    CHECK(instruction_nll(*m, "completely novel words", 8) == kInfNll);
    // over-length instructions cannot be cached either
    std::string longline = "how";
    for (int i = 0; i < 20; ++i) longline += " code";
    CHECK(instruction_nll(*m, longline, 8) == kInfNll);
}

TEST_CASE("fit_power_law recovers exact generator parameters") {
    const double alpha = 1.5;
    const double beta = tst::power_law_beta(1000, alpha);
    std::vector<RankProbSample> samples;
    for (int32_t i = 1; i <= 1000; ++i) {
        samples.push_back({i, beta * std::pow(double(i), -alpha)});
    }
    auto fit = fit_power_law(samples);
    CHECK(fit.alpha == doctest::Approx(alpha).epsilon(1e-6));
    CHECK(fit.beta == doctest::Approx(beta).epsilon(1e-6));
    CHECK(fit.fit_r2 == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(fit.ranks_used == 1000);
}

TEST_CASE("fit on uniform probabilities gives alpha near zero") {
    std::vector<RankProbSample> samples;
    for (int32_t i = 1; i <= 100; ++i) samples.push_back({i, 0.01});
    auto fit = fit_power_law(samples);
    CHECK(std::abs(fit.alpha) < 1e-9);
    CHECK(fit.beta == doctest::Approx(0.01));
}

TEST_CASE("fit tolerates 10% multiplicative noise") {
    const double alpha = 1.5;
    const double beta = tst::power_law_beta(1000, alpha);
    Rng rng(20240811);
    std::vector<RankProbSample> samples;
    for (int32_t i = 1; i <= 1000; ++i) {
        const double noise = 0.9 + 0.2 * rng.next_double();
        samples.push_back({i, beta * std::pow(double(i), -alpha) * noise});
    }
    auto fit = fit_power_law(samples);
    CHECK(std::abs(fit.alpha - alpha) / alpha < 0.05);
}

TEST_CASE("fit rejects degenerate samples") {
    std::vector<RankProbSample> one_rank{{1, 0.5}, {1, 0.4}};
    CHECK_THROWS_AS(fit_power_law(one_rank), InvalidArgument);
}

TEST_CASE("collect_rank_probs averages to the synthetic distribution") {
    auto m = model_from_spec("powerlaw:v=50,alpha=1.3");
    std::vector<std::string> instructions{"a b", "c a", "b"};
    auto samples = collect_rank_probs(*m, instructions);
    REQUIRE(!samples.empty());
    auto fit = fit_power_law(samples);
    CHECK(fit.alpha == doctest::Approx(1.3).epsilon(1e-3));
    CHECK(m->state_stats().live_states == 1);
}

TEST_CASE("estimate_count: simplified form closed values") {
    // e^5 * 5^2 / 2!
    auto est = estimate_count(1.0, 1.0, 5.0, 3);
    CHECK(est.n_simplified == doctest::Approx(1855.1644887822074).epsilon(1e-12));
    // sigma=0, L=1 -> 1 by the 0^0 = 1 convention
    CHECK(estimate_count(1.0, 1.0, 0.0, 1).n_simplified == doctest::Approx(1.0));
    // sigma=0, L>1 -> 0
    CHECK(estimate_count(1.0, 1.0, 0.0, 3).n_simplified == doctest::Approx(0.0));
    // beta=1 collapses the full form onto the simplified one
    for (int L : {1, 2, 3, 5}) {
        auto e = estimate_count(1.3, 1.0, 7.0, L);
        CHECK(e.n_full == doctest::Approx(e.n_simplified).epsilon(1e-9));
    }
}

TEST_CASE("estimate_count: L=1 closed form and clamping") {
    const double beta = 0.5;
    auto est = estimate_count(2.0, beta, 4.0, 1);
    CHECK(est.n_full == doctest::Approx(std::exp(4.0 / 2.0) * std::pow(beta, 0.5)).epsilon(1e-12));
    // (sigma + ln beta) <= 0 collapses the full form to zero
    auto zero = estimate_count(1.0, 0.2, 1.0, 3); // ln 0.2 = -1.609
    CHECK(zero.n_full == 0.0);
    CHECK(zero.n_simplified > 0.0);
}

TEST_CASE("estimate_count input validation") {
    CHECK_THROWS_AS(estimate_count(0.0, 1.0, 1.0, 2), InvalidArgument);
    CHECK_THROWS_AS(estimate_count(1.0, 0.0, 1.0, 2), InvalidArgument);
    CHECK_THROWS_AS(estimate_count(1.0, 1.0, -1.0, 2), InvalidArgument);
    CHECK_THROWS_AS(estimate_count(1.0, 1.0, 1.0, 0), InvalidArgument);
}

TEST_CASE("count estimates are monotone in sigma and decreasing in alpha") {
    const double beta = tst::power_law_beta(1000, 1.3);
    double prev_full = 0.0, prev_simpl = 0.0;
    for (double sigma : {6.0, 8.0, 10.0, 12.0}) {
        auto est = estimate_count(1.3, beta, sigma, 4);
        CHECK(est.n_full >= prev_full);
        CHECK(est.n_simplified >= prev_simpl);
        prev_full = est.n_full;
        prev_simpl = est.n_simplified;
    }
    // decreasing in alpha in the sigma/alpha > L-1 regime
    CHECK(estimate_count(1.1, 1.0, 10.0, 3).n_simplified >
          estimate_count(1.5, 1.0, 10.0, 3).n_simplified);
}

TEST_CASE("full-form estimate against exact enumeration: alpha=1.2, V=1000, L=4") {
    // frozen oracle counts for sigma in {6, 8, 10}, eos at rank 1
    const int64_t c6 = tst::power_law_exact_count(1000, 1.2, 6.0, 4);
    const int64_t c8 = tst::power_law_exact_count(1000, 1.2, 8.0, 4);
    const int64_t c10 = tst::power_law_exact_count(1000, 1.2, 10.0, 4);
    CHECK(c6 == 11);
    CHECK(c8 == 94);
    CHECK(c10 == 694);

    const double beta = tst::power_law_beta(1000, 1.2);
    CHECK(beta == doctest::Approx(0.23064).epsilon(1e-4));
    // where the count is large enough for the closed form's approximations,
    // the log-ratio sits in the calibration band; the trend tightens with sigma
    auto est10 = estimate_count(1.2, beta, 10.0, 4);
    const double ratio10 = est10.ln_full / std::log(double(c10));
    CHECK(ratio10 > 0.7);
    CHECK(ratio10 < 1.3);
}

TEST_CASE("oracle count equals model-based enumeration on small spaces") {
    // ties the closed-form counting oracle to the model-based brute force
    for (double alpha : {0.8, 1.4}) {
        for (int32_t eos_rank : {1, 2}) {
            auto cfgspec = PowerLawModelConfig{};
            cfgspec.vocab_size = 8;
            cfgspec.alpha = alpha;
            cfgspec.eos_rank = eos_rank;
            PowerLawModel m(cfgspec);
            for (double sigma : {3.0, 6.0}) {
                CAPTURE(alpha);
                CAPTURE(eos_rank);
                CAPTURE(sigma);
                auto brute = tst::brute_force_enumerate(m, sigma, 4, 1);
                const int64_t counted =
                    tst::power_law_exact_count(8, alpha, sigma, 4, eos_rank, 1);
                CHECK(counted == static_cast<int64_t>(brute.size()));
            }
        }
    }
}

TEST_CASE("prepopulate paths re-evaluate to their recorded NLL via nll()") {
    auto m = model_from_spec("powerlaw:v=9,alpha=1.0");
    PrepopConfig cfg;
    cfg.sigma = 5.5;
    cfg.max_len = 4;
    auto r = prepopulate(*m, cfg);
    REQUIRE(!r.instructions.empty());
    for (const auto& rec : r.instructions) {
        CHECK(std::abs(nll(*m, rec.tokens) - rec.nll) < 1e-9);
    }
}

TEST_CASE("predict_report rows carry the schema quantities") {
    NllDistribution d;
    d.samples = {1.0, 2.0, 3.0, 4.0};
    PowerLawFit fit;
    fit.alpha = 1.2;
    fit.beta = 0.4;
    std::vector<double> sigmas{1.5, 2.5, 3.5};
    auto rows = predict_report(d, sigmas, fit, 3);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].predicted_hit_rate == 0.25);
    CHECK(rows[1].predicted_hit_rate == 0.5);
    // predicted count nondecreasing in sigma
    CHECK(rows[1].predicted_count_simplified >= rows[0].predicted_count_simplified);
    CHECK(rows[2].predicted_count_full >= rows[1].predicted_count_full);
}

TEST_CASE("predict report file: pinned NDJSON schema plus CSV mirror") {
    NllDistribution d;
    d.samples = {1.0, 2.0, 3.0, 4.0};
    PowerLawFit fit;
    fit.alpha = 1.2;
    fit.beta = 0.4;
    auto rows = predict_report(d, std::vector<double>{2.0, 3.0}, fit, 3);
    const std::string path = "/tmp/ic_predict.ndjson";
    write_predict_report(path, rows, {{"model", "test"}}, true);

    std::ifstream in(path);
    std::string header, row1;
    std::getline(in, header);
    std::getline(in, row1);
    CHECK(header.find("\"format\":\"instcache-predict\"") != std::string::npos);
    for (const char* key : {"\"sigma\"", "\"predicted_hit_rate\"", "\"predicted_count_full\"",
                            "\"predicted_count_simplified\""}) {
        CHECK(row1.find(key) != std::string::npos);
    }
    std::ifstream csv("/tmp/ic_predict.csv");
    std::string csv_header;
    std::getline(csv, csv_header);
    CHECK(csv_header ==
          "sigma,predicted_hit_rate,predicted_count_full,predicted_count_simplified");
    std::remove(path.c_str());
    std::remove("/tmp/ic_predict.csv");
}

TEST_CASE("linear_least_squares on exact line") {
    std::vector<double> xs{1, 2, 3, 4};
    std::vector<double> ys{3, 5, 7, 9};
    auto fit = linear_least_squares(xs, ys);
    CHECK(fit.slope == doctest::Approx(2.0));
    CHECK(fit.intercept == doctest::Approx(1.0));
    CHECK(fit.r2 == doctest::Approx(1.0));
}
