#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <set>

#include "instcache/digest.hpp"
#include "instcache/model_factory.hpp"
#include "instcache/ngram_model.hpp"
#include "instcache/prepopulate.hpp"
#include "oracles.hpp"

using namespace instcache;
namespace tst = instcache::testing;

namespace {

PrepopConfig basic_config(double sigma, int max_len, int min_len = 1) {
    PrepopConfig cfg;
    cfg.sigma = sigma;
    cfg.max_len = max_len;
    cfg.min_len = min_len;
    return cfg;
}

std::set<std::string> texts_of(const PrepopResult& r) {
    std::set<std::string> out;
    for (const auto& rec : r.instructions) out.insert(rec.instruction);
    return out;
}

} // namespace

TEST_CASE("uniform V=3, sigma=2.2, L=3: the worked example") {
    auto model = model_from_spec("uniform:v=3");

    // min_len=1 excludes the bare-eos empty instruction
    auto r1 = prepopulate(*model, basic_config(2.2, 3, 1));
    CHECK(texts_of(r1) == std::set<std::string>{"a", "b"});
    for (const auto& rec : r1.instructions) {
        CHECK(rec.nll == doctest::Approx(2 * std::log(3.0)).epsilon(1e-12));
    }

    auto r0 = prepopulate(*model, basic_config(2.2, 3, 0));
    CHECK(texts_of(r0) == std::set<std::string>{"", "a", "b"});
    CHECK(r0.instructions.front().nll == doctest::Approx(std::log(3.0)).epsilon(1e-12));
}

TEST_CASE("sigma below the cheapest completion yields the empty set") {
    auto model = model_from_spec("uniform:v=3");
    auto r = prepopulate(*model, basic_config(1.0, 3, 0)); // ln 3 > 1
    CHECK(r.instructions.empty());
}

TEST_CASE("large sigma, L=2: every 1-token instruction appears") {
    auto model = model_from_spec("uniform:v=3");
    auto r = prepopulate(*model, basic_config(50.0, 2, 0));
    // paths: "", "a", "b" — content length capped at 1
    CHECK(texts_of(r) == std::set<std::string>{"", "a", "b"});
}

TEST_CASE("output equals brute-force enumeration across a model grid") {
    std::vector<std::string> specs{
        "uniform:v=2",  "uniform:v=5",          "uniform:v=10",
        "powerlaw:v=5,alpha=0.7", "powerlaw:v=10,alpha=1.3", "powerlaw:v=10,alpha=2.0,eos_rank=3",
    };
    for (const auto& spec : specs) {
        for (double sigma : {1.0, 3.0, 6.0}) {
            for (int max_len : {2, 4}) {
                CAPTURE(spec);
                CAPTURE(sigma);
                CAPTURE(max_len);
                auto model = model_from_spec(spec);
                auto got = prepopulate(*model, basic_config(sigma, max_len));
                auto want = tst::brute_force_enumerate(*model, sigma, max_len, 1);
                CHECK(tst::same_instruction_set(got.instructions, want));
            }
        }
    }
}

TEST_CASE("oracle equality holds for a toy n-gram too") {
    const std::vector<std::string> corpus{"how to bake", "how to code", "what is this",
                                          "how to bake bread"};
    NgramTrainConfig ncfg;
    ncfg.order = 2;
    for (double alpha : {0.0, 0.05}) {
        ncfg.smoothing_alpha = alpha;
        auto model = NgramModel::train(corpus, ncfg);
        for (double sigma : {2.0, 5.0, 9.0}) {
            CAPTURE(alpha);
            CAPTURE(sigma);
            auto got = prepopulate(*model, basic_config(sigma, 4));
            auto want = tst::brute_force_enumerate(*model, sigma, 4, 1);
            CHECK(tst::same_instruction_set(got.instructions, want));
        }
    }
}

TEST_CASE("sigma monotonicity: results are nested") {
    auto model = model_from_spec("powerlaw:v=8,alpha=1.0");
    auto small = texts_of(prepopulate(*model, basic_config(3.0, 4)));
    auto large = texts_of(prepopulate(*model, basic_config(5.0, 4)));
    CHECK(small.size() <= large.size());
    for (const auto& s : small) CHECK(large.count(s) == 1);
}

TEST_CASE("recorded NLL is reproducible from the path within 1e-9") {
    auto model = model_from_spec("powerlaw:v=6,alpha=1.1");
    auto r = prepopulate(*model, basic_config(6.0, 4));
    REQUIRE(!r.instructions.empty());
    for (const auto& rec : r.instructions) {
        double nll = 0.0;
        StateId s = model->root_state();
        std::vector<StateId> to_release;
        for (TokenId t : rec.tokens) {
            nll -= std::log(model->token_prob(s, t));
            if (t != model->spec().eos_id) {
                s = model->extend(s, t);
                to_release.push_back(s);
            }
        }
        CHECK(std::abs(nll - rec.nll) < 1e-9);
        for (auto it = to_release.rbegin(); it != to_release.rend(); ++it) model->release(*it);
    }
}

TEST_CASE("state hygiene: only the root survives a search") {
    auto model = model_from_spec("powerlaw:v=10,alpha=0.9");
    auto r = prepopulate(*model, basic_config(5.0, 4));
    CHECK(r.instructions.size() > 0);
    CHECK(model->state_stats().live_states == 1); // root only

    // a second search on the same handle also cleans up
    prepopulate(*model, basic_config(4.0, 3));
    CHECK(model->state_stats().live_states == 1);
}

TEST_CASE("DFS high-water retained states stay below BFS on the same tree") {
    auto dfs_model = model_from_spec("uniform:v=10");
    auto bfs_model = model_from_spec("uniform:v=10");
    PrepopConfig cfg = basic_config(100.0, 4); // wide open: full V-ary tree
    cfg.order = TraversalOrder::depth_first;
    auto dfs = prepopulate(*dfs_model, cfg);
    cfg.order = TraversalOrder::breadth_first;
    auto bfs = prepopulate(*bfs_model, cfg);

    CHECK(tst::same_instruction_set(dfs.instructions, bfs.instructions));
    CHECK(dfs.stats.high_water_states < bfs.stats.high_water_states);
    CHECK(dfs.stats.high_water_bytes < bfs.stats.high_water_bytes);
}

TEST_CASE("determinism: two runs serialize byte-identically") {
    const std::string p1 = "/tmp/ic_prepop_det1.ndjson";
    const std::string p2 = "/tmp/ic_prepop_det2.ndjson";
    for (int i = 0; i < 2; ++i) {
        auto model = model_from_spec("powerlaw:v=12,alpha=1.2");
        auto r = prepopulate(*model, basic_config(6.5, 4));
        PrepopFileMeta meta;
        meta.sigma = 6.5;
        meta.max_len = 4;
        meta.model_digest = model->digest();
        meta.count = r.instructions.size();
        write_prepop_file(i == 0 ? p1 : p2, meta, r.instructions);
    }
    CHECK(digest_file(p1) == digest_file(p2));
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("prepop file round-trip preserves records") {
    auto model = model_from_spec("uniform:v=4");
    auto r = prepopulate(*model, basic_config(4.0, 3));
    const std::string path = "/tmp/ic_prepop_rt.ndjson";
    PrepopFileMeta meta;
    meta.sigma = 4.0;
    meta.max_len = 3;
    meta.model_digest = model->digest();
    meta.count = r.instructions.size();
    meta.config_echo = {{"model", "uniform:v=4"}};
    write_prepop_file(path, meta, r.instructions);

    auto file = read_prepop_file(path);
    CHECK(file.meta.sigma == 4.0);
    CHECK(file.meta.max_len == 3);
    CHECK(file.meta.model_digest == model->digest());
    REQUIRE(file.records.size() == r.instructions.size());
    CHECK(tst::same_instruction_set(file.records, r.instructions));
    std::remove(path.c_str());
}

TEST_CASE("partitioned search equals single-worker output") {
    for (const char* spec : {"uniform:v=3", "powerlaw:v=8,alpha=1.0"}) {
        auto model = model_from_spec(spec);
        PrepopConfig cfg = basic_config(7.0, 4);
        auto want = prepopulate(*model, cfg);
        for (int workers : {1, 2, 3, 4}) {
            for (int split_depth : {0, 1, 2}) {
                CAPTURE(spec);
                CAPTURE(workers);
                CAPTURE(split_depth);
                auto m2 = model_from_spec(spec);
                PrepopConfig pc = cfg;
                pc.workers = workers;
                pc.split_depth = split_depth;
                auto got = prepopulate_partitioned(*m2, pc);
                CHECK(tst::same_instruction_set(got.instructions, want.instructions));
            }
        }
    }
}

TEST_CASE("frontier nodes are prefix-disjoint and assignments cover them") {
    auto model = model_from_spec("uniform:v=5");
    PrepopConfig cfg = basic_config(6.0, 4);
    cfg.workers = 3;
    cfg.split_depth = 2;
    auto part = partition_frontier(*model, cfg);
    REQUIRE(part.assignments.size() == 3);

    std::set<std::vector<TokenId>> seen;
    for (const auto& bin : part.assignments) {
        for (const auto& node : bin) {
            CHECK(node.path.size() == 2);
            CHECK(seen.insert(node.path).second); // pairwise distinct
        }
    }
    // shallow hits live strictly above the frontier
    for (const auto& hit : part.shallow_hits) {
        CHECK(hit.tokens.size() - 1 < 2); // content length below split depth
    }
}

TEST_CASE("config validation and error paths") {
    auto model = model_from_spec("uniform:v=3");
    CHECK_THROWS_AS(prepopulate(*model, basic_config(-1.0, 3)), InvalidArgument);
    CHECK_THROWS_AS(prepopulate(*model, basic_config(1.0, 0)), InvalidArgument);
    PrepopConfig bad = basic_config(1.0, 3);
    bad.min_len = 9;
    CHECK_THROWS_AS(prepopulate(*model, bad), InvalidArgument);
    PrepopConfig deep = basic_config(1.0, 3);
    deep.split_depth = 3;
    CHECK_THROWS_AS(partition_frontier(*model, deep), InvalidArgument);
}

TEST_CASE("live-state budget exhaustion surfaces as an error") {
    auto model = model_from_spec("uniform:v=10");
    PrepopConfig cfg = basic_config(100.0, 4);
    cfg.max_live_states = 3;
    CHECK_THROWS_WITH_AS(prepopulate(*model, cfg),
                         doctest::Contains("live-state budget"), Error);
    // partial state is cleaned up: root only
    CHECK(model->state_stats().live_states == 1);
}

TEST_CASE("profile: monotone work and linear wall time") {
    auto model = model_from_spec("powerlaw:v=40,alpha=1.0");
    std::vector<double> sigmas{4.0, 5.0, 6.0, 7.0};
    PrepopConfig cfg = basic_config(0.0, 5);
    auto rows = profile_prepopulation(*model, sigmas, cfg);
    REQUIRE(rows.size() == 4);
    for (size_t i = 1; i < rows.size(); ++i) {
        CHECK(rows[i].instructions >= rows[i - 1].instructions);
        CHECK(rows[i].stats.nodes_expanded >= rows[i - 1].stats.nodes_expanded);
    }
    CHECK_THROWS_AS(profile_prepopulation(*model, std::vector<double>{1.0}, cfg),
                    InvalidArgument);
}
