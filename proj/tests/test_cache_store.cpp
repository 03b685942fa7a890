#include <doctest.h>

#include <cstdio>
#include <thread>

#include "instcache/cache_store.hpp"
#include "instcache/digest.hpp"
#include "instcache/responder.hpp"
#include "oracles.hpp"

using namespace instcache;

namespace {

InstructionRecord rec(std::string text, double nll) {
    InstructionRecord r;
    r.instruction = std::move(text);
    r.tokens = {2, 1};
    r.nll = nll;
    return r;
}

} // namespace

TEST_CASE("bulk load: one entry per instruction with a template responder") {
    CacheStore store;
    TemplateResponder responder;
    std::vector<InstructionRecord> records{rec("what is aigc?", 3.0), rec("teach me french", 4.0),
                                           rec("explain quantum computing", 5.0)};
    auto report = store.bulk_load(records, responder);
    CHECK(report.loaded == 3);
    CHECK(store.size() == 3);
    const CacheEntry* e = store.lookup("what is aigc?");
    REQUIRE(e != nullptr);
    CHECK(e->response == "echo:what is aigc?");
    CHECK(e->response_token_count > 0);
}

TEST_CASE("case-variant queries hit the same entry") {
    CacheStore store;
    TemplateResponder responder;
    std::vector<InstructionRecord> records{rec("what is aigc?", 3.0)};
    store.bulk_load(records, responder);
    // stored response comes back verbatim regardless of query casing
    const CacheEntry* hit = store.lookup("What is AIGC?");
    REQUIRE(hit != nullptr);
    CHECK(hit->response == "echo:what is aigc?");
    CHECK(store.lookup("  what is aigc?  ") != nullptr); // trim on
    CHECK(store.lookup("what is aigc") == nullptr);      // different text is a miss
}

TEST_CASE("normalization collisions keep the lowest NLL") {
    CacheStore store;
    TemplateResponder responder;
    std::vector<InstructionRecord> records{rec("Hello World", 5.0), rec("hello world", 2.0),
                                           rec("HELLO WORLD", 9.0)};
    auto report = store.bulk_load(records, responder);
    CHECK(store.size() == 1);
    CHECK(report.collisions == 2);
    const CacheEntry* e = store.lookup("hello world");
    REQUIRE(e != nullptr);
    CHECK(e->nll == 2.0);
    CHECK(e->instruction == "hello world"); // the winning record's casing
}

TEST_CASE("responder failure skips the entry and the load continues") {
    struct FlakyResponder : Responder {
        std::string respond(std::string_view instruction) override {
            if (instruction == "bad") throw Error("refused");
            return "ok";
        }
        std::string name() const override { return "flaky"; }
    };
    CacheStore store;
    FlakyResponder responder;
    std::vector<InstructionRecord> records{rec("good", 1.0), rec("bad", 2.0), rec("fine", 3.0)};
    auto report = store.bulk_load(records, responder);
    CHECK(store.size() == 2);
    CHECK(report.responder_failures == 1);
    REQUIRE(report.failed_instructions.size() == 1);
    CHECK(report.failed_instructions[0].find("bad") != std::string::npos);
}

TEST_CASE("corpus-echo responder replays corpus responses") {
    std::unordered_map<std::string, std::string> by_key{
        {"how to bake", "preheat the oven"},
        {"what is rust", "a systems language"},
    };
    CorpusEchoResponder responder(std::move(by_key));
    CHECK(responder.respond("How To Bake") == "preheat the oven");
    CHECK(responder.respond("unknown") == "echo:unknown");
}

TEST_CASE("stats conservation under concurrent lookups") {
    CacheStore store;
    TemplateResponder responder;
    std::vector<InstructionRecord> records{rec("alpha", 1.0), rec("beta", 2.0)};
    store.bulk_load(records, responder);
    store.reset_counters();

    auto hammer = [&](int n) {
        for (int i = 0; i < n; ++i) {
            store.lookup(i % 2 ? "alpha" : "no such thing");
        }
    };
    std::thread t1(hammer, 5000), t2(hammer, 5000), t3(hammer, 5000);
    t1.join();
    t2.join();
    t3.join();

    const CacheStats st = store.stats();
    CHECK(st.lookups == 15000);
    CHECK(st.hits + st.misses == st.lookups);
    CHECK(st.hits == 7500);
    CHECK(st.entries == 2);
}

TEST_CASE("estimated bytes follow the documented accounting") {
    CacheStore store;
    TemplateResponder responder;
    std::vector<InstructionRecord> records{rec("ab", 1.0)}; // key "ab", response "echo:ab"
    store.bulk_load(records, responder);
    // key(2) + instruction(2) + response(7) + 64
    CHECK(store.estimated_bytes() == 2 + 2 + 7 + 64);
}

TEST_CASE("snapshot round-trip is byte-identical") {
    CacheStore store;
    store.set_sigma(4.5);
    TemplateResponder responder;
    std::vector<InstructionRecord> records{rec("Make a Plan", 2.5), rec("write code", 1.5),
                                           rec("a b c", 3.25)};
    store.bulk_load(records, responder);

    const std::string p1 = "/tmp/ic_store1.ndjson";
    const std::string p2 = "/tmp/ic_store2.ndjson";
    store.persist(p1);
    CacheStore loaded = CacheStore::load_snapshot(p1);
    loaded.persist(p2);
    CHECK(digest_file(p1) == digest_file(p2));

    CHECK(loaded.size() == store.size());
    CHECK(loaded.sigma() == 4.5);
    const CacheEntry* e = loaded.lookup("make a plan");
    REQUIRE(e != nullptr);
    CHECK(e->instruction == "Make a Plan");
    CHECK(e->nll == 2.5);
    // loaded stats start fresh
    CHECK(loaded.stats().lookups == 1);
    std::remove(p1.c_str());
    std::remove(p2.c_str());
}

TEST_CASE("empty store round-trips") {
    CacheStore store;
    const std::string path = "/tmp/ic_store_empty.ndjson";
    store.persist(path);
    CacheStore loaded = CacheStore::load_snapshot(path);
    CHECK(loaded.size() == 0);
    CHECK(loaded.lookup("anything") == nullptr);
    std::remove(path.c_str());
}

TEST_CASE("snapshot format errors are loud") {
    const std::string path = "/tmp/ic_store_bad.ndjson";
    {
        std::FILE* f = std::fopen(path.c_str(), "w");
        std::fputs("{\"format\":\"wrong\",\"version\":1,\"sigma\":0,\"count\":0}\n", f);
        std::fclose(f);
    }
    CHECK_THROWS_AS(CacheStore::load_snapshot(path), InvalidArgument);
    std::remove(path.c_str());
}

TEST_CASE("sigma-monotone containment of snapshot key sets") {
    // two stores built from nested instruction sets
    TemplateResponder responder;
    std::vector<InstructionRecord> small{rec("a", 1.0), rec("b", 2.0)};
    std::vector<InstructionRecord> large{rec("a", 1.0), rec("b", 2.0), rec("c", 3.0)};
    CacheStore s1, s2;
    s1.bulk_load(small, responder);
    s2.bulk_load(large, responder);
    for (const auto& [key, entry] : s1.entries()) {
        CHECK(s2.contains_key(key));
    }
}
