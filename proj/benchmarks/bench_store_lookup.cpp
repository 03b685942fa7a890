// Lookup latency across store sizes: the hash-table path should stay flat
// as the entry count grows.

#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "instcache/cache_store.hpp"
#include "instcache/responder.hpp"

namespace {

using instcache::CacheStore;
using instcache::InstructionRecord;

CacheStore make_store(int64_t entries) {
    std::vector<InstructionRecord> records;
    records.reserve(static_cast<size_t>(entries));
    for (int64_t i = 0; i < entries; ++i) {
        InstructionRecord r;
        r.instruction = "how to do thing number " + std::to_string(i);
        r.nll = static_cast<double>(i);
        records.push_back(std::move(r));
    }
    instcache::TemplateResponder responder;
    CacheStore store;
    store.bulk_load(records, responder);
    return store;
}

void BM_LookupHit(benchmark::State& state) {
    const CacheStore store = make_store(state.range(0));
    int64_t i = 0;
    for (auto _ : state) {
        const std::string query =
            "How To Do Thing Number " + std::to_string(i++ % state.range(0));
        benchmark::DoNotOptimize(store.lookup(query));
    }
    state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_LookupHit)->Arg(1000)->Arg(10000)->Arg(100000);

void BM_LookupMiss(benchmark::State& state) {
    const CacheStore store = make_store(state.range(0));
    int64_t i = 0;
    for (auto _ : state) {
        const std::string query = "completely absent query " + std::to_string(i++);
        benchmark::DoNotOptimize(store.lookup(query));
    }
    state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_LookupMiss)->Arg(1000)->Arg(100000);

void BM_Normalize(benchmark::State& state) {
    const std::string input = "  Explain The Difference Between TCP And UDP  ";
    for (auto _ : state) {
        benchmark::DoNotOptimize(instcache::normalize(input));
    }
}
BENCHMARK(BM_Normalize);

} // namespace
