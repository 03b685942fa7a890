// Node throughput of the bounded search on synthetic and n-gram models.

#include <benchmark/benchmark.h>

#include "instcache/model_factory.hpp"
#include "instcache/ngram_model.hpp"
#include "instcache/prepopulate.hpp"

namespace {

using namespace instcache;

void BM_PrepopulatePowerLaw(benchmark::State& state) {
    auto model = model_from_spec("powerlaw:v=1000,alpha=1.3");
    PrepopConfig cfg;
    cfg.sigma = static_cast<double>(state.range(0));
    cfg.max_len = 4;
    int64_t nodes = 0;
    int64_t instructions = 0;
    for (auto _ : state) {
        auto result = prepopulate(*model, cfg);
        nodes += result.stats.nodes_expanded;
        instructions += static_cast<int64_t>(result.instructions.size());
    }
    state.SetItemsProcessed(nodes);
    state.counters["instructions"] =
        benchmark::Counter(static_cast<double>(instructions), benchmark::Counter::kAvgIterations);
}
BENCHMARK(BM_PrepopulatePowerLaw)->Arg(10)->Arg(12)->Arg(14);

void BM_PrepopulateNgram(benchmark::State& state) {
    std::vector<std::string> corpus;
    const char* stems[] = {"how to", "what is", "write a", "explain the"};
    const char* tails[] = {"cache", "model", "search", "poem", "plan", "recipe"};
    for (const char* s : stems) {
        for (const char* t : tails) {
            corpus.push_back(std::string(s) + " " + t);
            corpus.push_back(std::string(s) + " " + t + " now");
        }
    }
    NgramTrainConfig ncfg;
    ncfg.order = 2;
    auto model = NgramModel::train(corpus, ncfg);

    PrepopConfig cfg;
    cfg.sigma = static_cast<double>(state.range(0));
    cfg.max_len = 6;
    int64_t nodes = 0;
    for (auto _ : state) {
        auto result = prepopulate(*model, cfg);
        nodes += result.stats.nodes_expanded;
    }
    state.SetItemsProcessed(nodes);
}
BENCHMARK(BM_PrepopulateNgram)->Arg(6)->Arg(9);

} // namespace
