#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "instcache/cache_store.hpp"

namespace instcache {

struct UpstreamConfig {
    enum class Mode { http, simulated };
    Mode mode = Mode::simulated;

    // http mode
    std::string host = "127.0.0.1";
    int port = 0;
    std::string path = "/v1/complete";
    int timeout_ms = 30000;

    // simulated mode: single FIFO worker, service = startup + tokens * per_token
    double per_token_latency_ms = 10.0;
    double startup_latency_ms = 0.0;
    int response_tokens = 100;

    void validate() const;
    // "sim:per_token=10,startup=0,tokens=100" or "http:host:port[/path]"
    static UpstreamConfig parse(const std::string& spec);
};

struct ServingMetrics {
    int64_t requests = 0;
    int64_t hits = 0;
    int64_t misses = 0;
    int64_t errors = 0;
    std::vector<double> latencies_ms; // completed requests, arrival order
    std::vector<double> tpot_ms;      // latency / max(1, output tokens)
    double duration_s = 0.0;

    double hit_rate() const;
    double mean_tpot_ms() const;
    double median_tpot_ms() const;
    double p95_tpot_ms() const;
    double mean_latency_ms() const;
    double throughput_rps() const;
};

struct LoadProfile {
    double rate_lambda = 10.0; // requests / second
    double duration_s = 10.0;
    uint64_t seed = 42;
    std::vector<std::string> requests; // cycled in order

    void validate() const;
};

// Exponential(lambda) inter-arrival instants in seconds, deterministic for a
// given seed.
std::vector<double> poisson_schedule(double lambda, double duration_s, uint64_t seed);
std::vector<double> poisson_schedule_n(double lambda, size_t n, uint64_t seed);

struct VirtualLoadConfig {
    double hit_latency_ms = 0.05; // modeled O(1) lookup cost
};

// Deterministic virtual-clock run: lookups hit the real store, misses queue
// on a simulated FIFO upstream; no wall time passes. Identical seed and
// schedule give an identical latency ledger.
ServingMetrics run_virtual_loadgen(const CacheStore& store, const UpstreamConfig& upstream,
                                   const LoadProfile& profile, const VirtualLoadConfig& vcfg = {});

struct ServiceConfig {
    std::string bind_host = "127.0.0.1";
    int port = 0; // 0 picks an ephemeral port
};

// Cache-first HTTP proxy:
//   POST /v1/complete {"instruction": s}
//     -> {"response": s, "cached": bool, "latency_ms": f, "output_tokens": n}
//   GET /v1/metrics -> aggregate JSON, GET /v1/health -> 200
// A hit never contacts the upstream; misses forward and count errors on
// timeout or transport failure (504-class).
class CacheService {
public:
    CacheService(const CacheStore& store, UpstreamConfig upstream, ServiceConfig cfg = {});
    ~CacheService();

    CacheService(const CacheService&) = delete;
    CacheService& operator=(const CacheService&) = delete;

    void start(); // throws on bind failure
    void stop();
    int port() const;

    ServingMetrics metrics_snapshot() const;
    int64_t upstream_calls() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Wall-clock load generator against a live service.
ServingMetrics run_http_loadgen(const std::string& host, int port, const LoadProfile& profile,
                                int concurrency = 8, const std::string& path = "/v1/complete");

struct MetricsRow {
    double lambda = 0.0;
    int64_t requests = 0;
    int64_t hits = 0;
    int64_t misses = 0;
    int64_t errors = 0;
    double hit_rate = 0.0;
    double mean_tpot_ms = 0.0;
    double median_tpot_ms = 0.0;
    double p95_tpot_ms = 0.0;
    double mean_latency_ms = 0.0;
    double throughput_rps = 0.0;
};

MetricsRow metrics_row(double lambda, const ServingMetrics& metrics);

void write_metrics_report(const std::string& path, std::span<const MetricsRow> rows,
                          const std::map<std::string, std::string>& config_echo,
                          bool csv_mirror = false);

} // namespace instcache
