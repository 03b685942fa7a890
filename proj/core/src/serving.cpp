#include "instcache/serving.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <mutex>
#include <thread>

#include <httplib.h>

#include "instcache/rng.hpp"
#include "instcache/text.hpp"
#include "json_util.hpp"

namespace instcache {

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::string simulated_response(int tokens) {
    std::string out;
    out.reserve(static_cast<size_t>(tokens) * 4);
    for (int i = 0; i < tokens; ++i) {
        if (i) out.push_back(' ');
        out += "sim";
    }
    return out;
}

double percentile(std::vector<double> v, double p) {
    if (v.empty()) return 0.0;
    std::sort(v.begin(), v.end());
    const double idx = p * static_cast<double>(v.size() - 1);
    const size_t lo = static_cast<size_t>(idx);
    const size_t hi = std::min(v.size() - 1, lo + 1);
    const double frac = idx - static_cast<double>(lo);
    return v[lo] + (v[hi] - v[lo]) * frac;
}

double mean(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

} // namespace

void UpstreamConfig::validate() const {
    if (per_token_latency_ms < 0.0 || startup_latency_ms < 0.0) {
        throw InvalidArgument("upstream latencies must be >= 0");
    }
    if (timeout_ms <= 0) throw InvalidArgument("upstream timeout must be > 0");
    if (mode == Mode::http && port <= 0) throw InvalidArgument("http upstream needs a port");
    if (mode == Mode::simulated && response_tokens < 1) {
        throw InvalidArgument("simulated upstream needs response_tokens >= 1");
    }
}

UpstreamConfig UpstreamConfig::parse(const std::string& spec) {
    UpstreamConfig cfg;
    const size_t colon = spec.find(':');
    const std::string kind = spec.substr(0, colon);
    const std::string arg = colon == std::string::npos ? "" : spec.substr(colon + 1);
    if (kind == "sim" || kind == "simulated") {
        cfg.mode = Mode::simulated;
        size_t pos = 0;
        while (pos < arg.size()) {
            size_t comma = arg.find(',', pos);
            if (comma == std::string::npos) comma = arg.size();
            const std::string kv = arg.substr(pos, comma - pos);
            const size_t eq = kv.find('=');
            if (eq == std::string::npos) throw InvalidArgument("bad upstream option: " + kv);
            const std::string key = kv.substr(0, eq);
            const std::string val = kv.substr(eq + 1);
            if (key == "per_token") {
                cfg.per_token_latency_ms = std::stod(val);
            } else if (key == "startup") {
                cfg.startup_latency_ms = std::stod(val);
            } else if (key == "tokens") {
                cfg.response_tokens = std::stoi(val);
            } else if (key == "timeout_ms") {
                cfg.timeout_ms = std::stoi(val);
            } else {
                throw InvalidArgument("unknown simulated upstream option: " + key);
            }
            pos = comma + 1;
        }
    } else if (kind == "http") {
        cfg.mode = Mode::http;
        const size_t port_sep = arg.find(':');
        if (port_sep == std::string::npos) {
            throw InvalidArgument("http upstream spec must be http:host:port[/path]");
        }
        cfg.host = arg.substr(0, port_sep);
        std::string rest = arg.substr(port_sep + 1);
        const size_t slash = rest.find('/');
        if (slash != std::string::npos) {
            cfg.path = rest.substr(slash);
            rest = rest.substr(0, slash);
        }
        cfg.port = std::stoi(rest);
    } else {
        throw InvalidArgument("unknown upstream kind: " + kind);
    }
    cfg.validate();
    return cfg;
}

void LoadProfile::validate() const {
    if (!(rate_lambda > 0.0)) throw InvalidArgument("lambda must be > 0");
    if (!(duration_s > 0.0)) throw InvalidArgument("duration must be > 0");
    if (requests.empty()) throw InvalidArgument("load profile request source is empty");
}

double ServingMetrics::hit_rate() const {
    return requests > 0 ? static_cast<double>(hits) / static_cast<double>(requests) : 0.0;
}
double ServingMetrics::mean_tpot_ms() const { return mean(tpot_ms); }
double ServingMetrics::median_tpot_ms() const { return percentile(tpot_ms, 0.5); }
double ServingMetrics::p95_tpot_ms() const { return percentile(tpot_ms, 0.95); }
double ServingMetrics::mean_latency_ms() const { return mean(latencies_ms); }
double ServingMetrics::throughput_rps() const {
    return duration_s > 0.0 ? static_cast<double>(requests) / duration_s : 0.0;
}

std::vector<double> poisson_schedule(double lambda, double duration_s, uint64_t seed) {
    if (!(lambda > 0.0)) throw InvalidArgument("lambda must be > 0");
    Rng rng = Rng(seed).fork("poisson-arrivals");
    std::vector<double> arrivals;
    double t = 0.0;
    for (;;) {
        t += rng.next_exponential(lambda);
        if (t > duration_s) break;
        arrivals.push_back(t);
    }
    return arrivals;
}

std::vector<double> poisson_schedule_n(double lambda, size_t n, uint64_t seed) {
    if (!(lambda > 0.0)) throw InvalidArgument("lambda must be > 0");
    Rng rng = Rng(seed).fork("poisson-arrivals");
    std::vector<double> arrivals;
    arrivals.reserve(n);
    double t = 0.0;
    for (size_t i = 0; i < n; ++i) {
        t += rng.next_exponential(lambda);
        arrivals.push_back(t);
    }
    return arrivals;
}

ServingMetrics run_virtual_loadgen(const CacheStore& store, const UpstreamConfig& upstream,
                                   const LoadProfile& profile, const VirtualLoadConfig& vcfg) {
    profile.validate();
    upstream.validate();
    if (upstream.mode != UpstreamConfig::Mode::simulated) {
        throw InvalidArgument("virtual loadgen requires a simulated upstream");
    }

    const std::vector<double> arrivals =
        poisson_schedule(profile.rate_lambda, profile.duration_s, profile.seed);

    ServingMetrics metrics;
    metrics.duration_s = profile.duration_s;
    double busy_until_ms = 0.0;
    const double service_ms = upstream.startup_latency_ms +
                              upstream.per_token_latency_ms *
                                  static_cast<double>(upstream.response_tokens);

    for (size_t i = 0; i < arrivals.size(); ++i) {
        const double arrive_ms = arrivals[i] * 1000.0;
        const std::string& instruction = profile.requests[i % profile.requests.size()];
        ++metrics.requests;

        const CacheEntry* entry = store.lookup(instruction);
        double latency_ms;
        int64_t tokens;
        if (entry != nullptr) {
            ++metrics.hits;
            latency_ms = vcfg.hit_latency_ms;
            tokens = entry->response_token_count;
        } else {
            ++metrics.misses;
            const double start = std::max(arrive_ms, busy_until_ms);
            busy_until_ms = start + service_ms;
            latency_ms = busy_until_ms - arrive_ms;
            tokens = upstream.response_tokens;
        }
        metrics.latencies_ms.push_back(latency_ms);
        metrics.tpot_ms.push_back(latency_ms / static_cast<double>(std::max<int64_t>(1, tokens)));
    }
    return metrics;
}

// ---------------------------------------------------------------------------
// Live HTTP service
// ---------------------------------------------------------------------------

struct CacheService::Impl {
    const CacheStore& store;
    UpstreamConfig upstream;
    ServiceConfig cfg;

    httplib::Server server;
    std::thread listener;
    int bound_port = 0;

    std::atomic<int64_t> requests{0};
    std::atomic<int64_t> hits{0};
    std::atomic<int64_t> misses{0};
    std::atomic<int64_t> errors{0};
    std::atomic<int64_t> upstream_calls{0};

    mutable std::mutex ledger_mu;
    std::vector<double> latencies_ms;
    std::vector<double> tpot_ms;
    static constexpr size_t kLedgerCap = 1 << 20;

    // wall-clock FIFO worker for the simulated upstream
    std::mutex sim_mu;
    Clock::time_point sim_busy_until = Clock::time_point::min();

    Impl(const CacheStore& s, UpstreamConfig up, ServiceConfig c)
        : store(s), upstream(std::move(up)), cfg(std::move(c)) {}

    void record(double latency_ms, int64_t tokens) {
        std::lock_guard<std::mutex> lock(ledger_mu);
        if (latencies_ms.size() < kLedgerCap) {
            latencies_ms.push_back(latency_ms);
            tpot_ms.push_back(latency_ms / static_cast<double>(std::max<int64_t>(1, tokens)));
        }
    }

    struct UpstreamReply {
        bool ok = false;
        std::string response;
        int64_t output_tokens = 0;
    };

    UpstreamReply forward(const std::string& instruction) {
        upstream_calls.fetch_add(1);
        UpstreamReply reply;
        if (upstream.mode == UpstreamConfig::Mode::simulated) {
            const auto service = std::chrono::duration<double, std::milli>(
                upstream.startup_latency_ms +
                upstream.per_token_latency_ms * static_cast<double>(upstream.response_tokens));
            Clock::time_point completion;
            {
                std::lock_guard<std::mutex> lock(sim_mu);
                const auto start = std::max(Clock::now(), sim_busy_until);
                completion = start + std::chrono::duration_cast<Clock::duration>(service);
                sim_busy_until = completion;
            }
            std::this_thread::sleep_until(completion);
            reply.ok = true;
            reply.response = simulated_response(upstream.response_tokens);
            reply.output_tokens = upstream.response_tokens;
            return reply;
        }

        httplib::Client client(upstream.host, upstream.port);
        client.set_connection_timeout(0, upstream.timeout_ms * 1000);
        client.set_read_timeout(upstream.timeout_ms / 1000, (upstream.timeout_ms % 1000) * 1000);
        jsonio::json body;
        body["instruction"] = instruction;
        auto res = client.Post(upstream.path, body.dump(), "application/json");
        if (!res || res->status != 200) return reply;
        auto j = jsonio::json::parse(res->body, nullptr, false);
        if (j.is_discarded() || !j.contains("response")) return reply;
        reply.ok = true;
        reply.response = j["response"].get<std::string>();
        reply.output_tokens = jsonio::get_or<int64_t>(
            j, "output_tokens", static_cast<int64_t>(text::word_count(reply.response)));
        return reply;
    }

    void handle_complete(const httplib::Request& req, httplib::Response& res) {
        const auto t0 = Clock::now();
        auto j = jsonio::json::parse(req.body, nullptr, false);
        if (j.is_discarded() || !j.contains("instruction") || !j["instruction"].is_string()) {
            res.status = 400;
            res.set_content("{\"error\":\"body must be {\\\"instruction\\\": string}\"}",
                            "application/json");
            return;
        }
        const std::string instruction = j["instruction"].get<std::string>();
        requests.fetch_add(1);

        jsonio::json out;
        const CacheEntry* entry = store.lookup(instruction);
        if (entry != nullptr) {
            hits.fetch_add(1);
            const double latency = ms_since(t0);
            out["response"] = entry->response;
            out["cached"] = true;
            out["latency_ms"] = latency;
            out["output_tokens"] = entry->response_token_count;
            record(latency, entry->response_token_count);
            res.set_content(out.dump(), "application/json");
            return;
        }

        const UpstreamReply reply = forward(instruction);
        if (!reply.ok) {
            // errors partition the request count together with hits and misses
            errors.fetch_add(1);
            res.status = 504;
            res.set_content("{\"error\":\"upstream unavailable\"}", "application/json");
            return;
        }
        misses.fetch_add(1);
        const double latency = ms_since(t0);
        out["response"] = reply.response;
        out["cached"] = false;
        out["latency_ms"] = latency;
        out["output_tokens"] = reply.output_tokens;
        record(latency, reply.output_tokens);
        res.set_content(out.dump(), "application/json");
    }

    void handle_metrics(httplib::Response& res) const {
        jsonio::json out;
        ServingMetrics m = snapshot();
        out["requests"] = m.requests;
        out["hits"] = m.hits;
        out["misses"] = m.misses;
        out["errors"] = m.errors;
        out["hit_rate"] = m.hit_rate();
        out["mean_tpot_ms"] = m.mean_tpot_ms();
        out["median_tpot_ms"] = m.median_tpot_ms();
        out["p95_tpot_ms"] = m.p95_tpot_ms();
        out["mean_latency_ms"] = m.mean_latency_ms();
        out["upstream_calls"] = upstream_calls.load();
        res.set_content(out.dump(), "application/json");
    }

    ServingMetrics snapshot() const {
        ServingMetrics m;
        m.requests = requests.load();
        m.hits = hits.load();
        m.misses = misses.load();
        m.errors = errors.load();
        std::lock_guard<std::mutex> lock(ledger_mu);
        m.latencies_ms = latencies_ms;
        m.tpot_ms = tpot_ms;
        return m;
    }
};

CacheService::CacheService(const CacheStore& store, UpstreamConfig upstream, ServiceConfig cfg)
    : impl_(std::make_unique<Impl>(store, std::move(upstream), std::move(cfg))) {
    impl_->upstream.validate();
}

CacheService::~CacheService() { stop(); }

void CacheService::start() {
    Impl& im = *impl_;
    im.server.Post("/v1/complete", [this](const httplib::Request& req, httplib::Response& res) {
        impl_->handle_complete(req, res);
    });
    im.server.Get("/v1/metrics", [this](const httplib::Request&, httplib::Response& res) {
        impl_->handle_metrics(res);
    });
    im.server.Get("/v1/health", [](const httplib::Request&, httplib::Response& res) {
        res.set_content("ok", "text/plain");
    });

    if (im.cfg.port == 0) {
        im.bound_port = im.server.bind_to_any_port(im.cfg.bind_host);
        if (im.bound_port <= 0) throw TransportError("failed to bind service port");
    } else {
        if (!im.server.bind_to_port(im.cfg.bind_host, im.cfg.port)) {
            throw TransportError("failed to bind port " + std::to_string(im.cfg.port));
        }
        im.bound_port = im.cfg.port;
    }
    im.listener = std::thread([&im] { im.server.listen_after_bind(); });

    for (int i = 0; i < 500 && !im.server.is_running(); ++i) {
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    if (!im.server.is_running()) throw TransportError("service failed to start");
}

void CacheService::stop() {
    if (impl_ && impl_->listener.joinable()) {
        impl_->server.stop();
        impl_->listener.join();
    }
}

int CacheService::port() const { return impl_->bound_port; }

ServingMetrics CacheService::metrics_snapshot() const { return impl_->snapshot(); }

int64_t CacheService::upstream_calls() const { return impl_->upstream_calls.load(); }

ServingMetrics run_http_loadgen(const std::string& host, int port, const LoadProfile& profile,
                                int concurrency, const std::string& path) {
    profile.validate();
    const std::vector<double> arrivals =
        poisson_schedule(profile.rate_lambda, profile.duration_s, profile.seed);

    struct Task {
        double at_s;
        const std::string* instruction;
    };
    std::vector<Task> tasks;
    tasks.reserve(arrivals.size());
    for (size_t i = 0; i < arrivals.size(); ++i) {
        tasks.push_back({arrivals[i], &profile.requests[i % profile.requests.size()]});
    }

    ServingMetrics metrics;
    metrics.duration_s = profile.duration_s;
    std::mutex mu;
    std::atomic<size_t> next{0};
    const auto t_start = Clock::now();

    auto worker = [&]() {
        httplib::Client client(host, port);
        client.set_read_timeout(60, 0);
        for (;;) {
            const size_t i = next.fetch_add(1);
            if (i >= tasks.size()) break;
            const auto due =
                t_start + std::chrono::duration_cast<Clock::duration>(
                              std::chrono::duration<double>(tasks[i].at_s));
            std::this_thread::sleep_until(due);

            jsonio::json body;
            body["instruction"] = *tasks[i].instruction;
            const auto t0 = Clock::now();
            auto res = client.Post(path, body.dump(), "application/json");
            const double latency = ms_since(t0);

            std::lock_guard<std::mutex> lock(mu);
            ++metrics.requests;
            if (!res || res->status != 200) {
                ++metrics.errors;
                continue;
            }
            auto j = jsonio::json::parse(res->body, nullptr, false);
            if (j.is_discarded()) {
                ++metrics.errors;
                continue;
            }
            const bool cached = jsonio::get_or<bool>(j, "cached", false);
            const int64_t tokens = jsonio::get_or<int64_t>(j, "output_tokens", 1);
            if (cached) {
                ++metrics.hits;
            } else {
                ++metrics.misses;
            }
            metrics.latencies_ms.push_back(latency);
            metrics.tpot_ms.push_back(latency /
                                      static_cast<double>(std::max<int64_t>(1, tokens)));
        }
    };

    std::vector<std::thread> threads;
    const int n_threads = std::max(1, concurrency);
    threads.reserve(static_cast<size_t>(n_threads));
    for (int i = 0; i < n_threads; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    return metrics;
}

MetricsRow metrics_row(double lambda, const ServingMetrics& m) {
    MetricsRow row;
    row.lambda = lambda;
    row.requests = m.requests;
    row.hits = m.hits;
    row.misses = m.misses;
    row.errors = m.errors;
    row.hit_rate = m.hit_rate();
    row.mean_tpot_ms = m.mean_tpot_ms();
    row.median_tpot_ms = m.median_tpot_ms();
    row.p95_tpot_ms = m.p95_tpot_ms();
    row.mean_latency_ms = m.mean_latency_ms();
    row.throughput_rps = m.throughput_rps();
    return row;
}

void write_metrics_report(const std::string& path, std::span<const MetricsRow> rows,
                          const std::map<std::string, std::string>& config_echo,
                          bool csv_mirror) {
    using jsonio::json;
    std::ofstream out = jsonio::open_out(path);
    json header;
    header["format"] = "instcache-metrics";
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
        r["lambda"] = row.lambda;
        r["requests"] = row.requests;
        r["hits"] = row.hits;
        r["misses"] = row.misses;
        r["errors"] = row.errors;
        r["hit_rate"] = row.hit_rate;
        r["mean_tpot_ms"] = row.mean_tpot_ms;
        r["median_tpot_ms"] = row.median_tpot_ms;
        r["p95_tpot_ms"] = row.p95_tpot_ms;
        r["mean_latency_ms"] = row.mean_latency_ms;
        r["throughput_rps"] = row.throughput_rps;
        out << r.dump() << '\n';
    }
    if (!out) throw Error("failed writing " + path);

    if (csv_mirror) {
        std::string csv_path = path;
        const size_t dot = csv_path.rfind('.');
        csv_path = (dot == std::string::npos ? csv_path : csv_path.substr(0, dot)) + ".csv";
        std::ofstream csv = jsonio::open_out(csv_path);
        csv << "lambda,requests,hits,misses,errors,hit_rate,mean_tpot_ms,median_tpot_ms,"
               "p95_tpot_ms,mean_latency_ms,throughput_rps\n";
        for (const auto& row : rows) {
            csv << json(row.lambda).dump() << ',' << row.requests << ',' << row.hits << ','
                << row.misses << ',' << row.errors << ',' << json(row.hit_rate).dump() << ','
                << json(row.mean_tpot_ms).dump() << ',' << json(row.median_tpot_ms).dump() << ','
                << json(row.p95_tpot_ms).dump() << ',' << json(row.mean_latency_ms).dump() << ','
                << json(row.throughput_rps).dump() << '\n';
        }
        if (!csv) throw Error("failed writing " + csv_path);
    }
}

} // namespace instcache
