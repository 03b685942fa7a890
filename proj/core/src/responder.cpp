#include "instcache/responder.hpp"

#include <httplib.h>

#include "json_util.hpp"

namespace instcache {

std::string TemplateResponder::respond(std::string_view instruction) {
    return prefix_ + std::string(instruction);
}

CorpusEchoResponder::CorpusEchoResponder(std::unordered_map<std::string, std::string> by_key,
                                         NormalizeConfig norm)
    : by_key_(std::move(by_key)), norm_(norm) {}

CorpusEchoResponder CorpusEchoResponder::from_corpus_file(const std::string& corpus_path,
                                                          NormalizeConfig norm) {
    std::unordered_map<std::string, std::string> by_key;
    jsonio::for_each_line_lenient(corpus_path, [&](jsonio::json& j, size_t) {
        if (!j.contains("instruction") || !j.contains("response")) return false;
        std::string key = normalize(j["instruction"].get<std::string>(), norm);
        by_key.emplace(std::move(key), j["response"].get<std::string>());
        return true;
    });
    return CorpusEchoResponder(std::move(by_key), norm);
}

std::string CorpusEchoResponder::respond(std::string_view instruction) {
    const auto it = by_key_.find(normalize(instruction, norm_));
    if (it != by_key_.end()) return it->second;
    return fallback_.respond(instruction);
}

struct HttpResponder::Impl {
    httplib::Client client;
    std::string path;
    Impl(const std::string& host, int port, std::string p, int timeout_ms)
        : client(host, port), path(std::move(p)) {
        client.set_connection_timeout(0, timeout_ms * 1000);
        client.set_read_timeout(timeout_ms / 1000, (timeout_ms % 1000) * 1000);
    }
};

HttpResponder::HttpResponder(std::string host, int port, std::string path, int timeout_ms)
    : impl_(std::make_unique<Impl>(host, port, std::move(path), timeout_ms)) {}

HttpResponder::~HttpResponder() = default;

std::string HttpResponder::respond(std::string_view instruction) {
    jsonio::json body;
    body["instruction"] = std::string(instruction);
    auto res = impl_->client.Post(impl_->path, body.dump(), "application/json");
    if (!res) throw TransportError("upstream responder unreachable");
    if (res->status != 200) {
        throw TransportError("upstream responder returned status " + std::to_string(res->status));
    }
    auto j = jsonio::json::parse(res->body, nullptr, false);
    if (j.is_discarded() || !j.contains("response")) {
        throw TransportError("upstream responder returned a malformed body");
    }
    return j["response"].get<std::string>();
}

std::unique_ptr<Responder> make_responder(const std::string& spec_string,
                                          const NormalizeConfig& norm) {
    const size_t colon = spec_string.find(':');
    const std::string kind = spec_string.substr(0, colon);
    const std::string arg = colon == std::string::npos ? "" : spec_string.substr(colon + 1);

    if (kind == "template") {
        return std::make_unique<TemplateResponder>(arg.empty() ? "echo:" : arg);
    }
    if (kind == "corpus-echo") {
        if (arg.empty()) throw InvalidArgument("corpus-echo responder needs a corpus path");
        return std::make_unique<CorpusEchoResponder>(
            CorpusEchoResponder::from_corpus_file(arg, norm));
    }
    if (kind == "http") {
        // http:host:port[/path]
        const size_t port_sep = arg.find(':');
        if (port_sep == std::string::npos) {
            throw InvalidArgument("http responder spec must be http:host:port[/path]");
        }
        std::string host = arg.substr(0, port_sep);
        std::string rest = arg.substr(port_sep + 1);
        std::string path = "/v1/complete";
        const size_t slash = rest.find('/');
        if (slash != std::string::npos) {
            path = rest.substr(slash);
            rest = rest.substr(0, slash);
        }
        return std::make_unique<HttpResponder>(host, std::stoi(rest), path);
    }
    throw InvalidArgument("unknown responder kind: " + kind);
}

} // namespace instcache
