#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>

#include "instcache/cache_store.hpp"

namespace instcache {

// Fills a response for a pre-populated instruction. Response generation is
// decoupled from the search; these are the desk-scale stand-ins.
class Responder {
public:
    virtual ~Responder() = default;
    // Throws on failure; bulk_load skips the entry and keeps going.
    virtual std::string respond(std::string_view instruction) = 0;
    virtual std::string name() const = 0;
};

// "echo:" + instruction; deterministic filler for tests and dry runs.
class TemplateResponder final : public Responder {
public:
    explicit TemplateResponder(std::string prefix = "echo:") : prefix_(std::move(prefix)) {}
    std::string respond(std::string_view instruction) override;
    std::string name() const override { return "template"; }

private:
    std::string prefix_;
};

// Replays the response of a matching corpus record when one exists,
// otherwise falls back to the template.
class CorpusEchoResponder final : public Responder {
public:
    CorpusEchoResponder(std::unordered_map<std::string, std::string> by_key,
                        NormalizeConfig norm = {});
    // Keyed by normalize(instruction) of each corpus record, first wins.
    static CorpusEchoResponder from_corpus_file(const std::string& corpus_path,
                                                NormalizeConfig norm = {});
    std::string respond(std::string_view instruction) override;
    std::string name() const override { return "corpus-echo"; }
    size_t corpus_size() const { return by_key_.size(); }

private:
    std::unordered_map<std::string, std::string> by_key_;
    NormalizeConfig norm_;
    TemplateResponder fallback_;
};

// POSTs {"instruction": ...} to a completion endpoint and expects
// {"response": ...} back.
class HttpResponder final : public Responder {
public:
    HttpResponder(std::string host, int port, std::string path = "/v1/complete",
                  int timeout_ms = 30000);
    ~HttpResponder() override;
    std::string respond(std::string_view instruction) override;
    std::string name() const override { return "upstream-http"; }

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

std::unique_ptr<Responder> make_responder(const std::string& spec_string,
                                          const NormalizeConfig& norm);

} // namespace instcache
