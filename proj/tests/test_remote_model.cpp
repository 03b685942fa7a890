#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <thread>

#include "instcache/model_factory.hpp"
#include "instcache/prepopulate.hpp"
#include "instcache/protocol_server.hpp"
#include "instcache/remote_model.hpp"
#include "oracles.hpp"

using namespace instcache;
namespace tst = instcache::testing;

namespace {

// Runs a protocol server for `backing` on an ephemeral TCP port.
struct TcpFixture {
    std::unique_ptr<TokenModel> backing;
    TcpLineServer server;
    std::thread thread;

    explicit TcpFixture(const std::string& spec)
        : backing(model_from_spec(spec)), server("127.0.0.1", 0) {
        thread = std::thread([this] { serve_model_tcp(*backing, server); });
    }
    ~TcpFixture() {
        server.close();
        if (thread.joinable()) thread.join();
    }
};

} // namespace

TEST_CASE("protocol handler speaks the wire format") {
    auto model = model_from_spec("uniform:v=3");
    const std::string root_reply = handle_protocol_line(*model, R"({"op":"root"})");
    CHECK(root_reply.find("\"state\"") != std::string::npos);

    const std::string dist_reply =
        handle_protocol_line(*model, R"({"op":"dist","state":1,"top_k":0})");
    CHECK(dist_reply.find("\"tokens\"") != std::string::npos);
    CHECK(dist_reply.find("\"logp\"") != std::string::npos);
    CHECK(dist_reply.find("<eos>") != std::string::npos);

    const std::string extend_reply =
        handle_protocol_line(*model, R"({"op":"extend","state":1,"token":2})");
    CHECK(extend_reply.find("\"state\"") != std::string::npos);

    const std::string free_reply = handle_protocol_line(*model, R"({"op":"free","state":2})");
    CHECK(free_reply.find("\"ok\":true") != std::string::npos);

    // errors come back as {"error": ...} without killing the session
    CHECK(handle_protocol_line(*model, R"({"op":"free","state":2})").find("\"error\"") !=
          std::string::npos);
    CHECK(handle_protocol_line(*model, R"({"op":"warp"})").find("\"error\"") !=
          std::string::npos);
    CHECK(handle_protocol_line(*model, "{bad json").find("\"error\"") != std::string::npos);
}

TEST_CASE("remote model over tcp mirrors the in-process model") {
    TcpFixture fixture("powerlaw:v=6,alpha=1.1");

    RemoteModelConfig cfg;
    cfg.endpoint = "tcp:127.0.0.1:" + std::to_string(fixture.server.port());
    RemoteModel remote(cfg);

    CHECK(remote.spec().vocab_size == 6);
    const StateId root = remote.root_state();
    auto dist = remote.distribution(root);
    dist.validate(1e-6);
    REQUIRE(dist.entries.size() == 6);

    auto local = model_from_spec("powerlaw:v=6,alpha=1.1");
    auto local_dist = local->distribution(local->root_state());
    for (size_t i = 0; i < dist.entries.size(); ++i) {
        CHECK(dist.entries[i].prob ==
              doctest::Approx(local_dist.entries[i].prob).epsilon(1e-9));
        CHECK(remote.token_text(dist.entries[i].token) ==
              local->token_text(local_dist.entries[i].token));
    }

    // extend / release round-trips and keeps the ledger consistent
    const TokenId some_content = dist.entries[1].token;
    const StateId child = remote.extend(root, some_content);
    CHECK(remote.depth(child) == 1);
    CHECK(remote.state_stats().live_states == 2);
    remote.release(child);
    CHECK(remote.state_stats().live_states == 1);
    CHECK_THROWS_AS(remote.distribution(child), StateError);

    // lookup_token works once the vocabulary has been observed
    CHECK(remote.lookup_token("a").has_value());
    CHECK_FALSE(remote.lookup_token("zebra").has_value());
}

TEST_CASE("prepopulate through the tcp adapter equals the in-process run") {
    TcpFixture fixture("powerlaw:v=5,alpha=1.0");
    RemoteModelConfig cfg;
    cfg.endpoint = "tcp:127.0.0.1:" + std::to_string(fixture.server.port());
    cfg.batch_size = 3; // exercise pipelined batches
    RemoteModel remote(cfg);

    PrepopConfig pcfg;
    pcfg.sigma = 5.0;
    pcfg.max_len = 3;
    auto got = prepopulate(remote, pcfg);

    auto local = model_from_spec("powerlaw:v=5,alpha=1.0");
    auto want = prepopulate(*local, pcfg);
    CHECK(tst::same_instruction_set(got.instructions, want.instructions, 1e-6));
    CHECK(remote.state_stats().live_states == 1);

    // tcp endpoints are cloneable: a second connection
    CHECK(remote.cloneable());
    auto clone = remote.clone();
    CHECK(clone->spec().vocab_size == 5);
}

TEST_CASE("remote model over a spawned subprocess (stdio protocol)") {
    const char* bin = std::getenv("INSTCACHE_BIN");
    REQUIRE_MESSAGE(bin != nullptr, "INSTCACHE_BIN must point at the CLI binary");

    RemoteModelConfig cfg;
    cfg.endpoint = std::string("cmd:") + bin + " model-serve --model uniform:v=3 --stdio";
    RemoteModel remote(cfg);

    CHECK(remote.spec().vocab_size == 3);
    CHECK_FALSE(remote.cloneable());
    CHECK_THROWS_AS(remote.clone(), Error);

    PrepopConfig pcfg;
    pcfg.sigma = 2.2;
    pcfg.max_len = 3;
    auto got = prepopulate(remote, pcfg);
    REQUIRE(got.instructions.size() == 2);
    CHECK(got.instructions[0].instruction == "a");
    CHECK(got.instructions[1].instruction == "b");
}

TEST_CASE("remote adapter surfaces protocol errors") {
    TcpFixture fixture("uniform:v=3");
    RemoteModelConfig cfg;
    cfg.endpoint = "tcp:127.0.0.1:" + std::to_string(fixture.server.port());
    RemoteModel remote(cfg);
    // extending with eos is rejected server-side and surfaces as an error
    CHECK_THROWS_AS(remote.extend(remote.root_state(), /*eos*/ 1), StateError);
    // a bad token id surfaces the server's error through the transport
    CHECK_THROWS_AS(remote.extend(remote.root_state(), 999), TransportError);
}
