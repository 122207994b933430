#include <doctest.h>

#include <cstring>
#include <random>
#include <thread>
#include <vector>

#include "slidepipe/errors.hpp"
#include "slidepipe/remote.hpp"
#include "test_util.hpp"

using namespace slidepipe;

TEST_CASE("endpoint parsing") {
    const Endpoint tcp = parse_endpoint("tcp:127.0.0.1:9000");
    CHECK(tcp.kind == Endpoint::Kind::Tcp);
    CHECK(tcp.host == "127.0.0.1");
    CHECK(tcp.port == 9000);

    const Endpoint unix_ep = parse_endpoint("unix:/tmp/x.sock");
    CHECK(unix_ep.kind == Endpoint::Kind::Unix);
    CHECK(unix_ep.path == "/tmp/x.sock");

    CHECK_THROWS_AS(parse_endpoint("http://nope"), ConfigError);
    CHECK_THROWS_AS(parse_endpoint("tcp:127.0.0.1"), ConfigError);
    CHECK_THROWS_AS(parse_endpoint("tcp:127.0.0.1:notaport"), ConfigError);
}

TEST_CASE("constant zero server yields zero scores and class 0 masks") {
    ConstantPredictor zero(ScoreMap(2, 16, 16));
    PredictorServer server(zero);
    RemotePredictor client(server.endpoint());

    CHECK(client.classes() == 2);
    const ScoreMap scores = client.predict(PixelBlock(16, 16, 3), {0, 0, 16});
    for (float v : scores.scores) CHECK(v == 0.0f);
    const LabelMask mask = argmax_labels(scores);
    for (auto v : mask.labels) CHECK(v == 0);  // tie-break
}

TEST_CASE("remote scores are byte-identical to in-process scores") {
    std::mt19937 rng(61);
    PixelThresholdPredictor local(2, 128);
    PixelThresholdPredictor served(2, 128);
    PredictorServer server(served);
    RemotePredictor client(server.endpoint());

    for (int i = 0; i < 50; ++i) {
        const std::int64_t size = 1 + (i * 7) % 32;
        const PixelBlock patch = testutil::random_patch(rng, size);
        const TileSpec where{0, 0, size};
        const ScoreMap a = local.predict(patch, where);
        const ScoreMap b = client.predict(patch, where);
        REQUIRE(a.scores.size() == b.scores.size());
        CHECK(std::memcmp(a.scores.data(), b.scores.data(), a.scores.size() * 4) == 0);
    }
}

TEST_CASE("out-of-order responses are reassociated by patch id") {
    std::mt19937 rng(62);
    PixelThresholdPredictor served(2, 128);
    PredictorServer::Options opts;
    opts.shuffle_window = 8;  // batches of 8 delivered reversed
    PredictorServer server(served, opts);
    RemotePredictor client(server.endpoint());

    PixelThresholdPredictor local(2, 128);
    std::vector<PixelBlock> patches;
    for (int i = 0; i < 8; ++i) patches.push_back(testutil::random_patch(rng, 8));

    // Issue all eight concurrently; responses arrive reversed.
    std::vector<ScoreMap> results(8);
    std::vector<std::thread> threads;
    for (int i = 0; i < 8; ++i) {
        threads.emplace_back([&, i] {
            results[static_cast<std::size_t>(i)] =
                client.predict(patches[static_cast<std::size_t>(i)], {0, 0, 8});
        });
    }
    for (auto& t : threads) t.join();

    for (int i = 0; i < 8; ++i) {
        const ScoreMap expect = local.predict(patches[static_cast<std::size_t>(i)], {0, 0, 8});
        CHECK(results[static_cast<std::size_t>(i)].scores == expect.scores);
    }
}

TEST_CASE("corrupted checksum kills the connection") {
    PixelThresholdPredictor served(2, 128);
    PredictorServer::Options opts;
    opts.corrupt_crc_every = 2;  // second response arrives corrupted
    PredictorServer server(served, opts);
    RemotePredictor client(server.endpoint());

    std::mt19937 rng(63);
    CHECK_NOTHROW(client.predict(testutil::random_patch(rng, 8), {0, 0, 8}));
    CHECK_THROWS_AS(client.predict(testutil::random_patch(rng, 8), {0, 0, 8}), ProtocolError);
    // The connection is unusable from here on.
    CHECK_THROWS_AS(client.predict(testutil::random_patch(rng, 8), {0, 0, 8}), ProtocolError);
}

TEST_CASE("server errors surface as RemoteError without killing the connection") {
    struct Picky : Predictor {
        int classes() const override { return 2; }
        ScoreMap predict(const PixelBlock& patch, const TileSpec& where) override {
            if (patch.width == 13) throw std::runtime_error("unlucky patch");
            ScoreMap out(2, where.size, where.size);
            return out;
        }
    } served;
    PredictorServer server(served);
    RemotePredictor client(server.endpoint());

    CHECK_THROWS_AS(client.predict(PixelBlock(13, 13, 3), {0, 0, 13}), RemoteError);
    CHECK_NOTHROW(client.predict(PixelBlock(8, 8, 3), {0, 0, 8}));
}

TEST_CASE("unix socket endpoints work") {
    testutil::TempDir dir("unixsock");
    PixelThresholdPredictor served(2, 128);
    PredictorServer::Options opts;
    opts.unix_path = (dir.path() / "pred.sock").string();
    PredictorServer server(served, opts);
    RemotePredictor client(server.endpoint());

    std::mt19937 rng(64);
    const PixelBlock patch = testutil::random_patch(rng, 8);
    PixelThresholdPredictor local(2, 128);
    CHECK(client.predict(patch, {0, 0, 8}).scores == local.predict(patch, {0, 0, 8}).scores);
}

TEST_CASE("timeouts mark the connection dead") {
    struct Sleepy : Predictor {
        int classes() const override { return 2; }
        ScoreMap predict(const PixelBlock&, const TileSpec& where) override {
            std::this_thread::sleep_for(std::chrono::milliseconds(500));
            return ScoreMap(2, where.size, where.size);
        }
    } served;
    PredictorServer server(served);
    RemotePredictor::Options opts;
    opts.timeout = std::chrono::milliseconds(50);
    RemotePredictor client(server.endpoint(), opts);

    CHECK_THROWS_AS(client.predict(PixelBlock(4, 4, 3), {0, 0, 4}), TimeoutError);
}
