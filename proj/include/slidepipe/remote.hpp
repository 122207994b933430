#pragma once

#include <chrono>
#include <memory>
#include <string>

#include "slidepipe/predictor.hpp"

namespace slidepipe {

// "tcp:<host>:<port>" or "unix:<path>".
struct Endpoint {
    enum class Kind { Tcp, Unix };
    Kind kind = Kind::Tcp;
    std::string host;
    int port = 0;
    std::string path;
};

Endpoint parse_endpoint(const std::string& text);

// Client side of the external predictor protocol. One connection carries
// any number of in-flight requests; responses are matched back to callers
// by patch_id, so out-of-order delivery is fine. predict() may be called
// from many threads at once. After a protocol error or timeout the
// connection is unusable and every call fails.
class RemotePredictor final : public Predictor {
public:
    struct Options {
        std::chrono::milliseconds timeout{60000};
    };

    explicit RemotePredictor(const std::string& endpoint);
    RemotePredictor(const std::string& endpoint, Options options);
    ~RemotePredictor() override;

    RemotePredictor(const RemotePredictor&) = delete;
    RemotePredictor& operator=(const RemotePredictor&) = delete;

    // Advertised by the server during the handshake.
    int classes() const override;
    std::int64_t input_size() const override;

    ScoreMap predict(const PixelBlock& patch, const TileSpec& where) override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Loopback server wrapping any Predictor behind the wire protocol. Listens
// on an ephemeral port (or a unix path), serving each connection on its own
// thread. The fault options exist for protocol-conformance tests.
class PredictorServer {
public:
    struct Options {
        std::int64_t input_size = 0;           // advertised in the handshake
        unsigned shuffle_window = 0;           // batch N responses, send them reversed
        std::int64_t corrupt_crc_every = 0;    // corrupt the CRC of every Nth response
        std::string unix_path;                 // serve on a unix socket instead of TCP
    };

    explicit PredictorServer(Predictor& predictor);
    PredictorServer(Predictor& predictor, Options options);
    ~PredictorServer();

    PredictorServer(const PredictorServer&) = delete;
    PredictorServer& operator=(const PredictorServer&) = delete;

    // "tcp:127.0.0.1:<port>" or "unix:<path>".
    std::string endpoint() const;
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace slidepipe
