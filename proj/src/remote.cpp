#include "slidepipe/remote.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <atomic>
#include <cerrno>
#include <cstring>
#include <deque>
#include <future>
#include <map>
#include <mutex>
#include <optional>
#include <thread>
#include <vector>

#include "slidepipe/binio.hpp"
#include "slidepipe/errors.hpp"
#include "slidepipe/wire.hpp"

namespace slidepipe {

namespace {

// Client hello: magic + version. Server hello: magic + version + classes +
// input_size (0 = any). Both sides abort on a version mismatch.
constexpr std::size_t kClientHelloBytes = 6;
constexpr std::size_t kServerHelloBytes = 10;

struct Fd {
    int fd = -1;
    Fd() = default;
    explicit Fd(int f) : fd(f) {}
    Fd(const Fd&) = delete;
    Fd& operator=(const Fd&) = delete;
    Fd(Fd&& o) noexcept : fd(o.fd) { o.fd = -1; }
    Fd& operator=(Fd&& o) noexcept {
        reset();
        std::swap(fd, o.fd);
        return *this;
    }
    ~Fd() { reset(); }
    void reset() {
        if (fd >= 0) ::close(fd);
        fd = -1;
    }
    explicit operator bool() const { return fd >= 0; }
};

void write_all(int fd, const std::uint8_t* data, std::size_t n) {
    std::size_t sent = 0;
    while (sent < n) {
        const ssize_t r = ::send(fd, data + sent, n - sent, MSG_NOSIGNAL);
        if (r < 0) {
            if (errno == EINTR) continue;
            throw ProtocolError(std::string("send failed: ") + std::strerror(errno));
        }
        sent += static_cast<std::size_t>(r);
    }
}

// Returns false on a clean EOF at the first byte.
bool read_exact(int fd, std::uint8_t* data, std::size_t n) {
    std::size_t got = 0;
    while (got < n) {
        const ssize_t r = ::recv(fd, data + got, n - got, 0);
        if (r < 0) {
            if (errno == EINTR) continue;
            throw ProtocolError(std::string("recv failed: ") + std::strerror(errno));
        }
        if (r == 0) {
            if (got == 0) return false;
            throw ProtocolError("connection closed mid-frame");
        }
        got += static_cast<std::size_t>(r);
    }
    return true;
}

// Reads one full frame; empty optional on clean EOF between frames.
std::optional<wire::Frame> read_frame(int fd) {
    std::array<std::uint8_t, wire::kHeaderBytes> header_bytes;
    if (!read_exact(fd, header_bytes.data(), header_bytes.size())) return std::nullopt;
    const wire::Header header = wire::decode_header(header_bytes);

    std::vector<std::uint8_t> buffer(wire::kHeaderBytes + header.payload_len +
                                     wire::kTrailerBytes);
    std::copy(header_bytes.begin(), header_bytes.end(), buffer.begin());
    if (!read_exact(fd, buffer.data() + wire::kHeaderBytes,
                    header.payload_len + wire::kTrailerBytes)) {
        throw ProtocolError("connection closed mid-frame");
    }
    return wire::decode(buffer);
}

Fd connect_endpoint(const Endpoint& ep) {
    if (ep.kind == Endpoint::Kind::Tcp) {
        Fd fd(::socket(AF_INET, SOCK_STREAM, 0));
        if (!fd) throw ProtocolError(std::string("socket: ") + std::strerror(errno));
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_port = htons(static_cast<std::uint16_t>(ep.port));
        if (::inet_pton(AF_INET, ep.host.c_str(), &addr.sin_addr) != 1) {
            throw ProtocolError("endpoint: cannot parse host '" + ep.host + "'");
        }
        if (::connect(fd.fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
            throw ProtocolError("connect to " + ep.host + ":" + std::to_string(ep.port) +
                                " failed: " + std::strerror(errno));
        }
        return fd;
    }
    Fd fd(::socket(AF_UNIX, SOCK_STREAM, 0));
    if (!fd) throw ProtocolError(std::string("socket: ") + std::strerror(errno));
    sockaddr_un addr{};
    addr.sun_family = AF_UNIX;
    if (ep.path.size() + 1 > sizeof(addr.sun_path)) {
        throw ProtocolError("endpoint: unix path too long");
    }
    std::strncpy(addr.sun_path, ep.path.c_str(), sizeof(addr.sun_path) - 1);
    if (::connect(fd.fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        throw ProtocolError("connect to unix:" + ep.path + " failed: " + std::strerror(errno));
    }
    return fd;
}

}  // namespace

Endpoint parse_endpoint(const std::string& text) {
    Endpoint ep;
    if (text.rfind("tcp:", 0) == 0) {
        const std::string rest = text.substr(4);
        const auto colon = rest.rfind(':');
        if (colon == std::string::npos || colon == 0 || colon + 1 >= rest.size()) {
            throw ConfigError("endpoint '" + text + "' is not tcp:<host>:<port>");
        }
        ep.kind = Endpoint::Kind::Tcp;
        ep.host = rest.substr(0, colon);
        try {
            ep.port = std::stoi(rest.substr(colon + 1));
        } catch (const std::exception&) {
            throw ConfigError("endpoint '" + text + "': bad port");
        }
        if (ep.port < 1 || ep.port > 65535) {
            throw ConfigError("endpoint '" + text + "': port out of range");
        }
        return ep;
    }
    if (text.rfind("unix:", 0) == 0) {
        ep.kind = Endpoint::Kind::Unix;
        ep.path = text.substr(5);
        if (ep.path.empty()) throw ConfigError("endpoint '" + text + "': empty path");
        return ep;
    }
    throw ConfigError("endpoint '" + text + "' must start with tcp: or unix:");
}

// ---------------------------------------------------------------------------
// Client

struct RemotePredictor::Impl {
    Fd fd;
    int classes = 0;
    std::int64_t input_size = 0;
    std::chrono::milliseconds timeout{60000};

    std::mutex write_mu;
    std::mutex pending_mu;
    std::map<std::uint64_t, std::promise<wire::Frame>> pending;
    std::atomic<std::uint64_t> next_id{1};

    std::atomic<bool> dead{false};
    std::exception_ptr death;
    std::thread reader;

    void kill(std::exception_ptr reason) {
        {
            std::lock_guard lk(pending_mu);
            if (dead.load()) return;
            death = reason;
            dead.store(true);
            for (auto& [id, promise] : pending) promise.set_exception(reason);
            pending.clear();
        }
        ::shutdown(fd.fd, SHUT_RDWR);
    }

    void reader_loop() {
        try {
            for (;;) {
                std::optional<wire::Frame> frame = read_frame(fd.fd);
                if (!frame.has_value()) {
                    throw ProtocolError("server closed the connection");
                }
                std::promise<wire::Frame> promise;
                {
                    std::lock_guard lk(pending_mu);
                    auto it = pending.find(frame->patch_id);
                    if (it == pending.end()) {
                        throw ProtocolError("response for unknown patch_id " +
                                            std::to_string(frame->patch_id));
                    }
                    promise = std::move(it->second);
                    pending.erase(it);
                }
                promise.set_value(std::move(*frame));
            }
        } catch (...) {
            kill(std::current_exception());
        }
    }
};

RemotePredictor::RemotePredictor(const std::string& endpoint)
    : RemotePredictor(endpoint, Options{}) {}

RemotePredictor::RemotePredictor(const std::string& endpoint, Options options)
    : impl_(std::make_unique<Impl>()) {
    impl_->timeout = options.timeout;
    impl_->fd = connect_endpoint(parse_endpoint(endpoint));

    std::uint8_t hello[kClientHelloBytes];
    std::copy(wire::kMagic, wire::kMagic + 4, hello);
    binio::put_u16(hello + 4, wire::kVersion);
    write_all(impl_->fd.fd, hello, sizeof(hello));

    std::uint8_t reply[kServerHelloBytes];
    if (!read_exact(impl_->fd.fd, reply, sizeof(reply))) {
        throw ProtocolError("handshake: server closed the connection");
    }
    if (!std::equal(wire::kMagic, wire::kMagic + 4, reply)) {
        throw ProtocolError("handshake: bad magic from server");
    }
    const std::uint16_t version = binio::get_u16(reply + 4);
    if (version != wire::kVersion) {
        throw ProtocolError("handshake: server speaks version " + std::to_string(version) +
                            ", expected " + std::to_string(wire::kVersion));
    }
    impl_->classes = binio::get_u16(reply + 6);
    impl_->input_size = binio::get_u16(reply + 8);
    if (impl_->classes < 2) {
        throw ProtocolError("handshake: server advertises " + std::to_string(impl_->classes) +
                            " classes; at least 2 required");
    }
    impl_->reader = std::thread([this] { impl_->reader_loop(); });
}

RemotePredictor::~RemotePredictor() {
    impl_->kill(std::make_exception_ptr(ProtocolError("client shut down")));
    if (impl_->reader.joinable()) impl_->reader.join();
}

int RemotePredictor::classes() const { return impl_->classes; }
std::int64_t RemotePredictor::input_size() const { return impl_->input_size; }

ScoreMap RemotePredictor::predict(const PixelBlock& patch, const TileSpec&) {
    if (impl_->dead.load()) std::rethrow_exception(impl_->death);

    const std::uint64_t id = impl_->next_id.fetch_add(1);
    std::future<wire::Frame> future;
    {
        std::lock_guard lk(impl_->pending_mu);
        if (impl_->dead.load()) std::rethrow_exception(impl_->death);
        future = impl_->pending[id].get_future();
    }

    try {
        const std::vector<std::uint8_t> bytes = wire::encode(wire::make_request(id, patch));
        std::lock_guard lk(impl_->write_mu);
        write_all(impl_->fd.fd, bytes.data(), bytes.size());
    } catch (...) {
        impl_->kill(std::current_exception());
        std::rethrow_exception(impl_->death);
    }

    if (future.wait_for(impl_->timeout) != std::future_status::ready) {
        impl_->kill(std::make_exception_ptr(
            TimeoutError("no response for patch " + std::to_string(id) + " within " +
                         std::to_string(impl_->timeout.count()) + " ms")));
        std::rethrow_exception(impl_->death);
    }

    const wire::Frame frame = future.get();  // rethrows connection failures
    if (frame.kind == wire::Kind::Error) {
        throw RemoteError("predictor: " + wire::error_message(frame));
    }
    if (frame.height != patch.height || frame.width != patch.width) {
        const auto reason = std::make_exception_ptr(DimensionMismatch(
            "response is " + std::to_string(frame.width) + "x" + std::to_string(frame.height) +
            " for a " + std::to_string(patch.width) + "x" + std::to_string(patch.height) +
            " patch"));
        impl_->kill(reason);
        std::rethrow_exception(reason);
    }
    if (frame.classes != impl_->classes) {
        const auto reason = std::make_exception_ptr(
            DimensionMismatch("response carries " + std::to_string(frame.classes) +
                              " classes, handshake advertised " + std::to_string(impl_->classes)));
        impl_->kill(reason);
        std::rethrow_exception(reason);
    }
    return wire::response_scores(frame);
}

// ---------------------------------------------------------------------------
// Server

struct PredictorServer::Impl {
    Predictor* predictor = nullptr;
    Options options;
    Fd listen_fd;
    std::string endpoint;
    std::string unix_path;

    std::thread accept_thread;
    std::mutex conn_mu;
    std::vector<std::thread> conn_threads;
    std::vector<int> conn_fds;
    std::atomic<bool> stopping{false};

    // Does not close fd; connection fds live until stop() so numbers are
    // not reused while clients in the same process are still running.
    void serve_connection(int fd) {
        try {
            std::uint8_t hello[kClientHelloBytes];
            if (!read_exact(fd, hello, sizeof(hello))) return;
            if (!std::equal(wire::kMagic, wire::kMagic + 4, hello) ||
                binio::get_u16(hello + 4) != wire::kVersion) {
                return;  // refuse silently; the client sees EOF
            }
            std::uint8_t reply[kServerHelloBytes];
            std::copy(wire::kMagic, wire::kMagic + 4, reply);
            binio::put_u16(reply + 4, wire::kVersion);
            binio::put_u16(reply + 6, static_cast<std::uint16_t>(predictor->classes()));
            binio::put_u16(reply + 8, static_cast<std::uint16_t>(options.input_size));
            write_all(fd, reply, sizeof(reply));

            std::deque<std::vector<std::uint8_t>> out_queue;
            std::int64_t responses = 0;

            auto flush = [&](bool all) {
                while (!out_queue.empty() &&
                       (all || out_queue.size() >= std::max(1u, options.shuffle_window))) {
                    // Reversed delivery exercises out-of-order reassociation.
                    std::vector<std::vector<std::uint8_t>> batch;
                    const std::size_t n = options.shuffle_window > 1
                                              ? std::min<std::size_t>(out_queue.size(),
                                                                      options.shuffle_window)
                                              : out_queue.size();
                    for (std::size_t i = 0; i < n; ++i) {
                        batch.push_back(std::move(out_queue.front()));
                        out_queue.pop_front();
                    }
                    for (auto it = batch.rbegin(); it != batch.rend(); ++it) {
                        write_all(fd, it->data(), it->size());
                    }
                }
            };

            for (;;) {
                std::optional<wire::Frame> frame = read_frame(fd);
                if (!frame.has_value()) break;
                if (frame->kind != wire::Kind::Request) {
                    throw ProtocolError("server: expected a request frame");
                }

                wire::Frame out;
                try {
                    const PixelBlock patch = wire::request_patch(*frame);
                    const TileSpec where{0, 0, patch.width};
                    out = wire::make_response(frame->patch_id,
                                              predictor->predict(patch, where));
                } catch (const std::exception& e) {
                    out = wire::make_error(frame->patch_id, e.what());
                }

                std::vector<std::uint8_t> bytes = wire::encode(out);
                ++responses;
                if (options.corrupt_crc_every > 0 &&
                    responses % options.corrupt_crc_every == 0) {
                    bytes.back() ^= 0xFF;
                }
                out_queue.push_back(std::move(bytes));
                flush(false);
            }
            flush(true);
        } catch (...) {
            // Connection errors end this session only.
        }
    }

    void accept_loop() {
        for (;;) {
            const int conn = ::accept(listen_fd.fd, nullptr, nullptr);
            if (conn < 0) {
                if (errno == EINTR) continue;
                return;  // listener closed
            }
            std::lock_guard lk(conn_mu);
            if (stopping.load()) {
                ::close(conn);
                return;
            }
            conn_fds.push_back(conn);
            conn_threads.emplace_back([this, conn] { serve_connection(conn); });
        }
    }
};

PredictorServer::PredictorServer(Predictor& predictor)
    : PredictorServer(predictor, Options{}) {}

PredictorServer::PredictorServer(Predictor& predictor, Options options)
    : impl_(std::make_unique<Impl>()) {
    impl_->predictor = &predictor;
    impl_->options = options;

    if (!options.unix_path.empty()) {
        impl_->unix_path = options.unix_path;
        impl_->listen_fd = Fd(::socket(AF_UNIX, SOCK_STREAM, 0));
        if (!impl_->listen_fd) throw ProtocolError(std::string("socket: ") + std::strerror(errno));
        sockaddr_un addr{};
        addr.sun_family = AF_UNIX;
        if (options.unix_path.size() + 1 > sizeof(addr.sun_path)) {
            throw ProtocolError("server: unix path too long");
        }
        std::strncpy(addr.sun_path, options.unix_path.c_str(), sizeof(addr.sun_path) - 1);
        ::unlink(options.unix_path.c_str());
        if (::bind(impl_->listen_fd.fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
            throw ProtocolError("bind unix:" + options.unix_path + " failed: " +
                                std::strerror(errno));
        }
        impl_->endpoint = "unix:" + options.unix_path;
    } else {
        impl_->listen_fd = Fd(::socket(AF_INET, SOCK_STREAM, 0));
        if (!impl_->listen_fd) throw ProtocolError(std::string("socket: ") + std::strerror(errno));
        const int one = 1;
        ::setsockopt(impl_->listen_fd.fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
        sockaddr_in addr{};
        addr.sin_family = AF_INET;
        addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
        addr.sin_port = 0;
        if (::bind(impl_->listen_fd.fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
            throw ProtocolError(std::string("bind failed: ") + std::strerror(errno));
        }
        socklen_t len = sizeof(addr);
        ::getsockname(impl_->listen_fd.fd, reinterpret_cast<sockaddr*>(&addr), &len);
        impl_->endpoint = "tcp:127.0.0.1:" + std::to_string(ntohs(addr.sin_port));
    }

    if (::listen(impl_->listen_fd.fd, 16) != 0) {
        throw ProtocolError(std::string("listen failed: ") + std::strerror(errno));
    }
    impl_->accept_thread = std::thread([this] { impl_->accept_loop(); });
}

PredictorServer::~PredictorServer() { stop(); }

std::string PredictorServer::endpoint() const { return impl_->endpoint; }

void PredictorServer::stop() {
    if (impl_->stopping.exchange(true)) return;
    ::shutdown(impl_->listen_fd.fd, SHUT_RDWR);
    impl_->listen_fd.reset();
    if (impl_->accept_thread.joinable()) impl_->accept_thread.join();
    {
        std::lock_guard lk(impl_->conn_mu);
        for (int fd : impl_->conn_fds) ::shutdown(fd, SHUT_RDWR);
    }
    for (auto& t : impl_->conn_threads) {
        if (t.joinable()) t.join();
    }
    for (int fd : impl_->conn_fds) ::close(fd);
    impl_->conn_fds.clear();
    if (!impl_->unix_path.empty()) ::unlink(impl_->unix_path.c_str());
}

}  // namespace slidepipe
