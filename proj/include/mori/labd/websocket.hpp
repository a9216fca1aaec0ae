#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

// Minimal RFC 6455 transport: text messages over a single TCP connection,
// no extensions, no TLS.
namespace mori::labd::ws {

class WsError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Opcode : std::uint8_t { continuation = 0x0, text = 0x1, binary = 0x2, close = 0x8, ping = 0x9, pong = 0xA };

struct Frame {
    bool fin = true;
    Opcode opcode = Opcode::text;
    std::string payload;
};

// Sec-WebSocket-Accept value for a client key.
std::string accept_key(const std::string& client_key);

std::string encode_frame(Opcode op, std::string_view payload, bool fin = true,
                         std::optional<std::array<std::uint8_t, 4>> mask = std::nullopt);

// Incremental decoder. Unmasks client frames; rejects frames whose masking
// does not match `expect_masked` and payloads above `max_payload`.
class FrameParser {
public:
    FrameParser(bool expect_masked, std::size_t max_payload) : expect_masked_(expect_masked), max_(max_payload) {}
    void feed(const char* data, std::size_t n) { buf_.append(data, n); }
    std::optional<Frame> next();

private:
    bool expect_masked_;
    std::size_t max_;
    std::string buf_;
};

struct HttpRequest {
    std::string method, path, version;
    std::map<std::string, std::string> headers;  // lower-case names
};

HttpRequest parse_http_request(const std::string& head);
// Validates an upgrade request and returns the 101 response.
std::string handshake_response(const HttpRequest& req);

struct Endpoint {
    std::string host = "127.0.0.1";
    int port = 8765;
};

// "host:port", ":port" or "port".
Endpoint parse_endpoint(const std::string& text);
// Reads MORI_LISTEN, falling back to `fallback`.
Endpoint listen_endpoint_from_env(const Endpoint& fallback = {});

enum class ReadStatus { message, timeout, closed };

// One established websocket. send_text may be called from any thread;
// read_message from one reader thread.
class Connection {
public:
    Connection(int fd, bool is_client, std::string leftover = {});
    ~Connection();
    Connection(const Connection&) = delete;
    Connection& operator=(const Connection&) = delete;

    bool send_text(std::string_view text);
    // timeout_ms < 0 blocks. Answers pings and close frames internally.
    ReadStatus read_message(std::string& out, int timeout_ms);
    void close(std::uint16_t code = 1000);
    bool open() const { return open_; }

private:
    bool send_frame(Opcode op, std::string_view payload);

    int fd_;
    bool is_client_;
    std::atomic<bool> open_{true};
    FrameParser parser_;
    std::string partial_;
    bool in_fragment_ = false;
    std::mutex write_mu_;
    std::uint32_t mask_state_ = 0x9e3779b9u;
};

class Server {
public:
    explicit Server(const Endpoint& ep);  // port 0 picks a free port
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    int port() const { return port_; }
    // Waits up to timeout_ms for a client and performs the handshake. Returns
    // null on timeout or on a rejected handshake.
    std::unique_ptr<Connection> accept(int timeout_ms);
    void close();

private:
    int fd_ = -1;
    int port_ = 0;
};

std::unique_ptr<Connection> connect(const Endpoint& ep, const std::string& path = "/");

}  // namespace mori::labd::ws
