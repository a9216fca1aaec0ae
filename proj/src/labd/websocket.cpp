#include "mori/labd/websocket.hpp"

#include <openssl/evp.h>
#include <openssl/sha.h>

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <sstream>

namespace mori::labd::ws {

namespace {

constexpr const char* kGuid = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";
constexpr std::size_t kMaxMessage = 1 << 20;

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

bool header_has_token(const std::string& value, const std::string& token) {
    std::stringstream ss(value);
    std::string part;
    while (std::getline(ss, part, ','))
        if (lower(trim(part)) == token) return true;
    return false;
}

std::string base64(const unsigned char* data, std::size_t n) {
    std::string out(4 * ((n + 2) / 3), '\0');
    const int len = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), data, static_cast<int>(n));
    out.resize(static_cast<std::size_t>(len));
    return out;
}

bool send_all(int fd, const char* data, std::size_t n) {
    while (n > 0) {
        const ssize_t k = ::send(fd, data, n, MSG_NOSIGNAL);
        if (k < 0) {
            if (errno == EINTR) continue;
            return false;
        }
        data += k;
        n -= static_cast<std::size_t>(k);
    }
    return true;
}

// Waits for readability; returns 1 ready, 0 timeout, -1 error.
int wait_readable(int fd, int timeout_ms) {
    pollfd p{fd, POLLIN, 0};
    for (;;) {
        const int r = ::poll(&p, 1, timeout_ms);
        if (r < 0 && errno == EINTR) continue;
        return r < 0 ? -1 : r;
    }
}

// Reads an HTTP head (through the blank line). Bytes past it are returned in
// `rest`.
bool read_http_head(int fd, std::string& head, std::string& rest, int timeout_ms) {
    std::string buf;
    char tmp[1024];
    while (buf.find("\r\n\r\n") == std::string::npos) {
        if (buf.size() > 16384) return false;
        if (wait_readable(fd, timeout_ms) != 1) return false;
        const ssize_t k = ::recv(fd, tmp, sizeof tmp, 0);
        if (k <= 0) return false;
        buf.append(tmp, static_cast<std::size_t>(k));
    }
    const auto end = buf.find("\r\n\r\n") + 4;
    head = buf.substr(0, end);
    rest = buf.substr(end);
    return true;
}

}  // namespace

std::string accept_key(const std::string& client_key) {
    const std::string s = client_key + kGuid;
    unsigned char digest[SHA_DIGEST_LENGTH];
    SHA1(reinterpret_cast<const unsigned char*>(s.data()), s.size(), digest);
    return base64(digest, sizeof digest);
}

std::string encode_frame(Opcode op, std::string_view payload, bool fin,
                         std::optional<std::array<std::uint8_t, 4>> mask) {
    std::string out;
    out.push_back(static_cast<char>((fin ? 0x80 : 0x00) | static_cast<std::uint8_t>(op)));
    const std::uint8_t mbit = mask ? 0x80 : 0x00;
    const std::uint64_t n = payload.size();
    if (n < 126) {
        out.push_back(static_cast<char>(mbit | n));
    } else if (n <= 0xFFFF) {
        out.push_back(static_cast<char>(mbit | 126));
        out.push_back(static_cast<char>((n >> 8) & 0xFF));
        out.push_back(static_cast<char>(n & 0xFF));
    } else {
        out.push_back(static_cast<char>(mbit | 127));
        for (int i = 7; i >= 0; --i) out.push_back(static_cast<char>((n >> (8 * i)) & 0xFF));
    }
    if (mask) {
        for (auto b : *mask) out.push_back(static_cast<char>(b));
        for (std::size_t i = 0; i < payload.size(); ++i)
            out.push_back(static_cast<char>(static_cast<std::uint8_t>(payload[i]) ^ (*mask)[i % 4]));
    } else {
        out.append(payload);
    }
    return out;
}

std::optional<Frame> FrameParser::next() {
    if (buf_.size() < 2) return std::nullopt;
    const auto b0 = static_cast<std::uint8_t>(buf_[0]);
    const auto b1 = static_cast<std::uint8_t>(buf_[1]);
    if (b0 & 0x70) throw WsError("reserved bits set without a negotiated extension");
    const std::uint8_t op = b0 & 0x0F;
    if (op != 0x0 && op != 0x1 && op != 0x2 && op != 0x8 && op != 0x9 && op != 0xA)
        throw WsError("unknown opcode " + std::to_string(op));
    const bool masked = (b1 & 0x80) != 0;
    if (masked != expect_masked_) throw WsError(masked ? "unexpected masked frame" : "client frame is not masked");
    std::uint64_t n = b1 & 0x7F;
    std::size_t pos = 2;
    if (n == 126) {
        if (buf_.size() < 4) return std::nullopt;
        n = (static_cast<std::uint64_t>(static_cast<std::uint8_t>(buf_[2])) << 8) |
            static_cast<std::uint8_t>(buf_[3]);
        pos = 4;
    } else if (n == 127) {
        if (buf_.size() < 10) return std::nullopt;
        n = 0;
        for (int i = 0; i < 8; ++i) n = (n << 8) | static_cast<std::uint8_t>(buf_[2 + i]);
        pos = 10;
    }
    const bool control = op >= 0x8;
    if (control && (n > 125 || !(b0 & 0x80))) throw WsError("invalid control frame");
    if (n > max_) throw WsError("frame payload of " + std::to_string(n) + " bytes exceeds the limit");
    std::array<std::uint8_t, 4> key{};
    if (masked) {
        if (buf_.size() < pos + 4) return std::nullopt;
        for (int i = 0; i < 4; ++i) key[i] = static_cast<std::uint8_t>(buf_[pos + i]);
        pos += 4;
    }
    if (buf_.size() < pos + n) return std::nullopt;
    Frame f;
    f.fin = (b0 & 0x80) != 0;
    f.opcode = static_cast<Opcode>(op);
    f.payload = buf_.substr(pos, n);
    if (masked)
        for (std::size_t i = 0; i < f.payload.size(); ++i)
            f.payload[i] = static_cast<char>(static_cast<std::uint8_t>(f.payload[i]) ^ key[i % 4]);
    buf_.erase(0, pos + n);
    return f;
}

HttpRequest parse_http_request(const std::string& head) {
    HttpRequest r;
    std::stringstream ss(head);
    std::string line;
    if (!std::getline(ss, line)) throw WsError("empty request");
    std::stringstream first(trim(line));
    first >> r.method >> r.path >> r.version;
    if (r.method.empty() || r.path.empty() || r.version.rfind("HTTP/", 0) != 0) throw WsError("malformed request line");
    while (std::getline(ss, line)) {
        line = trim(line);
        if (line.empty()) break;
        const auto c = line.find(':');
        if (c == std::string::npos) throw WsError("malformed header line");
        r.headers[lower(trim(line.substr(0, c)))] = trim(line.substr(c + 1));
    }
    return r;
}

std::string handshake_response(const HttpRequest& req) {
    auto get = [&](const char* k) {
        auto it = req.headers.find(k);
        return it == req.headers.end() ? std::string() : it->second;
    };
    if (req.method != "GET") throw WsError("websocket upgrade requires GET");
    if (!header_has_token(get("upgrade"), "websocket")) throw WsError("missing 'Upgrade: websocket'");
    if (!header_has_token(get("connection"), "upgrade")) throw WsError("missing 'Connection: Upgrade'");
    if (get("sec-websocket-version") != "13") throw WsError("unsupported websocket version");
    const std::string key = get("sec-websocket-key");
    if (key.empty()) throw WsError("missing Sec-WebSocket-Key");
    return "HTTP/1.1 101 Switching Protocols\r\n"
           "Upgrade: websocket\r\n"
           "Connection: Upgrade\r\n"
           "Sec-WebSocket-Accept: " +
           accept_key(key) + "\r\n\r\n";
}

Endpoint parse_endpoint(const std::string& text) {
    Endpoint ep;
    const auto c = text.rfind(':');
    std::string port = text;
    if (c != std::string::npos) {
        if (c > 0) ep.host = text.substr(0, c);
        port = text.substr(c + 1);
    }
    char* end = nullptr;
    const long p = std::strtol(port.c_str(), &end, 10);
    if (port.empty() || *end != '\0' || p < 0 || p > 65535) throw WsError("invalid listen address '" + text + "'");
    ep.port = static_cast<int>(p);
    return ep;
}

Endpoint listen_endpoint_from_env(const Endpoint& fallback) {
    const char* v = std::getenv("MORI_LISTEN");
    if (!v || !*v) return fallback;
    return parse_endpoint(v);
}

// ---- Connection ----

Connection::Connection(int fd, bool is_client, std::string leftover)
    : fd_(fd), is_client_(is_client), parser_(!is_client, kMaxMessage) {
    if (!leftover.empty()) parser_.feed(leftover.data(), leftover.size());
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

Connection::~Connection() {
    if (fd_ >= 0) ::close(fd_);
}

bool Connection::send_frame(Opcode op, std::string_view payload) {
    std::lock_guard lk(write_mu_);
    if (fd_ < 0) return false;
    std::optional<std::array<std::uint8_t, 4>> mask;
    if (is_client_) {
        mask_state_ = mask_state_ * 1664525u + 1013904223u;
        mask = std::array<std::uint8_t, 4>{static_cast<std::uint8_t>(mask_state_ >> 24),
                                           static_cast<std::uint8_t>(mask_state_ >> 16),
                                           static_cast<std::uint8_t>(mask_state_ >> 8),
                                           static_cast<std::uint8_t>(mask_state_)};
    }
    const std::string f = encode_frame(op, payload, true, mask);
    return send_all(fd_, f.data(), f.size());
}

bool Connection::send_text(std::string_view text) {
    if (!open_) return false;
    if (!send_frame(Opcode::text, text)) {
        open_ = false;
        return false;
    }
    return true;
}

ReadStatus Connection::read_message(std::string& out, int timeout_ms) {
    char tmp[4096];
    for (;;) {
        if (!open_) return ReadStatus::closed;
        std::optional<Frame> f;
        try {
            f = parser_.next();
        } catch (const WsError&) {
            close(1002);
            return ReadStatus::closed;
        }
        if (f) {
            switch (f->opcode) {
                case Opcode::ping:
                    send_frame(Opcode::pong, f->payload);
                    continue;
                case Opcode::pong: continue;
                case Opcode::close:
                    send_frame(Opcode::close, f->payload.substr(0, 2));
                    open_ = false;
                    return ReadStatus::closed;
                case Opcode::binary:
                    close(1003);
                    return ReadStatus::closed;
                case Opcode::text:
                    if (in_fragment_) {
                        close(1002);
                        return ReadStatus::closed;
                    }
                    if (f->fin) {
                        out = std::move(f->payload);
                        return ReadStatus::message;
                    }
                    in_fragment_ = true;
                    partial_ = std::move(f->payload);
                    continue;
                case Opcode::continuation:
                    if (!in_fragment_ || partial_.size() + f->payload.size() > kMaxMessage) {
                        close(1002);
                        return ReadStatus::closed;
                    }
                    partial_ += f->payload;
                    if (f->fin) {
                        in_fragment_ = false;
                        out = std::move(partial_);
                        partial_.clear();
                        return ReadStatus::message;
                    }
                    continue;
            }
        }
        const int r = wait_readable(fd_, timeout_ms);
        if (r == 0) return ReadStatus::timeout;
        if (r < 0) {
            open_ = false;
            return ReadStatus::closed;
        }
        const ssize_t k = ::recv(fd_, tmp, sizeof tmp, 0);
        if (k <= 0) {
            open_ = false;
            return ReadStatus::closed;
        }
        parser_.feed(tmp, static_cast<std::size_t>(k));
    }
}

void Connection::close(std::uint16_t code) {
    if (open_) {
        const char payload[2] = {static_cast<char>(code >> 8), static_cast<char>(code & 0xFF)};
        send_frame(Opcode::close, std::string_view(payload, 2));
    }
    open_ = false;
    std::lock_guard lk(write_mu_);
    if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

// ---- Server ----

Server::Server(const Endpoint& ep) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw WsError("cannot create socket");
    int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(ep.port));
    if (::inet_pton(AF_INET, ep.host == "localhost" ? "127.0.0.1" : ep.host.c_str(), &addr.sin_addr) != 1) {
        ::close(fd_);
        throw WsError("listen host must be an IPv4 address: " + ep.host);
    }
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd_, 8) != 0) {
        const std::string why = std::strerror(errno);
        ::close(fd_);
        throw WsError("cannot listen on " + ep.host + ":" + std::to_string(ep.port) + ": " + why);
    }
    socklen_t len = sizeof addr;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
}

Server::~Server() { close(); }

void Server::close() {
    if (fd_ >= 0) {
        ::shutdown(fd_, SHUT_RDWR);
        ::close(fd_);
        fd_ = -1;
    }
}

std::unique_ptr<Connection> Server::accept(int timeout_ms) {
    if (fd_ < 0) return nullptr;
    if (wait_readable(fd_, timeout_ms) != 1) return nullptr;
    const int c = ::accept(fd_, nullptr, nullptr);
    if (c < 0) return nullptr;
    std::string head, rest;
    if (!read_http_head(c, head, rest, 2000)) {
        ::close(c);
        return nullptr;
    }
    try {
        const std::string resp = handshake_response(parse_http_request(head));
        if (!send_all(c, resp.data(), resp.size())) {
            ::close(c);
            return nullptr;
        }
    } catch (const WsError& e) {
        const std::string body = std::string(e.what()) + "\n";
        const std::string resp = "HTTP/1.1 400 Bad Request\r\nContent-Type: text/plain\r\nContent-Length: " +
                                 std::to_string(body.size()) + "\r\nConnection: close\r\n\r\n" + body;
        send_all(c, resp.data(), resp.size());
        ::close(c);
        return nullptr;
    }
    return std::make_unique<Connection>(c, false, rest);
}

std::unique_ptr<Connection> connect(const Endpoint& ep, const std::string& path) {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    if (::getaddrinfo(ep.host.c_str(), std::to_string(ep.port).c_str(), &hints, &res) != 0 || !res)
        throw WsError("cannot resolve " + ep.host);
    const int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
    if (fd < 0 || ::connect(fd, res->ai_addr, res->ai_addrlen) != 0) {
        ::freeaddrinfo(res);
        if (fd >= 0) ::close(fd);
        throw WsError("cannot connect to " + ep.host + ":" + std::to_string(ep.port));
    }
    ::freeaddrinfo(res);
    const std::string key = "bW9yaS1zZXNzaW9uLWtleQ==";
    const std::string req = "GET " + path + " HTTP/1.1\r\nHost: " + ep.host + ":" + std::to_string(ep.port) +
                            "\r\nUpgrade: websocket\r\nConnection: Upgrade\r\nSec-WebSocket-Key: " + key +
                            "\r\nSec-WebSocket-Version: 13\r\n\r\n";
    std::string head, rest;
    if (!send_all(fd, req.data(), req.size()) || !read_http_head(fd, head, rest, 5000)) {
        ::close(fd);
        throw WsError("websocket handshake failed");
    }
    if (head.rfind("HTTP/1.1 101", 0) != 0) {
        ::close(fd);
        throw WsError("server refused the upgrade: " + head.substr(0, head.find("\r\n")));
    }
    const auto r = parse_http_request("GET / HTTP/1.1\r\n" + head.substr(head.find("\r\n") + 2));
    auto it = r.headers.find("sec-websocket-accept");
    if (it == r.headers.end() || it->second != accept_key(key)) {
        ::close(fd);
        throw WsError("server sent a wrong Sec-WebSocket-Accept");
    }
    return std::make_unique<Connection>(fd, true, rest);
}

}  // namespace mori::labd::ws
