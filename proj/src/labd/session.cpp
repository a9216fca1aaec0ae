#include "mori/labd/session.hpp"

#include <algorithm>

namespace mori::labd {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

Session::Session(Options options) : opt_(std::move(options)), t0_(Clock::now()), paused_(opt_.start_paused) {
    last_command_ = t0_;
    next_step_ = t0_;
}

double Session::now_ms() const { return std::chrono::duration<double, std::milli>(Clock::now() - t0_).count(); }

void Session::send_locked(int id, Kind kind, json payload) {
    auto it = conns_.find(id);
    if (it == conns_.end() || !it->second.open) return;
    Conn& c = it->second;
    const bool droppable = kind == Kind::state_frame;
    if (droppable && c.queue.size() >= opt_.queue_capacity) {
        auto victim = std::find_if(c.queue.begin(), c.queue.end(), [](const Outgoing& o) { return o.droppable; });
        ++c.dropped;
        if (victim == c.queue.end()) return;
        c.queue.erase(victim);
    }
    Message m;
    m.kind = kind;
    m.seq = c.next_seq++;
    m.timestamp = now_ms();
    m.payload = std::move(payload);
    c.queue.push_back({encode(m), droppable});
    out_cv_.notify_all();
}

void Session::broadcast_locked(Kind kind, const json& payload) {
    for (auto& [id, c] : conns_) send_locked(id, kind, payload);
}

void Session::error_locked(int id, const std::string& code, const std::string& message,
                           std::optional<std::uint64_t> in_reply_to) {
    json p{{"code", code}, {"message", message}};
    if (in_reply_to) p["in_reply_to"] = *in_reply_to;
    send_locked(id, Kind::error, std::move(p));
}

json Session::control_payload_locked(const std::string& reason) const {
    return json{{"controller", controller_ ? json(*controller_) : json(nullptr)},
                {"human_active", human_active_},
                {"paused", paused_},
                {"reason", reason}};
}

void Session::release_locked(const std::string& reason) {
    controller_.reset();
    commands_.clear();
    human_active_ = false;
    broadcast_locked(Kind::control, control_payload_locked(reason));
}

int Session::connect() {
    std::lock_guard lk(mu_);
    const int id = next_id_++;
    conns_[id];
    send_locked(id, Kind::hello,
                json{{"protocol", kProtocolVersion},
                     {"connection", id},
                     {"task", opt_.task},
                     {"episode", episode_},
                     {"paused", paused_},
                     {"controller", controller_ ? json(*controller_) : json(nullptr)}});
    return id;
}

void Session::disconnect(int id) {
    std::lock_guard lk(mu_);
    auto it = conns_.find(id);
    if (it == conns_.end()) return;
    conns_.erase(it);
    if (controller_ == id) release_locked("controller_disconnected");
    out_cv_.notify_all();
}

void Session::receive(int id, const std::string& text) {
    std::lock_guard lk(mu_);
    auto it = conns_.find(id);
    if (it == conns_.end()) return;
    Message m;
    try {
        m = decode(text);
    } catch (const ProtocolError& e) {
        error_locked(id, "bad_message", e.what(), std::nullopt);
        return;
    }
    Conn& c = it->second;
    if (c.last_inbound && m.seq <= *c.last_inbound) {
        error_locked(id, "stale_seq",
                     "seq " + std::to_string(m.seq) + " is not above " + std::to_string(*c.last_inbound), m.seq);
        return;
    }
    c.last_inbound = m.seq;
    if (!client_kind(m.kind)) {
        error_locked(id, "bad_message", "'" + to_string(m.kind) + "' is sent by the server only", m.seq);
        return;
    }
    switch (m.kind) {
        case Kind::intervene: {
            if (controller_ && *controller_ != id) {
                error_locked(id, "controller_busy",
                             "connection " + std::to_string(*controller_) + " holds the controls", m.seq);
                return;
            }
            HumanCommand cmd;
            try {
                cmd = parse_intervene(m.payload);
            } catch (const ProtocolError& e) {
                error_locked(id, "bad_payload", e.what(), m.seq);
                return;
            }
            commands_.push_back({false, cmd});
            if (!controller_) {
                controller_ = id;
                broadcast_locked(Kind::control, control_payload_locked("acquired"));
            }
            return;
        }
        case Kind::release:
            if (controller_ != id) {
                error_locked(id, "not_controller", "only the controller can release", m.seq);
                return;
            }
            commands_.push_back({true, {}});
            controller_.reset();
            broadcast_locked(Kind::control, control_payload_locked("released"));
            return;
        case Kind::pause:
            paused_ = true;
            broadcast_locked(Kind::control, control_payload_locked("paused"));
            return;
        case Kind::resume:
            paused_ = false;
            broadcast_locked(Kind::control, control_payload_locked("resumed"));
            return;
        case Kind::ping:
            send_locked(id, Kind::pong, m.payload);
            return;
        default: return;
    }
}

Session::Pop Session::pop_outbound(int id, std::string& out, std::chrono::milliseconds wait) {
    std::unique_lock lk(mu_);
    auto ready = [&] {
        auto it = conns_.find(id);
        return it == conns_.end() || !it->second.queue.empty() || stop_;
    };
    if (!out_cv_.wait_for(lk, wait, ready)) return Pop::timeout;
    auto it = conns_.find(id);
    if (it == conns_.end()) return Pop::closed;
    if (it->second.queue.empty()) return stop_ ? Pop::closed : Pop::timeout;
    out = std::move(it->second.queue.front().text);
    it->second.queue.pop_front();
    return Pop::message;
}

void Session::shutdown() {
    std::lock_guard lk(mu_);
    stop_ = true;
    out_cv_.notify_all();
}

std::size_t Session::dropped_frames(int id) const {
    std::lock_guard lk(mu_);
    auto it = conns_.find(id);
    return it == conns_.end() ? 0 : it->second.dropped;
}

std::optional<int> Session::controller() const {
    std::lock_guard lk(mu_);
    return controller_;
}

bool Session::is_shutdown() const {
    std::lock_guard lk(mu_);
    return stop_;
}

void Session::begin_episode(const env::EnvState&) {}

std::optional<training::Override> Session::poll(const env::EnvState&, const env::TaskSpec&) {
    std::lock_guard lk(mu_);
    while (!commands_.empty()) {
        const Command c = commands_.front();
        commands_.pop_front();
        if (c.release) {
            human_active_ = false;
            continue;
        }
        human_active_ = true;
        last_ = c.cmd;
        last_command_ = Clock::now();
        return training::Override{last_.arm, last_.grip};
    }
    if (!human_active_) return std::nullopt;
    if (Clock::now() - last_command_ > opt_.hold_timeout) {
        human_active_ = false;
        broadcast_locked(Kind::control, control_payload_locked("hold_timeout"));
        return std::nullopt;
    }
    return training::Override{last_.arm, last_.grip};
}

void Session::on_episode_start(int episode, const env::EnvState&) {
    std::lock_guard lk(mu_);
    episode_ = episode;
}

void Session::on_step(const training::StepView& view) {
    {
        std::lock_guard lk(mu_);
        broadcast_locked(Kind::state_frame, state_frame_payload(view));
    }
    if (opt_.step_interval.count() > 0) {
        next_step_ = std::max(next_step_ + opt_.step_interval, Clock::now());
        std::this_thread::sleep_until(next_step_);
    }
}

void Session::on_episode_end(const training::EpisodeRecord& record) {
    std::lock_guard lk(mu_);
    broadcast_locked(Kind::episode_end, episode_end_payload(record));
    broadcast_locked(Kind::metrics, metrics_payload(record));
}

bool Session::paused() {
    std::lock_guard lk(mu_);
    return paused_;
}

bool Session::stop_requested() {
    std::lock_guard lk(mu_);
    return stop_;
}

// ---- SessionServer ----

SessionServer::SessionServer(Session& session, const ws::Endpoint& endpoint)
    : session_(session), server_(endpoint) {
    acceptor_ = std::thread([this] { accept_loop(); });
}

SessionServer::~SessionServer() { stop(); }

void SessionServer::accept_loop() {
    while (!stop_) {
        auto conn = server_.accept(100);
        if (!conn) continue;
        auto client = std::make_unique<Client>();
        client->id = session_.connect();
        client->conn = std::move(conn);
        Client* c = client.get();
        c->reader = std::thread([this, c] {
            std::string text;
            while (!stop_) {
                const auto st = c->conn->read_message(text, 100);
                if (st == ws::ReadStatus::closed) break;
                if (st == ws::ReadStatus::message) session_.receive(c->id, text);
            }
            session_.disconnect(c->id);
        });
        c->writer = std::thread([this, c] {
            std::string text;
            for (;;) {
                const auto st = session_.pop_outbound(c->id, text, std::chrono::milliseconds(100));
                if (st == Session::Pop::closed) break;
                if (st == Session::Pop::message && !c->conn->send_text(text)) break;
                if (st == Session::Pop::timeout && (stop_ || !c->conn->open())) break;
            }
        });
        std::lock_guard lk(mu_);
        clients_.push_back(std::move(client));
    }
}

void SessionServer::stop() {
    if (stop_.exchange(true)) return;
    if (acceptor_.joinable()) acceptor_.join();
    server_.close();
    std::lock_guard lk(mu_);
    for (auto& c : clients_) c->conn->close(1001);
    for (auto& c : clients_) {
        if (c->reader.joinable()) c->reader.join();
        if (c->writer.joinable()) c->writer.join();
    }
    clients_.clear();
}

}  // namespace mori::labd
