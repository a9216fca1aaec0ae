#pragma once

#include "mori/labd/protocol.hpp"
#include "mori/labd/websocket.hpp"
#include "mori/training/trainer.hpp"

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace mori::labd {

// The hub between the training loop and connected clients. It is the
// InterventionSource and RolloutObserver handed to train_online, and it is
// transport agnostic: connections are integer ids that push inbound text with
// receive() and pull outbound text with pop_outbound().
//
// One client at a time may be the controller. Each intervene message drives
// exactly one environment step, in arrival order. When the queue is empty the
// last command is repeated until `hold_timeout` passes without a new one, at
// which point control returns to the policy.
class Session : public training::InterventionSource, public training::RolloutObserver {
public:
    struct Options {
        std::string task;
        std::size_t queue_capacity = 256;  // per connection
        std::chrono::milliseconds hold_timeout{1000};
        std::chrono::milliseconds step_interval{0};  // pacing of environment steps
        bool start_paused = false;
    };

    enum class Pop { message, timeout, closed };

    explicit Session(Options options);

    int connect();
    void disconnect(int id);
    void receive(int id, const std::string& text);
    Pop pop_outbound(int id, std::string& out, std::chrono::milliseconds wait);
    void shutdown();

    std::size_t dropped_frames(int id) const;
    std::optional<int> controller() const;
    bool is_shutdown() const;

    // InterventionSource
    void begin_episode(const env::EnvState& state) override;
    std::optional<training::Override> poll(const env::EnvState& state, const env::TaskSpec& task) override;
    buffers::Actor actor() const override { return buffers::Actor::human; }

    // RolloutObserver
    void on_episode_start(int episode, const env::EnvState& state) override;
    void on_step(const training::StepView& view) override;
    void on_episode_end(const training::EpisodeRecord& record) override;
    bool paused() override;
    bool stop_requested() override;

private:
    struct Outgoing {
        std::string text;
        bool droppable = false;
    };
    struct Conn {
        std::uint64_t next_seq = 0;
        std::optional<std::uint64_t> last_inbound;
        std::deque<Outgoing> queue;
        std::size_t dropped = 0;
        bool open = true;
    };
    struct Command {
        bool release = false;
        HumanCommand cmd;
    };

    double now_ms() const;
    void send_locked(int id, Kind kind, nlohmann::json payload);
    void broadcast_locked(Kind kind, const nlohmann::json& payload);
    void error_locked(int id, const std::string& code, const std::string& message,
                      std::optional<std::uint64_t> in_reply_to);
    nlohmann::json control_payload_locked(const std::string& reason) const;
    void release_locked(const std::string& reason);

    Options opt_;
    std::chrono::steady_clock::time_point t0_;
    mutable std::mutex mu_;
    std::condition_variable out_cv_;
    std::map<int, Conn> conns_;
    int next_id_ = 1;
    std::optional<int> controller_;
    std::deque<Command> commands_;
    bool human_active_ = false;
    HumanCommand last_;
    std::chrono::steady_clock::time_point last_command_;
    bool paused_ = false;
    bool stop_ = false;
    int episode_ = -1;
    std::chrono::steady_clock::time_point next_step_;
};

// Serves a Session over websockets: one accept thread plus a reader and a
// writer thread per connection.
class SessionServer {
public:
    SessionServer(Session& session, const ws::Endpoint& endpoint);
    ~SessionServer();
    SessionServer(const SessionServer&) = delete;
    SessionServer& operator=(const SessionServer&) = delete;

    int port() const { return server_.port(); }
    void stop();

private:
    struct Client {
        int id = 0;
        std::unique_ptr<ws::Connection> conn;
        std::thread reader, writer;
    };

    void accept_loop();

    Session& session_;
    ws::Server server_;
    std::atomic<bool> stop_{false};
    std::mutex mu_;
    std::vector<std::unique_ptr<Client>> clients_;
    std::thread acceptor_;
};

}  // namespace mori::labd
