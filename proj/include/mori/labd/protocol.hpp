#pragma once

#include "mori/env/env.hpp"
#include "mori/experts/experts.hpp"
#include "mori/training/trainer.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace mori::labd {

inline constexpr int kProtocolVersion = 1;

class ProtocolError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Every message on the wire is one JSON object:
//   {"v": 1, "kind": ..., "seq": n, "timestamp": ms, "payload": {...}}
enum class Kind {
    // client to server
    intervene,
    release,
    pause,
    resume,
    ping,
    // server to client
    hello,
    state_frame,
    metrics,
    episode_end,
    control,
    pong,
    error,
};

std::string to_string(Kind k);
Kind kind_from_string(const std::string& s);
bool client_kind(Kind k);

struct Message {
    Kind kind = Kind::ping;
    std::uint64_t seq = 0;
    double timestamp = 0.0;  // milliseconds since the session started
    nlohmann::json payload = nlohmann::json::object();
};

std::string encode(const Message& m);
// Throws ProtocolError on malformed text, a missing or wrong "v", an unknown
// kind or a payload that is not an object.
Message decode(const std::string& text);

struct HumanCommand {
    env::ArmAction arm;
    env::GripperAction grip;
};

// intervene payload: {"direction": [dx, dy], "gripper": "open|hold|closed"}.
// The direction is clamped exactly as ArmAction does; gripper defaults to hold.
HumanCommand parse_intervene(const nlohmann::json& payload);

nlohmann::json state_json(const env::EnvState& s);
nlohmann::json decision_json(const experts::GateDecision& d);
nlohmann::json transition_json(const buffers::Transition& t);
nlohmann::json state_frame_payload(const training::StepView& v);
nlohmann::json episode_end_payload(const training::EpisodeRecord& r);
nlohmann::json metrics_payload(const training::EpisodeRecord& r);

}  // namespace mori::labd
