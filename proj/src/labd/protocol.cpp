#include "mori/labd/protocol.hpp"

namespace mori::labd {

using nlohmann::json;

std::string to_string(Kind k) {
    switch (k) {
        case Kind::intervene: return "intervene";
        case Kind::release: return "release";
        case Kind::pause: return "pause";
        case Kind::resume: return "resume";
        case Kind::ping: return "ping";
        case Kind::hello: return "hello";
        case Kind::state_frame: return "state_frame";
        case Kind::metrics: return "metrics";
        case Kind::episode_end: return "episode_end";
        case Kind::control: return "control";
        case Kind::pong: return "pong";
        case Kind::error: return "error";
    }
    return "?";
}

Kind kind_from_string(const std::string& s) {
    for (Kind k : {Kind::intervene, Kind::release, Kind::pause, Kind::resume, Kind::ping, Kind::hello,
                   Kind::state_frame, Kind::metrics, Kind::episode_end, Kind::control, Kind::pong, Kind::error})
        if (to_string(k) == s) return k;
    throw ProtocolError("unknown message kind '" + s + "'");
}

bool client_kind(Kind k) {
    return k == Kind::intervene || k == Kind::release || k == Kind::pause || k == Kind::resume || k == Kind::ping;
}

std::string encode(const Message& m) {
    json j{{"v", kProtocolVersion},
           {"kind", to_string(m.kind)},
           {"seq", m.seq},
           {"timestamp", m.timestamp},
           {"payload", m.payload}};
    return j.dump();
}

Message decode(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error&) {
        throw ProtocolError("message is not valid JSON");
    }
    if (!j.is_object()) throw ProtocolError("message must be a JSON object");
    if (!j.contains("v")) throw ProtocolError("message lacks the mandatory field 'v'");
    if (!j["v"].is_number_integer() || j["v"].get<int>() != kProtocolVersion)
        throw ProtocolError("unsupported protocol version " + j["v"].dump() + ", expected 1");
    if (!j.contains("kind") || !j["kind"].is_string()) throw ProtocolError("message lacks a string 'kind'");
    if (!j.contains("seq") || !j["seq"].is_number_unsigned()) throw ProtocolError("message lacks a non-negative 'seq'");
    Message m;
    m.kind = kind_from_string(j["kind"].get<std::string>());
    m.seq = j["seq"].get<std::uint64_t>();
    if (j.contains("timestamp")) {
        if (!j["timestamp"].is_number()) throw ProtocolError("'timestamp' must be a number");
        m.timestamp = j["timestamp"].get<double>();
    }
    if (j.contains("payload")) {
        if (!j["payload"].is_object()) throw ProtocolError("'payload' must be an object");
        m.payload = j["payload"];
    }
    return m;
}

HumanCommand parse_intervene(const json& payload) {
    HumanCommand c;
    if (!payload.contains("direction")) throw ProtocolError("intervene payload needs 'direction'");
    const auto& d = payload["direction"];
    if (!d.is_array() || d.size() != 2 || !d[0].is_number() || !d[1].is_number())
        throw ProtocolError("'direction' must be an array of two numbers");
    const double dx = d[0].get<double>();
    const double dy = d[1].get<double>();
    if (!std::isfinite(dx) || !std::isfinite(dy)) throw ProtocolError("'direction' must be finite");
    c.arm = env::ArmAction(dx, dy);
    if (payload.contains("gripper")) {
        if (!payload["gripper"].is_string()) throw ProtocolError("'gripper' must be a string");
        try {
            c.grip.mode = env::gripper_from_string(payload["gripper"].get<std::string>());
        } catch (const std::invalid_argument& e) {
            throw ProtocolError(e.what());
        }
    }
    return c;
}

json state_json(const env::EnvState& s) {
    json objects = json::array();
    for (const auto& o : s.objects) objects.push_back({o.x, o.y});
    const auto& l = s.latches;
    return json{{"task", env::to_string(s.task)},
                {"ee_pos", {s.ee_pos.x, s.ee_pos.y}},
                {"ee_vel", {s.ee_vel.x, s.ee_vel.y}},
                {"gripper", env::to_string(s.gripper)},
                {"held", s.held},
                {"objects", objects},
                {"latches",
                 {{"drawer_opening", l.drawer_opening},
                  {"block_in_drawer", l.block_in_drawer},
                  {"block_offset", {l.block_offset.x, l.block_offset.y}},
                  {"lid_on", l.lid_on},
                  {"towel_in_box", l.towel_in_box},
                  {"plug_seated", {l.plug_seated[0], l.plug_seated[1]}},
                  {"fold_count", l.fold_count}}},
                {"step_index", s.step_index},
                {"done", s.done}};
}

json decision_json(const experts::GateDecision& d) {
    return json{{"w_bc", d.w_bc},
                {"w_rl", d.w_rl},
                {"sigma_bc", d.sigma_bc},
                {"sigma_rl", d.sigma_rl},
                {"selected", d.selected == experts::Expert::bc ? "bc" : "rl"}};
}

json transition_json(const buffers::Transition& t) { return buffers::transition_to_json(t); }

json state_frame_payload(const training::StepView& v) {
    json p{{"episode", v.episode}, {"step", v.step}, {"decision", decision_json(v.decision)}};
    if (v.before) p["state"] = state_json(*v.before);
    if (v.after) p["next_state"] = state_json(*v.after);
    if (v.transition) p["transition"] = transition_json(*v.transition);
    return p;
}

json episode_end_payload(const training::EpisodeRecord& r) {
    return json{{"episode", r.episode},
                {"env_seed", r.env_seed},
                {"success", r.success},
                {"length", r.length},
                {"intervened_steps", r.intervened_steps}};
}

json metrics_payload(const training::EpisodeRecord& r) {
    const auto l = r.losses.mean();
    return json{{"episode", r.episode},
                {"success", r.success},
                {"rl_selection_ratio", r.rl_ratio},
                {"demo_ratio", r.demo_ratio},
                {"auto_success_ratio", r.auto_success_ratio},
                {"replay_size", r.replay_size},
                {"losses",
                 {{"bc", l.bc},
                  {"dbc", l.dbc},
                  {"critic", l.critic},
                  {"actor", l.actor},
                  {"gate", l.gate},
                  {"alpha", l.alpha_value}}}};
}

}  // namespace mori::labd
