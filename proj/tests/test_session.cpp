#include "mori/labd/session.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace mori;
using namespace mori::labd;
using nlohmann::json;

namespace {

std::string msg(const std::string& kind, std::uint64_t seq, json payload = json::object()) {
    return json{{"v", 1}, {"kind", kind}, {"seq", seq}, {"timestamp", 0.0}, {"payload", payload}}.dump();
}

std::string steer(std::uint64_t seq, double dx = 1.0, double dy = 0.0) {
    return msg("intervene", seq, {{"direction", {dx, dy}}, {"gripper", "open"}});
}

std::vector<json> drain(Session& s, int id) {
    std::vector<json> out;
    std::string text;
    while (s.pop_outbound(id, text, std::chrono::milliseconds(0)) == Session::Pop::message)
        out.push_back(json::parse(text));
    return out;
}

std::vector<json> of_kind(const std::vector<json>& v, const std::string& kind) {
    std::vector<json> out;
    for (const auto& m : v)
        if (m.at("kind") == kind) out.push_back(m);
    return out;
}

training::RunConfig tiny_config() {
    training::RunConfig c;
    c.arch.hidden = {16, 16};
    c.arch.gate_hidden = {8};
    c.batch = 16;
    c.n_demos = 2;
    c.n_offline = 20;
    c.online_episodes = 1;
    c.utd = 1;
    c.intervention.trigger = oracle::Trigger::off;
    return c;
}

}  // namespace

TEST_SUITE("session") {
    TEST_CASE("hello, ping and seq checks") {
        Session s({"drawer_place"});
        const int a = s.connect();
        auto hello = drain(s, a);
        REQUIRE(hello.size() == 1);
        CHECK(hello[0]["kind"] == "hello");
        CHECK(hello[0]["payload"]["protocol"] == 1);
        CHECK(hello[0]["payload"]["connection"] == a);

        s.receive(a, msg("ping", 4, {{"nonce", 7}}));
        s.receive(a, msg("ping", 4));
        s.receive(a, "{bad");
        s.receive(a, msg("hello", 9));
        const auto out = drain(s, a);
        REQUIRE(out.size() == 4);
        CHECK(out[0]["kind"] == "pong");
        CHECK(out[0]["payload"]["nonce"] == 7);
        CHECK(out[1]["payload"]["code"] == "stale_seq");
        CHECK(out[2]["payload"]["code"] == "bad_message");
        CHECK(out[3]["payload"]["code"] == "bad_message");
        for (std::size_t i = 1; i < out.size(); ++i) CHECK(out[i]["seq"] > out[i - 1]["seq"]);
    }

    TEST_CASE("one controller at a time") {
        Session s({"drawer_place"});
        const int a = s.connect(), b = s.connect();
        drain(s, a);
        drain(s, b);
        s.receive(a, steer(1));
        CHECK(s.controller() == a);
        s.receive(b, steer(1));
        s.receive(b, msg("release", 2));
        const auto eb = of_kind(drain(s, b), "error");
        REQUIRE(eb.size() == 2);
        CHECK(eb[0]["payload"]["code"] == "controller_busy");
        CHECK(eb[1]["payload"]["code"] == "not_controller");
        CHECK(s.controller() == a);
        s.receive(a, msg("release", 2));
        CHECK_FALSE(s.controller().has_value());
        s.receive(b, steer(3));
        CHECK(s.controller() == b);
    }

    TEST_CASE("commands are consumed one per step, repeated while held and released on timeout") {
        Session::Options o{"drawer_place"};
        o.hold_timeout = std::chrono::milliseconds(40);
        Session s(o);
        const auto task = env::default_task(env::TaskId::drawer_place);
        const auto st = env::reset(task, 0);
        const int a = s.connect();
        CHECK_FALSE(s.poll(st, task).has_value());
        s.receive(a, steer(1, 1.0, 0.0));
        s.receive(a, steer(2, 0.0, -1.0));
        auto first = s.poll(st, task);
        auto second = s.poll(st, task);
        auto held = s.poll(st, task);
        REQUIRE(first);
        REQUIRE(second);
        REQUIRE(held);
        CHECK(first->arm.delta[0] == 1.0);
        CHECK(second->arm.delta[1] == -1.0);
        CHECK(held->arm.delta[1] == -1.0);
        std::this_thread::sleep_for(std::chrono::milliseconds(60));
        CHECK_FALSE(s.poll(st, task).has_value());
        CHECK(s.actor() == buffers::Actor::human);
    }

    TEST_CASE("controller disconnect releases control and drops queued commands") {
        Session s({"drawer_place"});
        const auto task = env::default_task(env::TaskId::drawer_place);
        const auto st = env::reset(task, 0);
        const int a = s.connect(), b = s.connect();
        s.receive(a, steer(1));
        s.receive(a, steer(2));
        REQUIRE(s.poll(st, task));
        s.disconnect(a);
        CHECK_FALSE(s.controller().has_value());
        CHECK_FALSE(s.poll(st, task).has_value());
        const auto ctl = of_kind(drain(s, b), "control");
        REQUIRE_FALSE(ctl.empty());
        CHECK(ctl.back()["payload"]["reason"] == "controller_disconnected");
        std::string text;
        CHECK(s.pop_outbound(a, text, std::chrono::milliseconds(0)) == Session::Pop::closed);
    }

    TEST_CASE("lagging clients lose state frames but never control messages") {
        Session::Options o{"drawer_place"};
        o.queue_capacity = 4;
        Session s(o);
        const int a = s.connect();
        training::StepView v;
        for (int i = 0; i < 10; ++i) {
            v.step = i;
            s.on_step(v);
            if (i == 5) s.receive(a, msg("pause", 1));
        }
        const auto out = drain(s, a);
        CHECK(s.dropped_frames(a) > 0);
        CHECK(of_kind(out, "hello").size() == 1);
        CHECK(of_kind(out, "control").size() == 1);
        const auto frames = of_kind(out, "state_frame");
        CHECK(frames.size() <= 4);
        CHECK(frames.back()["payload"]["step"] == 9);
        for (std::size_t i = 1; i < out.size(); ++i) CHECK(out[i]["seq"] > out[i - 1]["seq"]);
    }

    TEST_CASE("five intervene messages then release yield exactly five intervened transitions") {
        const auto cfg = tiny_config();
        const auto task = cfg.task_spec();
        const auto demos = training::collect_demos(task, cfg.n_demos, cfg.demo_noise, cfg.seed);
        buffers::BufferSet buffers;
        buffers.load_offline(demos);
        auto bundle = training::pretrain(cfg, buffers);

        Session::Options o{"drawer_place"};
        o.start_paused = true;
        o.queue_capacity = 100000;
        Session s(o);
        const int a = s.connect(), b = s.connect();
        for (std::uint64_t i = 1; i <= 5; ++i) s.receive(a, steer(i, 0.0, 1.0));
        s.receive(b, steer(1, -1.0, 0.0));
        s.receive(a, msg("release", 6));
        s.receive(a, msg("resume", 7));

        const auto dir = std::filesystem::temp_directory_path() / "mori_test_session_run";
        std::filesystem::remove_all(dir);
        training::TrainOptions opt;
        opt.run_dir = dir;
        opt.source = &s;
        opt.observer = &s;
        const auto res = training::train_online(cfg, bundle, buffers, opt);
        REQUIRE(res.metrics.episodes.size() == 1);
        CHECK(res.metrics.episodes[0].intervened_steps == 5);

        int flagged = 0;
        std::ifstream in(dir / "trajectories.jsonl");
        std::string line;
        std::vector<json> dumped;
        while (std::getline(in, line)) {
            dumped.push_back(json::parse(line));
            if (dumped.back()["i"] == true) {
                ++flagged;
                CHECK(dumped.back()["actor"] == "human");
                CHECK(dumped.back()["a"][1] == 1.0);
            }
        }
        CHECK(flagged == 5);
        CHECK(buffers.counters().online_intervention == 5);

        const auto out_b = drain(s, b);
        const auto errors = of_kind(out_b, "error");
        REQUIRE(errors.size() == 1);
        CHECK(errors[0]["payload"]["code"] == "controller_busy");

        // Frames applied in seq order reproduce the replay buffer exactly.
        const auto frames = of_kind(out_b, "state_frame");
        REQUIRE(frames.size() == buffers.replay().size());
        for (std::size_t i = 0; i < frames.size(); ++i) {
            CHECK(buffers::transition_from_json(frames[i]["payload"]["transition"]) == buffers.replay()[i]);
            CHECK(frames[i]["payload"].contains("state"));
            CHECK(frames[i]["payload"]["decision"].contains("w_bc"));
        }
        CHECK(of_kind(out_b, "episode_end").size() == 1);
        CHECK(of_kind(out_b, "metrics").size() == 1);
        std::filesystem::remove_all(dir);
    }

    TEST_CASE("without clients a session run matches a run with interventions off") {
        auto cfg = tiny_config();
        const auto task = cfg.task_spec();
        const auto demos = training::collect_demos(task, cfg.n_demos, cfg.demo_noise, cfg.seed);
        buffers::BufferSet b1, b2;
        b1.load_offline(demos);
        b2.load_offline(demos);
        const auto bundle = training::pretrain(cfg, b1);
        Session s({"drawer_place"});
        training::TrainOptions with;
        with.source = &s;
        with.observer = &s;
        training::NoInterventions none;
        training::TrainOptions without;
        without.source = &none;
        const auto r1 = training::train_online(cfg, bundle, b1, with);
        const auto r2 = training::train_online(cfg, bundle, b2, without);
        CHECK(r1.bundle == r2.bundle);
        CHECK(b1.replay() == b2.replay());
    }

    TEST_CASE("websocket clients drive a live session") {
        Session s({"drawer_place"});
        SessionServer server(s, ws::Endpoint{"127.0.0.1", 0});
        auto a = ws::connect({"127.0.0.1", server.port()});
        auto b = ws::connect({"127.0.0.1", server.port()});
        auto read = [](ws::Connection& c) {
            std::string text;
            REQUIRE(c.read_message(text, 2000) == ws::ReadStatus::message);
            return json::parse(text);
        };
        CHECK(read(*a)["kind"] == "hello");
        CHECK(read(*b)["kind"] == "hello");
        a->send_text(steer(1));
        CHECK(read(*a)["payload"]["reason"] == "acquired");
        CHECK(read(*b)["payload"]["reason"] == "acquired");
        b->send_text(steer(1));
        const auto err = read(*b);
        CHECK(err["kind"] == "error");
        CHECK(err["payload"]["code"] == "controller_busy");
        a->close();
        const auto ctl = read(*b);
        CHECK(ctl["kind"] == "control");
        CHECK(ctl["payload"]["reason"] == "controller_disconnected");
        s.shutdown();
        server.stop();
    }
}
