#include "mori/env/env.hpp"
#include "mori/oracle/oracle.hpp"
#include "mori/training/trainer.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace mori;

namespace {

bool oracle_episode(const env::TaskSpec& task, std::uint64_t seed) {
    oracle::OraclePolicy policy;
    policy.task = task.id;
    auto s = env::reset(task, seed);
    while (!s.done) {
        const auto out = oracle::oracle_act(policy, s, task);
        s = env::step(s, task, out.arm, out.grip).state;
    }
    return env::success(s, task);
}

}  // namespace

TEST_SUITE("env") {
    TEST_CASE("scripted oracle completes every task") {
        for (auto id : env::all_tasks()) {
            const auto task = env::default_task(id);
            int ok = 0;
            for (std::uint64_t seed = 0; seed < 50; ++seed) ok += oracle_episode(task, seed) ? 1 : 0;
            INFO(env::to_string(id));
            CHECK(ok == 50);
        }
    }

    TEST_CASE("reset is deterministic in the seed and observations have the declared size") {
        for (auto id : env::all_tasks()) {
            const auto task = env::default_task(id);
            const auto a = env::reset(task, 9);
            CHECK(a == env::reset(task, 9));
            CHECK_FALSE(a == env::reset(task, 10));
            CHECK(env::observe(a).size() == static_cast<std::size_t>(env::observation_dim(id)));
        }
    }

    TEST_CASE("arm actions are clamped to the unit box") {
        const env::ArmAction a(3.0, -0.25);
        CHECK(a.delta[0] == 1.0);
        CHECK(a.delta[1] == -0.25);
        const env::ArmAction b(-7.0, -7.0);
        CHECK(b.delta[0] == -1.0);
        CHECK(b.delta[1] == -1.0);
    }

    TEST_CASE("a step moves the end effector by at most max_step per axis") {
        const auto task = env::default_task(env::TaskId::drawer_place);
        const auto s = env::reset(task, 1);
        const auto r = env::step(s, task, env::ArmAction(1.0, 0.0), {});
        CHECK(r.state.ee_pos.x - s.ee_pos.x == doctest::Approx(task.geometry.max_step));
        CHECK(r.state.ee_pos.y == doctest::Approx(s.ee_pos.y));
        CHECK(r.state.step_index == 1);
    }

    TEST_CASE("episodes end at the horizon without reward when idle") {
        auto task = env::default_task(env::TaskId::lid_box);
        task.horizon = 12;
        auto s = env::reset(task, 3);
        int steps = 0;
        double reward = 0.0;
        while (!s.done) {
            const auto r = env::step(s, task, env::ArmAction(0.0, 0.0), {});
            reward += r.reward;
            s = r.state;
            ++steps;
        }
        CHECK(steps == 12);
        CHECK(reward == 0.0);
    }

    TEST_CASE("demonstrations are reproducible and flagged as offline") {
        const auto task = env::default_task(env::TaskId::dual_insert);
        const auto a = training::collect_demos(task, 3, 0.02, 4);
        const auto b = training::collect_demos(task, 3, 0.02, 4);
        CHECK(a == b);
        for (const auto& ep : a)
            for (const auto& t : ep) CHECK(t.source == buffers::Source::offline_demo);
    }

    TEST_CASE("task files override defaults and reject unknown or mismatched fields") {
        const auto dir = std::filesystem::temp_directory_path() / "mori_test_tasks";
        std::filesystem::create_directories(dir);
        auto write = [&](const std::string& name, const std::string& text) {
            std::ofstream(dir / name) << text;
            return dir / name;
        };
        const auto t = env::load_task(write(
            "ok.json", R"({"task": "drawer_place", "horizon": 150, "init": {"block": {"half_extent": [0.01, 0.01]}}})"));
        CHECK(t.horizon == 150);
        CHECK(t.init.at("block").half_extent.x == 0.01);
        CHECK(t.init.at("block").center.x == env::default_task(env::TaskId::drawer_place).init.at("block").center.x);
        CHECK_THROWS_AS(env::load_task(write("bad_key.json", R"({"task": "lid_box", "colour": 1})")),
                        std::invalid_argument);
        CHECK_THROWS_AS(
            env::load_task(write("bad_pred.json", R"({"task": "lid_box", "success_predicate": "plugs_seated"})")),
            std::invalid_argument);
        CHECK_THROWS_AS(env::load_task(write("bad_init.json", R"({"task": "lid_box", "init": {"plug0": {}}})")),
                        std::invalid_argument);
        const auto round = env::task_from_json(env::task_to_json(env::default_task(env::TaskId::double_fold)));
        CHECK(round.horizon == env::default_task(env::TaskId::double_fold).horizon);
        CHECK(round.geometry == env::default_task(env::TaskId::double_fold).geometry);
        std::filesystem::remove_all(dir);
    }
}
