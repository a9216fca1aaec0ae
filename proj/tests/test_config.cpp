#include "mori/training/config.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>

using namespace mori;
using training::RunConfig;

TEST_SUITE("config") {
    TEST_CASE("defaults are valid and survive a JSON round trip") {
        RunConfig c;
        CHECK_NOTHROW(c.validate());
        CHECK(training::config_from_json(training::to_json(c)) == c);
    }

    TEST_CASE("dot-path overrides set nested keys") {
        RunConfig c;
        training::apply_override(c, "lr.critic=1e-3");
        training::apply_override(c, "intervention.trigger=off");
        training::apply_override(c, "arch.hidden=[32,32]");
        training::apply_override(c, "task=lid_box");
        CHECK(c.lr.critic == doctest::Approx(1e-3));
        CHECK(c.intervention.trigger == oracle::Trigger::off);
        CHECK(c.arch.hidden == std::vector<int>{32, 32});
        CHECK(c.task == env::TaskId::lid_box);
    }

    TEST_CASE("bad overrides are rejected without touching the config") {
        RunConfig c;
        const RunConfig before = c;
        CHECK_THROWS_AS(training::apply_override(c, "lr.nope=1"), nn::ConfigError);
        CHECK_THROWS_AS(training::apply_override(c, "gamma"), nn::ConfigError);
        CHECK_THROWS_AS(training::apply_override(c, "gamma=1.5"), nn::ConfigError);
        CHECK_THROWS_AS(training::apply_override(c, "lr=3"), nn::ConfigError);
        CHECK_THROWS_AS(training::apply_override(c, "task=kitchen"), nn::ConfigError);
        CHECK(c == before);
    }

    TEST_CASE("variants set exactly one ablation flag") {
        RunConfig c;
        training::apply_variant(c, "no_bc_reg");
        CHECK(c.ablation.no_bc_reg);
        CHECK(c.effective_beta_reg() == 0.0);
        training::apply_variant(c, "gripper_dqn");
        CHECK_FALSE(c.ablation.no_bc_reg);
        CHECK(c.gripper_source() == experts::GripperSource::dqn);
        training::apply_variant(c, "bc_only");
        CHECK(c.selection() == experts::Selection::bc_only);
        CHECK_THROWS_AS(training::apply_variant(c, "everything"), nn::ConfigError);
    }

    TEST_CASE("config files load and report unreadable input") {
        const auto dir = std::filesystem::temp_directory_path() / "mori_test_config";
        std::filesystem::create_directories(dir);
        RunConfig c;
        c.seed = 77;
        c.batch = 32;
        training::save_config(dir / "run.json", c);
        CHECK(training::load_config(dir / "run.json") == c);
        CHECK_THROWS_AS(training::load_config(dir / "missing.json"), nn::ConfigError);
        std::ofstream(dir / "broken.json") << "{ not json";
        CHECK_THROWS_AS(training::load_config(dir / "broken.json"), nn::ConfigError);
        std::filesystem::remove_all(dir);
    }

    TEST_CASE("a task file for another task is a configuration error") {
        const auto dir = std::filesystem::temp_directory_path() / "mori_test_config_task";
        std::filesystem::create_directories(dir);
        std::ofstream(dir / "lid.json") << R"({"task": "lid_box", "horizon": 120})";
        RunConfig c;
        c.task_file = (dir / "lid.json").string();
        CHECK_THROWS_AS(c.task_spec(), nn::ConfigError);
        c.task = env::TaskId::lid_box;
        c.arch.obs_dim = env::observation_dim(c.task);
        CHECK(c.task_spec().horizon == 120);
        std::filesystem::remove_all(dir);
    }
}
