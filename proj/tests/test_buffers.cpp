#include "checks/checks.hpp"
#include "mori/buffers/buffers.hpp"

#include <doctest.h>

#include <filesystem>

using namespace mori;
using buffers::Source;
using buffers::Transition;

namespace {

buffers::Episode episode(int n, int intervened, bool success, Source policy = Source::online_policy) {
    buffers::Episode ep;
    for (int i = 0; i < n; ++i) {
        Transition t;
        t.state = {static_cast<float>(i), 1.0f};
        t.next_state = {static_cast<float>(i + 1), 1.0f};
        t.done = i + 1 == n;
        t.reward = success && t.done ? 1.0f : 0.0f;
        t.intervened = i < intervened;
        t.source = t.intervened ? Source::online_intervention : policy;
        ep.push_back(t);
    }
    return ep;
}

}  // namespace

TEST_SUITE("buffers") {
    TEST_CASE("routing partition holds exhaustively and samplers split evenly") {
        const auto r = checks::buffer_routing(7, 100000);
        INFO(r.first_violation);
        CHECK(r.violations == 0);
        CHECK(r.episodes > 500);
        CHECK(r.draws >= 100000);
        CHECK(std::abs(r.bc_success_fraction - 0.5) <= checks::kSamplerTolerance);
        CHECK(std::abs(r.rl_replay_fraction - 0.5) <= checks::kSamplerTolerance);
    }

    TEST_CASE("failed episode without interventions only grows replay") {
        buffers::BufferSet b;
        b.ingest_episode(episode(6, 0, false));
        CHECK(b.replay().size() == 6);
        CHECK(b.demo().empty());
        CHECK(b.success().empty());
    }

    TEST_CASE("successful episode with three intervened steps") {
        buffers::BufferSet b;
        b.ingest_episode(episode(10, 3, true));
        CHECK(b.replay().size() == 10);
        CHECK(b.demo().size() == 3);
        CHECK(b.success().size() == 10);
        CHECK(b.counters().auto_success == 7);
        const auto r = b.ratios();
        CHECK(r.demo_ratio == doctest::Approx(0.3));
        CHECK(r.auto_success_ratio == doctest::Approx(0.7));
    }

    TEST_CASE("malformed episodes are rejected") {
        buffers::BufferSet b;
        auto ep = episode(4, 0, false);
        ep[1].done = true;
        CHECK_THROWS_AS(b.ingest_episode(ep), buffers::RoutingError);
        CHECK_THROWS_AS(b.ingest_episode({}), buffers::RoutingError);
        CHECK_THROWS_AS(b.ingest_episode(episode(3, 0, true, Source::offline_demo)), buffers::RoutingError);
        CHECK(b.replay().empty());
    }

    TEST_CASE("buffers and episode files round-trip") {
        buffers::BufferSet b;
        b.load_offline({episode(5, 0, true, Source::offline_demo)});
        b.ingest_episode(episode(4, 2, false));
        const auto dir = std::filesystem::temp_directory_path() / "mori_test_buffers";
        std::filesystem::remove_all(dir);
        b.save(dir);
        const auto back = buffers::BufferSet::load(dir);
        CHECK(back.demo() == b.demo());
        CHECK(back.success() == b.success());
        CHECK(back.replay() == b.replay());
        CHECK(back.counters() == b.counters());
        const std::vector<buffers::Episode> eps{episode(3, 1, true), episode(2, 0, false)};
        buffers::save_episodes(dir / "eps.jsonl", eps);
        CHECK(buffers::load_episodes(dir / "eps.jsonl") == eps);
        std::filesystem::remove_all(dir);
    }
}
