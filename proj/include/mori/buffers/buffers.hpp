#pragma once

#include "mori/env/env.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace mori::buffers {

enum class Source { offline_demo, online_intervention, online_policy };
enum class Actor { oracle, bc, rl, human };  // who produced the executed arm action

std::string to_string(Source s);
Source source_from_string(const std::string& s);
std::string to_string(Actor a);
Actor actor_from_string(const std::string& s);

struct Transition {
    std::vector<float> state;
    std::array<float, 2> arm_action{0.0f, 0.0f};
    env::GripperMode gripper_action = env::GripperMode::hold;
    float reward = 0.0f;
    std::vector<float> next_state;
    bool done = false;
    bool intervened = false;
    Source source = Source::online_policy;
    Actor actor = Actor::oracle;

    bool operator==(const Transition&) const = default;
};

using Episode = std::vector<Transition>;

class RoutingError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

enum class Store { demo, success, replay };
std::string to_string(Store s);

struct Ratios {
    double demo_ratio = 0.0;          // |D_demo| / |D_replay|
    double auto_success_ratio = 0.0;  // non-intervened successful online steps / |D_replay|
};

struct Counters {
    std::int64_t offline_demo = 0;
    std::int64_t online_intervention = 0;
    std::int64_t online_policy = 0;
    std::int64_t auto_success = 0;
    std::int64_t online_episodes = 0;
    std::int64_t online_successes = 0;
    std::int64_t fallback_warnings = 0;
    bool operator==(const Counters&) const = default;
};

struct Sample {
    const Transition* transition;
    Store from;
};

// The three append-only datasets: demonstrations plus interventions, successful
// episodes, and every online transition.
class BufferSet {
public:
    explicit BufferSet(std::size_t capacity = 500000) : capacity_(capacity) {}

    // Offline demos go to D_demo; successful ones also seed D_success.
    void load_offline(const std::vector<Episode>& demos);
    void ingest_episode(const Episode& episode);

    // Half from D_success, half from D_demo, uniform within each.
    std::vector<Sample> sample_bc(std::size_t batch, std::mt19937_64& rng);
    std::vector<Sample> sample_bc(std::size_t batch, std::uint64_t seed);
    // Half from D_replay, half from D_demo.
    std::vector<Sample> sample_rl(std::size_t batch, std::mt19937_64& rng);
    std::vector<Sample> sample_rl(std::size_t batch, std::uint64_t seed);

    Ratios ratios() const;

    const std::vector<Transition>& demo() const { return demo_; }
    const std::vector<Transition>& success() const { return success_; }
    const std::vector<Transition>& replay() const { return replay_; }
    const std::vector<Transition>& store(Store s) const;
    const std::vector<std::size_t>& episode_ends(Store s) const;
    const Counters& counters() const { return counters_; }
    std::size_t capacity() const { return capacity_; }

    // <dir>/{demo,success,replay}.jsonl plus manifest.json with per-source counts.
    void save(const std::filesystem::path& dir) const;
    static BufferSet load(const std::filesystem::path& dir);

private:
    std::vector<Sample> sample_pair(std::size_t batch, std::mt19937_64& rng, Store a, Store b);
    void append(Store s, const Episode& ep, bool only_intervened);
    static void validate_episode(const Episode& ep);

    std::size_t capacity_;
    std::vector<Transition> demo_, success_, replay_;
    std::vector<std::size_t> demo_ends_, success_ends_, replay_ends_;
    Counters counters_;
};

// Load and save episode lists as line-delimited records.
void save_episodes(const std::filesystem::path& file, const std::vector<Episode>& episodes);
std::vector<Episode> load_episodes(const std::filesystem::path& file);
// Record keys: s, a, g, r, s2, d, i, src, actor.
nlohmann::json transition_to_json(const Transition& t);
Transition transition_from_json(const nlohmann::json& j);
// One line per step, each tagged with the episode index.
std::string episode_jsonl(const Episode& episode, std::size_t index);

}  // namespace mori::buffers
