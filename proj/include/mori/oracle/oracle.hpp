#pragma once

#include "mori/env/env.hpp"

#include <array>
#include <cstdint>
#include <deque>
#include <string>

namespace mori::oracle {

using env::ArmAction;
using env::EnvState;
using env::GripperAction;
using env::GripperMode;
using env::TaskId;
using env::Vec2;

inline constexpr int kMaxPhases = 8;

// One step of the scripted program: where to go, the gripper command while
// travelling, and the command issued once within `arrive_tolerance`.
struct Waypoint {
    int phase = -1;  // -1: no applicable phase (task finished or unrecognized state)
    std::string name;
    Vec2 target;
    GripperMode en_route = GripperMode::open;
    GripperMode on_arrival = GripperMode::closed;
    double arrive_tolerance = 0.005;
};

struct OraclePolicy {
    TaskId task = TaskId::drawer_place;
    double noise_scale = 0.0;      // std of per-episode approach offsets
    double noise_fade = 0.15;      // offsets fade out linearly within this distance of the target
    double gain = 1.0;             // proportional gain in units of max_step
    double max_speed = 0.6;        // infinity-norm cap on the commanded delta
    std::array<Vec2, kMaxPhases> offsets{};  // drawn by with_noise()

    // Same policy with approach offsets drawn from `seed`.
    OraclePolicy with_noise(double scale, std::uint64_t seed) const;
};

struct OracleOutput {
    ArmAction arm;
    GripperAction grip;
    Waypoint waypoint;
    bool no_phase = false;  // raised when no program step applies; the arm holds position
};

// Program step selected purely from the state, so the oracle can take over
// from any state mid-episode.
Waypoint current_waypoint(const EnvState& state, const env::TaskSpec& task);

OracleOutput oracle_act(const OraclePolicy& policy, const EnvState& state, const env::TaskSpec& task);

// ---- automated intervention ----

enum class Trigger { off, stuck, out_of_region };

std::string to_string(Trigger t);
Trigger trigger_from_string(const std::string& s);

// Stuck is measured against the oracle's program: no reduction of at least
// `progress_eps` in distance to the current waypoint over `stuck_steps` steps
// spent in the same phase. out_of_region fires when the end effector is
// within `region_margin` of a workspace wall.
struct InterventionRule {
    Trigger trigger = Trigger::stuck;
    int stuck_steps = 15;
    double progress_eps = 0.005;
    double region_margin = 0.02;
    int max_per_episode = 3;
    int handover_steps = 10;

    void validate() const;
    bool operator==(const InterventionRule&) const = default;
};

struct ProgressSample {
    Vec2 ee;
    int phase = -1;
    double target_distance = 0.0;
};

enum class Decision { none, take_over };

Decision maybe_intervene(const InterventionRule& rule, const std::deque<ProgressSample>& history,
                         const EnvState& state, int interventions_used);

// Per-episode bookkeeping for the rule: keeps the history window, the
// remaining handover steps, and the budget.
class InterventionTracker {
public:
    explicit InterventionTracker(InterventionRule rule) : rule_(rule) {}

    void reset();
    // Records `state` and returns true when the oracle controls this step.
    bool oracle_controls(const EnvState& state, const env::TaskSpec& task);

    int interventions() const { return used_; }
    bool in_handover() const { return handover_left_ > 0; }
    const InterventionRule& rule() const { return rule_; }

private:
    void record(const EnvState& state, const env::TaskSpec& task);

    InterventionRule rule_;
    std::deque<ProgressSample> history_;
    int used_ = 0;
    int handover_left_ = 0;
};

}  // namespace mori::oracle
