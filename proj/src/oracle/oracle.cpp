#include "mori/oracle/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace mori::oracle {

using namespace env::layout;
namespace obj = env::obj;

OraclePolicy OraclePolicy::with_noise(double scale, std::uint64_t seed) const {
    OraclePolicy p = *this;
    p.noise_scale = scale;
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto& o : p.offsets) {
        const double a = n(rng);
        const double b = n(rng);
        o = scale > 0.0 ? Vec2{a * scale, b * scale} : Vec2{};
    }
    return p;
}

namespace {

// Grasps close once within this distance; the grasp radius is twice as large.
constexpr double kGraspArrive = 0.015;
constexpr double kPlaceArrive = 0.015;

Waypoint go_grasp(int phase, const char* name, Vec2 target) {
    return {phase, name, target, GripperMode::open, GripperMode::closed, kGraspArrive};
}

Waypoint carry_release(int phase, const char* name, Vec2 target, double tol) {
    return {phase, name, target, GripperMode::hold, GripperMode::open, tol};
}

Waypoint drawer(const EnvState& s) {
    const auto& l = s.latches;
    if (s.held == obj::kHandle) {
        if (l.block_in_drawer)
            return {3, "push_closed", {kDrawerFrontX, kDrawerY}, GripperMode::hold, GripperMode::hold, 0.008};
        return carry_release(1, "pull_open", {kDrawerFrontX - kDrawerPullTo, kDrawerY}, 0.01);
    }
    if (s.held == obj::kBlock) {
        if (l.drawer_opening >= kDrawerOpenAt)
            return carry_release(2, "place_block", env::drawer_interior(l.drawer_opening), kPlaceArrive);
        return carry_release(4, "drop_block", s.ee_pos, 1.0);
    }
    if (l.block_in_drawer) {
        if (l.drawer_opening <= kDrawerClosedAt) return {};
        return go_grasp(5, "reach_handle_close", s.objects[obj::kHandle]);
    }
    if (l.drawer_opening < kDrawerOpenAt) return go_grasp(0, "reach_handle", s.objects[obj::kHandle]);
    return go_grasp(6, "reach_block", s.objects[obj::kBlock]);
}

Waypoint lid_box(const EnvState& s) {
    const auto& l = s.latches;
    if (s.held == obj::kLid) {
        if (l.towel_in_box) return carry_release(5, "replace_lid", kBoxCenter, kPlaceArrive);
        return carry_release(1, "set_lid_aside", kLidRest, kPlaceArrive);
    }
    if (s.held == obj::kTowel) {
        if (l.lid_on) return carry_release(6, "drop_towel", s.ee_pos, 1.0);
        return carry_release(3, "place_towel", kBoxCenter, kPlaceArrive);
    }
    if (l.towel_in_box) {
        if (l.lid_on) return {};
        return go_grasp(4, "reach_lid_again", s.objects[obj::kLid]);
    }
    if (l.lid_on) return go_grasp(0, "reach_lid", s.objects[obj::kLid]);
    return go_grasp(2, "reach_towel", s.objects[obj::kTowel]);
}

Waypoint dual_insert(const EnvState& s) {
    const auto& l = s.latches;
    if (s.held == obj::kPlug0) return carry_release(1, "insert_plug0", kSockets[0], 0.004);
    if (s.held == obj::kPlug1) return carry_release(3, "insert_plug1", kSockets[1], 0.004);
    if (!l.plug_seated[0]) return go_grasp(0, "reach_plug0", s.objects[obj::kPlug0]);
    if (!l.plug_seated[1]) return go_grasp(2, "reach_plug1", s.objects[obj::kPlug1]);
    return {};
}

Waypoint double_fold(const EnvState& s) {
    const int fold = s.latches.fold_count;
    if (fold >= 2) return {};
    const Vec2 c = s.objects[obj::kCloth];
    if (s.held == obj::kFoldPoint)
        return carry_release(2 * fold + 1, fold == 0 ? "drag_fold1" : "drag_fold2",
                             c + (fold == 0 ? kFoldTarget1 : kFoldTarget2), kPlaceArrive);
    return go_grasp(2 * fold, fold == 0 ? "reach_fold1" : "reach_fold2", s.objects[obj::kFoldPoint]);
}

}  // namespace

Waypoint current_waypoint(const EnvState& state, const env::TaskSpec& task) {
    switch (task.id) {
        case TaskId::drawer_place: return drawer(state);
        case TaskId::lid_box: return lid_box(state);
        case TaskId::dual_insert: return dual_insert(state);
        case TaskId::double_fold: return double_fold(state);
    }
    return {};
}

OracleOutput oracle_act(const OraclePolicy& policy, const EnvState& state, const env::TaskSpec& task) {
    OracleOutput out;
    out.waypoint = current_waypoint(state, task);
    const Waypoint& wp = out.waypoint;
    if (wp.phase < 0) {
        out.no_phase = true;
        out.arm = ArmAction(0.0, 0.0);
        out.grip = GripperAction{GripperMode::hold};
        return out;
    }
    const double d = env::dist(state.ee_pos, wp.target);
    Vec2 cmd = wp.target;
    if (policy.noise_scale > 0.0 && wp.phase < kMaxPhases) {
        const double fade = std::clamp(d / policy.noise_fade, 0.0, 1.0);
        cmd = cmd + policy.offsets[wp.phase] * fade;
    }
    const double step = task.geometry.max_step;
    double vx = policy.gain * (cmd.x - state.ee_pos.x) / step;
    double vy = policy.gain * (cmd.y - state.ee_pos.y) / step;
    const double inf = std::max(std::abs(vx), std::abs(vy));
    if (inf > policy.max_speed) {
        vx *= policy.max_speed / inf;
        vy *= policy.max_speed / inf;
    }
    out.arm = ArmAction(vx, vy);
    out.grip = GripperAction{d <= wp.arrive_tolerance ? wp.on_arrival : wp.en_route};
    return out;
}

std::string to_string(Trigger t) {
    switch (t) {
        case Trigger::off: return "off";
        case Trigger::stuck: return "stuck";
        case Trigger::out_of_region: return "out_of_region";
    }
    return "?";
}

Trigger trigger_from_string(const std::string& s) {
    if (s == "off") return Trigger::off;
    if (s == "stuck") return Trigger::stuck;
    if (s == "out_of_region") return Trigger::out_of_region;
    throw std::invalid_argument("unknown intervention trigger '" + s + "'");
}

void InterventionRule::validate() const {
    if (stuck_steps < 1) throw std::invalid_argument("intervention stuck_steps must be >= 1");
    if (region_margin <= 0.0) throw std::invalid_argument("intervention region_margin must be > 0");
    if (max_per_episode < 0 || handover_steps < 1)
        throw std::invalid_argument("intervention budget/handover must be non-negative/positive");
}

Decision maybe_intervene(const InterventionRule& rule, const std::deque<ProgressSample>& history,
                         const EnvState& state, int interventions_used) {
    if (rule.trigger == Trigger::off) return Decision::none;
    if (interventions_used >= rule.max_per_episode) return Decision::none;
    if (rule.trigger == Trigger::out_of_region) {
        const auto& p = state.ee_pos;
        const double m = rule.region_margin;
        const bool out = p.x < m || p.y < m || p.x > 1.0 - m || p.y > 1.0 - m;
        return out ? Decision::take_over : Decision::none;
    }
    const auto k = static_cast<std::size_t>(rule.stuck_steps);
    if (history.size() < k + 1) return Decision::none;
    const std::size_t start = history.size() - k - 1;
    const int phase = history.back().phase;
    double best = history[start].target_distance;
    for (std::size_t i = start; i < history.size(); ++i) {
        if (history[i].phase != phase) return Decision::none;
        best = std::min(best, history[i].target_distance);
    }
    const bool progressed = history[start].target_distance - best >= rule.progress_eps;
    return progressed ? Decision::none : Decision::take_over;
}

void InterventionTracker::reset() {
    history_.clear();
    used_ = 0;
    handover_left_ = 0;
}

void InterventionTracker::record(const EnvState& state, const env::TaskSpec& task) {
    const Waypoint wp = current_waypoint(state, task);
    history_.push_back({state.ee_pos, wp.phase, wp.phase < 0 ? 0.0 : env::dist(state.ee_pos, wp.target)});
    const auto keep = static_cast<std::size_t>(rule_.stuck_steps + 1);
    while (history_.size() > keep) history_.pop_front();
}

bool InterventionTracker::oracle_controls(const EnvState& state, const env::TaskSpec& task) {
    record(state, task);
    if (handover_left_ > 0) {
        --handover_left_;
        return true;
    }
    if (maybe_intervene(rule_, history_, state, used_) == Decision::take_over) {
        ++used_;
        handover_left_ = rule_.handover_steps - 1;
        history_.clear();
        return true;
    }
    return false;
}

}  // namespace mori::oracle
