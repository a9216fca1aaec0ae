#include "mori/env/env.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace mori::env {

using namespace layout;

double norm(Vec2 v) { return std::hypot(v.x, v.y); }
double dist(Vec2 a, Vec2 b) { return norm(a - b); }

ArmAction::ArmAction(double dx, double dy) : delta{std::clamp(dx, -1.0, 1.0), std::clamp(dy, -1.0, 1.0)} {}

std::string to_string(TaskId id) {
    switch (id) {
        case TaskId::drawer_place: return "drawer_place";
        case TaskId::lid_box: return "lid_box";
        case TaskId::dual_insert: return "dual_insert";
        case TaskId::double_fold: return "double_fold";
    }
    return "?";
}

TaskId task_from_string(const std::string& s) {
    for (TaskId id : all_tasks())
        if (to_string(id) == s) return id;
    throw std::invalid_argument("unknown task '" + s + "'");
}

std::string to_string(GripperMode m) {
    switch (m) {
        case GripperMode::open: return "open";
        case GripperMode::hold: return "hold";
        case GripperMode::closed: return "closed";
    }
    return "?";
}

GripperMode gripper_from_string(const std::string& s) {
    if (s == "open") return GripperMode::open;
    if (s == "hold") return GripperMode::hold;
    if (s == "closed") return GripperMode::closed;
    throw std::invalid_argument("unknown gripper mode '" + s + "'");
}

const std::vector<TaskId>& all_tasks() {
    static const std::vector<TaskId> tasks{TaskId::drawer_place, TaskId::lid_box, TaskId::dual_insert,
                                           TaskId::double_fold};
    return tasks;
}

TaskSpec default_task(TaskId id) {
    TaskSpec t;
    t.id = id;
    t.init["ee"] = {{0.5, 0.5}, {0.02, 0.02}};
    switch (id) {
        case TaskId::drawer_place:
            t.horizon = 200;
            t.init["block"] = {{0.3, 0.7}, {0.075, 0.075}};
            t.success_predicate = "drawer_closed_with_block";
            break;
        case TaskId::lid_box:
            t.horizon = 300;
            t.init["towel"] = {{0.25, 0.3}, {0.05, 0.05}};
            t.success_predicate = "towel_in_box_lid_on";
            break;
        case TaskId::dual_insert:
            t.horizon = 200;
            t.init["plug0"] = {{0.2, 0.35}, {0.03, 0.03}};
            t.init["plug1"] = {{0.2, 0.65}, {0.03, 0.03}};
            t.success_predicate = "both_plugs_seated";
            break;
        case TaskId::double_fold:
            t.horizon = 300;
            t.init["cloth"] = {{0.5, 0.5}, {0.04, 0.04}};
            t.success_predicate = "two_folds";
            break;
    }
    return t;
}

namespace {

constexpr double kFineScale = 0.03;

bool inside_workspace(const InitRange& r) {
    return r.half_extent.x >= 0 && r.half_extent.y >= 0 && r.center.x - r.half_extent.x >= 0.0 &&
           r.center.x + r.half_extent.x <= 1.0 && r.center.y - r.half_extent.y >= 0.0 &&
           r.center.y + r.half_extent.y <= 1.0;
}

std::vector<std::string> required_keys(TaskId id) {
    switch (id) {
        case TaskId::drawer_place: return {"ee", "block"};
        case TaskId::lid_box: return {"ee", "towel"};
        case TaskId::dual_insert: return {"ee", "plug0", "plug1"};
        case TaskId::double_fold: return {"ee", "cloth"};
    }
    return {};
}

Vec2 sample(const InitRange& r, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double a = u(rng);
    const double b = u(rng);
    return {r.center.x + a * r.half_extent.x, r.center.y + b * r.half_extent.y};
}

Vec2 clamp_workspace(Vec2 p) { return {std::clamp(p.x, 0.0, 1.0), std::clamp(p.y, 0.0, 1.0)}; }

Vec2 fold_grasp(const EnvState& s, int fold) {
    return s.objects[obj::kCloth] + (fold == 0 ? kFoldGrasp1 : kFoldGrasp2);
}
Vec2 fold_target(const EnvState& s, int fold) {
    return s.objects[obj::kCloth] + (fold == 0 ? kFoldTarget1 : kFoldTarget2);
}

void release(EnvState& s, const TaskSpec& task) {
    const int o = s.held;
    s.held = -1;
    const Vec2 p = s.objects[o];
    const auto& g = task.geometry;
    switch (task.id) {
        case TaskId::drawer_place:
            if (o == obj::kBlock && s.latches.drawer_opening >= kDrawerOpenAt) {
                const Vec2 interior = drawer_interior(s.latches.drawer_opening);
                if (dist(p, interior) <= g.place_tolerance) {
                    s.latches.block_in_drawer = true;
                    s.latches.block_offset = p - interior;
                }
            }
            break;
        case TaskId::lid_box:
            if (o == obj::kLid) {
                s.latches.lid_on = dist(p, kBoxCenter) <= g.lid_tolerance;
                if (s.latches.lid_on) s.objects[o] = kBoxCenter;
            } else if (o == obj::kTowel && !s.latches.lid_on && dist(p, kBoxCenter) <= 0.05) {
                s.latches.towel_in_box = true;
            }
            break;
        case TaskId::dual_insert:
            if (dist(p, kSockets[o]) <= g.insert_tolerance) {
                s.latches.plug_seated[o] = true;
                s.objects[o] = kSockets[o];
            }
            break;
        case TaskId::double_fold:
            if (o == obj::kFoldPoint && s.latches.fold_count < 2) {
                const int fold = s.latches.fold_count;
                if (dist(p, fold_target(s, fold)) <= g.fold_tolerance) {
                    s.latches.fold_count = fold + 1;
                    s.objects[o] = s.latches.fold_count < 2 ? fold_grasp(s, 1) : fold_target(s, 1);
                } else {
                    s.objects[o] = fold_grasp(s, fold);  // cloth springs back
                }
            }
            break;
    }
}

void try_grasp(EnvState& s, const TaskSpec& task) {
    int best = -1;
    double best_d = task.geometry.grasp_radius;
    for (int i = 0; i < static_cast<int>(s.objects.size()); ++i) {
        if (!graspable(s, i)) continue;
        const double d = dist(s.ee_pos, s.objects[i]);
        if (d <= best_d) {
            best_d = d;
            best = i;
        }
    }
    if (best < 0) {
        s.gripper = GripperMode::closed;
        return;
    }
    s.held = best;
    s.gripper = GripperMode::hold;
    if (task.id == TaskId::drawer_place && best == obj::kHandle) {
        s.ee_pos = s.objects[obj::kHandle];
    }
    if (task.id == TaskId::lid_box && best == obj::kLid) {
        // lifting the lid exposes the box
        s.latches.lid_on = false;
    }
}

}  // namespace

Vec2 drawer_interior(double opening) { return {kDrawerFrontX - opening + kInteriorDepth, kDrawerY}; }

bool graspable(const EnvState& s, int object) {
    switch (s.task) {
        case TaskId::drawer_place: return object == obj::kHandle || !s.latches.block_in_drawer;
        case TaskId::lid_box: return object == obj::kLid || !s.latches.towel_in_box;
        case TaskId::dual_insert: return !s.latches.plug_seated[object];
        case TaskId::double_fold: return object == obj::kFoldPoint && s.latches.fold_count < 2;
    }
    return false;
}

void validate(const TaskSpec& task) {
    if (task.horizon < 1) throw std::invalid_argument("task horizon must be >= 1");
    for (const auto& key : required_keys(task.id)) {
        auto it = task.init.find(key);
        if (it == task.init.end())
            throw std::invalid_argument(to_string(task.id) + ": missing init range '" + key + "'");
        if (!inside_workspace(it->second))
            throw std::invalid_argument(to_string(task.id) + ": init range '" + key + "' leaves the workspace");
    }
    if (task.geometry.max_step <= 0 || task.geometry.grasp_radius <= 0)
        throw std::invalid_argument("geometry values must be positive");
}

EnvState reset(const TaskSpec& task, std::uint64_t seed) {
    validate(task);
    std::mt19937_64 rng(seed);
    EnvState s;
    s.task = task.id;
    s.ee_pos = sample(task.init.at("ee"), rng);
    switch (task.id) {
        case TaskId::drawer_place:
            s.objects = {{kDrawerFrontX, kDrawerY}, sample(task.init.at("block"), rng)};
            break;
        case TaskId::lid_box:
            s.objects = {kBoxCenter, sample(task.init.at("towel"), rng)};
            s.latches.lid_on = true;
            break;
        case TaskId::dual_insert: {
            const Vec2 p0 = sample(task.init.at("plug0"), rng);
            const Vec2 p1 = sample(task.init.at("plug1"), rng);
            s.objects = {p0, p1};
            break;
        }
        case TaskId::double_fold: {
            const Vec2 c = sample(task.init.at("cloth"), rng);
            s.objects = {c + kFoldGrasp1, c};
            break;
        }
    }
    return s;
}

StepResult step(const EnvState& state, const TaskSpec& task, ArmAction arm, GripperAction grip) {
    if (state.done) throw ContractViolation("step called on a terminal state");
    if (state.step_index >= task.horizon) throw ContractViolation("step index already at horizon");
    if (state.task != task.id) throw ContractViolation("state belongs to a different task");
    EnvState s = state;
    const auto& g = task.geometry;

    switch (grip.mode) {
        case GripperMode::open:
            if (s.held >= 0) release(s, task);
            s.gripper = GripperMode::open;
            break;
        case GripperMode::closed:
            if (s.held < 0) try_grasp(s, task);
            break;
        case GripperMode::hold:
            break;
    }

    const Vec2 before = s.ee_pos;
    const double dx = std::clamp(arm.delta[0], -1.0, 1.0) * g.max_step;
    const double dy = std::clamp(arm.delta[1], -1.0, 1.0) * g.max_step;
    Vec2 next = clamp_workspace({before.x + dx, before.y + dy});

    if (task.id == TaskId::drawer_place && s.held == obj::kHandle) {
        next.y = kDrawerY;
        next.x = std::clamp(next.x, kDrawerFrontX - kDrawerTravel, kDrawerFrontX);
        s.latches.drawer_opening = kDrawerFrontX - next.x;
        s.objects[obj::kHandle] = next;
        if (s.latches.block_in_drawer)
            s.objects[obj::kBlock] = drawer_interior(s.latches.drawer_opening) + s.latches.block_offset;
    } else if (s.held >= 0) {
        s.objects[s.held] = next;
    }
    s.ee_pos = next;
    s.ee_vel = (next - before) * (1.0 / g.max_step);
    s.step_index += 1;

    StepResult r;
    if (!s.rewarded && success(s, task)) {
        s.rewarded = true;
        r.reward = 1.0;
        s.done = true;
    }
    if (s.step_index >= task.horizon) s.done = true;
    r.done = s.done;
    r.state = std::move(s);
    return r;
}

bool success(const EnvState& s, const TaskSpec& task) {
    const auto& l = s.latches;
    switch (task.id) {
        case TaskId::drawer_place: return l.block_in_drawer && l.drawer_opening <= kDrawerClosedAt;
        case TaskId::lid_box: return l.towel_in_box && l.lid_on;
        case TaskId::dual_insert: return l.plug_seated[0] && l.plug_seated[1];
        case TaskId::double_fold: return l.fold_count >= 2;
    }
    return false;
}

int observation_dim(TaskId id) {
    // ee(2) + gripper one-hot(3) + 2 objects x (offset 4 + held 1) + 2 sites x offset(4) + latches(2)
    switch (id) {
        case TaskId::drawer_place:
        case TaskId::lid_box:
        case TaskId::dual_insert:
        case TaskId::double_fold: return 5 + 10 + 8 + 2;
    }
    return 0;
}

std::array<Vec2, 2> task_sites(const EnvState& s) {
    switch (s.task) {
        case TaskId::drawer_place: return {drawer_interior(s.latches.drawer_opening), Vec2{kDrawerFrontX, kDrawerY}};
        case TaskId::lid_box: return {kBoxCenter, kLidRest};
        case TaskId::dual_insert: return {kSockets[0], kSockets[1]};
        case TaskId::double_fold: return {fold_target(s, 0), fold_target(s, 1)};
    }
    return {};
}

std::vector<float> observe(const EnvState& s) {
    std::vector<float> o;
    o.reserve(25);
    auto push = [&o](double v) { o.push_back(static_cast<float>(v)); };
    push(s.ee_pos.x);
    push(s.ee_pos.y);
    for (int m = 0; m < 3; ++m) push(static_cast<int>(s.gripper) == m ? 1.0 : 0.0);
    // Each offset appears raw and through a saturating magnifier that resolves
    // the last few millimetres before a grasp or release.
    auto push_offset = [&](Vec2 p) {
        const Vec2 d{p.x - s.ee_pos.x, p.y - s.ee_pos.y};
        push(d.x);
        push(d.y);
        push(std::tanh(d.x / kFineScale));
        push(std::tanh(d.y / kFineScale));
    };
    for (int i = 0; i < static_cast<int>(s.objects.size()); ++i) {
        push_offset(s.objects[i]);
        push(s.held == i ? 1.0 : 0.0);
    }
    for (const Vec2& site : task_sites(s)) push_offset(site);
    const auto& l = s.latches;
    switch (s.task) {
        case TaskId::drawer_place:
            push(l.drawer_opening / kDrawerTravel);
            push(l.block_in_drawer ? 1.0 : 0.0);
            break;
        case TaskId::lid_box:
            push(l.lid_on ? 1.0 : 0.0);
            push(l.towel_in_box ? 1.0 : 0.0);
            break;
        case TaskId::dual_insert:
            push(l.plug_seated[0] ? 1.0 : 0.0);
            push(l.plug_seated[1] ? 1.0 : 0.0);
            break;
        case TaskId::double_fold:
            push(l.fold_count >= 1 ? 1.0 : 0.0);
            push(l.fold_count >= 2 ? 1.0 : 0.0);
            break;
    }
    return o;
}

}  // namespace mori::env
