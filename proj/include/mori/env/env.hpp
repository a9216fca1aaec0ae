#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace mori::env {

class ContractViolation : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

enum class TaskId { drawer_place, lid_box, dual_insert, double_fold };

// As a command: open releases, closed grasps whatever is in reach, hold keeps
// the current grip. As a state: open, hold (grasping an object), closed (empty).
enum class GripperMode : int { open = 0, hold = 1, closed = 2 };

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    bool operator==(const Vec2&) const = default;
};

double norm(Vec2 v);
double dist(Vec2 a, Vec2 b);

struct ArmAction {
    std::array<double, 2> delta{0.0, 0.0};

    ArmAction() = default;
    ArmAction(double dx, double dy);  // clamps to [-1, 1]
};

struct GripperAction {
    GripperMode mode = GripperMode::hold;
};

struct InitRange {
    Vec2 center;
    Vec2 half_extent;  // uniform in center +- half_extent
};

struct Geometry {
    double max_step = 0.04;       // displacement per unit action component
    double grasp_radius = 0.03;
    double insert_tolerance = 0.01;
    double place_tolerance = 0.04;
    double lid_tolerance = 0.03;
    double fold_tolerance = 0.03;
    bool operator==(const Geometry&) const = default;
};

struct TaskSpec {
    TaskId id = TaskId::drawer_place;
    int horizon = 200;
    std::map<std::string, InitRange> init;  // keys are task-specific, see default_task()
    std::string success_predicate;
    Geometry geometry;
};

struct Latches {
    double drawer_opening = 0.0;  // 0 closed .. kDrawerTravel fully open
    bool block_in_drawer = false;
    Vec2 block_offset;  // block position relative to the drawer interior
    bool lid_on = false;
    bool towel_in_box = false;
    std::array<bool, 2> plug_seated{false, false};
    int fold_count = 0;
    bool operator==(const Latches&) const = default;
};

struct EnvState {
    TaskId task = TaskId::drawer_place;
    Vec2 ee_pos;
    Vec2 ee_vel;  // last displacement divided by max_step
    GripperMode gripper = GripperMode::open;
    int held = -1;  // index into objects, -1 when nothing is held
    std::vector<Vec2> objects;
    Latches latches;
    int step_index = 0;
    bool done = false;
    bool rewarded = false;
    bool operator==(const EnvState&) const = default;
};

struct StepResult {
    EnvState state;
    double reward = 0.0;
    bool done = false;
};

// Fixed scene layout shared by the environment and the scripted oracle.
namespace layout {
inline constexpr double kDrawerFrontX = 0.8;
inline constexpr double kDrawerY = 0.3;
inline constexpr double kDrawerTravel = 0.2;
inline constexpr double kDrawerOpenAt = 0.15;
inline constexpr double kDrawerClosedAt = 0.01;
inline constexpr double kDrawerPullTo = 0.18;
inline constexpr double kInteriorDepth = 0.1;  // interior center behind the handle
inline constexpr Vec2 kBoxCenter{0.7, 0.7};
inline constexpr Vec2 kLidRest{0.7, 0.35};
inline constexpr std::array<Vec2, 2> kSockets{Vec2{0.8, 0.35}, Vec2{0.8, 0.65}};
inline constexpr Vec2 kFoldGrasp1{-0.2, 0.0};  // relative to towel center
inline constexpr Vec2 kFoldTarget1{0.2, 0.0};
inline constexpr Vec2 kFoldGrasp2{0.1, -0.15};
inline constexpr Vec2 kFoldTarget2{0.1, 0.15};
}  // namespace layout

// Object indices per task.
namespace obj {
inline constexpr int kHandle = 0, kBlock = 1;      // drawer_place
inline constexpr int kLid = 0, kTowel = 1;         // lid_box
inline constexpr int kPlug0 = 0, kPlug1 = 1;       // dual_insert
inline constexpr int kFoldPoint = 0, kCloth = 1;   // double_fold (cloth = towel center)
}  // namespace obj

std::string to_string(TaskId id);
TaskId task_from_string(const std::string& s);
std::string to_string(GripperMode m);
GripperMode gripper_from_string(const std::string& s);
const std::vector<TaskId>& all_tasks();

TaskSpec default_task(TaskId id);
void validate(const TaskSpec& task);

// JSON task files: {"task": id, "horizon", "init": {key: {center, half_extent}},
// "geometry": {...}}. Missing fields keep the defaults of the named task.
std::string task_to_json(const TaskSpec& task);
TaskSpec task_from_json(const std::string& text);
TaskSpec load_task(const std::filesystem::path& file);

Vec2 drawer_interior(double opening);
bool graspable(const EnvState& s, int object);

EnvState reset(const TaskSpec& task, std::uint64_t seed);
StepResult step(const EnvState& state, const TaskSpec& task, ArmAction arm, GripperAction grip);
bool success(const EnvState& state, const TaskSpec& task);

// Fixed goal locations of a task (sockets, box, drawer interior, fold targets).
std::array<Vec2, 2> task_sites(const EnvState& s);

// Flat observation fed to every network. Object and site positions are given
// relative to the end effector; velocity is left out so policies cannot lean on it.
std::vector<float> observe(const EnvState& state);
int observation_dim(TaskId id);
inline constexpr int kArmDims = 2;
inline constexpr int kGripperModes = 3;

}  // namespace mori::env
