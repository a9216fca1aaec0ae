#pragma once

#include "mori/training/trainer.hpp"

#include <filesystem>
#include <optional>

namespace mori::training {

// One complete arm: demonstrations, offline pre-training, online fine-tuning
// and a deterministic evaluation of the final bundle.
struct ArmResult {
    RunConfig config;
    experts::ExpertBundle pretrained;
    TrainResult trained;
    EvalResult eval;
};

struct ArmOptions {
    std::optional<std::filesystem::path> run_dir;
    int eval_episodes = 50;
    InterventionSource* source = nullptr;
    RolloutObserver* observer = nullptr;
};

ArmResult run_arm(const RunConfig& cfg, const ArmOptions& options = {});

// Evaluation seed derived from the run seed, shared by every arm of a study.
std::uint64_t eval_seed(const RunConfig& cfg);

}  // namespace mori::training
