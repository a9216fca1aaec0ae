#pragma once

#include "mori/nn/params.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace mori::nn {

struct NamedParams {
    std::string name;
    std::string signature;  // architecture signature, e.g. MlpSpec::signature()
    ParamVector params;
};

// On disk: <dir>/manifest.txt plus one little-endian float32 file per tensor,
// named <net>.<tensor>.f32.
struct Checkpoint {
    std::int64_t step = 0;
    std::vector<NamedParams> nets;
    std::map<std::string, std::string> meta;

    const NamedParams& net(const std::string& name) const;
};

std::uint64_t fnv1a(const std::string& s);

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

void write_f32_le(const std::filesystem::path& file, std::span<const float> values);
std::vector<float> read_f32_le(const std::filesystem::path& file);

}  // namespace mori::nn
