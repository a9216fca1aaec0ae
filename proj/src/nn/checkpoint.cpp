#include "mori/nn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace mori::nn {

namespace fs = std::filesystem;

const NamedParams& Checkpoint::net(const std::string& name) const {
    for (const auto& n : nets)
        if (n.name == name) return n;
    throw ConfigError("checkpoint has no network '" + name + "'");
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

void write_f32_le(const fs::path& file, std::span<const float> values) {
    std::ofstream out(file, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + file.string());
    std::vector<unsigned char> bytes(values.size() * 4);
    for (std::size_t i = 0; i < values.size(); ++i) {
        const auto u = std::bit_cast<std::uint32_t>(values[i]);
        for (int b = 0; b < 4; ++b) bytes[4 * i + b] = static_cast<unsigned char>((u >> (8 * b)) & 0xffu);
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw ConfigError("short write to " + file.string());
}

std::vector<float> read_f32_le(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    if (!in) throw ConfigError("cannot read " + file.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() % 4 != 0) throw ConfigError(file.string() + ": size is not a multiple of 4");
    std::vector<float> out(bytes.size() / 4);
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::uint32_t u = 0;
        for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(bytes[4 * i + b]) << (8 * b);
        out[i] = std::bit_cast<float>(u);
    }
    return out;
}

void save_checkpoint(const fs::path& dir, const Checkpoint& ckpt) {
    fs::create_directories(dir);
    std::ostringstream man;
    man << "mori-checkpoint 1\n";
    man << "step " << ckpt.step << "\n";
    for (const auto& [k, v] : ckpt.meta) man << "meta " << k << " " << v << "\n";
    for (const auto& net : ckpt.nets) {
        man << "net " << net.name << " " << net.signature << " " << std::hex << fnv1a(net.signature) << std::dec
            << " " << net.params.tensor_count() << "\n";
        for (std::size_t i = 0; i < net.params.tensor_count(); ++i) {
            const auto& t = net.params.layout()[i];
            const std::string file = net.name + "." + t.name + ".f32";
            man << "tensor " << net.name << " " << t.name << " " << t.shape.size();
            for (int d : t.shape) man << " " << d;
            man << " " << file << "\n";
            write_f32_le(dir / file, net.params.tensor(i));
        }
    }
    std::ofstream out(dir / "manifest.txt");
    if (!out) throw ConfigError("cannot write manifest in " + dir.string());
    out << man.str();
}

Checkpoint load_checkpoint(const fs::path& dir) {
    std::ifstream in(dir / "manifest.txt");
    if (!in) throw ConfigError("no manifest.txt in " + dir.string());
    Checkpoint ckpt;
    std::string line;
    std::getline(in, line);
    if (line != "mori-checkpoint 1") throw ConfigError("unsupported checkpoint header: " + line);

    struct Pending {
        std::string name, signature;
        std::size_t tensors = 0;
        std::vector<TensorLayout> layout;
        std::vector<std::string> files;
    };
    std::vector<Pending> pending;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream is(line);
        std::string kind;
        is >> kind;
        if (kind == "step") {
            is >> ckpt.step;
        } else if (kind == "meta") {
            std::string k, v;
            is >> k;
            std::getline(is >> std::ws, v);
            ckpt.meta[k] = v;
        } else if (kind == "net") {
            Pending p;
            std::string hash;
            is >> p.name >> p.signature >> hash >> p.tensors;
            std::ostringstream expect;
            expect << std::hex << fnv1a(p.signature);
            if (expect.str() != hash) throw ConfigError("signature hash mismatch for network " + p.name);
            pending.push_back(std::move(p));
        } else if (kind == "tensor") {
            std::string net, name, file;
            std::size_t rank = 0;
            is >> net >> name >> rank;
            TensorLayout t{name, {}};
            for (std::size_t i = 0; i < rank; ++i) {
                int d = 0;
                is >> d;
                t.shape.push_back(d);
            }
            is >> file;
            if (pending.empty() || pending.back().name != net)
                throw ConfigError("tensor record for unknown network " + net);
            pending.back().layout.push_back(std::move(t));
            pending.back().files.push_back(file);
        } else {
            throw ConfigError("unknown manifest record: " + kind);
        }
        if (!is && !is.eof()) throw ConfigError("malformed manifest line: " + line);
    }
    for (auto& p : pending) {
        if (p.layout.size() != p.tensors) throw ConfigError("tensor count mismatch for network " + p.name);
        ParamVector params(p.layout);
        for (std::size_t i = 0; i < p.layout.size(); ++i) {
            auto values = read_f32_le(dir / p.files[i]);
            auto dst = params.tensor(i);
            if (values.size() != dst.size())
                throw ConfigError("tensor " + p.name + "." + p.layout[i].name + " has wrong length");
            std::copy(values.begin(), values.end(), dst.begin());
        }
        ckpt.nets.push_back({p.name, p.signature, std::move(params)});
    }
    return ckpt;
}

}  // namespace mori::nn
