#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lanecascade/errors.hpp"
#include "lanecascade/nn/layers.hpp"

namespace lanecascade {

inline constexpr std::array<char, 8> kCheckpointMagic = {'L', 'C', 'A', 'S', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

// Versioned weight container: magic, format version, JSON metadata (model kind
// + config + a hash guarding compatibility), then the raw float state.
struct Checkpoint {
    std::string kind;      // "segmentation", "seg_train_state", "classifier"
    nlohmann::json config;  // enough to rebuild the model
    nlohmann::json extra;   // phase tag, taxonomy scheme, optimizer step, ...
    std::vector<float> blob;
};

// FNV-1a over the canonical config dump; stored in the file and re-checked at
// load so a checkpoint can never be applied to a structurally different model.
inline std::string config_hash(const nlohmann::json& config) {
    const std::string dump = config.dump();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : dump) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

inline void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    if (!path.parent_path().empty()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
    nlohmann::json meta;
    meta["kind"] = ckpt.kind;
    meta["config"] = ckpt.config;
    meta["extra"] = ckpt.extra;
    meta["config_hash"] = config_hash(ckpt.config);
    const std::string meta_str = meta.dump();
    out.write(kCheckpointMagic.data(), kCheckpointMagic.size());
    const std::uint32_t version = kCheckpointVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof version);
    const std::uint64_t meta_len = meta_str.size();
    out.write(reinterpret_cast<const char*>(&meta_len), sizeof meta_len);
    out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));
    const std::uint64_t count = ckpt.blob.size();
    out.write(reinterpret_cast<const char*>(&count), sizeof count);
    out.write(reinterpret_cast<const char*>(ckpt.blob.data()),
              static_cast<std::streamsize>(ckpt.blob.size() * sizeof(float)));
    if (!out) throw CheckpointError("short write to checkpoint " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    std::array<char, 8> magic{};
    in.read(magic.data(), magic.size());
    if (!in || magic != kCheckpointMagic) throw CheckpointError(path.string() + " is not a checkpoint file");
    std::uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof version);
    if (!in || version != kCheckpointVersion)
        throw CheckpointError(path.string() + " has unsupported format version " + std::to_string(version));
    std::uint64_t meta_len = 0;
    in.read(reinterpret_cast<char*>(&meta_len), sizeof meta_len);
    if (!in || meta_len > (1ull << 30)) throw CheckpointError(path.string() + " has a corrupt metadata header");
    std::string meta_str(meta_len, '\0');
    in.read(meta_str.data(), static_cast<std::streamsize>(meta_len));
    if (!in) throw CheckpointError(path.string() + " is truncated in the metadata block");
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(meta_str);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(path.string() + " has unreadable metadata: " + e.what());
    }
    Checkpoint ckpt;
    try {
        ckpt.kind = meta.at("kind").get<std::string>();
        ckpt.config = meta.at("config");
        ckpt.extra = meta.at("extra");
        if (meta.at("config_hash").get<std::string>() != config_hash(ckpt.config))
            throw CheckpointError(path.string() + " fails its config hash check");
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(path.string() + " has incomplete metadata: " + e.what());
    }
    std::uint64_t count = 0;
    in.read(reinterpret_cast<char*>(&count), sizeof count);
    if (!in) throw CheckpointError(path.string() + " is truncated before the weight block");
    ckpt.blob.resize(count);
    in.read(reinterpret_cast<char*>(ckpt.blob.data()), static_cast<std::streamsize>(count * sizeof(float)));
    if (!in) throw CheckpointError(path.string() + " is truncated in the weight block");
    return ckpt;
}

// Applies a checkpoint blob (or its leading slice) to a model's state.
inline void apply_blob(const nn::ParamSet& params, const std::vector<float>& blob, const std::string& what) {
    const auto need = static_cast<std::size_t>(params.state_count());
    if (blob.size() < need)
        throw CheckpointError(what + ": blob holds " + std::to_string(blob.size()) + " values, model needs " +
                              std::to_string(need));
    nn::unflatten_params(params, std::vector<float>(blob.begin(), blob.begin() + static_cast<std::ptrdiff_t>(need)));
}

}  // namespace lanecascade
