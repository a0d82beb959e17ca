#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <json.hpp>

#include "pwlm/model.hpp"

namespace pwlm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

nlohmann::json config_to_json(const ModelConfig& cfg);
ModelConfig config_from_json(const nlohmann::json& j);

// "PWCK" | u32 version | u32 manifest length | manifest JSON | float32 tensors
// in manifest order. The manifest carries the config, the vocabulary and a
// tensor directory (name, shape, dtype, byte offset into the payload).
std::vector<std::uint8_t> serialize_checkpoint(const Decoder& model);
Decoder parse_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const Decoder& model, const std::filesystem::path& path);
// Throws IoError/FormatError; also FormatError when the stored vocabulary
// differs from this build's.
Decoder load_checkpoint(const std::filesystem::path& path);

}  // namespace pwlm
