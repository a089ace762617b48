#pragma once

// Binary checkpoint:
//   "SDSC" | u16 version | u32 header length | JSON header | float32 payloads
// All integers and floats are little-endian. Payloads follow the header's
// tensor list in order; bits and exponents are stored as ordinary tensors.

#include <cstdint>
#include <filesystem>
#include <memory>

#include "json.hpp"
#include "sdsc/models.hpp"

namespace sdsc {

constexpr std::uint16_t kCheckpointVersion = 1;

nlohmann::json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::json& j);

void save_checkpoint(Model& model, const std::filesystem::path& path);
std::unique_ptr<Model> load_checkpoint(const std::filesystem::path& path);

}  // namespace sdsc
