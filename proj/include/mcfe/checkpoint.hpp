#pragma once

#include <cstdint>
#include <string>

#include <nlohmann/json.hpp>

#include "mcfe/adam.hpp"

namespace mcfe {

/// Serialized model: "MCFE1", a 4-byte little-endian manifest length, the
/// UTF-8 JSON manifest, then the tensors as little-endian float64 payloads.
///
/// The manifest carries `role`, `config` (an echo of the model config) and
/// `tensors`: an array of {name, shape, offset, bytes} where offset is
/// relative to the first payload byte.
struct Checkpoint {
    std::string role;
    nlohmann::json config = nlohmann::json::object();
    ParamSet tensors;
};

std::string serialize_checkpoint(const Checkpoint& checkpoint);
Checkpoint parse_checkpoint(const std::string& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

/// FNV-1a over parameter names, shapes and raw values.
std::uint64_t checksum(const ParamSet& params);

}  // namespace mcfe
