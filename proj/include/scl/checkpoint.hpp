#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "scl/parameter.hpp"

namespace scl {

/// Binary checkpoint layout (all integers u32 little-endian, payload f32 LE):
///   "SCL1" | config_len | config text (key=value lines)
///   then per parameter until EOF: name_len | name | rank | dims... | payload
struct Checkpoint {
    std::string config_text;
    std::vector<std::pair<std::string, Tensor>> params;
};

std::vector<std::uint8_t> encode_checkpoint(const std::string& config_text, const ParameterStore& store);
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

/// Copies values into `store`. Every stored parameter must exist with the same shape and
/// every store parameter must be present.
void load_into(const Checkpoint& ckpt, ParameterStore& store);

}  // namespace scl
