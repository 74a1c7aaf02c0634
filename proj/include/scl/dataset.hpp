#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "scl/rpm.hpp"

namespace scl::rpm {

inline constexpr int kDatasetVersion = 1;

struct GenOptions {
    std::string layout = "center";  // center|lr|ud|oic|joint
    std::size_t count = 1000;
    std::uint64_t seed = 0;
    int panel_px = 32;
    int rel_count = 3;
    std::vector<Pair> exclude;
    std::vector<Pair> require;
};

struct Manifest {
    int version = kDatasetVersion;
    std::string layout = "center";
    std::size_t count = 0;
    int panel_px = 32;
    std::uint64_t seed = 0;
    int rel_count = 3;
    std::vector<Pair> exclude;
    std::vector<Pair> require;
    /// Fixed [train_end, valid_end) boundaries; set when the generator already
    /// arranged the problems into splits (held-out experiments).
    std::optional<std::array<std::size_t, 2>> splits;
    bool operator==(const Manifest&) const = default;
};

struct Dataset {
    Manifest manifest;
    std::vector<ProblemSpec> problems;
    std::vector<std::uint8_t> images;  // 16*P*P bytes per problem

    std::size_t size() const { return problems.size(); }
    std::size_t problem_bytes() const { return 16 * static_cast<std::size_t>(manifest.panel_px * manifest.panel_px); }
    std::span<const std::uint8_t> problem_images(std::size_t i) const {
        return {images.data() + i * problem_bytes(), problem_bytes()};
    }
};

/// Layout of problem `index` (joint datasets cycle through the four layouts).
Layout layout_of(const GenOptions& opts, std::size_t index);
/// The filter in force for problem `index`. With both exclusion and requirement
/// pairs the first 80% of indices exclude them and the last 20% require them.
std::optional<HeldoutFilter> filter_of(const GenOptions& opts, std::size_t index);
/// Problem `index` in isolation; identical to the bulk-generated one.
ProblemSpec generate_indexed(const GenOptions& opts, std::size_t index);
Dataset generate_dataset(const GenOptions& opts);

void write_dataset(const Dataset& ds, const std::filesystem::path& dir);
/// Throws FormatError (with file and byte offset) on malformed input.
Dataset read_dataset(const std::filesystem::path& dir);

std::string problem_to_json(const ProblemSpec& p);
ProblemSpec problem_from_json(const std::string& line);

}  // namespace scl::rpm
