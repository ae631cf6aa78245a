#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "rim/train.hpp"

namespace rim::checkpoint {

inline constexpr std::uint32_t kFormatVersion = 1;

/// A named 64-bit array as stored on disk.
struct NamedArray {
    std::string name;
    std::vector<int64_t> shape;
    std::vector<double> values;
};

/// Decoded file contents, independent of any live state.
struct Archive {
    std::uint32_t version = kFormatVersion;
    nlohmann::json config;
    std::int64_t step = 0;
    std::vector<NamedArray> arrays;

    const NamedArray* find(const std::string& name) const;
};

/// Layout: "RIMCKPT\0", u32 version, u64 config length + JSON text, i64 step,
/// u32 array count, then per array u32 name length + name, u32 rank, i64 dims,
/// f64 payload; a trailing CRC-32 covers every preceding byte. Little endian.
void write_archive(const Archive& archive, const std::filesystem::path& path);
Archive read_archive(const std::filesystem::path& path);

/// Every array that describes `state`: parameters, optimizer state, kernel bank.
Archive capture(train::TrainState& state);

/// Copies an archive into an existing state. Shapes are checked for every
/// array before anything is written.
void restore(const Archive& archive, train::TrainState& state);

void save_checkpoint(train::TrainState& state, const std::filesystem::path& path);

/// Rebuilds the state from the config snapshot in the file.
std::unique_ptr<train::TrainState> load_checkpoint(const std::filesystem::path& path);

/// Loads into an existing state (whose architecture must match).
void load_checkpoint(const std::filesystem::path& path, train::TrainState& state);

}  // namespace rim::checkpoint
