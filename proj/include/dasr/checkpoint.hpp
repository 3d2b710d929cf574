#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "dasr/trainer.hpp"

namespace dasr {

// File layout (all integers little-endian):
//   8 bytes   magic "DASRCKPT"
//   u32       format version
//   u64       header length L
//   L bytes   JSON header: configs, iteration, RNG state, loss history and
//             the tensor table [{name, shape, offset}] (offsets in floats)
//   f32 x K   payload: parameters, then ADAM m, then ADAM v, table order
//   u32       CRC-32 of every preceding byte

class CheckpointError : public Error {
public:
    enum class Kind { io, bad_magic, version, truncated, checksum, malformed };
    CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

// Written atomically (temp file, then rename).
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Checkpoint for a freshly built model with zero moments.
Checkpoint initial_checkpoint(const Model<float>& model, const TrainConfig& config);

// Eight hex digits of CRC-32.
std::string content_digest(std::string_view bytes);
// Over names and float payload only, so independent of optimizer state.
std::string parameter_digest(const std::vector<NamedParameter<float>>& params);
// Over ids, shapes and pixels.
std::string image_digest(const std::vector<ImageRecord>& records);

void write_file_atomic(const std::filesystem::path& path, const std::string& bytes);
std::string read_file(const std::filesystem::path& path);

}  // namespace dasr
