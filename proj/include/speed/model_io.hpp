#pragma once

// Model directory format:
//
//   <dir>/manifest.json  config, blob name and the tensor table
//   <dir>/weights.bin    all tensors back to back, row-major little-endian float32
//
// Each tensor row in the manifest carries name, shape, byte offset and the
// initialisation seed it was drawn with. Loading then saving a
// model reproduces both files byte for byte.

#include "speed/errors.hpp"
#include "speed/neural_model.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace speed {

inline constexpr const char* kManifestName = "manifest.json";
inline constexpr const char* kBlobName = "weights.bin";

struct TensorRecord {
  std::string name;
  int rows = 0;
  int cols = 0;
  std::uint64_t offset = 0;  // bytes into the blob
  std::uint64_t seed = 0;
};

struct ModelFile {
  NeuralModel model;
  std::uint64_t seed = 0;
  std::vector<TensorRecord> tensors;
};

/// Canonical tensor table for `config`, in blob order.
std::vector<TensorRecord> tensor_table(const ShareConfig& config, std::uint64_t seed);

/// Writes manifest and blob; creates `dir` if needed.
std::vector<TensorRecord> save_model(const NeuralModel& model, std::uint64_t seed,
                                     const std::filesystem::path& dir);

ModelFile load_model(const std::filesystem::path& dir);

/// Little-endian float32 encoding independent of host byte order.
void append_f32_le(std::string& out, float value);
float read_f32_le(const unsigned char* bytes);

}  // namespace speed
