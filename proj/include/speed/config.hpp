#pragma once

#include <cstdint>
#include <string>

namespace speed {

using TokenId = std::int32_t;

/// Marks an empty pipeline slot or a masked classification.
inline constexpr TokenId kInvalidToken = -1;
inline constexpr int kInvalidIteration = -1;

/// Byte-level vocabulary: 256 raw bytes followed by the three specials.
inline constexpr int kByteVocabSize = 259;
inline constexpr TokenId kByteBos = 256;
inline constexpr TokenId kByteEos = 257;
inline constexpr TokenId kBytePad = 258;

/// Shape of a cyclically shared decoder: `n_unique` distinct layers applied
/// `groups` times, giving `n_unique * groups` virtual layers.
struct ShareConfig {
  int n_unique = 2;
  int groups = 3;
  int d_model = 32;
  int n_heads = 4;
  int d_head = 8;
  int d_ffn = 128;
  int vocab_size = kByteVocabSize;
  int max_decode_length = 64;
  TokenId bos_id = kByteBos;
  TokenId eos_id = kByteEos;
  TokenId pad_id = kBytePad;

  int total_layers() const { return n_unique * groups; }

  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;

  /// Everything except max_decode_length, which is a per-run cap.
  bool same_architecture(const ShareConfig& other) const;

  bool operator==(const ShareConfig&) const = default;
};

std::string to_string(const ShareConfig& config);

}  // namespace speed
