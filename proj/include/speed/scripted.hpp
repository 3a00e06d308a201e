#pragma once

// Scripted oracle model: group-exit classifications are read from a table
// instead of computed, so pipeline control flow can be checked by hand.
//
// Script text format, one directive or row per line:
//
//   # free-form comment
//   config vocab=5 bos=3 eos=2 pad=4      (optional; defaults to the byte vocabulary)
//   7 7 5                                  (row p: exit token after groups 0..G-1)
//   @ 1 0 5 9                              (override: position 1, group 0, input 5 -> 9)
//
// Row p describes the token generated at sequence position p. Overrides make
// the model context dependent: when the token entering position p equals the
// given input, the override wins over the row entry.

#include "speed/decoder_model.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <tuple>
#include <vector>

namespace speed {

struct FlipScript {
  int groups = 0;
  int vocab_size = kByteVocabSize;
  TokenId bos_id = kByteBos;
  TokenId eos_id = kByteEos;
  TokenId pad_id = kBytePad;
  std::vector<std::vector<TokenId>> rows;
  /// (position, group, input token) -> classification.
  std::map<std::tuple<int, int, TokenId>, TokenId> overrides;

  int length() const { return static_cast<int>(rows.size()); }

  /// Throws std::invalid_argument on ragged rows or out-of-vocabulary ids.
  void validate() const;

  /// Final column truncated after the first eos.
  std::vector<TokenId> ground_truth() const;

  bool operator==(const FlipScript&) const = default;
};

FlipScript parse_script(const std::string& text);
std::string format_script(const FlipScript& script);
FlipScript load_script(const std::filesystem::path& path);
void save_script(const FlipScript& script, const std::filesystem::path& path);

/// Script rows where boundary b (between groups b and b+1) flips with
/// probability `boundary_flip_probs[b]`; tokens are drawn from
/// [0, alphabet_size), which must not contain the special ids.
FlipScript random_flip_script(std::uint64_t seed, int length, int groups,
                              std::span<const double> boundary_flip_probs,
                              int alphabet_size = 256);

/// script[position][group], or the override for `input` if one exists; pad_id
/// past the end of the script.
TokenId scripted_forward_group(const FlipScript& script, int position, int group, TokenId input);

/// DecoderModel over a FlipScript. The hidden state carries the input token,
/// and each virtual layer stores a stub K/V entry encoding
/// (input token, position, layer, exit token) in the same cache the neural
/// model uses.
class ScriptedModel final : public DecoderModel {
 public:
  static constexpr int kStubWidth = 4;

  explicit ScriptedModel(FlipScript script, int n_unique = 1, int max_decode_length = 0);

  const ShareConfig& config() const override { return config_; }
  Vectorf embed(TokenId token, int position) const override;
  GroupOutput forward_group(const Vectorf& hidden, int group, int position,
                            KvCache& cache) const override;

  /// Classification at (position, group) for a given input token; pad_id
  /// past the end of the script.
  TokenId classification(int position, int group, TokenId input) const;

  const FlipScript& script() const { return script_; }

 private:
  FlipScript script_;
  ShareConfig config_;
};

/// Exit logits that classify to `token`: one-hot over the vocabulary.
Vectorf one_hot_logits(TokenId token, int vocab_size);

}  // namespace speed
