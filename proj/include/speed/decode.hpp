#pragma once

#include "speed/decoder_model.hpp"

#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace speed {

/// Raised when the pipelined decoder reaches a state its invariants forbid.
/// Carries a dump of the offending state; never expected on valid input.
class PipelineInvariantError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Decoding state of the pipelined decoder. Stage g holds the token entering
/// decoder layer group g; iteration_indices[g] is its position in the output
/// sequence, or -1 for an empty slot.
struct PipelineState {
  std::vector<TokenId> sequence;         // max_decode_length, pad-filled
  std::vector<TokenId> previous_tokens;  // G - 1: last stage's classifications, shifted
  std::vector<int> iteration_indices;    // G
  int current_index = 0;                 // next slot of `sequence` to commit
  TokenId current_token = kInvalidToken;  // input of the token entering stage 0
  TokenId graduated_token = kInvalidToken;
  std::vector<Vectorf> hidden;  // G: activation of each in-flight token entering its group

  /// Valid entries decrease by exactly one from shallow to deep, the deepest
  /// equals current_index, and all are below max_decode_length.
  void check_invariants(int max_decode_length) const;

  std::string dump() const;
};

struct FlipEvent {
  int depth = 0;      // pipeline stage whose classification changed
  int iteration = 0;  // sequence position of that token
  TokenId old_token = kInvalidToken;
  TokenId new_token = kInvalidToken;

  bool operator==(const FlipEvent&) const = default;
};

/// One outer-loop iteration. For the greedy engine a record is one token run
/// through all groups: every slot of iteration_indices holds that token and
/// `tokens` lists its exit classification after each group.
struct StageRecord {
  int stage = 0;
  std::vector<int> iteration_indices;    // at entry to the stage
  std::vector<TokenId> tokens;           // per-group classification, -1 for empty slots
  std::vector<TokenId> previous_tokens;  // comparison baseline for tokens[1:]
  int last_invalid = 0;
  std::optional<TokenId> committed;
  std::vector<FlipEvent> flips;
  int invalidated_tokens = 0;        // in-flight tokens flushed by this stage
  int invalidated_token_stages = 0;  // stages those tokens had consumed

  int occupancy() const;
  bool injected() const { return !iteration_indices.empty() && iteration_indices[0] >= 0; }

  bool operator==(const StageRecord&) const = default;
};

enum class Engine { greedy, speed };

std::string to_string(Engine engine);
Engine engine_from_string(const std::string& name);

struct DecodeTrace {
  Engine engine = Engine::speed;
  int groups = 0;
  int max_decode_length = 0;
  int prompt_length = 0;
  std::vector<StageRecord> stages;
  std::vector<TokenId> sequence;  // committed tokens, through eos

  int stages_executed() const { return static_cast<int>(stages.size()); }
  int tokens_committed() const;
  int invalidations() const;

  bool operator==(const DecodeTrace&) const = default;
};

struct DecodeResult {
  std::vector<TokenId> sequence;
  DecodeTrace trace;
};

using StageObserver =
    std::function<void(const PipelineState&, const KvCache&, const StageRecord&)>;

/// Index of the last nonzero entry, 0 if there is none.
int get_index_of_last_nonzero(std::span<const int> values);

/// Runs bos followed by all prompt tokens but the last through every layer.
/// Returns the input token for the first generated position, which is
/// prompt.size().
TokenId prefill(const DecoderModel& model, std::span<const TokenId> prompt, KvCache& cache);

/// Baseline: each generated token runs all groups before the next starts.
DecodeResult decode_greedy(const DecoderModel& model, const ShareConfig& config,
                           std::span<const TokenId> prompt = {});

/// One pipeline stage: stage 0 embeds `current_token`, deeper stages resume
/// their hidden state, each valid stage g advances through group g. `hidden`
/// is updated in place with each stage's group output.
GroupExitLogits pipeline_forward_pass(const DecoderModel& model, TokenId current_token,
                                      std::span<const int> iteration_indices,
                                      std::span<Vectorf> hidden, KvCache& cache,
                                      int position_offset);

/// Speculative pipelined decoding. Produces exactly the greedy sequence.
DecodeResult decode_speed(const DecoderModel& model, const ShareConfig& config,
                          std::span<const TokenId> prompt = {},
                          const StageObserver& observer = {});

/// Token sequences for byte strings.
std::vector<TokenId> byte_tokens(const std::string& text);

}  // namespace speed
