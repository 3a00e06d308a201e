#include "speed/decode.hpp"

#include <algorithm>
#include <sstream>

namespace speed {

namespace {

void check_model(const DecoderModel& model, const ShareConfig& config,
                 std::span<const TokenId> prompt) {
  config.validate();
  if (!model.config().same_architecture(config)) {
    throw std::invalid_argument("decode: model is " + to_string(model.config()) +
                                " but run config is " + to_string(config));
  }
  for (TokenId t : prompt) {
    if (t < 0 || t >= config.vocab_size) {
      throw std::invalid_argument("decode: prompt token " + std::to_string(t) +
                                  " outside vocabulary");
    }
  }
}

TokenId classify_exit(const Vectorf& logits, int vocab_size) {
  if (logits.size() != vocab_size) {
    throw ShapeError("classify: logits of length " + std::to_string(logits.size()) +
                     ", vocabulary " + std::to_string(vocab_size));
  }
  return classify(logits);
}

template <typename T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v[i];
  os << ')';
  return os.str();
}

}  // namespace

std::string to_string(Engine engine) { return engine == Engine::greedy ? "greedy" : "speed"; }

Engine engine_from_string(const std::string& name) {
  if (name == "greedy") return Engine::greedy;
  if (name == "speed") return Engine::speed;
  throw std::invalid_argument("unknown engine '" + name + "'");
}

int StageRecord::occupancy() const {
  return static_cast<int>(std::count_if(iteration_indices.begin(), iteration_indices.end(),
                                        [](int i) { return i >= 0; }));
}

int DecodeTrace::tokens_committed() const {
  return static_cast<int>(std::count_if(stages.begin(), stages.end(),
                                        [](const StageRecord& r) { return r.committed.has_value(); }));
}

int DecodeTrace::invalidations() const {
  return static_cast<int>(std::count_if(stages.begin(), stages.end(),
                                        [](const StageRecord& r) { return r.last_invalid > 0; }));
}

void PipelineState::check_invariants(int max_decode_length) const {
  auto fail = [&](const std::string& what) {
    throw PipelineInvariantError("pipeline invariant violated: " + what + "\n" + dump());
  };
  int expected = -1;
  int deepest = -1;
  for (int index : iteration_indices) {
    if (index == kInvalidIteration) continue;
    if (index < 0) fail("negative iteration index");
    if (index >= max_decode_length) fail("iteration index beyond max_decode_length");
    if (expected >= 0 && index != expected) fail("valid entries are not consecutive");
    expected = index - 1;
    deepest = index;
  }
  if (deepest >= 0 && deepest != current_index) {
    fail("deepest in-flight token is not the next to commit");
  }
}

std::string PipelineState::dump() const {
  std::ostringstream os;
  os << "iteration_indices=" << join(iteration_indices)
     << " previous_tokens=" << join(previous_tokens) << " current_index=" << current_index
     << " current_token=" << current_token << " graduated_token=" << graduated_token
     << " sequence=" << join(sequence);
  return os.str();
}

int get_index_of_last_nonzero(std::span<const int> values) {
  if (values.empty()) throw std::invalid_argument("get_index_of_last_nonzero: empty input");
  for (std::size_t i = values.size(); i-- > 0;) {
    if (values[i] != 0) return static_cast<int>(i);
  }
  return 0;
}

std::vector<TokenId> byte_tokens(const std::string& text) {
  std::vector<TokenId> out;
  out.reserve(text.size());
  for (unsigned char c : text) out.push_back(static_cast<TokenId>(c));
  return out;
}

TokenId prefill(const DecoderModel& model, std::span<const TokenId> prompt, KvCache& cache) {
  const ShareConfig& config = model.config();
  TokenId input = config.bos_id;
  for (std::size_t p = 0; p < prompt.size(); ++p) {
    Vectorf hidden = model.embed(input, static_cast<int>(p));
    for (int g = 0; g < config.groups; ++g) {
      hidden = model.forward_group(hidden, g, static_cast<int>(p), cache).hidden;
    }
    input = prompt[p];
  }
  return input;
}

DecodeResult decode_greedy(const DecoderModel& model, const ShareConfig& config,
                           std::span<const TokenId> prompt) {
  check_model(model, config, prompt);
  const int groups = config.groups;
  const int offset = static_cast<int>(prompt.size());
  KvCache cache = model.make_cache();
  TokenId input = prefill(model, prompt, cache);

  DecodeTrace trace;
  trace.engine = Engine::greedy;
  trace.groups = groups;
  trace.max_decode_length = config.max_decode_length;
  trace.prompt_length = offset;

  for (int i = 0; i < config.max_decode_length; ++i) {
    StageRecord record;
    record.stage = i;
    record.iteration_indices.assign(static_cast<std::size_t>(groups), i);
    Vectorf hidden = model.embed(input, offset + i);
    for (int g = 0; g < groups; ++g) {
      GroupOutput out = model.forward_group(hidden, g, offset + i, cache);
      hidden = std::move(out.hidden);
      record.tokens.push_back(classify_exit(out.logits, config.vocab_size));
    }
    record.previous_tokens.assign(record.tokens.begin(), record.tokens.end() - 1);
    for (int g = 1; g < groups; ++g) {
      const auto gi = static_cast<std::size_t>(g);
      if (record.tokens[gi] != record.tokens[gi - 1]) {
        record.flips.push_back({g, i, record.tokens[gi - 1], record.tokens[gi]});
      }
    }
    const TokenId token = record.tokens.back();
    record.committed = token;
    cache.mark_committed(offset + i);
    trace.sequence.push_back(token);
    trace.stages.push_back(std::move(record));
    input = token;
    if (token == config.eos_id) break;
  }
  return DecodeResult{trace.sequence, std::move(trace)};
}

GroupExitLogits pipeline_forward_pass(const DecoderModel& model, TokenId current_token,
                                      std::span<const int> iteration_indices,
                                      std::span<Vectorf> hidden, KvCache& cache,
                                      int position_offset) {
  const int groups = model.config().groups;
  if (static_cast<int>(iteration_indices.size()) != groups ||
      static_cast<int>(hidden.size()) != groups) {
    throw std::invalid_argument("pipeline_forward_pass: expected " + std::to_string(groups) +
                                " stages");
  }
  GroupExitLogits out;
  out.exits.resize(static_cast<std::size_t>(groups));
  // Oldest token first. Any order is valid: a token at stage g only reads
  // group-g layers, which every older (deeper) token wrote in earlier stages.
  for (int g = groups - 1; g >= 0; --g) {
    const auto gi = static_cast<std::size_t>(g);
    const int iteration = iteration_indices[gi];
    if (iteration == kInvalidIteration) continue;
    const int position = position_offset + iteration;
    if (g == 0) hidden[0] = model.embed(current_token, position);
    GroupOutput result = model.forward_group(hidden[gi], g, position, cache);
    hidden[gi] = std::move(result.hidden);
    out.exits[gi] = std::move(result.logits);
  }
  return out;
}

DecodeResult decode_speed(const DecoderModel& model, const ShareConfig& config,
                          std::span<const TokenId> prompt, const StageObserver& observer) {
  check_model(model, config, prompt);
  const int groups = config.groups;
  const int max_len = config.max_decode_length;
  const int offset = static_cast<int>(prompt.size());
  const auto G = static_cast<std::size_t>(groups);
  KvCache cache = model.make_cache();

  PipelineState state;
  state.sequence.assign(static_cast<std::size_t>(max_len), config.pad_id);
  state.previous_tokens.assign(G - 1, kInvalidToken);
  state.iteration_indices.assign(G, kInvalidIteration);
  state.iteration_indices[0] = 0;  // first generated token enters stage 0 immediately
  state.current_token = prefill(model, prompt, cache);
  state.hidden.assign(G, Vectorf());

  DecodeTrace trace;
  trace.engine = Engine::speed;
  trace.groups = groups;
  trace.max_decode_length = max_len;
  trace.prompt_length = offset;

  while (state.graduated_token != config.eos_id && state.current_index < max_len) {
    auto& indices = state.iteration_indices;
    StageRecord record;
    record.stage = trace.stages_executed();
    record.iteration_indices = indices;
    record.previous_tokens = state.previous_tokens;

    const GroupExitLogits logits = pipeline_forward_pass(model, state.current_token, indices,
                                                         state.hidden, cache, offset);
    std::vector<TokenId> tokens(G, kInvalidToken);
    for (std::size_t g = 0; g < G; ++g) {
      if (logits.exits[g] && indices[g] != kInvalidIteration) {
        tokens[g] = classify_exit(*logits.exits[g], config.vocab_size);
      }
    }
    record.tokens = tokens;

    std::vector<int> compare(G, 0);
    for (std::size_t g = 1; g < G; ++g) {
      compare[g] = tokens[g] != state.previous_tokens[g - 1] ? 1 : 0;
      if (compare[g] != 0) {
        if (tokens[g] == kInvalidToken || state.previous_tokens[g - 1] == kInvalidToken) {
          throw PipelineInvariantError("classification compared against an empty slot at stage " +
                                       std::to_string(g) + "\n" + state.dump());
        }
        record.flips.push_back({static_cast<int>(g), indices[g], state.previous_tokens[g - 1],
                                tokens[g]});
      }
    }
    const int last_invalid = get_index_of_last_nonzero(compare);
    record.last_invalid = last_invalid;

    // Flush every token younger than the oldest one whose classification changed.
    for (int g = 0; g < last_invalid; ++g) {
      const auto gi = static_cast<std::size_t>(g);
      if (indices[gi] != kInvalidIteration) {
        ++record.invalidated_tokens;
        record.invalidated_token_stages += g + 1;
      }
      indices[gi] = kInvalidIteration;
    }
    const auto li = static_cast<std::size_t>(last_invalid);
    if (last_invalid > 0) cache.invalidate_from(offset + indices[li] + 1);
    for (std::size_t g = 0; g < G; ++g) {
      if (indices[g] == kInvalidIteration) tokens[g] = kInvalidToken;
    }

    state.previous_tokens.assign(tokens.begin(), tokens.end() - 1);
    state.current_token = tokens[li];
    // An empty slot at last_invalid only happens once injection has stopped
    // at max_decode_length; it must not restart the sequence at position 0.
    const int start_idx =
        indices[li] == kInvalidIteration ? kInvalidIteration : indices[li] + 1;

    if (indices[G - 1] != kInvalidIteration) {
      const TokenId token = tokens[G - 1];
      state.sequence[static_cast<std::size_t>(state.current_index)] = token;
      state.graduated_token = token;
      cache.mark_committed(offset + state.current_index);
      ++state.current_index;
      record.committed = token;
      trace.sequence.push_back(token);
    }

    std::rotate(indices.rbegin(), indices.rbegin() + 1, indices.rend());
    indices[0] = (start_idx != kInvalidIteration && start_idx < max_len) ? start_idx
                                                                         : kInvalidIteration;
    std::rotate(state.hidden.rbegin(), state.hidden.rbegin() + 1, state.hidden.rend());
    state.hidden[0] = Vectorf();

    state.check_invariants(max_len);
    trace.stages.push_back(std::move(record));
    if (observer) observer(state, cache, trace.stages.back());
  }
  return DecodeResult{trace.sequence, std::move(trace)};
}

}  // namespace speed
