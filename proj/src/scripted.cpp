#include "speed/scripted.hpp"

#include "speed/errors.hpp"
#include "speed/neural_model.hpp"  // SplitMix64

#include <algorithm>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace speed {

namespace {

[[noreturn]] void parse_fail(int line_no, const std::string& what) {
  throw std::invalid_argument("script line " + std::to_string(line_no) + ": " + what);
}

double unit_interval(SplitMix64& rng) {
  return static_cast<double>(rng.next() >> 11) * (1.0 / 9007199254740992.0);
}

}  // namespace

void FlipScript::validate() const {
  if (groups < 1) throw std::invalid_argument("FlipScript: groups must be >= 1");
  ShareConfig ids;
  ids.vocab_size = vocab_size;
  ids.bos_id = bos_id;
  ids.eos_id = eos_id;
  ids.pad_id = pad_id;
  ids.validate();
  auto check_id = [&](TokenId t) {
    if (t < 0 || t >= vocab_size) {
      throw std::invalid_argument("FlipScript: token " + std::to_string(t) + " outside vocabulary");
    }
  };
  for (std::size_t p = 0; p < rows.size(); ++p) {
    if (static_cast<int>(rows[p].size()) != groups) {
      throw std::invalid_argument("FlipScript: row " + std::to_string(p) + " has " +
                                  std::to_string(rows[p].size()) + " entries, expected " +
                                  std::to_string(groups));
    }
    for (TokenId t : rows[p]) check_id(t);
  }
  for (const auto& [key, token] : overrides) {
    const auto& [position, group, input] = key;
    if (position < 0 || group < 0 || group >= groups) {
      throw std::invalid_argument("FlipScript: override outside the script shape");
    }
    check_id(input);
    check_id(token);
  }
}

std::vector<TokenId> FlipScript::ground_truth() const {
  std::vector<TokenId> out;
  for (const auto& row : rows) {
    out.push_back(row.back());
    if (row.back() == eos_id) break;
  }
  return out;
}

FlipScript parse_script(const std::string& text) {
  FlipScript script;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream fields(line);
    std::string head;
    if (!(fields >> head)) continue;

    if (head == "config") {
      std::string kv;
      while (fields >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) parse_fail(line_no, "expected key=value, got '" + kv + "'");
        const std::string key = kv.substr(0, eq);
        int value = 0;
        try {
          value = std::stoi(kv.substr(eq + 1));
        } catch (const std::exception&) {
          parse_fail(line_no, "bad value in '" + kv + "'");
        }
        if (key == "vocab") script.vocab_size = value;
        else if (key == "bos") script.bos_id = value;
        else if (key == "eos") script.eos_id = value;
        else if (key == "pad") script.pad_id = value;
        else parse_fail(line_no, "unknown config key '" + key + "'");
      }
      continue;
    }

    if (head == "@") {
      int position = 0, group = 0;
      TokenId input = 0, token = 0;
      if (!(fields >> position >> group >> input >> token)) {
        parse_fail(line_no, "override needs: @ position group input token");
      }
      script.overrides[{position, group, input}] = token;
      continue;
    }

    std::vector<TokenId> row;
    std::istringstream values(line);
    std::string field;
    while (values >> field) {
      try {
        std::size_t used = 0;
        row.push_back(std::stoi(field, &used));
        if (used != field.size()) throw std::invalid_argument(field);
      } catch (const std::exception&) {
        parse_fail(line_no, "not a token id: '" + field + "'");
      }
    }
    if (script.groups == 0) script.groups = static_cast<int>(row.size());
    if (static_cast<int>(row.size()) != script.groups) {
      parse_fail(line_no, "expected " + std::to_string(script.groups) + " ids, got " +
                              std::to_string(row.size()));
    }
    script.rows.push_back(std::move(row));
  }
  if (script.rows.empty()) throw std::invalid_argument("script has no rows");
  script.validate();
  return script;
}

std::string format_script(const FlipScript& script) {
  std::ostringstream os;
  os << "config vocab=" << script.vocab_size << " bos=" << script.bos_id
     << " eos=" << script.eos_id << " pad=" << script.pad_id << '\n';
  for (const auto& row : script.rows) {
    for (std::size_t g = 0; g < row.size(); ++g) os << (g ? " " : "") << row[g];
    os << '\n';
  }
  for (const auto& [key, token] : script.overrides) {
    const auto& [position, group, input] = key;
    os << "@ " << position << ' ' << group << ' ' << input << ' ' << token << '\n';
  }
  return os.str();
}

FlipScript load_script(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open script " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_script(ss.str());
}

void save_script(const FlipScript& script, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << format_script(script);
  if (!out) throw IoError("failed writing " + path.string());
}

FlipScript random_flip_script(std::uint64_t seed, int length, int groups,
                              std::span<const double> boundary_flip_probs, int alphabet_size) {
  if (length < 1 || groups < 1) {
    throw std::invalid_argument("random_flip_script: length and groups must be >= 1");
  }
  if (static_cast<int>(boundary_flip_probs.size()) != groups - 1) {
    throw std::invalid_argument("random_flip_script: need " + std::to_string(groups - 1) +
                                " boundary probabilities");
  }
  for (double p : boundary_flip_probs) {
    if (!(p >= 0.0 && p <= 1.0)) {
      throw std::invalid_argument("random_flip_script: probability outside [0, 1]");
    }
  }
  FlipScript script;
  script.groups = groups;
  if (alphabet_size < 2 || alphabet_size > std::min({script.bos_id, script.eos_id, script.pad_id})) {
    throw std::invalid_argument("random_flip_script: alphabet must have >= 2 non-special tokens");
  }

  SplitMix64 rng(seed);
  auto draw = [&](int n) { return static_cast<TokenId>(rng.next() % static_cast<std::uint64_t>(n)); };
  script.rows.reserve(static_cast<std::size_t>(length));
  for (int p = 0; p < length; ++p) {
    std::vector<TokenId> row(static_cast<std::size_t>(groups));
    row[0] = draw(alphabet_size);
    for (int g = 1; g < groups; ++g) {
      const TokenId prev = row[static_cast<std::size_t>(g - 1)];
      TokenId next = prev;
      if (unit_interval(rng) < boundary_flip_probs[static_cast<std::size_t>(g - 1)]) {
        next = draw(alphabet_size - 1);
        if (next >= prev) ++next;
      }
      row[static_cast<std::size_t>(g)] = next;
    }
    script.rows.push_back(std::move(row));
  }
  return script;
}

Vectorf one_hot_logits(TokenId token, int vocab_size) {
  Vectorf logits = Vectorf::Zero(vocab_size);
  logits(token) = 1.0f;
  return logits;
}

TokenId scripted_forward_group(const FlipScript& script, int position, int group, TokenId input) {
  if (group < 0 || group >= script.groups) {
    throw std::out_of_range("scripted_forward_group: group " + std::to_string(group));
  }
  if (position < 0 || position >= script.length()) return script.pad_id;
  if (auto it = script.overrides.find({position, group, input}); it != script.overrides.end()) {
    return it->second;
  }
  return script.rows[static_cast<std::size_t>(position)][static_cast<std::size_t>(group)];
}

ScriptedModel::ScriptedModel(FlipScript script, int n_unique, int max_decode_length)
    : script_(std::move(script)) {
  script_.validate();
  config_.n_unique = n_unique;
  config_.groups = script_.groups;
  config_.d_model = kStubWidth;
  config_.n_heads = 1;
  config_.d_head = kStubWidth;
  config_.d_ffn = kStubWidth;
  config_.vocab_size = script_.vocab_size;
  config_.bos_id = script_.bos_id;
  config_.eos_id = script_.eos_id;
  config_.pad_id = script_.pad_id;
  config_.max_decode_length = max_decode_length > 0 ? max_decode_length : script_.length();
  config_.validate();
}

TokenId ScriptedModel::classification(int position, int group, TokenId input) const {
  return scripted_forward_group(script_, position, group, input);
}

Vectorf ScriptedModel::embed(TokenId token, int position) const {
  if (token < 0 || token >= config_.vocab_size) {
    throw std::out_of_range("ScriptedModel::embed: token " + std::to_string(token) +
                            " outside vocabulary");
  }
  Vectorf h = Vectorf::Zero(kStubWidth);
  h(0) = static_cast<float>(token);
  h(1) = static_cast<float>(position);
  return h;
}

GroupOutput ScriptedModel::forward_group(const Vectorf& hidden, int group, int position,
                                         KvCache& cache) const {
  if (group < 0 || group >= config_.groups) {
    throw std::out_of_range("ScriptedModel::forward_group: group " + std::to_string(group));
  }
  if (hidden.size() != kStubWidth) throw ShapeError("ScriptedModel: bad hidden state");
  const auto input = static_cast<TokenId>(hidden(0));
  const TokenId token = classification(position, group, input);

  const int first = group * config_.n_unique;
  for (int l = first; l < first + config_.n_unique; ++l) {
    Tensor2Df key(1, kStubWidth);
    key << static_cast<float>(input), static_cast<float>(position), static_cast<float>(l),
        static_cast<float>(token);
    Tensor2Df value(1, kStubWidth);
    value << static_cast<float>(token), static_cast<float>(input), static_cast<float>(position),
        static_cast<float>(l);
    cache.write(l, position, std::move(key), std::move(value));
    cache.read_range(l, position);
  }
  return GroupOutput{hidden, one_hot_logits(token, config_.vocab_size)};
}

}  // namespace speed
