#include "speed/model_io.hpp"

#include <json.hpp>

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace speed {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kFormat = "speed-model";
constexpr int kVersion = 1;

const char* const kLayerTensors[] = {"wq",       "wk",       "wv",       "wo",      "ffn_in",
                                     "ffn_out",  "ln1.gain", "ln1.bias", "ln2.gain", "ln2.bias"};

std::pair<int, int> layer_tensor_shape(const std::string& leaf, const ShareConfig& c) {
  if (leaf == "ffn_in") return {c.d_model, c.d_ffn};
  if (leaf == "ffn_out") return {c.d_ffn, c.d_model};
  if (leaf.starts_with("ln")) return {1, c.d_model};
  return {c.d_model, c.d_model};
}

json config_to_json(const ShareConfig& c) {
  return json{{"n_unique", c.n_unique},     {"groups", c.groups},   {"d_model", c.d_model},
              {"n_heads", c.n_heads},       {"d_head", c.d_head},   {"d_ffn", c.d_ffn},
              {"vocab_size", c.vocab_size}, {"bos_id", c.bos_id},   {"eos_id", c.eos_id},
              {"pad_id", c.pad_id},         {"max_decode_length", c.max_decode_length}};
}

ShareConfig config_from_json(const json& j) {
  ShareConfig c;
  c.n_unique = j.at("n_unique").get<int>();
  c.groups = j.at("groups").get<int>();
  c.d_model = j.at("d_model").get<int>();
  c.n_heads = j.at("n_heads").get<int>();
  c.d_head = j.at("d_head").get<int>();
  c.d_ffn = j.at("d_ffn").get<int>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.bos_id = j.at("bos_id").get<TokenId>();
  c.eos_id = j.at("eos_id").get<TokenId>();
  c.pad_id = j.at("pad_id").get<TokenId>();
  c.max_decode_length = j.at("max_decode_length").get<int>();
  c.validate();
  return c;
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

template <typename Derived>
void append_tensor(std::string& blob, const Eigen::MatrixBase<Derived>& t) {
  for (Eigen::Index i = 0; i < t.rows(); ++i) {
    for (Eigen::Index j = 0; j < t.cols(); ++j) append_f32_le(blob, t(i, j));
  }
}

Tensor2Df take_tensor(const std::string& blob, const TensorRecord& r) {
  const std::uint64_t bytes = static_cast<std::uint64_t>(r.rows) * r.cols * 4;
  if (r.offset + bytes > blob.size()) {
    throw IoError("tensor " + r.name + " extends past the end of " + kBlobName);
  }
  Tensor2Df t(r.rows, r.cols);
  const auto* base = reinterpret_cast<const unsigned char*>(blob.data()) + r.offset;
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = read_f32_le(base + 4 * i);
  return t;
}

}  // namespace

void append_f32_le(std::string& out, float value) {
  const auto bits = std::bit_cast<std::uint32_t>(value);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFu));
}

float read_f32_le(const unsigned char* bytes) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[b]) << (8 * b);
  return std::bit_cast<float>(bits);
}

std::vector<TensorRecord> tensor_table(const ShareConfig& config, std::uint64_t seed) {
  std::vector<TensorRecord> table;
  std::uint64_t offset = 0;
  auto add = [&](std::string name, int rows, int cols) {
    table.push_back({std::move(name), rows, cols, offset, tensor_seed(seed, table.size())});
    offset += static_cast<std::uint64_t>(rows) * cols * 4;
  };
  add("embedding", config.vocab_size, config.d_model);
  add("final_norm.gain", 1, config.d_model);
  add("final_norm.bias", 1, config.d_model);
  for (int l = 0; l < config.n_unique; ++l) {
    for (const char* leaf : kLayerTensors) {
      auto [rows, cols] = layer_tensor_shape(leaf, config);
      add("layers." + std::to_string(l) + "." + leaf, rows, cols);
    }
  }
  return table;
}

std::vector<TensorRecord> save_model(const NeuralModel& model, std::uint64_t seed,
                                     const fs::path& dir) {
  const ShareConfig& config = model.config();
  auto table = tensor_table(config, seed);

  std::string blob;
  append_tensor(blob, model.embedding());
  append_tensor(blob, model.final_gain().transpose());
  append_tensor(blob, model.final_bias().transpose());
  for (const auto& w : model.layers()) {
    append_tensor(blob, w.wq);
    append_tensor(blob, w.wk);
    append_tensor(blob, w.wv);
    append_tensor(blob, w.wo);
    append_tensor(blob, w.ffn_in);
    append_tensor(blob, w.ffn_out);
    append_tensor(blob, w.ln1_gain.transpose());
    append_tensor(blob, w.ln1_bias.transpose());
    append_tensor(blob, w.ln2_gain.transpose());
    append_tensor(blob, w.ln2_bias.transpose());
  }

  json tensors = json::array();
  for (const auto& r : table) {
    tensors.push_back({{"name", r.name},
                       {"shape", {r.rows, r.cols}},
                       {"offset", r.offset},
                       {"seed", r.seed}});
  }
  json manifest{{"format", kFormat},       {"version", kVersion},
                {"config", config_to_json(config)},
                {"seed", seed},            {"blob", kBlobName},
                {"blob_bytes", blob.size()}, {"dtype", "f32le"},
                {"tensors", tensors}};

  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  write_file(dir / kBlobName, blob);
  write_file(dir / kManifestName, manifest.dump(2) + "\n");
  return table;
}

ModelFile load_model(const fs::path& dir) {
  json manifest;
  try {
    manifest = json::parse(read_file(dir / kManifestName));
  } catch (const json::exception& e) {
    throw IoError("malformed manifest in " + dir.string() + ": " + e.what());
  }

  try {
    if (manifest.at("format") != kFormat || manifest.at("version") != kVersion) {
      throw IoError("unsupported model format in " + dir.string());
    }
    if (manifest.value("dtype", "f32le") != "f32le") throw IoError("unsupported dtype");
    const ShareConfig config = config_from_json(manifest.at("config"));
    const auto seed = manifest.at("seed").get<std::uint64_t>();
    const std::string blob = read_file(dir / manifest.at("blob").get<std::string>());

    std::vector<TensorRecord> table;
    for (const auto& t : manifest.at("tensors")) {
      table.push_back({t.at("name").get<std::string>(), t.at("shape").at(0).get<int>(),
                       t.at("shape").at(1).get<int>(), t.at("offset").get<std::uint64_t>(),
                       t.at("seed").get<std::uint64_t>()});
    }
    const auto expected = tensor_table(config, seed);
    if (table.size() != expected.size()) throw IoError("manifest tensor count mismatch");
    for (std::size_t i = 0; i < table.size(); ++i) {
      const auto& a = table[i];
      const auto& b = expected[i];
      if (a.name != b.name || a.rows != b.rows || a.cols != b.cols || a.offset != b.offset) {
        throw IoError("manifest entry " + std::to_string(i) + " (" + a.name +
                      ") does not match the configuration");
      }
    }

    std::size_t next = 0;
    auto take = [&] { return take_tensor(blob, table[next++]); };
    auto take_vec = [&] { return Vectorf(take().transpose()); };

    Tensor2Df embedding = take();
    Vectorf final_gain = take_vec();
    Vectorf final_bias = take_vec();
    std::vector<DecoderLayerWeights> layers(static_cast<std::size_t>(config.n_unique));
    for (auto& w : layers) {
      w.wq = take();
      w.wk = take();
      w.wv = take();
      w.wo = take();
      w.ffn_in = take();
      w.ffn_out = take();
      w.ln1_gain = take_vec();
      w.ln1_bias = take_vec();
      w.ln2_gain = take_vec();
      w.ln2_bias = take_vec();
    }
    return ModelFile{NeuralModel(config, std::move(layers), std::move(embedding),
                                 std::move(final_gain), std::move(final_bias)),
                     seed, std::move(table)};
  } catch (const json::exception& e) {
    throw IoError("malformed manifest in " + dir.string() + ": " + e.what());
  }
}

}  // namespace speed
