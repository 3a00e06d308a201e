#include <doctest.h>

#include "speed/model_io.hpp"
#include "speed/scripted.hpp"
#include "speed/trace_io.hpp"

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace speed;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spill(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << bytes;
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

ShareConfig small() {
  ShareConfig c;
  c.n_unique = 2;
  c.groups = 2;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_head = 8;
  c.d_ffn = 24;
  return c;
}

}  // namespace

TEST_CASE("little-endian float encoding") {
  std::string out;
  append_f32_le(out, 1.0f);
  append_f32_le(out, -2.5f);
  CHECK(out == std::string("\x00\x00\x80\x3f\x00\x00\x20\xc0", 8));
  const auto* bytes = reinterpret_cast<const unsigned char*>(out.data());
  CHECK(read_f32_le(bytes) == 1.0f);
  CHECK(read_f32_le(bytes + 4) == -2.5f);
}

TEST_CASE("tensor table layout") {
  auto table = tensor_table(small(), 5);
  REQUIRE(table.size() == 3 + 2 * 10);
  CHECK(table[0].name == "embedding");
  CHECK(table[0].rows == 259);
  CHECK(table[0].cols == 16);
  CHECK(table[1].name == "final_norm.gain");
  CHECK(table[1].offset == 259u * 16u * 4u);
  CHECK(table[3].name == "layers.0.wq");
  CHECK(table[7].name == "layers.0.ffn_in");
  CHECK(table[7].cols == 24);
  for (std::size_t i = 1; i < table.size(); ++i) {
    CHECK(table[i].offset ==
          table[i - 1].offset + 4u * static_cast<std::uint64_t>(table[i - 1].rows * table[i - 1].cols));
  }
}

TEST_CASE("model save, load and re-save are byte-identical") {
  TempDir a("speed_io_a"), b("speed_io_b");
  NeuralModel m = generate_model(17, small());
  save_model(m, 17, a.path);
  ModelFile loaded = load_model(a.path);
  CHECK(loaded.seed == 17);
  CHECK(loaded.model.config() == m.config());
  CHECK(loaded.model.embedding() == m.embedding());
  CHECK(loaded.model.layers()[1].wv == m.layers()[1].wv);
  save_model(loaded.model, loaded.seed, b.path);
  CHECK(slurp(a.path / kManifestName) == slurp(b.path / kManifestName));
  CHECK(slurp(a.path / kBlobName) == slurp(b.path / kBlobName));

  auto manifest = nlohmann::json::parse(slurp(a.path / kManifestName));
  CHECK(manifest["format"] == "speed-model");
  CHECK(manifest["dtype"] == "f32le");
  CHECK(manifest["blob_bytes"].get<std::uint64_t>() == fs::file_size(a.path / kBlobName));
}

TEST_CASE("generated model files depend only on the seed") {
  TempDir a("speed_io_gen_a"), b("speed_io_gen_b");
  save_model(generate_model(3, small()), 3, a.path);
  save_model(generate_model(3, small()), 3, b.path);
  CHECK(slurp(a.path / kBlobName) == slurp(b.path / kBlobName));
}

TEST_CASE("load_model reports damaged directories") {
  TempDir d("speed_io_bad");
  CHECK_THROWS_AS(load_model(d.path), IoError);

  save_model(generate_model(1, small()), 1, d.path);
  const std::string blob = slurp(d.path / kBlobName);
  spill(d.path / kBlobName, blob.substr(0, blob.size() - 4));
  CHECK_THROWS_AS(load_model(d.path), IoError);

  spill(d.path / kBlobName, blob);
  const std::string manifest = slurp(d.path / kManifestName);
  spill(d.path / kManifestName, manifest.substr(0, manifest.size() / 2));
  CHECK_THROWS_AS(load_model(d.path), IoError);

  auto j = nlohmann::json::parse(manifest);
  j["tensors"][3]["name"] = "layers.0.wz";
  spill(d.path / kManifestName, j.dump(2) + "\n");
  CHECK_THROWS_AS(load_model(d.path), IoError);

  j = nlohmann::json::parse(manifest);
  j["version"] = 99;
  spill(d.path / kManifestName, j.dump(2) + "\n");
  CHECK_THROWS_AS(load_model(d.path), IoError);
}

TEST_CASE("trace JSON lines round trip") {
  FlipScript s = parse_script("config vocab=10 bos=7 eos=8 pad=9\n0 0 5\n6 6 6\n1 1 1\n");
  ScriptedModel m(s);
  for (const DecodeTrace& t : {decode_speed(m, m.config()).trace, decode_greedy(m, m.config()).trace}) {
    const std::string text = format_trace(t);
    CHECK(parse_trace(text) == t);
    CHECK(format_trace(parse_trace(text)) == text);
  }
  const std::string text = format_trace(decode_speed(m, m.config()).trace);
  std::istringstream lines(text);
  std::string first;
  std::getline(lines, first);
  CHECK(first == R"({"engine":"speed","groups":3,"kind":"header","max_decode_length":3,"prompt_length":0})");

  TempDir d("speed_io_trace");
  fs::create_directories(d.path);
  save_trace(decode_speed(m, m.config()).trace, d.path / "t.jsonl");
  CHECK(load_trace(d.path / "t.jsonl") == decode_speed(m, m.config()).trace);
  CHECK_THROWS_AS(load_trace(d.path / "missing.jsonl"), IoError);
  CHECK_THROWS(parse_trace("{\"kind\":\"stage\"}\n"));
}
