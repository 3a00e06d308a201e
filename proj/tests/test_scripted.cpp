#include <doctest.h>

#include "speed/decode.hpp"
#include "speed/errors.hpp"
#include "speed/scripted.hpp"

#include <filesystem>

using namespace speed;

namespace {

FlipScript tiny() {
  return parse_script(
      "# three positions, one flip at position 0\n"
      "config vocab=10 bos=7 eos=8 pad=9\n"
      "0 0 5\n"
      "6 6 6\n"
      "1 1 8   # eos at the end\n");
}

}  // namespace

TEST_CASE("scripted_forward_group reads rows and pads past the end") {
  FlipScript s = tiny();
  CHECK(s.groups == 3);
  CHECK(s.length() == 3);
  CHECK(scripted_forward_group(s, 0, 0, 7) == 0);
  CHECK(scripted_forward_group(s, 0, 2, 7) == 5);
  CHECK(scripted_forward_group(s, 1, 1, 0) == 6);
  CHECK(scripted_forward_group(s, 3, 0, 1) == 9);
  CHECK(scripted_forward_group(s, 100, 2, 1) == 9);
  CHECK_THROWS_AS(scripted_forward_group(s, 0, 3, 1), std::out_of_range);
  CHECK(s.ground_truth() == std::vector<TokenId>{5, 6, 8});
}

TEST_CASE("overrides make a position depend on its input") {
  FlipScript s = parse_script("config vocab=10 bos=7 eos=8 pad=9\n1 2\n3 4\n@ 1 1 2 6\n");
  CHECK(scripted_forward_group(s, 1, 1, 2) == 6);
  CHECK(scripted_forward_group(s, 1, 1, 1) == 4);
  CHECK(scripted_forward_group(s, 1, 0, 2) == 3);
}

TEST_CASE("script text round trips") {
  FlipScript s = parse_script("config vocab=10 bos=7 eos=8 pad=9\n1 2\n3 4\n@ 1 1 2 6\n");
  const std::string text = format_script(s);
  CHECK(parse_script(text) == s);
  CHECK(format_script(parse_script(text)) == text);

  const auto path = std::filesystem::temp_directory_path() / "speed_test_script.txt";
  save_script(s, path);
  CHECK(load_script(path) == s);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_script(path), IoError);
}

TEST_CASE("malformed scripts are rejected") {
  CHECK_THROWS_AS(parse_script(""), std::invalid_argument);
  CHECK_THROWS_AS(parse_script("1 2\n3\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_script("1 x\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_script("config vocab=5 bos=3 eos=2 pad=4\n1 7\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_script("config colour=3\n1 2\n"), std::invalid_argument);
  CHECK_THROWS_AS(parse_script("@ 0 0 1\n1 2\n"), std::invalid_argument);
}

TEST_CASE("random_flip_script with probability 0 and 1") {
  std::vector<double> never{0.0, 0.0};
  FlipScript s = random_flip_script(5, 200, 3, never);
  for (const auto& row : s.rows) {
    REQUIRE(row[0] == row[1]);
    REQUIRE(row[1] == row[2]);
  }
  std::vector<double> always{1.0, 1.0};
  s = random_flip_script(5, 200, 3, always, 4);
  for (const auto& row : s.rows) {
    REQUIRE(row[0] != row[1]);
    REQUIRE(row[1] != row[2]);
    for (TokenId t : row) REQUIRE((t >= 0 && t < 4));
  }
  CHECK(random_flip_script(9, 50, 3, always) == random_flip_script(9, 50, 3, always));
  CHECK_FALSE(random_flip_script(9, 50, 3, always) == random_flip_script(10, 50, 3, always));

  std::vector<double> wrong{0.1};
  CHECK_THROWS_AS(random_flip_script(1, 10, 3, wrong), std::invalid_argument);
  std::vector<double> bad{0.1, 1.5};
  CHECK_THROWS_AS(random_flip_script(1, 10, 3, bad), std::invalid_argument);
  CHECK_THROWS_AS(random_flip_script(1, 10, 3, always, 257), std::invalid_argument);
}

TEST_CASE("random_flip_script hits its boundary rates") {
  std::vector<double> probs{0.3, 0.1, 0.02};
  FlipScript s = random_flip_script(77, 20000, 4, probs);
  for (std::size_t b = 0; b < probs.size(); ++b) {
    int flips = 0;
    for (const auto& row : s.rows) flips += row[b] != row[b + 1];
    CHECK(std::abs(flips / 20000.0 - probs[b]) < 0.02);
  }
}

TEST_CASE("scripted model caches stub entries per virtual layer") {
  ScriptedModel m(tiny(), 2);
  CHECK(m.config().total_layers() == 6);
  KvCache cache = m.make_cache();
  Vectorf h = m.embed(7, 0);
  GroupOutput g0 = m.forward_group(h, 0, 0, cache);
  CHECK(classify(g0.logits) == 0);
  CHECK(cache.size(0) == 1);
  CHECK(cache.size(1) == 1);
  CHECK(cache.size(2) == 0);
  const KvEntry& e = cache.at(1, 0);
  CHECK(e.key(0, 0) == 7.0f);  // input
  CHECK(e.key(0, 2) == 1.0f);  // layer
  CHECK(e.key(0, 3) == 0.0f);  // classification
  GroupOutput g2 = m.forward_group(m.forward_group(g0.hidden, 1, 0, cache).hidden, 2, 0, cache);
  CHECK(classify(g2.logits) == 5);
}

TEST_CASE("greedy decoding over a script reproduces its final column") {
  ScriptedModel m(tiny());
  auto r = decode_greedy(m, m.config());
  CHECK(r.sequence == std::vector<TokenId>{5, 6, 8});
  CHECK(r.trace.stages_executed() == 3);
}
