#include <doctest.h>

#include "speed/cli.hpp"

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using speed::cli::run;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result call(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string operator/(const std::string& leaf) const { return (path / leaf).string(); }
};

int exit_status(const std::string& command) {
  const int raw = std::system((command + " >/dev/null 2>&1").c_str());
  return WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
}

}  // namespace

TEST_CASE("decode with both engines reports equivalence") {
  Result r = call({"decode", "--seed", "5", "--prompt", "abc", "--max-decode-length", "20",
                   "--n-unique", "1", "--groups", "4", "--d-model", "16"});
  CHECK(r.code == speed::cli::kOk);
  CHECK(r.out.find("engine=greedy") != std::string::npos);
  CHECK(r.out.find("engine=speed") != std::string::npos);
  CHECK(r.out.find("equivalence=PASS") != std::string::npos);
  CHECK(r.err.empty());
}

TEST_CASE("script-run of a perfect script takes L + G - 1 stages") {
  TempDir d("speed_cli_script");
  std::ofstream(d / "s.txt") << "5 5 5\n6 6 6\n7 7 7\n8 8 8\n";
  Result r = call({"script-run", "--script", d / "s.txt", "--decoder", "speed"});
  CHECK(r.code == 0);
  CHECK(r.out.find("engine=speed tokens=4 stages=6 invalidations=0 sequence=5,6,7,8") !=
        std::string::npos);
}

TEST_CASE("exit codes") {
  TempDir d("speed_cli_codes");
  Result missing = call({"decode", "--model", d / "nope"});
  CHECK(missing.code == speed::cli::kIoError);
  CHECK(missing.err.rfind("error code=3 kind=io", 0) == 0);

  CHECK(call({"decode", "--seed", "1", "--groups", "banana"}).code == speed::cli::kUsageError);
  CHECK(call({"decode"}).code == speed::cli::kUsageError);
  CHECK(call({"decode", "--seed", "1", "--script", d / "x"}).code == speed::cli::kUsageError);
  CHECK(call({"frobnicate"}).code == speed::cli::kUsageError);
  CHECK(call({"decode", "--seed", "1", "--decoder", "beam"}).code == speed::cli::kUsageError);
  CHECK(call({"decode", "--seed", "1", "--prompt-ids", "999"}).code == speed::cli::kUsageError);
  CHECK(call({"profile", "--seed", "1"}).code == speed::cli::kUsageError);
  CHECK(call({"script-run", "--script", d / "absent.txt"}).code == speed::cli::kIoError);
  CHECK(call({"decode", "--seed", "1", "--trace", d / "no/such/dir/t.jsonl"}).code ==
        speed::cli::kIoError);
}

TEST_CASE("installed binary exit codes") {
  const std::string bin = SPEED_CLI_PATH;
  CHECK(exit_status(bin + " decode --model /nonexistent/model") == 3);
  CHECK(exit_status(bin + " decode --seed 1 --groups x") == 2);
  CHECK(exit_status(bin + " decode --seed 2 --max-decode-length 8") == 0);
}

TEST_CASE("gen-model output loads back for decoding") {
  TempDir d("speed_cli_gen");
  Result g = call({"gen-model", "--seed", "9", "--out", d / "m", "--n-unique", "1", "--groups",
                   "2", "--d-model", "16", "--n-heads", "2", "--max-decode-length", "10"});
  REQUIRE(g.code == 0);
  CHECK(g.out.find("tensor embedding 259x16 offset=0") != std::string::npos);
  Result r = call({"decode", "--model", d / "m", "--prompt", "x"});
  CHECK(r.code == 0);
  CHECK(r.out.find("equivalence=PASS") != std::string::npos);

  // Same weights as an in-memory model with the same seed and shape.
  Result s = call({"decode", "--seed", "9", "--n-unique", "1", "--groups", "2", "--d-model", "16",
                   "--n-heads", "2", "--max-decode-length", "10", "--prompt", "x"});
  CHECK(s.out.substr(s.out.find('\n')) == r.out.substr(r.out.find('\n')));
}

TEST_CASE("profile and cost write CSV") {
  TempDir d("speed_cli_csv");
  Result p = call({"profile", "--seed", "4", "--prompt", "ab", "--prompt", "cd",
                   "--max-decode-length", "12", "--out", d / "p.csv"});
  CHECK(p.code == 0);
  CHECK(slurp(d / "p.csv").rfind("boundary,flipped,observed,proportion\n1,", 0) == 0);

  Result c = call({"cost", "--groups", "3", "--n-unique", "4", "--lengths", "1000000",
                   "--scenarios", "perfect"});
  CHECK(c.code == 0);
  CHECK(c.out.find("4,3,1000000,0,perfect,1000002,1.2e+07,4000008,") != std::string::npos);
}

TEST_CASE("options can come from a config file") {
  TempDir d("speed_cli_config");
  std::ofstream(d / "run.toml") << "[decode]\nseed = 6\nmax-decode-length = 9\nprompt = \"hey\"\n";
  Result a = call({"decode", "--config", d / "run.toml"});
  Result b = call({"decode", "--seed", "6", "--max-decode-length", "9", "--prompt", "hey"});
  CHECK(a.code == 0);
  CHECK(a.out == b.out);
}

TEST_CASE("repeated runs are byte-identical") {
  TempDir d("speed_cli_det");
  for (const char* run_id : {"1", "2"}) {
    const std::string r = run_id;
    REQUIRE(call({"decode", "--seed", "12", "--prompt", "hi", "--max-decode-length", "16",
                  "--trace", d / ("t" + r), "--greedy-trace", d / ("g" + r), "--profile-csv",
                  d / ("p" + r)})
                .code == 0);
    REQUIRE(call({"gen-model", "--seed", "12", "--out", d / ("m" + r)}).code == 0);
    REQUIRE(call({"gen-script", "--seed", "12", "--length", "50", "--probs", "0.2,0.1", "--out",
                  d / ("s" + r)})
                .code == 0);
  }
  for (const char* stem : {"t", "g", "p", "s"}) {
    CHECK(slurp(d / (std::string(stem) + "1")) == slurp(d / (std::string(stem) + "2")));
  }
  CHECK(slurp(d / "m1/weights.bin") == slurp(d / "m2/weights.bin"));
  CHECK(slurp(d / "m1/manifest.json") == slurp(d / "m2/manifest.json"));
}
