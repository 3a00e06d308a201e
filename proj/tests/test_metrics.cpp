#include <doctest.h>

#include "speed/metrics.hpp"
#include "speed/scripted.hpp"

#include <random>

using namespace speed;

namespace {

DecodeTrace run_script(const FlipScript& s) {
  ScriptedModel m(s);
  return decode_speed(m, m.config()).trace;
}

// Counts from the raw records, boundary by boundary, without flip_profile.
std::vector<std::pair<std::int64_t, std::int64_t>> recount(const DecodeTrace& t) {
  std::vector<std::pair<std::int64_t, std::int64_t>> out(static_cast<std::size_t>(t.groups - 1));
  for (const auto& r : t.stages) {
    for (std::size_t g = 1; g < r.tokens.size(); ++g) {
      if (r.tokens[g] < 0 || r.previous_tokens[g - 1] < 0) continue;
      out[g - 1].second += 1;
      out[g - 1].first += r.tokens[g] != r.previous_tokens[g - 1];
    }
  }
  return out;
}

}  // namespace

TEST_CASE("flip profile of a hand-checked run") {
  FlipScript s = parse_script("config vocab=10 bos=7 eos=8 pad=9\n0 0 5\n6 6 6\n1 1 1\n");
  FlipProfile p = flip_profile(run_script(s));
  REQUIRE(p.boundaries.size() == 2);
  // Boundary 1 compares stage 1 against its predecessor's stage-0 class:
  // stages 1, 2, 4, 5 have both present; none flip.
  CHECK(p.boundaries[0] == FlipProfile::Boundary{1, 0, 4});
  // Boundary 2: stages 2, 5, 6; only position 0 flips (0 -> 5).
  CHECK(p.boundaries[1] == FlipProfile::Boundary{2, 1, 3});
  CHECK(p.boundaries[1].proportion() == doctest::Approx(1.0 / 3));
  CHECK(FlipProfile::Boundary{1, 0, 0}.proportion() == 0.0);
}

TEST_CASE("flip profile matches a recount and merges additively") {
  std::mt19937_64 rng(8);
  FlipProfile total;
  std::vector<std::pair<std::int64_t, std::int64_t>> expected(2);
  for (int trial = 0; trial < 40; ++trial) {
    std::vector<double> probs{0.2, 0.4};
    DecodeTrace t = run_script(random_flip_script(rng(), 30, 3, probs, 8));
    FlipProfile p = flip_profile(t);
    auto counts = recount(t);
    for (std::size_t b = 0; b < 2; ++b) {
      REQUIRE(p.boundaries[b].flipped == counts[b].first);
      REQUIRE(p.boundaries[b].observed == counts[b].second);
      expected[b].first += counts[b].first;
      expected[b].second += counts[b].second;
    }
    if (total.boundaries.empty()) total = p;
    else total.merge(p);
  }
  for (std::size_t b = 0; b < 2; ++b) {
    CHECK(total.boundaries[b].flipped == expected[b].first);
    CHECK(total.boundaries[b].observed == expected[b].second);
  }
  FlipProfile wrong;
  wrong.boundaries.resize(5);
  CHECK_THROWS_AS(total.merge(wrong), std::invalid_argument);
  CHECK_THROWS_AS(flip_profile(DecodeTrace{}), std::invalid_argument);
}

TEST_CASE("greedy traces profile every token once per boundary") {
  FlipScript s = parse_script("1 2 2\n3 3 3\n4 4 5\n");
  ScriptedModel m(s);
  FlipProfile p = flip_profile(decode_greedy(m, m.config()).trace);
  CHECK(p.boundaries[0] == FlipProfile::Boundary{1, 1, 3});
  CHECK(p.boundaries[1] == FlipProfile::Boundary{2, 1, 3});
}

TEST_CASE("cost model examples") {
  CostModelInput in;
  in.n_unique = 4;
  in.groups = 3;
  in.layer_bytes = 1.0;
  in.embedding_bytes = 0.0;
  in.committed_length = in.baseline_iterations = 1000000;
  in.stages = in.committed_length + 2;
  CostReport r = cost_model(in);
  CHECK(r.baseline_traffic == doctest::Approx(12e6));
  CHECK(r.speedup == doctest::Approx(3.0).epsilon(1e-5));
  CHECK(r.asymptotic_bound == doctest::Approx(3.0));

  in.embedding_bytes = 3.0;
  in.committed_length = in.baseline_iterations = in.stages = 100;
  r = cost_model(in);
  CHECK(r.speedup == doctest::Approx(15.0 / 7.0));
  CHECK(r.asymptotic_bound == doctest::Approx(15.0 / 7.0));
  CHECK(r.speed_traffic == doctest::Approx(700.0));

  CostModelInput one = in;
  one.groups = 1;
  one.embedding_bytes = 0.0;
  CHECK(cost_model(one).speedup == doctest::Approx(1.0));
}

TEST_CASE("cost model monotonicity") {
  CostModelInput base;
  base.n_unique = 2;
  base.groups = 6;
  base.committed_length = base.baseline_iterations = 64;
  base.stages = 69;
  const double s0 = cost_model(base).speedup;

  CostModelInput more_stages = base;
  more_stages.stages = 90;
  CHECK(cost_model(more_stages).speedup < s0);

  CostModelInput heavier_emb = base;
  heavier_emb.embedding_bytes = 5.0;
  CHECK(cost_model(heavier_emb).speedup < s0);

  double prev = 0.0;
  for (int g = 1; g <= 8; ++g) {
    CostModelInput deeper = base;
    deeper.groups = g;
    deeper.stages = 64 + g - 1;
    const double s = cost_model(deeper).speedup;
    CHECK(s > prev);
    CHECK(s <= cost_model(deeper).asymptotic_bound + 1e-12);
    prev = s;
  }
}

TEST_CASE("cost model rejects impossible inputs") {
  CostModelInput in;
  in.layer_bytes = 0.0;
  CHECK_THROWS_AS(cost_model(in), std::invalid_argument);
  in = {};
  in.embedding_bytes = -1.0;
  CHECK_THROWS_AS(cost_model(in), std::invalid_argument);
  in = {};
  in.stages = 1;
  in.committed_length = 2;
  CHECK_THROWS_AS(cost_model(in), std::invalid_argument);
  in = {};
  in.groups = 0;
  CHECK_THROWS_AS(cost_model(in), std::invalid_argument);
}

TEST_CASE("stage accounting conserves token-stages") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const int groups = 1 + static_cast<int>(rng() % 6);
    std::vector<double> probs(static_cast<std::size_t>(groups - 1), 0.25);
    FlipScript s = random_flip_script(rng(), 1 + static_cast<int>(rng() % 20), groups, probs, 6);
    if (rng() % 2) s.rows[rng() % s.rows.size()].back() = s.eos_id;
    DecodeTrace t = run_script(s);
    StageSummary sum = stage_accounting(t);
    int occupied = 0;
    for (int o : sum.occupancy) occupied += o;
    REQUIRE(sum.stages == t.stages_executed());
    REQUIRE(sum.commits == static_cast<int>(t.sequence.size()));
    REQUIRE(occupied ==
            sum.commits * groups + sum.invalidated_token_stages + sum.abandoned_token_stages);
    REQUIRE(sum.wasted_token_stages(groups) ==
            sum.invalidated_token_stages + sum.abandoned_token_stages);
    REQUIRE(sum.injections == sum.commits + sum.invalidated_tokens + sum.abandoned_tokens);
    REQUIRE(sum.invalidation_events == t.invalidations());
  }
}

TEST_CASE("perfect runs waste nothing") {
  FlipScript s;
  s.groups = 4;
  for (int p = 0; p < 10; ++p) s.rows.emplace_back(4, p);
  StageSummary sum = stage_accounting(run_script(s));
  CHECK(sum.stages == 13);
  CHECK(sum.wasted_token_stages(4) == 0);
  CHECK(sum.occupancy == std::vector<int>{1, 2, 3, 4, 4, 4, 4, 4, 4, 4, 3, 2, 1});
}

TEST_CASE("scenario stages") {
  CHECK(scenario_stages("steady", 3, 50, 1) == 50);
  CHECK(scenario_stages("perfect", 3, 50, 1) == 52);
  CHECK(scenario_stages("flip:0", 3, 50, 1) == 52);
  CHECK(scenario_stages("flip:0.3", 3, 50, 1) > 52);
  CHECK(scenario_stages("flip:0.3", 3, 50, 1) == scenario_stages("flip:0.3", 3, 50, 1));
  CHECK_THROWS_AS(scenario_stages("flip:x", 3, 50, 1), std::invalid_argument);
  CHECK_THROWS_AS(scenario_stages("warp", 3, 50, 1), std::invalid_argument);
}

TEST_CASE("CSV round trips") {
  FlipProfile p;
  p.boundaries = {{1, 3, 7}, {2, 0, 5}};
  const std::string csv = format_profile_csv(p);
  CHECK(csv == "boundary,flipped,observed,proportion\n1,3,7,0.42857142857142855\n2,0,5,0\n");
  CHECK(parse_profile_csv(csv) == p);
  CHECK_THROWS_AS(parse_profile_csv("boundary,flipped,observed,proportion\n1,3,7,0.5\n"),
                  std::invalid_argument);

  CostSweepSpec spec;
  spec.groups = {1, 3};
  spec.lengths = {16, 128};
  spec.embedding_ratios = {0.0, 2.5};
  spec.scenarios = {"perfect", "flip:0.1"};
  auto rows = cost_sweep(spec);
  CHECK(rows.size() == 16);
  const std::string text = format_cost_csv(rows);
  auto back = parse_cost_csv(text);
  REQUIRE(back.size() == rows.size());
  CHECK(format_cost_csv(back) == text);
  CHECK(back[5].report.speedup == rows[5].report.speedup);
}

TEST_CASE("format_number is shortest round-trip") {
  CHECK(format_number(3.0) == "3");
  CHECK(format_number(0.1) == "0.1");
  CHECK(format_number(2.0 / 3.0) == "0.6666666666666666");
  CHECK(std::stod(format_number(1.0 / 7.0)) == 1.0 / 7.0);
}
