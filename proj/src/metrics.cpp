#include "speed/metrics.hpp"

#include "speed/scripted.hpp"

#include <charconv>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace speed {

namespace {

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

template <typename T>
T parse_field(const std::string& s) {
  T value{};
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, value);
  if (ec != std::errc() || ptr != end) throw std::invalid_argument("bad CSV field '" + s + "'");
  return value;
}

std::vector<std::string> data_lines(const std::string& text, const std::string& header) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != header) {
    throw std::invalid_argument("CSV header must be '" + header + "'");
  }
  std::vector<std::string> out;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

constexpr const char* kProfileHeader = "boundary,flipped,observed,proportion";
constexpr const char* kCostHeader =
    "n_unique,groups,length,emb_ratio,scenario,stages,baseline_traffic,speed_traffic,speedup,"
    "asymptotic_bound";

}  // namespace

std::string format_number(double value) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, value);
  if (ec != std::errc()) throw std::runtime_error("format_number failed");
  return std::string(buf, ptr);
}

void FlipProfile::merge(const FlipProfile& other) {
  if (boundaries.empty()) {
    boundaries = other.boundaries;
    return;
  }
  if (other.boundaries.size() != boundaries.size()) {
    throw std::invalid_argument("FlipProfile::merge: different group counts");
  }
  for (std::size_t b = 0; b < boundaries.size(); ++b) {
    boundaries[b].flipped += other.boundaries[b].flipped;
    boundaries[b].observed += other.boundaries[b].observed;
  }
}

FlipProfile flip_profile(const DecodeTrace& trace) {
  if (trace.stages.empty()) throw std::invalid_argument("flip_profile: empty trace");
  FlipProfile profile;
  for (int b = 1; b < trace.groups; ++b) profile.boundaries.push_back({b, 0, 0});
  for (const auto& record : trace.stages) {
    for (int b = 1; b < trace.groups; ++b) {
      const auto bi = static_cast<std::size_t>(b);
      const TokenId now = record.tokens.at(bi);
      const TokenId before = record.previous_tokens.at(bi - 1);
      if (now == kInvalidToken || before == kInvalidToken) continue;
      auto& slot = profile.boundaries[bi - 1];
      ++slot.observed;
      if (now != before) ++slot.flipped;
    }
  }
  return profile;
}

CostReport cost_model(const CostModelInput& in) {
  if (!(in.layer_bytes > 0.0)) throw std::invalid_argument("cost_model: layer bytes must be > 0");
  if (!(in.embedding_bytes >= 0.0)) {
    throw std::invalid_argument("cost_model: embedding bytes must be >= 0");
  }
  if (in.n_unique < 1 || in.groups < 1) {
    throw std::invalid_argument("cost_model: n_unique and groups must be >= 1");
  }
  if (in.stages < 1 || in.committed_length < 1 || in.baseline_iterations < 1) {
    throw std::invalid_argument("cost_model: stage and token counts must be >= 1");
  }
  if (in.stages < in.committed_length) {
    throw std::invalid_argument("cost_model: fewer stages than committed tokens");
  }
  const double per_token = in.groups * in.n_unique * in.layer_bytes + in.embedding_bytes;
  const double per_stage = in.n_unique * in.layer_bytes + in.embedding_bytes;
  CostReport r;
  r.baseline_traffic = static_cast<double>(in.baseline_iterations) * per_token;
  r.speed_traffic = static_cast<double>(in.stages) * per_stage;
  r.speedup = r.baseline_traffic / r.speed_traffic;
  r.asymptotic_bound = per_token / per_stage;
  return r;
}

int StageSummary::wasted_token_stages(int groups) const {
  return std::accumulate(occupancy.begin(), occupancy.end(), 0) - commits * groups;
}

StageSummary stage_accounting(const DecodeTrace& trace) {
  StageSummary s;
  s.stages = trace.stages_executed();
  for (const auto& r : trace.stages) {
    s.occupancy.push_back(r.occupancy());
    if (r.committed) ++s.commits;
    if (r.injected()) ++s.injections;
    if (r.last_invalid > 0) ++s.invalidation_events;
    s.invalidated_tokens += r.invalidated_tokens;
    s.invalidated_token_stages += r.invalidated_token_stages;
  }
  // Tokens that survived the final stage without graduating are abandoned.
  if (trace.engine == Engine::speed && !trace.stages.empty()) {
    const auto& last = trace.stages.back();
    for (int g = last.last_invalid; g + 1 < trace.groups; ++g) {
      if (last.iteration_indices[static_cast<std::size_t>(g)] != kInvalidIteration) {
        ++s.abandoned_tokens;
        s.abandoned_token_stages += g + 1;
      }
    }
  }
  return s;
}

std::string format_profile_csv(const FlipProfile& profile) {
  std::ostringstream os;
  os << kProfileHeader << '\n';
  for (const auto& b : profile.boundaries) {
    os << b.boundary << ',' << b.flipped << ',' << b.observed << ','
       << format_number(b.proportion()) << '\n';
  }
  return os.str();
}

FlipProfile parse_profile_csv(const std::string& text) {
  FlipProfile profile;
  for (const auto& line : data_lines(text, kProfileHeader)) {
    const auto f = split(line, ',');
    if (f.size() != 4) throw std::invalid_argument("profile CSV row needs 4 fields: " + line);
    FlipProfile::Boundary b{parse_field<int>(f[0]), parse_field<std::int64_t>(f[1]),
                            parse_field<std::int64_t>(f[2])};
    if (parse_field<double>(f[3]) != b.proportion()) {
      throw std::invalid_argument("profile CSV proportion disagrees with counts: " + line);
    }
    profile.boundaries.push_back(b);
  }
  return profile;
}

std::int64_t scenario_stages(const std::string& scenario, int groups, int length,
                             std::uint64_t seed) {
  if (groups < 1 || length < 1) throw std::invalid_argument("scenario: bad groups or length");
  if (scenario == "steady") return length;
  if (scenario == "perfect") return static_cast<std::int64_t>(length) + groups - 1;
  if (scenario.starts_with("flip:")) {
    double p = 0.0;
    try {
      std::size_t used = 0;
      p = std::stod(scenario.substr(5), &used);
      if (used != scenario.size() - 5) throw std::invalid_argument(scenario);
    } catch (const std::exception&) {
      throw std::invalid_argument("scenario '" + scenario + "': bad probability");
    }
    const std::vector<double> probs(static_cast<std::size_t>(groups - 1), p);
    ScriptedModel model(random_flip_script(seed, length, groups, probs));
    return decode_speed(model, model.config()).trace.stages_executed();
  }
  throw std::invalid_argument("unknown scenario '" + scenario + "'");
}

std::vector<CostSweepRow> cost_sweep(const CostSweepSpec& spec) {
  if (spec.n_unique.empty() || spec.groups.empty() || spec.lengths.empty() ||
      spec.embedding_ratios.empty() || spec.scenarios.empty()) {
    throw std::invalid_argument("cost sweep: every grid axis needs at least one value");
  }
  std::vector<CostSweepRow> rows;
  for (int n_unique : spec.n_unique) {
    for (int groups : spec.groups) {
      for (int length : spec.lengths) {
        for (double ratio : spec.embedding_ratios) {
          for (const auto& scenario : spec.scenarios) {
            CostSweepRow row{n_unique, groups, length, ratio, scenario,
                             scenario_stages(scenario, groups, length, spec.seed), {}};
            row.report = cost_model({spec.layer_bytes, ratio * spec.layer_bytes, n_unique, groups,
                                     row.stages, length, length});
            rows.push_back(std::move(row));
          }
        }
      }
    }
  }
  return rows;
}

std::string format_cost_csv(const std::vector<CostSweepRow>& rows) {
  std::ostringstream os;
  os << kCostHeader << '\n';
  for (const auto& r : rows) {
    os << r.n_unique << ',' << r.groups << ',' << r.length << ','
       << format_number(r.embedding_ratio) << ',' << r.scenario << ',' << r.stages << ','
       << format_number(r.report.baseline_traffic) << ','
       << format_number(r.report.speed_traffic) << ',' << format_number(r.report.speedup) << ','
       << format_number(r.report.asymptotic_bound) << '\n';
  }
  return os.str();
}

std::vector<CostSweepRow> parse_cost_csv(const std::string& text) {
  std::vector<CostSweepRow> rows;
  for (const auto& line : data_lines(text, kCostHeader)) {
    const auto f = split(line, ',');
    if (f.size() != 10) throw std::invalid_argument("cost CSV row needs 10 fields: " + line);
    CostSweepRow r;
    r.n_unique = parse_field<int>(f[0]);
    r.groups = parse_field<int>(f[1]);
    r.length = parse_field<int>(f[2]);
    r.embedding_ratio = parse_field<double>(f[3]);
    r.scenario = f[4];
    r.stages = parse_field<std::int64_t>(f[5]);
    r.report.baseline_traffic = parse_field<double>(f[6]);
    r.report.speed_traffic = parse_field<double>(f[7]);
    r.report.speedup = parse_field<double>(f[8]);
    r.report.asymptotic_bound = parse_field<double>(f[9]);
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace speed
