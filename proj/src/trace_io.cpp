#include "speed/trace_io.hpp"

#include "speed/errors.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace speed {

using nlohmann::json;

namespace {

json record_to_json(const StageRecord& r) {
  json flips = json::array();
  for (const auto& f : r.flips) {
    flips.push_back({{"depth", f.depth}, {"iteration", f.iteration}, {"old", f.old_token},
                     {"new", f.new_token}});
  }
  return json{{"kind", "stage"},
              {"stage", r.stage},
              {"iteration_indices", r.iteration_indices},
              {"tokens", r.tokens},
              {"previous_tokens", r.previous_tokens},
              {"last_invalid", r.last_invalid},
              {"committed", r.committed ? json(*r.committed) : json(nullptr)},
              {"flips", flips},
              {"invalidated_tokens", r.invalidated_tokens},
              {"invalidated_token_stages", r.invalidated_token_stages}};
}

StageRecord record_from_json(const json& j) {
  StageRecord r;
  r.stage = j.at("stage").get<int>();
  r.iteration_indices = j.at("iteration_indices").get<std::vector<int>>();
  r.tokens = j.at("tokens").get<std::vector<TokenId>>();
  r.previous_tokens = j.at("previous_tokens").get<std::vector<TokenId>>();
  r.last_invalid = j.at("last_invalid").get<int>();
  if (!j.at("committed").is_null()) r.committed = j.at("committed").get<TokenId>();
  for (const auto& f : j.at("flips")) {
    r.flips.push_back({f.at("depth").get<int>(), f.at("iteration").get<int>(),
                       f.at("old").get<TokenId>(), f.at("new").get<TokenId>()});
  }
  r.invalidated_tokens = j.at("invalidated_tokens").get<int>();
  r.invalidated_token_stages = j.at("invalidated_token_stages").get<int>();
  return r;
}

}  // namespace

std::string format_trace(const DecodeTrace& trace) {
  std::ostringstream os;
  os << json{{"kind", "header"},
             {"engine", to_string(trace.engine)},
             {"groups", trace.groups},
             {"max_decode_length", trace.max_decode_length},
             {"prompt_length", trace.prompt_length}}
            .dump()
     << '\n';
  for (const auto& r : trace.stages) os << record_to_json(r).dump() << '\n';
  os << json{{"kind", "summary"},
             {"stages", trace.stages_executed()},
             {"committed", trace.tokens_committed()},
             {"invalidations", trace.invalidations()},
             {"sequence", trace.sequence}}
            .dump()
     << '\n';
  return os.str();
}

DecodeTrace parse_trace(const std::string& text) {
  DecodeTrace trace;
  std::istringstream in(text);
  std::string line;
  bool have_header = false;
  bool have_summary = false;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const json j = json::parse(line);
      const auto kind = j.at("kind").get<std::string>();
      if (kind == "header") {
        trace.engine = engine_from_string(j.at("engine").get<std::string>());
        trace.groups = j.at("groups").get<int>();
        trace.max_decode_length = j.at("max_decode_length").get<int>();
        trace.prompt_length = j.at("prompt_length").get<int>();
        have_header = true;
      } else if (kind == "stage") {
        if (!have_header) throw std::invalid_argument("stage record before header");
        trace.stages.push_back(record_from_json(j));
      } else if (kind == "summary") {
        trace.sequence = j.at("sequence").get<std::vector<TokenId>>();
        if (j.at("stages").get<int>() != trace.stages_executed() ||
            j.at("committed").get<int>() != trace.tokens_committed()) {
          throw std::invalid_argument("summary does not match stage records");
        }
        have_summary = true;
      } else {
        throw std::invalid_argument("unknown record kind '" + kind + "'");
      }
    } catch (const json::exception& e) {
      throw std::invalid_argument("trace line " + std::to_string(line_no) + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("trace line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_header || !have_summary) throw std::invalid_argument("trace is missing header or summary");
  return trace;
}

void save_trace(const DecodeTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << format_trace(trace);
  if (!out) throw IoError("failed writing " + path.string());
}

DecodeTrace load_trace(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_trace(ss.str());
}

}  // namespace speed
