#pragma once

// Decode traces as JSON lines:
//
//   {"kind":"header","engine":"speed","groups":3,"max_decode_length":8,"prompt_length":0}
//   {"kind":"stage","stage":0,"iteration_indices":[0,-1,-1],"tokens":[7,-1,-1],
//    "previous_tokens":[-1,-1],"last_invalid":0,"committed":null,"flips":[],
//    "invalidated_tokens":0,"invalidated_token_stages":0}
//   ...
//   {"kind":"summary","stages":7,"committed":3,"invalidations":1,"sequence":[5,6,2]}
//
// Each flip is {"depth":d,"iteration":i,"old":a,"new":b}. Keys are written in
// sorted order so identical traces serialise to identical bytes.

#include "speed/decode.hpp"

#include <filesystem>
#include <string>

namespace speed {

std::string format_trace(const DecodeTrace& trace);
DecodeTrace parse_trace(const std::string& text);

void save_trace(const DecodeTrace& trace, const std::filesystem::path& path);
DecodeTrace load_trace(const std::filesystem::path& path);

}  // namespace speed
