#include "speed/config.hpp"

#include <sstream>
#include <stdexcept>

namespace speed {

void ShareConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("ShareConfig: " + what); };
  if (n_unique < 1) fail("n_unique must be >= 1");
  if (groups < 1) fail("groups must be >= 1");
  if (d_model < 1 || n_heads < 1 || d_head < 1 || d_ffn < 1) fail("dimensions must be >= 1");
  if (n_heads * d_head != d_model) fail("n_heads * d_head must equal d_model");
  if (vocab_size < 3) fail("vocab_size must hold bos, eos and pad");
  if (max_decode_length < 1) fail("max_decode_length must be >= 1");
  for (TokenId id : {bos_id, eos_id, pad_id}) {
    if (id < 0 || id >= vocab_size) fail("special token ids must lie in [0, vocab_size)");
  }
  if (bos_id == eos_id || bos_id == pad_id || eos_id == pad_id) {
    fail("bos, eos and pad ids must be distinct");
  }
}

bool ShareConfig::same_architecture(const ShareConfig& other) const {
  ShareConfig a = *this;
  a.max_decode_length = other.max_decode_length;
  return a == other;
}

std::string to_string(const ShareConfig& c) {
  std::ostringstream os;
  os << "n_unique=" << c.n_unique << " groups=" << c.groups << " d_model=" << c.d_model
     << " n_heads=" << c.n_heads << " d_head=" << c.d_head << " d_ffn=" << c.d_ffn
     << " vocab=" << c.vocab_size << " max_decode_length=" << c.max_decode_length
     << " bos=" << c.bos_id << " eos=" << c.eos_id << " pad=" << c.pad_id;
  return os.str();
}

}  // namespace speed
