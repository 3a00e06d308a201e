#include "speed/kv_cache.hpp"

#include <algorithm>
#include <sstream>

namespace speed {

namespace {

std::string where(int layer, int position) {
  return " (layer " + std::to_string(layer) + ", position " + std::to_string(position) + ")";
}

}  // namespace

CacheError::CacheError(const std::string& what, int layer, int position)
    : std::logic_error(what + where(layer, position)), layer_(layer), position_(position) {}

bool KvEntry::operator==(const KvEntry& other) const {
  // Bitwise comparison of the float payload; NaNs never occur in valid caches.
  return key.rows() == other.key.rows() && key.cols() == other.key.cols() &&
         value.rows() == other.value.rows() && value.cols() == other.value.cols() &&
         std::equal(key.data(), key.data() + key.size(), other.key.data()) &&
         std::equal(value.data(), value.data() + value.size(), other.value.data());
}

KvCache::KvCache(int num_layers, int n_heads, int d_head)
    : n_heads_(n_heads), d_head_(d_head) {
  if (num_layers < 1 || n_heads < 1 || d_head < 1) {
    throw std::invalid_argument("KvCache: layers, heads and head size must be >= 1");
  }
  layers_.resize(static_cast<std::size_t>(num_layers));
  frontier_.assign(static_cast<std::size_t>(num_layers), -1);
}

void KvCache::check_layer(int layer, int position) const {
  if (layer < 0 || layer >= num_layers()) throw CacheError("KvCache: no such layer", layer, position);
}

int KvCache::size(int layer) const {
  check_layer(layer, 0);
  return static_cast<int>(layers_[static_cast<std::size_t>(layer)].size());
}

int KvCache::committed_frontier(int layer) const {
  check_layer(layer, 0);
  return frontier_[static_cast<std::size_t>(layer)];
}

void KvCache::write(int layer, int position, Tensor2Df key, Tensor2Df value) {
  check_layer(layer, position);
  auto& slots = layers_[static_cast<std::size_t>(layer)];
  if (position != static_cast<int>(slots.size())) {
    throw CacheError("KvCache::write: non-contiguous write, layer holds " +
                         std::to_string(slots.size()) + " positions",
                     layer, position);
  }
  if (layer > 0 && position >= size(layer - 1)) {
    throw CacheError("KvCache::write: position not yet cached at the layer below", layer, position);
  }
  auto shape_ok = [&](const Tensor2Df& t) { return t.rows() == n_heads_ && t.cols() == d_head_; };
  if (!shape_ok(key) || !shape_ok(value)) {
    throw CacheError("KvCache::write: expected " + detail::shape_string(n_heads_, d_head_) +
                         " key/value",
                     layer, position);
  }
  slots.push_back(KvEntry{std::move(key), std::move(value)});
#ifndef NDEBUG
  audit();
#endif
}

std::vector<const KvEntry*> KvCache::read_range(int layer, int upto_position) const {
  check_layer(layer, upto_position);
  const auto& slots = layers_[static_cast<std::size_t>(layer)];
  if (upto_position >= static_cast<int>(slots.size())) {
    throw CacheError("KvCache::read_range: position missing", layer,
                     static_cast<int>(slots.size()));
  }
  std::vector<const KvEntry*> out;
  if (upto_position < 0) return out;
  out.reserve(static_cast<std::size_t>(upto_position) + 1);
  for (int p = 0; p <= upto_position; ++p) out.push_back(&slots[static_cast<std::size_t>(p)]);
  return out;
}

const KvEntry& KvCache::at(int layer, int position) const {
  check_layer(layer, position);
  const auto& slots = layers_[static_cast<std::size_t>(layer)];
  if (position < 0 || position >= static_cast<int>(slots.size())) {
    throw CacheError("KvCache::at: position missing", layer, position);
  }
  return slots[static_cast<std::size_t>(position)];
}

void KvCache::invalidate_from(int position) {
  const auto keep = static_cast<std::size_t>(std::max(position, 0));
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (layers_[l].size() > keep) layers_[l].resize(keep);
    frontier_[l] = std::min(frontier_[l], static_cast<int>(keep) - 1);
  }
#ifndef NDEBUG
  audit();
#endif
}

void KvCache::mark_committed(int position) {
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (position >= static_cast<int>(layers_[l].size())) {
      throw CacheError("KvCache::mark_committed: position not cached", static_cast<int>(l),
                       position);
    }
    frontier_[l] = std::max(frontier_[l], position);
  }
}

void KvCache::audit() const {
  for (std::size_t l = 1; l < layers_.size(); ++l) {
    if (layers_[l].size() > layers_[l - 1].size()) {
      throw CacheError("KvCache::audit: deeper layer holds more positions than the layer below",
                       static_cast<int>(l), static_cast<int>(layers_[l].size()) - 1);
    }
  }
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    if (frontier_[l] >= static_cast<int>(layers_[l].size())) {
      throw CacheError("KvCache::audit: committed frontier beyond cached range",
                       static_cast<int>(l), frontier_[l]);
    }
  }
}

std::string KvCache::dump() const {
  std::ostringstream os;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    os << "layer " << l << ": ";
    if (layers_[l].empty()) {
      os << "empty";
    } else {
      os << 0 << ".." << layers_[l].size() - 1;
    }
    os << '\n';
  }
  return os.str();
}

bool KvCache::operator==(const KvCache& other) const {
  return n_heads_ == other.n_heads_ && d_head_ == other.d_head_ && layers_ == other.layers_;
}

}  // namespace speed
