#pragma once

#include "speed/tensor.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace speed {

/// Raised when a write or read would break contiguity, i.e. when the decoder
/// touched a (layer, position) slot out of order.
class CacheError : public std::logic_error {
 public:
  CacheError(const std::string& what, int layer, int position);

  int layer() const { return layer_; }
  int position() const { return position_; }

 private:
  int layer_;
  int position_;
};

struct KvEntry {
  Tensor2Df key;    // n_heads x d_head
  Tensor2Df value;  // n_heads x d_head

  bool operator==(const KvEntry& other) const;
};

/// Post-projection keys and values per virtual layer. Each layer holds the
/// contiguous positions [0, size(layer)), and a position only reaches layer
/// l + 1 after layer l. Rollback truncates every layer to a common length.
class KvCache {
 public:
  KvCache(int num_layers, int n_heads, int d_head);

  int num_layers() const { return static_cast<int>(layers_.size()); }
  int n_heads() const { return n_heads_; }
  int d_head() const { return d_head_; }

  /// Number of cached positions at `layer`.
  int size(int layer) const;

  /// Highest position known to be non-speculative, -1 if none.
  int committed_frontier(int layer) const;

  /// Appends position `position`; it must equal size(layer).
  void write(int layer, int position, Tensor2Df key, Tensor2Df value);

  /// Entries 0..upto_position in order. upto_position == -1 gives an empty list.
  std::vector<const KvEntry*> read_range(int layer, int upto_position) const;

  const KvEntry& at(int layer, int position) const;

  /// Drops every entry at position >= `position` on every layer. Idempotent.
  void invalidate_from(int position);

  /// Records that positions <= `position` will never be rolled back.
  void mark_committed(int position);

  /// Throws CacheError if depth monotonicity is broken.
  void audit() const;

  /// One line per layer: "layer <l>: <first>..<last>" or "layer <l>: empty".
  std::string dump() const;

  bool operator==(const KvCache& other) const;

 private:
  void check_layer(int layer, int position) const;

  int n_heads_;
  int d_head_;
  std::vector<std::vector<KvEntry>> layers_;
  std::vector<int> frontier_;
};

}  // namespace speed
