#pragma once

#include "speed/config.hpp"
#include "speed/kv_cache.hpp"
#include "speed/tensor.hpp"

#include <optional>
#include <vector>

namespace speed {

struct GroupOutput {
  Vectorf hidden;  // activation entering the next group
  Vectorf logits;  // exit logits through the shared classifier
};

/// Per-group exit logits of one pipeline stage. Slots of invalid stages are
/// empty rather than zero-filled.
struct GroupExitLogits {
  std::vector<std::optional<Vectorf>> exits;

  int size() const { return static_cast<int>(exits.size()); }
};

/// Anything that can advance one token through one decoder layer group.
/// Implementations must be pure apart from the K/V writes they make for the
/// virtual layers of `group` at `position`.
class DecoderModel {
 public:
  virtual ~DecoderModel() = default;

  virtual const ShareConfig& config() const = 0;

  /// Activation entering group 0 for `token` at sequence position `position`.
  virtual Vectorf embed(TokenId token, int position) const = 0;

  /// Runs the virtual layers of `group` for the token at `position`.
  /// Requires every position < `position` to be cached at those layers.
  virtual GroupOutput forward_group(const Vectorf& hidden, int group, int position,
                                    KvCache& cache) const = 0;

  KvCache make_cache() const {
    const auto& c = config();
    return KvCache(c.total_layers(), c.n_heads, c.d_head);
  }
};

/// argmax with ties broken toward the lowest token id.
template <typename Derived>
TokenId classify(const Eigen::MatrixBase<Derived>& logits) {
  if (logits.size() == 0) throw ShapeError("classify: empty logits");
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < logits.size(); ++i) {
    if (logits(i) > logits(best)) best = i;
  }
  return static_cast<TokenId>(best);
}

}  // namespace speed
