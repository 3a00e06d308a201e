#pragma once

#include "speed/decoder_model.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace speed {

struct DecoderLayerWeights {
  Tensor2Df wq, wk, wv, wo;  // d_model x d_model
  Tensor2Df ffn_in;          // d_model x d_ffn
  Tensor2Df ffn_out;         // d_ffn x d_model
  Vectorf ln1_gain, ln1_bias;
  Vectorf ln2_gain, ln2_bias;
};

/// Decoder-only toy transformer with CYCLE parameter sharing: virtual layer l
/// runs unique layer l mod n_unique. Pre-norm residual blocks; the final layer
/// norm and the tied classifier (embedding transpose) are applied at every
/// group exit.
class NeuralModel final : public DecoderModel {
 public:
  static constexpr float kLayerNormEps = 1e-5f;

  NeuralModel(ShareConfig config, std::vector<DecoderLayerWeights> layers, Tensor2Df embedding,
              Vectorf final_gain, Vectorf final_bias);

  const ShareConfig& config() const override { return config_; }
  Vectorf embed(TokenId token, int position) const override;
  GroupOutput forward_group(const Vectorf& hidden, int group, int position,
                            KvCache& cache) const override;

  /// Unique weights used by virtual layer `virtual_layer`.
  const DecoderLayerWeights& virtual_layer_weights(int virtual_layer) const;

  /// One pre-norm block at `virtual_layer`; writes that layer's K/V at `position`.
  Vectorf forward_layer(const Vectorf& hidden, int virtual_layer, int position,
                        KvCache& cache) const;

  /// Tied classifier over the final layer norm.
  Vectorf exit_logits(const Vectorf& hidden) const;

  const std::vector<DecoderLayerWeights>& layers() const { return layers_; }
  const Tensor2Df& embedding() const { return embedding_; }
  const Vectorf& final_gain() const { return final_gain_; }
  const Vectorf& final_bias() const { return final_bias_; }

 private:
  ShareConfig config_;
  std::vector<DecoderLayerWeights> layers_;
  Tensor2Df embedding_;  // vocab_size x d_model
  Vectorf final_gain_, final_bias_;
};

/// Sinusoidal position signal added to token embeddings.
Vectorf position_encoding(int position, int d_model);

/// Unique layer index for a virtual layer under CYCLE sharing.
int unique_layer_index(const ShareConfig& config, int virtual_layer);

/// w_i = i / sum_{j=1..G} j for i = 1..G.
std::vector<double> linear_weights(int groups);

/// L_w = sum_i w_i L_i.
double weighted_loss(std::span<const double> per_group_losses, std::span<const double> weights);

/// Deterministic 64-bit stream used for weight initialisation; independent of
/// the standard library's distribution implementations.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}
  std::uint64_t next();
  /// Uniform in [-scale, scale) built from the top 24 bits.
  float uniform(float scale);

 private:
  std::uint64_t state_;
};

/// Seed for the `index`-th tensor of a model generated from `model_seed`.
std::uint64_t tensor_seed(std::uint64_t model_seed, std::size_t index);

/// Random model: matrices uniform in +-1/sqrt(d_model), norms at identity.
NeuralModel generate_model(std::uint64_t seed, const ShareConfig& config);

}  // namespace speed
