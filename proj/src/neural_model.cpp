#include "speed/neural_model.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace speed {

namespace {

Tensor2Df as_heads(const Vectorf& v, int n_heads, int d_head) {
  return Eigen::Map<const Tensor2Df>(v.data(), n_heads, d_head);
}

void check_shape(const Tensor2Df& t, int rows, int cols, const std::string& name) {
  if (t.rows() != rows || t.cols() != cols) {
    throw ShapeError("NeuralModel: " + name + " is " + detail::shape_string(t.rows(), t.cols()) +
                     ", expected " + detail::shape_string(rows, cols));
  }
}

void check_length(const Vectorf& v, int n, const std::string& name) {
  if (v.size() != n) {
    throw ShapeError("NeuralModel: " + name + " has length " + std::to_string(v.size()) +
                     ", expected " + std::to_string(n));
  }
}

}  // namespace

NeuralModel::NeuralModel(ShareConfig config, std::vector<DecoderLayerWeights> layers,
                         Tensor2Df embedding, Vectorf final_gain, Vectorf final_bias)
    : config_(std::move(config)),
      layers_(std::move(layers)),
      embedding_(std::move(embedding)),
      final_gain_(std::move(final_gain)),
      final_bias_(std::move(final_bias)) {
  config_.validate();
  const int d = config_.d_model;
  if (static_cast<int>(layers_.size()) != config_.n_unique) {
    throw ShapeError("NeuralModel: expected " + std::to_string(config_.n_unique) +
                     " unique layers, got " + std::to_string(layers_.size()));
  }
  check_shape(embedding_, config_.vocab_size, d, "embedding");
  check_length(final_gain_, d, "final gain");
  check_length(final_bias_, d, "final bias");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& w = layers_[i];
    const std::string p = "layer " + std::to_string(i) + " ";
    check_shape(w.wq, d, d, p + "wq");
    check_shape(w.wk, d, d, p + "wk");
    check_shape(w.wv, d, d, p + "wv");
    check_shape(w.wo, d, d, p + "wo");
    check_shape(w.ffn_in, d, config_.d_ffn, p + "ffn_in");
    check_shape(w.ffn_out, config_.d_ffn, d, p + "ffn_out");
    check_length(w.ln1_gain, d, p + "ln1 gain");
    check_length(w.ln1_bias, d, p + "ln1 bias");
    check_length(w.ln2_gain, d, p + "ln2 gain");
    check_length(w.ln2_bias, d, p + "ln2 bias");
  }
}

int unique_layer_index(const ShareConfig& config, int virtual_layer) {
  if (virtual_layer < 0 || virtual_layer >= config.total_layers()) {
    throw std::out_of_range("virtual layer " + std::to_string(virtual_layer) +
                            " outside [0, " + std::to_string(config.total_layers()) + ")");
  }
  return virtual_layer % config.n_unique;
}

const DecoderLayerWeights& NeuralModel::virtual_layer_weights(int virtual_layer) const {
  return layers_[static_cast<std::size_t>(unique_layer_index(config_, virtual_layer))];
}

Vectorf position_encoding(int position, int d_model) {
  Vectorf out(d_model);
  for (int i = 0; i < d_model; ++i) {
    const double rate = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / d_model);
    const double angle = position * rate;
    out(i) = static_cast<float>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
  }
  return out;
}

Vectorf NeuralModel::embed(TokenId token, int position) const {
  if (token < 0 || token >= config_.vocab_size) {
    throw std::out_of_range("NeuralModel::embed: token " + std::to_string(token) +
                            " outside vocabulary");
  }
  if (position < 0) throw std::out_of_range("NeuralModel::embed: negative position");
  Vectorf h = embedding_.row(token).transpose();
  h += position_encoding(position, config_.d_model);
  return h;
}

Vectorf NeuralModel::forward_layer(const Vectorf& hidden, int virtual_layer, int position,
                                   KvCache& cache) const {
  const auto& w = virtual_layer_weights(virtual_layer);
  const int n_heads = config_.n_heads;
  const int d_head = config_.d_head;

  const Vectorf x = layer_norm(hidden, w.ln1_gain, w.ln1_bias, kLayerNormEps);
  const Vectorf q = row_times(x, w.wq);
  cache.write(virtual_layer, position, as_heads(row_times(x, w.wk), n_heads, d_head),
              as_heads(row_times(x, w.wv), n_heads, d_head));
  const auto context = cache.read_range(virtual_layer, position);

  const float scale = 1.0f / std::sqrt(static_cast<float>(d_head));
  Vectorf attended = Vectorf::Zero(config_.d_model);
  Vectorf scores(static_cast<Eigen::Index>(context.size()));
  for (int h = 0; h < n_heads; ++h) {
    const auto q_h = q.segment(h * d_head, d_head);
    for (std::size_t p = 0; p < context.size(); ++p) {
      scores(static_cast<Eigen::Index>(p)) =
          dot(q_h, context[p]->key.row(h).transpose()) * scale;
    }
    const Vectorf probs = softmax(scores);
    for (std::size_t p = 0; p < context.size(); ++p) {
      const float weight = probs(static_cast<Eigen::Index>(p));
      for (int j = 0; j < d_head; ++j) {
        attended(h * d_head + j) += weight * context[p]->value(h, j);
      }
    }
  }

  Vectorf out = hidden + row_times(attended, w.wo);
  const Vectorf y = layer_norm(out, w.ln2_gain, w.ln2_bias, kLayerNormEps);
  out += row_times(gelu(row_times(y, w.ffn_in)), w.ffn_out);
  return out;
}

Vectorf NeuralModel::exit_logits(const Vectorf& hidden) const {
  const Vectorf normed = layer_norm(hidden, final_gain_, final_bias_, kLayerNormEps);
  Vectorf logits(config_.vocab_size);
  for (int t = 0; t < config_.vocab_size; ++t) {
    logits(t) = dot(embedding_.row(t).transpose(), normed);
  }
  return logits;
}

GroupOutput NeuralModel::forward_group(const Vectorf& hidden, int group, int position,
                                       KvCache& cache) const {
  if (group < 0 || group >= config_.groups) {
    throw std::out_of_range("NeuralModel::forward_group: group " + std::to_string(group));
  }
  check_length(hidden, config_.d_model, "hidden state");
  if (cache.num_layers() != config_.total_layers()) {
    throw std::invalid_argument("NeuralModel::forward_group: cache has " +
                                std::to_string(cache.num_layers()) + " layers");
  }
  GroupOutput out{hidden, {}};
  const int first = group * config_.n_unique;
  for (int l = first; l < first + config_.n_unique; ++l) {
    out.hidden = forward_layer(out.hidden, l, position, cache);
  }
  out.logits = exit_logits(out.hidden);
  return out;
}

std::vector<double> linear_weights(int groups) {
  if (groups < 1) throw std::invalid_argument("linear_weights: groups must be >= 1");
  const double total = 0.5 * groups * (groups + 1);
  std::vector<double> w(static_cast<std::size_t>(groups));
  for (int i = 1; i <= groups; ++i) w[static_cast<std::size_t>(i - 1)] = i / total;
  return w;
}

double weighted_loss(std::span<const double> per_group_losses, std::span<const double> weights) {
  if (per_group_losses.size() != weights.size()) {
    throw std::invalid_argument("weighted_loss: " + std::to_string(per_group_losses.size()) +
                                " losses against " + std::to_string(weights.size()) + " weights");
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    if (weights[i] < 0.0) throw std::invalid_argument("weighted_loss: negative weight");
    acc += weights[i] * per_group_losses[i];
  }
  return acc;
}

std::uint64_t SplitMix64::next() {
  std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

float SplitMix64::uniform(float scale) {
  const auto bits = static_cast<std::uint32_t>(next() >> 40);  // 24 bits
  const float unit = static_cast<float>(bits) * (1.0f / 16777216.0f);
  return (2.0f * unit - 1.0f) * scale;
}

std::uint64_t tensor_seed(std::uint64_t model_seed, std::size_t index) {
  SplitMix64 mix(model_seed ^ (0xA0761D6478BD642Full * (index + 1)));
  return mix.next();
}

namespace {

Tensor2Df random_matrix(std::uint64_t seed, int rows, int cols, float scale) {
  SplitMix64 rng(seed);
  Tensor2Df t(rows, cols);
  for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = rng.uniform(scale);
  return t;
}

}  // namespace

NeuralModel generate_model(std::uint64_t seed, const ShareConfig& config) {
  config.validate();
  const int d = config.d_model;
  const float scale = 1.0f / std::sqrt(static_cast<float>(d));
  // Tensor order matches the manifest written by save_model().
  std::size_t index = 0;
  auto next_seed = [&] { return tensor_seed(seed, index++); };

  Tensor2Df embedding = random_matrix(next_seed(), config.vocab_size, d, scale);
  next_seed();
  next_seed();
  Vectorf final_gain = Vectorf::Ones(d);
  Vectorf final_bias = Vectorf::Zero(d);

  std::vector<DecoderLayerWeights> layers(static_cast<std::size_t>(config.n_unique));
  for (auto& w : layers) {
    w.wq = random_matrix(next_seed(), d, d, scale);
    w.wk = random_matrix(next_seed(), d, d, scale);
    w.wv = random_matrix(next_seed(), d, d, scale);
    w.wo = random_matrix(next_seed(), d, d, scale);
    w.ffn_in = random_matrix(next_seed(), d, config.d_ffn, scale);
    w.ffn_out = random_matrix(next_seed(), config.d_ffn, d, scale);
    for (int k = 0; k < 4; ++k) next_seed();
    w.ln1_gain = Vectorf::Ones(d);
    w.ln1_bias = Vectorf::Zero(d);
    w.ln2_gain = Vectorf::Ones(d);
    w.ln2_bias = Vectorf::Zero(d);
  }
  return NeuralModel(config, std::move(layers), std::move(embedding), std::move(final_gain),
                     std::move(final_bias));
}

}  // namespace speed
