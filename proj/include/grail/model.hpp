#pragma once

// Tiny autoregressive token model: embedding -> stacked recurrent tanh
// blocks -> output projection. Every named tensor is one localization unit.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace grail {

using Token = int;
using TokenSeq = std::vector<Token>;

struct ModelConfig {
  int vocab_size = 64;
  int embed_dim = 16;
  int num_blocks = 2;
  int hidden_dim = 16;
  int max_seq_len = 16;
  double init_scale = 0.1;
  std::uint64_t seed = 1;

  // Throws std::invalid_argument on a malformed config.
  void validate() const;
  bool operator==(const ModelConfig &) const = default;
};

struct Layer {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 1;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
};

struct ModelState {
  ModelConfig config;
  std::vector<Layer> layers;
  std::int64_t step_count = 0;

  std::size_t num_params() const;
  bool same_params(const ModelState &other) const;
};

// Fixed layer ordering shared by every routine that walks ModelState.
struct LayerLayout {
  int num_blocks;

  static constexpr std::size_t embedding = 0;
  std::size_t block_input(int b) const { return 1 + 3 * static_cast<std::size_t>(b); }
  std::size_t block_recurrent(int b) const { return 2 + 3 * static_cast<std::size_t>(b); }
  std::size_t block_bias(int b) const { return 3 + 3 * static_cast<std::size_t>(b); }
  std::size_t output_weight() const { return 1 + 3 * static_cast<std::size_t>(num_blocks); }
  std::size_t output_bias() const { return 2 + 3 * static_cast<std::size_t>(num_blocks); }
  std::size_t count() const { return 3 + 3 * static_cast<std::size_t>(num_blocks); }
};

struct GradientVector {
  std::vector<std::vector<double>> layers;

  static GradientVector zeros_like(const ModelState &model);
  bool congruent(const ModelState &model) const;
  bool all_finite() const;
  GradientVector &operator+=(const GradientVector &other);
  GradientVector &operator*=(double factor);
};

// Per-layer bitsets over parameters; true = frozen.
class ParamMask {
public:
  ParamMask() = default;
  static ParamMask empty_like(const ModelState &model);
  static ParamMask full_like(const ModelState &model);
  static ParamMask from_sizes(const std::vector<std::size_t> &sizes);

  std::size_t num_layers() const { return bits_.size(); }
  std::size_t layer_size(std::size_t layer) const { return bits_[layer].size(); }
  bool test(std::size_t layer, std::size_t index) const { return bits_[layer][index]; }
  void set(std::size_t layer, std::size_t index, bool value = true) {
    bits_[layer][index] = value;
  }
  std::size_t count(std::size_t layer) const;
  std::size_t count() const;
  std::vector<std::size_t> indices(std::size_t layer) const;
  bool congruent(const ModelState &model) const;
  bool same_shape(const ParamMask &other) const;

  ParamMask operator|(const ParamMask &other) const;
  ParamMask operator&(const ParamMask &other) const;
  bool operator==(const ParamMask &) const = default;

private:
  std::vector<std::vector<bool>> bits_;
};

enum class Direction { ascent, descent };

// A (prompt, answer) pair is all the model layer needs from a corpus item.
struct PromptAnswer {
  std::span<const Token> prompt;
  std::span<const Token> answer;
};

ModelState init_model(const ModelConfig &config);

// Row t is the log-distribution over the vocabulary for token t+1.
std::vector<std::vector<double>> forward_logprobs(const ModelState &model,
                                                  std::span<const Token> seq);

// Mean negative log-likelihood over answer positions only.
double item_loss(const ModelState &model, PromptAnswer item);

GradientVector item_grad(const ModelState &model, PromptAnswer item);

// Mean over answer positions of KL(current || reference) and its gradient
// with respect to the current model.
double item_kl(const ModelState &model, const ModelState &reference, PromptAnswer item);
GradientVector item_kl_grad(const ModelState &model, const ModelState &reference,
                            PromptAnswer item);

// theta += eta * g (ascent) or theta -= eta * g (descent) where not frozen.
void apply_update(ModelState &model, const GradientVector &g, double eta, Direction direction,
                  const ParamMask &frozen);

TokenSeq greedy_decode(const ModelState &model, std::span<const Token> prompt, int n);

// Binary checkpoint, see README for the layout.
void save_checkpoint(const ModelState &model, const std::filesystem::path &path);
ModelState load_checkpoint(const std::filesystem::path &path);
std::string serialize_checkpoint(const ModelState &model);
ModelState deserialize_checkpoint(const std::string &bytes);

// FNV-1a over the serialized checkpoint.
std::uint64_t fingerprint(const ModelState &model);

}  // namespace grail
