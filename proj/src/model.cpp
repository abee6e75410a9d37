#include "grail/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <random>
#include <stdexcept>
#include <string_view>

#include "grail/util.hpp"

namespace grail {

namespace {

constexpr std::string_view kCheckpointMagic = "GRAILCKP";
constexpr std::uint32_t kCheckpointVersion = 1;

std::size_t block_input_dim(const ModelConfig &c, int block) {
  return static_cast<std::size_t>(block == 0 ? c.embed_dim : c.hidden_dim);
}

struct LayerShape {
  std::string name;
  std::size_t rows;
  std::size_t cols;
  bool is_bias;
};

std::vector<LayerShape> layer_shapes(const ModelConfig &c) {
  const auto V = static_cast<std::size_t>(c.vocab_size);
  const auto d = static_cast<std::size_t>(c.embed_dim);
  const auto h = static_cast<std::size_t>(c.hidden_dim);
  std::vector<LayerShape> shapes;
  shapes.push_back({"embedding", V, d, false});
  for (int b = 0; b < c.num_blocks; ++b) {
    const std::string prefix = "block" + std::to_string(b);
    shapes.push_back({prefix + ".input", h, block_input_dim(c, b), false});
    shapes.push_back({prefix + ".recurrent", h, h, false});
    shapes.push_back({prefix + ".bias", h, 1, true});
  }
  shapes.push_back({"output.weight", V, h, false});
  shapes.push_back({"output.bias", V, 1, true});
  return shapes;
}

void check_tokens(const ModelState &model, std::span<const Token> seq) {
  for (Token t : seq) {
    if (t < 0 || t >= model.config.vocab_size) {
      throw std::invalid_argument("token " + std::to_string(t) + " outside vocabulary [0, " +
                                  std::to_string(model.config.vocab_size) + ")");
    }
  }
}

// Activations of one forward pass over `inputs`; row t of `logprobs`
// predicts the token after inputs[t].
struct Trace {
  std::size_t steps = 0;
  std::vector<std::vector<double>> hidden;  // per block, steps * h
  std::vector<double> logprobs;             // steps * V
};

Trace run_forward(const ModelState &model, std::span<const Token> inputs) {
  const auto &c = model.config;
  const LayerLayout layout{c.num_blocks};
  const auto V = static_cast<std::size_t>(c.vocab_size);
  const auto d = static_cast<std::size_t>(c.embed_dim);
  const auto h = static_cast<std::size_t>(c.hidden_dim);
  const auto T = inputs.size();

  Trace trace;
  trace.steps = T;
  trace.hidden.assign(static_cast<std::size_t>(c.num_blocks), std::vector<double>(T * h, 0.0));
  trace.logprobs.assign(T * V, 0.0);

  const auto &emb = model.layers[LayerLayout::embedding].values;
  std::vector<double> pre(h);
  for (std::size_t t = 0; t < T; ++t) {
    const double *u = &emb[static_cast<std::size_t>(inputs[t]) * d];
    std::size_t in_dim = d;
    for (int b = 0; b < c.num_blocks; ++b) {
      const auto &w_in = model.layers[layout.block_input(b)].values;
      const auto &w_rec = model.layers[layout.block_recurrent(b)].values;
      const auto &bias = model.layers[layout.block_bias(b)].values;
      auto &hid = trace.hidden[static_cast<std::size_t>(b)];
      const double *prev = t > 0 ? &hid[(t - 1) * h] : nullptr;
      for (std::size_t r = 0; r < h; ++r) {
        double acc = bias[r];
        const double *wi = &w_in[r * in_dim];
        for (std::size_t k = 0; k < in_dim; ++k) {
          acc += wi[k] * u[k];
        }
        if (prev != nullptr) {
          const double *wr = &w_rec[r * h];
          for (std::size_t k = 0; k < h; ++k) {
            acc += wr[k] * prev[k];
          }
        }
        pre[r] = acc;
      }
      for (std::size_t r = 0; r < h; ++r) {
        hid[t * h + r] = std::tanh(pre[r]);
      }
      u = &hid[t * h];
      in_dim = h;
    }

    const auto &w_out = model.layers[layout.output_weight()].values;
    const auto &b_out = model.layers[layout.output_bias()].values;
    double *row = &trace.logprobs[t * V];
    double max_logit = -INFINITY;
    for (std::size_t v = 0; v < V; ++v) {
      double acc = b_out[v];
      const double *wo = &w_out[v * h];
      for (std::size_t k = 0; k < h; ++k) {
        acc += wo[k] * u[k];
      }
      row[v] = acc;
      max_logit = std::max(max_logit, acc);
    }
    double sum = 0.0;
    for (std::size_t v = 0; v < V; ++v) {
      sum += std::exp(row[v] - max_logit);
    }
    const double log_norm = max_logit + std::log(sum);
    for (std::size_t v = 0; v < V; ++v) {
      row[v] -= log_norm;
    }
  }
  return trace;
}

// Backpropagation through time given dLoss/dlogits for every row.
GradientVector run_backward(const ModelState &model, std::span<const Token> inputs,
                            const Trace &trace, const std::vector<double> &dlogits) {
  const auto &c = model.config;
  const LayerLayout layout{c.num_blocks};
  const auto V = static_cast<std::size_t>(c.vocab_size);
  const auto d = static_cast<std::size_t>(c.embed_dim);
  const auto h = static_cast<std::size_t>(c.hidden_dim);
  const auto T = trace.steps;
  const auto B = static_cast<std::size_t>(c.num_blocks);

  auto grad = GradientVector::zeros_like(model);

  // dLoss/d(top hidden) per step.
  std::vector<double> d_above(T * h, 0.0);
  {
    const auto &w_out = model.layers[layout.output_weight()].values;
    auto &g_w = grad.layers[layout.output_weight()];
    auto &g_b = grad.layers[layout.output_bias()];
    const auto &top = trace.hidden[B - 1];
    for (std::size_t t = 0; t < T; ++t) {
      const double *dz = &dlogits[t * V];
      const double *ht = &top[t * h];
      double *dh = &d_above[t * h];
      for (std::size_t v = 0; v < V; ++v) {
        if (dz[v] == 0.0) {
          continue;
        }
        g_b[v] += dz[v];
        double *gw = &g_w[v * h];
        const double *wo = &w_out[v * h];
        for (std::size_t k = 0; k < h; ++k) {
          gw[k] += dz[v] * ht[k];
          dh[k] += dz[v] * wo[k];
        }
      }
    }
  }

  const auto &emb = model.layers[LayerLayout::embedding].values;
  std::vector<double> d_rec(h);
  std::vector<double> da(h);
  for (std::size_t bi = B; bi-- > 0;) {
    const int b = static_cast<int>(bi);
    const auto in_dim = block_input_dim(c, b);
    const auto &w_in = model.layers[layout.block_input(b)].values;
    const auto &w_rec = model.layers[layout.block_recurrent(b)].values;
    auto &g_in = grad.layers[layout.block_input(b)];
    auto &g_rec = grad.layers[layout.block_recurrent(b)];
    auto &g_bias = grad.layers[layout.block_bias(b)];
    const auto &hid = trace.hidden[bi];
    std::vector<double> d_below(T * in_dim, 0.0);
    std::fill(d_rec.begin(), d_rec.end(), 0.0);

    for (std::size_t t = T; t-- > 0;) {
      const double *ht = &hid[t * h];
      for (std::size_t r = 0; r < h; ++r) {
        da[r] = (d_above[t * h + r] + d_rec[r]) * (1.0 - ht[r] * ht[r]);
      }
      const double *u = bi == 0 ? &emb[static_cast<std::size_t>(inputs[t]) * d]
                                : &trace.hidden[bi - 1][t * h];
      const double *prev = t > 0 ? &hid[(t - 1) * h] : nullptr;
      std::fill(d_rec.begin(), d_rec.end(), 0.0);
      double *du = &d_below[t * in_dim];
      for (std::size_t r = 0; r < h; ++r) {
        const double a = da[r];
        g_bias[r] += a;
        double *gi = &g_in[r * in_dim];
        const double *wi = &w_in[r * in_dim];
        for (std::size_t k = 0; k < in_dim; ++k) {
          gi[k] += a * u[k];
          du[k] += a * wi[k];
        }
        if (prev != nullptr) {
          double *gr = &g_rec[r * h];
          const double *wr = &w_rec[r * h];
          for (std::size_t k = 0; k < h; ++k) {
            gr[k] += a * prev[k];
            d_rec[k] += a * wr[k];
          }
        }
      }
    }
    d_above = std::move(d_below);
  }

  auto &g_emb = grad.layers[LayerLayout::embedding];
  for (std::size_t t = 0; t < T; ++t) {
    double *ge = &g_emb[static_cast<std::size_t>(inputs[t]) * d];
    for (std::size_t k = 0; k < d; ++k) {
      ge[k] += d_above[t * d + k];
    }
  }
  return grad;
}

// prompt ++ answer minus the final token: the inputs whose rows score the answer.
TokenSeq teacher_inputs(const ModelState &model, PromptAnswer item) {
  if (item.answer.empty()) {
    throw std::invalid_argument("item has an empty answer");
  }
  if (item.prompt.empty()) {
    throw std::invalid_argument("item has an empty prompt");
  }
  const auto total = item.prompt.size() + item.answer.size();
  if (total > static_cast<std::size_t>(model.config.max_seq_len)) {
    throw std::invalid_argument("item length " + std::to_string(total) + " exceeds max_seq_len " +
                                std::to_string(model.config.max_seq_len));
  }
  check_tokens(model, item.prompt);
  check_tokens(model, item.answer);
  TokenSeq inputs(item.prompt.begin(), item.prompt.end());
  inputs.insert(inputs.end(), item.answer.begin(), item.answer.end() - 1);
  return inputs;
}

void put_u32(std::string &out, std::uint32_t v) {
  out.append(reinterpret_cast<const char *>(&v), sizeof(v));
}
void put_u64(std::string &out, std::uint64_t v) {
  out.append(reinterpret_cast<const char *>(&v), sizeof(v));
}
void put_f64(std::string &out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

class Reader {
public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > bytes_.size()) {
      throw std::runtime_error("checkpoint truncated");
    }
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return value;
  }
  std::string get_string(std::size_t n) {
    if (pos_ + n > bytes_.size()) {
      throw std::runtime_error("checkpoint truncated");
    }
    std::string s(bytes_.substr(pos_, n));
    pos_ += n;
    return s;
  }
  std::size_t remaining() const { return bytes_.size() - pos_; }

private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 8) {
    throw std::invalid_argument("vocab_size must be >= 8, got " + std::to_string(vocab_size));
  }
  if (embed_dim < 1 || hidden_dim < 1 || num_blocks < 1) {
    throw std::invalid_argument("embed_dim, hidden_dim and num_blocks must be >= 1");
  }
  if (max_seq_len < 2) {
    throw std::invalid_argument("max_seq_len must be >= 2");
  }
  if (!std::isfinite(init_scale) || init_scale < 0.0) {
    throw std::invalid_argument("init_scale must be finite and non-negative");
  }
}

std::size_t ModelState::num_params() const {
  std::size_t n = 0;
  for (const auto &layer : layers) {
    n += layer.size();
  }
  return n;
}

bool ModelState::same_params(const ModelState &other) const {
  if (layers.size() != other.layers.size()) {
    return false;
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto &a = layers[l].values;
    const auto &b = other.layers[l].values;
    if (a.size() != b.size() ||
        std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) != 0) {
      return false;
    }
  }
  return true;
}

GradientVector GradientVector::zeros_like(const ModelState &model) {
  GradientVector g;
  g.layers.reserve(model.layers.size());
  for (const auto &layer : model.layers) {
    g.layers.emplace_back(layer.size(), 0.0);
  }
  return g;
}

bool GradientVector::congruent(const ModelState &model) const {
  if (layers.size() != model.layers.size()) {
    return false;
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (layers[l].size() != model.layers[l].size()) {
      return false;
    }
  }
  return true;
}

bool GradientVector::all_finite() const {
  for (const auto &layer : layers) {
    for (double v : layer) {
      if (!std::isfinite(v)) {
        return false;
      }
    }
  }
  return true;
}

GradientVector &GradientVector::operator+=(const GradientVector &other) {
  if (other.layers.size() != layers.size()) {
    throw std::invalid_argument("gradient shape mismatch");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (other.layers[l].size() != layers[l].size()) {
      throw std::invalid_argument("gradient shape mismatch");
    }
    for (std::size_t j = 0; j < layers[l].size(); ++j) {
      layers[l][j] += other.layers[l][j];
    }
  }
  return *this;
}

GradientVector &GradientVector::operator*=(double factor) {
  for (auto &layer : layers) {
    for (double &v : layer) {
      v *= factor;
    }
  }
  return *this;
}

ParamMask ParamMask::from_sizes(const std::vector<std::size_t> &sizes) {
  ParamMask m;
  for (auto n : sizes) {
    m.bits_.emplace_back(n, false);
  }
  return m;
}

ParamMask ParamMask::empty_like(const ModelState &model) {
  std::vector<std::size_t> sizes;
  for (const auto &layer : model.layers) {
    sizes.push_back(layer.size());
  }
  return from_sizes(sizes);
}

ParamMask ParamMask::full_like(const ModelState &model) {
  auto m = empty_like(model);
  for (auto &layer : m.bits_) {
    layer.flip();
  }
  return m;
}

std::size_t ParamMask::count(std::size_t layer) const {
  return static_cast<std::size_t>(std::count(bits_[layer].begin(), bits_[layer].end(), true));
}

std::size_t ParamMask::count() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < bits_.size(); ++l) {
    n += count(l);
  }
  return n;
}

std::vector<std::size_t> ParamMask::indices(std::size_t layer) const {
  std::vector<std::size_t> out;
  const auto &bits = bits_[layer];
  for (std::size_t j = 0; j < bits.size(); ++j) {
    if (bits[j]) {
      out.push_back(j);
    }
  }
  return out;
}

bool ParamMask::congruent(const ModelState &model) const {
  if (bits_.size() != model.layers.size()) {
    return false;
  }
  for (std::size_t l = 0; l < bits_.size(); ++l) {
    if (bits_[l].size() != model.layers[l].size()) {
      return false;
    }
  }
  return true;
}

bool ParamMask::same_shape(const ParamMask &other) const {
  if (bits_.size() != other.bits_.size()) {
    return false;
  }
  for (std::size_t l = 0; l < bits_.size(); ++l) {
    if (bits_[l].size() != other.bits_[l].size()) {
      return false;
    }
  }
  return true;
}

ParamMask ParamMask::operator|(const ParamMask &other) const {
  if (!same_shape(other)) {
    throw std::invalid_argument("mask shape mismatch");
  }
  ParamMask out = *this;
  for (std::size_t l = 0; l < bits_.size(); ++l) {
    for (std::size_t j = 0; j < bits_[l].size(); ++j) {
      out.bits_[l][j] = bits_[l][j] || other.bits_[l][j];
    }
  }
  return out;
}

ParamMask ParamMask::operator&(const ParamMask &other) const {
  if (!same_shape(other)) {
    throw std::invalid_argument("mask shape mismatch");
  }
  ParamMask out = *this;
  for (std::size_t l = 0; l < bits_.size(); ++l) {
    for (std::size_t j = 0; j < bits_[l].size(); ++j) {
      out.bits_[l][j] = bits_[l][j] && other.bits_[l][j];
    }
  }
  return out;
}

ModelState init_model(const ModelConfig &config) {
  config.validate();
  ModelState model;
  model.config = config;
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (const auto &shape : layer_shapes(config)) {
    Layer layer{shape.name, shape.rows, shape.cols,
                std::vector<double>(shape.rows * shape.cols, 0.0)};
    if (!shape.is_bias) {
      for (double &v : layer.values) {
        v = config.init_scale * dist(rng);
      }
    }
    model.layers.push_back(std::move(layer));
  }
  return model;
}

std::vector<std::vector<double>> forward_logprobs(const ModelState &model,
                                                  std::span<const Token> seq) {
  if (seq.size() < 2) {
    throw std::invalid_argument("forward_logprobs needs a sequence of length >= 2");
  }
  if (seq.size() > static_cast<std::size_t>(model.config.max_seq_len)) {
    throw std::invalid_argument("sequence length " + std::to_string(seq.size()) +
                                " exceeds max_seq_len " +
                                std::to_string(model.config.max_seq_len));
  }
  check_tokens(model, seq);
  const auto trace = run_forward(model, seq.first(seq.size() - 1));
  const auto V = static_cast<std::size_t>(model.config.vocab_size);
  std::vector<std::vector<double>> rows(trace.steps);
  for (std::size_t t = 0; t < trace.steps; ++t) {
    rows[t].assign(trace.logprobs.begin() + static_cast<std::ptrdiff_t>(t * V),
                   trace.logprobs.begin() + static_cast<std::ptrdiff_t>((t + 1) * V));
  }
  return rows;
}

double item_loss(const ModelState &model, PromptAnswer item) {
  const auto inputs = teacher_inputs(model, item);
  const auto trace = run_forward(model, inputs);
  const auto V = static_cast<std::size_t>(model.config.vocab_size);
  const auto first_row = item.prompt.size() - 1;
  double nll = 0.0;
  for (std::size_t a = 0; a < item.answer.size(); ++a) {
    nll -= trace.logprobs[(first_row + a) * V + static_cast<std::size_t>(item.answer[a])];
  }
  return nll / static_cast<double>(item.answer.size());
}

GradientVector item_grad(const ModelState &model, PromptAnswer item) {
  const auto inputs = teacher_inputs(model, item);
  const auto trace = run_forward(model, inputs);
  const auto V = static_cast<std::size_t>(model.config.vocab_size);
  const auto first_row = item.prompt.size() - 1;
  const double scale = 1.0 / static_cast<double>(item.answer.size());

  std::vector<double> dlogits(trace.steps * V, 0.0);
  double nll = 0.0;
  for (std::size_t a = 0; a < item.answer.size(); ++a) {
    const auto row = first_row + a;
    const auto target = static_cast<std::size_t>(item.answer[a]);
    nll -= trace.logprobs[row * V + target];
    for (std::size_t v = 0; v < V; ++v) {
      dlogits[row * V + v] = scale * std::exp(trace.logprobs[row * V + v]);
    }
    dlogits[row * V + target] -= scale;
  }
  if (!std::isfinite(nll)) {
    throw std::runtime_error("non-finite loss in item_grad");
  }
  return run_backward(model, inputs, trace, dlogits);
}

double item_kl(const ModelState &model, const ModelState &reference, PromptAnswer item) {
  const auto inputs = teacher_inputs(model, item);
  const auto cur = run_forward(model, inputs);
  const auto ref = run_forward(reference, inputs);
  const auto V = static_cast<std::size_t>(model.config.vocab_size);
  const auto first_row = item.prompt.size() - 1;
  double total = 0.0;
  for (std::size_t a = 0; a < item.answer.size(); ++a) {
    const auto row = first_row + a;
    double kl = 0.0;
    for (std::size_t v = 0; v < V; ++v) {
      const double lp = cur.logprobs[row * V + v];
      kl += std::exp(lp) * (lp - ref.logprobs[row * V + v]);
    }
    total += kl;
  }
  return total / static_cast<double>(item.answer.size());
}

GradientVector item_kl_grad(const ModelState &model, const ModelState &reference,
                            PromptAnswer item) {
  if (reference.config.vocab_size != model.config.vocab_size) {
    throw std::invalid_argument("reference model vocabulary differs");
  }
  const auto inputs = teacher_inputs(model, item);
  const auto cur = run_forward(model, inputs);
  const auto ref = run_forward(reference, inputs);
  const auto V = static_cast<std::size_t>(model.config.vocab_size);
  const auto first_row = item.prompt.size() - 1;
  const double scale = 1.0 / static_cast<double>(item.answer.size());

  // d/dz_i sum_v p_v (log p_v - log q_v) = p_i * ((log p_i - log q_i) - KL)
  std::vector<double> dlogits(cur.steps * V, 0.0);
  for (std::size_t a = 0; a < item.answer.size(); ++a) {
    const auto row = first_row + a;
    double kl = 0.0;
    for (std::size_t v = 0; v < V; ++v) {
      const double lp = cur.logprobs[row * V + v];
      kl += std::exp(lp) * (lp - ref.logprobs[row * V + v]);
    }
    for (std::size_t v = 0; v < V; ++v) {
      const double lp = cur.logprobs[row * V + v];
      dlogits[row * V + v] = scale * std::exp(lp) * ((lp - ref.logprobs[row * V + v]) - kl);
    }
  }
  return run_backward(model, inputs, cur, dlogits);
}

void apply_update(ModelState &model, const GradientVector &g, double eta, Direction direction,
                  const ParamMask &frozen) {
  if (!g.congruent(model)) {
    throw std::invalid_argument("gradient shape does not match model");
  }
  if (!frozen.congruent(model)) {
    throw std::invalid_argument("mask shape does not match model");
  }
  const double step = direction == Direction::ascent ? eta : -eta;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto &values = model.layers[l].values;
    const auto &grad = g.layers[l];
    for (std::size_t j = 0; j < values.size(); ++j) {
      if (!frozen.test(l, j)) {
        values[j] += step * grad[j];
      }
    }
  }
  ++model.step_count;
}

TokenSeq greedy_decode(const ModelState &model, std::span<const Token> prompt, int n) {
  if (n <= 0) {
    throw std::invalid_argument("greedy_decode needs n >= 1");
  }
  if (prompt.empty()) {
    throw std::invalid_argument("greedy_decode needs a non-empty prompt");
  }
  if (prompt.size() + static_cast<std::size_t>(n) >
      static_cast<std::size_t>(model.config.max_seq_len)) {
    throw std::invalid_argument("prompt length + n exceeds max_seq_len");
  }
  check_tokens(model, prompt);
  const auto V = static_cast<std::size_t>(model.config.vocab_size);
  TokenSeq seq(prompt.begin(), prompt.end());
  TokenSeq out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const auto trace = run_forward(model, seq);
    const double *row = &trace.logprobs[(trace.steps - 1) * V];
    std::size_t best = 0;
    for (std::size_t v = 1; v < V; ++v) {
      if (row[v] > row[best]) {
        best = v;
      }
    }
    out.push_back(static_cast<Token>(best));
    seq.push_back(static_cast<Token>(best));
  }
  return out;
}

std::string serialize_checkpoint(const ModelState &model) {
  std::string out(kCheckpointMagic);
  put_u32(out, kCheckpointVersion);
  const auto &c = model.config;
  for (int v : {c.vocab_size, c.embed_dim, c.num_blocks, c.hidden_dim, c.max_seq_len}) {
    put_u32(out, static_cast<std::uint32_t>(v));
  }
  put_f64(out, c.init_scale);
  put_u64(out, c.seed);
  put_u64(out, static_cast<std::uint64_t>(model.step_count));
  put_u32(out, static_cast<std::uint32_t>(model.layers.size()));
  for (const auto &layer : model.layers) {
    put_u32(out, static_cast<std::uint32_t>(layer.name.size()));
    out += layer.name;
    put_u64(out, layer.rows);
    put_u64(out, layer.cols);
    for (double v : layer.values) {
      put_f64(out, v);
    }
  }
  put_u64(out, fnv1a(out));
  return out;
}

ModelState deserialize_checkpoint(const std::string &bytes) {
  Reader in(bytes);
  if (in.remaining() < kCheckpointMagic.size() + sizeof(std::uint64_t) ||
      in.get_string(kCheckpointMagic.size()) != kCheckpointMagic) {
    throw std::runtime_error("not a checkpoint file (bad magic)");
  }
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw std::runtime_error("checkpoint format version " + std::to_string(version) +
                             " unsupported (expected " + std::to_string(kCheckpointVersion) +
                             ")");
  }
  const std::string_view body(bytes.data(), bytes.size() - sizeof(std::uint64_t));
  std::uint64_t stored_hash = 0;
  std::memcpy(&stored_hash, bytes.data() + body.size(), sizeof(stored_hash));
  if (fnv1a(body) != stored_hash) {
    throw std::runtime_error("checkpoint checksum mismatch (corrupted or truncated)");
  }

  ModelState model;
  auto &c = model.config;
  c.vocab_size = static_cast<int>(in.get<std::uint32_t>());
  c.embed_dim = static_cast<int>(in.get<std::uint32_t>());
  c.num_blocks = static_cast<int>(in.get<std::uint32_t>());
  c.hidden_dim = static_cast<int>(in.get<std::uint32_t>());
  c.max_seq_len = static_cast<int>(in.get<std::uint32_t>());
  c.init_scale = std::bit_cast<double>(in.get<std::uint64_t>());
  c.seed = in.get<std::uint64_t>();
  c.validate();
  model.step_count = static_cast<std::int64_t>(in.get<std::uint64_t>());

  const auto expected = layer_shapes(c);
  const auto num_layers = in.get<std::uint32_t>();
  if (num_layers != expected.size()) {
    throw std::runtime_error("checkpoint declares " + std::to_string(num_layers) +
                             " layers, config implies " + std::to_string(expected.size()));
  }
  for (const auto &shape : expected) {
    const auto name_len = in.get<std::uint32_t>();
    Layer layer;
    layer.name = in.get_string(name_len);
    layer.rows = in.get<std::uint64_t>();
    layer.cols = in.get<std::uint64_t>();
    if (layer.name != shape.name || layer.rows != shape.rows || layer.cols != shape.cols) {
      throw std::runtime_error("checkpoint layer '" + layer.name + "' (" +
                               std::to_string(layer.rows) + "x" + std::to_string(layer.cols) +
                               ") does not match config-implied '" + shape.name + "' (" +
                               std::to_string(shape.rows) + "x" + std::to_string(shape.cols) +
                               ")");
    }
    if (layer.rows * layer.cols * sizeof(double) > in.remaining()) {
      throw std::runtime_error("checkpoint truncated");
    }
    layer.values.resize(layer.rows * layer.cols);
    for (double &v : layer.values) {
      v = std::bit_cast<double>(in.get<std::uint64_t>());
    }
    model.layers.push_back(std::move(layer));
  }
  if (in.remaining() != sizeof(std::uint64_t)) {
    throw std::runtime_error("checkpoint has trailing bytes");
  }
  return model;
}

void save_checkpoint(const ModelState &model, const std::filesystem::path &path) {
  write_file(path, serialize_checkpoint(model));
}

ModelState load_checkpoint(const std::filesystem::path &path) {
  return deserialize_checkpoint(read_file(path));
}

std::uint64_t fingerprint(const ModelState &model) {
  return fnv1a(serialize_checkpoint(model));
}

}  // namespace grail
