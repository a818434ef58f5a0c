#include "bgpo/mdlm.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "bgpo/kernels.hpp"

namespace bgpo {

// ---------------------------------------------------------------------------
// Vocabulary

const Vocabulary& Vocabulary::standard() {
  static const Vocabulary vocab("_?=>0123456789+-*()abcdefghCPN,.", 1, 0);
  return vocab;
}

Vocabulary::Vocabulary(std::string symbols, TokenId mask_id, TokenId pad_id)
    : symbols_(std::move(symbols)), mask_id_(mask_id), pad_id_(pad_id) {
  if (mask_id_ == pad_id_) throw std::invalid_argument("mask and pad ids must differ");
  if (mask_id_ >= symbols_.size() || pad_id_ >= symbols_.size()) {
    throw std::invalid_argument("mask/pad id outside the vocabulary");
  }
}

TokenId Vocabulary::id(char symbol) const {
  const auto pos = symbols_.find(symbol);
  if (pos == std::string::npos) {
    throw std::invalid_argument(std::string("symbol not in vocabulary: '") + symbol + "'");
  }
  return static_cast<TokenId>(pos);
}

char Vocabulary::symbol(TokenId id) const { return symbols_.at(id); }

std::vector<TokenId> Vocabulary::encode(std::string_view text) const {
  std::vector<TokenId> out;
  out.reserve(text.size());
  for (char c : text) out.push_back(id(c));
  return out;
}

std::string Vocabulary::decode(std::span<const TokenId> ids) const {
  std::string out;
  out.reserve(ids.size());
  for (TokenId t : ids) out.push_back(symbol(t));
  return out;
}

// ---------------------------------------------------------------------------
// Forward masking

std::vector<std::size_t> MaskedView::masked_positions() const {
  std::vector<std::size_t> out;
  out.reserve(k);
  for (std::size_t i = 0; i < mask_flags.size(); ++i) {
    if (mask_flags[i] != 0) out.push_back(i);
  }
  return out;
}

MaskedView forward_mask(const TokenSeq& response, double t, Rng& rng, TokenId mask_id) {
  if (!(t > 0.0 && t <= 1.0)) {
    throw std::invalid_argument("masking time t must lie in (0, 1], got " + std::to_string(t));
  }
  MaskedView v;
  v.t = t;
  v.tokens = response.ids;
  v.mask_flags.assign(response.size(), 0);
  for (std::size_t i = 0; i < response.size(); ++i) {
    if (rng.uniform() < t) {
      v.tokens[i] = mask_id;
      v.mask_flags[i] = 1;
      ++v.k;
    }
  }
  return v;
}

// ---------------------------------------------------------------------------
// Model

namespace {

// Parameter array indices, in the order make_layout() adds them.
constexpr std::size_t kTokEmb = 0;
constexpr std::size_t kPosEmb = 1;
constexpr std::size_t kPerBlock = 10;
enum BlockField : std::size_t { kNorm1, kWq, kWk, kWv, kWo, kNorm2, kW1, kB1, kW2, kB2 };

std::size_t block_param(std::size_t block, BlockField f) { return 2 + block * kPerBlock + f; }
std::size_t final_param(const ModelConfig& c, std::size_t k) {
  return 2 + c.depth * kPerBlock + k;
}

double round_to_float(double x) { return static_cast<double>(static_cast<float>(x)); }

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 2 || embed_dim == 0 || depth == 0 || ffn_dim == 0 || context_length == 0) {
    throw std::invalid_argument("model dimensions must be positive (vocab >= 2)");
  }
  if (!(output_init_std >= 0.0)) throw std::invalid_argument("output_init_std must be >= 0");
}

ParamStore MaskPredictor::make_layout(const ModelConfig& c) {
  c.validate();
  const std::size_t d = c.embed_dim;
  ParamStore p;
  p.add("tok_emb", c.vocab_size, d);
  p.add("pos_emb", c.context_length, d);
  for (std::size_t b = 0; b < c.depth; ++b) {
    const std::string pre = "blk" + std::to_string(b) + ".";
    p.add(pre + "norm1", 1, d);
    p.add(pre + "wq", d, d);
    p.add(pre + "wk", d, d);
    p.add(pre + "wv", d, d);
    p.add(pre + "wo", d, d);
    p.add(pre + "norm2", 1, d);
    p.add(pre + "w1", d, c.ffn_dim);
    p.add(pre + "b1", 1, c.ffn_dim);
    p.add(pre + "w2", c.ffn_dim, d);
    p.add(pre + "b2", 1, d);
  }
  p.add("norm_f", 1, d);
  p.add("w_out", d, c.vocab_size);
  p.add("b_out", 1, c.vocab_size);
  return p;
}

MaskPredictor::MaskPredictor(const ModelConfig& config, std::uint64_t seed)
    : config_(config), params_(make_layout(config)) {
  Rng rng(seed);
  auto fill_normal = [&](std::size_t idx, double stddev) {
    for (double& x : params_.values(idx)) x = round_to_float(stddev * rng.normal());
  };
  auto fill_const = [&](std::size_t idx, double v) {
    for (double& x : params_.values(idx)) x = v;
  };
  const double d = static_cast<double>(config.embed_dim);
  const double h = static_cast<double>(config.ffn_dim);
  fill_normal(kTokEmb, 1.0);
  fill_normal(kPosEmb, 1.0);
  for (std::size_t b = 0; b < config.depth; ++b) {
    fill_const(block_param(b, kNorm1), 1.0);
    for (BlockField f : {kWq, kWk, kWv, kWo}) fill_normal(block_param(b, f), 1.0 / std::sqrt(d));
    fill_const(block_param(b, kNorm2), 1.0);
    fill_normal(block_param(b, kW1), 1.0 / std::sqrt(d));
    fill_normal(block_param(b, kW2), 1.0 / std::sqrt(h));
  }
  fill_const(final_param(config, 0), 1.0);
  fill_normal(final_param(config, 1), config.output_init_std);
}

MaskPredictor::MaskPredictor(const ModelConfig& config, ParamStore params)
    : config_(config), params_(std::move(params)) {
  if (!params_.same_layout(make_layout(config))) {
    throw std::invalid_argument("parameter layout does not match the model configuration");
  }
}

MaskPredictor MaskPredictor::uniform(const ModelConfig& config, std::uint64_t seed) {
  MaskPredictor m(config, seed);
  for (double& x : m.params_.values(final_param(config, 1))) x = 0.0;
  for (double& x : m.params_.values(final_param(config, 2))) x = 0.0;
  return m;
}

namespace {

struct View {
  std::size_t rows;
  std::size_t cols;
  const double* data;
};

Matrix zeros(std::size_t rows, std::size_t cols) {
  return Matrix{rows, cols, std::vector<double>(rows * cols, 0.0)};
}

// Plain evaluation. Each op performs exactly the arithmetic of the matching
// graph op in diffcore, so both paths produce identical bits.
struct PlainBackend {
  const ParamStore& params;

  View param(std::size_t i) const {
    const auto& a = params.array(i);
    return {a.rows, a.cols, params.values(i).data()};
  }

  Matrix gather(View table, std::span<const std::uint32_t> ids) const {
    Matrix y = zeros(ids.size(), table.cols);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      std::copy_n(table.data + ids[i] * table.cols, table.cols, y.data.data() + i * table.cols);
    }
    return y;
  }

  Matrix select(const Matrix& x, std::span<const std::size_t> rows) const {
    Matrix y = zeros(rows.size(), x.cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::copy_n(x.data.data() + rows[i] * x.cols, x.cols, y.data.data() + i * x.cols);
    }
    return y;
  }

  Matrix add(const Matrix& a, const Matrix& b) const {
    Matrix y = zeros(a.rows, a.cols);
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] = a.data[i] + b.data[i];
    return y;
  }

  Matrix add_row(const Matrix& a, View r) const {
    Matrix y = zeros(a.rows, a.cols);
    for (std::size_t i = 0; i < a.rows; ++i) {
      for (std::size_t j = 0; j < a.cols; ++j) {
        y.data[i * a.cols + j] = a.data[i * a.cols + j] + r.data[j];
      }
    }
    return y;
  }

  Matrix relu(const Matrix& a) const {
    Matrix y = zeros(a.rows, a.cols);
    for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] = a.data[i] > 0.0 ? a.data[i] : 0.0;
    return y;
  }

  Matrix matmul(const Matrix& a, View b) const {
    Matrix y = zeros(a.rows, b.cols);
    kernels::matmul(a.data.data(), b.data, y.data.data(), a.rows, a.cols, b.cols);
    return y;
  }

  Matrix rms_norm(const Matrix& x, View gain) const {
    Matrix y = zeros(x.rows, x.cols);
    std::vector<double> inv(x.rows);
    kernels::rms_norm_forward(x.data.data(), gain.data, y.data.data(), inv.data(), x.rows, x.cols);
    return y;
  }

  Matrix attention(const Matrix& q, const Matrix& k, const Matrix& v) const {
    Matrix y = zeros(q.rows, q.cols);
    std::vector<double> probs(q.rows * q.rows);
    kernels::attention_forward(q.data.data(), k.data.data(), v.data.data(), y.data.data(),
                               probs.data(), q.rows, q.cols);
    return y;
  }

  Matrix log_softmax(const Matrix& x) const {
    Matrix y = zeros(x.rows, x.cols);
    kernels::log_softmax_rows(x.data.data(), y.data.data(), x.rows, x.cols);
    return y;
  }
};

struct GraphBackend {
  std::span<const Var> leaves;

  Var param(std::size_t i) const { return leaves[i]; }
  Var gather(Var table, std::span<const std::uint32_t> ids) const {
    return gather_rows(table, ids);
  }
  Var select(Var x, std::span<const std::size_t> rows) const { return select_rows(x, rows); }
  Var add(Var a, Var b) const { return a + b; }
  Var add_row(Var a, Var r) const { return bgpo::add_row(a, r); }
  Var relu(Var a) const { return bgpo::relu(a); }
  Var matmul(Var a, Var b) const { return bgpo::matmul(a, b); }
  Var rms_norm(Var x, Var g) const { return bgpo::rms_norm(x, g); }
  Var attention(Var q, Var k, Var v) const { return bgpo::attention(q, k, v); }
  Var log_softmax(Var x) const { return bgpo::log_softmax(x); }
};

template <class Backend>
auto forward(const Backend& be, const ModelConfig& c, std::span<const TokenId> tokens,
             std::span<const std::size_t> out_rows) {
  std::vector<std::uint32_t> pos(tokens.size());
  std::iota(pos.begin(), pos.end(), 0U);
  auto x = be.add(be.gather(be.param(kTokEmb), tokens), be.gather(be.param(kPosEmb), pos));
  for (std::size_t b = 0; b < c.depth; ++b) {
    auto h = be.rms_norm(x, be.param(block_param(b, kNorm1)));
    auto q = be.matmul(h, be.param(block_param(b, kWq)));
    auto k = be.matmul(h, be.param(block_param(b, kWk)));
    auto v = be.matmul(h, be.param(block_param(b, kWv)));
    x = be.add(x, be.matmul(be.attention(q, k, v), be.param(block_param(b, kWo))));
    h = be.rms_norm(x, be.param(block_param(b, kNorm2)));
    auto f = be.relu(be.add_row(be.matmul(h, be.param(block_param(b, kW1))),
                                be.param(block_param(b, kB1))));
    x = be.add(x, be.add_row(be.matmul(f, be.param(block_param(b, kW2))),
                             be.param(block_param(b, kB2))));
  }
  auto h = be.rms_norm(be.select(x, out_rows), be.param(final_param(c, 0)));
  return be.log_softmax(
      be.add_row(be.matmul(h, be.param(final_param(c, 1))), be.param(final_param(c, 2))));
}

std::vector<TokenId> join(const ModelConfig& c, std::span<const TokenId> prompt,
                          std::span<const TokenId> response) {
  if (prompt.size() + response.size() > c.context_length) {
    throw std::invalid_argument("sequence of length " +
                                std::to_string(prompt.size() + response.size()) +
                                " exceeds context length " + std::to_string(c.context_length));
  }
  std::vector<TokenId> seq(prompt.begin(), prompt.end());
  seq.insert(seq.end(), response.begin(), response.end());
  for (TokenId t : seq) {
    if (t >= c.vocab_size) throw std::invalid_argument("token id outside the vocabulary");
  }
  return seq;
}

std::vector<std::size_t> shifted(std::span<const std::size_t> positions, std::size_t offset,
                                 std::size_t response_size) {
  std::vector<std::size_t> out(positions.size());
  for (std::size_t i = 0; i < positions.size(); ++i) {
    if (positions[i] >= response_size) throw std::invalid_argument("position outside response");
    out[i] = positions[i] + offset;
  }
  return out;
}

std::vector<std::size_t> all_positions(std::size_t n) {
  std::vector<std::size_t> out(n);
  std::iota(out.begin(), out.end(), std::size_t{0});
  return out;
}

}  // namespace

Matrix token_logprobs(const MaskPredictor& model, std::span<const TokenId> prompt,
                      std::span<const TokenId> response, std::span<const std::size_t> positions) {
  const auto seq = join(model.config(), prompt, response);
  const auto rows = shifted(positions, prompt.size(), response.size());
  return forward(PlainBackend{model.params()}, model.config(), seq, rows);
}

Var token_logprobs(const MaskPredictor& model, std::span<const Var> leaves,
                   std::span<const TokenId> prompt, std::span<const TokenId> response,
                   std::span<const std::size_t> positions) {
  if (leaves.size() != model.params().num_arrays()) {
    throw GraphError("leaves do not match the model's parameter arrays");
  }
  const auto seq = join(model.config(), prompt, response);
  const auto rows = shifted(positions, prompt.size(), response.size());
  return forward(GraphBackend{leaves}, model.config(), seq, rows);
}

Matrix token_logprobs(const MaskPredictor& model, const TokenSeq& prompt, const MaskedView& view) {
  return token_logprobs(model, prompt.ids, view.tokens, all_positions(view.tokens.size()));
}

Var token_logprobs(const MaskPredictor& model, std::span<const Var> leaves,
                   const TokenSeq& prompt, const MaskedView& view) {
  return token_logprobs(model, leaves, prompt.ids, view.tokens,
                        all_positions(view.tokens.size()));
}

// ---------------------------------------------------------------------------
// Block-wise sampler

void DecodeConfig::validate() const {
  if (response_length == 0 || block_size == 0 || steps_per_block == 0) {
    throw std::invalid_argument("decode lengths and steps must be >= 1");
  }
  if (response_length % block_size != 0) {
    throw std::invalid_argument("block_size must divide response_length");
  }
  if (block_size % steps_per_block != 0) {
    throw std::invalid_argument("steps_per_block must divide block_size");
  }
  if (!(temperature >= 0.0)) throw std::invalid_argument("temperature must be >= 0");
}

TokenSeq sample_response(const MaskPredictor& model, const TokenSeq& prompt,
                         const DecodeConfig& cfg, Rng& rng, DecodeTrace* trace) {
  cfg.validate();
  const TokenId mask = Vocabulary::standard().mask_id();
  const std::size_t vocab = model.config().vocab_size;
  std::vector<TokenId> response(cfg.response_length, mask);
  const std::size_t per_step = cfg.tokens_per_step();
  if (trace != nullptr) *trace = DecodeTrace{};

  std::vector<double> probs(vocab);
  std::vector<double> weights(vocab);
  for (std::size_t start = 0; start < cfg.response_length; start += cfg.block_size) {
    for (std::size_t step = 0; step < cfg.steps_per_block; ++step) {
      std::vector<std::size_t> masked;
      for (std::size_t i = start; i < start + cfg.block_size; ++i) {
        if (response[i] == mask) masked.push_back(i);
      }
      const Matrix logp = token_logprobs(model, prompt.ids, response, masked);

      std::vector<TokenId> choice(masked.size());
      std::vector<double> confidence(masked.size());
      for (std::size_t r = 0; r < masked.size(); ++r) {
        auto lp = logp.row(r);
        // The mask token is never a valid output.
        double total = 0.0;
        for (std::size_t v = 0; v < vocab; ++v) {
          probs[v] = v == mask ? 0.0 : std::exp(lp[v]);
          total += probs[v];
        }
        for (double& p : probs) p /= total;

        std::size_t tok = 0;
        if (cfg.temperature == 0.0) {
          tok = static_cast<std::size_t>(std::max_element(probs.begin(), probs.end()) -
                                         probs.begin());
        } else {
          double mx = -INFINITY;
          for (std::size_t v = 0; v < vocab; ++v) {
            if (v != mask) mx = std::max(mx, lp[v]);
          }
          for (std::size_t v = 0; v < vocab; ++v) {
            weights[v] = v == mask ? 0.0 : std::exp((lp[v] - mx) / cfg.temperature);
          }
          tok = rng.categorical(weights);
        }
        choice[r] = static_cast<TokenId>(tok);
        switch (cfg.confidence) {
          case Confidence::sampled_prob:
            confidence[r] = probs[tok];
            break;
          case Confidence::max_prob:
            confidence[r] = *std::max_element(probs.begin(), probs.end());
            break;
          case Confidence::neg_entropy: {
            double s = 0.0;
            for (double p : probs) {
              if (p > 0.0) s += p * std::log(p);
            }
            confidence[r] = s;
            break;
          }
        }
      }

      std::vector<std::size_t> order(masked.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return confidence[a] > confidence[b]; });
      std::vector<std::size_t> committed;
      for (std::size_t n = 0; n < per_step && n < order.size(); ++n) {
        response[masked[order[n]]] = choice[order[n]];
        committed.push_back(masked[order[n]]);
      }
      if (trace != nullptr) {
        ++trace->passes;
        trace->committed.push_back(std::move(committed));
      }
    }
  }
  return TokenSeq{std::move(response), SeqRole::response};
}

}  // namespace bgpo
