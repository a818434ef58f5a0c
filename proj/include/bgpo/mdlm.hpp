#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bgpo/diffcore.hpp"
#include "bgpo/rng.hpp"

namespace bgpo {

using TokenId = std::uint32_t;

/// Symbol table shared by every task. One printable character per token.
class Vocabulary {
 public:
  /// The standard 32-symbol table: pad, mask, separators, digits, operators,
  /// letters and task markers.
  static const Vocabulary& standard();

  Vocabulary(std::string symbols, TokenId mask_id, TokenId pad_id);

  std::size_t size() const { return symbols_.size(); }
  TokenId mask_id() const { return mask_id_; }
  TokenId pad_id() const { return pad_id_; }

  /// Throws std::invalid_argument for characters outside the table.
  TokenId id(char symbol) const;
  char symbol(TokenId id) const;
  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;

 private:
  std::string symbols_;
  TokenId mask_id_;
  TokenId pad_id_;
};

enum class SeqRole { prompt, response };

struct TokenSeq {
  std::vector<TokenId> ids;
  SeqRole role = SeqRole::response;

  std::size_t size() const { return ids.size(); }
};

/// A response after the forward masking process at time t.
struct MaskedView {
  double t = 1.0;
  std::vector<TokenId> tokens;
  std::vector<std::uint8_t> mask_flags;
  std::size_t k = 0;

  /// Response positions whose flag is set, ascending.
  std::vector<std::size_t> masked_positions() const;
};

/// Masks each response token independently with probability t.
/// Throws std::invalid_argument unless 0 < t <= 1.
MaskedView forward_mask(const TokenSeq& response, double t, Rng& rng, TokenId mask_id);

struct ModelConfig {
  std::size_t vocab_size = 32;
  std::size_t embed_dim = 32;
  std::size_t depth = 2;
  std::size_t ffn_dim = 64;
  std::size_t context_length = 64;
  /// Std of the output projection at init; small keeps the initial policy
  /// close to uniform.
  double output_init_std = 0.02;

  void validate() const;
};

/// Bidirectional transformer mask predictor p(y^i | y_t, x). Parameters live
/// in a ParamStore so that the current and the frozen old policy are two
/// values of the same type.
class MaskPredictor {
 public:
  /// Random init from `seed`. Initial values are float-representable.
  MaskPredictor(const ModelConfig& config, std::uint64_t seed);
  /// Uses an existing parameter set; throws if its layout does not match.
  MaskPredictor(const ModelConfig& config, ParamStore params);

  /// Output layer zeroed: every position predicts the uniform distribution.
  static MaskPredictor uniform(const ModelConfig& config, std::uint64_t seed = 0);

  const ModelConfig& config() const { return config_; }
  const ParamStore& params() const { return params_; }
  ParamStore& params() { return params_; }

  static ParamStore make_layout(const ModelConfig& config);

 private:
  ModelConfig config_;
  ParamStore params_;
};

/// Row-major matrix of plain numbers.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  std::span<const double> row(std::size_t i) const {
    return std::span<const double>(data).subspan(i * cols, cols);
  }
};

/// Log-probability vectors at the given response positions, computed
/// without building a graph. `response` may contain mask tokens.
Matrix token_logprobs(const MaskPredictor& model, std::span<const TokenId> prompt,
                      std::span<const TokenId> response, std::span<const std::size_t> positions);

/// Same computation inside `arena`, with `leaves` obtained from binding the
/// model's parameters to it. Values agree bitwise with the plain overload.
Var token_logprobs(const MaskPredictor& model, std::span<const Var> leaves,
                   std::span<const TokenId> prompt, std::span<const TokenId> response,
                   std::span<const std::size_t> positions);

/// Every response position of a masked view.
Matrix token_logprobs(const MaskPredictor& model, const TokenSeq& prompt, const MaskedView& view);
Var token_logprobs(const MaskPredictor& model, std::span<const Var> leaves,
                   const TokenSeq& prompt, const MaskedView& view);

enum class Confidence {
  sampled_prob,  // probability of the token just sampled
  max_prob,      // probability of the most likely token
  neg_entropy,   // negative entropy of the position's distribution
};

struct DecodeConfig {
  std::size_t response_length = 16;
  std::size_t block_size = 8;
  std::size_t steps_per_block = 8;
  /// 0 means greedy argmax.
  double temperature = 1.0;
  Confidence confidence = Confidence::sampled_prob;

  /// Throws std::invalid_argument on divisibility violations.
  void validate() const;
  std::size_t tokens_per_step() const { return block_size / steps_per_block; }
  std::size_t total_passes() const { return response_length / block_size * steps_per_block; }
};

struct DecodeTrace {
  std::size_t passes = 0;
  /// Positions committed at each pass, in commit order.
  std::vector<std::vector<std::size_t>> committed;
};

/// Block-wise iterative unmasking: blocks left to right, and within a block
/// each pass commits the tokens_per_step() most confident masked positions.
TokenSeq sample_response(const MaskPredictor& model, const TokenSeq& prompt,
                         const DecodeConfig& cfg, Rng& rng, DecodeTrace* trace = nullptr);

}  // namespace bgpo
