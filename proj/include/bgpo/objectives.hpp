#pragma once

#include <functional>
#include <string_view>
#include <vector>

#include "bgpo/elbo.hpp"

namespace bgpo {

/// (r - mean) / std with the population std; all zeros when std < 1e-8.
/// Throws std::invalid_argument for fewer than two rewards.
std::vector<double> group_advantages(std::span<const double> rewards);

struct RolloutGroup {
  TokenSeq prompt;
  std::vector<TokenSeq> responses;
  std::vector<double> rewards;
  std::vector<double> advantages;

  std::size_t size() const { return responses.size(); }
};

enum class Branch { taylor, jensen };

struct ObjectiveTerm {
  Var g;
  Branch branch = Branch::taylor;
  double d = 0.0;
  std::size_t j = 0;
};

// Plain evaluations of the surrogate objectives for given d_j values.
double ratio_value(double advantage, std::span<const double> d);
double boundary_term_value(double advantage, double d, std::size_t n_t);
double lower_bound_value(double advantage, std::span<const double> d);

/// exp(mean_j d_j) * A over one graph holding every sample. Each sample
/// needs ell_cur set and ell_old filled.
Var ratio_objective(const McBatch& batch, double advantage);

/// g_j = (1 + d_j) A / n_t when A >= 0, e^{d_j} A / n_t otherwise.
ObjectiveTerm boundary_term(Var ell_cur, double ell_old, double advantage, std::size_t n_t,
                            std::size_t j);
std::vector<ObjectiveTerm> boundary_terms(const McBatch& batch, double advantage);

/// Receives each loss term L_ij = -g_j / G right after it is built. The sink
/// may backpropagate and release before the next term is constructed.
using TermSink = std::function<void(std::size_t i, const ObjectiveTerm& term, Var loss)>;

/// Streams the G * n_t BGPO loss terms of a group. `batches[i]` holds the
/// views of response i with ell_old filled; ell_cur is overwritten.
void bgpo_loss_terms(const MaskPredictor& model, std::span<const Var> leaves,
                     const RolloutGroup& group, std::span<McBatch> batches, const TermSink& sink);

/// Prompt with each token replaced by the mask with probability p.
TokenSeq mask_prompt(const TokenSeq& x, double p, Rng& rng);

/// Single forward pass with the response fully masked and the prompt masked
/// with probability `prompt_mask_prob`; sum of the true-token log-probs.
double single_pass_logprob(const MaskPredictor& model, const TokenSeq& x, const TokenSeq& y,
                           double prompt_mask_prob, Rng& rng);
/// Same, evaluated on an already masked prompt.
double single_pass_logprob(const MaskPredictor& model, const TokenSeq& masked_x,
                           const TokenSeq& y);
Var single_pass_logprob(const MaskPredictor& model, std::span<const Var> leaves,
                        const TokenSeq& masked_x, const TokenSeq& y);

enum class Algorithm { bgpo, vrpo_ol, diffu_grpo };

std::string_view to_string(Algorithm a);
/// Accepts "bgpo", "vrpo_ol" / "vrpo-ol", "diffu_grpo" / "diffu-grpo".
Algorithm parse_algorithm(std::string_view name);

struct ObjectiveConfig {
  Algorithm algorithm = Algorithm::bgpo;
  /// ELBO samples per response; for diffu_grpo, the number of averaged
  /// single-pass draws.
  std::size_t n_t = 4;
  TimeSampling time;
  double prompt_mask_prob = 0.15;
  /// PPO clip range for diffu_grpo; 0 disables clipping.
  double clip = 0.0;

  void validate() const;
};

struct ResponseOutcome {
  /// Sum of the loss terms (weight already applied).
  double loss = 0.0;
  /// Unweighted surrogate: R_lb for bgpo, R for vrpo_ol, the averaged
  /// ratio objective for diffu_grpo.
  double objective = 0.0;
  std::size_t peak_live = 0;
  /// Index of the first non-finite term, or -1.
  long bad_term = -1;
};

/// Adds the gradient of -weight * objective(response) to `grads`. All
/// randomness comes from `seed`, so bgpo and vrpo_ol with equal seeds see
/// identical masked views. Responses with A = 0 contribute nothing and are
/// skipped.
ResponseOutcome response_gradient(const ObjectiveConfig& cfg, const MaskPredictor& cur,
                                  const MaskPredictor& old, const TokenSeq& x, const TokenSeq& y,
                                  double advantage, double weight, std::uint64_t seed,
                                  std::span<double> grads);

}  // namespace bgpo
