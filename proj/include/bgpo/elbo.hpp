#pragma once

#include <vector>

#include "bgpo/mdlm.hpp"

namespace bgpo {

/// How timestamps t are drawn for the Monte-Carlo ELBO.
struct TimeSampling {
  /// t ~ Uniform(epsilon, 1].
  double epsilon = 1e-3;
  /// One draw per equal-width stratum of (epsilon, 1], in stratum order.
  bool stratified = false;
};

std::vector<double> draw_times(std::size_t n_t, const TimeSampling& ts, Rng& rng);

struct McSample {
  double t = 1.0;
  MaskedView view;
  Var ell_cur;
  double ell_old = 0.0;
  double d = 0.0;
};

struct McBatch {
  std::vector<McSample> samples;
  std::size_t n_t() const { return samples.size(); }
};

/// (1/t) * sum of log p(y^i | y_t, x) over the masked positions; 0 if none.
double per_step_loss(const MaskPredictor& model, const TokenSeq& x, const TokenSeq& y,
                     const MaskedView& view);
/// Graph version; the result lives in the arena of `leaves`. For an empty
/// mask pattern the result is a constant 0.
Var per_step_loss(const MaskPredictor& model, std::span<const Var> leaves, const TokenSeq& x,
                  const TokenSeq& y, const MaskedView& view);

/// Draws n_t (t, view) pairs. ell_cur is left unset; ell_old and d are 0.
McBatch draw_batch(const TokenSeq& y, std::size_t n_t, const TimeSampling& ts, Rng& rng);

/// Fills ell_old for every sample (no graph).
void eval_old(McBatch& batch, const MaskPredictor& old_model, const TokenSeq& x, const TokenSeq& y);

/// Plain Monte-Carlo estimate of the ELBO. The drawn batch is written to
/// `out` when given, with ell_old holding each sample's loss.
double mc_elbo(const MaskPredictor& model, const TokenSeq& x, const TokenSeq& y, std::size_t n_t,
               const TimeSampling& ts, Rng& rng, McBatch* out = nullptr);
/// Graph version; each sample's ell_cur is set in `out` when given.
Var mc_elbo(const MaskPredictor& model, std::span<const Var> leaves, const TokenSeq& x,
            const TokenSeq& y, std::size_t n_t, const TimeSampling& ts, Rng& rng,
            McBatch* out = nullptr);

/// (k-1)! (n-k)! / n!, the integral of t^(k-1) (1-t)^(n-k) over [0, 1].
double elbo_weight(std::size_t k, std::size_t n);
/// Same integrand averaged over t ~ Uniform(epsilon, 1]: the weight under
/// the timestamp law that draw_times actually uses.
double elbo_weight(std::size_t k, std::size_t n, double epsilon);

inline constexpr std::size_t kExactElboMaxLen = 12;

/// Closed form of the ELBO by enumerating all 2^n - 1 nonempty mask patterns.
/// With epsilon > 0, the expectation of mc_elbo when t ~ Uniform(epsilon, 1].
double exact_elbo(const MaskPredictor& model, const TokenSeq& x, const TokenSeq& y,
                  double epsilon = 0.0);

}  // namespace bgpo
