#include "bgpo/elbo.hpp"

#include <cmath>
#include <stdexcept>

namespace bgpo {

namespace {

void check_view(const TokenSeq& y, const MaskedView& view) {
  if (view.tokens.size() != y.size() || view.mask_flags.size() != y.size()) {
    throw std::invalid_argument("masked view length " + std::to_string(view.tokens.size()) +
                                " does not match response length " + std::to_string(y.size()));
  }
  if (!(view.t > 0.0)) throw std::invalid_argument("per-step loss needs t > 0");
}

std::vector<std::size_t> true_tokens(const TokenSeq& y, std::span<const std::size_t> positions) {
  std::vector<std::size_t> out(positions.size());
  for (std::size_t i = 0; i < positions.size(); ++i) out[i] = y.ids[positions[i]];
  return out;
}

}  // namespace

std::vector<double> draw_times(std::size_t n_t, const TimeSampling& ts, Rng& rng) {
  if (n_t == 0) throw std::invalid_argument("n_t must be >= 1");
  if (!(ts.epsilon >= 0.0 && ts.epsilon < 1.0)) {
    throw std::invalid_argument("t epsilon must lie in [0, 1)");
  }
  std::vector<double> t(n_t);
  const double width = 1.0 - ts.epsilon;
  for (std::size_t j = 0; j < n_t; ++j) {
    // 1 - u with u in [0, 1) lands in (0, 1], so t never equals epsilon.
    const double u = 1.0 - rng.uniform();
    if (ts.stratified) {
      t[j] = ts.epsilon + width * (static_cast<double>(j) + u) / static_cast<double>(n_t);
    } else {
      t[j] = ts.epsilon + width * u;
    }
  }
  return t;
}

double per_step_loss(const MaskPredictor& model, const TokenSeq& x, const TokenSeq& y,
                     const MaskedView& view) {
  check_view(y, view);
  const auto pos = view.masked_positions();
  if (pos.empty()) return 0.0;
  const Matrix lp = token_logprobs(model, x.ids, view.tokens, pos);
  double s = 0.0;
  for (std::size_t i = 0; i < pos.size(); ++i) s += lp.row(i)[y.ids[pos[i]]];
  return s / view.t;
}

Var per_step_loss(const MaskPredictor& model, std::span<const Var> leaves, const TokenSeq& x,
                  const TokenSeq& y, const MaskedView& view) {
  check_view(y, view);
  if (leaves.empty()) throw GraphError("per_step_loss needs bound parameter leaves");
  const auto pos = view.masked_positions();
  if (pos.empty()) return leaves.front().arena->constant(0.0);
  const Var lp = token_logprobs(model, leaves, x.ids, view.tokens, pos);
  std::vector<std::size_t> rows(pos.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = i;
  return sum(pick(lp, rows, true_tokens(y, pos))) / view.t;
}

McBatch draw_batch(const TokenSeq& y, std::size_t n_t, const TimeSampling& ts, Rng& rng) {
  const auto times = draw_times(n_t, ts, rng);
  const TokenId mask = Vocabulary::standard().mask_id();
  McBatch b;
  b.samples.resize(n_t);
  for (std::size_t j = 0; j < n_t; ++j) {
    b.samples[j].t = times[j];
    b.samples[j].view = forward_mask(y, times[j], rng, mask);
  }
  return b;
}

void eval_old(McBatch& batch, const MaskPredictor& old_model, const TokenSeq& x,
              const TokenSeq& y) {
  for (auto& s : batch.samples) s.ell_old = per_step_loss(old_model, x, y, s.view);
}

double mc_elbo(const MaskPredictor& model, const TokenSeq& x, const TokenSeq& y, std::size_t n_t,
               const TimeSampling& ts, Rng& rng, McBatch* out) {
  McBatch b = draw_batch(y, n_t, ts, rng);
  eval_old(b, model, x, y);
  double s = 0.0;
  for (const auto& smp : b.samples) s += smp.ell_old;
  if (out != nullptr) *out = std::move(b);
  return s / static_cast<double>(n_t);
}

Var mc_elbo(const MaskPredictor& model, std::span<const Var> leaves, const TokenSeq& x,
            const TokenSeq& y, std::size_t n_t, const TimeSampling& ts, Rng& rng, McBatch* out) {
  McBatch b = draw_batch(y, n_t, ts, rng);
  std::vector<Var> terms(n_t);
  for (std::size_t j = 0; j < n_t; ++j) {
    terms[j] = per_step_loss(model, leaves, x, y, b.samples[j].view);
    b.samples[j].ell_cur = terms[j];
  }
  Var result = mean(terms);
  if (out != nullptr) *out = std::move(b);
  return result;
}

double elbo_weight(std::size_t k, std::size_t n) {
  if (k == 0 || k > n) throw std::invalid_argument("elbo_weight needs 1 <= k <= n");
  // (k-1)!(n-k)!/n! = 1 / (k * C(n, k)).
  double binom = 1.0;
  for (std::size_t i = 1; i <= k; ++i) {
    binom = binom * static_cast<double>(n - k + i) / static_cast<double>(i);
  }
  return 1.0 / (static_cast<double>(k) * binom);
}

double elbo_weight(std::size_t k, std::size_t n, double epsilon) {
  const double full = elbo_weight(k, n);
  if (epsilon == 0.0) return full;
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::invalid_argument("epsilon must lie in [0, 1)");
  // Integral over [0, epsilon], from the binomial expansion of (1-t)^(n-k).
  // Every term is O(epsilon^k), so the alternating sum loses nothing.
  double head = 0.0;
  double c = 1.0;
  for (std::size_t i = 0; i <= n - k; ++i) {
    const double term = c * std::pow(epsilon, static_cast<double>(k + i)) / static_cast<double>(k + i);
    head += i % 2 == 0 ? term : -term;
    c = c * static_cast<double>(n - k - i) / static_cast<double>(i + 1);
  }
  return (full - head) / (1.0 - epsilon);
}

double exact_elbo(const MaskPredictor& model, const TokenSeq& x, const TokenSeq& y,
                  double epsilon) {
  const std::size_t n = y.size();
  if (n == 0) return 0.0;
  if (n > kExactElboMaxLen) {
    throw std::invalid_argument("exact_elbo enumerates 2^n patterns; n = " + std::to_string(n) +
                                " exceeds " + std::to_string(kExactElboMaxLen));
  }
  const TokenId mask = Vocabulary::standard().mask_id();
  double total = 0.0;
  for (std::uint32_t m = 1; m < (1U << n); ++m) {
    std::vector<TokenId> tokens = y.ids;
    std::vector<std::size_t> pos;
    for (std::size_t i = 0; i < n; ++i) {
      if ((m >> i) & 1U) {
        tokens[i] = mask;
        pos.push_back(i);
      }
    }
    const Matrix lp = token_logprobs(model, x.ids, tokens, pos);
    double s = 0.0;
    for (std::size_t i = 0; i < pos.size(); ++i) s += lp.row(i)[y.ids[pos[i]]];
    total += elbo_weight(pos.size(), n, epsilon) * s;
  }
  return total;
}

}  // namespace bgpo
