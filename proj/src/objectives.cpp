#include "bgpo/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace bgpo {

std::vector<double> group_advantages(std::span<const double> rewards) {
  const std::size_t g = rewards.size();
  if (g < 2) throw std::invalid_argument("group advantages need at least two rewards");
  double mean = 0.0;
  for (double r : rewards) mean += r;
  mean /= static_cast<double>(g);
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / static_cast<double>(g));
  std::vector<double> a(g, 0.0);
  if (sd < 1e-8) return a;
  for (std::size_t i = 0; i < g; ++i) a[i] = (rewards[i] - mean) / sd;
  return a;
}

double ratio_value(double advantage, std::span<const double> d) {
  if (d.empty()) throw std::invalid_argument("ratio needs at least one sample");
  double s = 0.0;
  for (double x : d) s += x;
  return std::exp(s / static_cast<double>(d.size())) * advantage;
}

double boundary_term_value(double advantage, double d, std::size_t n_t) {
  const double scale = advantage / static_cast<double>(n_t);
  return advantage >= 0.0 ? (1.0 + d) * scale : std::exp(d) * scale;
}

double lower_bound_value(double advantage, std::span<const double> d) {
  if (d.empty()) throw std::invalid_argument("lower bound needs at least one sample");
  // A * mean(f(d_j)) rather than sum(f(d_j) * A / n_t): on-policy the mean
  // is exactly 1, so the value is exactly A for every n_t.
  double s = 0.0;
  for (double x : d) s += advantage >= 0.0 ? 1.0 + x : std::exp(x);
  return advantage * (s / static_cast<double>(d.size()));
}

Var ratio_objective(const McBatch& batch, double advantage) {
  if (batch.n_t() == 0) throw std::invalid_argument("ratio needs at least one sample");
  std::vector<Var> d(batch.n_t());
  for (std::size_t j = 0; j < d.size(); ++j) {
    d[j] = batch.samples[j].ell_cur - batch.samples[j].ell_old;
  }
  return exp(mean(d)) * advantage;
}

ObjectiveTerm boundary_term(Var ell_cur, double ell_old, double advantage, std::size_t n_t,
                            std::size_t j) {
  const Var d = ell_cur - ell_old;
  const double scale = advantage / static_cast<double>(n_t);
  ObjectiveTerm term;
  term.j = j;
  term.d = d.value();
  if (advantage >= 0.0) {
    term.branch = Branch::taylor;
    term.g = (1.0 + d) * scale;
  } else {
    term.branch = Branch::jensen;
    term.g = exp(d) * scale;
  }
  return term;
}

std::vector<ObjectiveTerm> boundary_terms(const McBatch& batch, double advantage) {
  std::vector<ObjectiveTerm> out;
  out.reserve(batch.n_t());
  for (std::size_t j = 0; j < batch.n_t(); ++j) {
    out.push_back(boundary_term(batch.samples[j].ell_cur, batch.samples[j].ell_old, advantage,
                                batch.n_t(), j));
  }
  return out;
}

void bgpo_loss_terms(const MaskPredictor& model, std::span<const Var> leaves,
                     const RolloutGroup& group, std::span<McBatch> batches, const TermSink& sink) {
  const std::size_t g = group.size();
  if (batches.size() != g || group.advantages.size() != g) {
    throw std::invalid_argument("one batch and one advantage per response required");
  }
  for (std::size_t i = 0; i < g; ++i) {
    McBatch& b = batches[i];
    for (std::size_t j = 0; j < b.n_t(); ++j) {
      McSample& s = b.samples[j];
      s.ell_cur = per_step_loss(model, leaves, group.prompt, group.responses[i], s.view);
      const ObjectiveTerm term =
          boundary_term(s.ell_cur, s.ell_old, group.advantages[i], b.n_t(), j);
      s.d = term.d;
      sink(i, term, -term.g / static_cast<double>(g));
    }
  }
}

TokenSeq mask_prompt(const TokenSeq& x, double p, Rng& rng) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("prompt mask probability must be in [0, 1)");
  TokenSeq out = x;
  out.role = SeqRole::prompt;
  if (p == 0.0) return out;
  const TokenId mask = Vocabulary::standard().mask_id();
  for (TokenId& id : out.ids) {
    if (rng.uniform() < p) id = mask;
  }
  return out;
}

namespace {

std::vector<std::size_t> iota_positions(std::size_t n) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  return p;
}

std::vector<std::size_t> as_cols(const TokenSeq& y) {
  return std::vector<std::size_t>(y.ids.begin(), y.ids.end());
}

}  // namespace

double single_pass_logprob(const MaskPredictor& model, const TokenSeq& masked_x,
                           const TokenSeq& y) {
  const std::vector<TokenId> masked(y.size(), Vocabulary::standard().mask_id());
  const Matrix lp = token_logprobs(model, masked_x.ids, masked, iota_positions(y.size()));
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += lp.row(i)[y.ids[i]];
  return s;
}

double single_pass_logprob(const MaskPredictor& model, const TokenSeq& x, const TokenSeq& y,
                           double prompt_mask_prob, Rng& rng) {
  return single_pass_logprob(model, mask_prompt(x, prompt_mask_prob, rng), y);
}

Var single_pass_logprob(const MaskPredictor& model, std::span<const Var> leaves,
                        const TokenSeq& masked_x, const TokenSeq& y) {
  const std::vector<TokenId> masked(y.size(), Vocabulary::standard().mask_id());
  const auto pos = iota_positions(y.size());
  return sum(pick(token_logprobs(model, leaves, masked_x.ids, masked, pos), pos, as_cols(y)));
}

std::string_view to_string(Algorithm a) {
  switch (a) {
    case Algorithm::bgpo:
      return "bgpo";
    case Algorithm::vrpo_ol:
      return "vrpo_ol";
    case Algorithm::diffu_grpo:
      return "diffu_grpo";
  }
  return "?";
}

Algorithm parse_algorithm(std::string_view name) {
  if (name == "bgpo") return Algorithm::bgpo;
  if (name == "vrpo_ol" || name == "vrpo-ol") return Algorithm::vrpo_ol;
  if (name == "diffu_grpo" || name == "diffu-grpo") return Algorithm::diffu_grpo;
  throw std::invalid_argument("unknown algorithm '" + std::string(name) +
                              "' (expected bgpo, vrpo_ol or diffu_grpo)");
}

void ObjectiveConfig::validate() const {
  if (n_t == 0) throw std::invalid_argument("n_t must be >= 1");
  if (!(time.epsilon >= 0.0 && time.epsilon < 1.0)) {
    throw std::invalid_argument("t_epsilon must lie in [0, 1)");
  }
  if (!(prompt_mask_prob >= 0.0 && prompt_mask_prob < 1.0)) {
    throw std::invalid_argument("prompt_mask_prob must lie in [0, 1)");
  }
  if (!(clip >= 0.0)) throw std::invalid_argument("clip must be >= 0");
}

namespace {

// Graph and plain evaluation agree bitwise, so when both policies hold the
// same values the old losses are read off the current graph.
bool on_policy(const MaskPredictor& cur, const MaskPredictor& old) {
  const auto a = cur.params().values(), b = old.params().values();
  return &cur == &old || std::equal(a.begin(), a.end(), b.begin(), b.end());
}

ResponseOutcome bgpo_response(const ObjectiveConfig& cfg, const MaskPredictor& cur,
                              const MaskPredictor& old, const TokenSeq& x, const TokenSeq& y,
                              double advantage, double weight, Rng& rng, std::span<double> grads) {
  McBatch b = draw_batch(y, cfg.n_t, cfg.time, rng);
  const bool same = on_policy(cur, old);
  if (!same) eval_old(b, old, x, y);
  Arena arena;
  const auto leaves = arena.bind(cur.params(), grads);
  ResponseOutcome out;
  std::vector<double> d;
  for (std::size_t j = 0; j < b.n_t(); ++j) {
    const Var ell = per_step_loss(cur, leaves, x, y, b.samples[j].view);
    if (same) b.samples[j].ell_old = ell.value();
    const ObjectiveTerm term = boundary_term(ell, b.samples[j].ell_old, advantage, b.n_t(), j);
    const Var loss = -term.g * weight;
    if (!std::isfinite(loss.value())) {
      out.bad_term = static_cast<long>(j);
      break;
    }
    d.push_back(term.d);
    out.loss += loss.value();
    arena.backward(loss);
    arena.release();
  }
  if (out.bad_term < 0) out.objective = lower_bound_value(advantage, d);
  out.peak_live = arena.peak_live();
  return out;
}

ResponseOutcome vrpo_response(const ObjectiveConfig& cfg, const MaskPredictor& cur,
                              const MaskPredictor& old, const TokenSeq& x, const TokenSeq& y,
                              double advantage, double weight, Rng& rng, std::span<double> grads) {
  McBatch b = draw_batch(y, cfg.n_t, cfg.time, rng);
  const bool same = on_policy(cur, old);
  if (!same) eval_old(b, old, x, y);
  Arena arena;
  const auto leaves = arena.bind(cur.params(), grads);
  for (auto& s : b.samples) {
    s.ell_cur = per_step_loss(cur, leaves, x, y, s.view);
    if (same) s.ell_old = s.ell_cur.value();
  }
  const Var r = ratio_objective(b, advantage);
  const Var loss = -r * weight;
  ResponseOutcome out;
  if (!std::isfinite(loss.value())) {
    out.bad_term = 0;
  } else {
    out.objective = r.value();
    out.loss = loss.value();
    arena.backward(loss);
  }
  arena.release();
  out.peak_live = arena.peak_live();
  return out;
}

ResponseOutcome grpo_response(const ObjectiveConfig& cfg, const MaskPredictor& cur,
                              const MaskPredictor& old, const TokenSeq& x, const TokenSeq& y,
                              double advantage, double weight, Rng& rng, std::span<double> grads) {
  Arena arena;
  const auto leaves = arena.bind(cur.params(), grads);
  ResponseOutcome out;
  const double n = static_cast<double>(cfg.n_t);
  const bool same = on_policy(cur, old);
  for (std::size_t j = 0; j < cfg.n_t; ++j) {
    const TokenSeq xm = mask_prompt(x, cfg.prompt_mask_prob, rng);
    const Var lp = single_pass_logprob(cur, leaves, xm, y);
    const double lp_old = same ? lp.value() : single_pass_logprob(old, xm, y);
    const Var ratio = exp(lp - lp_old);
    Var obj = ratio * advantage;
    if (cfg.clip > 0.0) {
      const double r = ratio.value();
      const double clipped = std::clamp(r, 1.0 - cfg.clip, 1.0 + cfg.clip) * advantage;
      if (clipped < obj.value()) obj = arena.constant(clipped);
    }
    const Var loss = -obj * (weight / n);
    if (!std::isfinite(loss.value())) {
      out.bad_term = static_cast<long>(j);
      break;
    }
    out.objective += obj.value() / n;
    out.loss += loss.value();
    arena.backward(loss);
    arena.release();
  }
  out.peak_live = arena.peak_live();
  return out;
}

}  // namespace

ResponseOutcome response_gradient(const ObjectiveConfig& cfg, const MaskPredictor& cur,
                                  const MaskPredictor& old, const TokenSeq& x, const TokenSeq& y,
                                  double advantage, double weight, std::uint64_t seed,
                                  std::span<double> grads) {
  cfg.validate();
  if (!cur.params().same_layout(old.params())) {
    throw std::invalid_argument("current and old policy have different layouts");
  }
  if (advantage == 0.0) return {};
  Rng rng(seed);
  switch (cfg.algorithm) {
    case Algorithm::bgpo:
      return bgpo_response(cfg, cur, old, x, y, advantage, weight, rng, grads);
    case Algorithm::vrpo_ol:
      return vrpo_response(cfg, cur, old, x, y, advantage, weight, rng, grads);
    case Algorithm::diffu_grpo:
      return grpo_response(cfg, cur, old, x, y, advantage, weight, rng, grads);
  }
  return {};
}

}  // namespace bgpo
