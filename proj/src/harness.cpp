#include "bgpo/harness.hpp"

#include <algorithm>
#include <cmath>
#include <charconv>
#include <stdexcept>

#include "json.hpp"

namespace bgpo {

namespace {

constexpr std::uint64_t kBatchPromptStream = 11;
constexpr std::uint64_t kBatchDecodeStream = 12;
constexpr std::uint64_t kBatchRewardStream = 13;

using GradSet = std::vector<std::vector<double>>;

GradSet repeated_gradients(const ObjectiveConfig& objective, std::size_t n_t,
                           const FrozenBatch& batch, std::size_t repeats, std::uint64_t seed,
                           std::size_t& nonfinite) {
  ObjectiveConfig cfg = objective;
  cfg.n_t = n_t;
  GradSet out;
  for (std::size_t r = 0; r < repeats; ++r) {
    std::vector<double> g(batch.model.params().size(), 0.0);
    batch_gradient(cfg, batch.model, batch.model, batch.groups, derive_seed(seed, n_t, r), g);
    if (std::all_of(g.begin(), g.end(), [](double x) { return std::isfinite(x); })) {
      out.push_back(std::move(g));
    } else {
      ++nonfinite;
    }
  }
  return out;
}

std::vector<double> mean_of(const GradSet& set, std::size_t n) {
  std::vector<double> m(n, 0.0);
  if (set.empty()) return m;
  for (const auto& g : set) {
    for (std::size_t p = 0; p < n; ++p) m[p] += g[p];
  }
  for (double& x : m) x /= static_cast<double>(set.size());
  return m;
}

void mark_active(const GradSet& set, std::vector<std::uint8_t>& active) {
  for (const auto& g : set) {
    for (std::size_t p = 0; p < g.size(); ++p) {
      if (g[p] != 0.0) active[p] = 1;
    }
  }
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + mid, v.end());
  double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + mid);
  return 0.5 * (lo + hi);
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

std::vector<double> normalized_std(const GradSet& set, std::span<const double> theta,
                                   const std::vector<std::uint8_t>& active, double eps_p) {
  std::vector<double> out;
  if (set.size() < 2) return out;
  const auto m = mean_of(set, theta.size());
  for (std::size_t p = 0; p < theta.size(); ++p) {
    if (!active[p]) continue;
    double ss = 0.0;
    for (const auto& g : set) ss += (g[p] - m[p]) * (g[p] - m[p]);
    const double sd = std::sqrt(ss / static_cast<double>(set.size() - 1));
    out.push_back(sd / std::max(std::abs(theta[p]), eps_p));
  }
  return out;
}

std::vector<double> normalized_bias(const GradSet& set, const std::vector<double>& golden,
                                    std::span<const double> theta,
                                    const std::vector<std::uint8_t>& active, double eps_p) {
  std::vector<double> out;
  const auto m = mean_of(set, theta.size());
  for (std::size_t p = 0; p < theta.size(); ++p) {
    if (!active[p]) continue;
    out.push_back(std::abs(m[p] - golden[p]) / std::max(std::abs(theta[p]), eps_p));
  }
  return out;
}

std::size_t count_active(const std::vector<std::uint8_t>& active) {
  return static_cast<std::size_t>(std::count(active.begin(), active.end(), 1));
}

}  // namespace

FrozenBatch make_frozen_batch(const FrozenBatchConfig& cfg) {
  if (cfg.prompts == 0 || cfg.group_size < 2) {
    throw std::invalid_argument("frozen batch needs prompts >= 1 and group_size >= 2");
  }
  FrozenBatch fb{MaskPredictor(cfg.model, cfg.model_seed), {}};
  Rng prompt_rng(derive_seed(cfg.seed, kBatchPromptStream));
  Rng reward_rng(derive_seed(cfg.seed, kBatchRewardStream));
  for (std::size_t b = 0; b < cfg.prompts; ++b) {
    const TaskInstance inst = gen_instance(cfg.task, prompt_rng);
    RolloutGroup grp;
    grp.prompt = inst.prompt;
    for (std::size_t i = 0; i < cfg.group_size; ++i) {
      Rng rng(derive_seed(cfg.seed, kBatchDecodeStream, b, i));
      grp.responses.push_back(sample_response(fb.model, grp.prompt, cfg.decode, rng));
      grp.rewards.push_back(cfg.rewards == RewardSource::random
                                ? (reward_rng.bernoulli(0.5) ? 1.0 : 0.0)
                                : reward(inst, grp.responses.back()));
    }
    grp.advantages = group_advantages(grp.rewards);
    fb.groups.push_back(std::move(grp));
  }
  return fb;
}

void GradStudyConfig::validate() const {
  if (repeats < 2) throw std::invalid_argument("repeats must be >= 2");
  if (grid.empty()) throw std::invalid_argument("n_t grid must not be empty");
  for (std::size_t n : grid) {
    if (n == 0) throw std::invalid_argument("n_t grid entries must be >= 1");
  }
  if (golden_n_t <= *std::max_element(grid.begin(), grid.end())) {
    throw std::invalid_argument("golden_n_t must exceed every n_t in the grid");
  }
  if (!(eps_p > 0.0)) throw std::invalid_argument("eps_p must be > 0");
}

GradReport grad_std_study(const GradStudyConfig& cfg, const ObjectiveConfig& objective,
                          const FrozenBatch& batch) {
  cfg.validate();
  const auto theta = batch.model.params().values();
  GradReport rep;
  rep.algorithm = objective.algorithm;
  rep.param_count = theta.size();
  std::vector<GradSet> sets;
  std::vector<std::uint8_t> active(theta.size(), 0);
  for (std::size_t n : cfg.grid) {
    GradRow row;
    row.n_t = n;
    sets.push_back(repeated_gradients(objective, n, batch, cfg.repeats, cfg.seed, row.nonfinite));
    mark_active(sets.back(), active);
    rep.rows.push_back(row);
  }
  rep.active_params = count_active(active);
  for (std::size_t k = 0; k < sets.size(); ++k) {
    const auto s = normalized_std(sets[k], theta, active, cfg.eps_p);
    rep.rows[k].median_std = median(s);
    rep.rows[k].mean_std = mean(s);
  }
  return rep;
}

GradReport grad_bias_study(const GradStudyConfig& cfg, const ObjectiveConfig& objective,
                           const FrozenBatch& batch) {
  cfg.validate();
  const auto theta = batch.model.params().values();
  ObjectiveConfig golden_cfg = objective;
  golden_cfg.algorithm = Algorithm::bgpo;
  std::size_t golden_bad = 0;
  const GradSet golden_set =
      repeated_gradients(golden_cfg, cfg.golden_n_t, batch, cfg.repeats, cfg.seed, golden_bad);
  const auto golden = mean_of(golden_set, theta.size());

  GradReport rep;
  rep.algorithm = objective.algorithm;
  rep.param_count = theta.size();
  std::vector<std::uint8_t> active(theta.size(), 0);
  mark_active(golden_set, active);
  std::vector<GradSet> sets;
  for (std::size_t n : cfg.grid) {
    GradRow row;
    row.n_t = n;
    sets.push_back(repeated_gradients(objective, n, batch, cfg.repeats, cfg.seed, row.nonfinite));
    mark_active(sets.back(), active);
    rep.rows.push_back(row);
  }
  rep.active_params = count_active(active);
  for (std::size_t k = 0; k < sets.size(); ++k) {
    const auto b = normalized_bias(sets[k], golden, theta, active, cfg.eps_p);
    rep.rows[k].median_bias = median(b);
    rep.rows[k].mean_bias = mean(b);
  }
  return rep;
}

std::vector<MemRow> mem_profile(Algorithm algorithm, const std::vector<std::size_t>& grid,
                                const ModelConfig& model, std::size_t response_length,
                                std::uint64_t seed) {
  const MaskPredictor m(model, seed);
  Rng rng(derive_seed(seed, 21));
  const TaskInstance inst = gen_instance("countdown", rng);
  TokenSeq y;
  for (std::size_t i = 0; i < response_length; ++i) {
    y.ids.push_back(static_cast<TokenId>(4 + rng.below(10)));
  }
  std::vector<MemRow> rows;
  for (std::size_t n : grid) {
    ObjectiveConfig cfg;
    cfg.algorithm = algorithm;
    cfg.n_t = n;
    std::vector<double> g(m.params().size(), 0.0);
    const auto out = response_gradient(cfg, m, m, inst.prompt, y, 1.0, 1.0, derive_seed(seed, 22), g);
    rows.push_back({algorithm, n, out.peak_live});
  }
  return rows;
}

EquivReport equivalence_check(const FrozenBatch& batch, std::size_t n_t, std::uint64_t seed,
                              double old_perturb) {
  MaskPredictor old(batch.model.config(), batch.model.params());
  if (old_perturb != 0.0) {
    Rng rng(derive_seed(seed, 31));
    for (double& x : old.params().values()) x += old_perturb * rng.normal();
  }
  const std::size_t n = batch.model.params().size();
  std::vector<double> g_lb(n, 0.0);
  std::vector<double> g_r(n, 0.0);
  EquivReport rep;
  rep.n_t = n_t;
  ObjectiveConfig lb;
  lb.algorithm = Algorithm::bgpo;
  lb.n_t = n_t;
  ObjectiveConfig ratio = lb;
  ratio.algorithm = Algorithm::vrpo_ol;
  const double b = static_cast<double>(batch.groups.size());
  for (std::size_t gi = 0; gi < batch.groups.size(); ++gi) {
    const auto& grp = batch.groups[gi];
    const double w = 1.0 / (b * static_cast<double>(grp.size()));
    for (std::size_t i = 0; i < grp.size(); ++i) {
      const double a = grp.advantages[i];
      if (a > 0.0) ++rep.positive;
      if (a < 0.0) ++rep.negative;
      const std::uint64_t s = derive_seed(seed, gi, i);
      const auto o1 = response_gradient(lb, batch.model, old, grp.prompt, grp.responses[i], a, w, s, g_lb);
      const auto o2 = response_gradient(ratio, batch.model, old, grp.prompt, grp.responses[i], a, w, s, g_r);
      rep.value_gap = std::max(rep.value_gap, std::abs(o1.objective - o2.objective));
    }
  }
  double diff = 0.0;
  double ref = 0.0;
  for (std::size_t p = 0; p < n; ++p) {
    diff += (g_lb[p] - g_r[p]) * (g_lb[p] - g_r[p]);
    ref += g_r[p] * g_r[p];
  }
  rep.grad_gap = ref > 0.0 ? std::sqrt(diff / ref) : std::sqrt(diff);
  return rep;
}

std::vector<OracleRow> elbo_oracle_check(const ModelConfig& model, std::uint64_t seed,
                                         const std::vector<std::size_t>& lengths,
                                         std::size_t draws, const TimeSampling& ts) {
  if (draws < 2) throw std::invalid_argument("oracle check needs at least two draws");
  const MaskPredictor m(model, seed);
  std::vector<OracleRow> rows;
  for (std::size_t len : lengths) {
    Rng rng(derive_seed(seed, 41, len));
    const TaskInstance inst = gen_instance("countdown", rng);
    TokenSeq y;
    for (std::size_t i = 0; i < len; ++i) y.ids.push_back(static_cast<TokenId>(2 + rng.below(30)));
    OracleRow row;
    row.length = len;
    row.exact = exact_elbo(m, inst.prompt, y);
    row.exact_truncated = exact_elbo(m, inst.prompt, y, ts.epsilon);
    double s = 0.0;
    double ss = 0.0;
    for (std::size_t k = 0; k < draws; ++k) {
      const double v = mc_elbo(m, inst.prompt, y, 1, ts, rng);
      s += v;
      ss += v * v;
    }
    const double dn = static_cast<double>(draws);
    row.mc_mean = s / dn;
    const double var = (ss - dn * row.mc_mean * row.mc_mean) / (dn - 1.0);
    row.std_error = std::sqrt(std::max(var, 0.0) / dn);
    if (row.std_error > 0.0) {
      row.z = (row.mc_mean - row.exact) / row.std_error;
      row.bias_z = (row.exact_truncated - row.exact) / row.std_error;
    }
    rows.push_back(row);
  }
  return rows;
}

std::string format_number(double x) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

std::string grad_report_csv(const GradReport& r, bool bias) {
  std::string out = bias ? "algorithm,n_t,median_bias,mean_bias,nonfinite,active_params,param_count\n"
                         : "algorithm,n_t,median_std,mean_std,nonfinite,active_params,param_count\n";
  for (const auto& row : r.rows) {
    out += std::string(to_string(r.algorithm)) + "," + std::to_string(row.n_t) + "," +
           format_number(bias ? row.median_bias : row.median_std) + "," +
           format_number(bias ? row.mean_bias : row.mean_std) + "," +
           std::to_string(row.nonfinite) + "," + std::to_string(r.active_params) + "," +
           std::to_string(r.param_count) + "\n";
  }
  return out;
}

std::string mem_report_csv(const std::vector<MemRow>& rows) {
  std::string out = "algorithm,n_t,peak_live_nodes\n";
  for (const auto& r : rows) {
    out += std::string(to_string(r.algorithm)) + "," + std::to_string(r.n_t) + "," +
           std::to_string(r.peak_live) + "\n";
  }
  return out;
}

std::string equiv_report_csv(const std::vector<EquivReport>& rows) {
  std::string out = "n_t,value_gap,grad_gap,positive_advantages,negative_advantages\n";
  for (const auto& r : rows) {
    out += std::to_string(r.n_t) + "," + format_number(r.value_gap) + "," +
           format_number(r.grad_gap) + "," + std::to_string(r.positive) + "," +
           std::to_string(r.negative) + "\n";
  }
  return out;
}

std::string oracle_report_csv(const std::vector<OracleRow>& rows) {
  std::string out = "length,exact_elbo,exact_elbo_truncated,mc_mean,std_error,z,bias_z\n";
  for (const auto& r : rows) {
    out += std::to_string(r.length) + "," + format_number(r.exact) + "," +
           format_number(r.exact_truncated) + "," + format_number(r.mc_mean) + "," +
           format_number(r.std_error) + "," + format_number(r.z) + "," + format_number(r.bias_z) +
           "\n";
  }
  return out;
}

std::string train_report_header() {
  return "iteration,mean_reward,mean_abs_advantage,loss,grad_norm,peak_live_nodes,eval_reward\n";
}

std::string train_report_row(const StepMetrics& m) {
  return std::to_string(m.iteration) + "," + format_number(m.mean_reward) + "," +
         format_number(m.mean_abs_advantage) + "," + format_number(m.loss) + "," +
         format_number(m.grad_norm) + "," + std::to_string(m.peak_live) + "," +
         (m.eval_reward ? format_number(*m.eval_reward) : std::string()) + "\n";
}

std::string metrics_jsonl(const StepMetrics& m) {
  nlohmann::ordered_json j;
  j["iteration"] = m.iteration;
  j["mean_reward"] = m.mean_reward;
  j["mean_abs_advantage"] = m.mean_abs_advantage;
  j["loss"] = m.loss;
  j["grad_norm"] = m.grad_norm;
  j["peak_live_nodes"] = m.peak_live;
  j["time_rollout"] = m.seconds.rollout;
  j["time_objective"] = m.seconds.objective;
  j["time_update"] = m.seconds.update;
  if (m.eval_reward) j["eval_reward"] = *m.eval_reward;
  return j.dump() + "\n";
}

}  // namespace bgpo
