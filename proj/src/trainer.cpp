#include "bgpo/trainer.hpp"

#include <chrono>
#include <cmath>

#include <omp.h>

namespace bgpo {

namespace {

// Stream indices for derive_seed.
constexpr std::uint64_t kPromptStream = 1;
constexpr std::uint64_t kDecodeStream = 2;
constexpr std::uint64_t kObjectiveStream = 3;
constexpr std::uint64_t kEvalPromptStream = 0xE7A1;
constexpr std::uint64_t kEvalDecodeStream = 0xE7A2;
constexpr std::uint64_t kPretrainStream = 0x9E7;

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void round_to_single(ParamStore& p) {
  for (double& x : p.values()) x = static_cast<double>(static_cast<float>(x));
}

}  // namespace

void TrainConfig::validate() const {
  if (iterations == 0 || batch_size == 0) {
    throw std::invalid_argument("iterations and batch_size must be >= 1");
  }
  if (group_size < 2) throw std::invalid_argument("group_size must be >= 2");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
  if (eval_prompts == 0) throw std::invalid_argument("eval_prompts must be >= 1");
  objective.validate();
  decode.validate();
  bool known = false;
  for (const auto& t : task_names()) known = known || t == task;
  if (!known) throw std::invalid_argument("unknown task '" + task + "'");
}

NonFiniteError::NonFiniteError(std::size_t it, long g, long r, long t)
    : std::runtime_error("non-finite loss or gradient at iteration " + std::to_string(it) +
                         " (group " + std::to_string(g) + ", response " + std::to_string(r) +
                         ", term " + std::to_string(t) + ")"),
      iteration(it),
      group(g),
      response(r),
      term(t) {}

Optimizer::Optimizer(OptimizerKind kind, double learning_rate, AdamConfig adam)
    : kind_(kind), lr_(learning_rate), adam_(adam) {}

void Optimizer::step(ParamStore& params) {
  auto theta = params.values();
  auto g = params.grads();
  if (kind_ == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < theta.size(); ++i) theta[i] -= lr_ * g[i];
    return;
  }
  if (m_.size() != theta.size()) {
    m_.assign(theta.size(), 0.0);
    v_.assign(theta.size(), 0.0);
  }
  ++t_;
  const double c1 = 1.0 - std::pow(adam_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(adam_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < theta.size(); ++i) {
    m_[i] = adam_.beta1 * m_[i] + (1.0 - adam_.beta1) * g[i];
    v_[i] = adam_.beta2 * v_[i] + (1.0 - adam_.beta2) * g[i] * g[i];
    theta[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + adam_.eps);
  }
}

Rollout collect_rollouts(const MaskPredictor& policy, const TrainConfig& cfg,
                         std::size_t iteration) {
  Rollout out;
  Rng prompt_rng(derive_seed(cfg.seed, kPromptStream, iteration));
  for (std::size_t b = 0; b < cfg.batch_size; ++b) {
    out.instances.push_back(gen_instance(cfg.task, prompt_rng));
  }
  const std::size_t g = cfg.group_size;
  out.groups.resize(cfg.batch_size);
  for (std::size_t b = 0; b < cfg.batch_size; ++b) {
    out.groups[b].prompt = out.instances[b].prompt;
    out.groups[b].responses.resize(g);
    out.groups[b].rewards.resize(g);
  }
  const long total = static_cast<long>(cfg.batch_size * g);
#pragma omp parallel for schedule(dynamic)
  for (long k = 0; k < total; ++k) {
    const std::size_t b = static_cast<std::size_t>(k) / g;
    const std::size_t i = static_cast<std::size_t>(k) % g;
    Rng rng(derive_seed(cfg.seed, kDecodeStream, iteration, static_cast<std::uint64_t>(k)));
    auto& grp = out.groups[b];
    grp.responses[i] = sample_response(policy, grp.prompt, cfg.decode, rng);
    grp.rewards[i] = reward(out.instances[b], grp.responses[i], cfg.reward);
  }
  for (auto& grp : out.groups) grp.advantages = group_advantages(grp.rewards);
  return out;
}

BatchGradient batch_gradient(const ObjectiveConfig& cfg, const MaskPredictor& cur,
                             const MaskPredictor& old, std::span<const RolloutGroup> groups,
                             std::uint64_t seed, std::span<double> grads) {
  cfg.validate();
  if (grads.size() != cur.params().size()) {
    throw std::invalid_argument("gradient buffer does not match the parameter count");
  }
  struct Job {
    std::size_t b;
    std::size_t i;
    double weight;
  };
  std::vector<Job> jobs;
  for (std::size_t b = 0; b < groups.size(); ++b) {
    const auto& grp = groups[b];
    if (grp.advantages.size() != grp.size()) {
      throw std::invalid_argument("every response needs an advantage");
    }
    const double w = 1.0 / (static_cast<double>(groups.size()) * static_cast<double>(grp.size()));
    for (std::size_t i = 0; i < grp.size(); ++i) {
      if (grp.advantages[i] != 0.0) jobs.push_back({b, i, w});
    }
  }

  std::vector<std::vector<double>> local(jobs.size());
  std::vector<ResponseOutcome> outcomes(jobs.size());
  const long n = static_cast<long>(jobs.size());
#pragma omp parallel for schedule(dynamic)
  for (long k = 0; k < n; ++k) {
    const Job& job = jobs[k];
    const auto& grp = groups[job.b];
    local[k].assign(grads.size(), 0.0);
    outcomes[k] = response_gradient(cfg, cur, old, grp.prompt, grp.responses[job.i],
                                    grp.advantages[job.i], job.weight,
                                    derive_seed(seed, job.b, job.i), local[k]);
  }

  BatchGradient out;
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    const auto& o = outcomes[k];
    if (o.bad_term >= 0 && out.bad_term < 0) {
      out.bad_group = static_cast<long>(jobs[k].b);
      out.bad_response = static_cast<long>(jobs[k].i);
      out.bad_term = o.bad_term;
    }
    out.loss += o.loss;
    out.peak_live = std::max(out.peak_live, o.peak_live);
    for (std::size_t p = 0; p < grads.size(); ++p) grads[p] += local[k][p];
  }
  return out;
}

StepMetrics train_step(const TrainConfig& cfg, MaskPredictor& model, Optimizer& opt,
                       std::size_t iteration) {
  StepMetrics m;
  m.iteration = iteration;

  auto t0 = std::chrono::steady_clock::now();
  const MaskPredictor old(model.config(), model.params());
  const Rollout roll = collect_rollouts(old, cfg, iteration);
  m.seconds.rollout = seconds_since(t0);

  double reward_sum = 0.0;
  double adv_sum = 0.0;
  std::size_t count = 0;
  for (const auto& grp : roll.groups) {
    for (std::size_t i = 0; i < grp.size(); ++i) {
      reward_sum += grp.rewards[i];
      adv_sum += std::abs(grp.advantages[i]);
      ++count;
    }
  }
  m.mean_reward = reward_sum / static_cast<double>(count);
  m.mean_abs_advantage = adv_sum / static_cast<double>(count);

  t0 = std::chrono::steady_clock::now();
  model.params().zero_grads();
  const BatchGradient bg =
      batch_gradient(cfg.objective, model, old, roll.groups,
                     derive_seed(cfg.seed, kObjectiveStream, iteration), model.params().grads());
  m.seconds.objective = seconds_since(t0);
  if (bg.bad_term >= 0) throw NonFiniteError(iteration, bg.bad_group, bg.bad_response, bg.bad_term);
  m.loss = bg.loss;
  m.peak_live = bg.peak_live;

  t0 = std::chrono::steady_clock::now();
  double sq = 0.0;
  for (double g : model.params().grads()) sq += g * g;
  m.grad_norm = std::sqrt(sq);
  if (!std::isfinite(m.grad_norm)) throw NonFiniteError(iteration, -1, -1, -1);
  opt.step(model.params());
  if (cfg.precision == Precision::single) round_to_single(model.params());
  m.seconds.update = seconds_since(t0);
  return m;
}

MaskPredictor train(const TrainConfig& cfg, MaskPredictor model, const MetricsSink& sink) {
  cfg.validate();
  Optimizer opt(cfg.optimizer, cfg.learning_rate, cfg.adam);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    StepMetrics m = train_step(cfg, model, opt, it);
    const bool last = it + 1 == cfg.iterations;
    if (last || (cfg.eval_every > 0 && (it + 1) % cfg.eval_every == 0)) {
      m.eval_reward = evaluate(model, cfg.task, cfg.eval_prompts, cfg.seed, cfg.decode);
    }
    if (sink) sink(m);
  }
  return model;
}

double evaluate(const Policy& policy, std::string_view task, std::size_t n_prompts,
                std::uint64_t seed, const RewardOptions& opts) {
  if (n_prompts == 0) throw std::invalid_argument("evaluation needs at least one prompt");
  Rng prompt_rng(derive_seed(seed, kEvalPromptStream));
  std::vector<TaskInstance> inst;
  for (std::size_t k = 0; k < n_prompts; ++k) inst.push_back(gen_instance(task, prompt_rng));
  std::vector<double> r(n_prompts);
  const long n = static_cast<long>(n_prompts);
#pragma omp parallel for schedule(dynamic)
  for (long k = 0; k < n; ++k) {
    Rng rng(derive_seed(seed, kEvalDecodeStream, static_cast<std::uint64_t>(k)));
    r[k] = reward(inst[k], policy(inst[k], rng), opts);
  }
  double s = 0.0;
  for (double x : r) s += x;
  return s / static_cast<double>(n_prompts);
}

double evaluate(const MaskPredictor& model, std::string_view task, std::size_t n_prompts,
                std::uint64_t seed, DecodeConfig decode, const RewardOptions& opts) {
  decode.temperature = 0.0;
  return evaluate(
      [&](const TaskInstance& inst, Rng& rng) {
        return sample_response(model, inst.prompt, decode, rng);
      },
      task, n_prompts, seed, opts);
}

MaskPredictor pretrain_format(const PretrainConfig& cfg, std::string_view task,
                              const DecodeConfig& decode, std::uint64_t seed, MaskPredictor model) {
  if (cfg.steps == 0) return model;
  if (cfg.batch_size == 0 || cfg.n_t == 0) {
    throw std::invalid_argument("pretrain batch_size and n_t must be >= 1");
  }
  Optimizer opt(OptimizerKind::adam, cfg.learning_rate);
  const std::size_t n = model.params().size();
  for (std::size_t step = 0; step < cfg.steps; ++step) {
    Rng rng(derive_seed(seed, kPretrainStream, step));
    std::vector<TaskInstance> inst;
    std::vector<TokenSeq> demos;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      inst.push_back(gen_instance(task, rng));
      demos.push_back(pad_response(format_demo(inst.back(), cfg.shuffle, rng),
                                   decode.response_length));
    }
    std::vector<std::vector<double>> local(cfg.batch_size);
    const long total = static_cast<long>(cfg.batch_size);
#pragma omp parallel for schedule(dynamic)
    for (long b = 0; b < total; ++b) {
      local[b].assign(n, 0.0);
      Rng mc(derive_seed(seed, kPretrainStream, step, static_cast<std::uint64_t>(b) + 1));
      Arena arena;
      const auto leaves = arena.bind(model.params(), local[b]);
      const Var elbo = mc_elbo(model, leaves, inst[b].prompt, demos[b], cfg.n_t, TimeSampling{}, mc);
      arena.backward(-elbo / static_cast<double>(cfg.batch_size));
    }
    model.params().zero_grads();
    auto g = model.params().grads();
    for (const auto& l : local) {
      for (std::size_t p = 0; p < n; ++p) g[p] += l[p];
    }
    opt.step(model.params());
  }
  return model;
}

}  // namespace bgpo
