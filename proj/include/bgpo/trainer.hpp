#pragma once

#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bgpo/objectives.hpp"
#include "bgpo/tasks.hpp"

namespace bgpo {

enum class Precision { double_, single };
enum class OptimizerKind { sgd, adam };

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  std::size_t iterations = 300;
  std::size_t batch_size = 8;
  std::size_t group_size = 8;
  ObjectiveConfig objective;
  double learning_rate = 1e-4;
  DecodeConfig decode;
  std::uint64_t seed = 1;
  std::string task = "countdown";
  Precision precision = Precision::double_;
  OptimizerKind optimizer = OptimizerKind::sgd;
  AdamConfig adam;
  RewardOptions reward;
  /// Held-out evaluation every `eval_every` iterations (0 = never) and
  /// after the last one. Always scored without partial credit.
  std::size_t eval_every = 0;
  std::size_t eval_prompts = 64;

  void validate() const;
};

struct PhaseTimes {
  double rollout = 0.0;
  double objective = 0.0;
  double update = 0.0;
};

struct StepMetrics {
  std::size_t iteration = 0;
  double mean_reward = 0.0;
  double mean_abs_advantage = 0.0;
  double loss = 0.0;
  double grad_norm = 0.0;
  std::size_t peak_live = 0;
  PhaseTimes seconds;
  std::optional<double> eval_reward;
};

/// Raised when a loss term or the gradient is not finite.
class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(std::size_t iteration, long group, long response, long term);
  std::size_t iteration;
  long group;
  long response;
  long term;
};

class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double learning_rate, AdamConfig adam = {});
  /// theta <- theta - lr * update(grads).
  void step(ParamStore& params);

 private:
  OptimizerKind kind_;
  double lr_;
  AdamConfig adam_;
  std::size_t t_ = 0;
  std::vector<double> m_;
  std::vector<double> v_;
};

/// G responses per prompt sampled from `policy`, with rewards and
/// advantages. All randomness derives from (seed, iteration).
struct Rollout {
  std::vector<TaskInstance> instances;
  std::vector<RolloutGroup> groups;
};
Rollout collect_rollouts(const MaskPredictor& policy, const TrainConfig& cfg,
                         std::size_t iteration);

struct BatchGradient {
  double loss = 0.0;
  std::size_t peak_live = 0;
  /// -1 when every term was finite.
  long bad_group = -1;
  long bad_response = -1;
  long bad_term = -1;
};

/// Gradient of the batch loss -(1 / (B G)) sum_i objective_i added into
/// `grads`. Response (b, i) draws its samples from derive_seed(seed, b, i);
/// per-response gradients are merged in index order, so the result does not
/// depend on the thread count.
BatchGradient batch_gradient(const ObjectiveConfig& cfg, const MaskPredictor& cur,
                             const MaskPredictor& old, std::span<const RolloutGroup> groups,
                             std::uint64_t seed, std::span<double> grads);

using MetricsSink = std::function<void(const StepMetrics&)>;

/// One iteration of the training loop; returns its metrics.
StepMetrics train_step(const TrainConfig& cfg, MaskPredictor& model, Optimizer& opt,
                       std::size_t iteration);

/// Runs cfg.iterations steps starting from `model`.
MaskPredictor train(const TrainConfig& cfg, MaskPredictor model, const MetricsSink& sink = {});

using Policy = std::function<TokenSeq(const TaskInstance&, Rng&)>;

/// Mean reward over `n_prompts` held-out prompts (a stream disjoint from
/// the training prompts).
double evaluate(const Policy& policy, std::string_view task, std::size_t n_prompts,
                std::uint64_t seed, const RewardOptions& opts = {});
/// Greedy decoding (temperature forced to 0).
double evaluate(const MaskPredictor& model, std::string_view task, std::size_t n_prompts,
                std::uint64_t seed, DecodeConfig decode, const RewardOptions& opts = {});

struct PretrainConfig {
  std::size_t steps = 0;
  std::size_t batch_size = 16;
  std::size_t n_t = 4;
  double learning_rate = 1e-3;
  bool shuffle = false;
};

/// Supervised warm start on format_demo answers: maximizes the Monte-Carlo
/// ELBO of well-formed but solution-agnostic responses with Adam.
MaskPredictor pretrain_format(const PretrainConfig& cfg, std::string_view task,
                              const DecodeConfig& decode, std::uint64_t seed, MaskPredictor model);

}  // namespace bgpo
