#pragma once

#include <string>
#include <vector>

#include "bgpo/trainer.hpp"

namespace bgpo {

enum class RewardSource { random, task };

/// Everything a gradient study holds fixed across repeats: parameters,
/// prompts, responses and advantages.
struct FrozenBatch {
  MaskPredictor model;
  std::vector<RolloutGroup> groups;
};

struct FrozenBatchConfig {
  ModelConfig model;
  std::uint64_t model_seed = 1;
  DecodeConfig decode;
  std::string task = "countdown";
  std::size_t prompts = 2;
  std::size_t group_size = 8;
  /// random: Bernoulli(0.5) rewards, so that an untrained policy still has
  /// nonzero advantages. task: the task verifier.
  RewardSource rewards = RewardSource::random;
  std::uint64_t seed = 1;
};

FrozenBatch make_frozen_batch(const FrozenBatchConfig& cfg);

struct GradStudyConfig {
  std::size_t repeats = 8;
  std::vector<std::size_t> grid{1, 4, 16, 64};
  std::size_t golden_n_t = 256;
  std::uint64_t seed = 1;
  double eps_p = 1e-8;

  /// golden_n_t > max(grid), repeats >= 2.
  void validate() const;
};

struct GradRow {
  std::size_t n_t = 0;
  double median_std = 0.0;
  double mean_std = 0.0;
  double median_bias = 0.0;
  double mean_bias = 0.0;
  /// Repeats whose gradient had a non-finite entry (excluded).
  std::size_t nonfinite = 0;
};

struct GradReport {
  Algorithm algorithm = Algorithm::bgpo;
  std::size_t param_count = 0;
  /// Parameters with a nonzero gradient somewhere in the study; the
  /// statistics aggregate over these only.
  std::size_t active_params = 0;
  std::vector<GradRow> rows;
};

/// Per-parameter std of the gradient across repeats, divided by
/// max(|theta|, eps_p); median and mean over active parameters.
GradReport grad_std_study(const GradStudyConfig& cfg, const ObjectiveConfig& objective,
                          const FrozenBatch& batch);

/// |mean gradient at n_t - golden| / max(|theta|, eps_p), where golden is
/// the mean of the BGPO gradients of `repeats` draws at golden_n_t.
GradReport grad_bias_study(const GradStudyConfig& cfg, const ObjectiveConfig& objective,
                           const FrozenBatch& batch);

struct MemRow {
  Algorithm algorithm = Algorithm::bgpo;
  std::size_t n_t = 0;
  std::size_t peak_live = 0;
};

/// Peak live graph nodes while computing one response's gradient.
std::vector<MemRow> mem_profile(Algorithm algorithm, const std::vector<std::size_t>& grid,
                                const ModelConfig& model, std::size_t response_length,
                                std::uint64_t seed);

struct EquivReport {
  std::size_t n_t = 0;
  /// max over responses of |R_lb - R|.
  double value_gap = 0.0;
  /// ||grad_bgpo - grad_vrpo|| / ||grad_vrpo||.
  double grad_gap = 0.0;
  std::size_t positive = 0;
  std::size_t negative = 0;
};

/// Compares BGPO and VRPO-OL on the same views. With old_perturb = 0 the old
/// policy is an exact copy of theta; otherwise Gaussian noise of that std is
/// added to every old parameter.
EquivReport equivalence_check(const FrozenBatch& batch, std::size_t n_t, std::uint64_t seed,
                              double old_perturb = 0.0);

struct OracleRow {
  std::size_t length = 0;
  /// Closed form with t ~ Uniform[0, 1].
  double exact = 0.0;
  /// Closed form under the sampled timestamp law, t ~ Uniform(epsilon, 1].
  double exact_truncated = 0.0;
  double mc_mean = 0.0;
  double std_error = 0.0;
  /// (mc_mean - exact) / std_error.
  double z = 0.0;
  /// (exact_truncated - exact) / std_error: the epsilon bias in standard errors.
  double bias_z = 0.0;
};

/// Mean of `draws` single-sample mc_elbo estimates vs exact_elbo for random
/// responses of each length.
std::vector<OracleRow> elbo_oracle_check(const ModelConfig& model, std::uint64_t seed,
                                         const std::vector<std::size_t>& lengths,
                                         std::size_t draws, const TimeSampling& ts = {});

// Report formatting. Numbers use the shortest text that reads back to the
// same double.
std::string format_number(double x);
std::string grad_report_csv(const GradReport& r, bool bias);
std::string mem_report_csv(const std::vector<MemRow>& rows);
std::string equiv_report_csv(const std::vector<EquivReport>& rows);
std::string oracle_report_csv(const std::vector<OracleRow>& rows);
/// Deterministic per-iteration table (no timings).
std::string train_report_header();
std::string train_report_row(const StepMetrics& m);
/// One JSON object per line, timings included.
std::string metrics_jsonl(const StepMetrics& m);

}  // namespace bgpo
