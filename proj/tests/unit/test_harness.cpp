#include <cmath>
#include <filesystem>
#include <fstream>

#include "bgpo/config.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace bgpo;
namespace fs = std::filesystem;

namespace {

FrozenBatchConfig small_batch() {
  FrozenBatchConfig c;
  c.model.embed_dim = 16;
  c.model.depth = 1;
  c.model.ffn_dim = 24;
  c.model.context_length = 16;
  c.model.output_init_std = 0.3;
  c.task = "copy";
  c.group_size = 4;
  c.decode.response_length = 8;
  c.decode.block_size = 8;
  c.decode.steps_per_block = 4;
  return c;
}

fs::path write_temp(const std::string& name, const std::string& text) {
  const fs::path p = fs::temp_directory_path() / ("bgpo_unit_" + name);
  std::ofstream(p) << text;
  return p;
}

std::string error_key(const fs::path& p, const std::vector<std::string>& overrides = {}) {
  try {
    load_config(p, overrides);
  } catch (const ConfigError& e) {
    return e.key();
  }
  return "<no error>";
}

}  // namespace

TEST_CASE("frozen batches are reproducible") {
  const FrozenBatch a = make_frozen_batch(small_batch());
  const FrozenBatch b = make_frozen_batch(small_batch());
  REQUIRE(a.groups.size() == 2);
  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(a.groups[k].rewards == b.groups[k].rewards);
    for (double r : a.groups[k].rewards) CHECK((r == 0.0 || r == 1.0));
    for (std::size_t i = 0; i < 4; ++i) CHECK(a.groups[k].responses[i].ids == b.groups[k].responses[i].ids);
  }
}

TEST_CASE("on-policy equivalence report") {
  const FrozenBatch fb = make_frozen_batch(small_batch());
  for (std::size_t n_t : {1, 4, 16}) {
    const EquivReport r = equivalence_check(fb, n_t, 3);
    CHECK(r.value_gap == 0.0);
    CHECK(r.grad_gap <= 1e-9);
    CHECK(r.positive + r.negative > 0);
  }
  const EquivReport off = equivalence_check(fb, 4, 3, 1e-2);
  CHECK(off.value_gap > 0.0);
  CHECK(off.grad_gap > 1e-9);
}

TEST_CASE("gradient std shrinks with more samples") {
  const FrozenBatch fb = make_frozen_batch(small_batch());
  GradStudyConfig sc;
  sc.repeats = 6;
  sc.grid = {1, 16};
  sc.golden_n_t = 32;
  const GradReport r = grad_std_study(sc, ObjectiveConfig{}, fb);
  REQUIRE(r.rows.size() == 2);
  CHECK(r.active_params > 0);
  CHECK(r.active_params <= r.param_count);
  CHECK(r.rows[1].median_std < r.rows[0].median_std);
  CHECK(r.rows[0].nonfinite == 0);
  // Same config, same report.
  CHECK(grad_report_csv(r, false) == grad_report_csv(grad_std_study(sc, ObjectiveConfig{}, fb), false));

  const GradReport bias = grad_bias_study(sc, ObjectiveConfig{}, fb);
  for (const auto& row : bias.rows) {
    CHECK(std::isfinite(row.median_bias));
    CHECK(row.median_bias >= 0.0);
    CHECK(row.mean_bias >= row.median_bias * 0.0);
  }
  sc.golden_n_t = 16;
  CHECK_THROWS_AS(sc.validate(), std::invalid_argument);
  sc.golden_n_t = 32;
  sc.repeats = 1;
  CHECK_THROWS_AS(sc.validate(), std::invalid_argument);
}

TEST_CASE("memory profile separates the objectives") {
  const ModelConfig mc = small_batch().model;
  const auto lb = mem_profile(Algorithm::bgpo, {2, 4, 8}, mc, 8, 1);
  const auto ratio = mem_profile(Algorithm::vrpo_ol, {2, 4, 8}, mc, 8, 1);
  CHECK(lb[0].peak_live == lb[1].peak_live);
  CHECK(lb[1].peak_live == lb[2].peak_live);
  CHECK(ratio[0].peak_live < ratio[1].peak_live);
  CHECK(ratio[1].peak_live < ratio[2].peak_live);
  CHECK(mem_report_csv(lb).rfind("algorithm,n_t,peak_live_nodes\nbgpo,2,", 0) == 0);
}

TEST_CASE("ELBO oracle check") {
  ModelConfig mc = small_batch().model;
  mc.output_init_std = 1.0;
  const auto rows = elbo_oracle_check(mc, 2, {1, 2, 3}, 20000);
  REQUIRE(rows.size() == 3);
  for (const auto& r : rows) {
    CHECK(std::abs(r.z) < 4.5);
    CHECK(r.std_error > 0.0);
  }
  CHECK_THROWS_AS(elbo_oracle_check(mc, 2, {1}, 1), std::invalid_argument);
}

TEST_CASE("number formatting round-trips") {
  Rng rng(1);
  for (int i = 0; i < 10000; ++i) {
    const double x = (rng.uniform() - 0.5) * std::pow(10.0, rng.uniform(-300.0, 300.0));
    CHECK(std::stod(format_number(x)) == x);
  }
  CHECK(format_number(0.5) == "0.5");
  CHECK(format_number(3.0) == "3");
}

TEST_CASE("report formats") {
  StepMetrics m;
  m.iteration = 4;
  m.mean_reward = 0.25;
  m.loss = -0.5;
  m.peak_live = 12;
  m.seconds.rollout = 0.125;
  CHECK(train_report_row(m) == "4,0.25,0,-0.5,0,12,\n");
  m.eval_reward = 0.75;
  CHECK(train_report_row(m) == "4,0.25,0,-0.5,0,12,0.75\n");
  const auto j = nlohmann::json::parse(metrics_jsonl(m));
  CHECK(j["iteration"] == 4);
  CHECK(j["time_rollout"] == 0.125);
  CHECK(j["eval_reward"] == 0.75);
  CHECK(j.contains("time_objective"));
  CHECK(j.contains("time_update"));
  CHECK(equiv_report_csv({EquivReport{4, 0.0, 1e-12, 3, 5}}) ==
        "n_t,value_gap,grad_gap,positive_advantages,negative_advantages\n4,0,1e-12,3,5\n");
}

TEST_CASE("configuration loading") {
  const LabConfig d = load_config("");
  CHECK(d.train.objective.algorithm == Algorithm::bgpo);
  CHECK(d.train.objective.n_t == 4);
  CHECK(d.train.group_size == 8);
  CHECK(d.train.decode.total_passes() == 16);

  const fs::path ok = write_temp("ok.yaml",
                                 "version: 1\n"
                                 "seed: 9\n"
                                 "objective:\n  algorithm: vrpo_ol\n  n_t: 16\n"
                                 "train:\n  learning_rate: 0.001\n  optimizer: adam\n"
                                 "study:\n  grid: [1, 2]\n");
  const LabConfig c = load_config(ok);
  CHECK(c.seed == 9);
  CHECK(c.train.objective.algorithm == Algorithm::vrpo_ol);
  CHECK(c.train.objective.n_t == 16);
  CHECK(c.train.learning_rate == 0.001);
  CHECK(c.train.optimizer == OptimizerKind::adam);
  CHECK(c.study.grid == std::vector<std::size_t>{1, 2});

  const LabConfig o = load_config(ok, {"objective.n_t=2", "train.task=parity"});
  CHECK(o.train.objective.n_t == 2);
  CHECK(o.train.task == "parity");

  CHECK(error_key(write_temp("unknown.yaml", "version: 1\ntrain:\n  lerning_rate: 0.1\n")) ==
        "train.lerning_rate");
  CHECK(error_key(write_temp("top.yaml", "version: 1\nmodle: {}\n")) == "modle");
  CHECK(error_key(write_temp("type.yaml", "version: 1\nobjective:\n  n_t: many\n")) == "objective.n_t");
  CHECK(error_key(write_temp("neg.yaml", "version: 1\nobjective:\n  n_t: -3\n")) == "objective.n_t");
  CHECK(error_key(write_temp("alg.yaml", "version: 1\nobjective:\n  algorithm: ppo\n")) ==
        "objective.algorithm");
  CHECK(error_key(write_temp("noversion.yaml", "seed: 2\n")) == "version");
  CHECK(error_key(write_temp("v2.yaml", "version: 2\n")) == "version");
  CHECK(error_key(ok, {"objective.nt=2"}) == "objective.nt");
  CHECK(error_key(ok, {"objective=2"}) == "objective");

  try {
    load_config("/nonexistent/dir/lab.yaml");
    FAIL("missing file accepted");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("/nonexistent/dir/lab.yaml") != std::string::npos);
  }
}

TEST_CASE("default config text loads back to the defaults") {
  const fs::path p = write_temp("defaults.yaml", default_config_yaml());
  const LabConfig a = load_config(p);
  const LabConfig b = load_config("");
  CHECK(default_config_yaml() == default_config_yaml());
  CHECK(a.train.learning_rate == b.train.learning_rate);
  CHECK(a.train.objective.time.epsilon == b.train.objective.time.epsilon);
  CHECK(a.study.grid == b.study.grid);
  CHECK(a.oracle_draws == b.oracle_draws);
  CHECK(a.model.output_init_std == b.model.output_init_std);
}
