// Command-line front end for the laboratory.
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "bgpo/checkpoint.hpp"
#include "bgpo/config.hpp"

using namespace bgpo;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> alg;
  std::string nt;
};

std::vector<std::size_t> parse_list(const std::string& text, const std::string& flag) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(item, &used);
      if (used != item.size() || v == 0) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ConfigError(flag, "expected a comma-separated list of positive integers, got '" + text + "'");
    }
  }
  if (out.empty()) throw ConfigError(flag, "empty list");
  return out;
}

LabConfig load(const Common& c) {
  std::vector<std::string> sets = c.sets;
  if (c.seed) sets.push_back("seed=" + std::to_string(*c.seed));
  if (c.alg) sets.push_back("objective.algorithm=" + *c.alg);
  return load_config(c.config, sets);
}

void write(const Common& c, const std::string& text) {
  if (c.out.empty()) {
    std::cout << text;
    return;
  }
  std::ofstream f(c.out, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + c.out);
  f << text;
}

void add_common(CLI::App* app, Common& c, bool with_alg, bool with_nt) {
  app->add_option("--config", c.config, "YAML config file");
  app->add_option("--set", c.sets, "Override, e.g. --set train.iterations=10");
  app->add_option("--out", c.out, "Report path (default: stdout)");
  app->add_option("--seed", c.seed, "Master seed");
  if (with_alg) app->add_option("--alg", c.alg, "bgpo | vrpo_ol | diffu_grpo");
  if (with_nt) app->add_option("--nt", c.nt, "Comma-separated n_t values");
}

int run_train(const Common& c, const std::string& init, const std::string& save,
              const std::string& metrics) {
  LabConfig cfg = load(c);
  if (!c.nt.empty()) {
    const auto v = parse_list(c.nt, "--nt");
    if (v.size() != 1) throw ConfigError("--nt", "train takes a single n_t");
    cfg.train.objective.n_t = v[0];
  }
  const Vocabulary& vocab = Vocabulary::standard();
  MaskPredictor model = init.empty() ? MaskPredictor(cfg.model, cfg.model_seed)
                                     : load_checkpoint(init, vocab);
  model = pretrain_format(cfg.pretrain, cfg.train.task, cfg.train.decode, cfg.seed, std::move(model));
  std::ofstream mf;
  if (!metrics.empty()) {
    mf.open(metrics, std::ios::binary | std::ios::trunc);
    if (!mf) throw std::runtime_error("cannot write " + metrics);
  }
  std::string report = train_report_header();
  model = train(cfg.train, std::move(model), [&](const StepMetrics& m) {
    report += train_report_row(m);
    if (mf) mf << metrics_jsonl(m) << std::flush;
  });
  if (!save.empty()) save_checkpoint(model, vocab, save);
  write(c, report);
  return 0;
}

int run_eval(const Common& c, const std::string& checkpoint, std::size_t prompts) {
  const LabConfig cfg = load(c);
  const MaskPredictor model = checkpoint.empty() ? MaskPredictor(cfg.model, cfg.model_seed)
                                                 : load_checkpoint(checkpoint, Vocabulary::standard());
  const double r = evaluate(model, cfg.train.task, prompts, cfg.seed, cfg.train.decode);
  write(c, "task,prompts,mean_reward\n" + cfg.train.task + "," + std::to_string(prompts) + "," +
               format_number(r) + "\n");
  return 0;
}

int run_grad(const Common& c, bool bias) {
  LabConfig cfg = load(c);
  if (!c.nt.empty()) cfg.study.grid = parse_list(c.nt, "--nt");
  try {
    cfg.study.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("study", e.what());
  }
  const FrozenBatch batch = make_frozen_batch(cfg.batch);
  const GradReport rep = bias ? grad_bias_study(cfg.study, cfg.train.objective, batch)
                              : grad_std_study(cfg.study, cfg.train.objective, batch);
  write(c, grad_report_csv(rep, bias));
  return 0;
}

int run_mem(const Common& c) {
  const LabConfig cfg = load(c);
  const auto grid = c.nt.empty() ? cfg.memory_grid : parse_list(c.nt, "--nt");
  write(c, mem_report_csv(mem_profile(cfg.train.objective.algorithm, grid, cfg.model,
                                      cfg.train.decode.response_length, cfg.seed)));
  return 0;
}

int run_equiv(const Common& c, std::optional<double> perturb) {
  const LabConfig cfg = load(c);
  const auto grid = c.nt.empty() ? cfg.equiv_grid : parse_list(c.nt, "--nt");
  const FrozenBatch batch = make_frozen_batch(cfg.batch);
  std::vector<EquivReport> rows;
  for (std::size_t n : grid) {
    rows.push_back(equivalence_check(batch, n, cfg.seed, perturb.value_or(cfg.equiv_perturb)));
  }
  write(c, equiv_report_csv(rows));
  return 0;
}

int run_oracle(const Common& c) {
  const LabConfig cfg = load(c);
  TimeSampling ts = cfg.train.objective.time;
  write(c, oracle_report_csv(
               elbo_oracle_check(cfg.model, cfg.model_seed, cfg.oracle_lengths, cfg.oracle_draws, ts)));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Boundary-guided policy optimization laboratory"};
  app.require_subcommand(1);

  Common train_c, eval_c, stats_c, bias_c, mem_c, equiv_c, oracle_c, show_c;
  std::string init, save, metrics, checkpoint;
  std::size_t eval_prompts = 64;
  std::optional<double> perturb;

  auto* train_cmd = app.add_subcommand("train", "Run the RL training loop");
  add_common(train_cmd, train_c, true, true);
  train_cmd->add_option("--init", init, "Start from this checkpoint");
  train_cmd->add_option("--save", save, "Write the final checkpoint here");
  train_cmd->add_option("--metrics", metrics, "Per-iteration JSON lines, timings included");

  auto* eval_cmd = app.add_subcommand("eval", "Greedy evaluation on held-out prompts");
  add_common(eval_cmd, eval_c, false, false);
  eval_cmd->add_option("--checkpoint", checkpoint, "Checkpoint to evaluate (default: fresh init)");
  eval_cmd->add_option("--prompts", eval_prompts, "Number of prompts")->check(CLI::PositiveNumber);

  auto* stats_cmd = app.add_subcommand("grad-stats", "Gradient std across repeats per n_t");
  add_common(stats_cmd, stats_c, true, true);
  auto* bias_cmd = app.add_subcommand("grad-bias", "Gradient bias against the golden gradient");
  add_common(bias_cmd, bias_c, true, true);
  auto* mem_cmd = app.add_subcommand("mem-profile", "Peak live graph nodes per n_t");
  add_common(mem_cmd, mem_c, true, true);
  auto* equiv_cmd = app.add_subcommand("equiv-check", "On-policy value and gradient gaps");
  add_common(equiv_cmd, equiv_c, false, true);
  equiv_cmd->add_option("--perturb", perturb, "Std of noise added to the old policy");
  auto* oracle_cmd = app.add_subcommand("oracle-check", "Monte-Carlo ELBO against the exact ELBO");
  add_common(oracle_cmd, oracle_c, false, false);
  auto* show_cmd = app.add_subcommand("default-config", "Print the default configuration as YAML");
  show_cmd->add_option("--out", show_c.out, "Output path (default: stdout)");

  if (argc > 1 && argv[1][0] != '-') {
    const std::string name = argv[1];
    const auto subs = app.get_subcommands([&](CLI::App* sub) { return sub->get_name() == name; });
    if (subs.empty()) {
      std::cerr << "unknown subcommand '" << name << "'; run with --help for the list\n";
      return 2;
    }
  }
  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) return run_train(train_c, init, save, metrics);
    if (*eval_cmd) return run_eval(eval_c, checkpoint, eval_prompts);
    if (*stats_cmd) return run_grad(stats_c, false);
    if (*bias_cmd) return run_grad(bias_c, true);
    if (*mem_cmd) return run_mem(mem_c);
    if (*equiv_cmd) return run_equiv(equiv_c, perturb);
    if (*oracle_cmd) return run_oracle(oracle_c);
    if (*show_cmd) {
      write(show_c, default_config_yaml());
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
