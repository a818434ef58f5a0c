#include "bgpo/config.hpp"

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace bgpo {

namespace {

using Json = nlohmann::ordered_json;

std::string confidence_name(Confidence c) {
  switch (c) {
    case Confidence::sampled_prob:
      return "sampled_prob";
    case Confidence::max_prob:
      return "max_prob";
    case Confidence::neg_entropy:
      return "neg_entropy";
  }
  return "?";
}

Json defaults_json() {
  const LabConfig c;
  Json j;
  j["version"] = kConfigVersion;
  j["seed"] = c.seed;
  j["model"] = {{"vocab_size", c.model.vocab_size},
                {"embed_dim", c.model.embed_dim},
                {"depth", c.model.depth},
                {"ffn_dim", c.model.ffn_dim},
                {"context_length", c.model.context_length},
                {"output_init_std", c.model.output_init_std},
                {"seed", c.model_seed}};
  const DecodeConfig& d = c.train.decode;
  j["decode"] = {{"response_length", d.response_length},
                 {"block_size", d.block_size},
                 {"steps_per_block", d.steps_per_block},
                 {"temperature", d.temperature},
                 {"confidence", confidence_name(d.confidence)}};
  const ObjectiveConfig& o = c.train.objective;
  j["objective"] = {{"algorithm", std::string(to_string(o.algorithm))},
                    {"n_t", o.n_t},
                    {"t_epsilon", o.time.epsilon},
                    {"stratified_t", o.time.stratified},
                    {"prompt_mask_prob", o.prompt_mask_prob},
                    {"clip", o.clip}};
  const TrainConfig& t = c.train;
  j["train"] = {{"task", t.task},
                {"iterations", t.iterations},
                {"batch_size", t.batch_size},
                {"group_size", t.group_size},
                {"learning_rate", t.learning_rate},
                {"optimizer", "sgd"},
                {"precision", "double"},
                {"partial_credit", t.reward.partial_credit},
                {"eval_every", t.eval_every},
                {"eval_prompts", t.eval_prompts},
                {"adam_beta1", t.adam.beta1},
                {"adam_beta2", t.adam.beta2},
                {"adam_eps", t.adam.eps}};
  j["pretrain"] = {{"steps", c.pretrain.steps},
                   {"batch_size", c.pretrain.batch_size},
                   {"n_t", c.pretrain.n_t},
                   {"learning_rate", c.pretrain.learning_rate},
                   {"shuffle", c.pretrain.shuffle}};
  j["study"] = {{"task", c.batch.task},
                {"prompts", c.batch.prompts},
                {"group_size", c.batch.group_size},
                {"rewards", "random"},
                {"repeats", c.study.repeats},
                {"grid", c.study.grid},
                {"golden_n_t", c.study.golden_n_t},
                {"eps_p", c.study.eps_p}};
  j["memory"] = {{"grid", c.memory_grid}};
  j["equiv"] = {{"grid", c.equiv_grid}, {"perturb", c.equiv_perturb}};
  j["oracle"] = {{"lengths", c.oracle_lengths}, {"draws", c.oracle_draws}};
  return j;
}

Json scalar_as(const YAML::Node& node, const Json& like, const std::string& key) {
  if (!node.IsScalar()) throw ConfigError(key, "expected a single value");
  try {
    if (like.is_boolean()) return node.as<bool>();
    if (like.is_number_unsigned() || like.is_number_integer()) {
      const std::string s = node.Scalar();
      if (!s.empty() && s[0] == '-') throw ConfigError(key, "must be a non-negative integer");
      return node.as<std::uint64_t>();
    }
    if (like.is_number_float()) return node.as<double>();
    if (like.is_string()) return node.as<std::string>();
  } catch (const YAML::Exception&) {
    throw ConfigError(key, "cannot read value '" + node.Scalar() + "'");
  }
  throw ConfigError(key, "unsupported value type");
}

Json value_as(const YAML::Node& node, const Json& like, const std::string& key) {
  if (like.is_array()) {
    if (!node.IsSequence()) throw ConfigError(key, "expected a list");
    Json out = Json::array();
    for (std::size_t i = 0; i < node.size(); ++i) {
      out.push_back(scalar_as(node[i], Json(std::uint64_t{0}), key + "[" + std::to_string(i) + "]"));
    }
    return out;
  }
  return scalar_as(node, like, key);
}

void merge(Json& target, const YAML::Node& node, const std::string& prefix) {
  if (!node.IsMap()) throw ConfigError(prefix, "expected a mapping");
  for (const auto& kv : node) {
    const std::string name = kv.first.as<std::string>();
    const std::string key = prefix.empty() ? name : prefix + "." + name;
    if (!target.contains(name)) throw ConfigError(key, "unknown key");
    Json& slot = target[name];
    if (slot.is_object()) {
      merge(slot, kv.second, key);
    } else {
      slot = value_as(kv.second, slot, key);
    }
  }
}

void apply_override(Json& root, const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError(text, "override must look like key.path=value");
  }
  const std::string key = text.substr(0, eq);
  const std::string value = text.substr(eq + 1);
  Json* slot = &root;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
    if (!slot->is_object() || !slot->contains(part)) throw ConfigError(key, "unknown key");
    slot = &(*slot)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (slot->is_object()) throw ConfigError(key, "is a section, not a value");
  YAML::Node node;
  try {
    node = YAML::Load(value);
  } catch (const YAML::Exception& e) {
    throw ConfigError(key, std::string("cannot parse value: ") + e.what());
  }
  if (slot->is_string() && !node.IsScalar()) node = YAML::Node(value);
  *slot = value_as(node, *slot, key);
}

template <class F>
void checked(const std::string& section, F&& f) {
  try {
    f();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(section, e.what());
  }
}

std::vector<std::size_t> sizes(const Json& j) {
  std::vector<std::size_t> out;
  for (const auto& v : j) out.push_back(v.get<std::size_t>());
  return out;
}

LabConfig extract(const Json& j) {
  LabConfig c;
  if (j["version"].get<int>() != kConfigVersion) {
    throw ConfigError("version", "unsupported config version " + j["version"].dump());
  }
  c.seed = j["seed"].get<std::uint64_t>();

  const Json& m = j["model"];
  c.model.vocab_size = m["vocab_size"].get<std::size_t>();
  c.model.embed_dim = m["embed_dim"].get<std::size_t>();
  c.model.depth = m["depth"].get<std::size_t>();
  c.model.ffn_dim = m["ffn_dim"].get<std::size_t>();
  c.model.context_length = m["context_length"].get<std::size_t>();
  c.model.output_init_std = m["output_init_std"].get<double>();
  c.model_seed = m["seed"].get<std::uint64_t>();
  checked("model", [&] { c.model.validate(); });
  if (c.model.vocab_size != Vocabulary::standard().size()) {
    throw ConfigError("model.vocab_size", "must equal the vocabulary size " +
                                              std::to_string(Vocabulary::standard().size()));
  }

  const Json& d = j["decode"];
  DecodeConfig& dc = c.train.decode;
  dc.response_length = d["response_length"].get<std::size_t>();
  dc.block_size = d["block_size"].get<std::size_t>();
  dc.steps_per_block = d["steps_per_block"].get<std::size_t>();
  dc.temperature = d["temperature"].get<double>();
  const std::string conf = d["confidence"].get<std::string>();
  if (conf == "sampled_prob") {
    dc.confidence = Confidence::sampled_prob;
  } else if (conf == "max_prob") {
    dc.confidence = Confidence::max_prob;
  } else if (conf == "neg_entropy") {
    dc.confidence = Confidence::neg_entropy;
  } else {
    throw ConfigError("decode.confidence", "expected sampled_prob, max_prob or neg_entropy");
  }
  checked("decode", [&] { dc.validate(); });

  const Json& o = j["objective"];
  ObjectiveConfig& oc = c.train.objective;
  try {
    oc.algorithm = parse_algorithm(o["algorithm"].get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw ConfigError("objective.algorithm", e.what());
  }
  oc.n_t = o["n_t"].get<std::size_t>();
  oc.time.epsilon = o["t_epsilon"].get<double>();
  oc.time.stratified = o["stratified_t"].get<bool>();
  oc.prompt_mask_prob = o["prompt_mask_prob"].get<double>();
  oc.clip = o["clip"].get<double>();
  checked("objective", [&] { oc.validate(); });

  const Json& t = j["train"];
  TrainConfig& tc = c.train;
  tc.seed = c.seed;
  tc.task = t["task"].get<std::string>();
  tc.iterations = t["iterations"].get<std::size_t>();
  tc.batch_size = t["batch_size"].get<std::size_t>();
  tc.group_size = t["group_size"].get<std::size_t>();
  tc.learning_rate = t["learning_rate"].get<double>();
  const std::string opt = t["optimizer"].get<std::string>();
  if (opt == "sgd") {
    tc.optimizer = OptimizerKind::sgd;
  } else if (opt == "adam") {
    tc.optimizer = OptimizerKind::adam;
  } else {
    throw ConfigError("train.optimizer", "expected sgd or adam");
  }
  const std::string prec = t["precision"].get<std::string>();
  if (prec == "double") {
    tc.precision = Precision::double_;
  } else if (prec == "single") {
    tc.precision = Precision::single;
  } else {
    throw ConfigError("train.precision", "expected double or single");
  }
  tc.reward.partial_credit = t["partial_credit"].get<bool>();
  tc.eval_every = t["eval_every"].get<std::size_t>();
  tc.eval_prompts = t["eval_prompts"].get<std::size_t>();
  tc.adam.beta1 = t["adam_beta1"].get<double>();
  tc.adam.beta2 = t["adam_beta2"].get<double>();
  tc.adam.eps = t["adam_eps"].get<double>();
  checked("train", [&] { tc.validate(); });
  if (c.model.context_length < 16 + dc.response_length) {
    throw ConfigError("model.context_length", "too short for prompt plus response");
  }

  const Json& p = j["pretrain"];
  c.pretrain.steps = p["steps"].get<std::size_t>();
  c.pretrain.batch_size = p["batch_size"].get<std::size_t>();
  c.pretrain.n_t = p["n_t"].get<std::size_t>();
  c.pretrain.learning_rate = p["learning_rate"].get<double>();
  c.pretrain.shuffle = p["shuffle"].get<bool>();
  if (c.pretrain.batch_size == 0 || c.pretrain.n_t == 0) {
    throw ConfigError("pretrain", "batch_size and n_t must be >= 1");
  }

  const Json& s = j["study"];
  FrozenBatchConfig& bc = c.batch;
  bc.model = c.model;
  bc.model_seed = c.model_seed;
  bc.decode = dc;
  bc.seed = c.seed;
  bc.task = s["task"].get<std::string>();
  try {
    Rng probe(0);
    gen_instance(bc.task, probe);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("study.task", e.what());
  }
  bc.prompts = s["prompts"].get<std::size_t>();
  bc.group_size = s["group_size"].get<std::size_t>();
  const std::string rewards = s["rewards"].get<std::string>();
  if (rewards == "random") {
    bc.rewards = RewardSource::random;
  } else if (rewards == "task") {
    bc.rewards = RewardSource::task;
  } else {
    throw ConfigError("study.rewards", "expected random or task");
  }
  if (bc.prompts == 0 || bc.group_size < 2) {
    throw ConfigError("study", "prompts must be >= 1 and group_size >= 2");
  }
  c.study.repeats = s["repeats"].get<std::size_t>();
  c.study.grid = sizes(s["grid"]);
  c.study.golden_n_t = s["golden_n_t"].get<std::size_t>();
  c.study.eps_p = s["eps_p"].get<double>();
  c.study.seed = c.seed;
  checked("study", [&] { c.study.validate(); });

  c.memory_grid = sizes(j["memory"]["grid"]);
  c.equiv_grid = sizes(j["equiv"]["grid"]);
  c.equiv_perturb = j["equiv"]["perturb"].get<double>();
  c.oracle_lengths = sizes(j["oracle"]["lengths"]);
  c.oracle_draws = j["oracle"]["draws"].get<std::size_t>();
  for (const auto& [key, grid] : {std::pair{"memory.grid", &c.memory_grid},
                                  std::pair{"equiv.grid", &c.equiv_grid}}) {
    if (grid->empty()) throw ConfigError(key, "must not be empty");
    for (std::size_t n : *grid) {
      if (n == 0) throw ConfigError(key, "entries must be >= 1");
    }
  }
  for (std::size_t n : c.oracle_lengths) {
    if (n == 0 || n > kExactElboMaxLen) {
      throw ConfigError("oracle.lengths", "entries must lie in 1.." + std::to_string(kExactElboMaxLen));
    }
  }
  if (c.oracle_draws < 2) throw ConfigError("oracle.draws", "must be >= 2");
  return c;
}

void emit(YAML::Emitter& out, const Json& j) {
  if (j.is_object()) {
    out << YAML::BeginMap;
    for (const auto& [k, v] : j.items()) {
      out << YAML::Key << k << YAML::Value;
      emit(out, v);
    }
    out << YAML::EndMap;
  } else if (j.is_array()) {
    out << YAML::Flow << YAML::BeginSeq;
    for (const auto& v : j) emit(out, v);
    out << YAML::EndSeq;
  } else if (j.is_string()) {
    out << j.get<std::string>();
  } else if (j.is_boolean()) {
    out << j.get<bool>();
  } else if (j.is_number_float()) {
    out << format_number(j.get<double>());
  } else {
    out << j.get<std::uint64_t>();
  }
}

}  // namespace

LabConfig load_config(const std::filesystem::path& path,
                      const std::vector<std::string>& overrides) {
  Json j = defaults_json();
  if (!path.empty()) {
    if (!std::filesystem::exists(path)) {
      throw ConfigError("", "config file not found: " + path.string());
    }
    YAML::Node root;
    try {
      root = YAML::LoadFile(path.string());
    } catch (const YAML::Exception& e) {
      throw ConfigError("", path.string() + ": " + e.what());
    }
    if (root.IsNull()) root = YAML::Node(YAML::NodeType::Map);
    if (!root.IsMap()) throw ConfigError("", path.string() + ": top level must be a mapping");
    if (!root["version"]) throw ConfigError("version", "missing (expected " + std::to_string(kConfigVersion) + ")");
    merge(j, root, "");
  }
  for (const auto& o : overrides) apply_override(j, o);
  return extract(j);
}

std::string default_config_yaml() {
  YAML::Emitter out;
  emit(out, defaults_json());
  return std::string(out.c_str()) + "\n";
}

}  // namespace bgpo
