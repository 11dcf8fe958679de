#include "promptseg/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

namespace promptseg {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

// Shortest %g form that reads back to the same double.
std::string fmt_double(double v) {
  char buf[64];
  for (int digits = 6; digits <= 17; ++digits) {
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    T out{};
    if constexpr (std::is_same_v<T, double>) {
      out = std::stod(v, &used);
    } else if constexpr (std::is_same_v<T, int>) {
      out = std::stoi(v, &used);
    } else {
      if (!v.empty() && v[0] == '-') throw std::invalid_argument("negative");
      out = static_cast<T>(std::stoull(v, &used));
    }
    if (used != v.size()) throw std::invalid_argument("trailing");
    return out;
  } catch (const std::exception&) {
    throw ConfigError("bad value '" + v + "' for key '" + key + "'");
  }
}

bool parse_flag(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("bad boolean '" + v + "' for key '" + key + "'");
}

template <typename T>
Field number(const std::string& key, T RunConfig::*member) {
  return {[key, member](RunConfig& c, const std::string& v) { c.*member = parse_number<T>(key, v); },
          [member](const RunConfig& c) {
            if constexpr (std::is_same_v<T, double>) return fmt_double(c.*member);
            else return std::to_string(c.*member);
          }};
}

template <typename T, typename Owner>
Field nested(const std::string& key, Owner RunConfig::*owner, T Owner::*member) {
  return {[key, owner, member](RunConfig& c, const std::string& v) { (c.*owner).*member = parse_number<T>(key, v); },
          [owner, member](const RunConfig& c) {
            if constexpr (std::is_same_v<T, double>) return fmt_double((c.*owner).*member);
            else return std::to_string((c.*owner).*member);
          }};
}

template <typename Owner>
Field nested_flag(const std::string& key, Owner RunConfig::*owner, bool Owner::*member) {
  return {[key, owner, member](RunConfig& c, const std::string& v) { (c.*owner).*member = parse_flag(key, v); },
          [owner, member](const RunConfig& c) { return std::string((c.*owner).*member ? "true" : "false"); }};
}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> t;
    auto add = [&](const std::string& k, Field f) { t.emplace_back(k, std::move(f)); };
    add("world.seed", nested("world.seed", &RunConfig::world, &WorldConfig::seed));
    add("world.classes", nested("world.classes", &RunConfig::world, &WorldConfig::num_classes));
    add("world.height", nested("world.height", &RunConfig::world, &WorldConfig::height));
    add("world.width", nested("world.width", &RunConfig::world, &WorldConfig::width));
    add("world.pyramid_levels", nested("world.pyramid_levels", &RunConfig::world, &WorldConfig::pyramid_levels));
    add("world.noise_sigma", nested("world.noise_sigma", &RunConfig::world, &WorldConfig::noise_sigma));
    add("world.cos_ceiling", nested("world.cos_ceiling", &RunConfig::world, &WorldConfig::cos_ceiling));
    add("world.novel_per_split", nested("world.novel_per_split", &RunConfig::world, &WorldConfig::novel_per_split));
    add("world.splits", nested("world.splits", &RunConfig::world, &WorldConfig::num_splits));
    add("world.support_extras",
        nested("world.support_extras", &RunConfig::world, &WorldConfig::support_max_extras));
    add("embed_dim", {[](RunConfig& c, const std::string& v) {
                        c.model.embed_dim = c.world.embed_dim = parse_number<std::size_t>("embed_dim", v);
                      },
                      [](const RunConfig& c) { return std::to_string(c.model.embed_dim); }});
    add("layers", nested("layers", &RunConfig::model, &ModelConfig::layers));
    add("heads", nested("heads", &RunConfig::model, &ModelConfig::heads));
    add("activation", {[](RunConfig& c, const std::string& v) { c.model.activation = ops::parse_activation(v); },
                       [](const RunConfig& c) { return ops::to_string(c.model.activation); }});
    add("layer_norm", nested_flag("layer_norm", &RunConfig::model, &ModelConfig::layer_norm));
    add("cycle_levels", nested_flag("cycle_levels", &RunConfig::model, &ModelConfig::cycle_levels));
    add("causal_attention", {[](RunConfig& c, const std::string& v) { c.model.causal = parse_causal_mode(v); },
                             [](const RunConfig& c) { return to_string(c.model.causal); }});
    add("causal_residual", nested_flag("causal_residual", &RunConfig::model, &ModelConfig::causal_residual));
    add("split", number("split", &RunConfig::split));
    add("shots", number("shots", &RunConfig::shots));
    add("seed", number("seed", &RunConfig::seed));
    add("queries", number("queries", &RunConfig::num_queries));
    add("base.iters", number("base.iters", &RunConfig::base_iters));
    add("base.batch", number("base.batch", &RunConfig::base_batch));
    add("base.train_size", number("base.train_size", &RunConfig::base_train_size));
    add("base.lr", number("base.lr", &RunConfig::base_lr));
    add("finetune.iters", number("finetune.iters", &RunConfig::finetune_iters));
    add("finetune.lr", number("finetune.lr", &RunConfig::finetune_lr));
    add("weight_decay", number("weight_decay", &RunConfig::weight_decay));
    add("prompt_init", {[](RunConfig& c, const std::string& v) { c.prompt_init = parse_prompt_init(v); },
                        [](const RunConfig& c) { return to_string(c.prompt_init); }});
    add("train_base_prompts", {[](RunConfig& c, const std::string& v) {
                                 c.train_base_prompts = parse_flag("train_base_prompts", v);
                               },
                               [](const RunConfig& c) { return std::string(c.train_base_prompts ? "true" : "false"); }});
    add("random_init_sigma", number("random_init_sigma", &RunConfig::random_init_sigma));
    add("trans.alpha", nested("trans.alpha", &RunConfig::trans, &TransductiveConfig::alpha));
    add("trans.gamma", nested("trans.gamma", &RunConfig::trans, &TransductiveConfig::gamma));
    add("trans.ce_only_iters", nested("trans.ce_only_iters", &RunConfig::trans, &TransductiveConfig::ce_only_iters));
    add("trans.full_iters", nested("trans.full_iters", &RunConfig::trans, &TransductiveConfig::full_iters));
    add("trans.prior", {[](RunConfig& c, const std::string& v) { c.trans.prior_mode = parse_prior_mode(v); },
                        [](const RunConfig& c) { return to_string(c.trans.prior_mode); }});
    add("eval.background_in_base",
        nested_flag("eval.background_in_base", &RunConfig::eval, &EvalOptions::background_in_base));
    return t;
  }();
  return table;
}

}  // namespace

PromptInit parse_prompt_init(const std::string& name) {
  if (name == "random") return PromptInit::random;
  if (name == "masked-pooling") return PromptInit::masked_pooling;
  throw ConfigError("unknown prompt init '" + name + "' (random|masked-pooling)");
}

std::string to_string(PromptInit init) { return init == PromptInit::random ? "random" : "masked-pooling"; }

void RunConfig::validate() const {
  if (model.embed_dim != world.embed_dim) throw ConfigError("model and world embedding dims differ");
  if (model.heads == 0 || model.embed_dim % model.heads) throw ConfigError("heads must divide embed_dim");
  if (shots == 0) throw ConfigError("shots must be positive");
  if (base_batch == 0 || base_train_size == 0) throw ConfigError("base batch and train size must be positive");
  if (split < 0 || static_cast<std::size_t>(split) >= world.num_splits) throw ConfigError("split out of range");
  if (!model.cycle_levels && model.layers > world.pyramid_levels) {
    throw ConfigError("more decoder layers than pyramid levels with cycle_levels=false");
  }
  trans.validate();
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& [k, f] : fields()) {
    if (k == key) {
      f.set(cfg, trim(value));
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void apply_config_text(RunConfig& cfg, const std::string& text) {
  std::istringstream is(text);
  std::string line;
  for (std::size_t n = 1; std::getline(is, line); ++n) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(n) + ": expected key = value");
    apply_setting(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  RunConfig cfg;
  apply_config_text(cfg, ss.str());
  return cfg;
}

std::string to_config_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, f] : fields()) out += k + " = " + f.get(cfg) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, f] : fields()) keys.push_back(k);
  return keys;
}

std::string config_digest(const RunConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : to_config_text(cfg)) h = (h ^ ch) * 0x100000001b3ull;
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace promptseg
