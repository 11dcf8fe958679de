#pragma once

// Run configuration and its key=value text form.
//
//   # comment
//   world.seed = 0
//   causal_attention = shared
//
// Unknown keys and malformed values raise ConfigError naming the key.

#include <map>
#include <string>
#include <vector>

#include "promptseg/decoder.hpp"
#include "promptseg/episodes.hpp"
#include "promptseg/evaluation.hpp"
#include "promptseg/objectives.hpp"

namespace promptseg {

enum class PromptInit { random, masked_pooling };

PromptInit parse_prompt_init(const std::string& name);
std::string to_string(PromptInit init);

struct RunConfig {
  WorldConfig world;
  ModelConfig model;

  int split = 0;
  std::size_t shots = 1;
  std::uint64_t seed = 0;
  std::size_t num_queries = 16;

  std::size_t base_iters = 200;
  std::size_t base_batch = 8;
  std::size_t base_train_size = 512;
  double base_lr = 1e-4;

  std::size_t finetune_iters = 100;
  double finetune_lr = 5e-3;
  double weight_decay = 0.05;

  PromptInit prompt_init = PromptInit::masked_pooling;
  bool train_base_prompts = true;
  double random_init_sigma = 0.02;

  TransductiveConfig trans;
  EvalOptions eval;

  void validate() const;
};

// Sets one key; throws ConfigError for unknown keys or bad values.
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);
// Parses `key = value` lines; '#' starts a comment.
void apply_config_text(RunConfig& cfg, const std::string& text);
RunConfig load_config_file(const std::string& path);

// Every key with its current value, one per line, in a fixed order.
std::string to_config_text(const RunConfig& cfg);
std::vector<std::string> config_keys();
// Hex digest of the canonical text form.
std::string config_digest(const RunConfig& cfg);

}  // namespace promptseg
