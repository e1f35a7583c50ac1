#pragma once

#include <cstdint>
#include <string>

#include "topiclm/corpus.hpp"
#include "topiclm/encoder.hpp"
#include "topiclm/fusion.hpp"
#include "topiclm/objectives.hpp"
#include "topiclm/optim.hpp"
#include "topiclm/synth.hpp"

namespace topiclm {

struct PathsConfig {
  std::string corpus;
  std::string ground_truth_dir;
  std::string out_dir = "runs/default";
};

struct MaskingConfig {
  double word_rate = 0.15;
  double entity_rate = 0.6;
};

struct ScheduleConfig {
  int warmup_steps = 100;
  int total_steps = 1500;
  int batch_size = 16;
  int checkpoint_interval = 500;
};

struct FinetuneConfig {
  std::string task = "entity-typing";  // or "relation-cls"
  int epochs = 3;
  int batch_segments = 16;
  double eval_fraction = 0.2;
  bool ambiguous_eval_only = false;
  double learning_rate = 1e-3;
};

// Everything one run needs; the JSON config file mirrors these fields.
struct RunConfig {
  PathsConfig paths;
  ModelConfig model;
  FusionConfig fusion;
  ContrastiveConfig contrastive;
  MaskingConfig masking;
  OptimizerHyper optimizer;
  ScheduleConfig schedule;
  FinetuneConfig finetune;
  SynthSpec synth;
  std::uint64_t seed = 1;
  std::string mode;  // normally set by the CLI subcommand
};

RunConfig load_run_config(const std::string& path);
RunConfig run_config_from_json_text(const std::string& text);
std::string run_config_to_json_text(const RunConfig& cfg);

// Checkpoint metadata block: config snapshot, seed, step counter and the
// vocabulary tables, as one JSON document.
std::string make_checkpoint_metadata(const RunConfig& cfg, const Vocab& vocab,
                                     std::uint64_t seed, long step);

struct CheckpointMetadata {
  RunConfig cfg;
  Vocab vocab;
  std::uint64_t seed = 0;
  long step = 0;
};

CheckpointMetadata parse_checkpoint_metadata(const std::string& text);

// The warmup-then-constant learning rate schedule: at 1-based step s the
// learning rate is lr * s / warmup_steps while s < warmup_steps, lr after.
double scheduled_lr(double lr, long step, int warmup_steps);

}  // namespace topiclm
