#pragma once

#include <set>
#include <string>
#include <vector>

#include "topiclm/config.hpp"
#include "topiclm/metrics.hpp"
#include "topiclm/model.hpp"

namespace topiclm {

// One downstream example: a mention to type, or an ordered mention pair to
// classify. mention_b < 0 marks a typing instance.
struct TaskInstance {
  int segment = 0;
  int mention_a = 0;
  int mention_b = -1;
  int label = 0;
  bool ambiguous = false;  // the queried mention's surface form has >= 2 readings
};

struct TaskData {
  std::string task;
  std::vector<std::string> label_names;
  std::vector<TaskInstance> train;  // ambiguous-surface-form mentions excluded
  std::vector<TaskInstance> eval;
  std::set<std::string> eval_pages;
};

// Builds instances from the ground-truth sidecar tables and splits them by
// page (deterministic in the config seed). Typing heads train only on
// unambiguous mentions, so evaluation on ambiguous ones probes what the
// pretrained entity representations carry rather than label memorization.
TaskData build_task_data(const RunConfig& cfg, const std::vector<Segment>& segments,
                         const Vocab& vocab);

struct EvalSummary {
  double precision = 0, recall = 0, micro_f1 = 0;
  long instances = 0;
};

struct FinetuneOutcome {
  std::string checkpoint_path;
  MetricsLog log;
  EvalSummary overall;
  EvalSummary ambiguous;  // typing restricted to ambiguous surface forms
};

// Fine-tunes a pretrained checkpoint on the configured task with the fusion
// module discarded and a fresh zero-initialized linear head, then evaluates
// on the held-out pages.
FinetuneOutcome finetune(const RunConfig& cfg, const std::string& pretrained_path);

// Evaluates an already fine-tuned checkpoint (one that carries head tensors)
// on the held-out split recorded in its config snapshot.
EvalSummary evaluate_checkpoint(const std::string& finetuned_path);

}  // namespace topiclm
