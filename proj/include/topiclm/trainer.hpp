#pragma once

#include <string>
#include <vector>

#include "topiclm/config.hpp"
#include "topiclm/metrics.hpp"
#include "topiclm/model.hpp"

namespace topiclm {

struct PretrainResult {
  std::string checkpoint_path;
  MetricsLog log;
  double early_lplm_mean = 0;        // mean masked-word loss over the first 50 steps
  double final_lplm = 0;             // masked-word loss at the final step
  double final_entity_accuracy = 0;  // masked-entity accuracy over the last 50 steps
  long steps = 0;
};

// Deterministic pretraining loop: pair-preserving batches, masking, fusion
// between layers, masked-prediction and contrastive losses, AdamW with the
// linear-warmup-then-constant schedule. Checkpoints land under
// paths.out_dir; a non-finite loss aborts with the last good checkpoint
// retained on disk.
PretrainResult pretrain(const RunConfig& cfg);

// Shared across the harness: derived substream seeds.
namespace seeds {
constexpr std::uint64_t kInit = 1;
constexpr std::uint64_t kDropout = 2;
constexpr std::uint64_t kEpoch = 1000;
constexpr std::uint64_t kMask = 5000;
constexpr std::uint64_t kSplit = 404;
constexpr std::uint64_t kFinetuneEpoch = 900;
}  // namespace seeds

}  // namespace topiclm
