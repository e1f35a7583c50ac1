#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "topiclm/config.hpp"

namespace topiclm {

struct SweepCell {
  std::uint64_t seed = 0;
  double micro_f1 = 0;
  double ambiguous_f1 = 0;
};

struct SweepRow {
  std::string setting;
  std::vector<SweepCell> cells;
  double mean_f1 = 0;
};

struct SweepTable {
  std::string axis;
  std::vector<SweepRow> rows;
};

// Pretrain + fine-tune + evaluate per setting per seed, settings derived
// from the axis: fusion_kind {concat, attention}, fusion_layer {first, mid,
// last}, fusion_count {1, 2, 3 insertion points}, ablation {full model,
// fusion off with zero contrastive weight}. Seeds are base.seed + i and are
// shared across settings.
SweepTable run_sweep(const RunConfig& base, const std::string& axis, int n_seeds);

void write_sweep_table(const SweepTable& table, std::ostream& out);
void write_sweep_table_file(const SweepTable& table, const std::string& path);

}  // namespace topiclm
