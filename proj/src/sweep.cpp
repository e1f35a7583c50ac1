#include "topiclm/sweep.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <ostream>

#include "topiclm/downstream.hpp"
#include "topiclm/trainer.hpp"

namespace topiclm {

namespace fs = std::filesystem;

namespace {

struct Setting {
  std::string name;
  RunConfig cfg;
};

std::vector<Setting> settings_for(const RunConfig& base, const std::string& axis) {
  std::vector<Setting> out;
  if (axis == "fusion_kind") {
    for (FusionKind kind : {FusionKind::kConcat, FusionKind::kAttention}) {
      RunConfig c = base;
      c.fusion.enabled = true;
      c.fusion.kind = kind;
      out.push_back({fusion_kind_name(kind), c});
    }
  } else if (axis == "fusion_layer") {
    const int n = base.model.num_layers;
    std::vector<int> layers{1, (n + 1) / 2, n};
    std::sort(layers.begin(), layers.end());
    layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
    for (int l : layers) {
      RunConfig c = base;
      c.fusion.enabled = true;
      c.fusion.layer_indices = {l};
      out.push_back({"layer" + std::to_string(l), c});
    }
  } else if (axis == "fusion_count") {
    for (int count = 1; count <= 3; ++count) {
      if (count > base.model.num_layers) break;
      RunConfig c = base;
      c.fusion.enabled = true;
      c.fusion.layer_indices.clear();
      for (int l = 1; l <= count; ++l) c.fusion.layer_indices.push_back(l);
      out.push_back({std::to_string(count) + "_modules", c});
    }
  } else if (axis == "ablation") {
    RunConfig full = base;
    full.fusion.enabled = true;
    out.push_back({"fusion_contrastive_on", full});
    RunConfig off = base;
    off.fusion.enabled = false;
    off.contrastive.weight = 0.0;
    out.push_back({"both_off", off});
  } else {
    throw ConfigError("sweep: unknown axis '" + axis + "' (expected fusion_kind, fusion_layer, "
                      "fusion_count or ablation)");
  }
  return out;
}

}  // namespace

SweepTable run_sweep(const RunConfig& base, const std::string& axis, int n_seeds) {
  if (n_seeds < 1) throw ConfigError("sweep: n_seeds must be >= 1");
  SweepTable table;
  table.axis = axis;
  const fs::path root = fs::path(base.paths.out_dir) / ("sweep_" + axis);
  for (const auto& setting : settings_for(base, axis)) {
    SweepRow row;
    row.setting = setting.name;
    for (int i = 0; i < n_seeds; ++i) {
      RunConfig cfg = setting.cfg;
      cfg.seed = base.seed + static_cast<std::uint64_t>(i);
      cfg.paths.out_dir = (root / setting.name / ("seed" + std::to_string(cfg.seed))).string();
      PretrainResult pre = pretrain(cfg);
      FinetuneOutcome fine = finetune(cfg, pre.checkpoint_path);
      SweepCell cell;
      cell.seed = cfg.seed;
      cell.micro_f1 = fine.overall.micro_f1;
      cell.ambiguous_f1 = fine.ambiguous.micro_f1;
      row.cells.push_back(cell);
      row.mean_f1 += cell.micro_f1;
    }
    row.mean_f1 /= static_cast<double>(n_seeds);
    table.rows.push_back(std::move(row));
  }
  write_sweep_table_file(table, (root / "table.tsv").string());
  return table;
}

void write_sweep_table(const SweepTable& table, std::ostream& out) {
  out << "axis\tsetting";
  if (!table.rows.empty())
    for (const auto& cell : table.rows.front().cells) out << "\tseed" << cell.seed;
  out << "\tmean_f1\n";
  out.precision(6);
  for (const auto& row : table.rows) {
    out << table.axis << "\t" << row.setting;
    for (const auto& cell : row.cells) out << "\t" << cell.micro_f1;
    out << "\t" << row.mean_f1 << "\n";
  }
}

void write_sweep_table_file(const SweepTable& table, const std::string& path) {
  fs::create_directories(fs::path(path).parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write sweep table '" + path + "'");
  write_sweep_table(table, out);
}

}  // namespace topiclm
