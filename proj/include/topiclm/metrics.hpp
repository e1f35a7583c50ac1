#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "topiclm/errors.hpp"

namespace topiclm {

struct StepMetrics {
  long step = 0;
  double l_plm = 0, l_aux = 0, l_contrastive = 0, lr = 0;
};

struct EvalRecord {
  std::string task;
  std::string split;
  double precision = 0, recall = 0, micro_f1 = 0;
  long instances = 0;
};

// Micro-averaged precision/recall/F1 from globally pooled counts.
struct MicroCounts {
  long tp = 0, fp = 0, fn = 0;

  void add(int predicted, int label) {
    if (predicted == label) {
      ++tp;
    } else {
      ++fp;
      ++fn;
    }
  }
  double precision() const { return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / (tp + fp); }
  double recall() const { return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / (tp + fn); }
  double micro_f1() const {
    const double p = precision(), r = recall();
    return p + r == 0 ? 0.0 : 2 * p * r / (p + r);
  }
};

struct MetricsLog {
  std::uint64_t seed = 0;  // run seed, recorded in every emitted artifact
  std::vector<StepMetrics> steps;
  std::vector<EvalRecord> evals;

  void add_step(StepMetrics m);
  void add_eval(EvalRecord e);
  void write_steps_csv(const std::string& path) const;
  void write_evals_csv(const std::string& path) const;
};

}  // namespace topiclm
