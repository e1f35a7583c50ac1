#include "topiclm/metrics.hpp"

#include <cmath>
#include <fstream>

namespace topiclm {

void MetricsLog::add_step(StepMetrics m) {
  if (!steps.empty() && m.step <= steps.back().step)
    throw ValidationError("metrics: step counter must strictly increase");
  for (double v : {m.l_plm, m.l_aux, m.l_contrastive, m.lr})
    if (!std::isfinite(v)) throw NumericError("metrics: non-finite value at step " + std::to_string(m.step));
  steps.push_back(m);
}

void MetricsLog::add_eval(EvalRecord e) {
  for (double v : {e.precision, e.recall, e.micro_f1})
    if (!std::isfinite(v)) throw NumericError("metrics: non-finite eval value");
  evals.push_back(e);
}

void MetricsLog::write_steps_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write metrics csv '" + path + "'");
  out << "step,l_plm,l_aux,l_contrastive,lr,seed\n";
  out.precision(10);
  for (const auto& m : steps)
    out << m.step << "," << m.l_plm << "," << m.l_aux << "," << m.l_contrastive << "," << m.lr
        << "," << seed << "\n";
}

void MetricsLog::write_evals_csv(const std::string& path) const {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw ConfigError("cannot write metrics csv '" + path + "'");
  out << "task,split,precision,recall,micro_f1,instances,seed\n";
  out.precision(10);
  for (const auto& e : evals)
    out << e.task << "," << e.split << "," << e.precision << "," << e.recall << "," << e.micro_f1
        << "," << e.instances << "," << seed << "\n";
}

}  // namespace topiclm
