#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "topiclm/errors.hpp"
#include "topiclm/tensor.hpp"

namespace topiclm {

struct OptimizerHyper {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

// Named parameter list shared by the optimizer and the checkpoint writer.
template <class S>
using NamedParams = std::vector<std::pair<std::string, Tensor<S>>>;

// AdamW with decoupled weight decay. Moments are keyed by parameter name so
// the state can round-trip through checkpoints.
template <class S>
class AdamW {
 public:
  struct Slot {
    std::vector<S> m, v;
  };

  explicit AdamW(OptimizerHyper hp) : hp_(hp) {}

  const OptimizerHyper& hyper() const { return hp_; }
  long step_count() const { return step_; }
  void set_step_count(long s) { step_ = s; }

  std::map<std::string, Slot>& slots() { return slots_; }

  // One update over all parameters with the scheduler-effective learning
  // rate. learning_rate == 0 leaves parameters unchanged.
  void step(NamedParams<S>& params, double lr) {
    ++step_;
    const double bc1 = 1.0 - std::pow(hp_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(hp_.beta2, static_cast<double>(step_));
    for (auto& [name, p] : params) {
      auto& slot = slots_[name];
      if (slot.m.empty()) {
        slot.m.assign(static_cast<std::size_t>(p.numel()), S(0));
        slot.v.assign(static_cast<std::size_t>(p.numel()), S(0));
      }
      if (static_cast<long>(slot.m.size()) != p.numel())
        throw ShapeError("adamw: state for '" + name + "' has " + std::to_string(slot.m.size()) +
                         " entries, parameter has " + std::to_string(p.numel()));
      const auto& g = p.grad_or_empty();
      if (!g.empty() && static_cast<long>(g.size()) != p.numel())
        throw ShapeError("adamw: gradient shape mismatch for '" + name + "'");
      S* val = p.data();
      const long n = p.numel();
      for (long i = 0; i < n; ++i) {
        const double gi = g.empty() ? 0.0 : static_cast<double>(g[static_cast<std::size_t>(i)]);
        double m = hp_.beta1 * static_cast<double>(slot.m[static_cast<std::size_t>(i)]) +
                   (1.0 - hp_.beta1) * gi;
        double v = hp_.beta2 * static_cast<double>(slot.v[static_cast<std::size_t>(i)]) +
                   (1.0 - hp_.beta2) * gi * gi;
        slot.m[static_cast<std::size_t>(i)] = static_cast<S>(m);
        slot.v[static_cast<std::size_t>(i)] = static_cast<S>(v);
        const double mhat = m / bc1;
        const double vhat = v / bc2;
        const double upd = mhat / (std::sqrt(vhat) + hp_.epsilon) +
                           hp_.weight_decay * static_cast<double>(val[i]);
        val[i] = static_cast<S>(static_cast<double>(val[i]) - lr * upd);
      }
    }
  }

 private:
  OptimizerHyper hp_;
  long step_ = 0;
  std::map<std::string, Slot> slots_;
};

template <class S>
void zero_grads(NamedParams<S>& params) {
  for (auto& [name, p] : params) p.zero_grad();
}

}  // namespace topiclm
