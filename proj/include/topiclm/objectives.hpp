#pragma once

#include <string>
#include <vector>

#include "topiclm/tensor.hpp"

namespace topiclm {

struct ContrastiveConfig {
  double temperature = 0.07;
  double weight = 1.0;  // coefficient on the contrastive term in the total loss

  void validate() const {
    if (temperature <= 0) throw ConfigError("contrastive: temperature must be > 0");
  }
};

// Per-segment representation pairs {h_cls, projected topic embedding},
// grouped by topic entity. Row 2i is segment i's sentence vector, row 2i+1
// its topic vector.
template <class S>
struct DeltaSet {
  Tensor<S> vectors;              // [2B, d]
  std::vector<int> topic_of_row;  // [2B]

  int rows() const { return static_cast<int>(topic_of_row.size()); }
};

template <class S>
DeltaSet<S> build_delta_set(Tape<S>& tape, const Tensor<S>& h_cls, const Tensor<S>& topic_proj,
                            const std::vector<int>& topic_ids) {
  const int b = h_cls.dim(0), d = h_cls.dim(1);
  if (topic_proj.dim(0) != b || topic_proj.dim(1) != d ||
      static_cast<int>(topic_ids.size()) != b)
    throw ShapeError("delta set: sentence and topic representation shapes disagree");
  DeltaSet<S> delta;
  // interleave so each segment's pair is adjacent
  auto cls3 = reshape(tape, h_cls, {b, 1, d});
  auto top3 = reshape(tape, topic_proj, {b, 1, d});
  delta.vectors = reshape(tape, concat(tape, cls3, top3, 1), {2 * b, d});
  delta.topic_of_row.resize(static_cast<std::size_t>(2 * b));
  for (int i = 0; i < b; ++i) {
    delta.topic_of_row[static_cast<std::size_t>(2 * i)] = topic_ids[static_cast<std::size_t>(i)];
    delta.topic_of_row[static_cast<std::size_t>(2 * i + 1)] = topic_ids[static_cast<std::size_t>(i)];
  }
  return delta;
}

// L2-normalizes rows with an epsilon guard in the denominator.
template <class S>
Tensor<S> normalize_rows(Tape<S>& tape, const Tensor<S>& x, S eps = S(1e-8)) {
  auto norms = sqrt(tape, sum_axis(tape, mul(tape, x, x), 1, true));
  return div(tape, x, add_scalar(tape, norms, eps));
}

// Cosine similarity of two vectors, eps-guarded.
template <class S>
Tensor<S> cosine_sim(Tape<S>& tape, const Tensor<S>& a, const Tensor<S>& b) {
  if (a.numel() != b.numel()) throw ShapeError("cosine_sim: length mismatch");
  auto a2 = reshape(tape, a, {1, static_cast<int>(a.numel())});
  auto b2 = reshape(tape, b, {1, static_cast<int>(b.numel())});
  auto an = normalize_rows(tape, a2);
  auto bn = normalize_rows(tape, b2);
  return sum_all(tape, mul(tape, an, bn));
}

// In-batch contrastive loss over the delta set. For every anchor h and every
// same-topic positive h+, the term is
//   -log( e^{sim(h,h+)/tau} / (e^{sim(h,h+)/tau} + sum_{h' of other topics} e^{sim(h,h')/tau}) ),
// summed over anchors/positives and averaged over the pair count. Anchors
// whose topic has no in-batch negatives contribute exactly 0.
template <class S>
Tensor<S> contrastive_loss(Tape<S>& tape, const DeltaSet<S>& delta,
                           const ContrastiveConfig& cfg) {
  cfg.validate();
  const int n = delta.rows();
  if (n == 0) return Tensor<S>::scalar(S(0));

  // constant masks from the grouping
  Tensor<S> pos_mask = Tensor<S>::zeros({n, n});
  Tensor<S> neg_mask = Tensor<S>::zeros({n, n});
  std::vector<char> has_neg(static_cast<std::size_t>(n), 0);
  long pair_count = 0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      if (delta.topic_of_row[static_cast<std::size_t>(i)] !=
          delta.topic_of_row[static_cast<std::size_t>(j)]) {
        neg_mask.data()[static_cast<long>(i) * n + j] = S(1);
        has_neg[static_cast<std::size_t>(i)] = 1;
      }
    }
  for (int i = 0; i < n; ++i) {
    if (!has_neg[static_cast<std::size_t>(i)]) continue;
    for (int j = 0; j < n; ++j)
      if (i != j && delta.topic_of_row[static_cast<std::size_t>(i)] ==
                        delta.topic_of_row[static_cast<std::size_t>(j)]) {
        pos_mask.data()[static_cast<long>(i) * n + j] = S(1);
        ++pair_count;
      }
  }
  if (pair_count == 0) return Tensor<S>::scalar(S(0));

  auto xn = normalize_rows(tape, delta.vectors);
  auto sims = matmul(tape, xn, transpose(tape, xn, 0, 1));  // [n, n]
  auto scaled = mul_scalar(tape, sims, static_cast<S>(1.0 / cfg.temperature));
  auto e = exp(tape, scaled);
  auto neg_sum = sum_axis(tape, mul(tape, e, neg_mask), 1, true);  // [n, 1]
  // -log(e_ij / (e_ij + neg_i)) = log(e_ij + neg_i) - s_ij/tau
  auto terms = sub(tape, log(tape, add(tape, e, neg_sum)), scaled);
  auto masked = mul(tape, terms, pos_mask);
  return mul_scalar(tape, sum_all(tape, masked), S(1) / static_cast<S>(pair_count));
}

// L = L_plm + L_aux + weight * L_contrastive, with a finiteness check that
// names the offending component.
template <class S>
Tensor<S> total_loss(Tape<S>& tape, const Tensor<S>& l_plm, const Tensor<S>& l_aux,
                     const Tensor<S>& l_contrastive, const ContrastiveConfig& cfg) {
  auto check = [](const Tensor<S>& t, const char* name) {
    if (!std::isfinite(static_cast<double>(t.item())))
      throw NumericError(std::string("total loss: non-finite ") + name);
  };
  check(l_plm, "masked-word loss");
  check(l_aux, "masked-entity loss");
  check(l_contrastive, "contrastive loss");
  return add(tape, add(tape, l_plm, l_aux),
             mul_scalar(tape, l_contrastive, static_cast<S>(cfg.weight)));
}

}  // namespace topiclm
