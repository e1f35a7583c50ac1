#pragma once

// Central-finite-difference gradient suite backing the gradcheck command.
// Checks rerun the forward pass with perturbed inputs, so they are
// independent of the tape's backward path. All checks run in 64-bit.

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "topiclm/model.hpp"

namespace topiclm {

struct GradCheckEntry {
  std::string name;
  double rel_err = 0;
  bool pass = false;
};

namespace gradcheck_detail {

using LossFn = std::function<Tensor<double>(Tape<double>&)>;

inline double forward_value(const LossFn& f) {
  Tape<double> tape;
  return f(tape).item();
}

// ||analytic - fd|| / max(||analytic|| + ||fd||, 1e-4) over all (or sampled)
// coordinates of the given leaves.
inline double rel_err(std::vector<Tensor<double>> leaves, const LossFn& f, int per_tensor,
                      Rng* sampler, double h = 1e-4) {
  for (auto& leaf : leaves) leaf.zero_grad();
  Tape<double> tape;
  Tensor<double> loss = f(tape);
  tape.backward(loss);

  double err_sq = 0, a_sq = 0, fd_sq = 0;
  for (auto& leaf : leaves) {
    const auto& g = leaf.grad_or_empty();
    const long n = leaf.numel();
    const int n_checks = per_tensor > 0 ? std::min<long>(per_tensor, n) : n;
    for (int s = 0; s < n_checks; ++s) {
      const long i = (per_tensor > 0 && n > per_tensor && sampler)
                         ? sampler->uniform_int(static_cast<int>(n))
                         : s;
      const double a = g.empty() ? 0.0 : g[static_cast<std::size_t>(i)];
      const double orig = leaf.data()[i];
      leaf.data()[i] = orig + h;
      const double fp = forward_value(f);
      leaf.data()[i] = orig - h;
      const double fm = forward_value(f);
      leaf.data()[i] = orig;
      const double fd = (fp - fm) / (2.0 * h);
      err_sq += (a - fd) * (a - fd);
      a_sq += a * a;
      fd_sq += fd * fd;
    }
  }
  const double denom = std::max(std::sqrt(a_sq) + std::sqrt(fd_sq), 1e-4);
  return std::sqrt(err_sq) / denom;
}

// Two hand-built pages, two topics, masked word and entity positions.
inline MaskedBatch gradcheck_batch() {
  Segment a;
  a.page_id = "ga";
  a.topic_entity = 2;
  a.tokens = {6, 7, 8, 9, 10};
  a.mentions = {{1, 3, 4}, {4, 5, 5}};
  Segment b;
  b.page_id = "gb";
  b.topic_entity = 3;
  b.tokens = {11, 8, 12};
  b.mentions = {{0, 2, 6}};
  Vocab v;
  MaskedBatch batch = mask_batch({a, b}, v, 0.0, 0.0, 0);
  batch.masked_words.push_back({0, 2, 7});
  batch.tokens[2] = Vocab::kMask;
  batch.masked_words.push_back({1, 1, 11});
  batch.tokens[static_cast<std::size_t>(batch.n_words) + 1] = Vocab::kMask;
  batch.masked_entities.push_back({0, 1, 5});
  batch.ent_ids[1] = Vocab::kMaskEnt;
  return batch;
}

inline RunConfig gradcheck_config(FusionKind kind) {
  RunConfig cfg;
  cfg.model.num_layers = 2;
  cfg.model.hidden_dim = 16;
  cfg.model.num_heads = 4;
  cfg.model.ffn_dim = 32;
  cfg.model.word_vocab_size = 16;
  cfg.model.entity_vocab_size = 8;
  cfg.model.entity_embed_dim = 16;
  cfg.model.max_positions = 12;
  cfg.model.dropout_rate = 0.0;
  cfg.fusion.kind = kind;
  cfg.fusion.layer_indices = {1, 2};
  cfg.contrastive.temperature = 0.07;
  cfg.contrastive.weight = 1.0;
  return cfg;
}

}  // namespace gradcheck_detail

// Every differentiable operation at `points` random instances each, plus the
// fully composed loss (2 layers, d=16, batch 2, both fusion kinds,
// contrastive on) with sampled parameter coordinates.
inline std::vector<GradCheckEntry> run_gradient_suite(std::uint64_t seed = 1234,
                                                      double tolerance = 1e-3, int points = 10) {
  using namespace gradcheck_detail;
  std::vector<GradCheckEntry> report;
  Rng rng(seed);

  auto weighted = [](Tape<double>& t, const Tensor<double>& y, const Tensor<double>& w) {
    return sum_all(t, mul(t, y, w));
  };
  auto run_points = [&](const std::string& name,
                        const std::function<double(Rng&)>& one_point) {
    GradCheckEntry e;
    e.name = name;
    for (int p = 0; p < points; ++p) e.rel_err = std::max(e.rel_err, one_point(rng));
    e.pass = e.rel_err < tolerance;
    report.push_back(e);
  };

  run_points("matmul", [&](Rng& r) {
    auto a = Tensor<double>::randn({3, 4}, r, 1.0);
    auto b = Tensor<double>::randn({4, 2}, r, 1.0);
    auto w = Tensor<double>::randn({3, 2}, r, 1.0, false);
    return rel_err({a, b}, [&](Tape<double>& t) { return weighted(t, matmul(t, a, b), w); }, 0,
                   nullptr);
  });
  run_points("linear", [&](Rng& r) {
    auto x = Tensor<double>::randn({3, 5}, r, 1.0);
    auto wt = Tensor<double>::randn({4, 5}, r, 1.0);
    auto bias = Tensor<double>::randn({4}, r, 1.0);
    auto w = Tensor<double>::randn({3, 4}, r, 1.0, false);
    return rel_err({x, wt, bias},
                   [&](Tape<double>& t) { return weighted(t, linear(t, x, wt, bias), w); }, 0,
                   nullptr);
  });
  run_points("softmax", [&](Rng& r) {
    auto x = Tensor<double>::randn({3, 6}, r, 2.0);
    auto w = Tensor<double>::randn({3, 6}, r, 1.0, false);
    return rel_err({x}, [&](Tape<double>& t) { return weighted(t, softmax(t, x, 1), w); }, 0,
                   nullptr);
  });
  run_points("layer_norm", [&](Rng& r) {
    auto x = Tensor<double>::randn({3, 6}, r, 1.5);
    auto g = Tensor<double>::randn({6}, r, 1.0);
    auto b = Tensor<double>::randn({6}, r, 1.0);
    auto w = Tensor<double>::randn({3, 6}, r, 1.0, false);
    return rel_err({x, g, b},
                   [&](Tape<double>& t) { return weighted(t, layer_norm(t, x, g, b, 1e-5), w); },
                   0, nullptr);
  });
  run_points("sigmoid", [&](Rng& r) {
    auto x = Tensor<double>::randn({8}, r, 2.0);
    auto w = Tensor<double>::randn({8}, r, 1.0, false);
    return rel_err({x}, [&](Tape<double>& t) { return weighted(t, sigmoid(t, x), w); }, 0,
                   nullptr);
  });
  run_points("gelu", [&](Rng& r) {
    auto x = Tensor<double>::randn({8}, r, 2.0);
    auto w = Tensor<double>::randn({8}, r, 1.0, false);
    return rel_err({x}, [&](Tape<double>& t) { return weighted(t, gelu(t, x), w); }, 0, nullptr);
  });
  run_points("elementwise", [&](Rng& r) {
    auto a = Tensor<double>::randn({2, 4}, r, 1.0);
    auto b = Tensor<double>::randn({4}, r, 1.0);
    auto w = Tensor<double>::randn({2, 4}, r, 1.0, false);
    return rel_err({a, b}, [&](Tape<double>& t) {
      auto y = mul(t, add(t, a, b), sub(t, a, b));
      auto z = div(t, y, add_scalar(t, mul(t, b, b), 0.7));
      return weighted(t, z, w);
    }, 0, nullptr);
  });
  run_points("exp_log_sqrt", [&](Rng& r) {
    auto x = Tensor<double>::randn({6}, r, 0.8);
    auto w = Tensor<double>::randn({6}, r, 1.0, false);
    return rel_err({x}, [&](Tape<double>& t) {
      auto pos = add_scalar(t, mul(t, x, x), 0.3);
      return weighted(t, log(t, sqrt(t, exp(t, mul_scalar(t, pos, 0.5)))), w);
    }, 0, nullptr);
  });
  run_points("reshape_transpose_concat_slice", [&](Rng& r) {
    auto a = Tensor<double>::randn({2, 3, 4}, r, 1.0);
    auto b = Tensor<double>::randn({2, 2, 4}, r, 1.0);
    auto w = Tensor<double>::randn({4, 5, 2}, r, 1.0, false);
    return rel_err({a, b}, [&](Tape<double>& t) {
      auto c = concat(t, a, b, 1);                       // [2,5,4]
      auto s = slice(t, transpose(t, c, 0, 2), 0, 0, 4); // [4,5,2]
      return weighted(t, reshape(t, s, {4, 5, 2}), w);
    }, 0, nullptr);
  });
  run_points("embedding_spans_gather", [&](Rng& r) {
    auto table = Tensor<double>::randn({6, 4}, r, 1.0);
    std::vector<int> ids{0, 3, 5};
    std::vector<std::pair<int, int>> spans{{0, 2}, {2, 5}};
    std::vector<long> rows{1, 0, 2};
    auto w = Tensor<double>::randn({3, 4}, r, 1.0, false);
    auto w2 = Tensor<double>::randn({2, 4}, r, 1.0, false);
    auto w3 = Tensor<double>::randn({3, 4}, r, 1.0, false);
    return rel_err({table}, [&](Tape<double>& t) {
      auto e = weighted(t, embedding(t, table, ids), w);
      auto s = weighted(t, span_mean_embedding(t, table, spans), w2);
      auto g = weighted(t, select_rows(t, embedding(t, table, ids), rows), w3);
      return add(t, add(t, e, s), g);
    }, 0, nullptr);
  });
  run_points("cross_entropy", [&](Rng& r) {
    auto logits = Tensor<double>::randn({4, 6}, r, 2.0);
    std::vector<int> labels{1, 0, 5, 2};
    return rel_err({logits},
                   [&](Tape<double>& t) { return cross_entropy_mean(t, logits, labels); }, 0,
                   nullptr);
  });
  run_points("contrastive", [&](Rng& r) {
    auto vectors = Tensor<double>::randn({6, 6}, r, 1.0);
    std::vector<int> topics{0, 0, 1, 1, 2, 2};
    ContrastiveConfig cc;
    return rel_err({vectors}, [&](Tape<double>& t) {
      DeltaSet<double> delta;
      delta.vectors = vectors;
      delta.topic_of_row = topics;
      return contrastive_loss(t, delta, cc);
    }, 0, nullptr);
  });

  // fully composed loss, both fusion kinds
  for (FusionKind kind : {FusionKind::kConcat, FusionKind::kAttention}) {
    RunConfig cfg = gradcheck_detail::gradcheck_config(kind);
    Vocab vocab;
    for (int i = 0; i < cfg.model.word_vocab_size - Vocab::kNumReservedWords; ++i)
      vocab.add_word("w" + std::to_string(i));
    for (int i = 0; i < cfg.model.entity_vocab_size - Vocab::kNumReservedEntities; ++i)
      vocab.add_entity("e" + std::to_string(i));
    Rng init(seed + 7);
    Model<double> model = Model<double>::init(cfg, vocab, init);
    MaskedBatch batch = gradcheck_detail::gradcheck_batch();

    auto named = model.named_params();
    std::vector<Tensor<double>> leaves;
    for (auto& [n, p] : named) leaves.push_back(p);
    auto loss_fn = [&](Tape<double>& t) {
      return model_forward(t, model, batch, cfg.contrastive).total;
    };
    GradCheckEntry e;
    e.name = "composed_model_" + fusion_kind_name(kind);
    Rng sampler(seed + 13);
    e.rel_err = gradcheck_detail::rel_err(leaves, loss_fn, points, &sampler);
    e.pass = e.rel_err < tolerance;
    report.push_back(e);
  }
  return report;
}

inline bool all_passed(const std::vector<GradCheckEntry>& entries) {
  for (const auto& e : entries)
    if (!e.pass) return false;
  return true;
}

}  // namespace topiclm
