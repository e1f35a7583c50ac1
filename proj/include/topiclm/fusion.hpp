#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "topiclm/encoder.hpp"
#include "topiclm/tensor.hpp"

namespace topiclm {

enum class FusionKind { kConcat, kAttention };

inline std::string fusion_kind_name(FusionKind k) {
  return k == FusionKind::kConcat ? "concat" : "attention";
}

inline FusionKind fusion_kind_from(const std::string& s) {
  if (s == "concat") return FusionKind::kConcat;
  if (s == "attention") return FusionKind::kAttention;
  throw ConfigError("unknown fusion kind '" + s + "'");
}

struct FusionConfig {
  FusionKind kind = FusionKind::kAttention;
  std::vector<int> layer_indices{1};  // fusion runs on the output of layer l-1, before layer l
  bool enabled = true;

  void validate(int num_layers) const {
    std::vector<int> seen;
    for (int l : layer_indices) {
      if (l < 1 || l > num_layers)
        throw ConfigError("fusion: layer index " + std::to_string(l) + " outside [1," +
                          std::to_string(num_layers) + "]");
      if (std::find(seen.begin(), seen.end(), l) != seen.end())
        throw ConfigError("fusion: duplicate layer index " + std::to_string(l));
      seen.push_back(l);
    }
  }
};

// Learned maps of one insertion point. Maps are never shared across points.
template <class S>
struct FusionPointParams {
  Tensor<S> gate_w, gate_b;    // d -> 1, position score
  Tensor<S> topic_w, topic_b;  // entity_embed_dim -> d, topic projection
  Tensor<S> cat_w, cat_b;      // 2d -> d (concat kind)
  Tensor<S> query_w, query_b, key_w, key_b, value_w, value_b;  // d -> d (attention kind)
  Tensor<S> ln_scale, ln_shift;
};

template <class S>
struct FusionParams {
  FusionConfig cfg;
  std::vector<std::pair<int, FusionPointParams<S>>> points;  // keyed by layer index

  static FusionParams init(const FusionConfig& cfg, const ModelConfig& model, Rng& rng) {
    FusionParams p;
    p.cfg = cfg;
    const int d = model.hidden_dim;
    const double sd = 0.02;
    std::vector<int> indices = cfg.layer_indices;
    std::sort(indices.begin(), indices.end());
    for (int l : indices) {
      FusionPointParams<S> fp;
      fp.gate_w = Tensor<S>::randn({1, d}, rng, sd);
      fp.gate_b = Tensor<S>::zeros({1}, true);
      fp.topic_w = Tensor<S>::randn({d, model.entity_embed_dim}, rng, sd);
      fp.topic_b = Tensor<S>::zeros({d}, true);
      if (cfg.kind == FusionKind::kConcat) {
        fp.cat_w = Tensor<S>::randn({d, 2 * d}, rng, sd);
        fp.cat_b = Tensor<S>::zeros({d}, true);
      } else {
        fp.query_w = Tensor<S>::randn({d, d}, rng, sd);
        fp.query_b = Tensor<S>::zeros({d}, true);
        fp.key_w = Tensor<S>::randn({d, d}, rng, sd);
        fp.key_b = Tensor<S>::zeros({d}, true);
        fp.value_w = Tensor<S>::randn({d, d}, rng, sd);
        fp.value_b = Tensor<S>::zeros({d}, true);
      }
      fp.ln_scale = Tensor<S>::full({d}, S(1), true);
      fp.ln_shift = Tensor<S>::zeros({d}, true);
      p.points.emplace_back(l, std::move(fp));
    }
    return p;
  }

  FusionPointParams<S>* point_at(int layer) {
    for (auto& [l, fp] : points)
      if (l == layer) return &fp;
    return nullptr;
  }

  // The projection used for the contrastive topic representation.
  FusionPointParams<S>& first_point() {
    if (points.empty()) throw ConfigError("fusion: no insertion points configured");
    return points.front().second;
  }

  void collect(NamedParams<S>& out) {
    for (auto& [l, fp] : points) {
      const std::string pre = "fusion.l" + std::to_string(l) + ".";
      out.emplace_back(pre + "gate_w", fp.gate_w);
      out.emplace_back(pre + "gate_b", fp.gate_b);
      out.emplace_back(pre + "topic_w", fp.topic_w);
      out.emplace_back(pre + "topic_b", fp.topic_b);
      if (fp.cat_w.defined()) {
        out.emplace_back(pre + "cat_w", fp.cat_w);
        out.emplace_back(pre + "cat_b", fp.cat_b);
      }
      if (fp.query_w.defined()) {
        out.emplace_back(pre + "query_w", fp.query_w);
        out.emplace_back(pre + "query_b", fp.query_b);
        out.emplace_back(pre + "key_w", fp.key_w);
        out.emplace_back(pre + "key_b", fp.key_b);
        out.emplace_back(pre + "value_w", fp.value_w);
        out.emplace_back(pre + "value_b", fp.value_b);
      }
      out.emplace_back(pre + "ln_scale", fp.ln_scale);
      out.emplace_back(pre + "ln_shift", fp.ln_shift);
    }
  }
};

// Per-position fusing score sigma(F_p(h)) in (0,1); padding positions are
// forced to exactly 0. Returns [B, T, 1].
template <class S>
Tensor<S> gate(Tape<S>& tape, const Tensor<S>& h, FusionPointParams<S>& fp,
               const Tensor<S>& real_mask) {
  auto g = sigmoid(tape, linear(tape, h, fp.gate_w, fp.gate_b));
  return mul(tape, g, real_mask);
}

// F_t-projected topic embeddings for the batch: [B, d].
template <class S>
Tensor<S> project_topics(Tape<S>& tape, const Tensor<S>& entity_table,
                         const std::vector<int>& topic_ids, FusionPointParams<S>& fp) {
  auto raw = embedding(tape, entity_table, topic_ids);
  return linear(tape, raw, fp.topic_w, fp.topic_b);
}

// Concatenation adapter: F_c(CONCAT(h; F_t(e_t))) at every position.
template <class S>
Tensor<S> concat_adapter(Tape<S>& tape, const Tensor<S>& h, const Tensor<S>& topic_proj,
                         FusionPointParams<S>& fp) {
  const int t = h.dim(1);
  auto e = expand_mid(tape, topic_proj, t);
  return linear(tape, concat(tape, h, e, 2), fp.cat_w, fp.cat_b);
}

template <class S>
struct AttentionAdapterOut {
  Tensor<S> fused;    // [B, T, d]
  Tensor<S> weights;  // [B, T, 2], softmax over {position, topic} keys
};

// One-query/two-key attention per position: the query comes from h, the keys
// and values from the stacked pair (h ; F_t(e_t)), logits scaled by 1/sqrt(d).
template <class S>
AttentionAdapterOut<S> attention_adapter(Tape<S>& tape, const Tensor<S>& h,
                                         const Tensor<S>& topic_proj, FusionPointParams<S>& fp) {
  const int b = h.dim(0), t = h.dim(1), d = h.dim(2);
  auto e = expand_mid(tape, topic_proj, t);  // [B, T, d]
  auto q = linear(tape, h, fp.query_w, fp.query_b);
  auto k_h = linear(tape, h, fp.key_w, fp.key_b);
  auto k_e = linear(tape, e, fp.key_w, fp.key_b);
  auto v_h = linear(tape, h, fp.value_w, fp.value_b);
  auto v_e = linear(tape, e, fp.value_w, fp.value_b);

  const S inv_sqrt_d = static_cast<S>(1.0 / std::sqrt(static_cast<double>(d)));
  auto l_h = mul_scalar(tape, sum_axis(tape, mul(tape, q, k_h), 2, true), inv_sqrt_d);
  auto l_e = mul_scalar(tape, sum_axis(tape, mul(tape, q, k_e), 2, true), inv_sqrt_d);
  auto weights = softmax(tape, concat(tape, l_h, l_e, 2), 2);  // [B, T, 2]
  auto w_h = slice(tape, weights, 2, 0, 1);
  auto w_e = slice(tape, weights, 2, 1, 1);
  AttentionAdapterOut<S> out;
  out.fused = add(tape, mul(tape, w_h, v_h), mul(tape, w_e, v_e));
  out.weights = weights;
  (void)b;
  return out;
}

// Soft combine: LN((1-g) * h + g * h_hat) on real positions; padding rows
// pass through unchanged.
template <class S>
Tensor<S> fuse_combine(Tape<S>& tape, const Tensor<S>& h, const Tensor<S>& g,
                       const Tensor<S>& h_hat, FusionPointParams<S>& fp,
                       const Tensor<S>& real_mask) {
  auto keep = add_scalar(tape, mul_scalar(tape, g, S(-1)), S(1));  // 1 - g
  auto blend = add(tape, mul(tape, keep, h), mul(tape, g, h_hat));
  auto normed = layer_norm(tape, blend, fp.ln_scale, fp.ln_shift, S(1e-5));
  auto pad = add_scalar(tape, mul_scalar(tape, real_mask, S(-1)), S(1));
  return add(tape, mul(tape, real_mask, normed), mul(tape, pad, h));
}

// Full insertion-point transform: gate -> adapter -> gated combine, using
// each segment's own topic entity. Identity when disabled or when the layer
// has no insertion point.
template <class S>
Tensor<S> apply_fusion(Tape<S>& tape, int layer_index, const Tensor<S>& h,
                       FusionParams<S>& fusion, const Tensor<S>& entity_table,
                       const std::vector<int>& topic_ids, const Tensor<S>& real_mask) {
  if (!fusion.cfg.enabled) return h;
  FusionPointParams<S>* fp = fusion.point_at(layer_index);
  if (!fp) return h;
  auto g = gate(tape, h, *fp, real_mask);
  auto topic_proj = project_topics(tape, entity_table, topic_ids, *fp);
  Tensor<S> h_hat;
  if (fusion.cfg.kind == FusionKind::kConcat)
    h_hat = concat_adapter(tape, h, topic_proj, *fp);
  else
    h_hat = attention_adapter(tape, h, topic_proj, *fp).fused;
  return fuse_combine(tape, h, g, h_hat, *fp, real_mask);
}

// Packages fusion state as the between-layer hook the encoder runs.
template <class S>
FusionHook<S> make_fusion_hook(FusionParams<S>& fusion, const Tensor<S>& entity_table,
                               const MaskedBatch& batch) {
  if (!fusion.cfg.enabled || fusion.points.empty()) return nullptr;
  auto mask = encoder_detail::joint_real_mask<S>(batch);
  auto topics = batch.topic_ids;
  Tensor<S> table = entity_table;
  FusionParams<S>* fptr = &fusion;
  return [fptr, table, topics, mask](Tape<S>& tape, int layer, const Tensor<S>& h) mutable {
    return apply_fusion(tape, layer, h, *fptr, table, topics, mask);
  };
}

}  // namespace topiclm
