#pragma once

#include <functional>
#include <string>
#include <vector>

#include "topiclm/corpus.hpp"
#include "topiclm/optim.hpp"
#include "topiclm/tensor.hpp"

namespace topiclm {

struct ModelConfig {
  int num_layers = 2;
  int hidden_dim = 64;
  int num_heads = 4;
  int ffn_dim = 256;
  int word_vocab_size = 0;  // 0 = take from the corpus vocabulary
  int entity_vocab_size = 0;
  int entity_embed_dim = 64;
  int max_positions = 128;
  double dropout_rate = 0.1;

  void validate() const {
    if (num_layers < 0 || hidden_dim < 1 || num_heads < 1 || ffn_dim < 1)
      throw ConfigError("model: sizes must be positive");
    if (hidden_dim % num_heads != 0)
      throw ConfigError("model: hidden_dim must be divisible by num_heads");
    if (entity_embed_dim > hidden_dim)
      throw ConfigError("model: entity_embed_dim must be <= hidden_dim");
  }
};

template <class S>
struct EncoderLayerParams {
  Tensor<S> ln1_scale, ln1_shift;
  Tensor<S> attn_wq, attn_bq, attn_wk, attn_bk, attn_wv, attn_bv, attn_wo, attn_bo;
  Tensor<S> ln2_scale, ln2_shift;
  Tensor<S> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

template <class S>
struct EncoderParams {
  ModelConfig cfg;
  Tensor<S> word_emb;    // [Vw, d]
  Tensor<S> entity_emb;  // [Ve, e_dim]; also the tied masked-entity output table
  Tensor<S> pos_emb;     // [max_positions, d]
  Tensor<S> type_emb;    // [2, d]: word row 0, entity row 1
  Tensor<S> entity_in_w, entity_in_b;  // e_dim -> d, allocated when e_dim != d
  std::vector<EncoderLayerParams<S>> layers;
  Tensor<S> final_ln_scale, final_ln_shift;
  Tensor<S> word_head_w, word_head_b;  // [Vw, d], [Vw]
  Tensor<S> entity_out_w;              // d -> e_dim before the tied table, when e_dim != d
  Tensor<S> entity_head_bias;          // [Ve]

  static EncoderParams init(const ModelConfig& cfg, Rng& rng) {
    cfg.validate();
    if (cfg.word_vocab_size < Vocab::kNumReservedWords ||
        cfg.entity_vocab_size < Vocab::kNumReservedEntities)
      throw ConfigError("model: vocabulary sizes not resolved");
    const int d = cfg.hidden_dim;
    const double sd = 0.02;
    EncoderParams p;
    p.cfg = cfg;
    p.word_emb = Tensor<S>::randn({cfg.word_vocab_size, d}, rng, sd);
    p.entity_emb = Tensor<S>::randn({cfg.entity_vocab_size, cfg.entity_embed_dim}, rng, sd);
    p.pos_emb = Tensor<S>::randn({cfg.max_positions, d}, rng, sd);
    p.type_emb = Tensor<S>::randn({2, d}, rng, sd);
    if (cfg.entity_embed_dim != d) {
      p.entity_in_w = Tensor<S>::randn({d, cfg.entity_embed_dim}, rng, sd);
      p.entity_in_b = Tensor<S>::zeros({d}, true);
    }
    for (int l = 0; l < cfg.num_layers; ++l) {
      EncoderLayerParams<S> lp;
      lp.ln1_scale = Tensor<S>::full({d}, S(1), true);
      lp.ln1_shift = Tensor<S>::zeros({d}, true);
      lp.attn_wq = Tensor<S>::randn({d, d}, rng, sd);
      lp.attn_bq = Tensor<S>::zeros({d}, true);
      lp.attn_wk = Tensor<S>::randn({d, d}, rng, sd);
      lp.attn_bk = Tensor<S>::zeros({d}, true);
      lp.attn_wv = Tensor<S>::randn({d, d}, rng, sd);
      lp.attn_bv = Tensor<S>::zeros({d}, true);
      lp.attn_wo = Tensor<S>::randn({d, d}, rng, sd);
      lp.attn_bo = Tensor<S>::zeros({d}, true);
      lp.ln2_scale = Tensor<S>::full({d}, S(1), true);
      lp.ln2_shift = Tensor<S>::zeros({d}, true);
      lp.ffn_w1 = Tensor<S>::randn({cfg.ffn_dim, d}, rng, sd);
      lp.ffn_b1 = Tensor<S>::zeros({cfg.ffn_dim}, true);
      lp.ffn_w2 = Tensor<S>::randn({d, cfg.ffn_dim}, rng, sd);
      lp.ffn_b2 = Tensor<S>::zeros({d}, true);
      p.layers.push_back(std::move(lp));
    }
    p.final_ln_scale = Tensor<S>::full({d}, S(1), true);
    p.final_ln_shift = Tensor<S>::zeros({d}, true);
    p.word_head_w = Tensor<S>::randn({cfg.word_vocab_size, d}, rng, sd);
    p.word_head_b = Tensor<S>::zeros({cfg.word_vocab_size}, true);
    if (cfg.entity_embed_dim != d) p.entity_out_w = Tensor<S>::randn({cfg.entity_embed_dim, d}, rng, sd);
    p.entity_head_bias = Tensor<S>::zeros({cfg.entity_vocab_size}, true);
    return p;
  }

  void collect(NamedParams<S>& out) {
    out.emplace_back("word_emb", word_emb);
    out.emplace_back("entity_emb", entity_emb);
    out.emplace_back("pos_emb", pos_emb);
    out.emplace_back("type_emb", type_emb);
    if (entity_in_w.defined()) {
      out.emplace_back("entity_in_w", entity_in_w);
      out.emplace_back("entity_in_b", entity_in_b);
    }
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const std::string pre = "layers." + std::to_string(l) + ".";
      auto& lp = layers[l];
      out.emplace_back(pre + "ln1_scale", lp.ln1_scale);
      out.emplace_back(pre + "ln1_shift", lp.ln1_shift);
      out.emplace_back(pre + "attn_wq", lp.attn_wq);
      out.emplace_back(pre + "attn_bq", lp.attn_bq);
      out.emplace_back(pre + "attn_wk", lp.attn_wk);
      out.emplace_back(pre + "attn_bk", lp.attn_bk);
      out.emplace_back(pre + "attn_wv", lp.attn_wv);
      out.emplace_back(pre + "attn_bv", lp.attn_bv);
      out.emplace_back(pre + "attn_wo", lp.attn_wo);
      out.emplace_back(pre + "attn_bo", lp.attn_bo);
      out.emplace_back(pre + "ln2_scale", lp.ln2_scale);
      out.emplace_back(pre + "ln2_shift", lp.ln2_shift);
      out.emplace_back(pre + "ffn_w1", lp.ffn_w1);
      out.emplace_back(pre + "ffn_b1", lp.ffn_b1);
      out.emplace_back(pre + "ffn_w2", lp.ffn_w2);
      out.emplace_back(pre + "ffn_b2", lp.ffn_b2);
    }
    out.emplace_back("final_ln_scale", final_ln_scale);
    out.emplace_back("final_ln_shift", final_ln_shift);
    out.emplace_back("word_head_w", word_head_w);
    out.emplace_back("word_head_b", word_head_b);
    if (entity_out_w.defined()) out.emplace_back("entity_out_w", entity_out_w);
    out.emplace_back("entity_head_bias", entity_head_bias);
  }
};

template <class S>
struct EncodedBatch {
  Tensor<S> h_w;    // [B, n_words, d]
  Tensor<S> h_e;    // [B, n_ents, d]
  Tensor<S> h_cls;  // [B, d], row 0 of h_w
};

// Optional transform applied to the joint hidden states between layers;
// receives the 1-based index of the layer about to run.
template <class S>
using FusionHook = std::function<Tensor<S>(Tape<S>&, int layer_index, const Tensor<S>& h)>;

namespace encoder_detail {

// 0/1 mask over the joint word||entity sequence, shaped [B, T, 1].
template <class S>
Tensor<S> joint_real_mask(const MaskedBatch& batch) {
  const int b = batch.batch, t = batch.total_positions();
  Tensor<S> m = Tensor<S>::zeros({b, t, 1});
  for (int i = 0; i < b; ++i) {
    for (int w = 0; w < batch.n_words; ++w)
      m.data()[(static_cast<long>(i) * t + w)] =
          batch.word_real[static_cast<std::size_t>(i) * batch.n_words + w] ? S(1) : S(0);
    for (int e = 0; e < batch.n_ents; ++e)
      m.data()[(static_cast<long>(i) * t + batch.n_words + e)] =
          batch.ent_real[static_cast<std::size_t>(i) * batch.n_ents + e] ? S(1) : S(0);
  }
  return m;
}

// Additive attention mask [B, 1, 1, T]: 0 on real keys, -1e9 on padding.
template <class S>
Tensor<S> attention_bias(const MaskedBatch& batch) {
  const int b = batch.batch, t = batch.total_positions();
  Tensor<S> m = Tensor<S>::zeros({b, 1, 1, t});
  for (int i = 0; i < b; ++i) {
    for (int w = 0; w < batch.n_words; ++w)
      if (!batch.word_real[static_cast<std::size_t>(i) * batch.n_words + w])
        m.data()[static_cast<long>(i) * t + w] = S(-1e9);
    for (int e = 0; e < batch.n_ents; ++e)
      if (!batch.ent_real[static_cast<std::size_t>(i) * batch.n_ents + e])
        m.data()[static_cast<long>(i) * t + batch.n_words + e] = S(-1e9);
  }
  return m;
}

}  // namespace encoder_detail

// Joint input embedding: word position i gets word + position + type-0
// embeddings; an entity mention gets its (projected) entity embedding, the
// mean of the position embeddings over its span, and the type-1 embedding.
template <class S>
Tensor<S> embed_input(Tape<S>& tape, EncoderParams<S>& params, const MaskedBatch& batch) {
  const auto& cfg = params.cfg;
  const int b = batch.batch, nw = batch.n_words, ne = batch.n_ents, d = cfg.hidden_dim;
  if (nw > cfg.max_positions)
    throw ConfigError("embed_input: batch has " + std::to_string(nw) +
                      " word positions, model allows " + std::to_string(cfg.max_positions));

  auto words = embedding(tape, params.word_emb, batch.tokens);  // [b*nw, d]
  std::vector<int> pos_ids(static_cast<std::size_t>(b) * nw);
  for (int i = 0; i < b; ++i)
    for (int w = 0; w < nw; ++w) pos_ids[static_cast<std::size_t>(i) * nw + w] = w;
  auto pos = embedding(tape, params.pos_emb, pos_ids);
  std::vector<int> word_type(static_cast<std::size_t>(b) * nw, 0);
  auto wtype = embedding(tape, params.type_emb, word_type);
  auto word_part = reshape(tape, add(tape, add(tape, words, pos), wtype), {b, nw, d});

  auto ents = embedding(tape, params.entity_emb, batch.ent_ids);  // [b*ne, e_dim]
  if (params.entity_in_w.defined())
    ents = linear(tape, ents, params.entity_in_w, params.entity_in_b);
  auto spans = span_mean_embedding(tape, params.pos_emb, batch.ent_spans);
  std::vector<int> ent_type(static_cast<std::size_t>(b) * ne, 1);
  auto etype = embedding(tape, params.type_emb, ent_type);
  auto ent_part = reshape(tape, add(tape, add(tape, ents, spans), etype), {b, ne, d});

  return concat(tape, word_part, ent_part, 1);
}

// One pre-norm transformer block over the joint sequence.
template <class S>
Tensor<S> encoder_layer(Tape<S>& tape, EncoderLayerParams<S>& lp, const Tensor<S>& h,
                        const Tensor<S>& attn_bias, const ModelConfig& cfg, Rng* dropout_rng) {
  const int b = h.dim(0), t = h.dim(1), d = h.dim(2);
  const int heads = cfg.num_heads, dh = d / cfg.num_heads;

  auto a = layer_norm(tape, h, lp.ln1_scale, lp.ln1_shift, S(1e-5));
  auto q = transpose(tape, reshape(tape, linear(tape, a, lp.attn_wq, lp.attn_bq), {b, t, heads, dh}), 1, 2);
  auto k = transpose(tape, reshape(tape, linear(tape, a, lp.attn_wk, lp.attn_bk), {b, t, heads, dh}), 1, 2);
  auto v = transpose(tape, reshape(tape, linear(tape, a, lp.attn_wv, lp.attn_bv), {b, t, heads, dh}), 1, 2);
  auto scores = mul_scalar(tape, matmul(tape, q, transpose(tape, k, 2, 3)),
                           static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh))));
  scores = add(tape, scores, attn_bias);
  auto weights = softmax(tape, scores, 3);
  auto ctx = reshape(tape, transpose(tape, matmul(tape, weights, v), 1, 2), {b, t, d});
  auto attn_out = linear(tape, ctx, lp.attn_wo, lp.attn_bo);
  if (dropout_rng) attn_out = dropout(tape, attn_out, cfg.dropout_rate, *dropout_rng);
  auto h1 = add(tape, h, attn_out);

  auto f = layer_norm(tape, h1, lp.ln2_scale, lp.ln2_shift, S(1e-5));
  auto ff = linear(tape, gelu(tape, linear(tape, f, lp.ffn_w1, lp.ffn_b1)), lp.ffn_w2, lp.ffn_b2);
  if (dropout_rng) ff = dropout(tape, ff, cfg.dropout_rate, *dropout_rng);
  return add(tape, h1, ff);
}

// Runs the transformer stack over the embedded joint sequence, applying the
// fusion hook (identity when absent) to the output of layer l-1 before each
// layer l, and splits the result back into word and entity states.
template <class S>
EncodedBatch<S> encode(Tape<S>& tape, EncoderParams<S>& params, const MaskedBatch& batch,
                       Tensor<S> h, const FusionHook<S>& hook = nullptr,
                       Rng* dropout_rng = nullptr) {
  const auto& cfg = params.cfg;
  const int b = batch.batch, nw = batch.n_words, ne = batch.n_ents, d = cfg.hidden_dim;
  if (h.rank() != 3 || h.dim(0) != b || h.dim(1) != nw + ne || h.dim(2) != d)
    throw ShapeError("encode: joint input must be [" + std::to_string(b) + "," +
                     std::to_string(nw + ne) + "," + std::to_string(d) + "], got " +
                     shape_str(h.shape()));
  auto bias = encoder_detail::attention_bias<S>(batch);
  if (dropout_rng && cfg.dropout_rate > 0) h = dropout(tape, h, cfg.dropout_rate, *dropout_rng);
  for (int l = 1; l <= cfg.num_layers; ++l) {
    if (hook) h = hook(tape, l, h);
    h = encoder_layer(tape, params.layers[static_cast<std::size_t>(l - 1)], h, bias, cfg,
                      cfg.dropout_rate > 0 ? dropout_rng : nullptr);
  }
  if (cfg.num_layers > 0)
    h = layer_norm(tape, h, params.final_ln_scale, params.final_ln_shift, S(1e-5));

  EncodedBatch<S> out;
  out.h_w = slice(tape, h, 1, 0, nw);
  out.h_e = slice(tape, h, 1, nw, ne);
  out.h_cls = reshape(tape, slice(tape, out.h_w, 1, 0, 1), {b, d});
  return out;
}

template <class S>
struct BaseLosses {
  Tensor<S> l_plm;  // masked-word cross entropy
  Tensor<S> l_aux;  // masked-entity cross entropy
  int word_total = 0, word_correct = 0;
  int ent_total = 0, ent_correct = 0;
};

// Masked-word and masked-entity prediction losses, means over the masked
// positions only; an absent kind contributes exactly 0. The entity head is
// tied to the entity embedding table.
template <class S>
BaseLosses<S> base_losses(Tape<S>& tape, EncoderParams<S>& params, const EncodedBatch<S>& enc,
                          const MaskedBatch& batch) {
  BaseLosses<S> out;
  const int d = params.cfg.hidden_dim;
  const int b = batch.batch, nw = batch.n_words, ne = batch.n_ents;

  if (!batch.masked_words.empty()) {
    std::vector<long> rows;
    std::vector<int> labels;
    for (const auto& mp : batch.masked_words) {
      rows.push_back(static_cast<long>(mp.b) * nw + mp.pos);
      labels.push_back(mp.label);
    }
    auto flat = reshape(tape, enc.h_w, {b * nw, d});
    auto picked = select_rows(tape, flat, rows);
    auto logits = linear(tape, picked, params.word_head_w, params.word_head_b);
    out.l_plm = cross_entropy_mean(tape, logits, labels);
    out.word_total = static_cast<int>(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const S* row = logits.data() + static_cast<long>(i) * logits.dim(1);
      int best = 0;
      for (int j = 1; j < logits.dim(1); ++j)
        if (row[j] > row[best]) best = j;
      if (best == labels[i]) ++out.word_correct;
    }
  } else {
    out.l_plm = Tensor<S>::scalar(S(0));
  }

  if (!batch.masked_entities.empty()) {
    std::vector<long> rows;
    std::vector<int> labels;
    for (const auto& mp : batch.masked_entities) {
      rows.push_back(static_cast<long>(mp.b) * ne + mp.pos);
      labels.push_back(mp.label);
    }
    auto flat = reshape(tape, enc.h_e, {b * ne, d});
    auto picked = select_rows(tape, flat, rows);
    if (params.entity_out_w.defined())
      picked = matmul(tape, picked, transpose(tape, params.entity_out_w, 0, 1));
    auto logits = add(tape, matmul(tape, picked, transpose(tape, params.entity_emb, 0, 1)),
                      params.entity_head_bias);
    out.l_aux = cross_entropy_mean(tape, logits, labels);
    out.ent_total = static_cast<int>(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const S* row = logits.data() + static_cast<long>(i) * logits.dim(1);
      int best = 0;
      for (int j = 1; j < logits.dim(1); ++j)
        if (row[j] > row[best]) best = j;
      if (best == labels[i]) ++out.ent_correct;
    }
  } else {
    out.l_aux = Tensor<S>::scalar(S(0));
  }
  return out;
}

}  // namespace topiclm
