#pragma once

#include <string>
#include <vector>

#include "topiclm/checkpoint.hpp"
#include "topiclm/config.hpp"
#include "topiclm/corpus.hpp"
#include "topiclm/encoder.hpp"
#include "topiclm/fusion.hpp"
#include "topiclm/objectives.hpp"

namespace topiclm {

// Fills in vocabulary-dependent sizes. Explicit config sizes act as
// capacities and must cover the corpus tables.
inline ModelConfig resolve_model_config(ModelConfig cfg, const Vocab& vocab) {
  if (cfg.word_vocab_size == 0)
    cfg.word_vocab_size = vocab.word_count();
  else if (cfg.word_vocab_size < vocab.word_count())
    throw ConfigError("model: word_vocab_size " + std::to_string(cfg.word_vocab_size) +
                      " smaller than corpus vocabulary " + std::to_string(vocab.word_count()));
  if (cfg.entity_vocab_size == 0)
    cfg.entity_vocab_size = vocab.entity_count();
  else if (cfg.entity_vocab_size < vocab.entity_count())
    throw ConfigError("model: entity_vocab_size " + std::to_string(cfg.entity_vocab_size) +
                      " smaller than corpus entity table " + std::to_string(vocab.entity_count()));
  return cfg;
}

// Encoder plus fusion parameters for one run.
template <class S>
struct Model {
  EncoderParams<S> encoder;
  FusionParams<S> fusion;

  static Model init(const RunConfig& run, const Vocab& vocab, Rng& rng) {
    Model m;
    ModelConfig mc = resolve_model_config(run.model, vocab);
    run.fusion.validate(mc.num_layers);
    m.encoder = EncoderParams<S>::init(mc, rng);
    m.fusion = FusionParams<S>::init(run.fusion, mc, rng);
    return m;
  }

  NamedParams<S> named_params() {
    NamedParams<S> out;
    encoder.collect(out);
    fusion.collect(out);
    return out;
  }

  NamedParams<S> encoder_params_only() {
    NamedParams<S> out;
    encoder.collect(out);
    return out;
  }
};

template <class S>
struct StepResult {
  Tensor<S> total;
  Tensor<S> l_plm, l_aux, l_con;
  BaseLosses<S> base;
  EncodedBatch<S> encoded;
};

// Full pretraining forward pass: embed, fuse between layers, encode, masked
// prediction losses, and the in-batch contrastive term built from sentence
// vectors paired with projected topic embeddings.
template <class S>
StepResult<S> model_forward(Tape<S>& tape, Model<S>& model, const MaskedBatch& batch,
                            const ContrastiveConfig& contrastive, Rng* dropout_rng = nullptr) {
  StepResult<S> out;
  auto h0 = embed_input(tape, model.encoder, batch);
  auto hook = make_fusion_hook<S>(model.fusion, model.encoder.entity_emb, batch);
  out.encoded = encode(tape, model.encoder, batch, h0, hook, dropout_rng);
  out.base = base_losses(tape, model.encoder, out.encoded, batch);
  out.l_plm = out.base.l_plm;
  out.l_aux = out.base.l_aux;
  if (contrastive.weight != 0.0) {
    auto topic_proj = project_topics(tape, model.encoder.entity_emb, batch.topic_ids,
                                     model.fusion.first_point());
    auto delta = build_delta_set(tape, out.encoded.h_cls, topic_proj, batch.topic_ids);
    out.l_con = contrastive_loss(tape, delta, contrastive);
  } else {
    out.l_con = Tensor<S>::scalar(S(0));
  }
  out.total = total_loss(tape, out.l_plm, out.l_aux, out.l_con, contrastive);
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoint conversion. Model tensors are stored under their parameter
// names, optimizer moments under opt.m.<name> / opt.v.<name>.
// ---------------------------------------------------------------------------

template <class S>
CheckpointData to_checkpoint(Model<S>& model, AdamW<S>* opt, const RunConfig& cfg,
                             const Vocab& vocab, long step) {
  CheckpointData data;
  auto named = model.named_params();
  for (auto& [name, p] : named) data.tensors.emplace_back(name, record_from(p));
  if (opt) {
    for (auto& [name, p] : named) {
      auto it = opt->slots().find(name);
      Tensor<S> m = Tensor<S>::zeros(p.shape());
      Tensor<S> v = Tensor<S>::zeros(p.shape());
      if (it != opt->slots().end() && !it->second.m.empty()) {
        m = Tensor<S>(p.shape(), it->second.m);
        v = Tensor<S>(p.shape(), it->second.v);
      }
      data.tensors.emplace_back("opt.m." + name, record_from(m));
      data.tensors.emplace_back("opt.v." + name, record_from(v));
    }
  }
  data.metadata = make_checkpoint_metadata(cfg, vocab, cfg.seed, step);
  return data;
}

template <class S>
void save_model_checkpoint(Model<S>& model, AdamW<S>* opt, const RunConfig& cfg,
                           const Vocab& vocab, long step, const std::string& path) {
  save_checkpoint_file(to_checkpoint(model, opt, cfg, vocab, step), path);
}

template <class S>
struct LoadedModel {
  Model<S> model;
  RunConfig cfg;
  Vocab vocab;
  std::uint64_t seed = 0;
  long step = 0;
  CheckpointData raw;
};

// Rebuilds the model from the embedded config snapshot and validates every
// tensor's shape against it before any value is taken.
template <class S>
LoadedModel<S> load_model_checkpoint(const std::string& path) {
  LoadedModel<S> out;
  out.raw = load_checkpoint_file(path);
  CheckpointMetadata meta = parse_checkpoint_metadata(out.raw.metadata);
  out.cfg = meta.cfg;
  out.vocab = meta.vocab;
  out.seed = meta.seed;
  out.step = meta.step;

  Rng rng(meta.seed);
  out.model = Model<S>::init(out.cfg, out.vocab, rng);
  auto named = out.model.named_params();
  for (auto& [name, p] : named) {
    const TensorRecord* rec = out.raw.find(name);
    if (!rec)
      throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                            "checkpoint missing tensor '" + name + "'");
    if (rec->dims != p.shape())
      throw CheckpointError(CheckpointError::Kind::shape_mismatch,
                            "tensor '" + name + "' has shape " + shape_str(rec->dims) +
                                ", config expects " + shape_str(p.shape()));
    auto loaded = tensor_from<S>(*rec);
    p.values() = loaded.values();
  }
  return out;
}

}  // namespace topiclm
