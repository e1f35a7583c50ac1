#include "topiclm/downstream.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>

#include "topiclm/trainer.hpp"

namespace topiclm {

namespace fs = std::filesystem;

namespace {

constexpr const char* kHeadW = "head_w";
constexpr const char* kHeadB = "head_b";

struct TaskTruth {
  std::map<std::string, int> entity_type;
  std::vector<std::string> type_names;
  std::map<std::pair<std::string, std::string>, int> relations;
  std::vector<std::string> relation_names;
  std::set<std::string> ambiguous;
};

TaskTruth load_ground_truth(const RunConfig& cfg) {
  if (cfg.paths.ground_truth_dir.empty())
    throw ConfigError("finetune: paths.ground_truth_dir not set");
  const fs::path dir(cfg.paths.ground_truth_dir);
  TaskTruth gt;
  if (cfg.finetune.task == "entity-typing") {
    const auto p = dir / "entity_types.tsv";
    if (!fs::exists(p)) throw ConfigError("finetune: missing ground truth " + p.string());
    gt.entity_type = load_entity_types(p.string(), gt.type_names);
  } else if (cfg.finetune.task == "relation-cls") {
    const auto p = dir / "relations.tsv";
    if (!fs::exists(p)) throw ConfigError("finetune: missing ground truth " + p.string());
    gt.relations = load_relations(p.string(), gt.relation_names);
  } else {
    throw ConfigError("finetune: unknown task '" + cfg.finetune.task + "'");
  }
  const auto amb = dir / "ambiguity_map.tsv";
  if (fs::exists(amb)) gt.ambiguous = ambiguous_entities(load_ambiguity_map(amb.string()));
  return gt;
}

std::set<std::string> pick_eval_pages(const RunConfig& cfg, const std::vector<Segment>& segments) {
  std::vector<std::string> pages;
  for (const auto& s : segments)
    if (pages.empty() || pages.back() != s.page_id) pages.push_back(s.page_id);
  Rng rng(Rng::mix(cfg.seed, seeds::kSplit));
  rng.shuffle(pages);
  std::size_t n_eval = static_cast<std::size_t>(cfg.finetune.eval_fraction * static_cast<double>(pages.size()));
  n_eval = std::max<std::size_t>(1, std::min(n_eval, pages.size() - 1));
  return {pages.begin(), pages.begin() + static_cast<long>(n_eval)};
}

}  // namespace

TaskData build_task_data(const RunConfig& cfg, const std::vector<Segment>& segments,
                         const Vocab& vocab) {
  TaskTruth gt = load_ground_truth(cfg);
  TaskData data;
  data.task = cfg.finetune.task;
  data.eval_pages = pick_eval_pages(cfg, segments);

  const bool typing = cfg.finetune.task == "entity-typing";
  data.label_names = typing ? gt.type_names : gt.relation_names;

  for (std::size_t si = 0; si < segments.size(); ++si) {
    const Segment& seg = segments[si];
    const bool in_eval = data.eval_pages.count(seg.page_id) > 0;
    if (typing) {
      for (std::size_t mi = 0; mi < seg.mentions.size(); ++mi) {
        const std::string& name = vocab.entity(seg.mentions[mi].entity_id);
        auto it = gt.entity_type.find(name);
        if (it == gt.entity_type.end()) continue;
        TaskInstance inst;
        inst.segment = static_cast<int>(si);
        inst.mention_a = static_cast<int>(mi);
        inst.label = it->second;
        inst.ambiguous = gt.ambiguous.count(name) > 0;
        if (in_eval)
          data.eval.push_back(inst);
        else if (!inst.ambiguous)
          data.train.push_back(inst);
      }
    } else {
      if (seg.mentions.size() < 2) continue;
      const std::string& a = vocab.entity(seg.mentions[0].entity_id);
      const std::string& b = vocab.entity(seg.mentions[1].entity_id);
      auto it = gt.relations.find({a, b});
      if (it == gt.relations.end()) continue;
      TaskInstance inst;
      inst.segment = static_cast<int>(si);
      inst.mention_a = 0;
      inst.mention_b = 1;
      inst.label = it->second;
      inst.ambiguous = gt.ambiguous.count(a) > 0 || gt.ambiguous.count(b) > 0;
      if (in_eval)
        data.eval.push_back(inst);
      else if (!inst.ambiguous)
        data.train.push_back(inst);
    }
  }
  return data;
}

namespace {

struct Head {
  Tensor<float> w, b;
};

// Runs the encoder (fusion discarded) over the instances' segments and
// returns per-instance logits.
Tensor<float> instance_logits(Tape<float>& tape, Model<float>& model, Head& head,
                              const std::vector<Segment>& segments, const Vocab& vocab,
                              const std::vector<TaskInstance>& chunk, Rng* dropout_rng) {
  std::vector<int> seg_ids;
  std::map<int, int> local;
  for (const auto& inst : chunk)
    if (local.emplace(inst.segment, static_cast<int>(seg_ids.size())).second)
      seg_ids.push_back(inst.segment);
  std::vector<Segment> segs;
  for (int ix : seg_ids) segs.push_back(segments[static_cast<std::size_t>(ix)]);
  MaskedBatch batch = mask_batch(segs, vocab, 0.0, 0.0, 0, model.encoder.cfg.max_positions - 2);

  auto h0 = embed_input(tape, model.encoder, batch);
  auto enc = encode(tape, model.encoder, batch, h0, FusionHook<float>(), dropout_rng);
  const int d = model.encoder.cfg.hidden_dim;
  auto flat = reshape(tape, enc.h_e, {batch.batch * batch.n_ents, d});

  std::vector<long> rows_a, rows_b;
  bool pairs = false;
  for (const auto& inst : chunk) {
    const int b = local.at(inst.segment);
    rows_a.push_back(static_cast<long>(b) * batch.n_ents + inst.mention_a);
    if (inst.mention_b >= 0) {
      pairs = true;
      rows_b.push_back(static_cast<long>(b) * batch.n_ents + inst.mention_b);
    }
  }
  auto feat = select_rows(tape, flat, rows_a);
  if (pairs) feat = concat(tape, feat, select_rows(tape, flat, rows_b), 1);
  return linear(tape, feat, head.w, head.b);
}

EvalSummary summarize(const MicroCounts& counts) {
  EvalSummary s;
  s.precision = counts.precision();
  s.recall = counts.recall();
  s.micro_f1 = counts.micro_f1();
  s.instances = counts.tp + counts.fp;
  return s;
}

// Argmax predictions over eval instances, in fixed chunks.
void eval_pass(Model<float>& model, Head& head, const std::vector<Segment>& segments,
               const Vocab& vocab, const std::vector<TaskInstance>& eval, int chunk_size,
               MicroCounts& overall, MicroCounts& ambiguous) {
  for (std::size_t at = 0; at < eval.size(); at += static_cast<std::size_t>(chunk_size)) {
    std::vector<TaskInstance> chunk(eval.begin() + static_cast<long>(at),
                                    eval.begin() + static_cast<long>(std::min(
                                                       eval.size(), at + static_cast<std::size_t>(chunk_size))));
    Tape<float> tape;
    auto logits = instance_logits(tape, model, head, segments, vocab, chunk, nullptr);
    const int n_labels = logits.dim(1);
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      const float* row = logits.data() + static_cast<long>(i) * n_labels;
      int best = 0;
      for (int j = 1; j < n_labels; ++j)
        if (row[j] > row[best]) best = j;
      overall.add(best, chunk[i].label);
      if (chunk[i].ambiguous) ambiguous.add(best, chunk[i].label);
    }
  }
}

}  // namespace

FinetuneOutcome finetune(const RunConfig& run, const std::string& pretrained_path) {
  auto loaded = load_model_checkpoint<float>(pretrained_path);
  Model<float>& model = loaded.model;
  model.fusion.cfg.enabled = false;  // discarded for downstream training

  RunConfig cfg = run;
  cfg.model = loaded.cfg.model;    // architecture comes from the checkpoint
  cfg.fusion = loaded.cfg.fusion;  // so the archive round-trips its shapes
  cfg.mode = "finetune";
  if (cfg.paths.corpus.empty()) throw ConfigError("finetune: paths.corpus not set");
  fs::create_directories(cfg.paths.out_dir);

  std::ifstream in(cfg.paths.corpus);
  if (!in) throw ConfigError("cannot open corpus file '" + cfg.paths.corpus + "'");
  std::vector<Segment> segments = parse_corpus_with_vocab(in, loaded.vocab);
  TaskData data = build_task_data(cfg, segments, loaded.vocab);
  if (data.eval.empty()) throw ConfigError("finetune: evaluation split is empty");
  if (data.label_names.empty()) throw ConfigError("finetune: ground truth has no labels");

  const int d = model.encoder.cfg.hidden_dim;
  const int feat_dim = cfg.finetune.task == "relation-cls" ? 2 * d : d;
  Head head;
  head.w = Tensor<float>::zeros({static_cast<int>(data.label_names.size()), feat_dim}, true);
  head.b = Tensor<float>::zeros({static_cast<int>(data.label_names.size())}, true);

  NamedParams<float> params = model.encoder_params_only();
  params.emplace_back(kHeadW, head.w);
  params.emplace_back(kHeadB, head.b);
  OptimizerHyper hp = cfg.optimizer;
  hp.learning_rate = cfg.finetune.learning_rate;
  AdamW<float> opt(hp);
  Rng dropout_rng(Rng::mix(cfg.seed, seeds::kDropout + 1));

  FinetuneOutcome out;
  out.log.seed = cfg.seed;
  long step = 0;
  for (int epoch = 0; epoch < cfg.finetune.epochs; ++epoch) {
    std::vector<TaskInstance> order = data.train;
    Rng shuffle_rng(Rng::mix(cfg.seed, seeds::kFinetuneEpoch + static_cast<std::uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.finetune.batch_segments)) {
      std::vector<TaskInstance> chunk(
          order.begin() + static_cast<long>(at),
          order.begin() + static_cast<long>(std::min(order.size(),
                                                     at + static_cast<std::size_t>(cfg.finetune.batch_segments))));
      Tape<float> tape;
      auto logits = instance_logits(tape, model, head, segments, loaded.vocab, chunk,
                                    model.encoder.cfg.dropout_rate > 0 ? &dropout_rng : nullptr);
      std::vector<int> labels;
      for (const auto& inst : chunk) labels.push_back(inst.label);
      auto loss = cross_entropy_mean(tape, logits, labels);
      tape.backward(loss);
      opt.step(params, cfg.finetune.learning_rate);
      zero_grads(params);

      StepMetrics m;
      m.step = ++step;
      m.l_plm = static_cast<double>(loss.item());
      m.lr = cfg.finetune.learning_rate;
      out.log.add_step(m);
    }
    MicroCounts overall, ambiguous;
    eval_pass(model, head, segments, loaded.vocab, data.eval, cfg.finetune.batch_segments,
              overall, ambiguous);
    EvalRecord rec;
    rec.task = cfg.finetune.task;
    rec.split = "eval/epoch" + std::to_string(epoch + 1);
    rec.precision = overall.precision();
    rec.recall = overall.recall();
    rec.micro_f1 = overall.micro_f1();
    rec.instances = overall.tp + overall.fp;
    out.log.add_eval(rec);
  }

  MicroCounts overall, ambiguous;
  eval_pass(model, head, segments, loaded.vocab, data.eval, cfg.finetune.batch_segments, overall,
            ambiguous);
  out.overall = summarize(overall);
  out.ambiguous = summarize(ambiguous);

  EvalRecord final_rec;
  final_rec.task = cfg.finetune.task;
  final_rec.split = "eval/final";
  final_rec.precision = out.overall.precision;
  final_rec.recall = out.overall.recall;
  final_rec.micro_f1 = out.overall.micro_f1;
  final_rec.instances = out.overall.instances;
  out.log.add_eval(final_rec);

  // the fine-tuned archive carries the head next to the encoder tensors
  model.fusion.cfg.enabled = loaded.cfg.fusion.enabled;
  CheckpointData ckpt = to_checkpoint(model, static_cast<AdamW<float>*>(nullptr), cfg, loaded.vocab, step);
  ckpt.tensors.emplace_back(kHeadW, record_from(head.w));
  ckpt.tensors.emplace_back(kHeadB, record_from(head.b));
  out.checkpoint_path = (fs::path(cfg.paths.out_dir) / "finetuned.kplt").string();
  save_checkpoint_file(ckpt, out.checkpoint_path);
  out.log.write_steps_csv((fs::path(cfg.paths.out_dir) / "finetune_metrics.csv").string());
  out.log.write_evals_csv((fs::path(cfg.paths.out_dir) / "eval_metrics.csv").string());
  return out;
}

EvalSummary evaluate_checkpoint(const std::string& finetuned_path) {
  auto loaded = load_model_checkpoint<float>(finetuned_path);
  Model<float>& model = loaded.model;
  model.fusion.cfg.enabled = false;
  const RunConfig& cfg = loaded.cfg;

  const TensorRecord* wrec = loaded.raw.find(kHeadW);
  const TensorRecord* brec = loaded.raw.find(kHeadB);
  if (!wrec || !brec)
    throw ConfigError("evaluate: checkpoint has no fine-tuned head for task '" +
                      cfg.finetune.task + "'");
  Head head;
  head.w = tensor_from<float>(*wrec, false);
  head.b = tensor_from<float>(*brec, false);

  std::ifstream in(cfg.paths.corpus);
  if (!in) throw ConfigError("cannot open corpus file '" + cfg.paths.corpus + "'");
  std::vector<Segment> segments = parse_corpus_with_vocab(in, loaded.vocab);
  TaskData data = build_task_data(cfg, segments, loaded.vocab);
  if (data.eval.empty()) throw ConfigError("evaluate: evaluation split is empty");

  MicroCounts overall, ambiguous;
  eval_pass(model, head, segments, loaded.vocab, data.eval, cfg.finetune.batch_segments, overall,
            ambiguous);
  return summarize(cfg.finetune.ambiguous_eval_only ? ambiguous : overall);
}

}  // namespace topiclm
