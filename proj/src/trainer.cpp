#include "topiclm/trainer.hpp"

#include <cmath>
#include <filesystem>

namespace topiclm {

namespace fs = std::filesystem;

namespace {

bool all_finite(const NamedParams<float>& params) {
  for (const auto& [name, p] : params)
    for (long i = 0; i < p.numel(); ++i)
      if (!std::isfinite(static_cast<double>(p.data()[i]))) return false;
  return true;
}

[[noreturn]] void abort_run(const std::string& why, long step, const std::string& last_good) {
  throw NumericError(why + "; aborting at step " + std::to_string(step) +
                     (last_good.empty() ? " (no checkpoint written yet)"
                                        : ", last good checkpoint: " + last_good));
}

}  // namespace

PretrainResult pretrain(const RunConfig& run) {
  if (run.paths.corpus.empty()) throw ConfigError("pretrain: paths.corpus not set");
  Corpus corpus = parse_corpus_file(run.paths.corpus);
  if (corpus.segments.empty()) throw ConfigError("pretrain: corpus has no segments");

  RunConfig cfg = run;
  cfg.model = resolve_model_config(cfg.model, corpus.vocab);
  cfg.mode = "pretrain";
  fs::create_directories(cfg.paths.out_dir);

  Rng init_rng(Rng::mix(cfg.seed, seeds::kInit));
  Model<float> model = Model<float>::init(cfg, corpus.vocab, init_rng);
  auto named = model.named_params();
  AdamW<float> opt(cfg.optimizer);
  Rng dropout_rng(Rng::mix(cfg.seed, seeds::kDropout));

  PretrainResult result;
  result.steps = cfg.schedule.total_steps;
  result.log.seed = cfg.seed;

  std::vector<std::vector<int>> batches;
  long batch_cursor = 0;
  long epoch = 0;

  std::string last_good;
  const fs::path out_dir(cfg.paths.out_dir);

  double early_sum = 0;
  long early_n = 0;
  double acc_correct = 0, acc_total = 0;  // over the trailing 50 steps
  std::vector<std::pair<int, int>> acc_window;

  for (long s = 1; s <= cfg.schedule.total_steps; ++s) {
    if (batches.empty() || batch_cursor >= static_cast<long>(batches.size())) {
      batches = make_batches(corpus.segments, cfg.schedule.batch_size,
                             Rng::mix(cfg.seed, seeds::kEpoch + static_cast<std::uint64_t>(epoch)));
      batch_cursor = 0;
      ++epoch;
    }
    std::vector<Segment> segs;
    for (int ix : batches[static_cast<std::size_t>(batch_cursor++)])
      segs.push_back(corpus.segments[static_cast<std::size_t>(ix)]);
    MaskedBatch batch =
        mask_batch(segs, corpus.vocab, cfg.masking.word_rate, cfg.masking.entity_rate,
                   Rng::mix(cfg.seed, seeds::kMask + static_cast<std::uint64_t>(s)),
                   cfg.model.max_positions - 2);

    const double lr = scheduled_lr(cfg.optimizer.learning_rate, s, cfg.schedule.warmup_steps);

    Tape<float> tape;
    StepResult<float> step;
    try {
      step = model_forward(tape, model, batch, cfg.contrastive,
                           cfg.model.dropout_rate > 0 ? &dropout_rng : nullptr);
    } catch (const NumericError& e) {
      abort_run(e.what(), s, last_good);
    }
    StepMetrics m;
    m.step = s;
    m.l_plm = static_cast<double>(step.l_plm.item());
    m.l_aux = static_cast<double>(step.l_aux.item());
    m.l_contrastive = static_cast<double>(step.l_con.item());
    m.lr = lr;
    if (!std::isfinite(m.l_plm) || !std::isfinite(m.l_aux) || !std::isfinite(m.l_contrastive))
      abort_run("non-finite loss", s, last_good);
    tape.backward(step.total);
    opt.step(named, lr);
    zero_grads(named);
    result.log.add_step(m);

    if (early_n < 50) {
      early_sum += m.l_plm;
      ++early_n;
    }
    acc_window.emplace_back(step.base.ent_correct, step.base.ent_total);
    if (acc_window.size() > 50) acc_window.erase(acc_window.begin());
    result.final_lplm = m.l_plm;

    if (cfg.schedule.checkpoint_interval > 0 && s % cfg.schedule.checkpoint_interval == 0) {
      if (!all_finite(named)) abort_run("non-finite parameters after update", s, last_good);
      const std::string path = (out_dir / ("model_step" + std::to_string(s) + ".kplt")).string();
      save_model_checkpoint(model, &opt, cfg, corpus.vocab, s, path);
      last_good = path;
    }
  }
  if (!all_finite(named))
    abort_run("non-finite parameters after update", cfg.schedule.total_steps, last_good);

  result.early_lplm_mean = early_n ? early_sum / static_cast<double>(early_n) : 0.0;
  for (const auto& [c, t] : acc_window) {
    acc_correct += c;
    acc_total += t;
  }
  result.final_entity_accuracy = acc_total > 0 ? acc_correct / acc_total : 0.0;

  result.checkpoint_path = (out_dir / "model.kplt").string();
  save_model_checkpoint(model, &opt, cfg, corpus.vocab, cfg.schedule.total_steps,
                        result.checkpoint_path);
  result.log.write_steps_csv((out_dir / "train_metrics.csv").string());
  return result;
}

}  // namespace topiclm
