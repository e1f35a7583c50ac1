// Command-line front end: corpus generation, pretraining, fine-tuning,
// evaluation, gate reports, gradient checks and sweeps.

#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "topiclm/downstream.hpp"
#include "topiclm/gate_report.hpp"
#include "topiclm/gradcheck.hpp"
#include "topiclm/sweep.hpp"
#include "topiclm/trainer.hpp"

namespace fs = std::filesystem;
using namespace topiclm;

namespace {

struct CommonOpts {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out_dir;
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config_path, "JSON run configuration");
  cmd->add_option("--seed", opts.seed, "override the config seed")
      ->each([&opts](const std::string&) { opts.seed_set = true; });
  cmd->add_option("--out", opts.out_dir, "override paths.out_dir");
}

RunConfig resolve_config(const CommonOpts& opts, const std::string& mode) {
  RunConfig cfg = opts.config_path.empty() ? RunConfig{} : load_run_config(opts.config_path);
  if (opts.seed_set) cfg.seed = opts.seed;
  if (!opts.out_dir.empty()) cfg.paths.out_dir = opts.out_dir;
  cfg.mode = mode;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"topic-entity-aware language model workbench"};
  app.require_subcommand(1);

  CommonOpts gen_opts, pre_opts, fine_opts, eval_opts, gate_opts, grad_opts, sweep_opts;

  auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic corpus + ground truth");
  add_common(gen, gen_opts);

  auto* pre = app.add_subcommand("pretrain", "run the pretraining loop");
  add_common(pre, pre_opts);

  auto* fine = app.add_subcommand("finetune", "fine-tune a pretrained checkpoint");
  add_common(fine, fine_opts);
  std::string fine_ckpt, fine_task;
  fine->add_option("--checkpoint", fine_ckpt, "pretrained checkpoint")->required();
  fine->add_option("--task", fine_task, "entity-typing or relation-cls");

  auto* evalc = app.add_subcommand("eval", "evaluate a fine-tuned checkpoint");
  add_common(evalc, eval_opts);
  std::string eval_ckpt;
  evalc->add_option("--checkpoint", eval_ckpt, "fine-tuned checkpoint")->required();

  auto* gate = app.add_subcommand("gate-report", "rank fusing positions of a trained model");
  add_common(gate, gate_opts);
  std::string gate_ckpt;
  int gate_segments = 16, gate_topk = 50;
  gate->add_option("--checkpoint", gate_ckpt, "pretrained checkpoint")->required();
  gate->add_option("--segments", gate_segments, "number of corpus segments to report");
  gate->add_option("--top-k", gate_topk, "positions highlighted per segment");

  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient suite (64-bit)");
  add_common(grad, grad_opts);

  auto* sweep = app.add_subcommand("sweep", "compare fusion settings across seeds");
  add_common(sweep, sweep_opts);
  std::string sweep_axis = "ablation";
  int sweep_seeds = 3;
  sweep->add_option("--axis", sweep_axis, "fusion_kind | fusion_layer | fusion_count | ablation");
  sweep->add_option("--seeds", sweep_seeds, "seeds per setting");

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) {
      RunConfig cfg = resolve_config(gen_opts, "gen-corpus");
      SynthSpec spec = cfg.synth;
      if (gen_opts.seed_set) spec.seed = cfg.seed;
      auto res = generate_synthetic_files(spec, cfg.paths.out_dir);
      std::cout << "wrote " << res.corpus.segments.size() << " segments, "
                << res.corpus.vocab.word_count() << " words, "
                << res.corpus.vocab.entity_count() << " entities under " << cfg.paths.out_dir
                << "\n";
    } else if (pre->parsed()) {
      RunConfig cfg = resolve_config(pre_opts, "pretrain");
      PretrainResult res = pretrain(cfg);
      std::cout << "pretrained " << res.steps << " steps; masked-word loss first-50 mean "
                << res.early_lplm_mean << ", final " << res.final_lplm
                << "; masked-entity accuracy " << res.final_entity_accuracy << "\n"
                << "checkpoint: " << res.checkpoint_path << "\n";
    } else if (fine->parsed()) {
      RunConfig cfg = resolve_config(fine_opts, "finetune");
      if (!fine_task.empty()) cfg.finetune.task = fine_task;
      FinetuneOutcome res = finetune(cfg, fine_ckpt);
      std::cout << "task " << cfg.finetune.task << ": micro-F1 " << res.overall.micro_f1
                << " over " << res.overall.instances << " instances";
      if (res.ambiguous.instances > 0)
        std::cout << "; ambiguous-only micro-F1 " << res.ambiguous.micro_f1 << " over "
                  << res.ambiguous.instances;
      std::cout << "\ncheckpoint: " << res.checkpoint_path << "\n";
    } else if (evalc->parsed()) {
      EvalSummary res = evaluate_checkpoint(eval_ckpt);
      std::cout << "precision " << res.precision << " recall " << res.recall << " micro-F1 "
                << res.micro_f1 << " over " << res.instances << " instances\n";
    } else if (gate->parsed()) {
      RunConfig cfg = resolve_config(gate_opts, "gate-report");
      auto loaded = load_model_checkpoint<float>(gate_ckpt);
      std::ifstream in(cfg.paths.corpus.empty() ? loaded.cfg.paths.corpus : cfg.paths.corpus);
      if (!in) throw ConfigError("gate-report: cannot open corpus");
      auto segments = parse_corpus_with_vocab(in, loaded.vocab);
      if (static_cast<int>(segments.size()) > gate_segments)
        segments.resize(static_cast<std::size_t>(gate_segments));
      fs::create_directories(cfg.paths.out_dir);
      const std::string txt = (fs::path(cfg.paths.out_dir) / "gate_report.txt").string();
      const std::string html = (fs::path(cfg.paths.out_dir) / "gate_report.html").string();
      auto res = gate_report(gate_ckpt, segments, loaded.vocab, gate_topk, txt, html);
      std::cout << "gate report over " << res.segments.size() << " segments (fusion layer "
                << res.fusion_layer << ")\n"
                << "mean gate all=" << res.mean_all << " pronouns=" << res.mean_pronoun << "\n"
                << "wrote " << txt << " and " << html << "\n";
    } else if (grad->parsed()) {
      RunConfig cfg = resolve_config(grad_opts, "gradcheck");
      auto entries = run_gradient_suite(cfg.seed ? cfg.seed : 1234);
      for (const auto& e : entries)
        std::cout << (e.pass ? "PASS " : "FAIL ") << e.name << " rel_err=" << e.rel_err << "\n";
      if (!all_passed(entries)) {
        std::cerr << "gradient suite failed\n";
        return 1;
      }
    } else if (sweep->parsed()) {
      RunConfig cfg = resolve_config(sweep_opts, "sweep");
      SweepTable table = run_sweep(cfg, sweep_axis, sweep_seeds);
      write_sweep_table(table, std::cout);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
