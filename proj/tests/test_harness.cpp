#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "topiclm/downstream.hpp"
#include "topiclm/gate_report.hpp"
#include "topiclm/sweep.hpp"
#include "topiclm/trainer.hpp"

using namespace topiclm;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / "topiclm_harness" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// Small corpus + config that trains in well under a second.
RunConfig tiny_run(const fs::path& dir, int steps = 30) {
  SynthSpec spec;
  spec.n_entities = 10;
  spec.n_types = 5;
  spec.pages = 10;
  spec.sentences_per_page = 6;
  spec.ambiguity_rate = 0.3;
  spec.pronoun_rate = 0.4;
  spec.seed = 9;
  generate_synthetic_files(spec, (dir / "corpus").string());

  RunConfig cfg;
  cfg.paths.corpus = (dir / "corpus" / "corpus.jsonl").string();
  cfg.paths.ground_truth_dir = (dir / "corpus").string();
  cfg.paths.out_dir = (dir / "run").string();
  cfg.model.num_layers = 2;
  cfg.model.hidden_dim = 16;
  cfg.model.num_heads = 4;
  cfg.model.ffn_dim = 32;
  cfg.model.entity_embed_dim = 16;
  cfg.model.max_positions = 32;
  cfg.model.dropout_rate = 0.1;
  cfg.schedule.total_steps = steps;
  cfg.schedule.warmup_steps = 10;
  cfg.schedule.batch_size = 4;
  cfg.schedule.checkpoint_interval = 20;
  cfg.finetune.epochs = 1;
  cfg.finetune.batch_segments = 8;
  cfg.seed = 5;
  return cfg;
}

}  // namespace

TEST_CASE("warmup schedule is exact") {
  const double lr = 0.02;
  for (long s = 1; s < 10; ++s) CHECK(scheduled_lr(lr, s, 10) == lr * s / 10.0);
  CHECK(scheduled_lr(lr, 10, 10) == lr);
  CHECK(scheduled_lr(lr, 500, 10) == lr);
  CHECK(scheduled_lr(lr, 3, 0) == lr);
}

TEST_CASE("micro-F1 from pooled counts") {
  MicroCounts all_right;
  for (int i = 0; i < 12; ++i) all_right.add(i % 3, i % 3);
  CHECK(all_right.precision() == 1.0);
  CHECK(all_right.recall() == 1.0);
  CHECK(all_right.micro_f1() == 1.0);

  // constant class on a balanced 4-class set
  MicroCounts constant;
  for (int i = 0; i < 40; ++i) constant.add(0, i % 4);
  CHECK(constant.micro_f1() == doctest::Approx(0.25));

  // confusion matrix [[3,1],[1,3]]
  MicroCounts conf;
  for (int i = 0; i < 3; ++i) conf.add(0, 0);
  conf.add(1, 0);
  conf.add(0, 1);
  for (int i = 0; i < 3; ++i) conf.add(1, 1);
  CHECK(conf.micro_f1() == doctest::Approx(0.75));
}

TEST_CASE("metrics log rejects regressions and non-finite values") {
  MetricsLog log;
  log.add_step({1, 1.0, 1.0, 0.0, 0.01});
  CHECK_THROWS_AS(log.add_step({1, 1.0, 1.0, 0.0, 0.01}), ValidationError);
  CHECK_THROWS_AS(log.add_step({2, std::nan(""), 1.0, 0.0, 0.01}), NumericError);
  log.add_step({2, 0.9, 1.0, 0.0, 0.01});
  CHECK(log.steps.size() == 2);
}

TEST_CASE("config json round trip") {
  RunConfig cfg;
  cfg.seed = 42;
  cfg.fusion.kind = FusionKind::kConcat;
  cfg.fusion.layer_indices = {1, 2};
  cfg.contrastive.weight = 0.5;
  cfg.masking.word_rate = 0.2;
  cfg.schedule.total_steps = 77;
  RunConfig back = run_config_from_json_text(run_config_to_json_text(cfg));
  CHECK(back.seed == 42);
  CHECK(back.fusion.kind == FusionKind::kConcat);
  CHECK(back.fusion.layer_indices == std::vector<int>{1, 2});
  CHECK(back.contrastive.weight == 0.5);
  CHECK(back.masking.word_rate == 0.2);
  CHECK(back.schedule.total_steps == 77);

  CHECK_THROWS_AS(run_config_from_json_text("{\"nope\": 1}"), ConfigError);
  CHECK_THROWS_AS(run_config_from_json_text("not json"), ConfigError);
}

TEST_CASE("pretrain: determinism, zero steps, metrics") {
  auto dir = scratch("pretrain");
  RunConfig cfg = tiny_run(dir);

  cfg.paths.out_dir = (dir / "a").string();
  PretrainResult a = pretrain(cfg);
  cfg.paths.out_dir = (dir / "b").string();
  PretrainResult b = pretrain(cfg);
  CHECK(slurp(a.checkpoint_path) == slurp(b.checkpoint_path));
  CHECK(a.log.steps.size() == 30);
  for (std::size_t i = 1; i < a.log.steps.size(); ++i)
    CHECK(a.log.steps[i].step == a.log.steps[i - 1].step + 1);
  // warmup honored in the logged learning rates
  for (const auto& m : a.log.steps)
    CHECK(m.lr == scheduled_lr(cfg.optimizer.learning_rate, m.step, cfg.schedule.warmup_steps));
  CHECK(fs::exists(fs::path(a.checkpoint_path).parent_path() / "train_metrics.csv"));
  CHECK(fs::exists(fs::path(a.checkpoint_path).parent_path() / "model_step20.kplt"));

  // zero steps: the checkpoint holds the initialization
  cfg.schedule.total_steps = 0;
  cfg.paths.out_dir = (dir / "zero").string();
  PretrainResult z = pretrain(cfg);
  auto loaded = load_model_checkpoint<float>(z.checkpoint_path);
  Corpus corpus = parse_corpus_file(cfg.paths.corpus);
  RunConfig resolved = cfg;
  resolved.model = resolve_model_config(cfg.model, corpus.vocab);
  Rng init(Rng::mix(cfg.seed, seeds::kInit));
  Model<float> fresh = Model<float>::init(resolved, corpus.vocab, init);
  CHECK(loaded.model.encoder.word_emb.values() == fresh.encoder.word_emb.values());
  CHECK(loaded.model.encoder.layers[0].attn_wq.values() == fresh.encoder.layers[0].attn_wq.values());
}

TEST_CASE("pretrain: diverging run aborts, last good checkpoint retained") {
  auto dir = scratch("abort");
  RunConfig cfg = tiny_run(dir, 40);
  cfg.optimizer.learning_rate = 1e9;  // forces inf gradients within a few steps
  cfg.schedule.warmup_steps = 0;
  cfg.schedule.checkpoint_interval = 1;
  try {
    pretrain(cfg);
    FAIL("expected a numeric abort");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("last good checkpoint") != std::string::npos);
  }
  // the retained checkpoint exists and its tensors are finite
  std::vector<fs::path> kept;
  for (const auto& entry : fs::directory_iterator(cfg.paths.out_dir))
    if (entry.path().filename().string().rfind("model_step", 0) == 0)
      kept.push_back(entry.path());
  REQUIRE(!kept.empty());
  std::sort(kept.begin(), kept.end());
  auto loaded = load_model_checkpoint<float>(kept.back().string());
  for (auto& [name, p] : loaded.model.named_params())
    for (long i = 0; i < p.numel(); ++i) CHECK(std::isfinite(static_cast<double>(p.data()[i])));
}

TEST_CASE("finetune: chance at zero epochs, fusion parameters never read") {
  auto dir = scratch("finetune");
  RunConfig cfg = tiny_run(dir, 40);
  PretrainResult pre = pretrain(cfg);

  // zero-epoch fine-tune evaluates the frozen encoder with a zero head
  RunConfig zero = cfg;
  zero.finetune.epochs = 0;
  zero.paths.out_dir = (dir / "zero").string();
  FinetuneOutcome frozen = finetune(zero, pre.checkpoint_path);
  CHECK(frozen.overall.micro_f1 < 0.55);  // chance is 1/5 on balanced types

  RunConfig ft = cfg;
  ft.paths.out_dir = (dir / "ft1").string();
  FinetuneOutcome first = finetune(ft, pre.checkpoint_path);

  // zero out every fusion tensor in the checkpoint and fine-tune again
  CheckpointData raw = load_checkpoint_file(pre.checkpoint_path);
  for (auto& [name, rec] : raw.tensors)
    if (name.rfind("fusion.", 0) == 0)
      std::fill(rec.payload.begin(), rec.payload.end(), std::uint8_t{0});
  const std::string zeroed_path = (dir / "zeroed.kplt").string();
  save_checkpoint_file(raw, zeroed_path);
  ft.paths.out_dir = (dir / "ft2").string();
  FinetuneOutcome second = finetune(ft, zeroed_path);

  CHECK(first.overall.micro_f1 == second.overall.micro_f1);
  CHECK(first.overall.precision == second.overall.precision);
  CHECK(first.ambiguous.micro_f1 == second.ambiguous.micro_f1);
  REQUIRE(first.log.steps.size() == second.log.steps.size());
  for (std::size_t i = 0; i < first.log.steps.size(); ++i)
    CHECK(first.log.steps[i].l_plm == second.log.steps[i].l_plm);

  // the standalone evaluator agrees with the fine-tune-time evaluation
  EvalSummary replay = evaluate_checkpoint(first.checkpoint_path);
  CHECK(replay.micro_f1 == doctest::Approx(first.overall.micro_f1));
}

TEST_CASE("finetune: micro-F1 invariant under consistent label permutation") {
  auto dir = scratch("perm");
  RunConfig cfg = tiny_run(dir, 40);
  PretrainResult pre = pretrain(cfg);

  cfg.paths.out_dir = (dir / "orig").string();
  FinetuneOutcome orig = finetune(cfg, pre.checkpoint_path);

  // rename labels so their sorted order (and hence the id assignment) permutes
  const fs::path gt2 = dir / "gt_permuted";
  fs::create_directories(gt2);
  {
    std::ifstream in(fs::path(cfg.paths.ground_truth_dir) / "entity_types.tsv");
    std::ofstream out(gt2 / "entity_types.tsv");
    std::string line;
    while (std::getline(in, line)) {
      auto tab = line.find('\t');
      const std::string name = line.substr(0, tab);
      const std::string label = line.substr(tab + 1);
      const int k = label.back() - '0';
      out << name << "\tt" << (k + 2) % 5 << "\n";
    }
    fs::copy_file(fs::path(cfg.paths.ground_truth_dir) / "ambiguity_map.tsv",
                  gt2 / "ambiguity_map.tsv");
  }
  RunConfig permuted = cfg;
  permuted.paths.ground_truth_dir = gt2.string();
  permuted.paths.out_dir = (dir / "perm").string();
  FinetuneOutcome perm = finetune(permuted, pre.checkpoint_path);

  CHECK(perm.overall.micro_f1 == orig.overall.micro_f1);
  CHECK(perm.ambiguous.micro_f1 == orig.ambiguous.micro_f1);
}

TEST_CASE("finetune: relation task runs and missing ground truth errors") {
  auto dir = scratch("relation");
  RunConfig cfg = tiny_run(dir, 20);
  PretrainResult pre = pretrain(cfg);

  RunConfig rel = cfg;
  rel.finetune.task = "relation-cls";
  rel.paths.out_dir = (dir / "rel").string();
  FinetuneOutcome out = finetune(rel, pre.checkpoint_path);
  CHECK(out.overall.instances > 0);
  CHECK(out.overall.micro_f1 >= 0.0);

  RunConfig missing = cfg;
  missing.paths.ground_truth_dir = (dir / "nowhere").string();
  CHECK_THROWS_AS(finetune(missing, pre.checkpoint_path), ConfigError);

  RunConfig badtask = cfg;
  badtask.finetune.task = "parsing";
  CHECK_THROWS_AS(finetune(badtask, pre.checkpoint_path), ConfigError);
}

TEST_CASE("gate report: ranking, ties, clamping, determinism, no-fusion error") {
  auto dir = scratch("gate");
  RunConfig cfg = tiny_run(dir, 25);
  PretrainResult pre = pretrain(cfg);
  Corpus corpus = parse_corpus_file(cfg.paths.corpus);
  std::vector<Segment> slice(corpus.segments.begin(), corpus.segments.begin() + 6);

  const std::string txt = (dir / "report.txt").string();
  const std::string html = (dir / "report.html").string();
  auto rep = gate_report(pre.checkpoint_path, slice, corpus.vocab, 50, txt, html);
  REQUIRE(rep.segments.size() == 6);
  for (const auto& sg : rep.segments) {
    for (std::size_t i = 1; i < sg.positions.size(); ++i) {
      CHECK(sg.positions[i - 1].value >= sg.positions[i].value);
      if (sg.positions[i - 1].value == sg.positions[i].value)
        CHECK(sg.positions[i - 1].position < sg.positions[i].position);  // documented tie-break
    }
    for (const auto& p : sg.positions) {
      CHECK(p.value > 0.0);
      CHECK(p.value < 1.0);
    }
    // top_k 50 exceeds every sequence length: all positions listed
    CHECK(sg.positions.size() >= 5);
  }
  CHECK(fs::exists(txt));
  CHECK(fs::exists(html));

  auto rep2 = gate_report(pre.checkpoint_path, slice, corpus.vocab, 50,
                          (dir / "report2.txt").string(), "");
  CHECK(slurp(txt) == slurp(dir / "report2.txt"));

  // constant gate weights tie everywhere; ranking falls back to position order
  {
    CheckpointData raw = load_checkpoint_file(pre.checkpoint_path);
    for (auto& [name, rec] : raw.tensors)
      if (name.rfind("fusion.", 0) == 0 && name.find("gate") != std::string::npos)
        std::fill(rec.payload.begin(), rec.payload.end(), std::uint8_t{0});
    const std::string tied_path = (dir / "tied.kplt").string();
    save_checkpoint_file(raw, tied_path);
    auto tied = gate_report(tied_path, slice, corpus.vocab, 50, "", "");
    for (const auto& sg : tied.segments) {
      for (const auto& p : sg.positions) CHECK(p.value == doctest::Approx(0.5));
      for (std::size_t i = 1; i < sg.positions.size(); ++i)
        CHECK(sg.positions[i - 1].position < sg.positions[i].position);
    }
  }

  // a fusion-disabled checkpoint cannot produce a report
  RunConfig off = cfg;
  off.fusion.enabled = false;
  off.contrastive.weight = 0.0;
  off.paths.out_dir = (dir / "off").string();
  PretrainResult pre_off = pretrain(off);
  CHECK_THROWS_WITH_AS(gate_report(pre_off.checkpoint_path, slice, corpus.vocab, 50, "", ""),
                       doctest::Contains("no fusion module"), ConfigError);
}

TEST_CASE("sweep: ablation axis emits one row per setting with per-seed cells") {
  auto dir = scratch("sweep");
  RunConfig cfg = tiny_run(dir, 12);
  cfg.finetune.epochs = 1;
  SweepTable table = run_sweep(cfg, "ablation", 2);
  REQUIRE(table.rows.size() == 2);
  CHECK(table.rows[0].setting == "fusion_contrastive_on");
  CHECK(table.rows[1].setting == "both_off");
  for (const auto& row : table.rows) {
    CHECK(row.cells.size() == 2);
    CHECK(row.cells[0].seed == cfg.seed);
    CHECK(row.cells[1].seed == cfg.seed + 1);
  }
  CHECK(fs::exists(fs::path(cfg.paths.out_dir) / "sweep_ablation" / "table.tsv"));

  std::ostringstream os;
  write_sweep_table(table, os);
  CHECK(os.str().find("ablation\tfusion_contrastive_on") != std::string::npos);

  CHECK_THROWS_AS(run_sweep(cfg, "bogus_axis", 1), ConfigError);
}
