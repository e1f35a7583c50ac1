// Acceptance suite: runs every gate criterion end to end and prints one
// PASS/FAIL line per criterion. Exit code is the number of failures.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <vector>

#include "topiclm/downstream.hpp"
#include "topiclm/gate_report.hpp"
#include "topiclm/gradcheck.hpp"
#include "topiclm/sweep.hpp"
#include "topiclm/trainer.hpp"

using namespace topiclm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const std::string& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

fs::path g_out;

// Desk-scale default run: 1,000 segments over 50 entities in 5 types.
RunConfig desk_config(const std::string& name) {
  RunConfig cfg;
  cfg.synth.n_entities = 50;
  cfg.synth.n_types = 5;
  cfg.synth.n_relations = 10;
  cfg.synth.pages = 50;
  cfg.synth.sentences_per_page = 20;
  cfg.synth.ambiguity_rate = 0.3;
  cfg.synth.pronoun_rate = 0.4;
  cfg.synth.seed = 1;
  cfg.model.num_layers = 2;
  cfg.model.hidden_dim = 64;
  cfg.model.num_heads = 4;
  cfg.model.ffn_dim = 256;
  cfg.model.entity_embed_dim = 64;
  cfg.model.max_positions = 128;
  cfg.model.dropout_rate = 0.1;
  cfg.schedule.total_steps = 1500;
  cfg.schedule.warmup_steps = 100;
  cfg.schedule.batch_size = 16;
  cfg.schedule.checkpoint_interval = 500;
  cfg.finetune.epochs = 3;
  cfg.finetune.batch_segments = 16;
  cfg.seed = 1;
  cfg.paths.out_dir = (g_out / name).string();
  return cfg;
}

std::string ensure_corpus(const SynthSpec& spec, const std::string& name) {
  const fs::path dir = g_out / name;
  if (!fs::exists(dir / "corpus.jsonl")) generate_synthetic_files(spec, dir.string());
  return dir.string();
}

// ---------------------------------------------------------------------------
// 1. gradient suite
// ---------------------------------------------------------------------------
Outcome criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  auto entries = run_gradient_suite(1234, 1e-3, 10);
  const double secs = seconds_since(t0);
  double worst = 0;
  std::string worst_name;
  bool ok = true;
  for (const auto& e : entries) {
    if (!e.pass) ok = false;
    if (e.rel_err > worst) {
      worst = e.rel_err;
      worst_name = e.name;
    }
  }
  std::ostringstream os;
  os << entries.size() << " checks, worst rel err " << worst << " (" << worst_name << "), "
     << secs << "s";
  if (secs > 120) ok = false;
  return {ok, os.str()};
}

// ---------------------------------------------------------------------------
// 2. contrastive oracle on 100 random batches
// ---------------------------------------------------------------------------
double contrastive_oracle(const std::vector<std::vector<double>>& vecs,
                          const std::vector<int>& topics, double tau) {
  const int n = static_cast<int>(vecs.size());
  auto norm = [](const std::vector<double>& v) {
    double s = 0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
  };
  auto sim = [&](int i, int j) {
    double dot = 0;
    for (std::size_t k = 0; k < vecs[static_cast<std::size_t>(i)].size(); ++k)
      dot += vecs[static_cast<std::size_t>(i)][k] * vecs[static_cast<std::size_t>(j)][k];
    return dot / ((norm(vecs[static_cast<std::size_t>(i)]) + 1e-8) *
                  (norm(vecs[static_cast<std::size_t>(j)]) + 1e-8));
  };
  double total = 0;
  long pairs = 0;
  for (int i = 0; i < n; ++i) {
    std::vector<int> negs;
    for (int j = 0; j < n; ++j)
      if (topics[static_cast<std::size_t>(j)] != topics[static_cast<std::size_t>(i)])
        negs.push_back(j);
    if (negs.empty()) continue;
    for (int j = 0; j < n; ++j) {
      if (j == i || topics[static_cast<std::size_t>(j)] != topics[static_cast<std::size_t>(i)])
        continue;
      double denom = std::exp(sim(i, j) / tau);
      for (int q : negs) denom += std::exp(sim(i, q) / tau);
      total += -std::log(std::exp(sim(i, j) / tau) / denom);
      ++pairs;
    }
  }
  return pairs == 0 ? 0.0 : total / static_cast<double>(pairs);
}

Outcome criterion_contrastive_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(2024);
  ContrastiveConfig cfg;  // tau = 0.07
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n_seg = 2 + rng.uniform_int(7);
    const int n_topic = 2 + rng.uniform_int(3);
    std::vector<std::vector<double>> vecs;
    std::vector<int> topics;
    for (int s = 0; s < n_seg; ++s) {
      const int topic = rng.uniform_int(n_topic);
      for (int r = 0; r < 2; ++r) {
        std::vector<double> v(8);
        for (auto& x : v) x = rng.normal();
        vecs.push_back(v);
        topics.push_back(topic);
      }
    }
    std::vector<double> flat;
    for (const auto& v : vecs) flat.insert(flat.end(), v.begin(), v.end());
    Tape<double> tape;
    DeltaSet<double> delta;
    delta.vectors = Tensor<double>({static_cast<int>(vecs.size()), 8}, flat, true);
    delta.topic_of_row = topics;
    const double got = contrastive_loss(tape, delta, cfg).item();
    const double want = contrastive_oracle(vecs, topics, cfg.temperature);
    worst = std::max(worst, std::abs(got - want));
  }
  const double secs = seconds_since(t0);
  std::ostringstream os;
  os << "100 batches, worst |diff| " << worst << ", " << secs << "s";
  return {worst < 1e-5 && secs < 30, os.str()};
}

// ---------------------------------------------------------------------------
// 3. analytic invariants
// ---------------------------------------------------------------------------
Outcome criterion_invariants() {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::string> failures;
  Rng rng(77);

  ModelConfig mc;
  mc.num_layers = 2;
  mc.hidden_dim = 8;
  mc.num_heads = 2;
  mc.ffn_dim = 16;
  mc.word_vocab_size = 12;
  mc.entity_vocab_size = 6;
  mc.entity_embed_dim = 8;
  mc.max_positions = 8;
  FusionConfig fc;
  fc.kind = FusionKind::kAttention;
  fc.layer_indices = {1};
  auto fparams = FusionParams<double>::init(fc, mc, rng);
  auto& fp = fparams.first_point();

  // gate bounds: strictly inside (0,1) on real positions, exactly 0 on padding
  {
    auto h = Tensor<double>::randn({2, 4, 8}, rng, 2.0);
    Tensor<double> mask = Tensor<double>::full({2, 4, 1}, 1.0);
    mask.data()[3] = 0.0;
    Tape<double> t;
    auto g = gate(t, h, fp, mask);
    for (long i = 0; i < g.numel(); ++i) {
      const double v = g.data()[i];
      const bool padded = (i == 3);
      if (padded && v != 0.0) failures.push_back("padding gate not zero");
      if (!padded && (v <= 0.0 || v >= 1.0)) failures.push_back("gate out of (0,1)");
    }
  }
  // softmax normalization on random input
  {
    Tape<double> t;
    auto x = Tensor<double>::randn({5, 9}, rng, 3.0);
    auto y = softmax(t, x, 1);
    for (int r = 0; r < 5; ++r) {
      double s = 0;
      for (int c = 0; c < 9; ++c) s += y.at({r, c});
      if (std::abs(s - 1.0) > 1e-6) failures.push_back("softmax row sum off");
    }
  }
  // LN pass-through at g = 0
  {
    Tape<double> t;
    auto h = Tensor<double>::randn({1, 3, 8}, rng, 1.0);
    auto h_hat = Tensor<double>::randn({1, 3, 8}, rng, 1.0);
    auto mask = Tensor<double>::full({1, 3, 1}, 1.0);
    auto out = fuse_combine(t, h, Tensor<double>::zeros({1, 3, 1}), h_hat, fp, mask);
    auto expect = layer_norm(t, h, fp.ln_scale, fp.ln_shift, 1e-5);
    for (long i = 0; i < out.numel(); ++i)
      if (std::abs(out.data()[i] - expect.data()[i]) > 1e-6)
        failures.push_back("gate-off limit violated");
  }
  // attention adapter with identical keys
  {
    Tape<double> t;
    Tensor<double> h({1, 1, 8}, std::vector<double>(8, 0.4));
    Tensor<double> e({1, 8}, std::vector<double>(8, 0.4));
    auto out = attention_adapter(t, h, e, fp);
    if (std::abs(out.weights.at({0, 0, 0}) - 0.5) > 1e-9)
      failures.push_back("symmetric keys not half-weighted");
    auto fv = linear(t, h, fp.value_w, fp.value_b);
    for (int j = 0; j < 8; ++j)
      if (std::abs(out.fused.at({0, 0, j}) - fv.at({0, 0, j})) > 1e-9)
        failures.push_back("symmetric-key output is not F_v(h)");
  }
  // uniform-similarity contrastive value ln(N+1)
  {
    Tape<double> t;
    std::vector<double> flat;
    std::vector<int> topics;
    for (int s = 0; s < 3; ++s)
      for (int r = 0; r < 2; ++r) {
        for (int k = 0; k < 4; ++k) flat.push_back(0.3 * (k + 1));
        topics.push_back(s);
      }
    DeltaSet<double> delta;
    delta.vectors = Tensor<double>({6, 4}, flat, true);
    delta.topic_of_row = topics;
    const double got = contrastive_loss(t, delta, ContrastiveConfig{}).item();
    if (std::abs(got - std::log(5.0)) > 1e-9) failures.push_back("ln(N+1) identity violated");
  }
  // single-topic batch contributes exactly zero
  {
    Tape<double> t;
    std::vector<double> flat;
    for (int i = 0; i < 24; ++i) flat.push_back(rng.normal());
    DeltaSet<double> delta;
    delta.vectors = Tensor<double>({4, 6}, flat, true);
    delta.topic_of_row = {3, 3, 3, 3};
    if (contrastive_loss(t, delta, ContrastiveConfig{}).item() != 0.0)
      failures.push_back("single-topic loss not exactly zero");
  }

  const double secs = seconds_since(t0);
  std::ostringstream os;
  if (failures.empty())
    os << "6 invariant groups hold, " << secs << "s";
  else {
    os << failures.size() << " violations: ";
    for (const auto& f : failures) os << f << "; ";
  }
  return {failures.empty() && secs < 60, os.str()};
}

// ---------------------------------------------------------------------------
// 4. desk-scale training progress
// ---------------------------------------------------------------------------
PretrainResult g_desk_result;
RunConfig g_desk_cfg;

Outcome criterion_training(bool& desk_ready) {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig cfg = desk_config("desk");
  const std::string corpus_dir = ensure_corpus(cfg.synth, "corpus_desk");
  cfg.paths.corpus = corpus_dir + "/corpus.jsonl";
  cfg.paths.ground_truth_dir = corpus_dir;
  PretrainResult res = pretrain(cfg);
  const double secs = seconds_since(t0);

  Corpus corpus = parse_corpus_file(cfg.paths.corpus);
  const double chance = 1.0 / static_cast<double>(corpus.vocab.entity_count());
  const bool loss_ok = res.final_lplm < 0.7 * res.early_lplm_mean;
  const bool acc_ok = res.final_entity_accuracy > 3.0 * chance;
  const bool time_ok = secs < 1800;

  g_desk_result = res;
  g_desk_cfg = cfg;
  desk_ready = true;

  std::ostringstream os;
  os << "final L_PLM " << res.final_lplm << " vs 0.7x first-50 mean "
     << 0.7 * res.early_lplm_mean << "; masked-entity acc " << res.final_entity_accuracy
     << " vs 3x chance " << 3.0 * chance << "; " << secs << "s";
  return {loss_ok && acc_ok && time_ok, os.str()};
}

// ---------------------------------------------------------------------------
// 5. fusion efficacy on ambiguous mentions, 3 seeds
// ---------------------------------------------------------------------------
Outcome criterion_fusion_efficacy() {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string corpus_dir = ensure_corpus(desk_config("x").synth, "corpus_desk");

  double gap_sum = 0;
  std::ostringstream os;
  for (int i = 0; i < 3; ++i) {
    const std::uint64_t seed = 1 + static_cast<std::uint64_t>(i);
    double f1[2];
    for (int ablated = 0; ablated < 2; ++ablated) {
      RunConfig cfg = desk_config("efficacy/seed" + std::to_string(seed) +
                                  (ablated ? "_ablated" : "_fused"));
      cfg.paths.corpus = corpus_dir + "/corpus.jsonl";
      cfg.paths.ground_truth_dir = corpus_dir;
      cfg.seed = seed;
      if (ablated) {
        cfg.fusion.enabled = false;
        cfg.contrastive.weight = 0.0;
      }
      PretrainResult pre = pretrain(cfg);
      FinetuneOutcome fine = finetune(cfg, pre.checkpoint_path);
      f1[ablated] = fine.ambiguous.micro_f1;
    }
    gap_sum += f1[0] - f1[1];
    os << "seed " << seed << ": fused " << f1[0] << " vs ablated " << f1[1] << "; ";
  }
  const double mean_gap = gap_sum / 3.0;
  const double secs = seconds_since(t0);
  os << "mean gap " << 100.0 * mean_gap << " points, " << secs << "s";
  return {mean_gap >= 0.05 && secs < 7200, os.str()};
}

// ---------------------------------------------------------------------------
// 6. sweep tables (reported, not gated)
// ---------------------------------------------------------------------------
Outcome criterion_sweeps() {
  // smaller model with 3 layers so first/mid/last insertion points differ
  RunConfig cfg = desk_config("sweeps");
  const std::string corpus_dir = ensure_corpus(cfg.synth, "corpus_desk");
  cfg.paths.corpus = corpus_dir + "/corpus.jsonl";
  cfg.paths.ground_truth_dir = corpus_dir;
  cfg.model.num_layers = 3;
  cfg.model.hidden_dim = 32;
  cfg.model.ffn_dim = 64;
  cfg.model.entity_embed_dim = 32;
  cfg.schedule.total_steps = 500;
  cfg.finetune.epochs = 2;

  bool ok = true;
  std::ostringstream os;
  for (const std::string axis : {"fusion_kind", "fusion_layer", "fusion_count"}) {
    SweepTable table = run_sweep(cfg, axis, 2);
    std::cout << "-- sweep " << axis << " --\n";
    write_sweep_table(table, std::cout);
    if (table.rows.empty()) ok = false;
    os << axis << ": " << table.rows.size() << " settings; ";
  }
  os << "tables under " << (fs::path(cfg.paths.out_dir)).string();
  return {ok, os.str()};
}

// ---------------------------------------------------------------------------
// 7. determinism & serialization
// ---------------------------------------------------------------------------
Outcome criterion_determinism() {
  const auto t0 = std::chrono::steady_clock::now();
  RunConfig cfg = desk_config("determinism/a");
  const std::string corpus_dir = ensure_corpus(cfg.synth, "corpus_desk");
  cfg.paths.corpus = corpus_dir + "/corpus.jsonl";
  cfg.paths.ground_truth_dir = corpus_dir;
  cfg.schedule.total_steps = 60;
  cfg.schedule.checkpoint_interval = 0;
  PretrainResult a = pretrain(cfg);
  cfg.paths.out_dir = (g_out / "determinism/b").string();
  PretrainResult b = pretrain(cfg);

  const bool identical = slurp(a.checkpoint_path) == slurp(b.checkpoint_path);

  // round trip bitwise
  CheckpointData data = load_checkpoint_file(a.checkpoint_path);
  const std::string copy = (g_out / "determinism/copy.kplt").string();
  save_checkpoint_file(data, copy);
  const bool roundtrip = slurp(a.checkpoint_path) == slurp(copy);

  // truncated load rejected
  bool truncation_rejected = false;
  {
    const std::string whole = slurp(a.checkpoint_path);
    const std::string cut_path = (g_out / "determinism/cut.kplt").string();
    std::ofstream out(cut_path, std::ios::binary | std::ios::trunc);
    out.write(whole.data(), static_cast<std::streamsize>(whole.size() - 1));
    out.close();
    try {
      load_checkpoint_file(cut_path);
    } catch (const CheckpointError& e) {
      truncation_rejected = e.kind == CheckpointError::Kind::truncated;
    }
  }
  const double secs = seconds_since(t0);
  std::ostringstream os;
  os << "byte-identical=" << identical << " roundtrip=" << roundtrip
     << " truncation_rejected=" << truncation_rejected << ", " << secs << "s";
  return {identical && roundtrip && truncation_rejected && secs < 60, os.str()};
}

// ---------------------------------------------------------------------------
// 8. gate report direction
// ---------------------------------------------------------------------------
Outcome criterion_gate_report(bool desk_ready) {
  if (!desk_ready) return {false, "desk-scale checkpoint unavailable (criterion 4 failed)"};
  Corpus corpus = parse_corpus_file(g_desk_cfg.paths.corpus);
  std::vector<Segment> slice = corpus.segments;  // the whole synthetic corpus

  const std::string txt1 = (g_out / "gate/report1.txt").string();
  const std::string txt2 = (g_out / "gate/report2.txt").string();
  fs::create_directories(g_out / "gate");
  auto r1 = gate_report(g_desk_result.checkpoint_path, slice, corpus.vocab, 50, txt1,
                        (g_out / "gate/report.html").string());
  auto r2 = gate_report(g_desk_result.checkpoint_path, slice, corpus.vocab, 50, txt2, "");
  const bool deterministic = slurp(txt1) == slurp(txt2);
  const bool direction = r1.mean_pronoun > r1.mean_all;
  std::ostringstream os;
  os << "mean gate pronouns " << r1.mean_pronoun << " vs all positions " << r1.mean_all
     << " (over " << r1.count_pronoun << "/" << r1.count_all
     << " positions); deterministic=" << deterministic;
  return {deterministic && direction, os.str()};
}

}  // namespace

int main(int argc, char** argv) {
  g_out = fs::current_path() / "acceptance_out";
  if (argc > 1) g_out = argv[1];
  fs::create_directories(g_out);

  int failures = 0;
  bool desk_ready = false;
  const auto t0 = std::chrono::steady_clock::now();

  auto report = [&](int num, const std::string& name, const Outcome& o) {
    std::cout << "[" << num << "] " << (o.pass ? "PASS" : "FAIL") << " " << name << ": "
              << o.detail << "\n";
    std::cout.flush();
    if (!o.pass) ++failures;
  };

  try {
    report(1, "gradient suite", criterion_gradients());
    report(2, "contrastive oracle", criterion_contrastive_oracle());
    report(3, "analytic invariants", criterion_invariants());
    report(4, "training progress", criterion_training(desk_ready));
    report(5, "fusion efficacy (ambiguous typing)", criterion_fusion_efficacy());
    report(6, "sweep tables (reported)", criterion_sweeps());
    report(7, "determinism & serialization", criterion_determinism());
    report(8, "gate report", criterion_gate_report(desk_ready));
  } catch (const std::exception& e) {
    std::cout << "FATAL: " << e.what() << "\n";
    return 99;
  }

  std::cout << (failures == 0 ? "ACCEPTANCE PASSED" : "ACCEPTANCE FAILED") << " ("
            << seconds_since(t0) << "s total)\n";
  return failures;
}
