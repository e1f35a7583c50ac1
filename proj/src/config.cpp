#include "topiclm/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace topiclm {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
}

template <class T>
void opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

RunConfig run_config_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  RunConfig cfg;
  reject_unknown(j,
                 {"paths", "model", "fusion", "contrastive", "masking", "optimizer", "schedule",
                  "finetune", "synth", "seed", "mode"},
                 "top level");
  if (j.contains("paths")) {
    const auto& p = j.at("paths");
    reject_unknown(p, {"corpus", "ground_truth_dir", "out_dir"}, "paths");
    opt(p, "corpus", cfg.paths.corpus);
    opt(p, "ground_truth_dir", cfg.paths.ground_truth_dir);
    opt(p, "out_dir", cfg.paths.out_dir);
  }
  if (j.contains("model")) {
    const auto& m = j.at("model");
    reject_unknown(m,
                   {"num_layers", "hidden_dim", "num_heads", "ffn_dim", "word_vocab_size",
                    "entity_vocab_size", "entity_embed_dim", "max_positions", "dropout_rate"},
                   "model");
    opt(m, "num_layers", cfg.model.num_layers);
    opt(m, "hidden_dim", cfg.model.hidden_dim);
    opt(m, "num_heads", cfg.model.num_heads);
    opt(m, "ffn_dim", cfg.model.ffn_dim);
    opt(m, "word_vocab_size", cfg.model.word_vocab_size);
    opt(m, "entity_vocab_size", cfg.model.entity_vocab_size);
    opt(m, "entity_embed_dim", cfg.model.entity_embed_dim);
    opt(m, "max_positions", cfg.model.max_positions);
    opt(m, "dropout_rate", cfg.model.dropout_rate);
  }
  if (j.contains("fusion")) {
    const auto& f = j.at("fusion");
    reject_unknown(f, {"kind", "layer_indices", "enabled"}, "fusion");
    if (f.contains("kind")) cfg.fusion.kind = fusion_kind_from(f.at("kind").get<std::string>());
    opt(f, "layer_indices", cfg.fusion.layer_indices);
    opt(f, "enabled", cfg.fusion.enabled);
  }
  if (j.contains("contrastive")) {
    const auto& c = j.at("contrastive");
    reject_unknown(c, {"temperature", "weight"}, "contrastive");
    opt(c, "temperature", cfg.contrastive.temperature);
    opt(c, "weight", cfg.contrastive.weight);
  }
  if (j.contains("masking")) {
    const auto& m = j.at("masking");
    reject_unknown(m, {"word_rate", "entity_rate"}, "masking");
    opt(m, "word_rate", cfg.masking.word_rate);
    opt(m, "entity_rate", cfg.masking.entity_rate);
  }
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    reject_unknown(o, {"learning_rate", "beta1", "beta2", "epsilon", "weight_decay"}, "optimizer");
    opt(o, "learning_rate", cfg.optimizer.learning_rate);
    opt(o, "beta1", cfg.optimizer.beta1);
    opt(o, "beta2", cfg.optimizer.beta2);
    opt(o, "epsilon", cfg.optimizer.epsilon);
    opt(o, "weight_decay", cfg.optimizer.weight_decay);
  }
  if (j.contains("schedule")) {
    const auto& s = j.at("schedule");
    reject_unknown(s, {"warmup_steps", "total_steps", "batch_size", "checkpoint_interval"},
                   "schedule");
    opt(s, "warmup_steps", cfg.schedule.warmup_steps);
    opt(s, "total_steps", cfg.schedule.total_steps);
    opt(s, "batch_size", cfg.schedule.batch_size);
    opt(s, "checkpoint_interval", cfg.schedule.checkpoint_interval);
  }
  if (j.contains("finetune")) {
    const auto& f = j.at("finetune");
    reject_unknown(f,
                   {"task", "epochs", "batch_segments", "eval_fraction", "ambiguous_eval_only",
                    "learning_rate"},
                   "finetune");
    opt(f, "task", cfg.finetune.task);
    opt(f, "epochs", cfg.finetune.epochs);
    opt(f, "batch_segments", cfg.finetune.batch_segments);
    opt(f, "eval_fraction", cfg.finetune.eval_fraction);
    opt(f, "ambiguous_eval_only", cfg.finetune.ambiguous_eval_only);
    opt(f, "learning_rate", cfg.finetune.learning_rate);
  }
  if (j.contains("synth")) {
    const auto& s = j.at("synth");
    reject_unknown(s,
                   {"n_entities", "n_types", "n_relations", "pages", "sentences_per_page",
                    "ambiguity_rate", "pronoun_rate", "seed"},
                   "synth");
    opt(s, "n_entities", cfg.synth.n_entities);
    opt(s, "n_types", cfg.synth.n_types);
    opt(s, "n_relations", cfg.synth.n_relations);
    opt(s, "pages", cfg.synth.pages);
    opt(s, "sentences_per_page", cfg.synth.sentences_per_page);
    opt(s, "ambiguity_rate", cfg.synth.ambiguity_rate);
    opt(s, "pronoun_rate", cfg.synth.pronoun_rate);
    opt(s, "seed", cfg.synth.seed);
  }
  opt(j, "seed", cfg.seed);
  opt(j, "mode", cfg.mode);
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return run_config_from_json_text(ss.str());
}

namespace {

json to_json(const RunConfig& cfg) {
  json j;
  j["paths"] = {{"corpus", cfg.paths.corpus},
                {"ground_truth_dir", cfg.paths.ground_truth_dir},
                {"out_dir", cfg.paths.out_dir}};
  j["model"] = {{"num_layers", cfg.model.num_layers},
                {"hidden_dim", cfg.model.hidden_dim},
                {"num_heads", cfg.model.num_heads},
                {"ffn_dim", cfg.model.ffn_dim},
                {"word_vocab_size", cfg.model.word_vocab_size},
                {"entity_vocab_size", cfg.model.entity_vocab_size},
                {"entity_embed_dim", cfg.model.entity_embed_dim},
                {"max_positions", cfg.model.max_positions},
                {"dropout_rate", cfg.model.dropout_rate}};
  j["fusion"] = {{"kind", fusion_kind_name(cfg.fusion.kind)},
                 {"layer_indices", cfg.fusion.layer_indices},
                 {"enabled", cfg.fusion.enabled}};
  j["contrastive"] = {{"temperature", cfg.contrastive.temperature},
                      {"weight", cfg.contrastive.weight}};
  j["masking"] = {{"word_rate", cfg.masking.word_rate}, {"entity_rate", cfg.masking.entity_rate}};
  j["optimizer"] = {{"learning_rate", cfg.optimizer.learning_rate},
                    {"beta1", cfg.optimizer.beta1},
                    {"beta2", cfg.optimizer.beta2},
                    {"epsilon", cfg.optimizer.epsilon},
                    {"weight_decay", cfg.optimizer.weight_decay}};
  j["schedule"] = {{"warmup_steps", cfg.schedule.warmup_steps},
                   {"total_steps", cfg.schedule.total_steps},
                   {"batch_size", cfg.schedule.batch_size},
                   {"checkpoint_interval", cfg.schedule.checkpoint_interval}};
  j["finetune"] = {{"task", cfg.finetune.task},
                   {"epochs", cfg.finetune.epochs},
                   {"batch_segments", cfg.finetune.batch_segments},
                   {"eval_fraction", cfg.finetune.eval_fraction},
                   {"ambiguous_eval_only", cfg.finetune.ambiguous_eval_only},
                   {"learning_rate", cfg.finetune.learning_rate}};
  j["synth"] = {{"n_entities", cfg.synth.n_entities},
                {"n_types", cfg.synth.n_types},
                {"n_relations", cfg.synth.n_relations},
                {"pages", cfg.synth.pages},
                {"sentences_per_page", cfg.synth.sentences_per_page},
                {"ambiguity_rate", cfg.synth.ambiguity_rate},
                {"pronoun_rate", cfg.synth.pronoun_rate},
                {"seed", cfg.synth.seed}};
  j["seed"] = cfg.seed;
  j["mode"] = cfg.mode;
  return j;
}

}  // namespace

std::string run_config_to_json_text(const RunConfig& cfg) { return to_json(cfg).dump(2); }

std::string make_checkpoint_metadata(const RunConfig& cfg, const Vocab& vocab,
                                     std::uint64_t seed, long step) {
  // the snapshot records inputs and hyperparameters; where outputs land is
  // transient and would break checkpoint determinism across directories
  RunConfig snap = cfg;
  snap.paths.out_dir.clear();
  json j;
  j["config"] = to_json(snap);
  j["seed"] = seed;
  j["step"] = step;
  j["vocab"] = {{"words", vocab.words()}, {"entities", vocab.entities()}};
  return j.dump();
}

CheckpointMetadata parse_checkpoint_metadata(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw CheckpointError(CheckpointError::Kind::truncated,
                          std::string("bad checkpoint metadata: ") + e.what());
  }
  CheckpointMetadata meta;
  meta.cfg = run_config_from_json_text(j.at("config").dump());
  meta.seed = j.at("seed").get<std::uint64_t>();
  meta.step = j.at("step").get<long>();
  meta.vocab = Vocab::from_tables(j.at("vocab").at("words").get<std::vector<std::string>>(),
                                  j.at("vocab").at("entities").get<std::vector<std::string>>());
  return meta;
}

double scheduled_lr(double lr, long step, int warmup_steps) {
  if (warmup_steps > 0 && step < warmup_steps)
    return lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
  return lr;
}

}  // namespace topiclm
