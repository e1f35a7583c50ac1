#include "topiclm/synth.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "topiclm/rng.hpp"

namespace topiclm {

namespace {

const char* kPronouns[4] = {"she", "he", "it", "they"};
const char* kAdverbs[4] = {"today", "often", "quietly", "again"};

std::string entity_name(int i) { return "entity_" + std::to_string(i); }

// Sample k distinct values from pool (partial Fisher-Yates on a copy).
std::vector<int> sample_distinct(std::vector<int> pool, int k, Rng& rng) {
  k = std::min<int>(k, static_cast<int>(pool.size()));
  for (int i = 0; i < k; ++i) {
    const int j = i + rng.uniform_int(static_cast<int>(pool.size()) - i);
    std::swap(pool[static_cast<std::size_t>(i)], pool[static_cast<std::size_t>(j)]);
  }
  pool.resize(static_cast<std::size_t>(k));
  return pool;
}

}  // namespace

SynthResult generate_synthetic(const SynthSpec& spec) {
  if (spec.n_entities < 1 || spec.n_types < 1 || spec.n_relations < 1 || spec.pages < 1 ||
      spec.sentences_per_page < 1)
    throw ConfigError("synth: counts must be >= 1");
  if (spec.ambiguity_rate < 0 || spec.ambiguity_rate > 1 || spec.pronoun_rate < 0 ||
      spec.pronoun_rate > 1)
    throw ConfigError("synth: rates must lie in [0,1]");
  if (spec.ambiguity_rate > 0 && spec.n_entities < 2)
    throw ConfigError("synth: ambiguity requires at least 2 entities");

  Rng rng(spec.seed);
  const int n = spec.n_entities;
  const int ntypes = spec.n_types;

  auto type_of = [&](int e) { return e % ntypes; };

  // --- surface forms ------------------------------------------------------
  // k ambiguous forms cover 2k entities; the remaining n-2k entities get
  // unique forms, giving k / (n-k) total forms ~= ambiguity_rate.
  int k_amb = static_cast<int>(spec.ambiguity_rate * n / (1.0 + spec.ambiguity_rate));
  k_amb = std::min(k_amb, n / 2);

  // pair entities of different types so an ambiguous form spans two labels
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  rng.shuffle(order);
  std::vector<std::pair<int, int>> amb_pairs;
  std::vector<bool> used(static_cast<std::size_t>(n), false);
  for (std::size_t i = 0; i < order.size() && static_cast<int>(amb_pairs.size()) < k_amb; ++i) {
    if (used[static_cast<std::size_t>(order[i])]) continue;
    for (std::size_t j = i + 1; j < order.size(); ++j) {
      const int a = order[i], b = order[j];
      if (used[static_cast<std::size_t>(b)] || type_of(a) == type_of(b)) continue;
      amb_pairs.push_back({a, b});
      used[static_cast<std::size_t>(a)] = used[static_cast<std::size_t>(b)] = true;
      break;
    }
  }

  // form id per entity; members of a pair share one
  std::vector<int> form_of(static_cast<std::size_t>(n), -1);
  int next_form = 0;
  for (const auto& [a, b] : amb_pairs) {
    form_of[static_cast<std::size_t>(a)] = next_form;
    form_of[static_cast<std::size_t>(b)] = next_form;
    ++next_form;
  }
  for (int e = 0; e < n; ++e)
    if (form_of[static_cast<std::size_t>(e)] < 0) form_of[static_cast<std::size_t>(e)] = next_form++;

  auto form_words = [&](int fid) {
    std::vector<std::string> w{"alias" + std::to_string(fid)};
    if (fid % 2 == 1) w.push_back("junior");
    return w;
  };

  // --- page topics ---------------------------------------------------------
  std::vector<int> topic_of_page(static_cast<std::size_t>(spec.pages));
  for (int p = 0; p < spec.pages; ++p) topic_of_page[static_cast<std::size_t>(p)] = p % n;

  std::vector<std::vector<int>> pages_by_type(static_cast<std::size_t>(ntypes));
  for (int p = 0; p < spec.pages; ++p)
    pages_by_type[static_cast<std::size_t>(type_of(topic_of_page[static_cast<std::size_t>(p)]))]
        .push_back(p);

  // --- host pages for ambiguous readings -----------------------------------
  // Each member of a pair is mentioned on a few pages; the two members'
  // hosting pages have topic entities of identical types, so nothing but the
  // topic identity separates the readings.
  std::vector<std::vector<int>> amb_readings(static_cast<std::size_t>(spec.pages));
  const int hosts_per_reading = 3;
  for (const auto& [a, b] : amb_pairs) {
    int placed = 0;
    int guard = 0;
    while (placed < hosts_per_reading && guard++ < 64) {
      const int t = rng.uniform_int(ntypes);
      std::vector<int> candidates;
      for (int p : pages_by_type[static_cast<std::size_t>(t)]) {
        const int tp = topic_of_page[static_cast<std::size_t>(p)];
        if (tp != a && tp != b) candidates.push_back(p);
      }
      if (static_cast<int>(candidates.size()) < 2) continue;
      auto picked = sample_distinct(candidates, 2, rng);
      amb_readings[static_cast<std::size_t>(picked[0])].push_back(a);
      amb_readings[static_cast<std::size_t>(picked[1])].push_back(b);
      ++placed;
    }
  }

  // --- common mention pool per page ----------------------------------------
  std::vector<int> commons;
  for (int e = 0; e < n; ++e)
    if (!used[static_cast<std::size_t>(e)]) commons.push_back(e);
  if (commons.empty())
    for (int e = 0; e < n; ++e) commons.push_back(e);

  // --- vocabulary, fixed order ----------------------------------------------
  Corpus corpus;
  Vocab& vocab = corpus.vocab;
  for (const char* w : kPronouns) vocab.add_word(w);
  vocab.add_word("the");
  vocab.add_word("and");
  for (int t = 0; t < ntypes; ++t) vocab.add_word("kind" + std::to_string(t));
  for (int r = 0; r < spec.n_relations; ++r) vocab.add_word("rel" + std::to_string(r));
  for (int f = 0; f < next_form; ++f)
    for (const auto& w : form_words(f)) vocab.add_word(w);
  for (const char* w : kAdverbs) vocab.add_word(w);
  std::vector<int> entity_vocab_id(static_cast<std::size_t>(n));
  for (int e = 0; e < n; ++e) entity_vocab_id[static_cast<std::size_t>(e)] = vocab.add_entity(entity_name(e));

  GroundTruth truth;
  for (int t = 0; t < ntypes; ++t) truth.type_names.push_back("kind" + std::to_string(t));
  for (int r = 0; r < spec.n_relations; ++r) truth.relation_names.push_back("rel" + std::to_string(r));
  for (int e = 0; e < n; ++e) truth.entity_type[entity_name(e)] = type_of(e);
  for (int e = 0; e < n; ++e) {
    const auto fw = form_words(form_of[static_cast<std::size_t>(e)]);
    std::string key = fw[0];
    for (std::size_t i = 1; i < fw.size(); ++i) key += " " + fw[i];
    truth.surface_forms[key].push_back(entity_name(e));
  }
  for (auto& [key, names] : truth.surface_forms) std::sort(names.begin(), names.end());

  // --- sentences -------------------------------------------------------------
  auto pair_label = [&](int a, int b) {
    return (type_of(a) * ntypes + type_of(b)) % spec.n_relations;
  };

  for (int p = 0; p < spec.pages; ++p) {
    const int topic = topic_of_page[static_cast<std::size_t>(p)];
    const int tau = type_of(topic);
    std::vector<int> pool_source;
    for (int e : commons)
      if (e != topic) pool_source.push_back(e);
    if (pool_source.empty())
      for (int e = 0; e < n; ++e)
        if (e != topic) pool_source.push_back(e);
    auto pool = sample_distinct(pool_source, 4, rng);
    const auto& hosted = amb_readings[static_cast<std::size_t>(p)];

    for (int s = 0; s < spec.sentences_per_page; ++s) {
      Segment seg;
      seg.page_id = "page_" + std::to_string(p);
      seg.topic_entity = entity_vocab_id[static_cast<std::size_t>(topic)];

      // every hosting page leads with one ambiguous-mention sentence so each
      // reading provably occurs on its pages
      const bool force_amb = (s == 0 && !hosted.empty());
      const bool pron = force_amb || rng.bernoulli(spec.pronoun_rate);
      const bool amb = pron && !hosted.empty() && (force_amb || rng.bernoulli(0.8));

      auto push_word = [&](const std::string& w) { seg.tokens.push_back(vocab.add_word(w)); };

      if (pron)
        push_word(kPronouns[topic % 4]);
      else {
        push_word("the");
        push_word("kind" + std::to_string(tau));
      }
      const int rel_word = (2 * tau + rng.uniform_int(2)) % spec.n_relations;
      push_word("rel" + std::to_string(rel_word));

      std::vector<int> objects;
      if (amb) {
        objects.push_back(hosted[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(hosted.size())))]);
      } else {
        const int n_obj = 1 + (rng.bernoulli(0.4) ? 1 : 0);
        objects = sample_distinct(pool, n_obj, rng);
      }
      for (std::size_t o = 0; o < objects.size(); ++o) {
        if (o > 0) push_word("and");
        const int start = static_cast<int>(seg.tokens.size());
        for (const auto& w : form_words(form_of[static_cast<std::size_t>(objects[o])])) push_word(w);
        Mention m;
        m.start = start;
        m.end = static_cast<int>(seg.tokens.size());
        m.entity_id = entity_vocab_id[static_cast<std::size_t>(objects[o])];
        seg.mentions.push_back(m);
      }
      if (rng.bernoulli(0.4)) push_word(kAdverbs[rng.uniform_int(4)]);

      for (std::size_t i = 0; i < objects.size(); ++i)
        for (std::size_t j = 0; j < objects.size(); ++j)
          if (i != j)
            truth.pair_relation[{entity_name(objects[i]), entity_name(objects[j])}] =
                pair_label(objects[i], objects[j]);

      corpus.segments.push_back(std::move(seg));
    }
  }
  return {std::move(corpus), std::move(truth)};
}

SynthResult generate_synthetic_files(const SynthSpec& spec, const std::string& out_dir) {
  SynthResult res = generate_synthetic(spec);
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);

  {
    std::ofstream out(fs::path(out_dir) / "corpus.jsonl");
    if (!out) throw ConfigError("cannot write corpus under '" + out_dir + "'");
    emit_corpus(res.corpus.segments, res.corpus.vocab, out);
  }
  {
    std::ofstream out(fs::path(out_dir) / "entity_types.tsv");
    for (const auto& [name, t] : res.truth.entity_type)
      out << name << "\t" << res.truth.type_names[static_cast<std::size_t>(t)] << "\n";
  }
  {
    std::ofstream out(fs::path(out_dir) / "relations.tsv");
    for (const auto& [pair, r] : res.truth.pair_relation)
      out << pair.first << "\t" << res.truth.relation_names[static_cast<std::size_t>(r)] << "\t"
          << pair.second << "\n";
  }
  {
    std::ofstream out(fs::path(out_dir) / "ambiguity_map.tsv");
    for (const auto& [form, names] : res.truth.surface_forms) {
      out << form << "\t";
      for (std::size_t i = 0; i < names.size(); ++i) {
        if (i) out << ",";
        out << names[i];
      }
      out << "\n";
    }
  }
  return res;
}

namespace {

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string part;
  while (std::getline(ss, part, sep)) out.push_back(part);
  return out;
}

}  // namespace

std::map<std::string, int> load_entity_types(const std::string& path,
                                             std::vector<std::string>& type_names_out) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open entity types file '" + path + "'");
  std::map<std::string, std::string> raw;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto parts = split(line, '\t');
    if (parts.size() != 2) throw ParseError("entity_types.tsv: bad line '" + line + "'");
    raw[parts[0]] = parts[1];
  }
  std::set<std::string> labels;
  for (const auto& [k, v] : raw) labels.insert(v);
  type_names_out.assign(labels.begin(), labels.end());
  std::map<std::string, int> label_ix;
  for (std::size_t i = 0; i < type_names_out.size(); ++i)
    label_ix[type_names_out[i]] = static_cast<int>(i);
  std::map<std::string, int> out;
  for (const auto& [k, v] : raw) out[k] = label_ix[v];
  return out;
}

std::map<std::pair<std::string, std::string>, int> load_relations(
    const std::string& path, std::vector<std::string>& relation_names_out) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open relations file '" + path + "'");
  std::map<std::pair<std::string, std::string>, std::string> raw;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto parts = split(line, '\t');
    if (parts.size() != 3) throw ParseError("relations.tsv: bad line '" + line + "'");
    raw[{parts[0], parts[2]}] = parts[1];
  }
  std::set<std::string> labels;
  for (const auto& [k, v] : raw) labels.insert(v);
  relation_names_out.assign(labels.begin(), labels.end());
  std::map<std::string, int> label_ix;
  for (std::size_t i = 0; i < relation_names_out.size(); ++i)
    label_ix[relation_names_out[i]] = static_cast<int>(i);
  std::map<std::pair<std::string, std::string>, int> out;
  for (const auto& [k, v] : raw) out[k] = label_ix[v];
  return out;
}

std::map<std::string, std::vector<std::string>> load_ambiguity_map(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open ambiguity map '" + path + "'");
  std::map<std::string, std::vector<std::string>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto parts = split(line, '\t');
    if (parts.size() != 2) throw ParseError("ambiguity_map.tsv: bad line '" + line + "'");
    out[parts[0]] = split(parts[1], ',');
  }
  return out;
}

std::set<std::string> ambiguous_entities(
    const std::map<std::string, std::vector<std::string>>& surface_forms) {
  std::set<std::string> out;
  for (const auto& [form, names] : surface_forms)
    if (names.size() >= 2)
      for (const auto& n : names) out.insert(n);
  return out;
}

}  // namespace topiclm
