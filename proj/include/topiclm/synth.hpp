#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "topiclm/corpus.hpp"

namespace topiclm {

// Knobs for the synthetic encyclopedia-style corpus.
struct SynthSpec {
  int n_entities = 50;
  int n_types = 5;
  int n_relations = 10;
  int pages = 50;
  int sentences_per_page = 20;
  double ambiguity_rate = 0.3;   // fraction of surface forms shared by >= 2 entities
  double pronoun_rate = 0.4;     // fraction of sentences with a pronoun subject
  std::uint64_t seed = 1;
};

struct GroundTruth {
  std::vector<std::string> type_names;                    // "kind0".."kind{T-1}"
  std::vector<std::string> relation_names;                // "rel0".."rel{R-1}"
  std::map<std::string, int> entity_type;                 // entity name -> type index
  std::map<std::pair<std::string, std::string>, int> pair_relation;  // co-occurring pairs
  std::map<std::string, std::vector<std::string>> surface_forms;     // form -> entity names
};

struct SynthResult {
  Corpus corpus;
  GroundTruth truth;
};

// Deterministic generator. Pages cycle through entities as topics. Ambiguous
// surface forms are shared by two entities of different types, hosted on
// disjoint pages whose topic types match, so the reading is recoverable only
// from the page's topic entity. Relation words in the text are a function of
// the topic's type; pair relation labels are a function of the two mentioned
// entities' types.
SynthResult generate_synthetic(const SynthSpec& spec);

// Runs the generator and writes corpus.jsonl, entity_types.tsv,
// relations.tsv and ambiguity_map.tsv under out_dir. Byte-identical for
// identical specs.
SynthResult generate_synthetic_files(const SynthSpec& spec, const std::string& out_dir);

// Ground-truth sidecar loaders (TSV).
std::map<std::string, int> load_entity_types(const std::string& path,
                                             std::vector<std::string>& type_names_out);
std::map<std::pair<std::string, std::string>, int> load_relations(
    const std::string& path, std::vector<std::string>& relation_names_out);
std::map<std::string, std::vector<std::string>> load_ambiguity_map(const std::string& path);

// Entities appearing in any surface form shared by >= 2 entities.
std::set<std::string> ambiguous_entities(
    const std::map<std::string, std::vector<std::string>>& surface_forms);

}  // namespace topiclm
