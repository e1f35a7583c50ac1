#pragma once

#include <iosfwd>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "topiclm/errors.hpp"

namespace topiclm {

// A linked span inside one segment: word range [start, end) plus the entity
// it refers to.
struct Mention {
  int start = 0;
  int end = 0;
  int entity_id = 0;
};

// One training unit: a sentence from a page, always carrying the entity the
// whole page is about.
struct Segment {
  int topic_entity = 0;
  std::vector<int> tokens;
  std::vector<Mention> mentions;
  std::string page_id;

  bool operator==(const Segment& o) const {
    if (topic_entity != o.topic_entity || tokens != o.tokens || page_id != o.page_id ||
        mentions.size() != o.mentions.size())
      return false;
    for (std::size_t i = 0; i < mentions.size(); ++i)
      if (mentions[i].start != o.mentions[i].start || mentions[i].end != o.mentions[i].end ||
          mentions[i].entity_id != o.mentions[i].entity_id)
        return false;
    return true;
  }
};

// Bidirectional string<->index tables for words and entities. Reserved ids
// occupy fixed low indices.
class Vocab {
 public:
  static constexpr int kCls = 0;
  static constexpr int kSep = 1;
  static constexpr int kMask = 2;
  static constexpr int kUnk = 3;
  static constexpr int kPad = 4;
  static constexpr int kNumReservedWords = 5;

  static constexpr int kMaskEnt = 0;
  static constexpr int kPadEnt = 1;
  static constexpr int kNumReservedEntities = 2;

  Vocab();

  int add_word(const std::string& w);          // existing id if present
  int add_entity(const std::string& name);
  int word_id(const std::string& w) const;     // -1 if absent
  int entity_id(const std::string& name) const;
  const std::string& word(int id) const;
  const std::string& entity(int id) const;
  int word_count() const { return static_cast<int>(words_.size()); }
  int entity_count() const { return static_cast<int>(entities_.size()); }

  const std::vector<std::string>& words() const { return words_; }
  const std::vector<std::string>& entities() const { return entities_; }

  static Vocab from_tables(std::vector<std::string> words, std::vector<std::string> entities);

 private:
  std::vector<std::string> words_;
  std::vector<std::string> entities_;
  std::unordered_map<std::string, int> word_ix_;
  std::unordered_map<std::string, int> entity_ix_;
};

struct Corpus {
  std::vector<Segment> segments;
  Vocab vocab;
};

// Padded, masked model input. Token rows are [CLS] w.. [SEP] [PAD]...;
// entity slots are padded with [PAD_ENT]. Every masked position stores its
// pre-mask label; padding is excluded from masking and from all losses.
struct MaskedBatch {
  int batch = 0;
  int n_words = 0;  // padded word columns, includes [CLS]/[SEP]
  int n_ents = 0;   // padded entity columns, >= 1

  std::vector<int> tokens;                       // [batch * n_words]
  std::vector<int> ent_ids;                      // [batch * n_ents]
  std::vector<std::pair<int, int>> ent_spans;    // token-coordinate spans
  std::vector<char> ent_real;                    // [batch * n_ents]
  std::vector<char> word_real;                   // [batch * n_words]
  std::vector<int> topic_ids;                    // [batch]

  struct MaskedPos {
    int b = 0;
    int pos = 0;    // column within the word (or entity) block
    int label = 0;  // pre-mask vocabulary id
  };
  std::vector<MaskedPos> masked_words;
  std::vector<MaskedPos> masked_entities;

  int token_at(int b, int t) const { return tokens[static_cast<std::size_t>(b) * n_words + t]; }
  int total_positions() const { return n_words + n_ents; }
};

// Parses one page object per line:
//   {"page_id", "topic_entity", "sentences":[{"tokens":[...],
//    "mentions":[{"start","end","entity"}]}]}
// Builds the vocabulary in first-appearance order. Segments from one page
// stay consecutive. Sentences shorter than min_tokens words are dropped.
Corpus parse_corpus(std::istream& in, int min_tokens = 3);
Corpus parse_corpus_file(const std::string& path, int min_tokens = 3);

// Same schema against a fixed vocabulary; unknown words map to [UNK],
// unknown entities are an error.
std::vector<Segment> parse_corpus_with_vocab(std::istream& in, const Vocab& vocab,
                                             int min_tokens = 3);

// Inverse of parse_corpus: one JSONL page object per line, token indices
// resolved back to strings. Re-parsing reproduces the segments exactly.
void emit_corpus(const std::vector<Segment>& segments, const Vocab& vocab, std::ostream& out);

// Bernoulli masking at the given rates over the padded batch built from
// `segments`. [CLS]/[SEP]/[PAD] are never maskable. Deterministic in `seed`.
MaskedBatch mask_batch(const std::vector<Segment>& segments, const Vocab& vocab,
                       double word_mask_rate, double entity_mask_rate, std::uint64_t seed,
                       int max_words = 126);

// Pair-preserving minibatch order: consecutive same-page segments are glued
// into pairs, pairs are shuffled, then unpacked into minibatches, so a
// segment whose successor shares its page lands in the same minibatch as
// that successor. Odd per-page remnants are paired across pages. Returns
// index lists into `segments`; batch_size must be even.
std::vector<std::vector<int>> make_batches(const std::vector<Segment>& segments, int batch_size,
                                           std::uint64_t seed);

}  // namespace topiclm
