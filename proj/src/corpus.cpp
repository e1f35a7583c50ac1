#include "topiclm/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>

#include <json.hpp>

#include "topiclm/rng.hpp"

namespace topiclm {

using nlohmann::json;

Vocab::Vocab() {
  words_ = {"[CLS]", "[SEP]", "[MASK]", "[UNK]", "[PAD]"};
  entities_ = {"[MASK_ENT]", "[PAD_ENT]"};
  for (int i = 0; i < static_cast<int>(words_.size()); ++i) word_ix_[words_[i]] = i;
  for (int i = 0; i < static_cast<int>(entities_.size()); ++i) entity_ix_[entities_[i]] = i;
}

int Vocab::add_word(const std::string& w) {
  auto it = word_ix_.find(w);
  if (it != word_ix_.end()) return it->second;
  const int id = static_cast<int>(words_.size());
  words_.push_back(w);
  word_ix_[w] = id;
  return id;
}

int Vocab::add_entity(const std::string& name) {
  auto it = entity_ix_.find(name);
  if (it != entity_ix_.end()) return it->second;
  const int id = static_cast<int>(entities_.size());
  entities_.push_back(name);
  entity_ix_[name] = id;
  return id;
}

int Vocab::word_id(const std::string& w) const {
  auto it = word_ix_.find(w);
  return it == word_ix_.end() ? -1 : it->second;
}

int Vocab::entity_id(const std::string& name) const {
  auto it = entity_ix_.find(name);
  return it == entity_ix_.end() ? -1 : it->second;
}

const std::string& Vocab::word(int id) const { return words_.at(static_cast<std::size_t>(id)); }

const std::string& Vocab::entity(int id) const {
  return entities_.at(static_cast<std::size_t>(id));
}

Vocab Vocab::from_tables(std::vector<std::string> words, std::vector<std::string> entities) {
  Vocab v;
  if (words.size() < kNumReservedWords || entities.size() < kNumReservedEntities)
    throw ValidationError("vocab tables missing reserved entries");
  for (int i = 0; i < kNumReservedWords; ++i)
    if (words[static_cast<std::size_t>(i)] != v.words_[static_cast<std::size_t>(i)])
      throw ValidationError("vocab word table does not start with reserved ids");
  for (int i = 0; i < kNumReservedEntities; ++i)
    if (entities[static_cast<std::size_t>(i)] != v.entities_[static_cast<std::size_t>(i)])
      throw ValidationError("vocab entity table does not start with reserved ids");
  for (std::size_t i = kNumReservedWords; i < words.size(); ++i) v.add_word(words[i]);
  for (std::size_t i = kNumReservedEntities; i < entities.size(); ++i) v.add_entity(entities[i]);
  return v;
}

namespace {

void validate_mentions(const std::vector<Mention>& mentions, int n_tokens,
                       const std::string& page_id) {
  for (const auto& m : mentions) {
    if (m.start < 0 || m.end <= m.start || m.end > n_tokens)
      throw ValidationError("page '" + page_id + "': mention span [" + std::to_string(m.start) +
                            "," + std::to_string(m.end) + ") out of bounds for " +
                            std::to_string(n_tokens) + " tokens");
  }
  std::vector<Mention> sorted = mentions;
  std::sort(sorted.begin(), sorted.end(),
            [](const Mention& a, const Mention& b) { return a.start < b.start; });
  for (std::size_t i = 1; i < sorted.size(); ++i)
    if (sorted[i].start < sorted[i - 1].end)
      throw ValidationError("page '" + page_id + "': overlapping mention spans");
}

// One parser core; `fixed` switches between vocab-building and [UNK] lookup.
std::vector<Segment> parse_lines(std::istream& in, Vocab& vocab, bool fixed, int min_tokens) {
  std::vector<Segment> segments;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json page;
    try {
      page = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
    try {
      const std::string page_id = page.at("page_id").get<std::string>();
      const std::string topic = page.at("topic_entity").get<std::string>();
      int topic_id;
      if (fixed) {
        topic_id = vocab.entity_id(topic);
        if (topic_id < 0)
          throw ValidationError("page '" + page_id + "': unknown topic entity '" + topic + "'");
      } else {
        topic_id = vocab.add_entity(topic);
      }
      for (const auto& sent : page.at("sentences")) {
        Segment seg;
        seg.page_id = page_id;
        seg.topic_entity = topic_id;
        for (const auto& tok : sent.at("tokens")) {
          const std::string w = tok.get<std::string>();
          if (fixed) {
            const int id = vocab.word_id(w);
            seg.tokens.push_back(id < 0 ? Vocab::kUnk : id);
          } else {
            seg.tokens.push_back(vocab.add_word(w));
          }
        }
        if (sent.contains("mentions")) {
          for (const auto& men : sent.at("mentions")) {
            Mention m;
            m.start = men.at("start").get<int>();
            m.end = men.at("end").get<int>();
            const std::string ent = men.at("entity").get<std::string>();
            if (fixed) {
              m.entity_id = vocab.entity_id(ent);
              if (m.entity_id < 0)
                throw ValidationError("page '" + page_id + "': unknown entity '" + ent + "'");
            } else {
              m.entity_id = vocab.add_entity(ent);
            }
            seg.mentions.push_back(m);
          }
        }
        validate_mentions(seg.mentions, static_cast<int>(seg.tokens.size()), page_id);
        if (static_cast<int>(seg.tokens.size()) >= min_tokens) segments.push_back(std::move(seg));
      }
    } catch (const json::exception& e) {
      throw ParseError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return segments;
}

}  // namespace

Corpus parse_corpus(std::istream& in, int min_tokens) {
  Corpus c;
  c.segments = parse_lines(in, c.vocab, /*fixed=*/false, min_tokens);
  return c;
}

Corpus parse_corpus_file(const std::string& path, int min_tokens) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open corpus file '" + path + "'");
  return parse_corpus(in, min_tokens);
}

std::vector<Segment> parse_corpus_with_vocab(std::istream& in, const Vocab& vocab,
                                             int min_tokens) {
  Vocab copy = vocab;  // lookups only; adds are disabled by `fixed`
  return parse_lines(in, copy, /*fixed=*/true, min_tokens);
}

void emit_corpus(const std::vector<Segment>& segments, const Vocab& vocab, std::ostream& out) {
  // group consecutive segments by page id
  std::size_t i = 0;
  while (i < segments.size()) {
    std::size_t j = i;
    while (j < segments.size() && segments[j].page_id == segments[i].page_id &&
           segments[j].topic_entity == segments[i].topic_entity)
      ++j;
    json page;
    page["page_id"] = segments[i].page_id;
    page["topic_entity"] = vocab.entity(segments[i].topic_entity);
    json sents = json::array();
    for (std::size_t k = i; k < j; ++k) {
      json sent;
      json toks = json::array();
      for (int t : segments[k].tokens) toks.push_back(vocab.word(t));
      sent["tokens"] = std::move(toks);
      json mens = json::array();
      for (const auto& m : segments[k].mentions) {
        json men;
        men["start"] = m.start;
        men["end"] = m.end;
        men["entity"] = vocab.entity(m.entity_id);
        mens.push_back(std::move(men));
      }
      sent["mentions"] = std::move(mens);
      sents.push_back(std::move(sent));
    }
    page["sentences"] = std::move(sents);
    out << page.dump() << "\n";
    i = j;
  }
}

MaskedBatch mask_batch(const std::vector<Segment>& segments, const Vocab& vocab,
                       double word_mask_rate, double entity_mask_rate, std::uint64_t seed,
                       int max_words) {
  if (word_mask_rate < 0 || word_mask_rate > 1 || entity_mask_rate < 0 || entity_mask_rate > 1)
    throw ConfigError("mask rates must lie in [0,1]");
  (void)vocab;
  MaskedBatch b;
  b.batch = static_cast<int>(segments.size());
  int max_tok = 0, max_ent = 1;
  std::vector<std::vector<int>> kept_tokens(segments.size());
  std::vector<std::vector<Mention>> kept_mentions(segments.size());
  for (std::size_t s = 0; s < segments.size(); ++s) {
    auto toks = segments[s].tokens;
    if (static_cast<int>(toks.size()) > max_words) toks.resize(static_cast<std::size_t>(max_words));
    for (const auto& m : segments[s].mentions)
      if (m.end <= static_cast<int>(toks.size())) kept_mentions[s].push_back(m);
    kept_tokens[s] = std::move(toks);
    max_tok = std::max(max_tok, static_cast<int>(kept_tokens[s].size()));
    max_ent = std::max(max_ent, static_cast<int>(kept_mentions[s].size()));
  }
  b.n_words = max_tok + 2;  // [CLS] ... [SEP]
  b.n_ents = max_ent;
  b.tokens.assign(static_cast<std::size_t>(b.batch) * b.n_words, Vocab::kPad);
  b.word_real.assign(static_cast<std::size_t>(b.batch) * b.n_words, 0);
  b.ent_ids.assign(static_cast<std::size_t>(b.batch) * b.n_ents, Vocab::kPadEnt);
  b.ent_spans.assign(static_cast<std::size_t>(b.batch) * b.n_ents, {0, 1});
  b.ent_real.assign(static_cast<std::size_t>(b.batch) * b.n_ents, 0);
  b.topic_ids.resize(static_cast<std::size_t>(b.batch));

  Rng rng(seed);
  for (int s = 0; s < b.batch; ++s) {
    const auto& toks = kept_tokens[static_cast<std::size_t>(s)];
    const long base = static_cast<long>(s) * b.n_words;
    b.tokens[static_cast<std::size_t>(base)] = Vocab::kCls;
    b.word_real[static_cast<std::size_t>(base)] = 1;
    for (std::size_t t = 0; t < toks.size(); ++t) {
      b.tokens[static_cast<std::size_t>(base) + 1 + t] = toks[t];
      b.word_real[static_cast<std::size_t>(base) + 1 + t] = 1;
    }
    b.tokens[static_cast<std::size_t>(base) + 1 + toks.size()] = Vocab::kSep;
    b.word_real[static_cast<std::size_t>(base) + 1 + toks.size()] = 1;
    b.topic_ids[static_cast<std::size_t>(s)] = segments[static_cast<std::size_t>(s)].topic_entity;

    // maskable word columns are 1..len (between [CLS] and [SEP])
    for (std::size_t t = 0; t < toks.size(); ++t) {
      if (word_mask_rate > 0 && rng.bernoulli(word_mask_rate)) {
        const int col = static_cast<int>(t) + 1;
        b.masked_words.push_back({s, col, toks[t]});
        b.tokens[static_cast<std::size_t>(base) + static_cast<std::size_t>(col)] = Vocab::kMask;
      }
    }
    const auto& mens = kept_mentions[static_cast<std::size_t>(s)];
    const long ebase = static_cast<long>(s) * b.n_ents;
    for (std::size_t e = 0; e < mens.size(); ++e) {
      b.ent_ids[static_cast<std::size_t>(ebase) + e] = mens[e].entity_id;
      // +1 shifts word coordinates past [CLS]
      b.ent_spans[static_cast<std::size_t>(ebase) + e] = {mens[e].start + 1, mens[e].end + 1};
      b.ent_real[static_cast<std::size_t>(ebase) + e] = 1;
      if (entity_mask_rate > 0 && rng.bernoulli(entity_mask_rate)) {
        b.masked_entities.push_back({s, static_cast<int>(e), mens[e].entity_id});
        b.ent_ids[static_cast<std::size_t>(ebase) + e] = Vocab::kMaskEnt;
      }
    }
  }
  return b;
}

std::vector<std::vector<int>> make_batches(const std::vector<Segment>& segments, int batch_size,
                                           std::uint64_t seed) {
  if (batch_size < 2 || batch_size % 2 != 0)
    throw ConfigError("batch_size must be even and >= 2, got " + std::to_string(batch_size));
  // pair consecutive segments within each page; odd remnants pair across pages
  std::vector<std::vector<int>> pairs;
  std::vector<int> remnants;
  std::size_t i = 0;
  while (i < segments.size()) {
    std::size_t j = i;
    while (j < segments.size() && segments[j].page_id == segments[i].page_id) ++j;
    std::size_t k = i;
    for (; k + 1 < j; k += 2) pairs.push_back({static_cast<int>(k), static_cast<int>(k + 1)});
    if (k < j) remnants.push_back(static_cast<int>(k));
    i = j;
  }
  for (std::size_t r = 0; r + 1 < remnants.size(); r += 2)
    pairs.push_back({remnants[r], remnants[r + 1]});
  if (remnants.size() % 2 == 1) pairs.push_back({remnants.back()});

  Rng rng(seed);
  rng.shuffle(pairs);

  std::vector<std::vector<int>> batches;
  const std::size_t pairs_per_batch = static_cast<std::size_t>(batch_size) / 2;
  for (std::size_t p = 0; p < pairs.size(); p += pairs_per_batch) {
    std::vector<int> batch;
    for (std::size_t q = p; q < std::min(p + pairs_per_batch, pairs.size()); ++q)
      for (int ix : pairs[q]) batch.push_back(ix);
    batches.push_back(std::move(batch));
  }
  return batches;
}

}  // namespace topiclm
