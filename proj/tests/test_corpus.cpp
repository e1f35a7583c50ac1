#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "topiclm/corpus.hpp"
#include "topiclm/synth.hpp"

using namespace topiclm;

namespace {

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / "topiclm_tests" / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("vocab reserves fixed low ids") {
  Vocab v;
  CHECK(v.word_id("[CLS]") == 0);
  CHECK(v.word_id("[SEP]") == 1);
  CHECK(v.word_id("[MASK]") == 2);
  CHECK(v.word_id("[UNK]") == 3);
  CHECK(v.word_id("[PAD]") == 4);
  CHECK(v.entity_id("[MASK_ENT]") == 0);
  CHECK(v.entity_id("[PAD_ENT]") == 1);
  const int w = v.add_word("hello");
  CHECK(w == Vocab::kNumReservedWords);
  CHECK(v.add_word("hello") == w);
}

TEST_CASE("parse: single page with one mention") {
  std::stringstream in(
      R"({"page_id":"nina_simone","topic_entity":"Nina_Simone","sentences":[{"tokens":["She","recorded","Feeling","Good","live"],"mentions":[{"start":2,"end":4,"entity":"Feeling_Good"}]}]})"
      "\n");
  Corpus c = parse_corpus(in);
  REQUIRE(c.segments.size() == 1);
  const Segment& s = c.segments[0];
  CHECK(s.mentions.size() == 1);
  CHECK(s.mentions[0].start == 2);
  CHECK(s.mentions[0].end == 4);
  CHECK(c.vocab.entity(s.topic_entity) == "Nina_Simone");
  CHECK(c.vocab.entity(s.mentions[0].entity_id) == "Feeling_Good");
  CHECK(c.vocab.word(s.tokens[0]) == "She");
}

TEST_CASE("parse: empty sentences list gives zero segments") {
  std::stringstream in(R"({"page_id":"p","topic_entity":"e","sentences":[]})" "\n");
  Corpus c = parse_corpus(in);
  CHECK(c.segments.empty());
}

TEST_CASE("parse: span past sentence end is a validation error") {
  std::stringstream in(
      R"({"page_id":"p1","topic_entity":"e","sentences":[{"tokens":["a","b","c"],"mentions":[{"start":1,"end":4,"entity":"x"}]}]})"
      "\n");
  CHECK_THROWS_AS(parse_corpus(in), ValidationError);
}

TEST_CASE("parse: overlapping spans name the page") {
  std::stringstream in(
      R"({"page_id":"badpage","topic_entity":"e","sentences":[{"tokens":["a","b","c","d"],"mentions":[{"start":0,"end":2,"entity":"x"},{"start":1,"end":3,"entity":"y"}]}]})"
      "\n");
  CHECK_THROWS_WITH_AS(parse_corpus(in), doctest::Contains("badpage"), ValidationError);
}

TEST_CASE("parse: malformed line reports the line number") {
  std::stringstream in("{\"page_id\":\"ok\",\"topic_entity\":\"e\",\"sentences\":[]}\nnot json\n");
  CHECK_THROWS_WITH_AS(parse_corpus(in), doctest::Contains("line 2"), ParseError);
}

TEST_CASE("parse with fixed vocab maps unknown words to [UNK]") {
  Vocab v;
  v.add_word("known");
  v.add_entity("topic");
  std::stringstream in(
      R"({"page_id":"p","topic_entity":"topic","sentences":[{"tokens":["known","mystery","known"],"mentions":[]}]})"
      "\n");
  auto segs = parse_corpus_with_vocab(in, v);
  REQUIRE(segs.size() == 1);
  CHECK(segs[0].tokens[0] == v.word_id("known"));
  CHECK(segs[0].tokens[1] == Vocab::kUnk);
}

TEST_CASE("generator: deterministic and byte-identical per seed") {
  SynthSpec spec;
  spec.pages = 6;
  spec.n_entities = 10;
  spec.sentences_per_page = 4;
  spec.seed = 7;
  auto d1 = scratch_dir("gen_a");
  auto d2 = scratch_dir("gen_b");
  generate_synthetic_files(spec, d1.string());
  generate_synthetic_files(spec, d2.string());
  for (const char* f : {"corpus.jsonl", "entity_types.tsv", "relations.tsv", "ambiguity_map.tsv"})
    CHECK(read_file(d1 / f) == read_file(d2 / f));
}

TEST_CASE("generator: segment count is pages * sentences_per_page") {
  SynthSpec spec;
  spec.n_entities = 50;
  spec.pages = 50;
  spec.sentences_per_page = 20;
  auto res = generate_synthetic(spec);
  CHECK(res.corpus.segments.size() == 1000);
}

TEST_CASE("generator: zero ambiguity means unique surface forms") {
  SynthSpec spec;
  spec.ambiguity_rate = 0.0;
  spec.n_entities = 12;
  spec.pages = 6;
  auto res = generate_synthetic(spec);
  for (const auto& [form, names] : res.truth.surface_forms) CHECK(names.size() == 1);
}

TEST_CASE("generator: ambiguity requires two entities") {
  SynthSpec spec;
  spec.n_entities = 1;
  spec.ambiguity_rate = 0.5;
  CHECK_THROWS_AS(generate_synthetic(spec), ConfigError);
}

TEST_CASE("generator: ambiguity audit by exhaustive scan") {
  SynthSpec spec;
  spec.ambiguity_rate = 0.3;
  spec.seed = 3;
  auto res = generate_synthetic(spec);
  // map each mention's surface words to the set of entity ids it stands for
  std::map<std::vector<int>, std::set<int>> seen;
  for (const auto& seg : res.corpus.segments)
    for (const auto& m : seg.mentions) {
      std::vector<int> words(seg.tokens.begin() + m.start, seg.tokens.begin() + m.end);
      seen[words].insert(m.entity_id);
    }
  bool any_ambiguous = false;
  for (const auto& [words, ids] : seen)
    if (ids.size() >= 2) any_ambiguous = true;
  CHECK(any_ambiguous);
  // and the readings must be split across pages, never inside one page
  std::map<std::pair<std::string, std::vector<int>>, std::set<int>> per_page;
  for (const auto& seg : res.corpus.segments)
    for (const auto& m : seg.mentions) {
      std::vector<int> words(seg.tokens.begin() + m.start, seg.tokens.begin() + m.end);
      per_page[{seg.page_id, words}].insert(m.entity_id);
    }
  for (const auto& [key, ids] : per_page) CHECK(ids.size() == 1);
}

TEST_CASE("round trip: emit then parse then emit is byte-stable") {
  SynthSpec spec;
  spec.pages = 8;
  spec.n_entities = 14;
  spec.sentences_per_page = 5;
  spec.seed = 21;
  auto res = generate_synthetic(spec);
  std::stringstream first;
  emit_corpus(res.corpus.segments, res.corpus.vocab, first);
  std::stringstream copy(first.str());
  Corpus reparsed = parse_corpus(copy);
  CHECK(reparsed.segments.size() == res.corpus.segments.size());
  std::stringstream second;
  emit_corpus(reparsed.segments, reparsed.vocab, second);
  CHECK(first.str() == second.str());
  // token/mention structure survives exactly
  for (std::size_t i = 0; i < reparsed.segments.size(); ++i) {
    const auto& a = res.corpus.segments[i];
    const auto& b = reparsed.segments[i];
    REQUIRE(a.tokens.size() == b.tokens.size());
    for (std::size_t t = 0; t < a.tokens.size(); ++t)
      CHECK(res.corpus.vocab.word(a.tokens[t]) == reparsed.vocab.word(b.tokens[t]));
    REQUIRE(a.mentions.size() == b.mentions.size());
    for (std::size_t m = 0; m < a.mentions.size(); ++m) {
      CHECK(a.mentions[m].start == b.mentions[m].start);
      CHECK(a.mentions[m].end == b.mentions[m].end);
    }
  }
}

TEST_CASE("masking: rates hit their binomial band over 1e4 positions") {
  SynthSpec spec;
  spec.pages = 150;
  spec.n_entities = 40;
  spec.sentences_per_page = 60;  // 9000 segments, >= 1e4 positions of each kind
  spec.seed = 5;
  auto res = generate_synthetic(spec);
  auto batch = mask_batch(res.corpus.segments, res.corpus.vocab, 0.15, 0.6, 99);

  long ent_positions = 0;
  for (char r : batch.ent_real) ent_positions += r;
  REQUIRE(ent_positions >= 10000);
  const double ent_frac = static_cast<double>(batch.masked_entities.size()) / ent_positions;
  CHECK(ent_frac > 0.58);
  CHECK(ent_frac < 0.62);

  long word_positions = 0;
  for (const auto& seg : res.corpus.segments) word_positions += static_cast<long>(seg.tokens.size());
  REQUIRE(word_positions >= 10000);
  const double word_frac = static_cast<double>(batch.masked_words.size()) / word_positions;
  CHECK(word_frac > 0.15 - 3 * std::sqrt(0.15 * 0.85 / word_positions));
  CHECK(word_frac < 0.15 + 3 * std::sqrt(0.15 * 0.85 / word_positions));
}

TEST_CASE("masking: zero and one rates") {
  SynthSpec spec;
  spec.pages = 4;
  spec.n_entities = 8;
  spec.sentences_per_page = 5;
  auto res = generate_synthetic(spec);

  auto none = mask_batch(res.corpus.segments, res.corpus.vocab, 0.0, 0.0, 1);
  CHECK(none.masked_words.empty());
  CHECK(none.masked_entities.empty());
  for (int b = 0; b < none.batch; ++b) {
    const auto& seg = res.corpus.segments[static_cast<std::size_t>(b)];
    for (std::size_t t = 0; t < seg.tokens.size(); ++t)
      CHECK(none.token_at(b, static_cast<int>(t) + 1) == seg.tokens[t]);
  }

  auto all = mask_batch(res.corpus.segments, res.corpus.vocab, 1.0, 1.0, 1);
  long real_words = 0;
  for (const auto& seg : res.corpus.segments) real_words += static_cast<long>(seg.tokens.size());
  CHECK(static_cast<long>(all.masked_words.size()) == real_words);
  for (int b = 0; b < all.batch; ++b) {
    CHECK(all.token_at(b, 0) == Vocab::kCls);  // reserved columns untouched
    const auto len = res.corpus.segments[static_cast<std::size_t>(b)].tokens.size();
    CHECK(all.token_at(b, static_cast<int>(len) + 1) == Vocab::kSep);
    for (std::size_t t = 0; t < len; ++t)
      CHECK(all.token_at(b, static_cast<int>(t) + 1) == Vocab::kMask);
  }
  long real_ents = 0;
  for (char r : all.ent_real) real_ents += r;
  CHECK(static_cast<long>(all.masked_entities.size()) == real_ents);

  CHECK_THROWS_AS(mask_batch(res.corpus.segments, res.corpus.vocab, -0.1, 0.5, 1), ConfigError);
}

TEST_CASE("masking: deterministic per seed, labels preserved") {
  SynthSpec spec;
  spec.pages = 4;
  spec.n_entities = 8;
  auto res = generate_synthetic(spec);
  auto a = mask_batch(res.corpus.segments, res.corpus.vocab, 0.3, 0.6, 42);
  auto b = mask_batch(res.corpus.segments, res.corpus.vocab, 0.3, 0.6, 42);
  CHECK(a.tokens == b.tokens);
  CHECK(a.masked_words.size() == b.masked_words.size());
  for (const auto& mp : a.masked_words) {
    const auto& seg = res.corpus.segments[static_cast<std::size_t>(mp.b)];
    CHECK(mp.label == seg.tokens[static_cast<std::size_t>(mp.pos - 1)]);
    CHECK(a.token_at(mp.b, mp.pos) == Vocab::kMask);
  }
  for (const auto& mp : a.masked_entities) {
    CHECK(a.ent_ids[static_cast<std::size_t>(mp.b) * a.n_ents + mp.pos] == Vocab::kMaskEnt);
    CHECK(mp.label >= Vocab::kNumReservedEntities);
  }
}

TEST_CASE("batching: pairs stay adjacent") {
  std::vector<Segment> segs(4);
  segs[0].page_id = segs[1].page_id = "A";
  segs[2].page_id = segs[3].page_id = "B";
  for (auto& s : segs) s.tokens = {5, 6, 7};
  auto batches = make_batches(segs, 4, 123);
  REQUIRE(batches.size() == 1);
  const auto& b = batches[0];
  REQUIRE(b.size() == 4);
  for (std::size_t i = 0; i < b.size(); i += 2) {
    CHECK(segs[static_cast<std::size_t>(b[i])].page_id ==
          segs[static_cast<std::size_t>(b[i + 1])].page_id);
    CHECK(b[i] + 1 == b[i + 1]);
  }
}

TEST_CASE("batching: single-segment corpus yields one remnant batch") {
  std::vector<Segment> segs(1);
  segs[0].page_id = "solo";
  segs[0].tokens = {5, 6, 7};
  auto batches = make_batches(segs, 4, 1);
  REQUIRE(batches.size() == 1);
  CHECK(batches[0] == std::vector<int>{0});
}

TEST_CASE("batching: deterministic, even batch size required") {
  SynthSpec spec;
  spec.pages = 10;
  spec.n_entities = 10;
  spec.sentences_per_page = 6;
  auto res = generate_synthetic(spec);
  auto a = make_batches(res.corpus.segments, 8, 77);
  auto b = make_batches(res.corpus.segments, 8, 77);
  CHECK(a == b);
  CHECK_THROWS_AS(make_batches(res.corpus.segments, 7, 1), ConfigError);
}

TEST_CASE("batching: every topic in a batch has an in-batch positive") {
  SynthSpec spec;
  spec.pages = 12;
  spec.n_entities = 9;
  spec.sentences_per_page = 6;  // even, so no cross-page remnants
  spec.seed = 13;
  auto res = generate_synthetic(spec);
  for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
    auto batches = make_batches(res.corpus.segments, 6, seed);
    for (const auto& batch : batches) {
      std::map<int, int> topic_count;
      for (int ix : batch) ++topic_count[res.corpus.segments[static_cast<std::size_t>(ix)].topic_entity];
      for (const auto& [topic, count] : topic_count) CHECK(count >= 2);
    }
  }
}
