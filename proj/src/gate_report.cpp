#include "topiclm/gate_report.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "topiclm/model.hpp"

namespace topiclm {

GateReportResult gate_report(const std::string& checkpoint_path,
                             const std::vector<Segment>& segments, const Vocab& vocab, int top_k,
                             const std::string& out_txt, const std::string& out_html,
                             const std::vector<std::string>& pronoun_words) {
  auto loaded = load_model_checkpoint<float>(checkpoint_path);
  Model<float>& model = loaded.model;
  if (!loaded.cfg.fusion.enabled || model.fusion.points.empty())
    throw ConfigError("gate report: checkpoint has no fusion module");

  GateReportResult result;
  result.fusion_layer = model.fusion.points.front().first;
  auto& point = model.fusion.points.front().second;
  const std::set<std::string> pronouns(pronoun_words.begin(), pronoun_words.end());

  const int chunk = 16;
  for (std::size_t at = 0; at < segments.size(); at += chunk) {
    std::vector<Segment> segs(segments.begin() + static_cast<long>(at),
                              segments.begin() + static_cast<long>(std::min(
                                                     segments.size(), at + static_cast<std::size_t>(chunk))));
    MaskedBatch batch = mask_batch(segs, vocab, 0.0, 0.0, 0, model.encoder.cfg.max_positions - 2);

    Tape<float> tape;
    auto h = embed_input(tape, model.encoder, batch);
    auto bias = encoder_detail::attention_bias<float>(batch);
    for (int l = 1; l < result.fusion_layer; ++l)
      h = encoder_layer(tape, model.encoder.layers[static_cast<std::size_t>(l - 1)], h, bias,
                        model.encoder.cfg, nullptr);
    auto mask = encoder_detail::joint_real_mask<float>(batch);
    auto g = gate(tape, h, point, mask);

    for (int b = 0; b < batch.batch; ++b) {
      SegmentGates sg;
      sg.page_id = segs[static_cast<std::size_t>(b)].page_id;
      sg.topic = vocab.entity(segs[static_cast<std::size_t>(b)].topic_entity);
      for (int w = 0; w < batch.n_words; ++w) {
        if (!batch.word_real[static_cast<std::size_t>(b) * batch.n_words + w]) continue;
        GatePosition p;
        p.position = w;
        p.label = vocab.word(batch.token_at(b, w));
        p.value = static_cast<double>(g.at({b, w, 0}));
        sg.positions.push_back(p);
        result.mean_all += p.value;
        ++result.count_all;
        if (pronouns.count(p.label)) {
          result.mean_pronoun += p.value;
          ++result.count_pronoun;
        }
      }
      for (int e = 0; e < batch.n_ents; ++e) {
        if (!batch.ent_real[static_cast<std::size_t>(b) * batch.n_ents + e]) continue;
        GatePosition p;
        p.position = batch.n_words + e;
        p.label = vocab.entity(batch.ent_ids[static_cast<std::size_t>(b) * batch.n_ents + e]);
        p.value = static_cast<double>(g.at({b, batch.n_words + e, 0}));
        p.is_entity = true;
        sg.positions.push_back(p);
        result.mean_all += p.value;
        ++result.count_all;
      }
      // descending by gate, ties fall back to position index order
      std::stable_sort(sg.positions.begin(), sg.positions.end(),
                       [](const GatePosition& a, const GatePosition& b) { return a.value > b.value; });
      result.segments.push_back(std::move(sg));
    }
  }
  if (result.count_all) result.mean_all /= static_cast<double>(result.count_all);
  if (result.count_pronoun) result.mean_pronoun /= static_cast<double>(result.count_pronoun);

  if (!out_txt.empty()) {
    std::ofstream out(out_txt, std::ios::trunc);
    if (!out) throw ConfigError("cannot write gate report '" + out_txt + "'");
    out.precision(6);
    out << "# gate ranking at fusion layer " << result.fusion_layer << ", seed "
        << loaded.seed << "\n";
    for (const auto& sg : result.segments) {
      out << "segment page=" << sg.page_id << " topic=" << sg.topic << "\n";
      const int limit = std::min<int>(top_k, static_cast<int>(sg.positions.size()));
      for (int r = 0; r < limit; ++r) {
        const auto& p = sg.positions[static_cast<std::size_t>(r)];
        out << "  " << (r + 1) << "\tpos=" << p.position << "\t"
            << (p.is_entity ? "entity " : "word ") << p.label << "\t" << p.value << "\n";
      }
    }
    out << "mean_gate_all=" << result.mean_all << " over " << result.count_all << " positions\n";
    out << "mean_gate_pronoun=" << result.mean_pronoun << " over " << result.count_pronoun
        << " positions\n";
  }

  if (!out_html.empty()) {
    std::ofstream out(out_html, std::ios::trunc);
    if (!out) throw ConfigError("cannot write gate report '" + out_html + "'");
    out << "<!doctype html><html><head><meta charset=\"utf-8\"><title>gate report</title>"
        << "<style>body{font-family:sans-serif} span{padding:1px 3px;margin:1px;border-radius:3px;"
        << "display:inline-block}</style></head><body>\n";
    out << "<h2>fusing-position ranking (layer " << result.fusion_layer << ", seed "
        << loaded.seed << ")</h2>\n";
    for (const auto& sg : result.segments) {
      out << "<p><b>" << sg.topic << "</b> (" << sg.page_id << ")<br>\n";
      std::vector<GatePosition> in_order = sg.positions;
      std::sort(in_order.begin(), in_order.end(),
                [](const GatePosition& a, const GatePosition& b) { return a.position < b.position; });
      const int limit = std::min<int>(top_k, static_cast<int>(sg.positions.size()));
      std::set<int> top;
      for (int r = 0; r < limit; ++r) top.insert(sg.positions[static_cast<std::size_t>(r)].position);
      out.precision(3);
      for (const auto& p : in_order) {
        out << "<span style=\"background:rgba(66,133,244," << p.value << ")\""
            << " title=\"" << p.value << "\">";
        if (top.count(p.position)) out << "<b>";
        if (p.is_entity) out << "#" << p.label << "#";
        else out << p.label;
        if (top.count(p.position)) out << "</b>";
        out << "</span> ";
      }
      out << "</p>\n";
    }
    out.precision(6);
    out << "<p>mean gate (all positions): " << result.mean_all
        << "; mean gate (pronouns): " << result.mean_pronoun << "</p>\n";
    out << "</body></html>\n";
  }
  return result;
}

}  // namespace topiclm
