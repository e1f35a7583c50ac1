#pragma once

#include <string>
#include <vector>

#include "topiclm/config.hpp"
#include "topiclm/corpus.hpp"

namespace topiclm {

struct GatePosition {
  int position = 0;  // joint-sequence index
  std::string label;
  double value = 0;
  bool is_entity = false;
};

struct SegmentGates {
  std::string page_id;
  std::string topic;
  std::vector<GatePosition> positions;  // ranked by gate value, ties by position
};

struct GateReportResult {
  int fusion_layer = 0;
  std::vector<SegmentGates> segments;
  double mean_all = 0;
  double mean_pronoun = 0;
  long count_all = 0;
  long count_pronoun = 0;
};

// Runs the encoder of a trained checkpoint up to its first fusion point,
// ranks every word and mention position of the given segments by the gate
// value, and writes plain-text and HTML reports highlighting the top_k
// positions. Raises ConfigError when the checkpoint has no fusion module.
GateReportResult gate_report(const std::string& checkpoint_path,
                             const std::vector<Segment>& segments, const Vocab& vocab, int top_k,
                             const std::string& out_txt, const std::string& out_html,
                             const std::vector<std::string>& pronoun_words = {"she", "he", "it",
                                                                              "they"});

}  // namespace topiclm
