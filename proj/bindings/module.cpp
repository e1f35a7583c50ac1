// Python bindings over the C++ core: tensor ops on numpy arrays, corpus
// generation, training entry points and checkpoint inspection.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>
#include <fstream>

#include "topiclm/downstream.hpp"
#include "topiclm/gate_report.hpp"
#include "topiclm/gradcheck.hpp"
#include "topiclm/sweep.hpp"
#include "topiclm/trainer.hpp"

namespace py = pybind11;
using namespace topiclm;

namespace {

Tensor<double> tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  Shape shape;
  for (int i = 0; i < a.ndim(); ++i) shape.push_back(static_cast<int>(a.shape(i)));
  std::vector<double> data(a.data(), a.data() + a.size());
  return Tensor<double>(std::move(shape), std::move(data));
}

py::array_t<double> array_from_tensor(const Tensor<double>& t) {
  std::vector<py::ssize_t> shape;
  for (int d : t.shape()) shape.push_back(d);
  py::array_t<double> out(shape);
  std::copy(t.data(), t.data() + t.numel(), out.mutable_data());
  return out;
}

RunConfig config_from_text(const std::string& text) { return run_config_from_json_text(text); }

py::dict eval_to_dict(const EvalSummary& s) {
  py::dict d;
  d["precision"] = s.precision;
  d["recall"] = s.recall;
  d["micro_f1"] = s.micro_f1;
  d["instances"] = s.instances;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "topic-entity-aware language model core";
  m.attr("__version__") = "0.1.0";

  py::register_exception<ShapeError>(m, "ShapeError");
  py::register_exception<NumericError>(m, "NumericError");
  py::register_exception<ParseError>(m, "CorpusParseError");
  py::register_exception<ValidationError>(m, "CorpusValidationError");
  py::register_exception<ConfigError>(m, "RunConfigError");
  py::register_exception<CheckpointError>(m, "CheckpointLoadError");

  // -- numeric ops on numpy arrays -----------------------------------------
  m.def("softmax", [](py::array_t<double> x, int axis) {
    Tape<double> t;
    return array_from_tensor(softmax(t, tensor_from_array(x), axis));
  }, py::arg("x"), py::arg("axis") = -1);

  m.def("sigmoid", [](py::array_t<double> x) {
    Tape<double> t;
    return array_from_tensor(sigmoid(t, tensor_from_array(x)));
  });

  m.def("layer_norm", [](py::array_t<double> x, py::array_t<double> scale,
                         py::array_t<double> shift, double eps) {
    Tape<double> t;
    return array_from_tensor(layer_norm(t, tensor_from_array(x), tensor_from_array(scale),
                                        tensor_from_array(shift), eps));
  }, py::arg("x"), py::arg("scale"), py::arg("shift"), py::arg("eps") = 1e-5);

  m.def("matmul", [](py::array_t<double> a, py::array_t<double> b) {
    Tape<double> t;
    return array_from_tensor(matmul(t, tensor_from_array(a), tensor_from_array(b)));
  });

  m.def("cosine_sim", [](py::array_t<double> a, py::array_t<double> b) {
    Tape<double> t;
    return cosine_sim(t, tensor_from_array(a), tensor_from_array(b)).item();
  });

  m.def("contrastive_loss", [](py::array_t<double> vectors, std::vector<int> topics, double tau,
                               double weight) {
    Tape<double> t;
    DeltaSet<double> delta;
    delta.vectors = tensor_from_array(vectors);
    delta.topic_of_row = std::move(topics);
    ContrastiveConfig cfg;
    cfg.temperature = tau;
    cfg.weight = weight;
    return contrastive_loss(t, delta, cfg).item();
  }, py::arg("vectors"), py::arg("topics"), py::arg("tau") = 0.07, py::arg("weight") = 1.0);

  // -- corpus ----------------------------------------------------------------
  m.def("generate_corpus", [](const std::string& out_dir, int n_entities, int n_types,
                              int n_relations, int pages, int sentences_per_page,
                              double ambiguity_rate, double pronoun_rate, std::uint64_t seed) {
    SynthSpec spec;
    spec.n_entities = n_entities;
    spec.n_types = n_types;
    spec.n_relations = n_relations;
    spec.pages = pages;
    spec.sentences_per_page = sentences_per_page;
    spec.ambiguity_rate = ambiguity_rate;
    spec.pronoun_rate = pronoun_rate;
    spec.seed = seed;
    auto res = generate_synthetic_files(spec, out_dir);
    py::dict d;
    d["segments"] = res.corpus.segments.size();
    d["words"] = res.corpus.vocab.word_count();
    d["entities"] = res.corpus.vocab.entity_count();
    d["corpus"] = out_dir + "/corpus.jsonl";
    return d;
  }, py::arg("out_dir"), py::arg("n_entities") = 50, py::arg("n_types") = 5,
     py::arg("n_relations") = 10, py::arg("pages") = 50, py::arg("sentences_per_page") = 20,
     py::arg("ambiguity_rate") = 0.3, py::arg("pronoun_rate") = 0.4, py::arg("seed") = 1);

  m.def("corpus_summary", [](const std::string& path) {
    Corpus c = parse_corpus_file(path);
    py::dict d;
    d["segments"] = c.segments.size();
    d["words"] = c.vocab.word_count();
    d["entities"] = c.vocab.entity_count();
    long mentions = 0;
    for (const auto& s : c.segments) mentions += static_cast<long>(s.mentions.size());
    d["mentions"] = mentions;
    return d;
  });

  // -- training --------------------------------------------------------------
  m.def("pretrain", [](const std::string& config_json) {
    PretrainResult res = pretrain(config_from_text(config_json));
    py::dict d;
    d["checkpoint"] = res.checkpoint_path;
    d["steps"] = res.steps;
    d["early_lplm_mean"] = res.early_lplm_mean;
    d["final_lplm"] = res.final_lplm;
    d["final_entity_accuracy"] = res.final_entity_accuracy;
    return d;
  }, py::arg("config_json"));

  m.def("finetune", [](const std::string& config_json, const std::string& checkpoint) {
    FinetuneOutcome res = finetune(config_from_text(config_json), checkpoint);
    py::dict d;
    d["checkpoint"] = res.checkpoint_path;
    d["overall"] = eval_to_dict(res.overall);
    d["ambiguous"] = eval_to_dict(res.ambiguous);
    return d;
  }, py::arg("config_json"), py::arg("checkpoint"));

  m.def("evaluate", [](const std::string& checkpoint) {
    return eval_to_dict(evaluate_checkpoint(checkpoint));
  }, py::arg("checkpoint"));

  m.def("gate_report", [](const std::string& checkpoint, const std::string& corpus_path,
                          const std::string& out_dir, int segments, int top_k) {
    auto loaded = load_model_checkpoint<float>(checkpoint);
    std::ifstream in(corpus_path);
    if (!in) throw ConfigError("cannot open corpus '" + corpus_path + "'");
    auto segs = parse_corpus_with_vocab(in, loaded.vocab);
    if (static_cast<int>(segs.size()) > segments) segs.resize(static_cast<std::size_t>(segments));
    std::filesystem::create_directories(out_dir);
    auto res = gate_report(checkpoint, segs, loaded.vocab, top_k, out_dir + "/gate_report.txt",
                           out_dir + "/gate_report.html");
    py::dict d;
    d["fusion_layer"] = res.fusion_layer;
    d["segments"] = res.segments.size();
    d["mean_gate_all"] = res.mean_all;
    d["mean_gate_pronoun"] = res.mean_pronoun;
    d["txt"] = out_dir + "/gate_report.txt";
    d["html"] = out_dir + "/gate_report.html";
    return d;
  }, py::arg("checkpoint"), py::arg("corpus"), py::arg("out_dir"), py::arg("segments") = 16,
     py::arg("top_k") = 50);

  m.def("sweep", [](const std::string& config_json, const std::string& axis, int seeds) {
    SweepTable table = run_sweep(config_from_text(config_json), axis, seeds);
    py::list rows;
    for (const auto& row : table.rows) {
      py::dict r;
      r["setting"] = row.setting;
      r["mean_f1"] = row.mean_f1;
      py::list cells;
      for (const auto& cell : row.cells) {
        py::dict c;
        c["seed"] = cell.seed;
        c["micro_f1"] = cell.micro_f1;
        c["ambiguous_f1"] = cell.ambiguous_f1;
        cells.append(c);
      }
      r["per_seed"] = cells;
      rows.append(r);
    }
    return rows;
  }, py::arg("config_json"), py::arg("axis"), py::arg("seeds") = 3);

  m.def("gradient_suite", [](std::uint64_t seed) {
    py::list out;
    for (const auto& e : run_gradient_suite(seed)) {
      py::dict d;
      d["name"] = e.name;
      d["rel_err"] = e.rel_err;
      d["pass"] = e.pass;
      out.append(d);
    }
    return out;
  }, py::arg("seed") = 1234);

  // -- checkpoints -------------------------------------------------------------
  m.def("load_checkpoint", [](const std::string& path) {
    CheckpointData data = load_checkpoint_file(path);
    py::dict tensors;
    for (const auto& [name, rec] : data.tensors)
      tensors[py::str(name)] = array_from_tensor(tensor_from<double>(rec, false));
    py::dict d;
    d["tensors"] = tensors;
    d["metadata"] = data.metadata;
    return d;
  }, py::arg("path"));

  m.def("default_config", []() { return run_config_to_json_text(RunConfig{}); });
}
