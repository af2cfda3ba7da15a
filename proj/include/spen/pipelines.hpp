#pragma once

#include <chrono>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "spen/data.hpp"
#include "spen/inference.hpp"
#include "spen/model_io.hpp"
#include "spen/training.hpp"

namespace spen {

// ---- embedding (de)serialization ----

inline void pack_embeddings(ModelFile& model, const EmbeddingTable& emb) {
  model.vocab = emb.tokens();
  model.set("emb_dim", emb.dim());
  ad::Tensor matrix({emb.size(), emb.dim()}, 0.0);
  for (size_t r = 0; r < emb.size(); ++r) {
    std::copy(emb.rows()[r].begin(), emb.rows()[r].end(),
              matrix.data.begin() + r * emb.dim());
  }
  model.add_tensor("emb.matrix", matrix);
  model.add_tensor("emb.unk", ad::Tensor({emb.dim()}, emb.unknown_row()));
}

inline std::shared_ptr<EmbeddingTable> unpack_embeddings(const ModelFile& model) {
  size_t dim = model.get_size("emb_dim");
  const auto& matrix = model.tensor("emb.matrix");
  check_config(matrix.shape == (ad::Shape{model.vocab.size(), dim}),
               "model: embedding matrix does not match vocab");
  auto emb = std::make_shared<EmbeddingTable>(dim);
  for (size_t r = 0; r < model.vocab.size(); ++r) {
    std::vector<double> row(matrix.data.begin() + r * dim,
                            matrix.data.begin() + (r + 1) * dim);
    emb->add(model.vocab[r], std::move(row));
  }
  emb->set_unknown_row(model.tensor("emb.unk").data);
  return emb;
}

// ---- tab-separated report writer ----

class Report {
 public:
  explicit Report(const std::string& path) : out_(path) {
    check_config(out_.good(), msg_cat("report: cannot open ", path));
  }
  void row(std::initializer_list<std::string> cells) {
    bool first = true;
    for (const auto& c : cells) {
      if (!first) out_ << "\t";
      out_ << c;
      first = false;
    }
    out_ << "\n";
    out_.flush();
  }
  static std::string num(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
  }

 private:
  std::ofstream out_;
};

// ---- model kinds ----
//
// Canonical construction names, shared by packers and loaders:
//   chain encoder "enc", chain scores "energy.u"/"energy.w",
//   inference nets "infnet", feature net "feature", tag LM "tlm".

struct LoadedChain {
  std::shared_ptr<EmbeddingTable> emb;
  ChainEnergy energy;
  std::vector<std::string> tags;
};

inline ModelFile pack_seq_crf(const ChainEnergy& energy, const std::vector<std::string>& tags,
                              uint64_t seed) {
  ModelFile model;
  model.set("kind", std::string("seq-crf"));
  model.set("task", std::string("seq"));
  model.set("seed", static_cast<size_t>(seed));
  model.set("labels", tags.size());
  model.set("hidden", energy.encoder().hidden_dim());
  model.tags = tags;
  pack_embeddings(model, energy.embeddings());
  pack_params(model, energy.params());
  return model;
}

inline LoadedChain unpack_seq_crf(const ModelFile& model) {
  check_config(model.get("kind") == "seq-crf" || model.get("kind") == "seq-spen",
               msg_cat("model: expected a chain model, got kind '", model.get("kind"), "'"));
  LoadedChain out;
  out.emb = unpack_embeddings(model);
  out.tags = model.tags;
  Rng scratch(0);
  out.energy = ChainEnergy(BLSTMEncoder("enc", out.emb->dim(), model.get_size("hidden"),
                                        scratch),
                           out.emb, model.get_size("labels"), scratch);
  unpack_params(model, out.energy.params());
  return out;
}

struct LoadedSeqNet {
  std::shared_ptr<EmbeddingTable> emb;
  SeqInferenceNet net;
  std::vector<std::string> tags;
};

inline ModelFile pack_seq_net(const SeqInferenceNet& net, const std::vector<std::string>& tags,
                              const std::string& kind, uint64_t seed) {
  ModelFile model;
  model.set("kind", kind);  // "seq-tagger" (local baseline) or "seq-infnet" (distilled)
  model.set("task", std::string("seq"));
  model.set("seed", static_cast<size_t>(seed));
  model.set("labels", tags.size());
  model.set("hidden", net.hidden_dim());
  model.tags = tags;
  pack_embeddings(model, net.embeddings());
  pack_params(model, net.params());
  return model;
}

inline LoadedSeqNet unpack_seq_net(const ModelFile& model) {
  check_config(model.get("kind") == "seq-tagger" || model.get("kind") == "seq-infnet",
               msg_cat("model: expected an inference net, got kind '", model.get("kind"),
                       "'"));
  LoadedSeqNet out;
  out.emb = unpack_embeddings(model);
  out.tags = model.tags;
  Rng scratch(0);
  out.net = SeqInferenceNet("infnet", out.emb, model.get_size("hidden"),
                            model.get_size("labels"), scratch);
  unpack_params(model, out.net.params());
  return out;
}

struct LoadedSeqSpen {
  std::shared_ptr<EmbeddingTable> emb;
  ChainEnergy energy;
  SeqInferenceNet infnet;
  std::vector<std::string> tags;
  double tlm_weight = 0.0;
  std::optional<TLMEnergy> tlm;
};

inline ModelFile pack_seq_spen(const ChainEnergy& energy, const SeqInferenceNet& infnet,
                               const std::vector<std::string>& tags, uint64_t seed,
                               const TLMEnergy* tlm = nullptr, double tlm_weight = 0.0) {
  ModelFile model;
  model.set("kind", std::string("seq-spen"));
  model.set("task", std::string("seq"));
  model.set("seed", static_cast<size_t>(seed));
  model.set("labels", tags.size());
  model.set("hidden", energy.encoder().hidden_dim());
  model.set("infnet_hidden", infnet.hidden_dim());
  model.tags = tags;
  pack_embeddings(model, energy.embeddings());
  pack_params(model, energy.params());
  pack_params(model, infnet.params());
  if (tlm != nullptr && tlm_weight != 0.0) {
    model.set("tlm_weight", tlm_weight);
    model.set("tlm_hidden", tlm->lm().hidden_dim());
    model.set("tlm_layers", tlm->lm().layers());
    pack_params(model, tlm->params());
  }
  return model;
}

inline LoadedSeqSpen unpack_seq_spen(const ModelFile& model) {
  check_config(model.get("kind") == "seq-spen",
               msg_cat("model: expected kind seq-spen, got '", model.get("kind"), "'"));
  LoadedSeqSpen out;
  out.emb = unpack_embeddings(model);
  out.tags = model.tags;
  Rng scratch(0);
  size_t l = model.get_size("labels");
  out.energy = ChainEnergy(BLSTMEncoder("enc", out.emb->dim(), model.get_size("hidden"),
                                        scratch),
                           out.emb, l, scratch);
  out.infnet = SeqInferenceNet("infnet", out.emb, model.get_size("infnet_hidden"), l,
                               scratch);
  unpack_params(model, out.energy.params());
  unpack_params(model, out.infnet.params());
  if (model.has("tlm_weight")) {
    out.tlm_weight = model.get_double("tlm_weight");
    TagLMCell lm("tlm", l, model.get_size("tlm_hidden"), model.get_size("tlm_layers"),
                 scratch);
    out.tlm.emplace(std::move(lm));
    unpack_params(model, out.tlm->params());
    freeze(out.tlm->params());
  }
  return out;
}

struct LoadedTagLm {
  TagLMCell lm;
  std::vector<std::string> tags;
  double held_out_perplexity = 0.0;
};

inline ModelFile pack_tag_lm(const TagLMCell& lm, const std::vector<std::string>& tags,
                             double perplexity, uint64_t seed) {
  ModelFile model;
  model.set("kind", std::string("tag-lm"));
  model.set("task", std::string("seq"));
  model.set("seed", static_cast<size_t>(seed));
  model.set("labels", tags.size());
  model.set("tlm_hidden", lm.hidden_dim());
  model.set("tlm_layers", lm.layers());
  model.set("held_out_perplexity", perplexity);
  model.tags = tags;
  pack_params(model, lm.params());
  return model;
}

inline LoadedTagLm unpack_tag_lm(const ModelFile& model) {
  check_config(model.get("kind") == "tag-lm",
               msg_cat("model: expected kind tag-lm, got '", model.get("kind"), "'"));
  LoadedTagLm out;
  out.tags = model.tags;
  Rng scratch(0);
  out.lm = TagLMCell("tlm", model.tags.size(), model.get_size("tlm_hidden"),
                     model.get_size("tlm_layers"), scratch);
  unpack_params(model, out.lm.params());
  out.held_out_perplexity =
      model.has("held_out_perplexity") ? model.get_double("held_out_perplexity") : 0.0;
  freeze(out.lm.params());
  return out;
}

struct LoadedMlcSpen {
  MLCEnergy energy;
  MLCInferenceNet infnet;
  double tau = 0.5;
};

inline ModelFile pack_mlc_spen(const MLCEnergy& energy, const MLCInferenceNet& infnet,
                               double tau, uint64_t seed) {
  ModelFile model;
  model.set("kind", std::string("mlc-spen"));
  model.set("task", std::string("mlc"));
  model.set("seed", static_cast<size_t>(seed));
  model.set("labels", energy.n_labels());
  model.set("tau", tau);
  auto widths_str = [](const std::vector<size_t>& ws) {
    std::string out;
    for (size_t i = 0; i < ws.size(); ++i) {
      if (i) out += ",";
      out += std::to_string(ws[i]);
    }
    return out;
  };
  model.set("feature_widths", widths_str(energy.feature_net().widths()));
  model.set("infnet_widths", widths_str(infnet.net().widths()));
  model.set("lab_hidden", energy.c2()->shape[0]);
  pack_params(model, energy.all_params());
  pack_params(model, infnet.params());
  return model;
}

namespace detail {
inline std::vector<size_t> parse_widths(const std::string& s) {
  std::vector<size_t> out;
  std::istringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stoull(tok));
  return out;
}
}  // namespace detail

inline LoadedMlcSpen unpack_mlc_spen(const ModelFile& model) {
  check_config(model.get("kind") == "mlc-spen",
               msg_cat("model: expected kind mlc-spen, got '", model.get("kind"), "'"));
  Rng scratch(0);
  auto fw = detail::parse_widths(model.get("feature_widths"));
  auto iw = detail::parse_widths(model.get("infnet_widths"));
  MLP feature("feature", fw, Head::linear, scratch);
  LoadedMlcSpen out{MLCEnergy(std::move(feature), model.get_size("labels"),
                              model.get_size("lab_hidden"), scratch),
                    MLCInferenceNet(MLP("infnet", iw, Head::sigmoid, scratch)),
                    model.get_double("tau")};
  unpack_params(model, out.energy.all_params());
  unpack_params(model, out.infnet.params());
  return out;
}

struct LoadedMlcNet {
  MLCInferenceNet net;
  double tau = 0.5;
};

inline ModelFile pack_mlc_net(const MLCInferenceNet& net, double tau, uint64_t seed) {
  ModelFile model;
  model.set("kind", std::string("mlc-local"));
  model.set("task", std::string("mlc"));
  model.set("seed", static_cast<size_t>(seed));
  model.set("labels", net.net().output_dim());
  model.set("tau", tau);
  std::string widths;
  for (size_t i = 0; i < net.net().widths().size(); ++i) {
    if (i) widths += ",";
    widths += std::to_string(net.net().widths()[i]);
  }
  model.set("infnet_widths", widths);
  pack_params(model, net.params());
  return model;
}

inline LoadedMlcNet unpack_mlc_net(const ModelFile& model) {
  check_config(model.get("kind") == "mlc-local",
               msg_cat("model: expected kind mlc-local, got '", model.get("kind"), "'"));
  Rng scratch(0);
  auto iw = detail::parse_widths(model.get("infnet_widths"));
  LoadedMlcNet out{MLCInferenceNet(MLP("infnet", iw, Head::sigmoid, scratch)),
                   model.get_double("tau")};
  unpack_params(model, out.net.params());
  return out;
}

// ---- decoding helpers ----

inline TagSeq decode_viterbi(const ChainEnergy& energy, const std::vector<std::string>& tokens) {
  auto unary = energy.unary_scores(tokens);
  return viterbi(unary, energy.transition()->data, energy.n_labels()).tags;
}

inline std::vector<TagSeq> decode_viterbi_all(const ChainEnergy& energy,
                                              const SeqDataset& data) {
  std::vector<TagSeq> out;
  out.reserve(data.sentences.size());
  for (const auto& ex : data.sentences) out.push_back(decode_viterbi(energy, ex.tokens));
  return out;
}

inline std::vector<TagSeq> decode_infnet_all(const SeqInferenceNet& net,
                                             const SeqDataset& data) {
  std::vector<TagSeq> out;
  out.reserve(data.sentences.size());
  for (const auto& ex : data.sentences) out.push_back(discretize(net.predict_value(ex.tokens)));
  return out;
}

// ---- throughput benchmarking ----

struct BenchResult {
  double viterbi_eps = 0.0;   // examples/sec, BLSTM features + DP decode
  double infnet_eps = 0.0;    // examples/sec, inference-network forward + argmax
  double ratio = 0.0;         // infnet_eps / viterbi_eps
  size_t n_examples = 0;
  size_t batch_size = 0;
};

// Timing covers decoding only: the model is loaded and the dataset parsed
// before the clock starts. A short warmup precedes each measured region.
inline BenchResult bench_seq(const ChainEnergy& energy, const SeqInferenceNet& infnet,
                             const SeqDataset& data, size_t batch_size) {
  using clock = std::chrono::steady_clock;
  check_config(!data.sentences.empty(), "bench: empty dataset");
  BenchResult res;
  res.n_examples = data.sentences.size();
  res.batch_size = batch_size;

  size_t warm = std::min<size_t>(16, data.sentences.size());
  for (size_t i = 0; i < warm; ++i) (void)decode_viterbi(energy, data.sentences[i].tokens);
  auto t0 = clock::now();
  for (const auto& ex : data.sentences) (void)decode_viterbi(energy, ex.tokens);
  auto t1 = clock::now();

  for (size_t i = 0; i < warm; ++i) (void)infnet.predict_value(data.sentences[i].tokens);
  auto t2 = clock::now();
  for (const auto& ex : data.sentences) (void)discretize(infnet.predict_value(ex.tokens));
  auto t3 = clock::now();

  double vit_sec = std::chrono::duration<double>(t1 - t0).count();
  double inf_sec = std::chrono::duration<double>(t3 - t2).count();
  res.viterbi_eps = static_cast<double>(res.n_examples) / std::max(vit_sec, 1e-9);
  res.infnet_eps = static_cast<double>(res.n_examples) / std::max(inf_sec, 1e-9);
  res.ratio = res.infnet_eps / res.viterbi_eps;
  return res;
}

struct MlcBenchResult {
  double gd_eps = 0.0;      // gradient-descent inference
  double infnet_eps = 0.0;  // feed-forward inference network
  double ratio = 0.0;
  size_t n_examples = 0;
  size_t gd_steps = 0;
};

inline MlcBenchResult bench_mlc(const MLCEnergy& energy, const MLCInferenceNet& infnet,
                                const MLCDataset& data, size_t gd_steps, double gd_step_size) {
  using clock = std::chrono::steady_clock;
  check_config(!data.examples.empty(), "bench: empty dataset");
  MlcBenchResult res;
  res.n_examples = data.examples.size();
  res.gd_steps = gd_steps;

  size_t warm = std::min<size_t>(4, data.examples.size());
  for (size_t i = 0; i < warm; ++i) {
    (void)gd_inference_mlc(energy, data.examples[i].features, gd_steps, gd_step_size);
  }
  auto t0 = clock::now();
  for (const auto& ex : data.examples) {
    (void)gd_inference_mlc(energy, ex.features, gd_steps, gd_step_size);
  }
  auto t1 = clock::now();

  for (size_t i = 0; i < warm; ++i) (void)infnet.predict_value(data.examples[i].features);
  auto t2 = clock::now();
  for (const auto& ex : data.examples) (void)infnet.predict_value(ex.features);
  auto t3 = clock::now();

  double gd_sec = std::chrono::duration<double>(t1 - t0).count();
  double inf_sec = std::chrono::duration<double>(t3 - t2).count();
  res.gd_eps = static_cast<double>(res.n_examples) / std::max(gd_sec, 1e-9);
  res.infnet_eps = static_cast<double>(res.n_examples) / std::max(inf_sec, 1e-9);
  res.ratio = res.infnet_eps / res.gd_eps;
  return res;
}

// ---- pairwise potential export ----

// Comma-separated L x L matrix with tag names on the header row and column;
// entry (i, j) scores the transition from tag i to tag j.
inline void export_pairwise_csv(std::ostream& out, const ChainEnergy& energy,
                                const std::vector<std::string>& tags) {
  size_t l = energy.n_labels();
  check_config(tags.size() == l, "export-pairwise: tag list does not match model");
  const auto& w = energy.transition()->data;
  for (const auto& tag : tags) out << "," << tag;
  out << "\n";
  char buf[64];
  for (size_t i = 0; i < l; ++i) {
    out << tags[i];
    for (size_t j = 0; j < l; ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", w[i * l + j]);
      out << "," << buf;
    }
    out << "\n";
  }
}

// ---- synthetic corpus driver ----

struct GenSynthParams {
  size_t n_states = 8;
  size_t n_symbols = 50;
  size_t n_train = 5000;
  size_t n_dev = 1000;
  size_t n_test = 1000;
  size_t n_unlabeled = 2000;
  size_t min_len = 5;
  size_t max_len = 12;
  double cycle_strength = 0.8;
  double emission_window = 0.5;
  uint64_t seed = 1;
};

struct GenSynthResult {
  SeqDataset train, dev, test;
  std::vector<std::vector<std::string>> unlabeled;
};

inline GenSynthResult gen_synth(const GenSynthParams& p) {
  auto spec = SyntheticHMMSpec::structured(p.n_states, p.n_symbols, p.seed, p.cycle_strength,
                                           p.emission_window);
  GenSynthResult res;
  spec.seed = p.seed * 4 + 0;
  res.train = gen_hmm(spec, p.n_train, p.min_len, p.max_len);
  spec.seed = p.seed * 4 + 1;
  res.dev = gen_hmm(spec, p.n_dev, p.min_len, p.max_len);
  spec.seed = p.seed * 4 + 2;
  res.test = gen_hmm(spec, p.n_test, p.min_len, p.max_len);
  spec.seed = p.seed * 4 + 3;
  auto extra = gen_hmm(spec, p.n_unlabeled, p.min_len, p.max_len);
  for (auto& ex : extra.sentences) res.unlabeled.push_back(std::move(ex.tokens));
  res.dev.adopt_tagset(res.train.tag_names);
  res.test.adopt_tagset(res.train.tag_names);
  return res;
}

}  // namespace spen
