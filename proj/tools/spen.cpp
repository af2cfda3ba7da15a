// Command-line driver: training, distillation, evaluation, benchmarking and
// export for structured-prediction energy models.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "spen/config.hpp"
#include "spen/pipelines.hpp"

namespace fs = std::filesystem;
using namespace spen;

namespace {

struct CommonArgs {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<uint64_t> seed;
  std::string out_dir;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "key = value config file with [sections]");
  cmd->add_option("--override", args.overrides, "override: key=value (repeatable)");
  cmd->add_option("--seed", args.seed, "run seed (overrides config key 'seed')");
  cmd->add_option("--out", args.out_dir, "output directory (overrides [output] dir)");
}

ConfigMap build_config(const CommonArgs& args) {
  ConfigMap cfg;
  if (!args.config_path.empty()) cfg = ConfigMap::parse_file(args.config_path);
  for (const auto& o : args.overrides) cfg.apply_override(o);
  if (args.seed) cfg.set("seed", std::to_string(*args.seed));
  if (!args.out_dir.empty()) cfg.set("output.dir", args.out_dir);
  return cfg;
}

std::string resolve_out_dir(const ConfigMap& cfg) {
  std::string dir = cfg.get_string("output.dir");
  if (dir.empty()) {
    const char* root = std::getenv("SPEN_OUTPUT_ROOT");
    dir = root ? root : ".";
  }
  fs::create_directories(dir);
  return dir;
}

HingeKind parse_hinge(const std::string& s) {
  if (s == "margin" || s == "margin_rescaled") return HingeKind::margin_rescaled;
  if (s == "slack" || s == "slack_rescaled") return HingeKind::slack_rescaled;
  if (s == "perceptron") return HingeKind::perceptron;
  if (s == "contrastive") return HingeKind::contrastive;
  throw ConfigError(msg_cat("config: unknown hinge '", s, "'"));
}

CostKind parse_cost(const std::string& s) {
  if (s == "squared_l2") return CostKind::squared_l2;
  if (s == "l1") return CostKind::l1;
  if (s == "zero") return CostKind::zero;
  if (s == "one") return CostKind::one;
  throw ConfigError(msg_cat("config: unknown cost '", s, "'"));
}

Stabilizer parse_stabilizer(const std::string& s) {
  if (s == "none") return Stabilizer::none;
  if (s == "cross_entropy" || s == "ce") return Stabilizer::cross_entropy;
  if (s == "entropy") return Stabilizer::entropy;
  if (s == "l2" || s == "l2_to_pretrained") return Stabilizer::l2_to_pretrained;
  throw ConfigError(msg_cat("config: unknown stabilizer '", s, "'"));
}

OptKind parse_opt(const std::string& s) {
  if (s == "adam") return OptKind::adam;
  if (s == "sgd" || s == "sgd_momentum") return OptKind::sgd_momentum;
  throw ConfigError(msg_cat("config: unknown optimizer '", s, "'"));
}

TrainPlan read_plan(const ConfigMap& cfg, bool seq_defaults) {
  TrainPlan plan;
  plan.hinge = parse_hinge(cfg.get_string("train.hinge", seq_defaults ? "slack" : "contrastive"));
  plan.cost = parse_cost(cfg.get_string("train.cost", seq_defaults ? "l1" : "squared_l2"));
  plan.stab.l2_phi = cfg.get_double("train.lambda1", 0.0);
  plan.stab.entropy = cfg.get_double("train.lambda2", 0.0);
  plan.stab.local_ce = cfg.get_double("train.lambda3", seq_defaults ? 1.0 : 0.0);
  plan.stab.proximity = cfg.get_double("train.lambda4", 0.0);
  plan.stab.l2_theta = cfg.get_double("train.lambda", 0.0);
  plan.stab.validate();
  plan.theta_opt.kind = parse_opt(cfg.get_string("train.theta_optimizer", "adam"));
  plan.theta_opt.lr = cfg.get_double("train.lr_theta", 0.001);
  plan.theta_opt.momentum = cfg.get_double("train.theta_momentum", 0.9);
  plan.phi_opt.kind = parse_opt(cfg.get_string("train.phi_optimizer",
                                               seq_defaults ? "sgd" : "adam"));
  plan.phi_opt.lr = cfg.get_double("train.lr_phi", seq_defaults ? 0.05 : 0.001);
  plan.phi_opt.momentum = cfg.get_double("train.phi_momentum", 0.9);
  plan.batch_size = cfg.get_size("train.batch", 32);
  plan.epochs = cfg.get_size("train.epochs", 100);
  plan.patience = cfg.get_size("train.patience", 10);
  plan.seed = cfg.get_u64("seed", 1);
  plan.debug_checks = cfg.get_bool("train.debug_checks", false);
  return plan;
}

std::shared_ptr<EmbeddingTable> build_embeddings(const ConfigMap& cfg, const SeqDataset& train,
                                                 uint64_t seed) {
  std::string path = cfg.get_string("data.embeddings");
  size_t dim = cfg.get_size("model.emb_dim", 32);
  if (!path.empty()) {
    check_path_exists(path, "data.embeddings");
    return std::make_shared<EmbeddingTable>(EmbeddingTable::load(path, dim));
  }
  Rng rng = Rng(seed).fork(0xE0B);
  return std::make_shared<EmbeddingTable>(EmbeddingTable::random(train.vocabulary(), dim, rng));
}

SeqDataset read_seq_required(const ConfigMap& cfg, const std::string& key,
                             const std::vector<std::string>* tagset = nullptr) {
  std::string path = cfg.require_string(key);
  check_path_exists(path, key);
  return read_conll(path, tagset);
}

// ---- commands ----

int cmd_gen_synth(const ConfigMap& cfg) {
  GenSynthParams p;
  p.n_states = cfg.get_size("synth.states", 8);
  p.n_symbols = cfg.get_size("synth.symbols", 50);
  p.n_train = cfg.get_size("synth.train", 5000);
  p.n_dev = cfg.get_size("synth.dev", 1000);
  p.n_test = cfg.get_size("synth.test", 1000);
  p.n_unlabeled = cfg.get_size("synth.unlabeled", 2000);
  p.min_len = cfg.get_size("synth.min_len", 5);
  p.max_len = cfg.get_size("synth.max_len", 12);
  p.cycle_strength = cfg.get_double("synth.cycle", 0.8);
  p.emission_window = cfg.get_double("synth.window", 0.5);
  p.seed = cfg.get_u64("seed", 1);
  std::string out_dir = resolve_out_dir(cfg);
  cfg.reject_unknown_keys();

  auto res = gen_synth(p);
  write_conll(out_dir + "/train.conll", res.train);
  write_conll(out_dir + "/dev.conll", res.dev);
  write_conll(out_dir + "/test.conll", res.test);
  write_token_lines(out_dir + "/unlabeled.txt", res.unlabeled);
  Report report(out_dir + "/gen-synth.tsv");
  report.row({"states", std::to_string(p.n_states)});
  report.row({"symbols", std::to_string(p.n_symbols)});
  report.row({"train", std::to_string(res.train.sentences.size())});
  report.row({"dev", std::to_string(res.dev.sentences.size())});
  report.row({"test", std::to_string(res.test.sentences.size())});
  report.row({"unlabeled", std::to_string(res.unlabeled.size())});
  std::cout << "wrote synthetic corpus to " << out_dir << "\n";
  return 0;
}

int cmd_train_crf(const ConfigMap& cfg) {
  uint64_t seed = cfg.get_u64("seed", 1);
  auto train = read_seq_required(cfg, "data.train");
  auto dev = read_seq_required(cfg, "data.dev", &train.tag_names);
  auto emb = build_embeddings(cfg, train, seed);
  size_t hidden = cfg.get_size("model.hidden", 100);
  TrainPlan plan = read_plan(cfg, /*seq_defaults=*/true);
  plan.theta_opt.kind = parse_opt(cfg.get_string("train.theta_optimizer", "sgd"));
  std::string out_dir = resolve_out_dir(cfg);
  cfg.reject_unknown_keys();

  Rng rng = Rng(seed).fork(0x11);
  ChainEnergy energy(BLSTMEncoder("enc", emb->dim(), hidden, rng), emb,
                     train.n_labels(), rng);
  MetricsLog log(out_dir + "/metrics.log");
  auto hist = crf_nll_train(plan, train, dev, energy, log);
  save_model(out_dir + "/crf.model", pack_seq_crf(energy, train.tag_names, seed));
  Report report(out_dir + "/train-crf.tsv");
  report.row({"dev_token_accuracy", Report::num(hist.best_metric)});
  report.row({"best_epoch", std::to_string(hist.best_epoch)});
  report.row({"seed", std::to_string(seed)});
  std::cout << "dev token accuracy " << hist.best_metric << ", model at " << out_dir
            << "/crf.model\n";
  return 0;
}

int cmd_train_blstm(const ConfigMap& cfg) {
  uint64_t seed = cfg.get_u64("seed", 1);
  auto train = read_seq_required(cfg, "data.train");
  auto dev = read_seq_required(cfg, "data.dev", &train.tag_names);
  auto emb = build_embeddings(cfg, train, seed);
  size_t hidden = cfg.get_size("model.hidden", 100);
  TrainPlan plan = read_plan(cfg, true);
  std::string out_dir = resolve_out_dir(cfg);
  cfg.reject_unknown_keys();

  Rng rng = Rng(seed).fork(0x12);
  SeqInferenceNet net("infnet", emb, hidden, train.n_labels(), rng);
  MetricsLog log(out_dir + "/metrics.log");
  auto hist = local_train_seq(plan, train, dev, net, log);
  save_model(out_dir + "/tagger.model", pack_seq_net(net, train.tag_names, "seq-tagger", seed));
  Report report(out_dir + "/train-blstm.tsv");
  report.row({"dev_token_accuracy", Report::num(hist.best_metric)});
  report.row({"best_epoch", std::to_string(hist.best_epoch)});
  report.row({"seed", std::to_string(seed)});
  std::cout << "dev token accuracy " << hist.best_metric << ", model at " << out_dir
            << "/tagger.model\n";
  return 0;
}

int cmd_train_spen(const ConfigMap& cfg) {
  std::string task = cfg.get_string("task", "seq");
  uint64_t seed = cfg.get_u64("seed", 1);
  std::string out_dir = resolve_out_dir(cfg);

  if (task == "mlc") {
    std::string train_path = cfg.require_string("data.train");
    check_path_exists(train_path, "data.train");
    auto full_train = read_mlc(train_path);
    MLCDataset train = full_train, dev;
    std::string dev_path = cfg.get_string("data.dev");
    if (!dev_path.empty()) {
      check_path_exists(dev_path, "data.dev");
      dev = read_mlc(dev_path);
    } else {
      // Carve a seeded 10% dev split off the training data.
      Rng rng = Rng(seed).fork(0x13);
      std::vector<size_t> order(full_train.examples.size());
      for (size_t i = 0; i < order.size(); ++i) order[i] = i;
      rng.shuffle(order);
      size_t n_dev = std::max<size_t>(1, order.size() / 10);
      train.examples.clear();
      dev = MLCDataset{full_train.n_labels, full_train.n_features, {}};
      for (size_t i = 0; i < order.size(); ++i) {
        auto& dst = (i < n_dev) ? dev : train;
        dst.examples.push_back(full_train.examples[order[i]]);
      }
    }
    size_t hidden = cfg.get_size("model.hidden", 150);
    size_t lab_hidden = cfg.get_size("model.lab_hidden", 16);
    TrainPlan plan = read_plan(cfg, false);
    size_t pretrain_epochs = cfg.get_size("train.pretrain_epochs", 10);
    bool init_phi = cfg.get_bool("train.init_phi_from_pretrained", true);
    size_t retune_epochs = cfg.get_size("train.retune_epochs", 20);
    double retune_lr = cfg.get_double("train.retune_lr", 1e-5);
    std::string test_path = cfg.get_string("data.test");
    cfg.reject_unknown_keys();

    Rng rng = Rng(seed).fork(0x14);
    MLCInferenceNet pretrained("infnet", train.n_features, {hidden, hidden},
                               train.n_labels, rng);
    MetricsLog log(out_dir + "/metrics.log");
    TrainPlan pre_plan = plan;
    pre_plan.epochs = pretrain_epochs;
    pre_plan.patience = pretrain_epochs;
    pre_plan.theta_opt = {.kind = OptKind::adam, .lr = 0.001};
    local_train_mlc(pre_plan, train, dev, pretrained, log);

    // Feature net: the pretrained stack minus its sigmoid head.
    MLP feature("feature", {train.n_features, hidden, hidden}, Head::linear, rng);
    {
      auto src = pretrained.params();  // w0..wk, b0..bk
      auto dst = feature.params();
      // First two affine layers of the classifier (w0, w1, b0, b1).
      dst[0]->data = src[0]->data;
      dst[1]->data = src[1]->data;
      dst[2]->data = src[3]->data;
      dst[3]->data = src[4]->data;
    }
    MLCEnergy energy(std::move(feature), train.n_labels, lab_hidden, rng);
    freeze(energy.feature_params());

    MLCInferenceNet phi("infnet", train.n_features, {hidden, hidden}, train.n_labels, rng);
    auto anchor = snapshot(pretrained.params());
    if (init_phi) restore(phi.params(), anchor);

    auto hist = minimax_train_mlc(plan, train, dev, energy, phi,
                                  plan.stab.proximity > 0 ? &anchor : nullptr, log);

    // Test-time net psi starts from the trained cost-augmented phi.
    Rng clone_rng = Rng(seed).fork(0x15);
    MLCInferenceNet psi("infnet", train.n_features, {hidden, hidden}, train.n_labels,
                        clone_rng);
    restore(psi.params(), snapshot(phi.params()));
    auto retune_res = retune_mlc(energy, psi, dev, retune_epochs,
                                 {.kind = OptKind::adam, .lr = retune_lr}, seed, log);

    std::vector<RelaxedOutput> dev_preds;
    std::vector<LabelSet> dev_gold;
    for (const auto& ex : dev.examples) {
      dev_preds.push_back(psi.predict_value(ex.features));
      dev_gold.push_back(ex.gold);
    }
    double tau = tune_threshold(dev_preds, dev_gold);
    std::vector<LabelSet> dev_hard(dev_preds.size());
    for (size_t e = 0; e < dev_preds.size(); ++e) dev_hard[e] = discretize(dev_preds[e], tau);
    double dev_f1 = example_f1(dev_hard, dev_gold);

    save_model(out_dir + "/spen.model", pack_mlc_spen(energy, psi, tau, seed));
    Report report(out_dir + "/train-spen.tsv");
    report.row({"dev_example_f1", Report::num(dev_f1)});
    report.row({"tau", Report::num(tau)});
    report.row({"retune_initial_energy", Report::num(retune_res.initial_mean_energy)});
    report.row({"retune_final_energy", Report::num(retune_res.final_mean_energy)});
    report.row({"best_epoch", std::to_string(hist.best_epoch)});
    report.row({"seed", std::to_string(seed)});
    if (!test_path.empty()) {
      check_path_exists(test_path, "data.test");
      auto test = read_mlc(test_path);
      std::vector<LabelSet> pred, gold;
      for (const auto& ex : test.examples) {
        pred.push_back(discretize(psi.predict_value(ex.features), tau));
        gold.push_back(ex.gold);
      }
      double test_f1 = example_f1(pred, gold);
      report.row({"test_example_f1", Report::num(test_f1)});
      log.record(0, "test", "example_f1", test_f1);
      std::cout << "test example F1 " << test_f1 << "\n";
    }
    std::cout << "dev example F1 " << dev_f1 << " (tau " << tau << "), model at " << out_dir
              << "/spen.model\n";
    return 0;
  }

  check_config(task == "seq", msg_cat("config: unknown task '", task, "'"));
  auto train = read_seq_required(cfg, "data.train");
  auto dev = read_seq_required(cfg, "data.dev", &train.tag_names);
  auto emb = build_embeddings(cfg, train, seed);
  size_t hidden = cfg.get_size("model.hidden", 100);
  size_t infnet_hidden = cfg.get_size("model.infnet_hidden", hidden);
  TrainPlan plan = read_plan(cfg, true);
  size_t retune_epochs = cfg.get_size("train.retune_epochs", 0);
  double retune_lr = cfg.get_double("train.retune_lr", 1e-5);
  std::string tlm_path = cfg.get_string("data.tlm_model");
  double tlm_weight = cfg.get_double("train.tlm_weight", 0.0);
  std::string pretrained_path = cfg.get_string("data.pretrained");
  cfg.reject_unknown_keys();

  Rng rng = Rng(seed).fork(0x16);
  ChainEnergy energy(BLSTMEncoder("enc", emb->dim(), hidden, rng), emb, train.n_labels(),
                     rng);
  SeqInferenceNet phi("infnet", emb, infnet_hidden, train.n_labels(), rng);

  std::optional<LoadedTagLm> tlm_loaded;
  std::optional<TLMEnergy> tlm;
  if (!tlm_path.empty()) {
    check_path_exists(tlm_path, "data.tlm_model");
    tlm_loaded = unpack_tag_lm(load_model(tlm_path));
    check_config(tlm_loaded->tags == train.tag_names,
                 "train-spen: tag language model tag set does not match training data");
    tlm.emplace(tlm_loaded->lm);
  }
  SeqEnergyConfig energy_cfg{&energy, tlm ? &*tlm : nullptr, tlm_weight};

  std::optional<std::vector<std::vector<double>>> anchor;
  if (!pretrained_path.empty()) {
    check_path_exists(pretrained_path, "data.pretrained");
    auto loaded = unpack_seq_net(load_model(pretrained_path));
    check_config(loaded.net.hidden_dim() == infnet_hidden,
                 "train-spen: pretrained net width does not match infnet_hidden");
    anchor = snapshot(loaded.net.params());
    restore(phi.params(), *anchor);
  }

  MetricsLog log(out_dir + "/metrics.log");
  auto hist = minimax_train_seq(plan, train, dev, energy_cfg, phi,
                                anchor && plan.stab.proximity > 0 ? &*anchor : nullptr, log);
  RetuneResult retune_res;
  if (retune_epochs > 0) {
    retune_res = retune_seq(energy_cfg, phi, dev, retune_epochs,
                            {.kind = OptKind::sgd_momentum, .lr = retune_lr}, seed, log);
  }

  std::vector<TagSeq> preds, golds;
  for (const auto& ex : dev.sentences) {
    preds.push_back(discretize(phi.predict_value(ex.tokens)));
    golds.push_back(ex.tags);
  }
  double dev_acc = token_accuracy(preds, golds);
  save_model(out_dir + "/spen.model",
             pack_seq_spen(energy, phi, train.tag_names, seed, tlm ? &*tlm : nullptr,
                           tlm_weight));
  Report report(out_dir + "/train-spen.tsv");
  report.row({"dev_token_accuracy", Report::num(dev_acc)});
  report.row({"best_epoch", std::to_string(hist.best_epoch)});
  if (retune_epochs > 0) {
    report.row({"retune_initial_energy", Report::num(retune_res.initial_mean_energy)});
    report.row({"retune_final_energy", Report::num(retune_res.final_mean_energy)});
  }
  report.row({"seed", std::to_string(seed)});
  std::cout << "dev token accuracy " << dev_acc << ", model at " << out_dir
            << "/spen.model\n";
  return 0;
}

int cmd_train_tlm(const ConfigMap& cfg) {
  uint64_t seed = cfg.get_u64("seed", 1);
  std::string out_dir = resolve_out_dir(cfg);
  std::string tags_path = cfg.get_string("data.tags");
  std::string unlabeled_path = cfg.get_string("data.unlabeled");
  std::string tagger_path = cfg.get_string("data.tagger");
  size_t hidden = cfg.get_size("model.hidden", 100);
  size_t layers = cfg.get_size("model.layers", 1);
  double dropout = cfg.get_double("train.dropout", 0.5);
  double lr = cfg.get_double("train.lr", 0.5);
  size_t epochs = cfg.get_size("train.epochs", 30);
  size_t patience = cfg.get_size("train.patience", 5);
  double heldout_frac = cfg.get_double("train.heldout_fraction", 0.01);
  cfg.reject_unknown_keys();

  std::vector<std::string> tag_names;
  std::vector<TagSeq> corpus;
  if (!tags_path.empty()) {
    check_path_exists(tags_path, "data.tags");
    check_config(!tagger_path.empty(),
                 "train-tlm: data.tagger model is required to fix the tag set");
    auto teacher = load_model(tagger_path);
    tag_names = teacher.tags;
    corpus = read_tag_corpus(tags_path, tag_names);
  } else {
    // Auto-tag unlabeled text with a trained tagger, then train on the tags.
    check_config(!unlabeled_path.empty() && !tagger_path.empty(),
                 "train-tlm: need data.tags, or data.unlabeled plus data.tagger");
    check_path_exists(unlabeled_path, "data.unlabeled");
    check_path_exists(tagger_path, "data.tagger");
    auto inputs = read_token_lines(unlabeled_path);
    auto model = load_model(tagger_path);
    tag_names = model.tags;
    TaggerFn tagger;
    LoadedChain chain;
    LoadedSeqNet net;
    if (model.get("kind") == "seq-crf" || model.get("kind") == "seq-spen") {
      chain = unpack_seq_crf(model);
      tagger = [&chain](const std::vector<std::string>& tokens) {
        return decode_viterbi(chain.energy, tokens);
      };
    } else {
      net = unpack_seq_net(model);
      tagger = [&net](const std::vector<std::string>& tokens) {
        return discretize(net.net.predict_value(tokens));
      };
    }
    corpus = auto_tag(tagger, inputs);
    write_tag_corpus(out_dir + "/auto.tags", corpus, tag_names);
  }
  check_config(!corpus.empty(), "train-tlm: empty tag corpus");

  size_t n_heldout = std::max<size_t>(1, static_cast<size_t>(
                                            static_cast<double>(corpus.size()) * heldout_frac));
  check_config(n_heldout < corpus.size(), "train-tlm: corpus too small for held-out split");
  Rng rng = Rng(seed).fork(0x17);
  std::vector<size_t> order(corpus.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<TagSeq> train_split, heldout_split;
  for (size_t i = 0; i < order.size(); ++i) {
    (i < n_heldout ? heldout_split : train_split).push_back(corpus[order[i]]);
  }

  Rng init_rng = Rng(seed).fork(0x18);
  TagLMCell lm("tlm", tag_names.size(), hidden, layers, init_rng);
  MetricsLog log(out_dir + "/metrics.log");
  auto res = train_tag_lm(train_split, heldout_split, lm, epochs, patience,
                          {.kind = OptKind::sgd_momentum, .lr = lr}, dropout, seed, log);
  save_model(out_dir + "/tlm.model",
             pack_tag_lm(lm, tag_names, res.held_out_perplexity, seed));
  Report report(out_dir + "/train-tlm.tsv");
  report.row({"held_out_perplexity", Report::num(res.held_out_perplexity)});
  report.row({"train_sequences", std::to_string(train_split.size())});
  report.row({"seed", std::to_string(seed)});
  std::cout << "held-out perplexity " << res.held_out_perplexity << ", model at " << out_dir
            << "/tlm.model\n";
  return 0;
}

int cmd_distill(const ConfigMap& cfg) {
  uint64_t seed = cfg.get_u64("seed", 1);
  std::string out_dir = resolve_out_dir(cfg);
  std::string model_path = cfg.require_string("data.model");
  check_path_exists(model_path, "data.model");
  auto teacher = unpack_seq_crf(load_model(model_path));
  auto train = read_seq_required(cfg, "data.train", &teacher.tags);
  auto dev = read_seq_required(cfg, "data.dev", &teacher.tags);
  size_t student_hidden = cfg.get_size("model.student_hidden", 50);
  auto stabilizer = parse_stabilizer(cfg.get_string("train.stabilizer", "cross_entropy"));
  double weight = cfg.get_double("train.stabilizer_weight", 1.0);
  TrainPlan plan = read_plan(cfg, true);
  std::string pretrained_path = cfg.get_string("data.pretrained");
  cfg.reject_unknown_keys();

  Rng rng = Rng(seed).fork(0x19);
  SeqInferenceNet student("infnet", teacher.emb, student_hidden, teacher.tags.size(), rng);
  std::optional<std::vector<std::vector<double>>> anchor;
  if (stabilizer == Stabilizer::l2_to_pretrained) {
    check_config(!pretrained_path.empty(),
                 "distill: stabilizer l2_to_pretrained needs data.pretrained");
    check_path_exists(pretrained_path, "data.pretrained");
    auto loaded = unpack_seq_net(load_model(pretrained_path));
    check_config(loaded.net.hidden_dim() == student_hidden,
                 "distill: pretrained width does not match student_hidden");
    anchor = snapshot(loaded.net.params());
    restore(student.params(), *anchor);
  }

  MetricsLog log(out_dir + "/metrics.log");
  auto hist = distill_crf(plan, train, dev, teacher.energy, student,
                          anchor ? &*anchor : nullptr, stabilizer, weight, log);
  save_model(out_dir + "/infnet.model",
             pack_seq_net(student, teacher.tags, "seq-infnet", seed));
  Report report(out_dir + "/distill.tsv");
  report.row({"dev_token_accuracy", Report::num(hist.best_metric)});
  report.row({"stabilizer", to_string(stabilizer)});
  report.row({"seed", std::to_string(seed)});
  std::cout << "dev token accuracy " << hist.best_metric << ", model at " << out_dir
            << "/infnet.model\n";
  return 0;
}

int cmd_retune(const ConfigMap& cfg) {
  uint64_t seed = cfg.get_u64("seed", 1);
  std::string out_dir = resolve_out_dir(cfg);
  std::string model_path = cfg.require_string("data.model");
  check_path_exists(model_path, "data.model");
  auto model = load_model(model_path);
  size_t epochs = cfg.get_size("train.epochs", 20);
  double lr = cfg.get_double("train.lr", 1e-5);
  MetricsLog log(out_dir + "/metrics.log");
  RetuneResult res;

  if (model.get("task") == "mlc") {
    auto loaded = unpack_mlc_spen(model);
    std::string data_path = cfg.require_string("data.inputs");
    check_path_exists(data_path, "data.inputs");
    auto inputs = read_mlc(data_path);
    cfg.reject_unknown_keys();
    res = retune_mlc(loaded.energy, loaded.infnet, inputs, epochs,
                     {.kind = OptKind::adam, .lr = lr}, seed, log);
    save_model(out_dir + "/retuned.model",
               pack_mlc_spen(loaded.energy, loaded.infnet, loaded.tau, seed));
  } else {
    auto loaded = unpack_seq_spen(model);
    std::string data_path = cfg.require_string("data.inputs");
    check_path_exists(data_path, "data.inputs");
    auto inputs = read_conll(data_path, &loaded.tags);
    cfg.reject_unknown_keys();
    SeqEnergyConfig energy_cfg{&loaded.energy, loaded.tlm ? &*loaded.tlm : nullptr,
                               loaded.tlm_weight};
    res = retune_seq(energy_cfg, loaded.infnet, inputs, epochs,
                     {.kind = OptKind::sgd_momentum, .lr = lr}, seed, log);
    save_model(out_dir + "/retuned.model",
               pack_seq_spen(loaded.energy, loaded.infnet, loaded.tags, seed,
                             loaded.tlm ? &*loaded.tlm : nullptr, loaded.tlm_weight));
  }
  Report report(out_dir + "/retune.tsv");
  report.row({"initial_mean_energy", Report::num(res.initial_mean_energy)});
  report.row({"final_mean_energy", Report::num(res.final_mean_energy)});
  report.row({"seed", std::to_string(seed)});
  std::cout << "mean energy " << res.initial_mean_energy << " -> " << res.final_mean_energy
            << ", model at " << out_dir << "/retuned.model\n";
  return 0;
}

int cmd_eval(const ConfigMap& cfg) {
  std::string out_dir = resolve_out_dir(cfg);
  std::string model_path = cfg.require_string("data.model");
  check_path_exists(model_path, "data.model");
  auto model = load_model(model_path);
  std::string data_path = cfg.require_string("data.inputs");
  check_path_exists(data_path, "data.inputs");
  std::string split = cfg.get_string("eval.split", "test");
  std::string kind = model.get("kind");
  cfg.reject_unknown_keys();

  MetricsLog log(out_dir + "/metrics.log");
  Report report(out_dir + "/eval.tsv");
  if (model.get("task") == "mlc") {
    auto data = read_mlc(data_path);
    const MLCInferenceNet* net = nullptr;
    LoadedMlcSpen spen_model;
    LoadedMlcNet local_model;
    double tau;
    if (kind == "mlc-spen") {
      spen_model = unpack_mlc_spen(model);
      net = &spen_model.infnet;
      tau = spen_model.tau;
    } else {
      local_model = unpack_mlc_net(model);
      net = &local_model.net;
      tau = local_model.tau;
    }
    std::vector<LabelSet> pred, gold;
    for (const auto& ex : data.examples) {
      pred.push_back(discretize(net->predict_value(ex.features), tau));
      gold.push_back(ex.gold);
    }
    double f1 = example_f1(pred, gold);
    log.record(0, split, "example_f1", f1);
    report.row({split + "_example_f1", Report::num(f1)});
    report.row({"tau", Report::num(tau)});
    std::cout << split << " example F1 " << f1 << "\n";
    return 0;
  }

  std::vector<TagSeq> pred, gold;
  std::vector<std::string> tag_names = model.tags;
  auto data = read_conll(data_path, &tag_names);
  if (kind == "seq-crf") {
    auto loaded = unpack_seq_crf(model);
    pred = decode_viterbi_all(loaded.energy, data);
  } else if (kind == "seq-spen") {
    auto loaded = unpack_seq_spen(model);
    pred = decode_infnet_all(loaded.infnet, data);
  } else {
    auto loaded = unpack_seq_net(model);
    pred = decode_infnet_all(loaded.net, data);
  }
  for (const auto& ex : data.sentences) gold.push_back(ex.tags);
  double acc = token_accuracy(pred, gold);
  log.record(0, split, "token_accuracy", acc);
  report.row({split + "_token_accuracy", Report::num(acc)});
  std::cout << split << " token accuracy " << acc << "\n";

  // Chunk F1 when the tag set looks like a BIOES scheme.
  bool bioes = false;
  for (const auto& t : tag_names) bioes |= (t.size() > 1 && t[1] == '-');
  if (bioes) {
    std::vector<std::vector<std::string>> pred_tags, gold_tags;
    for (size_t s = 0; s < pred.size(); ++s) {
      std::vector<std::string> p, g;
      for (int t : pred[s]) p.push_back(tag_names[t]);
      for (int t : gold[s]) g.push_back(tag_names[t]);
      pred_tags.push_back(std::move(p));
      gold_tags.push_back(std::move(g));
    }
    auto prf = chunk_f1(pred_tags, gold_tags);
    log.record(0, split, "chunk_f1", prf.f1);
    report.row({split + "_chunk_precision", Report::num(prf.precision)});
    report.row({split + "_chunk_recall", Report::num(prf.recall)});
    report.row({split + "_chunk_f1", Report::num(prf.f1)});
    std::cout << split << " chunk F1 " << prf.f1 << "\n";
  }
  return 0;
}

int cmd_bench(const ConfigMap& cfg) {
  std::string out_dir = resolve_out_dir(cfg);
  std::string model_path = cfg.require_string("data.model");
  check_path_exists(model_path, "data.model");
  auto model = load_model(model_path);
  std::string data_path = cfg.require_string("data.inputs");
  check_path_exists(data_path, "data.inputs");
  size_t batch = cfg.get_size("bench.batch", 32);

  Report report(out_dir + "/bench.tsv");
  if (model.get("task") == "mlc") {
    auto loaded = unpack_mlc_spen(model);
    auto data = read_mlc(data_path);
    size_t gd_steps = cfg.get_size("bench.gd_steps", 20);
    double gd_step_size = cfg.get_double("bench.gd_step_size", 0.1);
    cfg.reject_unknown_keys();
    auto res = bench_mlc(loaded.energy, loaded.infnet, data, gd_steps, gd_step_size);
    report.row({"method", "examples_per_sec"});
    report.row({"gradient_descent_inference", Report::num(res.gd_eps)});
    report.row({"inference_network", Report::num(res.infnet_eps)});
    report.row({"speedup", Report::num(res.ratio)});
    report.row({"measured_region", "decode only; data loading and model IO excluded"});
    std::cout << "gd " << res.gd_eps << " ex/s, infnet " << res.infnet_eps << " ex/s (x"
              << res.ratio << ")\n";
    return 0;
  }

  LoadedChain chain;
  SeqInferenceNet* infnet = nullptr;
  LoadedSeqSpen spen_loaded;
  LoadedSeqNet net_loaded;
  if (model.get("kind") == "seq-spen") {
    spen_loaded = unpack_seq_spen(model);
    chain.emb = spen_loaded.emb;
    chain.energy = spen_loaded.energy;
    chain.tags = spen_loaded.tags;
    infnet = &spen_loaded.infnet;
  } else {
    chain = unpack_seq_crf(model);
    std::string infnet_path = cfg.require_string("data.infnet");
    check_path_exists(infnet_path, "data.infnet");
    net_loaded = unpack_seq_net(load_model(infnet_path));
    infnet = &net_loaded.net;
  }
  auto data = read_conll(data_path, &chain.tags);
  cfg.reject_unknown_keys();
  auto res = bench_seq(chain.energy, *infnet, data, batch);
  report.row({"method", "examples_per_sec"});
  report.row({"viterbi", Report::num(res.viterbi_eps)});
  report.row({"inference_network", Report::num(res.infnet_eps)});
  report.row({"speedup", Report::num(res.ratio)});
  report.row({"batch", std::to_string(batch)});
  report.row({"measured_region", "decode only; data loading and model IO excluded"});
  std::cout << "viterbi " << res.viterbi_eps << " ex/s, infnet " << res.infnet_eps
            << " ex/s (x" << res.ratio << ")\n";
  return 0;
}

int cmd_export_pairwise(const ConfigMap& cfg) {
  std::string out_dir = resolve_out_dir(cfg);
  std::string model_path = cfg.require_string("data.model");
  check_path_exists(model_path, "data.model");
  std::string out_path = cfg.get_string("export.out", out_dir + "/pairwise.csv");
  cfg.reject_unknown_keys();
  auto loaded = unpack_seq_crf(load_model(model_path));
  std::ofstream out(out_path);
  check_config(out.good(), msg_cat("export-pairwise: cannot open ", out_path));
  export_pairwise_csv(out, loaded.energy, loaded.tags);
  std::cout << "wrote " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"structured energies with trained inference networks"};
  app.require_subcommand(1);

  struct Cmd {
    const char* name;
    const char* help;
    int (*run)(const ConfigMap&);
  };
  const std::vector<Cmd> commands = {
      {"train-spen", "jointly train an energy and a cost-augmented inference network",
       cmd_train_spen},
      {"train-crf", "train a linear-chain CRF with exact forward-backward", cmd_train_crf},
      {"train-blstm", "train a local BLSTM tagger baseline", cmd_train_blstm},
      {"train-tlm", "train a tag language model on (auto-)tagged sequences", cmd_train_tlm},
      {"distill", "train an inference network to mimic Viterbi for a trained CRF",
       cmd_distill},
      {"retune", "retune a test-time inference network on unlabeled inputs", cmd_retune},
      {"eval", "evaluate a saved model on a dataset", cmd_eval},
      {"bench", "compare decoding throughput: exact inference vs inference network",
       cmd_bench},
      {"gen-synth", "generate a synthetic HMM-tagged corpus", cmd_gen_synth},
      {"export-pairwise", "export the learned pairwise potential matrix as CSV",
       cmd_export_pairwise},
  };

  std::vector<std::pair<CommonArgs, const Cmd*>> parsed;
  parsed.reserve(commands.size());
  for (const auto& c : commands) {
    auto* sub = app.add_subcommand(c.name, c.help);
    parsed.emplace_back(CommonArgs{}, &c);
    add_common(sub, parsed.back().first);
  }

  CLI11_PARSE(app, argc, argv);

  for (size_t i = 0; i < commands.size(); ++i) {
    if (app.get_subcommands().front()->get_name() == commands[i].name) {
      try {
        ConfigMap cfg = build_config(parsed[i].first);
        return parsed[i].second->run(cfg);
      } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
      } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 2;
      }
    }
  }
  return 1;
}
