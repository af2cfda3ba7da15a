#pragma once

#include <cstdio>
#include <fstream>
#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "spen/data.hpp"
#include "spen/energies.hpp"
#include "spen/inference.hpp"
#include "spen/losses.hpp"
#include "spen/metrics.hpp"
#include "spen/optim.hpp"

namespace spen {

// lambda2 may be negative: the entropy term can reward either low- or
// high-entropy outputs depending on the task.
struct StabilizerWeights {
  double l2_phi = 0.0;        // lambda1
  double entropy = 0.0;       // lambda2
  double local_ce = 0.0;      // lambda3
  double proximity = 0.0;     // lambda4, toward the pretrained anchor
  double l2_theta = 0.0;      // lambda

  void validate() const {
    check_config(l2_phi >= 0 && local_ce >= 0 && proximity >= 0 && l2_theta >= 0,
                 "stabilizers: only the entropy weight may be negative");
  }
};

struct TrainPlan {
  HingeKind hinge = HingeKind::margin_rescaled;
  CostKind cost = CostKind::squared_l2;
  StabilizerWeights stab;
  OptConfig theta_opt{.kind = OptKind::adam, .lr = 0.001};
  OptConfig phi_opt{.kind = OptKind::adam, .lr = 0.001};
  size_t batch_size = 32;
  size_t epochs = 100;
  size_t patience = 10;
  uint64_t seed = 1;
  bool debug_checks = true;
};

// Line-oriented training log: epoch<TAB>split<TAB>metric<TAB>value, flushed
// per record so partial runs stay inspectable.
class MetricsLog {
 public:
  MetricsLog() = default;
  explicit MetricsLog(const std::string& path) : out_(std::make_shared<std::ofstream>(path)) {
    check_config(out_->good(), msg_cat("metrics log: cannot open ", path));
  }

  void record(size_t epoch, const std::string& split, const std::string& metric,
              double value) {
    if (!out_) return;
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.8g", value);
    (*out_) << epoch << "\t" << split << "\t" << metric << "\t" << buf << "\n";
    out_->flush();
  }

 private:
  std::shared_ptr<std::ofstream> out_;
};

struct TrainHistory {
  std::vector<double> dev_metric;   // primary early-stopping metric per epoch
  std::vector<double> dev_hinge;    // mean dev hinge per epoch (SPEN trainers)
  std::vector<double> train_loss;   // mean train objective per epoch
  size_t best_epoch = 0;
  double best_metric = -std::numeric_limits<double>::infinity();
  bool early_stopped = false;
};

namespace detail {

inline std::vector<std::vector<size_t>> make_batches(size_t n, size_t batch_size, Rng& rng) {
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<std::vector<size_t>> batches;
  for (size_t start = 0; start < n; start += batch_size) {
    size_t end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + start, order.begin() + end);
  }
  return batches;
}

inline std::vector<Tape::Id> one_hot_nodes(Tape& tape, const TagSeq& tags, size_t n_labels) {
  std::vector<Tape::Id> out(tags.size());
  for (size_t t = 0; t < tags.size(); ++t) {
    out[t] = tape.constant({n_labels}, one_hot(static_cast<size_t>(tags[t]), n_labels));
  }
  return out;
}

inline void assert_zero_grads(std::span<const ad::TensorPtr> params, const char* side) {
  for (const auto& p : params) {
    for (double g : p->grad) {
      check(g == 0.0, msg_cat("objective separation violated: gradient reached ", side,
                              " parameter '", p->name, "'"));
    }
  }
}

// Tracks the best-scoring snapshot of a parameter set (higher is better).
class BestSnapshot {
 public:
  explicit BestSnapshot(std::vector<ad::TensorPtr> params) : params_(std::move(params)) {}

  bool offer(double metric, size_t epoch) {
    if (metric > best_) {
      best_ = metric;
      epoch_ = epoch;
      values_ = snapshot(params_);
      return true;
    }
    return false;
  }

  void restore_best() {
    if (!values_.empty()) restore(params_, values_);
  }

  double best() const { return best_; }
  size_t best_epoch() const { return epoch_; }

 private:
  std::vector<ad::TensorPtr> params_;
  std::vector<std::vector<double>> values_;
  double best_ = -std::numeric_limits<double>::infinity();
  size_t epoch_ = 0;
};

}  // namespace detail

// ---- threshold tuning (MLC) ----

// The grid the threshold is tuned over; ties resolve to the smaller value.
inline const std::vector<double>& threshold_grid() {
  static const std::vector<double> grid = {0.0,  0.01, 0.02, 0.03, 0.04, 0.05, 0.1,
                                           0.15, 0.2,  0.25, 0.3,  0.35, 0.4,  0.45,
                                           0.5,  0.55, 0.6,  0.65, 0.7,  0.75};
  return grid;
}

inline double tune_threshold(const std::vector<RelaxedOutput>& dev_pred,
                             const std::vector<LabelSet>& dev_gold) {
  check(!dev_pred.empty(), "tune_threshold: empty dev set");
  check(dev_pred.size() == dev_gold.size(), "tune_threshold: size mismatch");
  double best_tau = threshold_grid().front();
  double best_f1 = -1.0;
  for (double tau : threshold_grid()) {
    std::vector<LabelSet> preds(dev_pred.size());
    for (size_t e = 0; e < dev_pred.size(); ++e) preds[e] = discretize(dev_pred[e], tau);
    double f1 = example_f1(preds, dev_gold);
    if (f1 > best_f1) {
      best_f1 = f1;
      best_tau = tau;
    }
  }
  return best_tau;
}

// ---- MLC SPEN objectives ----

struct MlcBatchRefs {
  const MLCDataset* data;
  const std::vector<size_t>* indices;
};

// Per-example hinge plus the per-example stabilization terms, averaged over
// the batch; the global regularizers are added once. Returns the node to
// MAXIMIZE for phi.
inline Tape::Id phi_objective_mlc(Tape& tape, const MlcBatchRefs& batch,
                                  const MLCEnergy& energy, const MLCInferenceNet& phi,
                                  const std::vector<std::vector<double>>* phi0,
                                  const TrainPlan& plan) {
  CostKind delta_kind = effective_cost(plan.hinge, plan.cost);
  Tape::Id acc = tape.constant_scalar(0.0);
  for (size_t idx : *batch.indices) {
    const auto& ex = batch.data->examples[idx];
    auto fx = energy.feature(tape, ex.features);
    auto y_pred = phi.net().forward(tape, tape.constant({ex.features.dim},
                                                        ex.features.to_dense()));
    auto gold = tape.constant({energy.n_labels()},
                              to_relaxed(ex.gold, energy.n_labels()).labels);
    auto delta = cost_node(tape, delta_kind, y_pred, gold);
    auto e_pred = energy.energy(tape, fx, y_pred, /*validate=*/false);
    auto e_gold = energy.energy(tape, fx, gold, /*validate=*/false);
    auto term = hinge_node(tape, plan.hinge, delta, e_pred, e_gold);
    if (plan.stab.entropy != 0.0) {
      term = tape.add(term, tape.scale(entropy_mlc_node(tape, y_pred), plan.stab.entropy));
    }
    if (plan.stab.local_ce != 0.0) {
      term = tape.sub(term, tape.scale(bce_node(tape, y_pred, tape.value(gold)),
                                       plan.stab.local_ce));
    }
    acc = tape.add(acc, term);
  }
  auto obj = tape.scale(acc, 1.0 / static_cast<double>(batch.indices->size()));
  auto phi_params = phi.params();
  if (plan.stab.l2_phi != 0.0) {
    obj = tape.sub(obj, tape.scale(l2_node(tape, phi_params), plan.stab.l2_phi));
  }
  if (plan.stab.proximity != 0.0 && phi0 != nullptr) {
    obj = tape.sub(obj, tape.scale(l2_distance_node(tape, phi_params, *phi0),
                                   plan.stab.proximity));
  }
  return obj;
}

// Batch-mean hinge plus lambda ||Theta||^2; the node to MINIMIZE for theta.
inline Tape::Id theta_objective_mlc(Tape& tape, const MlcBatchRefs& batch,
                                    const MLCEnergy& energy, const MLCInferenceNet& phi,
                                    const TrainPlan& plan) {
  CostKind delta_kind = effective_cost(plan.hinge, plan.cost);
  Tape::Id acc = tape.constant_scalar(0.0);
  for (size_t idx : *batch.indices) {
    const auto& ex = batch.data->examples[idx];
    auto fx = energy.feature(tape, ex.features);
    auto y_pred = phi.net().forward(tape, tape.constant({ex.features.dim},
                                                        ex.features.to_dense()));
    auto gold = tape.constant({energy.n_labels()},
                              to_relaxed(ex.gold, energy.n_labels()).labels);
    auto delta = cost_node(tape, delta_kind, y_pred, gold);
    auto e_pred = energy.energy(tape, fx, y_pred, /*validate=*/false);
    auto e_gold = energy.energy(tape, fx, gold, /*validate=*/false);
    acc = tape.add(acc, hinge_node(tape, plan.hinge, delta, e_pred, e_gold));
  }
  auto obj = tape.scale(acc, 1.0 / static_cast<double>(batch.indices->size()));
  if (plan.stab.l2_theta != 0.0) {
    auto theta = energy.theta_params();
    obj = tape.add(obj, tape.scale(l2_node(tape, theta), plan.stab.l2_theta));
  }
  return obj;
}

// ---- sequence SPEN objectives ----

struct SeqBatchRefs {
  const SeqDataset* data;
  const std::vector<size_t>* indices;
};

struct SeqEnergyConfig {
  const ChainEnergy* chain = nullptr;
  const TLMEnergy* tlm = nullptr;  // optional, frozen
  double tlm_weight = 0.0;
};

namespace detail {

struct SeqExampleNodes {
  Tape::Id e_pred;
  Tape::Id e_gold;
  std::vector<Tape::Id> y_pred;
  std::vector<Tape::Id> y_gold;
};

inline SeqExampleNodes seq_energies(Tape& tape, const SeqEnergyConfig& energy,
                                    const SeqInferenceNet& phi, const SeqExample& ex) {
  SeqExampleNodes out;
  size_t l = energy.chain->n_labels();
  auto unary = energy.chain->unary_nodes(tape, ex.tokens);
  out.y_pred = phi.predict(tape, ex.tokens);
  out.y_gold = one_hot_nodes(tape, ex.tags, l);
  out.e_pred = energy.chain->energy_from_unaries(tape, unary, out.y_pred, false);
  out.e_gold = energy.chain->energy_from_unaries(tape, unary, out.y_gold, false);
  if (energy.tlm != nullptr && energy.tlm_weight != 0.0) {
    out.e_pred = tape.add(out.e_pred, tape.scale(energy.tlm->energy(tape, out.y_pred),
                                                 energy.tlm_weight));
    out.e_gold = tape.add(out.e_gold, tape.scale(energy.tlm->energy(tape, out.y_gold),
                                                 energy.tlm_weight));
  }
  return out;
}

}  // namespace detail

inline Tape::Id phi_objective_seq(Tape& tape, const SeqBatchRefs& batch,
                                  const SeqEnergyConfig& energy, const SeqInferenceNet& phi,
                                  const std::vector<std::vector<double>>* phi0,
                                  const TrainPlan& plan) {
  CostKind delta_kind = effective_cost(plan.hinge, plan.cost);
  Tape::Id acc = tape.constant_scalar(0.0);
  for (size_t idx : *batch.indices) {
    const auto& ex = batch.data->sentences[idx];
    auto nodes = detail::seq_energies(tape, energy, phi, ex);
    auto delta = cost_node_seq(tape, delta_kind, nodes.y_pred, nodes.y_gold);
    auto term = hinge_node(tape, plan.hinge, delta, nodes.e_pred, nodes.e_gold);
    if (plan.stab.entropy != 0.0) {
      term = tape.add(term, tape.scale(entropy_seq_node(tape, nodes.y_pred),
                                       plan.stab.entropy));
    }
    if (plan.stab.local_ce != 0.0) {
      term = tape.sub(term, tape.scale(ce_seq_node(tape, nodes.y_pred, ex.tags),
                                       plan.stab.local_ce));
    }
    acc = tape.add(acc, term);
  }
  auto obj = tape.scale(acc, 1.0 / static_cast<double>(batch.indices->size()));
  auto phi_params = phi.params();
  if (plan.stab.l2_phi != 0.0) {
    obj = tape.sub(obj, tape.scale(l2_node(tape, phi_params), plan.stab.l2_phi));
  }
  if (plan.stab.proximity != 0.0 && phi0 != nullptr) {
    obj = tape.sub(obj, tape.scale(l2_distance_node(tape, phi_params, *phi0),
                                   plan.stab.proximity));
  }
  return obj;
}

inline Tape::Id theta_objective_seq(Tape& tape, const SeqBatchRefs& batch,
                                    const SeqEnergyConfig& energy, const SeqInferenceNet& phi,
                                    const TrainPlan& plan) {
  CostKind delta_kind = effective_cost(plan.hinge, plan.cost);
  Tape::Id acc = tape.constant_scalar(0.0);
  for (size_t idx : *batch.indices) {
    const auto& ex = batch.data->sentences[idx];
    auto nodes = detail::seq_energies(tape, energy, phi, ex);
    auto delta = cost_node_seq(tape, delta_kind, nodes.y_pred, nodes.y_gold);
    acc = tape.add(acc, hinge_node(tape, plan.hinge, delta, nodes.e_pred, nodes.e_gold));
  }
  auto obj = tape.scale(acc, 1.0 / static_cast<double>(batch.indices->size()));
  if (plan.stab.l2_theta != 0.0) {
    auto theta = energy.chain->params();
    obj = tape.add(obj, tape.scale(l2_node(tape, theta), plan.stab.l2_theta));
  }
  return obj;
}

// ---- the alternating minimax trainer ----

// One phi mini-batch (ascent) then one theta mini-batch (descent), repeated
// across the shuffled batch stream. Dev metric drives early stopping; the
// best (theta, phi) checkpoint is restored at the end.
template <typename PhiStepFn, typename ThetaStepFn, typename DevEvalFn>
TrainHistory minimax_loop(const TrainPlan& plan, size_t n_examples,
                          std::vector<ad::TensorPtr> theta_params,
                          std::vector<ad::TensorPtr> phi_params, PhiStepFn phi_step,
                          ThetaStepFn theta_step, DevEvalFn dev_eval, MetricsLog& log) {
  check_config(plan.batch_size >= 1, "train: batch size must be >= 1");
  Optimizer phi_opt(plan.phi_opt), theta_opt(plan.theta_opt);
  Rng shuffle_rng = Rng(plan.seed).fork(0x5u);

  std::vector<ad::TensorPtr> all_params = theta_params;
  all_params += phi_params;
  detail::BestSnapshot best(all_params);
  TrainHistory hist;
  size_t since_best = 0;

  for (size_t epoch = 0; epoch < plan.epochs; ++epoch) {
    auto batches = detail::make_batches(n_examples, plan.batch_size, shuffle_rng);
    double epoch_loss = 0.0;
    size_t n_updates = 0;
    for (size_t b = 0; b < batches.size(); ++b) {
      bool phi_turn = (b % 2 == 0);
      try {
        if (phi_turn) {
          uint64_t theta_hash_before =
              plan.debug_checks ? ad::param_hash(theta_params) : 0;
          FreezeGuard freeze_theta(theta_params);
          ad::zero_grads(phi_params);
          ad::zero_grads(theta_params);  // so the separation check sees only this step
          double obj = phi_step(batches[b], phi_opt);
          epoch_loss += -obj;
          if (plan.debug_checks) {
            detail::assert_zero_grads(theta_params, "theta");
            check(ad::param_hash(theta_params) == theta_hash_before,
                  "phi step modified theta parameters");
          }
        } else {
          uint64_t phi_hash_before = plan.debug_checks ? ad::param_hash(phi_params) : 0;
          FreezeGuard freeze_phi(phi_params);
          ad::zero_grads(theta_params);
          ad::zero_grads(phi_params);
          double obj = theta_step(batches[b], theta_opt);
          epoch_loss += obj;
          if (plan.debug_checks) {
            detail::assert_zero_grads(phi_params, "phi");
            check(ad::param_hash(phi_params) == phi_hash_before,
                  "theta step modified phi parameters");
          }
        }
        ++n_updates;
      } catch (const NumericError& e) {
        throw NumericError(msg_cat(e.what(), " (epoch ", epoch, ", batch ", b, ")"));
      }
    }
    hist.train_loss.push_back(n_updates ? epoch_loss / static_cast<double>(n_updates) : 0.0);

    auto [metric, hinge] = dev_eval();
    hist.dev_metric.push_back(metric);
    hist.dev_hinge.push_back(hinge);
    log.record(epoch, "train", "objective", hist.train_loss.back());
    log.record(epoch, "dev", "metric", metric);
    log.record(epoch, "dev", "hinge", hinge);

    if (best.offer(metric, epoch)) {
      since_best = 0;
    } else if (++since_best >= plan.patience) {
      hist.early_stopped = true;
      break;
    }
  }
  best.restore_best();
  hist.best_epoch = best.best_epoch();
  hist.best_metric = best.best();
  return hist;
}

// MLC minimax training. The feature net F(x) inside the energy must already
// be frozen by the caller; theta covers only the energy's own parameters.
inline TrainHistory minimax_train_mlc(const TrainPlan& plan, const MLCDataset& train,
                                      const MLCDataset& dev, MLCEnergy& energy,
                                      MLCInferenceNet& phi,
                                      const std::vector<std::vector<double>>* phi0,
                                      MetricsLog& log) {
  check_config(!train.examples.empty(), "train-spen: empty training set");
  check_config(!dev.examples.empty(), "train-spen: empty dev set");
  auto theta = energy.theta_params();
  auto phi_params = phi.params();

  auto phi_step = [&](const std::vector<size_t>& batch, Optimizer& opt) {
    Tape tape;
    MlcBatchRefs refs{&train, &batch};
    auto obj = phi_objective_mlc(tape, refs, energy, phi, phi0, plan);
    auto loss = tape.neg(obj);  // maximize
    check_finite(tape.scalar(loss), "phi objective");
    tape.backward(loss);
    opt.step(phi_params);
    return tape.scalar(obj);
  };
  auto theta_step = [&](const std::vector<size_t>& batch, Optimizer& opt) {
    Tape tape;
    MlcBatchRefs refs{&train, &batch};
    auto obj = theta_objective_mlc(tape, refs, energy, phi, plan);
    check_finite(tape.scalar(obj), "theta objective");
    tape.backward(obj);
    opt.step(theta);
    return tape.scalar(obj);
  };
  auto dev_eval = [&]() -> std::pair<double, double> {
    std::vector<RelaxedOutput> preds;
    std::vector<LabelSet> golds;
    double hinge_total = 0.0;
    CostKind delta_kind = effective_cost(plan.hinge, plan.cost);
    for (const auto& ex : dev.examples) {
      auto pred = phi.predict_value(ex.features);
      auto gold = to_relaxed(ex.gold, energy.n_labels());
      Tape tape;
      auto fx = energy.feature(tape, ex.features);
      auto yp = tape.constant({energy.n_labels()}, pred.labels);
      auto yg = tape.constant({energy.n_labels()}, gold.labels);
      double e_pred = tape.scalar(energy.energy(tape, fx, yp, false));
      double e_gold = tape.scalar(energy.energy(tape, fx, yg, false));
      hinge_total += hinge_value(plan.hinge, cost_value(delta_kind, pred, gold), e_pred,
                                 e_gold);
      preds.push_back(std::move(pred));
      golds.push_back(ex.gold);
    }
    double tau = tune_threshold(preds, golds);
    std::vector<LabelSet> hard(preds.size());
    for (size_t e = 0; e < preds.size(); ++e) hard[e] = discretize(preds[e], tau);
    return {example_f1(hard, golds), hinge_total / static_cast<double>(dev.examples.size())};
  };

  return minimax_loop(plan, train.examples.size(), theta, phi_params, phi_step, theta_step,
                      dev_eval, log);
}

inline TrainHistory minimax_train_seq(const TrainPlan& plan, const SeqDataset& train,
                                      const SeqDataset& dev, const SeqEnergyConfig& energy,
                                      SeqInferenceNet& phi,
                                      const std::vector<std::vector<double>>* phi0,
                                      MetricsLog& log) {
  check_config(!train.sentences.empty(), "train-spen: empty training set");
  check_config(!dev.sentences.empty(), "train-spen: empty dev set");
  auto theta = energy.chain->params();
  auto phi_params = phi.params();
  if (energy.tlm != nullptr) freeze(energy.tlm->params());

  auto phi_step = [&](const std::vector<size_t>& batch, Optimizer& opt) {
    Tape tape;
    SeqBatchRefs refs{&train, &batch};
    auto obj = phi_objective_seq(tape, refs, energy, phi, phi0, plan);
    auto loss = tape.neg(obj);
    check_finite(tape.scalar(loss), "phi objective");
    tape.backward(loss);
    opt.step(phi_params);
    return tape.scalar(obj);
  };
  auto theta_step = [&](const std::vector<size_t>& batch, Optimizer& opt) {
    Tape tape;
    SeqBatchRefs refs{&train, &batch};
    auto obj = theta_objective_seq(tape, refs, energy, phi, plan);
    check_finite(tape.scalar(obj), "theta objective");
    tape.backward(obj);
    opt.step(theta);
    return tape.scalar(obj);
  };
  auto dev_eval = [&]() -> std::pair<double, double> {
    std::vector<TagSeq> preds, golds;
    double hinge_total = 0.0;
    CostKind delta_kind = effective_cost(plan.hinge, plan.cost);
    for (const auto& ex : dev.sentences) {
      auto pred = phi.predict_value(ex.tokens);
      Tape tape;
      std::vector<Tape::Id> yp, yg;
      for (const auto& row : pred.rows) {
        yp.push_back(tape.constant({energy.chain->n_labels()}, row));
      }
      yg = detail::one_hot_nodes(tape, ex.tags, energy.chain->n_labels());
      auto unary = energy.chain->unary_nodes(tape, ex.tokens);
      double e_pred = tape.scalar(energy.chain->energy_from_unaries(tape, unary, yp, false));
      double e_gold = tape.scalar(energy.chain->energy_from_unaries(tape, unary, yg, false));
      if (energy.tlm != nullptr && energy.tlm_weight != 0.0) {
        e_pred += energy.tlm_weight * tape.scalar(energy.tlm->energy(tape, yp));
        e_gold += energy.tlm_weight * tape.scalar(energy.tlm->energy(tape, yg));
      }
      auto gold_relaxed = to_relaxed(ex.tags, energy.chain->n_labels());
      hinge_total += hinge_value(plan.hinge, cost_value(delta_kind, pred, gold_relaxed),
                                 e_pred, e_gold);
      preds.push_back(discretize(pred));
      golds.push_back(ex.tags);
    }
    return {token_accuracy(preds, golds),
            hinge_total / static_cast<double>(dev.sentences.size())};
  };

  return minimax_loop(plan, train.sentences.size(), theta, phi_params, phi_step, theta_step,
                      dev_eval, log);
}

// ---- retuning the test-time inference network ----

struct RetuneResult {
  double initial_mean_energy = 0.0;
  double final_mean_energy = 0.0;
  size_t epochs_run = 0;
};

// Post-training optimization of psi on unlabeled inputs: minimize the mean
// energy of A_psi(x). The best-seen snapshot is kept, so the mean energy
// never ends above its initial value.
template <typename MeanEnergyFn, typename BatchStepFn>
RetuneResult retune_loop(std::span<const ad::TensorPtr> psi_params, size_t n_examples,
                         size_t batch_size, size_t epochs, uint64_t seed,
                         MeanEnergyFn mean_energy, BatchStepFn batch_step, MetricsLog& log) {
  RetuneResult res;
  res.initial_mean_energy = mean_energy();
  double best = res.initial_mean_energy;
  auto best_values = snapshot(psi_params);
  Rng rng = Rng(seed).fork(0x7u);
  log.record(0, "retune", "mean_energy", res.initial_mean_energy);
  for (size_t epoch = 0; epoch < epochs; ++epoch) {
    auto batches = detail::make_batches(n_examples, batch_size, rng);
    for (const auto& batch : batches) batch_step(batch);
    double e = mean_energy();
    log.record(epoch + 1, "retune", "mean_energy", e);
    ++res.epochs_run;
    if (e < best) {
      best = e;
      best_values = snapshot(psi_params);
    }
  }
  restore(psi_params, best_values);
  res.final_mean_energy = best;
  return res;
}

inline RetuneResult retune_mlc(const MLCEnergy& energy, MLCInferenceNet& psi,
                               const MLCDataset& inputs, size_t epochs, OptConfig opt_cfg,
                               uint64_t seed, MetricsLog& log) {
  auto psi_params = psi.params();
  FreezeGuard freeze_energy(energy.all_params());
  Optimizer opt(opt_cfg);
  auto mean_energy = [&] {
    double total = 0.0;
    for (const auto& ex : inputs.examples) {
      Tape tape;
      auto y = psi.predict(tape, ex.features);
      total += tape.scalar(energy.energy(tape, ex.features, y, false));
    }
    return total / static_cast<double>(inputs.examples.size());
  };
  auto batch_step = [&](const std::vector<size_t>& batch) {
    Tape tape;
    ad::zero_grads(psi_params);
    Tape::Id acc = tape.constant_scalar(0.0);
    for (size_t idx : batch) {
      const auto& ex = inputs.examples[idx];
      auto y = psi.predict(tape, ex.features);
      acc = tape.add(acc, energy.energy(tape, ex.features, y, false));
    }
    auto loss = tape.scale(acc, 1.0 / static_cast<double>(batch.size()));
    check_finite(tape.scalar(loss), "retune loss");
    tape.backward(loss);
    opt.step(psi_params);
  };
  return retune_loop(psi_params, inputs.examples.size(), 32, epochs, seed, mean_energy,
                     batch_step, log);
}

inline RetuneResult retune_seq(const SeqEnergyConfig& energy, SeqInferenceNet& psi,
                               const SeqDataset& inputs, size_t epochs, OptConfig opt_cfg,
                               uint64_t seed, MetricsLog& log) {
  auto psi_params = psi.params();
  FreezeGuard freeze_energy(energy.chain->params());
  std::unique_ptr<FreezeGuard> freeze_tlm;
  if (energy.tlm != nullptr) {
    freeze_tlm = std::make_unique<FreezeGuard>(energy.tlm->params());
  }
  Optimizer opt(opt_cfg);
  auto example_energy = [&](Tape& tape, const SeqExample& ex) {
    auto y = psi.predict(tape, ex.tokens);
    auto unary = energy.chain->unary_nodes(tape, ex.tokens);
    auto e = energy.chain->energy_from_unaries(tape, unary, y, false);
    if (energy.tlm != nullptr && energy.tlm_weight != 0.0) {
      e = tape.add(e, tape.scale(energy.tlm->energy(tape, y), energy.tlm_weight));
    }
    return e;
  };
  auto mean_energy = [&] {
    double total = 0.0;
    for (const auto& ex : inputs.sentences) {
      Tape tape;
      total += tape.scalar(example_energy(tape, ex));
    }
    return total / static_cast<double>(inputs.sentences.size());
  };
  auto batch_step = [&](const std::vector<size_t>& batch) {
    Tape tape;
    ad::zero_grads(psi_params);
    Tape::Id acc = tape.constant_scalar(0.0);
    for (size_t idx : batch) acc = tape.add(acc, example_energy(tape, inputs.sentences[idx]));
    auto loss = tape.scale(acc, 1.0 / static_cast<double>(batch.size()));
    check_finite(tape.scalar(loss), "retune loss");
    tape.backward(loss);
    opt.step(psi_params);
  };
  return retune_loop(psi_params, inputs.sentences.size(), 32, epochs, seed, mean_energy,
                     batch_step, log);
}

// ---- CRF and local baselines ----

// Conditional log-likelihood training of the chain energy; gradients flow
// through forward-backward marginals into the BLSTM, U and W.
inline TrainHistory crf_nll_train(const TrainPlan& plan, const SeqDataset& train,
                                  const SeqDataset& dev, ChainEnergy& energy,
                                  MetricsLog& log) {
  check_config(!train.sentences.empty(), "train-crf: empty training set");
  auto params = energy.params();
  Optimizer opt(plan.theta_opt);
  Rng rng = Rng(plan.seed).fork(0x5u);
  detail::BestSnapshot best(params);
  TrainHistory hist;
  size_t since_best = 0;

  for (size_t epoch = 0; epoch < plan.epochs; ++epoch) {
    auto batches = detail::make_batches(train.sentences.size(), plan.batch_size, rng);
    double epoch_loss = 0.0;
    for (size_t b = 0; b < batches.size(); ++b) {
      Tape tape;
      ad::zero_grads(params);
      Tape::Id acc = tape.constant_scalar(0.0);
      for (size_t idx : batches[b]) {
        const auto& ex = train.sentences[idx];
        auto unary = energy.unary_nodes(tape, ex.tokens);
        acc = tape.add(acc, crf_nll_node(tape, unary, tape.leaf(energy.transition()),
                                         ex.tags));
      }
      auto loss = tape.scale(acc, 1.0 / static_cast<double>(batches[b].size()));
      if (plan.stab.l2_theta != 0.0) {
        loss = tape.add(loss, tape.scale(l2_node(tape, params), plan.stab.l2_theta));
      }
      double value = tape.scalar(loss);
      if (!std::isfinite(value)) {
        throw NumericError(msg_cat("crf_nll_train: non-finite loss (epoch ", epoch,
                                   ", batch ", b, ")"));
      }
      epoch_loss += value;
      tape.backward(loss);
      opt.step(params);
    }
    hist.train_loss.push_back(epoch_loss / static_cast<double>(batches.size()));

    std::vector<TagSeq> preds, golds;
    for (const auto& ex : dev.sentences) {
      auto unary = energy.unary_scores(ex.tokens);
      preds.push_back(viterbi(unary, energy.transition()->data, energy.n_labels()).tags);
      golds.push_back(ex.tags);
    }
    double acc_metric = token_accuracy(preds, golds);
    hist.dev_metric.push_back(acc_metric);
    log.record(epoch, "train", "nll", hist.train_loss.back());
    log.record(epoch, "dev", "token_accuracy", acc_metric);
    if (best.offer(acc_metric, epoch)) {
      since_best = 0;
    } else if (++since_best >= plan.patience) {
      hist.early_stopped = true;
      break;
    }
  }
  best.restore_best();
  hist.best_epoch = best.best_epoch();
  hist.best_metric = best.best();
  return hist;
}

// Local BLSTM tagger: per-token log loss.
inline TrainHistory local_train_seq(const TrainPlan& plan, const SeqDataset& train,
                                    const SeqDataset& dev, SeqInferenceNet& net,
                                    MetricsLog& log) {
  check_config(!train.sentences.empty(), "train-blstm: empty training set");
  auto params = net.params();
  Optimizer opt(plan.theta_opt);
  Rng rng = Rng(plan.seed).fork(0x5u);
  detail::BestSnapshot best(params);
  TrainHistory hist;
  size_t since_best = 0;

  for (size_t epoch = 0; epoch < plan.epochs; ++epoch) {
    auto batches = detail::make_batches(train.sentences.size(), plan.batch_size, rng);
    double epoch_loss = 0.0;
    for (size_t b = 0; b < batches.size(); ++b) {
      Tape tape;
      ad::zero_grads(params);
      Tape::Id acc = tape.constant_scalar(0.0);
      for (size_t idx : batches[b]) {
        const auto& ex = train.sentences[idx];
        auto rows = net.predict(tape, ex.tokens);
        acc = tape.add(acc, ce_seq_node(tape, rows, ex.tags));
      }
      auto loss = tape.scale(acc, 1.0 / static_cast<double>(batches[b].size()));
      double value = tape.scalar(loss);
      if (!std::isfinite(value)) {
        throw NumericError(msg_cat("local_train: non-finite loss (epoch ", epoch, ", batch ",
                                   b, ")"));
      }
      epoch_loss += value;
      tape.backward(loss);
      opt.step(params);
    }
    hist.train_loss.push_back(epoch_loss / static_cast<double>(batches.size()));

    std::vector<TagSeq> preds, golds;
    for (const auto& ex : dev.sentences) {
      preds.push_back(discretize(net.predict_value(ex.tokens)));
      golds.push_back(ex.tags);
    }
    double acc_metric = token_accuracy(preds, golds);
    hist.dev_metric.push_back(acc_metric);
    log.record(epoch, "train", "log_loss", hist.train_loss.back());
    log.record(epoch, "dev", "token_accuracy", acc_metric);
    if (best.offer(acc_metric, epoch)) {
      since_best = 0;
    } else if (++since_best >= plan.patience) {
      hist.early_stopped = true;
      break;
    }
  }
  best.restore_best();
  hist.best_epoch = best.best_epoch();
  hist.best_metric = best.best();
  return hist;
}

// Local MLC classifier (independent-label cross entropy); doubles as the
// pretrained feature-net anchor and the MLP baseline.
inline TrainHistory local_train_mlc(const TrainPlan& plan, const MLCDataset& train,
                                    const MLCDataset& dev, MLCInferenceNet& net,
                                    MetricsLog& log) {
  check_config(!train.examples.empty(), "pretrain: empty training set");
  auto params = net.params();
  Optimizer opt(plan.theta_opt);
  Rng rng = Rng(plan.seed).fork(0x5u);
  detail::BestSnapshot best(params);
  TrainHistory hist;
  size_t since_best = 0;
  size_t n_labels = net.net().output_dim();

  for (size_t epoch = 0; epoch < plan.epochs; ++epoch) {
    auto batches = detail::make_batches(train.examples.size(), plan.batch_size, rng);
    double epoch_loss = 0.0;
    for (size_t b = 0; b < batches.size(); ++b) {
      Tape tape;
      ad::zero_grads(params);
      Tape::Id acc = tape.constant_scalar(0.0);
      for (size_t idx : batches[b]) {
        const auto& ex = train.examples[idx];
        auto probs = net.predict(tape, ex.features);
        acc = tape.add(acc, bce_node(tape, probs, to_relaxed(ex.gold, n_labels).labels));
      }
      auto loss = tape.scale(acc, 1.0 / static_cast<double>(batches[b].size()));
      double value = tape.scalar(loss);
      if (!std::isfinite(value)) {
        throw NumericError(msg_cat("local_train: non-finite loss (epoch ", epoch, ", batch ",
                                   b, ")"));
      }
      epoch_loss += value;
      tape.backward(loss);
      opt.step(params);
    }
    hist.train_loss.push_back(epoch_loss / static_cast<double>(batches.size()));

    std::vector<RelaxedOutput> preds;
    std::vector<LabelSet> golds;
    for (const auto& ex : dev.examples) {
      preds.push_back(net.predict_value(ex.features));
      golds.push_back(ex.gold);
    }
    double tau = tune_threshold(preds, golds);
    std::vector<LabelSet> hard(preds.size());
    for (size_t e = 0; e < preds.size(); ++e) hard[e] = discretize(preds[e], tau);
    double f1 = example_f1(hard, golds);
    hist.dev_metric.push_back(f1);
    log.record(epoch, "train", "bce", hist.train_loss.back());
    log.record(epoch, "dev", "example_f1", f1);
    if (best.offer(f1, epoch)) {
      since_best = 0;
    } else if (++since_best >= plan.patience) {
      hist.early_stopped = true;
      break;
    }
  }
  best.restore_best();
  hist.best_epoch = best.best_epoch();
  hist.best_metric = best.best();
  return hist;
}

// ---- distilling a trained CRF into an inference network ----

enum class Stabilizer { none, cross_entropy, entropy, l2_to_pretrained };

inline std::string to_string(Stabilizer s) {
  switch (s) {
    case Stabilizer::none: return "none";
    case Stabilizer::cross_entropy: return "cross_entropy";
    case Stabilizer::entropy: return "entropy";
    case Stabilizer::l2_to_pretrained: return "l2_to_pretrained";
  }
  return "?";
}

// The energy stays fixed; the student minimizes its output's energy plus the
// chosen stabilization term, early-stopped on dev accuracy.
inline TrainHistory distill_crf(const TrainPlan& plan, const SeqDataset& train,
                                const SeqDataset& dev, const ChainEnergy& energy,
                                SeqInferenceNet& student,
                                const std::vector<std::vector<double>>* anchor,
                                Stabilizer stabilizer, double weight, MetricsLog& log) {
  check_config(!train.sentences.empty(), "distill: empty training set");
  check_config(stabilizer != Stabilizer::l2_to_pretrained || anchor != nullptr,
               "distill: l2_to_pretrained needs a pretrained anchor");
  FreezeGuard freeze_energy(energy.params());
  auto params = student.params();
  Optimizer opt(plan.phi_opt);
  Rng rng = Rng(plan.seed).fork(0x5u);
  detail::BestSnapshot best(params);
  TrainHistory hist;
  size_t since_best = 0;

  for (size_t epoch = 0; epoch < plan.epochs; ++epoch) {
    auto batches = detail::make_batches(train.sentences.size(), plan.batch_size, rng);
    double epoch_loss = 0.0;
    for (size_t b = 0; b < batches.size(); ++b) {
      Tape tape;
      ad::zero_grads(params);
      Tape::Id acc = tape.constant_scalar(0.0);
      for (size_t idx : batches[b]) {
        const auto& ex = train.sentences[idx];
        auto rows = student.predict(tape, ex.tokens);
        auto unary = energy.unary_nodes(tape, ex.tokens);
        Tape::Id term = energy.energy_from_unaries(tape, unary, rows, false);
        if (stabilizer == Stabilizer::cross_entropy) {
          term = tape.add(term, tape.scale(ce_seq_node(tape, rows, ex.tags), weight));
        } else if (stabilizer == Stabilizer::entropy) {
          term = tape.sub(term, tape.scale(entropy_seq_node(tape, rows), weight));
        }
        acc = tape.add(acc, term);
      }
      auto loss = tape.scale(acc, 1.0 / static_cast<double>(batches[b].size()));
      if (stabilizer == Stabilizer::l2_to_pretrained) {
        loss = tape.add(loss, tape.scale(l2_distance_node(tape, params, *anchor), weight));
      }
      double value = tape.scalar(loss);
      if (!std::isfinite(value)) {
        throw NumericError(msg_cat("distill: non-finite loss (epoch ", epoch, ", batch ", b,
                                   ")"));
      }
      epoch_loss += value;
      tape.backward(loss);
      opt.step(params);
    }
    hist.train_loss.push_back(epoch_loss / static_cast<double>(batches.size()));

    std::vector<TagSeq> preds, golds;
    for (const auto& ex : dev.sentences) {
      preds.push_back(discretize(student.predict_value(ex.tokens)));
      golds.push_back(ex.tags);
    }
    double acc_metric = token_accuracy(preds, golds);
    hist.dev_metric.push_back(acc_metric);
    log.record(epoch, "train", "distill_loss", hist.train_loss.back());
    log.record(epoch, "dev", "token_accuracy", acc_metric);
    if (best.offer(acc_metric, epoch)) {
      since_best = 0;
    } else if (++since_best >= plan.patience) {
      hist.early_stopped = true;
      break;
    }
  }
  best.restore_best();
  hist.best_epoch = best.best_epoch();
  hist.best_metric = best.best();
  return hist;
}

// ---- tag language model pretraining ----

struct TagLmTrainResult {
  double held_out_perplexity = 0.0;
  TrainHistory history;
};

// Per-step perplexity on a held-out corpus, end symbol included.
inline double tag_lm_perplexity(const TLMEnergy& tlm, const std::vector<TagSeq>& corpus) {
  double nll = 0.0;
  size_t steps = 0;
  for (const auto& seq : corpus) {
    nll += tlm.sequence_nll(seq);
    steps += seq.size() + 1;
  }
  check(steps > 0, "tag_lm_perplexity: empty corpus");
  return std::exp(nll / static_cast<double>(steps));
}

inline TagLmTrainResult train_tag_lm(const std::vector<TagSeq>& train,
                                     const std::vector<TagSeq>& held_out, TagLMCell& lm,
                                     size_t epochs, size_t patience, OptConfig opt_cfg,
                                     double dropout, uint64_t seed, MetricsLog& log) {
  check_config(!train.empty(), "train-tlm: empty corpus");
  check_config(!held_out.empty(), "train-tlm: empty held-out split");
  auto params = lm.params();
  Optimizer opt(opt_cfg);
  Rng rng = Rng(seed).fork(0x5u);
  Rng dropout_rng = Rng(seed).fork(0x6u);
  TagLmTrainResult res;
  size_t since_best = 0;
  double best_ppl = std::numeric_limits<double>::infinity();
  auto best_values = snapshot(params);
  TLMEnergy probe(lm);  // shares parameter tensors with lm

  for (size_t epoch = 0; epoch < epochs; ++epoch) {
    auto batches = detail::make_batches(train.size(), 16, rng);
    double epoch_loss = 0.0;
    for (const auto& batch : batches) {
      Tape tape;
      ad::zero_grads(params);
      Tape::Id acc = tape.constant_scalar(0.0);
      for (size_t idx : batch) {
        const auto& seq = train[idx];
        auto st = lm.initial(tape);
        st = lm.advance(tape, lm.bos_input(tape), st, dropout, &dropout_rng);
        Tape::Id nll = tape.constant_scalar(0.0);
        for (size_t t = 0; t <= seq.size(); ++t) {
          auto dist = lm.next_distribution(tape, st, dropout, &dropout_rng);
          size_t target = t < seq.size() ? static_cast<size_t>(seq[t]) : lm.eos_index();
          nll = tape.sub(nll, tape.log_(tape.clamp_min(tape.pick(dist, target), 1e-300)));
          if (t < seq.size()) {
            std::vector<double> padded(lm.input_dim(), 0.0);
            padded[seq[t]] = 1.0;
            st = lm.advance(tape, tape.constant({lm.input_dim()}, padded), st, dropout,
                            &dropout_rng);
          }
        }
        acc = tape.add(acc, nll);
      }
      auto loss = tape.scale(acc, 1.0 / static_cast<double>(batch.size()));
      double value = tape.scalar(loss);
      if (!std::isfinite(value)) {
        throw NumericError(msg_cat("train-tlm: non-finite loss (epoch ", epoch, ")"));
      }
      epoch_loss += value;
      tape.backward(loss);
      opt.step(params);
    }
    res.history.train_loss.push_back(epoch_loss / static_cast<double>(batches.size()));

    double ppl = tag_lm_perplexity(probe, held_out);
    res.history.dev_metric.push_back(ppl);
    log.record(epoch, "train", "nll", res.history.train_loss.back());
    log.record(epoch, "heldout", "perplexity", ppl);
    if (ppl < best_ppl) {
      best_ppl = ppl;
      best_values = snapshot(params);
      res.history.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= patience) {
      res.history.early_stopped = true;
      break;
    }
  }
  restore(params, best_values);
  res.held_out_perplexity = best_ppl;
  res.history.best_metric = best_ppl;
  freeze(params);
  return res;
}

}  // namespace spen
