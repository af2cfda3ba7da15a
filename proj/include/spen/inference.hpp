#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "spen/autodiff.hpp"
#include "spen/energies.hpp"
#include "spen/error.hpp"
#include "spen/nets.hpp"
#include "spen/types.hpp"

namespace spen {

// Feed-forward inference net for MLC; the sigmoid head guarantees the output
// lands in [0,1]^L for any parameter values.
class MLCInferenceNet {
 public:
  MLCInferenceNet() = default;
  MLCInferenceNet(const std::string& name, size_t input_dim,
                  const std::vector<size_t>& hidden, size_t n_labels, Rng& rng) {
    std::vector<size_t> widths;
    widths.push_back(input_dim);
    widths.insert(widths.end(), hidden.begin(), hidden.end());
    widths.push_back(n_labels);
    net_ = MLP(name, widths, Head::sigmoid, rng);
  }
  explicit MLCInferenceNet(MLP net) : net_(std::move(net)) {
    check_config(net_.head() == Head::sigmoid, "mlc inference net needs a sigmoid head");
  }

  Tape::Id predict(Tape& tape, const SparseVec& x) const {
    return net_.forward(tape, tape.constant({x.dim}, x.to_dense()));
  }

  RelaxedOutput predict_value(const SparseVec& x) const {
    Tape tape;
    return RelaxedOutput::mlc(tape.value(predict(tape, x)));
  }

  const MLP& net() const { return net_; }
  MLP& net() { return net_; }
  std::vector<ad::TensorPtr> params() const { return net_.params(); }

 private:
  MLP net_;
};

// BLSTM inference net for sequences; per-position softmax head keeps every
// row on the simplex.
class SeqInferenceNet {
 public:
  SeqInferenceNet() = default;
  SeqInferenceNet(const std::string& name, std::shared_ptr<EmbeddingTable> emb,
                  size_t hidden_dim, size_t n_labels, Rng& rng)
      : emb_(std::move(emb)), n_labels_(n_labels) {
    encoder_ = BLSTMEncoder(name + ".enc", emb_->dim(), hidden_dim, rng);
    head_w_ = ad::make_param(name + ".head_w", {n_labels, hidden_dim});
    head_b_ = ad::make_param(name + ".head_b", {n_labels});
    ad::init_uniform(*head_w_, hidden_dim, n_labels, rng);
  }

  std::vector<Tape::Id> predict(Tape& tape, std::span<const std::string> tokens) const {
    auto fs = encoder_.encode_tokens(tape, tokens, *emb_);
    std::vector<Tape::Id> out(fs.size());
    for (size_t t = 0; t < fs.size(); ++t) {
      out[t] = tape.softmax(
          tape.add(tape.matvec(tape.leaf(head_w_), fs[t]), tape.leaf(head_b_)));
    }
    return out;
  }

  RelaxedOutput predict_value(std::span<const std::string> tokens) const {
    Tape tape;
    auto nodes = predict(tape, tokens);
    std::vector<std::vector<double>> rows(nodes.size());
    for (size_t t = 0; t < nodes.size(); ++t) rows[t] = tape.value(nodes[t]);
    return RelaxedOutput::seq(std::move(rows));
  }

  size_t n_labels() const { return n_labels_; }
  size_t hidden_dim() const { return encoder_.hidden_dim(); }
  const BLSTMEncoder& encoder() const { return encoder_; }
  BLSTMEncoder& encoder() { return encoder_; }
  const EmbeddingTable& embeddings() const { return *emb_; }
  std::shared_ptr<EmbeddingTable> embeddings_ptr() const { return emb_; }
  ad::TensorPtr head_w() const { return head_w_; }
  ad::TensorPtr head_b() const { return head_b_; }

  std::vector<ad::TensorPtr> params() const {
    auto out = encoder_.params();
    out.push_back(head_w_);
    out.push_back(head_b_);
    return out;
  }

 private:
  std::shared_ptr<EmbeddingTable> emb_;
  size_t n_labels_ = 0;
  BLSTMEncoder encoder_;
  ad::TensorPtr head_w_, head_b_;
};

// ---- discretization ----

// MLC: keep labels scoring strictly above tau.
inline LabelSet discretize(const RelaxedOutput& y, double tau) {
  check(y.kind == RelaxedOutput::Kind::mlc, "discretize(tau): expected MLC output");
  check(tau >= 0.0 && tau <= 1.0, msg_cat("discretize: tau ", tau, " outside [0,1]"));
  LabelSet out;
  for (size_t i = 0; i < y.labels.size(); ++i) {
    if (y.labels[i] > tau) out.insert(i);
  }
  return out;
}

// Sequences: per-position argmax, ties to the lower label index.
inline TagSeq discretize(const RelaxedOutput& y) {
  check(y.kind == RelaxedOutput::Kind::seq, "discretize: expected sequence output");
  TagSeq out(y.rows.size());
  for (size_t t = 0; t < y.rows.size(); ++t) {
    size_t best = 0;
    for (size_t i = 1; i < y.rows[t].size(); ++i) {
      if (y.rows[t][i] > y.rows[t][best]) best = i;
    }
    out[t] = static_cast<int>(best);
  }
  return out;
}

// ---- exact decoding ----

struct ViterbiResult {
  TagSeq tags;
  double score;
};

// Maximizes sum_t unary[t][y_t] + sum_{t>=2} w[y_{t-1}][y_t], i.e. the negated
// chain energy. Ties break toward the lower label index.
inline ViterbiResult viterbi(const std::vector<std::vector<double>>& unary,
                             const std::vector<double>& w, size_t n_labels) {
  check(!unary.empty(), "viterbi: empty sequence");
  size_t n = unary.size(), l = n_labels;
  check(w.size() == l * l, msg_cat("viterbi: transition size ", w.size(), " expected ",
                                   l * l));
  for (const auto& row : unary) {
    check(row.size() == l, "viterbi: ragged unary row");
    check_finite(row, "viterbi unary scores");
  }
  std::vector<double> delta = unary[0];
  std::vector<std::vector<int>> back(n, std::vector<int>(l, 0));
  std::vector<double> next(l);
  for (size_t t = 1; t < n; ++t) {
    for (size_t j = 0; j < l; ++j) {
      double best = delta[0] + w[0 * l + j];
      int arg = 0;
      for (size_t i = 1; i < l; ++i) {
        double cand = delta[i] + w[i * l + j];
        if (cand > best) {
          best = cand;
          arg = static_cast<int>(i);
        }
      }
      next[j] = best + unary[t][j];
      back[t][j] = arg;
    }
    delta = next;
  }
  ViterbiResult res;
  size_t best = 0;
  for (size_t i = 1; i < l; ++i) {
    if (delta[i] > delta[best]) best = i;
  }
  res.score = delta[best];
  res.tags.assign(n, 0);
  res.tags[n - 1] = static_cast<int>(best);
  for (size_t t = n - 1; t > 0; --t) res.tags[t - 1] = back[t][res.tags[t]];
  return res;
}

struct ForwardBackwardResult {
  double log_z;
  // marginals[t][i] = p(y_t = i)
  std::vector<std::vector<double>> marginals;
  // pairwise[t][i*L + j] = p(y_t = i, y_{t+1} = j), for t in [0, N-1)
  std::vector<std::vector<double>> pairwise;
};

namespace detail {
inline double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}
}  // namespace detail

// Log-space forward-backward over the same score parameterization as viterbi.
inline ForwardBackwardResult forward_backward(const std::vector<std::vector<double>>& unary,
                                              const std::vector<double>& w,
                                              size_t n_labels) {
  check(!unary.empty(), "forward_backward: empty sequence");
  size_t n = unary.size(), l = n_labels;
  check(w.size() == l * l,
        msg_cat("forward_backward: transition size ", w.size(), " expected ", l * l));
  std::vector<std::vector<double>> alpha(n, std::vector<double>(l)),
      beta(n, std::vector<double>(l, 0.0));
  alpha[0] = unary[0];
  for (size_t t = 1; t < n; ++t) {
    for (size_t j = 0; j < l; ++j) {
      double acc = -std::numeric_limits<double>::infinity();
      for (size_t i = 0; i < l; ++i) acc = detail::log_add(acc, alpha[t - 1][i] + w[i * l + j]);
      alpha[t][j] = acc + unary[t][j];
    }
  }
  for (size_t t = n - 1; t-- > 0;) {
    for (size_t i = 0; i < l; ++i) {
      double acc = -std::numeric_limits<double>::infinity();
      for (size_t j = 0; j < l; ++j) {
        acc = detail::log_add(acc, w[i * l + j] + unary[t + 1][j] + beta[t + 1][j]);
      }
      beta[t][i] = acc;
    }
  }
  ForwardBackwardResult res;
  double log_z = -std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < l; ++i) log_z = detail::log_add(log_z, alpha[n - 1][i]);
  res.log_z = log_z;

  res.marginals.assign(n, std::vector<double>(l));
  for (size_t t = 0; t < n; ++t) {
    for (size_t i = 0; i < l; ++i) {
      res.marginals[t][i] = std::exp(alpha[t][i] + beta[t][i] - log_z);
    }
  }
  res.pairwise.assign(n > 0 ? n - 1 : 0, std::vector<double>(l * l));
  for (size_t t = 0; t + 1 < n; ++t) {
    for (size_t i = 0; i < l; ++i) {
      for (size_t j = 0; j < l; ++j) {
        res.pairwise[t][i * l + j] = std::exp(alpha[t][i] + w[i * l + j] + unary[t + 1][j] +
                                              beta[t + 1][j] - log_z);
      }
    }
  }
  return res;
}

// ---- CRF negative log-likelihood as a tape node ----

// loss = log Z - score(gold). The backward pass injects the classic
// marginals-minus-indicators gradient, computed by forward_backward, into the
// unary nodes and the transition matrix.
inline Tape::Id crf_nll_node(Tape& tape, std::span<const Tape::Id> unary_nodes,
                             Tape::Id w_node, const TagSeq& gold) {
  check(unary_nodes.size() == gold.size(),
        msg_cat("crf_nll: ", unary_nodes.size(), " positions vs ", gold.size(),
                " gold tags"));
  check(!gold.empty(), "crf_nll: empty sequence");
  size_t n = gold.size();
  size_t l = tape.shape(unary_nodes[0])[0];
  check(tape.shape(w_node) == ad::Shape{l, l},
        msg_cat("crf_nll: transition ", ad::shape_str(tape.shape(w_node)), " expected [", l,
                ",", l, "]"));

  std::vector<std::vector<double>> unary(n);
  for (size_t t = 0; t < n; ++t) unary[t] = tape.value(unary_nodes[t]);
  const auto& w = tape.value(w_node);

  auto fb = std::make_shared<ForwardBackwardResult>(forward_backward(unary, w, l));
  double gold_score = 0.0;
  for (size_t t = 0; t < n; ++t) {
    gold_score += unary[t][gold[t]];
    if (t >= 1) gold_score += w[gold[t - 1] * l + gold[t]];
  }
  double loss = fb->log_z - gold_score;

  std::vector<Tape::Id> inputs(unary_nodes.begin(), unary_nodes.end());
  TagSeq gold_copy = gold;
  // The backward closure needs the node's own id, which only exists after
  // custom() returns; route it through a shared holder.
  auto out_holder = std::make_shared<Tape::Id>(-1);
  Tape::Id out = tape.custom(
      "crf_nll", {1}, {loss}, [out_holder, inputs, w_node, fb, gold_copy, n, l](Tape& t) {
        double g = t.grad_mut(*out_holder)[0];
        if (g == 0.0) return;
        for (size_t tt = 0; tt < n; ++tt) {
          auto& gu = t.grad_mut(inputs[tt]);
          for (size_t i = 0; i < l; ++i) {
            double indicator = (static_cast<int>(i) == gold_copy[tt]) ? 1.0 : 0.0;
            gu[i] += g * (fb->marginals[tt][i] - indicator);
          }
        }
        auto& gw = t.grad_mut(w_node);
        for (size_t tt = 0; tt + 1 < n; ++tt) {
          for (size_t i = 0; i < l * l; ++i) gw[i] += g * fb->pairwise[tt][i];
          gw[gold_copy[tt] * l + gold_copy[tt + 1]] -= g;
        }
      });
  *out_holder = out;
  return out;
}

// ---- gradient-descent inference (baseline) ----

struct GdInferenceResult {
  RelaxedOutput y;
  std::vector<double> trajectory;  // energy after each accepted step
};

// Builds E(y) for the current iterate; shared by MLC and sequence variants.
using EnergyOfY = std::function<Tape::Id(Tape&, std::span<const Tape::Id>)>;

namespace detail {

// Generic projected/reparameterized descent over a list of blocks. `project`
// maps raw block parameters to the relaxed output rows fed to the energy.
inline GdInferenceResult gd_descend(
    size_t blocks, size_t block_dim, const EnergyOfY& energy_of_y, size_t steps,
    double step_size, bool mlc_clamp,
    const std::function<RelaxedOutput(const std::vector<std::vector<double>>&)>& finish) {
  std::vector<std::vector<double>> z(blocks, std::vector<double>(block_dim, 0.0));
  if (mlc_clamp) {
    for (auto& row : z) row.assign(block_dim, 0.5);
  }

  auto eval = [&](bool with_grad, std::vector<std::vector<double>>* grads) {
    Tape tape;
    std::vector<Tape::Id> ys(blocks);
    std::vector<Tape::Id> raw(blocks);
    for (size_t b = 0; b < blocks; ++b) {
      raw[b] = tape.constant({block_dim}, z[b]);
      ys[b] = mlc_clamp ? raw[b] : tape.softmax(raw[b]);
    }
    // Raw iterates enter as constants; gradients are pulled from their nodes.
    auto e = energy_of_y(tape, ys);
    double value = tape.scalar(e);
    if (with_grad) {
      tape.backward(e);
      grads->assign(blocks, std::vector<double>(block_dim));
      for (size_t b = 0; b < blocks; ++b) (*grads)[b] = tape.grad(raw[b]);
    }
    return value;
  };

  GdInferenceResult res;
  double current = eval(false, nullptr);
  check_finite(current, "gd_inference: initial energy");
  res.trajectory.push_back(current);

  double eta = step_size;
  const int max_halvings = 5;
  int halvings = 0;
  std::vector<std::vector<double>> grads;
  for (size_t it = 0; it < steps; ++it) {
    eval(true, &grads);
    auto saved = z;
    for (size_t b = 0; b < blocks; ++b) {
      for (size_t i = 0; i < block_dim; ++i) {
        z[b][i] -= eta * grads[b][i];
        if (mlc_clamp) z[b][i] = std::clamp(z[b][i], 0.0, 1.0);
      }
    }
    double next = eval(false, nullptr);
    if (!std::isfinite(next)) {
      throw NumericError(msg_cat("gd_inference: non-finite energy at step ", it,
                                 " (last finite energy ", current, ")"));
    }
    if (next > current && halvings < max_halvings) {
      z = saved;
      eta *= 0.5;
      ++halvings;
      continue;
    }
    current = next;
    res.trajectory.push_back(current);
  }
  res.y = finish(z);
  return res;
}

}  // namespace detail

// MLC: descend on y directly, clamping to [0,1]^L after each step.
inline GdInferenceResult gd_inference_mlc(const MLCEnergy& energy, const SparseVec& x,
                                          size_t steps, double step_size) {
  auto energy_of_y = [&](Tape& tape, std::span<const Tape::Id> ys) {
    return energy.energy(tape, x, ys[0]);
  };
  return detail::gd_descend(1, energy.n_labels(), energy_of_y, steps, step_size, true,
                            [](const std::vector<std::vector<double>>& z) {
                              return RelaxedOutput::mlc(z[0]);
                            });
}

// Sequences: descend on unconstrained logits mapped through a per-position
// softmax, so iterates always stay on the simplex.
inline GdInferenceResult gd_inference_seq(
    const std::function<Tape::Id(Tape&, std::span<const Tape::Id>)>& energy_of_y, size_t n,
    size_t n_labels, size_t steps, double step_size) {
  return detail::gd_descend(n, n_labels, energy_of_y, steps, step_size, false,
                            [&](const std::vector<std::vector<double>>& z) {
                              std::vector<std::vector<double>> rows(z.size());
                              for (size_t t = 0; t < z.size(); ++t) {
                                Tape tape;
                                rows[t] = tape.value(
                                    tape.softmax(tape.constant({n_labels}, z[t])));
                              }
                              return RelaxedOutput::seq(std::move(rows));
                            });
}

}  // namespace spen
