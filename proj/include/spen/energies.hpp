#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "spen/autodiff.hpp"
#include "spen/error.hpp"
#include "spen/nets.hpp"
#include "spen/types.hpp"

namespace spen {

// Temporarily detaches a parameter set from gradient flow. Used to hold one
// side of the minimax game fixed while the other side updates.
class FreezeGuard {
 public:
  explicit FreezeGuard(std::span<const ad::TensorPtr> params) {
    for (const auto& p : params) {
      saved_.emplace_back(p, p->requires_grad);
      p->requires_grad = false;
    }
  }
  ~FreezeGuard() {
    for (auto& [p, flag] : saved_) p->requires_grad = flag;
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  std::vector<std::pair<ad::TensorPtr, bool>> saved_;
};

inline void freeze(std::span<const ad::TensorPtr> params) {
  for (const auto& p : params) p->requires_grad = false;
}

// Multi-label energy E(x,y) = E_loc(x,y) + E_lab(y) with
//   E_loc = sum_i y_i * b_i^T F(x)   (rows of label_b are the b_i)
//   E_lab = c2^T softplus(C1 y).
class MLCEnergy {
 public:
  MLCEnergy() = default;
  MLCEnergy(MLP feature_net, size_t n_labels, size_t lab_hidden, Rng& rng)
      : feature_net_(std::move(feature_net)), n_labels_(n_labels) {
    size_t fdim = feature_net_.output_dim();
    label_b_ = ad::make_param("energy.label_b", {n_labels, fdim});
    c1_ = ad::make_param("energy.c1", {lab_hidden, n_labels});
    c2_ = ad::make_param("energy.c2", {lab_hidden});
    ad::init_uniform(*label_b_, fdim, n_labels, rng);
    ad::init_uniform(*c1_, n_labels, lab_hidden, rng);
    ad::init_uniform(*c2_, lab_hidden, 1, rng);
  }

  Tape::Id feature(Tape& tape, const SparseVec& x) const {
    return feature_net_.forward(tape, tape.constant({x.dim}, x.to_dense()));
  }

  // Energy given a precomputed feature node and a relaxed y on the tape.
  Tape::Id energy(Tape& tape, Tape::Id fx, Tape::Id y, bool validate = true) const {
    check(tape.shape(y) == ad::Shape{n_labels_},
          msg_cat("mlc energy: y ", ad::shape_str(tape.shape(y)), " expected [", n_labels_,
                  "]"));
    if (validate) {
      for (double v : tape.value(y)) {
        check(v >= -1e-6 && v <= 1.0 + 1e-6,
              msg_cat("mlc energy: y entry ", v, " outside [0,1]"));
      }
    }
    auto e_loc = tape.dot(y, tape.matvec(tape.leaf(label_b_), fx));
    auto e_lab = tape.dot(tape.leaf(c2_), tape.softplus(tape.matvec(tape.leaf(c1_), y)));
    return tape.add(e_loc, e_lab);
  }

  Tape::Id energy(Tape& tape, const SparseVec& x, Tape::Id y, bool validate = true) const {
    return energy(tape, feature(tape, x), y, validate);
  }

  double energy_value(const SparseVec& x, const RelaxedOutput& y) const {
    Tape tape;
    auto yn = tape.constant({n_labels_}, y.labels);
    return tape.scalar(energy(tape, x, yn));
  }

  const MLP& feature_net() const { return feature_net_; }
  size_t n_labels() const { return n_labels_; }

  // Theta for the MLC minimax game: the feature net stays fixed.
  std::vector<ad::TensorPtr> theta_params() const { return {label_b_, c1_, c2_}; }
  std::vector<ad::TensorPtr> feature_params() const { return feature_net_.params(); }
  std::vector<ad::TensorPtr> all_params() const {
    auto out = feature_net_.params();
    out.push_back(label_b_);
    out.push_back(c1_);
    out.push_back(c2_);
    return out;
  }

  ad::TensorPtr label_b() const { return label_b_; }
  ad::TensorPtr c1() const { return c1_; }
  ad::TensorPtr c2() const { return c2_; }

 private:
  MLP feature_net_;
  size_t n_labels_ = 0;
  ad::TensorPtr label_b_, c1_, c2_;
};

// Linear-chain energy
//   E(x,y) = -( sum_t y_t^T (U f(x,t)) + sum_{t>=2} y_{t-1}^T W y_t )
// over BLSTM features. On one-hot rows this reduces to the discrete
// unary-plus-transition score, negated.
class ChainEnergy {
 public:
  ChainEnergy() = default;
  ChainEnergy(BLSTMEncoder encoder, std::shared_ptr<EmbeddingTable> emb, size_t n_labels,
              Rng& rng)
      : encoder_(std::move(encoder)), emb_(std::move(emb)), n_labels_(n_labels) {
    u_ = ad::make_param("energy.u", {n_labels, encoder_.hidden_dim()});
    w_ = ad::make_param("energy.w", {n_labels, n_labels});
    ad::init_uniform(*u_, encoder_.hidden_dim(), n_labels, rng);
    ad::init_uniform(*w_, n_labels, n_labels, rng);
  }

  // Per-position unary node: U f(x,t), an L-vector of label scores.
  std::vector<Tape::Id> unary_nodes(Tape& tape, std::span<const std::string> tokens) const {
    auto fs = encoder_.encode_tokens(tape, tokens, *emb_);
    std::vector<Tape::Id> out(fs.size());
    for (size_t t = 0; t < fs.size(); ++t) out[t] = tape.matvec(tape.leaf(u_), fs[t]);
    return out;
  }

  // Unary score matrix as plain values, for Viterbi / forward-backward.
  std::vector<std::vector<double>> unary_scores(std::span<const std::string> tokens) const {
    Tape tape;
    auto nodes = unary_nodes(tape, tokens);
    std::vector<std::vector<double>> out(nodes.size());
    for (size_t t = 0; t < nodes.size(); ++t) out[t] = tape.value(nodes[t]);
    return out;
  }

  Tape::Id energy_from_unaries(Tape& tape, std::span<const Tape::Id> unary,
                               std::span<const Tape::Id> y, bool validate = true) const {
    check(unary.size() == y.size(),
          msg_cat("chain energy: ", unary.size(), " positions vs ", y.size(), " outputs"));
    check(!y.empty(), "chain energy: empty sequence");
    if (validate) {
      for (size_t t = 0; t < y.size(); ++t) {
        check(tape.shape(y[t]) == ad::Shape{n_labels_},
              msg_cat("chain energy: y[", t, "] ", ad::shape_str(tape.shape(y[t])),
                      " expected [", n_labels_, "]"));
        double total = 0.0;
        for (double v : tape.value(y[t])) {
          check(v >= -1e-6, msg_cat("chain energy: negative mass at position ", t));
          total += v;
        }
        check(std::fabs(total - 1.0) <= 1e-6,
              msg_cat("chain energy: y[", t, "] off the simplex (sum ", total, ")"));
      }
    }
    Tape::Id score = tape.dot(y[0], unary[0]);
    for (size_t t = 1; t < y.size(); ++t) {
      score = tape.add(score, tape.dot(y[t], unary[t]));
      score = tape.add(score, tape.dot(y[t - 1], tape.matvec(tape.leaf(w_), y[t])));
    }
    return tape.neg(score);
  }

  Tape::Id energy(Tape& tape, std::span<const std::string> tokens,
                  std::span<const Tape::Id> y, bool validate = true) const {
    auto unary = unary_nodes(tape, tokens);
    return energy_from_unaries(tape, unary, y, validate);
  }

  // Discrete-path evaluation: index into unary scores and W directly.
  double discrete_energy(std::span<const std::string> tokens, const TagSeq& tags) const {
    check(tokens.size() == tags.size(),
          msg_cat("chain energy: ", tokens.size(), " tokens vs ", tags.size(), " tags"));
    auto unary = unary_scores(tokens);
    return discrete_energy_from_scores(unary, tags);
  }

  double discrete_energy_from_scores(const std::vector<std::vector<double>>& unary,
                                     const TagSeq& tags) const {
    double score = 0.0;
    const auto& wv = w_->data;
    for (size_t t = 0; t < tags.size(); ++t) {
      score += unary[t][tags[t]];
      if (t >= 1) score += wv[tags[t - 1] * n_labels_ + tags[t]];
    }
    return -score;
  }

  double relaxed_energy_value(std::span<const std::string> tokens,
                              const RelaxedOutput& y) const {
    Tape tape;
    std::vector<Tape::Id> ys(y.rows.size());
    for (size_t t = 0; t < y.rows.size(); ++t) ys[t] = tape.constant({n_labels_}, y.rows[t]);
    return tape.scalar(energy(tape, tokens, ys));
  }

  size_t n_labels() const { return n_labels_; }
  const BLSTMEncoder& encoder() const { return encoder_; }
  BLSTMEncoder& encoder() { return encoder_; }
  const EmbeddingTable& embeddings() const { return *emb_; }
  std::shared_ptr<EmbeddingTable> embeddings_ptr() const { return emb_; }
  ad::TensorPtr transition() const { return w_; }
  ad::TensorPtr label_u() const { return u_; }

  std::vector<ad::TensorPtr> params() const {
    auto out = encoder_.params();
    out.push_back(u_);
    out.push_back(w_);
    return out;
  }

 private:
  BLSTMEncoder encoder_;
  std::shared_ptr<EmbeddingTable> emb_;
  size_t n_labels_ = 0;
  ad::TensorPtr u_, w_;
};

// Tag-language-model energy
//   E(y) = - sum_{t=1..N+1} log( y_t^T LM(y_0 .. y_{t-1}) )
// with y_0 the begin symbol and y_{N+1} the end symbol. Inner products are
// clamped at 1e-12 before the log so relaxed outputs near simplex corners the
// LM assigns ~0 mass keep the objective finite; clamp events are counted.
class TLMEnergy {
 public:
  static constexpr double kClampFloor = 1e-12;

  TLMEnergy() = default;
  explicit TLMEnergy(TagLMCell lm) : lm_(std::move(lm)) {}

  Tape::Id energy(Tape& tape, std::span<const Tape::Id> y) const {
    check(!y.empty(), "tlm energy: empty sequence");
    size_t li = lm_.n_tags();
    auto st = lm_.initial(tape);
    st = lm_.advance(tape, lm_.bos_input(tape), st);
    Tape::Id total = tape.constant_scalar(0.0);
    for (size_t t = 0; t < y.size(); ++t) {
      auto dist = lm_.next_distribution(tape, st);
      auto inner = tape.dot(y[t], tape.slice(dist, 0, li));
      if (tape.scalar(inner) < kClampFloor) ++clamp_events_;
      total = tape.add(total, tape.log_(tape.clamp_min(inner, kClampFloor)));
      st = lm_.advance(tape, lm_.pad_tag_vector(tape, y[t]), st);
    }
    auto dist = lm_.next_distribution(tape, st);
    auto eos_prob = tape.pick(dist, lm_.eos_index());
    if (tape.scalar(eos_prob) < kClampFloor) ++clamp_events_;
    total = tape.add(total, tape.log_(tape.clamp_min(eos_prob, kClampFloor)));
    return tape.neg(total);
  }

  double energy_value(const RelaxedOutput& y) const {
    Tape tape;
    std::vector<Tape::Id> ys(y.rows.size());
    for (size_t t = 0; t < y.rows.size(); ++t) {
      ys[t] = tape.constant({lm_.n_tags()}, y.rows[t]);
    }
    return tape.scalar(energy(tape, ys));
  }

  // Sequence negative log-likelihood via discrete indexing, the LM's own view
  // of the same quantity; equals energy() on one-hot inputs.
  double sequence_nll(const TagSeq& tags) const {
    Tape tape;
    auto st = lm_.initial(tape);
    st = lm_.advance(tape, lm_.bos_input(tape), st);
    double total = 0.0;
    size_t li = lm_.n_tags();
    for (size_t t = 0; t < tags.size(); ++t) {
      auto dist = lm_.next_distribution(tape, st);
      total -= std::log(std::max(tape.value(dist)[tags[t]], kClampFloor));
      std::vector<double> padded(lm_.input_dim(), 0.0);
      padded[tags[t]] = 1.0;
      st = lm_.advance(tape, tape.constant({lm_.input_dim()}, padded), st);
      (void)li;
    }
    auto dist = lm_.next_distribution(tape, st);
    total -= std::log(std::max(tape.value(dist)[lm_.eos_index()], kClampFloor));
    return total;
  }

  const TagLMCell& lm() const { return lm_; }
  TagLMCell& lm() { return lm_; }
  std::vector<ad::TensorPtr> params() const { return lm_.params(); }
  size_t clamp_events() const { return clamp_events_; }

 private:
  TagLMCell lm_;
  mutable size_t clamp_events_ = 0;
};

// Chain energy plus a weighted tag-language-model term.
class JointEnergy {
 public:
  JointEnergy(const ChainEnergy* chain, const TLMEnergy* tlm, double weight)
      : chain_(chain), tlm_(tlm), weight_(weight) {}

  Tape::Id energy(Tape& tape, std::span<const std::string> tokens,
                  std::span<const Tape::Id> y, bool validate = true) const {
    auto base = chain_->energy(tape, tokens, y, validate);
    if (weight_ == 0.0 || tlm_ == nullptr) return base;
    return tape.add(base, tape.scale(tlm_->energy(tape, y), weight_));
  }

  double weight() const { return weight_; }
  const ChainEnergy& chain() const { return *chain_; }

 private:
  const ChainEnergy* chain_ = nullptr;
  const TLMEnergy* tlm_ = nullptr;
  double weight_ = 0.0;
};

}  // namespace spen
