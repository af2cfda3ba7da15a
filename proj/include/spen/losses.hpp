#pragma once

#include <span>
#include <string>
#include <vector>

#include "spen/autodiff.hpp"
#include "spen/error.hpp"
#include "spen/types.hpp"

namespace spen {

using ad::Tape;

enum class CostKind { squared_l2, l1, zero, one };
enum class HingeKind { margin_rescaled, slack_rescaled, perceptron, contrastive };

inline std::string to_string(CostKind k) {
  switch (k) {
    case CostKind::squared_l2: return "squared_l2";
    case CostKind::l1: return "l1";
    case CostKind::zero: return "zero";
    case CostKind::one: return "one";
  }
  return "?";
}

inline std::string to_string(HingeKind k) {
  switch (k) {
    case HingeKind::margin_rescaled: return "margin_rescaled";
    case HingeKind::slack_rescaled: return "slack_rescaled";
    case HingeKind::perceptron: return "perceptron";
    case HingeKind::contrastive: return "contrastive";
  }
  return "?";
}

// ---- structured cost Delta(y_pred, y_gold) on the tape ----

inline Tape::Id cost_node(Tape& tape, CostKind kind, Tape::Id pred, Tape::Id gold) {
  switch (kind) {
    case CostKind::zero: return tape.constant_scalar(0.0);
    case CostKind::one: return tape.constant_scalar(1.0);
    case CostKind::squared_l2: {
      auto diff = tape.sub(pred, gold);
      return tape.dot(diff, diff);
    }
    case CostKind::l1: return tape.sum(tape.abs_(tape.sub(pred, gold)));
  }
  throw NumericError("cost_node: unknown kind");
}

// Sequence variant: costs sum over positions (unnormalized).
inline Tape::Id cost_node_seq(Tape& tape, CostKind kind, std::span<const Tape::Id> pred,
                              std::span<const Tape::Id> gold) {
  check(pred.size() == gold.size(),
        msg_cat("cost: ", pred.size(), " predicted rows vs ", gold.size(), " gold rows"));
  if (kind == CostKind::zero) return tape.constant_scalar(0.0);
  if (kind == CostKind::one) return tape.constant_scalar(1.0);
  Tape::Id total = tape.constant_scalar(0.0);
  for (size_t t = 0; t < pred.size(); ++t) {
    total = tape.add(total, cost_node(tape, kind, pred[t], gold[t]));
  }
  return total;
}

inline double cost_value(CostKind kind, const RelaxedOutput& pred, const RelaxedOutput& gold) {
  Tape tape;
  if (pred.kind == RelaxedOutput::Kind::mlc) {
    check(gold.kind == RelaxedOutput::Kind::mlc, "cost: output kind mismatch");
    check(pred.labels.size() == gold.labels.size(),
          msg_cat("cost: ", pred.labels.size(), " labels vs ", gold.labels.size()));
    auto p = tape.constant({pred.labels.size()}, pred.labels);
    auto g = tape.constant({gold.labels.size()}, gold.labels);
    return tape.scalar(cost_node(tape, kind, p, g));
  }
  check(gold.kind == RelaxedOutput::Kind::seq, "cost: output kind mismatch");
  std::vector<Tape::Id> ps, gs;
  for (const auto& row : pred.rows) ps.push_back(tape.constant({row.size()}, row));
  for (const auto& row : gold.rows) gs.push_back(tape.constant({row.size()}, row));
  return tape.scalar(cost_node_seq(tape, kind, ps, gs));
}

// ---- structured hinge ----

// margin-rescaled: [Delta - E_pred + E_gold]_+
// slack-rescaled:  Delta * [1 - E_pred + E_gold]_+
// perceptron    == margin-rescaled with Delta = 0
// contrastive   == margin-rescaled with Delta = 1
inline Tape::Id hinge_node(Tape& tape, HingeKind kind, Tape::Id delta, Tape::Id e_pred,
                           Tape::Id e_gold) {
  auto gap = tape.sub(e_gold, e_pred);  // -E_pred + E_gold
  switch (kind) {
    case HingeKind::margin_rescaled:
      return tape.relu(tape.add(delta, gap));
    case HingeKind::slack_rescaled:
      return tape.mul(delta, tape.relu(tape.add(tape.constant_scalar(1.0), gap)));
    case HingeKind::perceptron:
      return tape.relu(gap);
    case HingeKind::contrastive:
      return tape.relu(tape.add(tape.constant_scalar(1.0), gap));
  }
  throw NumericError("hinge_node: unknown kind");
}

inline double hinge_value(HingeKind kind, double delta, double e_pred, double e_gold) {
  check_finite(delta, "hinge delta");
  check_finite(e_pred, "hinge E_pred");
  check_finite(e_gold, "hinge E_gold");
  Tape tape;
  return tape.scalar(hinge_node(tape, kind, tape.constant_scalar(delta),
                                tape.constant_scalar(e_pred), tape.constant_scalar(e_gold)));
}

// The effective cost the hinge consumes: perceptron pins Delta to zero,
// contrastive to one, regardless of the configured cost function.
inline CostKind effective_cost(HingeKind hinge, CostKind configured) {
  if (hinge == HingeKind::perceptron) return CostKind::zero;
  if (hinge == HingeKind::contrastive) return CostKind::one;
  return configured;
}

// ---- stabilization terms ----

// Sum of binary entropies of per-label probabilities (MLC outputs).
inline Tape::Id entropy_mlc_node(Tape& tape, Tape::Id y) {
  auto one_minus = tape.affine_const(y, -1.0, 1.0);
  auto h = tape.add(tape.mul(y, tape.log_(tape.clamp_min(y, 1e-300))),
                    tape.mul(one_minus, tape.log_(tape.clamp_min(one_minus, 1e-300))));
  return tape.neg(tape.sum(h));
}

// Sum over positions of categorical entropies (sequence outputs).
inline Tape::Id entropy_seq_node(Tape& tape, std::span<const Tape::Id> rows) {
  Tape::Id total = tape.constant_scalar(0.0);
  for (Tape::Id y : rows) {
    auto h = tape.mul(y, tape.log_(tape.clamp_min(y, 1e-300)));
    total = tape.sub(total, tape.sum(h));
  }
  return total;
}

// Independent-label binary cross entropy against a 0/1 gold vector.
inline Tape::Id bce_node(Tape& tape, Tape::Id probs, const std::vector<double>& gold) {
  auto g = tape.constant({gold.size()}, gold);
  auto pos = tape.mul(g, tape.log_(tape.clamp_min(probs, 1e-300)));
  auto neg_probs = tape.affine_const(probs, -1.0, 1.0);
  auto neg_gold = tape.affine_const(g, -1.0, 1.0);
  auto neg = tape.mul(neg_gold, tape.log_(tape.clamp_min(neg_probs, 1e-300)));
  return tape.neg(tape.add(tape.sum(pos), tape.sum(neg)));
}

// Per-position log loss against gold tags, summed over the sequence.
inline Tape::Id ce_seq_node(Tape& tape, std::span<const Tape::Id> rows, const TagSeq& gold) {
  check(rows.size() == gold.size(),
        msg_cat("cross entropy: ", rows.size(), " rows vs ", gold.size(), " gold tags"));
  Tape::Id total = tape.constant_scalar(0.0);
  for (size_t t = 0; t < rows.size(); ++t) {
    auto p = tape.clamp_min(tape.pick(rows[t], static_cast<size_t>(gold[t])), 1e-300);
    total = tape.sub(total, tape.log_(p));
  }
  return total;
}

// ||params||^2
inline Tape::Id l2_node(Tape& tape, std::span<const ad::TensorPtr> params) {
  Tape::Id total = tape.constant_scalar(0.0);
  for (const auto& p : params) {
    auto n = tape.leaf(p);
    total = tape.add(total, tape.dot(n, n));
  }
  return total;
}

// ||params - anchor||^2 (anchor values enter as constants).
inline Tape::Id l2_distance_node(Tape& tape, std::span<const ad::TensorPtr> params,
                                 std::span<const std::vector<double>> anchor) {
  check(params.size() == anchor.size(),
        msg_cat("l2 distance: ", params.size(), " params vs ", anchor.size(), " anchors"));
  Tape::Id total = tape.constant_scalar(0.0);
  for (size_t i = 0; i < params.size(); ++i) {
    check(params[i]->data.size() == anchor[i].size(),
          msg_cat("l2 distance: size mismatch for '", params[i]->name, "'"));
    auto diff = tape.sub(tape.leaf(params[i]), tape.constant(params[i]->shape, anchor[i]));
    total = tape.add(total, tape.dot(diff, diff));
  }
  return total;
}

inline std::vector<std::vector<double>> snapshot(std::span<const ad::TensorPtr> params) {
  std::vector<std::vector<double>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p->data);
  return out;
}

inline void restore(std::span<const ad::TensorPtr> params,
                    const std::vector<std::vector<double>>& values) {
  check(params.size() == values.size(), "restore: parameter count mismatch");
  for (size_t i = 0; i < params.size(); ++i) {
    check(params[i]->data.size() == values[i].size(),
          msg_cat("restore: size mismatch for '", params[i]->name, "'"));
    params[i]->data = values[i];
  }
}

}  // namespace spen
