#pragma once

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "spen/error.hpp"

namespace spen {

// Sparse input feature vector (index -> value) of a fixed dimension.
struct SparseVec {
  size_t dim = 0;
  std::vector<std::pair<size_t, double>> items;

  std::vector<double> to_dense() const {
    std::vector<double> out(dim, 0.0);
    for (const auto& [i, v] : items) out[i] += v;
    return out;
  }
};

// Multi-label prediction/gold: a set of label indices in [0, L).
using LabelSet = std::set<size_t>;

// Sequence labeling: one label index in [0, L) per position.
using TagSeq = std::vector<int>;

// Continuous relaxation of a structured output. MLC holds an L-vector in
// [0,1]^L; sequences hold one L-simplex vector per position.
struct RelaxedOutput {
  enum class Kind { mlc, seq };
  Kind kind = Kind::mlc;
  std::vector<double> labels;              // mlc
  std::vector<std::vector<double>> rows;   // seq

  static RelaxedOutput mlc(std::vector<double> probs) {
    RelaxedOutput out;
    out.kind = Kind::mlc;
    out.labels = std::move(probs);
    return out;
  }

  static RelaxedOutput seq(std::vector<std::vector<double>> distributions) {
    RelaxedOutput out;
    out.kind = Kind::seq;
    out.rows = std::move(distributions);
    return out;
  }

  void validate(double tol = 1e-6) const {
    if (kind == Kind::mlc) {
      for (double v : labels) {
        check(v >= -tol && v <= 1.0 + tol,
              msg_cat("relaxed output: label probability ", v, " outside [0,1]"));
      }
    } else {
      for (size_t t = 0; t < rows.size(); ++t) {
        double total = 0.0;
        for (double v : rows[t]) {
          check(v >= -tol, msg_cat("relaxed output: negative mass at position ", t));
          total += v;
        }
        check(std::fabs(total - 1.0) <= tol,
              msg_cat("relaxed output: row ", t, " sums to ", total));
      }
    }
  }
};

inline std::vector<double> one_hot(size_t index, size_t n) {
  std::vector<double> v(n, 0.0);
  v[index] = 1.0;
  return v;
}

inline RelaxedOutput to_relaxed(const TagSeq& tags, size_t n_labels) {
  std::vector<std::vector<double>> rows;
  rows.reserve(tags.size());
  for (int t : tags) rows.push_back(one_hot(static_cast<size_t>(t), n_labels));
  return RelaxedOutput::seq(std::move(rows));
}

inline RelaxedOutput to_relaxed(const LabelSet& labels, size_t n_labels) {
  std::vector<double> v(n_labels, 0.0);
  for (size_t i : labels) v[i] = 1.0;
  return RelaxedOutput::mlc(std::move(v));
}

}  // namespace spen
