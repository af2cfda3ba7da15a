#pragma once

#include <string>
#include <vector>

#include "spen/error.hpp"
#include "spen/types.hpp"

namespace spen {

// Example-averaged (macro) F1 for multi-label predictions. Both-empty pairs
// count as F1 = 1.
inline double example_f1(const std::vector<LabelSet>& pred, const std::vector<LabelSet>& gold) {
  check(pred.size() == gold.size(),
        msg_cat("example_f1: ", pred.size(), " predictions vs ", gold.size(), " golds"));
  check(!pred.empty(), "example_f1: empty dataset");
  double total = 0.0;
  for (size_t e = 0; e < pred.size(); ++e) {
    if (pred[e].empty() && gold[e].empty()) {
      total += 1.0;
      continue;
    }
    size_t hit = 0;
    for (size_t l : pred[e]) hit += gold[e].count(l);
    if (hit == 0) continue;
    double p = static_cast<double>(hit) / static_cast<double>(pred[e].size());
    double r = static_cast<double>(hit) / static_cast<double>(gold[e].size());
    total += 2.0 * p * r / (p + r);
  }
  return total / static_cast<double>(pred.size());
}

inline double token_accuracy(const std::vector<TagSeq>& pred, const std::vector<TagSeq>& gold) {
  check(pred.size() == gold.size(),
        msg_cat("token_accuracy: ", pred.size(), " predictions vs ", gold.size(), " golds"));
  size_t hit = 0, total = 0;
  for (size_t s = 0; s < pred.size(); ++s) {
    check(pred[s].size() == gold[s].size(),
          msg_cat("token_accuracy: length mismatch in sentence ", s));
    for (size_t t = 0; t < pred[s].size(); ++t) {
      hit += pred[s][t] == gold[s][t];
      ++total;
    }
  }
  check(total > 0, "token_accuracy: no tokens");
  return static_cast<double>(hit) / static_cast<double>(total);
}

struct Chunk {
  std::string type;
  size_t begin;
  size_t end;  // inclusive
  bool operator==(const Chunk&) const = default;
};

// Chunk extraction from BIOES tags; tolerant of mildly inconsistent
// sequences (any B-/S- opens, E-/S- closes, type change restarts).
inline std::vector<Chunk> chunks_from_bioes(const std::vector<std::string>& tags) {
  std::vector<Chunk> out;
  std::string open_type;
  size_t open_begin = 0;
  bool open = false;
  auto close = [&](size_t end) {
    if (open) out.push_back({open_type, open_begin, end});
    open = false;
  };
  for (size_t t = 0; t < tags.size(); ++t) {
    const std::string& tag = tags[t];
    if (tag.size() < 2 || tag[1] != '-') {
      close(t == 0 ? 0 : t - 1);
      continue;
    }
    char mark = tag[0];
    std::string type = tag.substr(2);
    switch (mark) {
      case 'S':
        close(t == 0 ? 0 : t - 1);
        out.push_back({type, t, t});
        break;
      case 'B':
        close(t == 0 ? 0 : t - 1);
        open = true;
        open_type = type;
        open_begin = t;
        break;
      case 'I':
      case 'E':
        if (!open || open_type != type) {
          close(t == 0 ? 0 : t - 1);
          open = true;
          open_type = type;
          open_begin = t;
        }
        if (mark == 'E') close(t);
        break;
      default:
        close(t == 0 ? 0 : t - 1);
        break;
    }
  }
  close(tags.empty() ? 0 : tags.size() - 1);
  return out;
}

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Micro-averaged chunk F1 over exact (type, span) matches.
inline PRF chunk_f1(const std::vector<std::vector<std::string>>& pred,
                    const std::vector<std::vector<std::string>>& gold) {
  check(pred.size() == gold.size(),
        msg_cat("chunk_f1: ", pred.size(), " predictions vs ", gold.size(), " golds"));
  size_t n_pred = 0, n_gold = 0, n_hit = 0;
  for (size_t s = 0; s < pred.size(); ++s) {
    check(pred[s].size() == gold[s].size(),
          msg_cat("chunk_f1: length mismatch in sentence ", s));
    auto pc = chunks_from_bioes(pred[s]);
    auto gc = chunks_from_bioes(gold[s]);
    n_pred += pc.size();
    n_gold += gc.size();
    for (const auto& c : pc) {
      for (const auto& g : gc) {
        if (c == g) {
          ++n_hit;
          break;
        }
      }
    }
  }
  PRF out;
  out.precision = n_pred ? static_cast<double>(n_hit) / static_cast<double>(n_pred) : 0.0;
  out.recall = n_gold ? static_cast<double>(n_hit) / static_cast<double>(n_gold) : 0.0;
  out.f1 = (out.precision + out.recall) > 0
               ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
               : 0.0;
  return out;
}

}  // namespace spen
