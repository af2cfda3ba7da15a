#pragma once

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "spen/error.hpp"
#include "spen/rng.hpp"
#include "spen/types.hpp"

namespace spen {

// ---- multi-label datasets ----

struct MLCExample {
  SparseVec features;
  LabelSet gold;
};

struct MLCDataset {
  size_t n_labels = 0;
  size_t n_features = 0;
  std::vector<MLCExample> examples;
};

// Line format, after a `L D` header:
//   <comma-separated label indices> <index:value> <index:value> ...
// The label field may be empty; `#` starts a comment line.
inline MLCDataset read_mlc(const std::string& path) {
  std::ifstream in(path);
  check_config(in.good(), msg_cat("read_mlc: cannot open ", path));
  MLCDataset ds;
  std::string line;
  size_t line_no = 0;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    if (!have_header) {
      size_t l = 0, d = 0;
      char extra;
      std::istringstream hs(line);
      if (!(hs >> l >> d) || (hs >> extra)) {
        throw ConfigError(msg_cat("read_mlc: bad header line (", path, ":", line_no, ")"));
      }
      ds.n_labels = l;
      ds.n_features = d;
      have_header = true;
      continue;
    }
    MLCExample ex;
    ex.features.dim = ds.n_features;
    std::string field;
    ss >> field;
    check_config(!ss.fail(), msg_cat("read_mlc: empty line body (", path, ":", line_no, ")"));
    // Either the label field or, when labels are empty, the first feature.
    if (field.find(':') == std::string::npos) {
      std::istringstream ls(field);
      std::string tok;
      while (std::getline(ls, tok, ',')) {
        if (tok.empty()) continue;
        size_t idx;
        try {
          idx = std::stoull(tok);
        } catch (const std::exception&) {
          throw ConfigError(msg_cat("read_mlc: bad label '", tok, "' (", path, ":", line_no,
                                    ")"));
        }
        check_config(idx < ds.n_labels, msg_cat("read_mlc: label ", idx, " >= L=",
                                                ds.n_labels, " (", path, ":", line_no, ")"));
        ex.gold.insert(idx);
      }
      ss >> field;
    }
    while (!ss.fail()) {
      auto colon = field.find(':');
      check_config(colon != std::string::npos,
                   msg_cat("read_mlc: expected index:value, got '", field, "' (", path, ":",
                           line_no, ")"));
      size_t idx;
      double val;
      try {
        idx = std::stoull(field.substr(0, colon));
        val = std::stod(field.substr(colon + 1));
      } catch (const std::exception&) {
        throw ConfigError(msg_cat("read_mlc: bad feature '", field, "' (", path, ":",
                                  line_no, ")"));
      }
      check_config(idx < ds.n_features,
                   msg_cat("read_mlc: feature index ", idx, " >= D=", ds.n_features, " (",
                           path, ":", line_no, ")"));
      ex.features.items.emplace_back(idx, val);
      ss >> field;
    }
    ds.examples.push_back(std::move(ex));
  }
  check_config(have_header, msg_cat("read_mlc: missing `L D` header in ", path));
  return ds;
}

inline void write_mlc(const std::string& path, const MLCDataset& ds) {
  std::ofstream out(path);
  check_config(out.good(), msg_cat("write_mlc: cannot open ", path));
  out << ds.n_labels << " " << ds.n_features << "\n";
  for (const auto& ex : ds.examples) {
    bool first = true;
    for (size_t l : ex.gold) {
      if (!first) out << ",";
      out << l;
      first = false;
    }
    for (const auto& [i, v] : ex.features.items) out << " " << i << ":" << v;
    out << "\n";
  }
}

// ---- sequence datasets ----

struct SeqExample {
  std::vector<std::string> tokens;
  TagSeq tags;
};

struct SeqDataset {
  std::vector<std::string> tag_names;  // first-appearance order
  std::unordered_map<std::string, int> tag_index;
  std::vector<SeqExample> sentences;

  size_t n_labels() const { return tag_names.size(); }

  int intern_tag(const std::string& tag) {
    auto it = tag_index.find(tag);
    if (it != tag_index.end()) return it->second;
    int id = static_cast<int>(tag_names.size());
    tag_names.push_back(tag);
    tag_index[tag] = id;
    return id;
  }

  void adopt_tagset(const std::vector<std::string>& names) {
    tag_names = names;
    tag_index.clear();
    for (size_t i = 0; i < names.size(); ++i) tag_index[names[i]] = static_cast<int>(i);
  }

  std::vector<std::string> vocabulary() const {
    std::vector<std::string> out;
    std::unordered_map<std::string, bool> seen;
    for (const auto& s : sentences) {
      for (const auto& tok : s.tokens) {
        if (!seen[tok]) {
          seen[tok] = true;
          out.push_back(tok);
        }
      }
    }
    return out;
  }
};

// token<TAB>tag lines, blank line between sentences. When a tag set is given,
// unseen tags are an error instead of a silent new class.
inline SeqDataset read_conll(const std::string& path,
                             const std::vector<std::string>* tagset = nullptr) {
  std::ifstream in(path);
  check_config(in.good(), msg_cat("read_conll: cannot open ", path));
  SeqDataset ds;
  if (tagset) ds.adopt_tagset(*tagset);
  SeqExample cur;
  std::string line;
  size_t line_no = 0;
  auto flush = [&] {
    if (!cur.tokens.empty()) {
      ds.sentences.push_back(std::move(cur));
      cur = SeqExample{};
    }
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) {
      flush();
      continue;
    }
    auto tab = line.find('\t');
    check_config(tab != std::string::npos && tab > 0 && tab + 1 < line.size() &&
                     line.find('\t', tab + 1) == std::string::npos,
                 msg_cat("read_conll: expected token<TAB>tag (", path, ":", line_no, ")"));
    std::string token = line.substr(0, tab);
    std::string tag = line.substr(tab + 1);
    if (tagset) {
      auto it = ds.tag_index.find(tag);
      check_config(it != ds.tag_index.end(),
                   msg_cat("read_conll: unknown tag '", tag, "' (", path, ":", line_no, ")"));
      cur.tags.push_back(it->second);
    } else {
      cur.tags.push_back(ds.intern_tag(tag));
    }
    cur.tokens.push_back(std::move(token));
  }
  flush();
  return ds;
}

inline void write_conll(const std::string& path, const SeqDataset& ds) {
  std::ofstream out(path);
  check_config(out.good(), msg_cat("write_conll: cannot open ", path));
  for (const auto& s : ds.sentences) {
    for (size_t t = 0; t < s.tokens.size(); ++t) {
      out << s.tokens[t] << "\t" << ds.tag_names[s.tags[t]] << "\n";
    }
    out << "\n";
  }
}

// ---- tagging scheme conversion ----

struct BioesConversion {
  std::vector<std::string> tags;
  size_t repairs = 0;  // invalid I- openings repaired to B-
};

namespace detail {
inline bool has_prefix(const std::string& tag, const char* prefix) {
  return tag.rfind(prefix, 0) == 0;
}
inline std::string chunk_type(const std::string& tag) { return tag.substr(2); }
}  // namespace detail

// BIO2 -> BIOES: singletons become S-, chunk ends become E-. Invalid I-
// openings (no preceding B-/I- of the same type) are repaired to chunk starts
// and counted.
inline BioesConversion bio2_to_bioes(const std::vector<std::string>& tags) {
  using detail::chunk_type;
  using detail::has_prefix;
  BioesConversion out;
  std::vector<std::string> fixed = tags;
  for (size_t t = 0; t < fixed.size(); ++t) {
    if (!has_prefix(fixed[t], "I-")) continue;
    bool valid = t > 0 && (has_prefix(fixed[t - 1], "B-") || has_prefix(fixed[t - 1], "I-")) &&
                 chunk_type(fixed[t - 1]) == chunk_type(fixed[t]);
    if (!valid) {
      fixed[t] = "B-" + chunk_type(fixed[t]);
      ++out.repairs;
    }
  }
  out.tags.resize(fixed.size());
  for (size_t t = 0; t < fixed.size(); ++t) {
    const std::string& tag = fixed[t];
    if (tag == "O" || (!has_prefix(tag, "B-") && !has_prefix(tag, "I-"))) {
      out.tags[t] = tag;
      continue;
    }
    bool continues = t + 1 < fixed.size() && has_prefix(fixed[t + 1], "I-") &&
                     chunk_type(fixed[t + 1]) == chunk_type(tag);
    if (has_prefix(tag, "B-")) {
      out.tags[t] = (continues ? "B-" : "S-") + chunk_type(tag);
    } else {
      out.tags[t] = (continues ? "I-" : "E-") + chunk_type(tag);
    }
  }
  return out;
}

inline std::vector<std::string> bioes_to_bio2(const std::vector<std::string>& tags) {
  using detail::has_prefix;
  std::vector<std::string> out(tags.size());
  for (size_t t = 0; t < tags.size(); ++t) {
    if (has_prefix(tags[t], "S-")) {
      out[t] = "B-" + detail::chunk_type(tags[t]);
    } else if (has_prefix(tags[t], "E-")) {
      out[t] = "I-" + detail::chunk_type(tags[t]);
    } else {
      out[t] = tags[t];
    }
  }
  return out;
}

// ---- synthetic corpus generation ----

struct SyntheticHMMSpec {
  size_t n_states = 0;
  size_t n_symbols = 0;
  std::vector<double> transition;  // row-stochastic, n_states x n_states
  std::vector<double> emission;    // row-stochastic, n_states x n_symbols
  std::vector<double> initial;     // length n_states
  uint64_t seed = 1;

  void validate() const {
    check_config(n_states > 0 && n_symbols > 0, "hmm spec: empty state or symbol space");
    auto stochastic = [](const std::vector<double>& m, size_t rows, size_t cols,
                         const char* what) {
      check_config(m.size() == rows * cols, msg_cat("hmm spec: bad ", what, " size"));
      for (size_t r = 0; r < rows; ++r) {
        double total = 0.0;
        for (size_t c = 0; c < cols; ++c) {
          check_config(m[r * cols + c] >= 0.0, msg_cat("hmm spec: negative ", what));
          total += m[r * cols + c];
        }
        check_config(std::fabs(total - 1.0) < 1e-9,
                     msg_cat("hmm spec: ", what, " row ", r, " sums to ", total));
      }
    };
    stochastic(transition, n_states, n_states, "transition");
    stochastic(emission, n_states, n_symbols, "emission");
    stochastic(initial, 1, n_states, "initial");
  }

  // Structured default: a noisy cycle over states with overlapping emission
  // windows, so transitions carry real signal while emissions stay ambiguous.
  static SyntheticHMMSpec structured(size_t n_states, size_t n_symbols, uint64_t seed,
                                     double cycle_strength = 0.8, double emission_window = 0.5) {
    SyntheticHMMSpec spec;
    spec.n_states = n_states;
    spec.n_symbols = n_symbols;
    spec.seed = seed;
    Rng rng(seed ^ 0xabcdef12345ULL);
    spec.transition.assign(n_states * n_states, 0.0);
    for (size_t i = 0; i < n_states; ++i) {
      double rest = 1.0 - cycle_strength;
      for (size_t j = 0; j < n_states; ++j) {
        spec.transition[i * n_states + j] = rest * (0.5 + rng.uniform());
      }
      double total = 0.0;
      for (size_t j = 0; j < n_states; ++j) total += spec.transition[i * n_states + j];
      for (size_t j = 0; j < n_states; ++j) {
        spec.transition[i * n_states + j] *= rest / total;
      }
      spec.transition[i * n_states + (i + 1) % n_states] += cycle_strength;
    }
    size_t window = std::max<size_t>(2, static_cast<size_t>(emission_window * n_symbols /
                                                            static_cast<double>(n_states) * 2));
    spec.emission.assign(n_states * n_symbols, 0.0);
    for (size_t i = 0; i < n_states; ++i) {
      size_t center = i * n_symbols / n_states;
      double total = 0.0;
      for (size_t off = 0; off < window; ++off) {
        size_t sym = (center + off) % n_symbols;
        double mass = 0.5 + rng.uniform();
        spec.emission[i * n_symbols + sym] += mass;
        total += mass;
      }
      for (size_t s = 0; s < n_symbols; ++s) spec.emission[i * n_symbols + s] /= total;
    }
    spec.initial.assign(n_states, 1.0 / static_cast<double>(n_states));
    return spec;
  }
};

inline SeqDataset gen_hmm(const SyntheticHMMSpec& spec, size_t n_sequences, size_t min_len,
                          size_t max_len) {
  spec.validate();
  check_config(min_len >= 1 && max_len >= min_len, "gen_hmm: bad length range");
  SeqDataset ds;
  for (size_t i = 0; i < spec.n_states; ++i) ds.intern_tag("T" + std::to_string(i));
  Rng rng(spec.seed);
  for (size_t s = 0; s < n_sequences; ++s) {
    size_t len = min_len + rng.below(max_len - min_len + 1);
    SeqExample ex;
    size_t state = rng.categorical(spec.initial);
    for (size_t t = 0; t < len; ++t) {
      if (t > 0) {
        std::vector<double> row(spec.transition.begin() + state * spec.n_states,
                                spec.transition.begin() + (state + 1) * spec.n_states);
        state = rng.categorical(row);
      }
      std::vector<double> erow(spec.emission.begin() + state * spec.n_symbols,
                               spec.emission.begin() + (state + 1) * spec.n_symbols);
      size_t sym = rng.categorical(erow);
      ex.tokens.push_back("w" + std::to_string(sym));
      ex.tags.push_back(static_cast<int>(state));
    }
    ds.sentences.push_back(std::move(ex));
  }
  return ds;
}

// ---- auto-tagging for tag-LM pretraining ----

using TaggerFn = std::function<TagSeq(const std::vector<std::string>&)>;

// Runs a trained tagger over unlabeled token sequences; the result feeds
// train_tag_lm.
inline std::vector<TagSeq> auto_tag(const TaggerFn& tagger,
                                    const std::vector<std::vector<std::string>>& inputs) {
  std::vector<TagSeq> out;
  out.reserve(inputs.size());
  for (const auto& tokens : inputs) {
    TagSeq tags = tagger(tokens);
    check(tags.size() == tokens.size(),
          msg_cat("auto_tag: tagger returned ", tags.size(), " tags for ", tokens.size(),
                  " tokens"));
    out.push_back(std::move(tags));
  }
  return out;
}

// One sequence of space-separated tag names per line.
inline void write_tag_corpus(const std::string& path, const std::vector<TagSeq>& corpus,
                             const std::vector<std::string>& tag_names) {
  std::ofstream out(path);
  check_config(out.good(), msg_cat("write_tag_corpus: cannot open ", path));
  for (const auto& seq : corpus) {
    for (size_t t = 0; t < seq.size(); ++t) {
      if (t) out << " ";
      out << tag_names[seq[t]];
    }
    out << "\n";
  }
}

inline std::vector<TagSeq> read_tag_corpus(const std::string& path,
                                           const std::vector<std::string>& tag_names) {
  std::ifstream in(path);
  check_config(in.good(), msg_cat("read_tag_corpus: cannot open ", path));
  std::unordered_map<std::string, int> index;
  for (size_t i = 0; i < tag_names.size(); ++i) index[tag_names[i]] = static_cast<int>(i);
  std::vector<TagSeq> out;
  std::string line;
  size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::istringstream ss(line);
    TagSeq seq;
    std::string tag;
    while (ss >> tag) {
      auto it = index.find(tag);
      check_config(it != index.end(),
                   msg_cat("read_tag_corpus: unknown tag '", tag, "' (", path, ":", line_no,
                           ")"));
      seq.push_back(it->second);
    }
    if (!seq.empty()) out.push_back(std::move(seq));
  }
  return out;
}

// One sentence of space-separated tokens per line.
inline std::vector<std::vector<std::string>> read_token_lines(const std::string& path) {
  std::ifstream in(path);
  check_config(in.good(), msg_cat("read_token_lines: cannot open ", path));
  std::vector<std::vector<std::string>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::vector<std::string> tokens;
    std::string tok;
    while (ss >> tok) tokens.push_back(tok);
    if (!tokens.empty()) out.push_back(std::move(tokens));
  }
  return out;
}

inline void write_token_lines(const std::string& path,
                              const std::vector<std::vector<std::string>>& lines) {
  std::ofstream out(path);
  check_config(out.good(), msg_cat("write_token_lines: cannot open ", path));
  for (const auto& tokens : lines) {
    for (size_t t = 0; t < tokens.size(); ++t) {
      if (t) out << " ";
      out << tokens[t];
    }
    out << "\n";
  }
}

}  // namespace spen
