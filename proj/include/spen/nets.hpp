#pragma once

#include <fstream>
#include <memory>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "spen/autodiff.hpp"
#include "spen/error.hpp"
#include "spen/rng.hpp"

namespace spen {

using ad::Tape;
using ad::TensorPtr;

enum class Head { sigmoid, softmax, linear };

inline std::vector<TensorPtr>& operator+=(std::vector<TensorPtr>& into,
                                          const std::vector<TensorPtr>& more) {
  into.insert(into.end(), more.begin(), more.end());
  return into;
}

// Feed-forward net with tanh hidden layers. The head decides what the output
// means: sigmoid for per-label probabilities, softmax for a distribution,
// linear for feature representations.
class MLP {
 public:
  MLP() = default;
  MLP(const std::string& name, std::vector<size_t> widths, Head head, Rng& rng)
      : widths_(std::move(widths)), head_(head) {
    check_config(widths_.size() >= 3,
                 msg_cat("mlp '", name, "': need at least one hidden layer"));
    for (size_t l = 0; l + 1 < widths_.size(); ++l) {
      auto w = ad::make_param(msg_cat(name, ".w", l), {widths_[l + 1], widths_[l]});
      auto b = ad::make_param(msg_cat(name, ".b", l), {widths_[l + 1]});
      ad::init_uniform(*w, widths_[l], widths_[l + 1], rng);
      ws_.push_back(w);
      bs_.push_back(b);
    }
  }

  Tape::Id forward(Tape& tape, Tape::Id x) const {
    check(tape.shape(x) == ad::Shape{widths_.front()},
          msg_cat("mlp: input ", ad::shape_str(tape.shape(x)), " expected [",
                  widths_.front(), "]"));
    Tape::Id h = x;
    for (size_t l = 0; l < ws_.size(); ++l) {
      h = tape.add(tape.matvec(tape.leaf(ws_[l]), h), tape.leaf(bs_[l]));
      if (l + 1 < ws_.size()) h = tape.tanh_(h);
    }
    switch (head_) {
      case Head::sigmoid: return tape.sigmoid(h);
      case Head::softmax: return tape.softmax(h);
      case Head::linear: return h;
    }
    return h;
  }

  std::vector<TensorPtr> params() const {
    std::vector<TensorPtr> out = ws_;
    out += bs_;
    return out;
  }

  size_t input_dim() const { return widths_.front(); }
  size_t output_dim() const { return widths_.back(); }
  const std::vector<size_t>& widths() const { return widths_; }
  Head head() const { return head_; }

 private:
  std::vector<size_t> widths_;
  Head head_ = Head::linear;
  std::vector<TensorPtr> ws_, bs_;
};

// Token -> embedding row; unknown tokens hit a dedicated row equal to the
// mean of all loaded vectors. Embeddings stay frozen during training.
class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  explicit EmbeddingTable(size_t dim) : dim_(dim) {}

  static EmbeddingTable load(const std::string& path, size_t dim) {
    std::ifstream in(path);
    check_config(in.good(), msg_cat("embeddings: cannot open ", path));
    EmbeddingTable table;
    table.dim_ = dim;
    std::string line;
    size_t line_no = 0;
    bool first = true;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      std::istringstream ss(line);
      std::vector<std::string> fields;
      std::string f;
      while (ss >> f) fields.push_back(f);
      if (first) {
        first = false;
        // Optional "count dim" header.
        if (fields.size() == 2) {
          try {
            (void)std::stoull(fields[0]);
            size_t header_dim = std::stoull(fields[1]);
            check_config(header_dim == dim,
                         msg_cat("embeddings: header dim ", header_dim, " but ", dim,
                                 " requested (", path, ":", line_no, ")"));
            continue;
          } catch (const std::invalid_argument&) {
            // Not a header; fall through and parse as a row.
          }
        }
      }
      check_config(fields.size() == dim + 1,
                   msg_cat("embeddings: expected token + ", dim, " values, got ",
                           fields.size(), " fields (", path, ":", line_no, ")"));
      std::vector<double> row(dim);
      for (size_t i = 0; i < dim; ++i) {
        try {
          row[i] = std::stod(fields[i + 1]);
        } catch (const std::exception&) {
          throw ConfigError(msg_cat("embeddings: bad value '", fields[i + 1], "' (", path,
                                    ":", line_no, ")"));
        }
      }
      table.add(fields[0], std::move(row));
    }
    check_config(table.size() > 0, msg_cat("embeddings: no rows in ", path));
    table.finalize_unknown();
    return table;
  }

  // Seeded random table for corpora without pretrained vectors.
  static EmbeddingTable random(const std::vector<std::string>& tokens, size_t dim, Rng& rng) {
    EmbeddingTable table;
    table.dim_ = dim;
    for (const auto& tok : tokens) {
      std::vector<double> row(dim);
      double r = std::sqrt(3.0 / static_cast<double>(dim));
      for (double& v : row) v = rng.uniform(-r, r);
      table.add(tok, std::move(row));
    }
    table.finalize_unknown();
    return table;
  }

  void add(const std::string& token, std::vector<double> row) {
    check_config(row.size() == dim_, msg_cat("embeddings: row for '", token,
                                             "' has dim ", row.size(), " expected ", dim_));
    if (index_.count(token)) return;  // first occurrence wins
    index_[token] = tokens_.size();
    tokens_.push_back(token);
    rows_.push_back(std::move(row));
  }

  void finalize_unknown() {
    unk_.assign(dim_, 0.0);
    if (rows_.empty()) return;
    for (const auto& row : rows_) {
      for (size_t i = 0; i < dim_; ++i) unk_[i] += row[i];
    }
    for (double& v : unk_) v /= static_cast<double>(rows_.size());
  }

  const std::vector<double>& lookup(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? unk_ : rows_[it->second];
  }

  bool contains(const std::string& token) const { return index_.count(token) > 0; }
  size_t dim() const { return dim_; }
  size_t size() const { return rows_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<std::vector<double>>& rows() const { return rows_; }
  const std::vector<double>& unknown_row() const { return unk_; }
  void set_unknown_row(std::vector<double> row) { unk_ = std::move(row); }

 private:
  size_t dim_ = 0;
  std::unordered_map<std::string, size_t> index_;
  std::vector<std::string> tokens_;
  std::vector<std::vector<double>> rows_;
  std::vector<double> unk_;
};

// Single LSTM cell with the usual i/f/g/o gating, gates packed in one block.
class LSTMCell {
 public:
  LSTMCell() = default;
  LSTMCell(const std::string& name, size_t input_dim, size_t hidden_dim, Rng& rng)
      : in_(input_dim), hid_(hidden_dim) {
    wx_ = ad::make_param(name + ".wx", {4 * hid_, in_});
    wh_ = ad::make_param(name + ".wh", {4 * hid_, hid_});
    b_ = ad::make_param(name + ".b", {4 * hid_});
    ad::init_uniform(*wx_, in_, hid_, rng);
    ad::init_uniform(*wh_, hid_, hid_, rng);
  }

  struct State {
    Tape::Id h;
    Tape::Id c;
  };

  State initial(Tape& tape) const {
    return {tape.constant({hid_}, std::vector<double>(hid_, 0.0)),
            tape.constant({hid_}, std::vector<double>(hid_, 0.0))};
  }

  State step(Tape& tape, Tape::Id x_t, const State& prev) const {
    auto z = tape.add(tape.add(tape.matvec(tape.leaf(wx_), x_t),
                               tape.matvec(tape.leaf(wh_), prev.h)),
                      tape.leaf(b_));
    auto i = tape.sigmoid(tape.slice(z, 0, hid_));
    auto f = tape.sigmoid(tape.slice(z, hid_, hid_));
    auto g = tape.tanh_(tape.slice(z, 2 * hid_, hid_));
    auto o = tape.sigmoid(tape.slice(z, 3 * hid_, hid_));
    auto c = tape.add(tape.mul(f, prev.c), tape.mul(i, g));
    auto h = tape.mul(o, tape.tanh_(c));
    return {h, c};
  }

  std::vector<TensorPtr> params() const { return {wx_, wh_, b_}; }
  size_t input_dim() const { return in_; }
  size_t hidden_dim() const { return hid_; }

 private:
  size_t in_ = 0, hid_ = 0;
  TensorPtr wx_, wh_, b_;
};

// Bidirectional LSTM over embedded tokens. The two directions' states are
// concatenated and projected back to d with a tanh affine layer, so every
// position yields a d-dimensional feature vector.
class BLSTMEncoder {
 public:
  BLSTMEncoder() = default;
  BLSTMEncoder(const std::string& name, size_t input_dim, size_t hidden_dim, Rng& rng)
      : fwd_(name + ".fwd", input_dim, hidden_dim, rng),
        bwd_(name + ".bwd", input_dim, hidden_dim, rng) {
    proj_w_ = ad::make_param(name + ".proj_w", {hidden_dim, 2 * hidden_dim});
    proj_b_ = ad::make_param(name + ".proj_b", {hidden_dim});
    ad::init_uniform(*proj_w_, 2 * hidden_dim, hidden_dim, rng);
  }

  // One feature vector f(x,t) per position.
  std::vector<Tape::Id> encode(Tape& tape, std::span<const Tape::Id> inputs) const {
    check(!inputs.empty(), "blstm: empty sequence");
    size_t n = inputs.size();
    std::vector<Tape::Id> hf(n), hb(n);
    auto state = fwd_.initial(tape);
    for (size_t t = 0; t < n; ++t) {
      state = fwd_.step(tape, inputs[t], state);
      hf[t] = state.h;
    }
    state = bwd_.initial(tape);
    for (size_t t = n; t-- > 0;) {
      state = bwd_.step(tape, inputs[t], state);
      hb[t] = state.h;
    }
    std::vector<Tape::Id> out(n);
    for (size_t t = 0; t < n; ++t) {
      out[t] = tape.tanh_(tape.add(
          tape.matvec(tape.leaf(proj_w_), tape.concat(hf[t], hb[t])), tape.leaf(proj_b_)));
    }
    return out;
  }

  std::vector<Tape::Id> encode_tokens(Tape& tape, std::span<const std::string> tokens,
                                      const EmbeddingTable& emb) const {
    check(!tokens.empty(), "blstm: empty sequence");
    std::vector<Tape::Id> inputs(tokens.size());
    for (size_t t = 0; t < tokens.size(); ++t) {
      inputs[t] = tape.constant({emb.dim()}, emb.lookup(tokens[t]));
    }
    return encode(tape, inputs);
  }

  std::vector<TensorPtr> params() const {
    std::vector<TensorPtr> out = fwd_.params();
    out += bwd_.params();
    out.push_back(proj_w_);
    out.push_back(proj_b_);
    return out;
  }

  size_t input_dim() const { return fwd_.input_dim(); }
  size_t hidden_dim() const { return fwd_.hidden_dim(); }
  LSTMCell& forward_cell() { return fwd_; }
  LSTMCell& backward_cell() { return bwd_; }
  TensorPtr projection_w() const { return proj_w_; }
  TensorPtr projection_b() const { return proj_b_; }

 private:
  LSTMCell fwd_, bwd_;
  TensorPtr proj_w_, proj_b_;
};

// LSTM language model over tag vectors. Inputs are (L+2)-dimensional: the L
// tags plus reserved begin/end-of-sequence rows; the opposite boundary only
// ever appears on the output side. Output logits cover the L tags plus the
// end symbol. Inputs accept any point of the tag simplex, not just one-hot
// vertices, so the model can score relaxed sequences.
class TagLMCell {
 public:
  TagLMCell() = default;
  TagLMCell(const std::string& name, size_t n_tags, size_t hidden, size_t layers, Rng& rng)
      : n_tags_(n_tags), layers_(layers) {
    check_config(layers >= 1 && layers <= 2, "tag lm: layers must be 1 or 2");
    l1_ = LSTMCell(name + ".l1", n_tags + 2, hidden, rng);
    if (layers_ == 2) l2_ = LSTMCell(name + ".l2", hidden, hidden, rng);
    out_w_ = ad::make_param(name + ".out_w", {n_tags + 1, hidden});
    out_b_ = ad::make_param(name + ".out_b", {n_tags + 1});
    ad::init_uniform(*out_w_, hidden, n_tags + 1, rng);
  }

  size_t n_tags() const { return n_tags_; }
  size_t bos_index() const { return n_tags_; }      // input side
  size_t eos_index() const { return n_tags_; }      // output side
  size_t input_dim() const { return n_tags_ + 2; }
  size_t output_dim() const { return n_tags_ + 1; }
  size_t hidden_dim() const { return l1_.hidden_dim(); }
  size_t layers() const { return layers_; }

  std::vector<double> bos_vector() const {
    std::vector<double> v(input_dim(), 0.0);
    v[n_tags_] = 1.0;
    return v;
  }

  Tape::Id bos_input(Tape& tape) const { return tape.constant({input_dim()}, bos_vector()); }

  // Pads an L-dim tag vector with zero boundary slots.
  Tape::Id pad_tag_vector(Tape& tape, Tape::Id y_t) const {
    check(tape.shape(y_t) == ad::Shape{n_tags_},
          msg_cat("tag lm: tag vector ", ad::shape_str(tape.shape(y_t)), " expected [",
                  n_tags_, "]"));
    return tape.concat(y_t, tape.constant({2}, {0.0, 0.0}));
  }

  struct State {
    LSTMCell::State s1;
    LSTMCell::State s2;
  };

  State initial(Tape& tape) const {
    State st;
    st.s1 = l1_.initial(tape);
    if (layers_ == 2) st.s2 = l2_.initial(tape);
    return st;
  }

  // Consumes one padded input vector; dropout applies in training mode only.
  State advance(Tape& tape, Tape::Id padded_input, const State& prev, double dropout = 0.0,
                Rng* rng = nullptr) const {
    State st;
    st.s1 = l1_.step(tape, padded_input, prev.s1);
    Tape::Id top = st.s1.h;
    if (layers_ == 2) {
      if (dropout > 0.0) top = tape.dropout(top, dropout, *rng);
      st.s2 = l2_.step(tape, top, prev.s2);
    }
    return st;
  }

  Tape::Id top_hidden(const State& st) const { return layers_ == 2 ? st.s2.h : st.s1.h; }

  // Distribution over the L tags plus the end symbol given the state.
  Tape::Id next_distribution(Tape& tape, const State& st, double dropout = 0.0,
                             Rng* rng = nullptr) const {
    Tape::Id h = top_hidden(st);
    if (dropout > 0.0) h = tape.dropout(h, dropout, *rng);
    return tape.softmax(tape.add(tape.matvec(tape.leaf(out_w_), h), tape.leaf(out_b_)));
  }

  std::vector<TensorPtr> params() const {
    std::vector<TensorPtr> out = l1_.params();
    if (layers_ == 2) out += l2_.params();
    out.push_back(out_w_);
    out.push_back(out_b_);
    return out;
  }

 private:
  size_t n_tags_ = 0, layers_ = 1;
  LSTMCell l1_, l2_;
  TensorPtr out_w_, out_b_;
};

// Next-tag distribution over the L real tags given a prefix of simplex
// vectors. The prefix must start with the begin-of-sequence one-hot; boundary
// symbols are masked out of the returned distribution and it is renormalized.
inline std::vector<double> tag_lm_next(const TagLMCell& lm,
                                       const std::vector<std::vector<double>>& prefix) {
  check(!prefix.empty(), "tag_lm_next: empty prefix");
  size_t li = lm.n_tags();
  check(prefix[0].size() == lm.input_dim() && prefix[0][lm.bos_index()] == 1.0,
        "tag_lm_next: prefix must begin with the start-of-sequence vector");
  for (size_t t = 1; t < prefix.size(); ++t) {
    check(prefix[t].size() == li,
          msg_cat("tag_lm_next: prefix vector ", t, " has dim ", prefix[t].size(),
                  " expected ", li));
    double total = 0.0;
    for (double v : prefix[t]) {
      check(v >= -1e-6, "tag_lm_next: negative probability in prefix");
      total += v;
    }
    check(std::fabs(total - 1.0) <= 1e-6,
          msg_cat("tag_lm_next: prefix vector ", t, " off the simplex (sum ", total, ")"));
  }

  Tape tape;
  auto st = lm.initial(tape);
  st = lm.advance(tape, tape.constant({lm.input_dim()}, prefix[0]), st);
  for (size_t t = 1; t < prefix.size(); ++t) {
    auto padded = lm.pad_tag_vector(tape, tape.constant({li}, prefix[t]));
    st = lm.advance(tape, padded, st);
  }
  auto dist = lm.next_distribution(tape, st);
  std::vector<double> full = tape.value(dist);
  std::vector<double> tags(full.begin(), full.begin() + li);
  double z = 0.0;
  for (double v : tags) z += v;
  for (double& v : tags) v /= z;
  return tags;
}

}  // namespace spen
