#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "spen/error.hpp"
#include "spen/rng.hpp"

namespace spen::ad {

using Shape = std::vector<size_t>;

inline size_t numel(const Shape& s) {
  size_t n = 1;
  for (size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Dense row-major tensor. Parameters keep a gradient accumulator of the same
// shape; activations live on the tape instead.
struct Tensor {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;
  bool requires_grad = false;
  std::string name;

  Tensor() = default;
  Tensor(Shape s, double fill) : shape(std::move(s)), data(numel(shape), fill) {}
  Tensor(Shape s, std::vector<double> values) : shape(std::move(s)), data(std::move(values)) {
    check(data.size() == numel(shape),
          msg_cat("tensor '", name, "': data length ", data.size(), " does not match shape ",
                  shape_str(shape)));
  }

  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  size_t size() const { return data.size(); }

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
  void zero_grad() { grad.assign(data.size(), 0.0); }
};

using TensorPtr = std::shared_ptr<Tensor>;

inline TensorPtr make_param(std::string name, Shape shape, double fill = 0.0) {
  auto t = std::make_shared<Tensor>(std::move(shape), fill);
  t->name = std::move(name);
  t->requires_grad = true;
  t->ensure_grad();
  return t;
}

// Glorot-style uniform(-r, r) with r = sqrt(6 / (fan_in + fan_out)).
inline void init_uniform(Tensor& t, size_t fan_in, size_t fan_out, Rng& rng) {
  double r = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : t.data) v = rng.uniform(-r, r);
}

// Reverse-mode tape. Nodes are recorded in construction order, which is a
// topological order by construction; backward walks the record once in
// reverse. The tape owns all activation storage and is reset between steps.
class Tape {
 public:
  using Id = int32_t;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  size_t size() const { return nodes_.size(); }
  void reset() { nodes_.clear(); }

  const Shape& shape(Id id) const { return nodes_[id].shape; }
  const std::vector<double>& value(Id id) const { return nodes_[id].value; }
  const std::vector<double>& grad(Id id) const { return nodes_[id].grad; }

  double scalar(Id id) const {
    check(nodes_[id].value.size() == 1,
          msg_cat("scalar: node '", nodes_[id].op, "' has shape ", shape_str(nodes_[id].shape)));
    return nodes_[id].value[0];
  }

  // ---- leaves ----

  Id leaf(const TensorPtr& t) {
    Id o = push(t->shape, "leaf");
    nodes_[o].value = t->data;
    if (t->requires_grad) {
      t->ensure_grad();
      Tensor* bound = t.get();
      nodes_[o].back = [this, o, bound] {
        const auto& g = nodes_[o].grad;
        for (size_t i = 0; i < g.size(); ++i) bound->grad[i] += g[i];
      };
    }
    return o;
  }

  Id constant(Shape shape, std::vector<double> values) {
    check(values.size() == numel(shape),
          msg_cat("constant: data length ", values.size(), " vs shape ", shape_str(shape)));
    Id o = push(std::move(shape), "constant");
    nodes_[o].value = std::move(values);
    return o;
  }

  Id constant_scalar(double v) { return constant({1}, {v}); }

  // ---- arithmetic ----

  Id add(Id a, Id b) {
    same_shape("add", a, b);
    Id o = push(nodes_[a].shape, "add");
    auto& out = nodes_[o].value;
    const auto &va = nodes_[a].value, &vb = nodes_[b].value;
    for (size_t i = 0; i < out.size(); ++i) out[i] = va[i] + vb[i];
    nodes_[o].back = [this, a, b, o] {
      accumulate(a, nodes_[o].grad);
      accumulate(b, nodes_[o].grad);
    };
    return o;
  }

  Id sub(Id a, Id b) {
    same_shape("sub", a, b);
    Id o = push(nodes_[a].shape, "sub");
    auto& out = nodes_[o].value;
    const auto &va = nodes_[a].value, &vb = nodes_[b].value;
    for (size_t i = 0; i < out.size(); ++i) out[i] = va[i] - vb[i];
    nodes_[o].back = [this, a, b, o] {
      const auto& g = nodes_[o].grad;
      auto& ga = nodes_[a].grad;
      auto& gb = nodes_[b].grad;
      for (size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i];
        gb[i] -= g[i];
      }
    };
    return o;
  }

  Id mul(Id a, Id b) {
    same_shape("mul", a, b);
    Id o = push(nodes_[a].shape, "mul");
    auto& out = nodes_[o].value;
    const auto &va = nodes_[a].value, &vb = nodes_[b].value;
    for (size_t i = 0; i < out.size(); ++i) out[i] = va[i] * vb[i];
    nodes_[o].back = [this, a, b, o] {
      const auto& g = nodes_[o].grad;
      const auto &va = nodes_[a].value, &vb = nodes_[b].value;
      auto& ga = nodes_[a].grad;
      auto& gb = nodes_[b].grad;
      for (size_t i = 0; i < g.size(); ++i) {
        ga[i] += g[i] * vb[i];
        gb[i] += g[i] * va[i];
      }
    };
    return o;
  }

  // alpha * a + beta, elementwise with scalar constants.
  Id affine_const(Id a, double alpha, double beta) {
    Id o = push(nodes_[a].shape, "affine_const");
    auto& out = nodes_[o].value;
    const auto& va = nodes_[a].value;
    for (size_t i = 0; i < out.size(); ++i) out[i] = alpha * va[i] + beta;
    nodes_[o].back = [this, a, o, alpha] {
      const auto& g = nodes_[o].grad;
      auto& ga = nodes_[a].grad;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += alpha * g[i];
    };
    return o;
  }

  Id scale(Id a, double alpha) { return affine_const(a, alpha, 0.0); }
  Id neg(Id a) { return affine_const(a, -1.0, 0.0); }

  // ---- linear algebra ----

  Id matmul(Id a, Id b) {
    const Shape &sa = nodes_[a].shape, &sb = nodes_[b].shape;
    check(sa.size() == 2 && sb.size() == 2 && sa[1] == sb[0],
          msg_cat("matmul: shape mismatch ", shape_str(sa), " x ", shape_str(sb)));
    size_t m = sa[0], k = sa[1], n = sb[1];
    Id o = push({m, n}, "matmul");
    auto& out = nodes_[o].value;
    const auto &va = nodes_[a].value, &vb = nodes_[b].value;
    for (size_t i = 0; i < m; ++i) {
      for (size_t p = 0; p < k; ++p) {
        double aip = va[i * k + p];
        if (aip == 0.0) continue;
        for (size_t j = 0; j < n; ++j) out[i * n + j] += aip * vb[p * n + j];
      }
    }
    nodes_[o].back = [this, a, b, o, m, k, n] {
      const auto& g = nodes_[o].grad;
      const auto &va = nodes_[a].value, &vb = nodes_[b].value;
      auto& ga = nodes_[a].grad;
      auto& gb = nodes_[b].grad;
      // dA = dC * B^T ; dB = A^T * dC
      for (size_t i = 0; i < m; ++i) {
        for (size_t j = 0; j < n; ++j) {
          double gij = g[i * n + j];
          if (gij == 0.0) continue;
          for (size_t p = 0; p < k; ++p) {
            ga[i * k + p] += gij * vb[p * n + j];
            gb[p * n + j] += va[i * k + p] * gij;
          }
        }
      }
    };
    return o;
  }

  // W [m,n] times x [n] -> [m].
  Id matvec(Id w, Id x) {
    const Shape &sw = nodes_[w].shape, &sx = nodes_[x].shape;
    check(sw.size() == 2 && sx.size() == 1 && sw[1] == sx[0],
          msg_cat("matvec: shape mismatch ", shape_str(sw), " x ", shape_str(sx)));
    size_t m = sw[0], n = sw[1];
    Id o = push({m}, "matvec");
    auto& out = nodes_[o].value;
    const auto &vw = nodes_[w].value, &vx = nodes_[x].value;
    for (size_t i = 0; i < m; ++i) {
      double acc = 0.0;
      const double* row = vw.data() + i * n;
      for (size_t j = 0; j < n; ++j) acc += row[j] * vx[j];
      out[i] = acc;
    }
    nodes_[o].back = [this, w, x, o, m, n] {
      const auto& g = nodes_[o].grad;
      const auto &vw = nodes_[w].value, &vx = nodes_[x].value;
      auto& gw = nodes_[w].grad;
      auto& gx = nodes_[x].grad;
      for (size_t i = 0; i < m; ++i) {
        double gi = g[i];
        if (gi == 0.0) continue;
        double* gw_row = gw.data() + i * n;
        const double* w_row = vw.data() + i * n;
        for (size_t j = 0; j < n; ++j) {
          gw_row[j] += gi * vx[j];
          gx[j] += gi * w_row[j];
        }
      }
    };
    return o;
  }

  Id dot(Id a, Id b) {
    same_shape("dot", a, b);
    Id o = push({1}, "dot");
    const auto &va = nodes_[a].value, &vb = nodes_[b].value;
    double acc = 0.0;
    for (size_t i = 0; i < va.size(); ++i) acc += va[i] * vb[i];
    nodes_[o].value[0] = acc;
    nodes_[o].back = [this, a, b, o] {
      double g = nodes_[o].grad[0];
      const auto &va = nodes_[a].value, &vb = nodes_[b].value;
      auto& ga = nodes_[a].grad;
      auto& gb = nodes_[b].grad;
      for (size_t i = 0; i < va.size(); ++i) {
        ga[i] += g * vb[i];
        gb[i] += g * va[i];
      }
    };
    return o;
  }

  // ---- elementwise nonlinearities ----

  Id sigmoid(Id a) {
    return unary(a, "sigmoid",
                 [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
                 [](double, double y) { return y * (1.0 - y); });
  }

  Id tanh_(Id a) {
    return unary(a, "tanh", [](double x) { return std::tanh(x); },
                 [](double, double y) { return 1.0 - y * y; });
  }

  Id softplus(Id a) {
    return unary(a, "softplus",
                 [](double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); },
                 [](double x, double) {
                   return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
                 });
  }

  Id exp_(Id a) {
    return unary(a, "exp", [](double x) { return std::exp(x); },
                 [](double, double y) { return y; });
  }

  Id log_(Id a) {
    return unary(a, "log", [](double x) { return std::log(x); },
                 [](double x, double) { return 1.0 / x; });
  }

  Id relu(Id a) {
    return unary(a, "relu", [](double x) { return x > 0 ? x : 0.0; },
                 [](double x, double) { return x > 0 ? 1.0 : 0.0; });
  }

  Id abs_(Id a) {
    return unary(a, "abs", [](double x) { return std::fabs(x); },
                 [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
  }

  // max(x, floor); gradient passes only where x > floor.
  Id clamp_min(Id a, double floor) {
    Id o = push(nodes_[a].shape, "clamp_min");
    auto& out = nodes_[o].value;
    const auto& va = nodes_[a].value;
    for (size_t i = 0; i < out.size(); ++i) out[i] = std::max(va[i], floor);
    nodes_[o].back = [this, a, o, floor] {
      const auto& g = nodes_[o].grad;
      const auto& va = nodes_[a].value;
      auto& ga = nodes_[a].grad;
      for (size_t i = 0; i < g.size(); ++i) {
        if (va[i] > floor) ga[i] += g[i];
      }
    };
    return o;
  }

  // ---- reductions and structure ----

  Id sum(Id a) {
    Id o = push({1}, "sum");
    const auto& va = nodes_[a].value;
    double acc = 0.0;
    for (double v : va) acc += v;
    nodes_[o].value[0] = acc;
    nodes_[o].back = [this, a, o] {
      double g = nodes_[o].grad[0];
      auto& ga = nodes_[a].grad;
      for (double& v : ga) v += g;
    };
    return o;
  }

  Id softmax(Id a) {
    check(nodes_[a].shape.size() == 1,
          msg_cat("softmax: expected vector, got ", shape_str(nodes_[a].shape)));
    Id o = push(nodes_[a].shape, "softmax");
    auto& out = nodes_[o].value;
    const auto& va = nodes_[a].value;
    double mx = *std::max_element(va.begin(), va.end());
    double z = 0.0;
    for (size_t i = 0; i < va.size(); ++i) {
      out[i] = std::exp(va[i] - mx);
      z += out[i];
    }
    for (double& v : out) v /= z;
    nodes_[o].back = [this, a, o] {
      const auto& g = nodes_[o].grad;
      const auto& y = nodes_[o].value;
      auto& ga = nodes_[a].grad;
      double gy = 0.0;
      for (size_t i = 0; i < g.size(); ++i) gy += g[i] * y[i];
      for (size_t i = 0; i < g.size(); ++i) ga[i] += y[i] * (g[i] - gy);
    };
    return o;
  }

  Id logsumexp(Id a) {
    check(nodes_[a].shape.size() == 1,
          msg_cat("logsumexp: expected vector, got ", shape_str(nodes_[a].shape)));
    Id o = push({1}, "logsumexp");
    const auto& va = nodes_[a].value;
    double mx = *std::max_element(va.begin(), va.end());
    double z = 0.0;
    for (double v : va) z += std::exp(v - mx);
    nodes_[o].value[0] = mx + std::log(z);
    nodes_[o].back = [this, a, o] {
      double g = nodes_[o].grad[0];
      double lse = nodes_[o].value[0];
      const auto& va = nodes_[a].value;
      auto& ga = nodes_[a].grad;
      for (size_t i = 0; i < va.size(); ++i) ga[i] += g * std::exp(va[i] - lse);
    };
    return o;
  }

  Id concat(std::span<const Id> parts) {
    check(!parts.empty(), "concat: no inputs");
    size_t total = 0;
    for (Id p : parts) {
      check(nodes_[p].shape.size() == 1,
            msg_cat("concat: expected vectors, got ", shape_str(nodes_[p].shape)));
      total += nodes_[p].value.size();
    }
    Id o = push({total}, "concat");
    auto& out = nodes_[o].value;
    size_t off = 0;
    for (Id p : parts) {
      const auto& vp = nodes_[p].value;
      std::copy(vp.begin(), vp.end(), out.begin() + off);
      off += vp.size();
    }
    std::vector<Id> owned(parts.begin(), parts.end());
    nodes_[o].back = [this, owned, o] {
      const auto& g = nodes_[o].grad;
      size_t off = 0;
      for (Id p : owned) {
        auto& gp = nodes_[p].grad;
        for (size_t i = 0; i < gp.size(); ++i) gp[i] += g[off + i];
        off += gp.size();
      }
    };
    return o;
  }

  Id concat(Id a, Id b) {
    std::array<Id, 2> parts{a, b};
    return concat(std::span<const Id>(parts.data(), parts.size()));
  }

  // Contiguous slice over the flat buffer; result is a vector of length len.
  Id slice(Id a, size_t start, size_t len) {
    check(start + len <= nodes_[a].value.size(),
          msg_cat("slice: [", start, ",", start + len, ") out of range for ",
                  shape_str(nodes_[a].shape)));
    Id o = push({len}, "slice");
    const auto& va = nodes_[a].value;
    std::copy(va.begin() + start, va.begin() + start + len, nodes_[o].value.begin());
    nodes_[o].back = [this, a, o, start, len] {
      const auto& g = nodes_[o].grad;
      auto& ga = nodes_[a].grad;
      for (size_t i = 0; i < len; ++i) ga[start + i] += g[i];
    };
    return o;
  }

  Id pick(Id a, size_t index) { return slice(a, index, 1); }

  // Rows (each a length-L vector) stacked into an [n, L] matrix.
  Id stack_rows(std::span<const Id> rows) {
    check(!rows.empty(), "stack_rows: no inputs");
    size_t cols = nodes_[rows[0]].value.size();
    for (Id r : rows) {
      check(nodes_[r].value.size() == cols,
            msg_cat("stack_rows: ragged row ", shape_str(nodes_[r].shape)));
    }
    Id o = push({rows.size(), cols}, "stack_rows");
    auto& out = nodes_[o].value;
    for (size_t r = 0; r < rows.size(); ++r) {
      const auto& vr = nodes_[rows[r]].value;
      std::copy(vr.begin(), vr.end(), out.begin() + r * cols);
    }
    std::vector<Id> owned(rows.begin(), rows.end());
    nodes_[o].back = [this, owned, o, cols] {
      const auto& g = nodes_[o].grad;
      for (size_t r = 0; r < owned.size(); ++r) {
        auto& gr = nodes_[owned[r]].grad;
        for (size_t i = 0; i < cols; ++i) gr[i] += g[r * cols + i];
      }
    };
    return o;
  }

  // Inverted dropout; mask drawn from rng at record time. Eval mode simply
  // skips the op, so evaluation stays deterministic.
  Id dropout(Id a, double rate, Rng& rng) {
    check(rate >= 0.0 && rate < 1.0, msg_cat("dropout: bad rate ", rate));
    Id o = push(nodes_[a].shape, "dropout");
    auto mask = std::make_shared<std::vector<double>>(nodes_[a].value.size());
    double keep = 1.0 - rate;
    for (double& m : *mask) m = rng.bernoulli(keep) ? 1.0 / keep : 0.0;
    auto& out = nodes_[o].value;
    const auto& va = nodes_[a].value;
    for (size_t i = 0; i < out.size(); ++i) out[i] = va[i] * (*mask)[i];
    nodes_[o].back = [this, a, o, mask] {
      const auto& g = nodes_[o].grad;
      auto& ga = nodes_[a].grad;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (*mask)[i];
    };
    return o;
  }

  // ---- extension point for structured ops ----

  // The caller supplies the forward value and a backward that distributes the
  // output gradient onto the inputs via grad_mut(). Used for dynamic-program
  // losses whose gradients come from their own inference routines.
  Id custom(const char* op, Shape out_shape, std::vector<double> out_value,
            std::function<void(Tape&)> back) {
    check(out_value.size() == numel(out_shape),
          msg_cat(op, ": value length ", out_value.size(), " vs shape ",
                  shape_str(out_shape)));
    Id o = push(std::move(out_shape), op);
    nodes_[o].value = std::move(out_value);
    nodes_[o].back = [this, back] { back(*this); };
    return o;
  }

  std::vector<double>& grad_mut(Id id) { return nodes_[id].grad; }

  // ---- backward ----

  void backward(Id out) {
    check(nodes_[out].value.size() == 1,
          msg_cat("backward: output must be scalar, got ", shape_str(nodes_[out].shape)));
    nodes_[out].grad[0] = 1.0;
    for (Id i = static_cast<Id>(nodes_.size()) - 1; i >= 0; --i) {
      if (nodes_[i].back) nodes_[i].back();
    }
  }

 private:
  struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    std::function<void()> back;
    const char* op = "";
  };

  Id push(Shape shape, const char* op) {
    Node n;
    n.shape = std::move(shape);
    size_t sz = numel(n.shape);
    n.value.assign(sz, 0.0);
    n.grad.assign(sz, 0.0);
    n.op = op;
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
  }

  template <typename F, typename DF>
  Id unary(Id a, const char* op, F f, DF df) {
    Id o = push(nodes_[a].shape, op);
    auto& out = nodes_[o].value;
    const auto& va = nodes_[a].value;
    for (size_t i = 0; i < out.size(); ++i) out[i] = f(va[i]);
    nodes_[o].back = [this, a, o, df] {
      const auto& g = nodes_[o].grad;
      const auto& va = nodes_[a].value;
      const auto& vo = nodes_[o].value;
      auto& ga = nodes_[a].grad;
      for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * df(va[i], vo[i]);
    };
    return o;
  }

  void accumulate(Id target, const std::vector<double>& g) {
    auto& gt = nodes_[target].grad;
    for (size_t i = 0; i < g.size(); ++i) gt[i] += g[i];
  }

  void same_shape(const char* op, Id a, Id b) const {
    check(nodes_[a].shape == nodes_[b].shape,
          msg_cat(op, ": shape mismatch ", shape_str(nodes_[a].shape), " vs ",
                  shape_str(nodes_[b].shape)));
  }

  std::vector<Node> nodes_;
};

inline void zero_grads(std::span<const TensorPtr> params) {
  for (const auto& p : params) p->zero_grad();
}

// FNV-1a over raw parameter bytes, in list order. Used by tests and debug
// checks to assert that frozen parameters stay untouched.
inline uint64_t param_hash(std::span<const TensorPtr> params) {
  uint64_t h = 1469598103934665603ULL;
  for (const auto& p : params) {
    for (double v : p->data) {
      unsigned char bytes[sizeof(double)];
      std::memcpy(bytes, &v, sizeof(double));
      for (unsigned char b : bytes) {
        h ^= b;
        h *= 1099511628211ULL;
      }
    }
  }
  return h;
}

}  // namespace spen::ad
