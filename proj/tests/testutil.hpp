// Shared fixtures for desk-scale tests: tiny random chain energies and token
// sequences.
#pragma once

#include <memory>
#include <string>
#include <vector>

#include "spen/energies.hpp"
#include "spen/nets.hpp"
#include "spen/rng.hpp"

namespace spen::testutil {

inline std::shared_ptr<EmbeddingTable> tiny_vocab(size_t n_tokens, size_t dim, Rng& rng) {
  std::vector<std::string> tokens;
  for (size_t i = 0; i < n_tokens; ++i) tokens.push_back("w" + std::to_string(i));
  return std::make_shared<EmbeddingTable>(EmbeddingTable::random(tokens, dim, rng));
}

struct TinyChain {
  std::shared_ptr<EmbeddingTable> emb;
  ChainEnergy energy;
  std::vector<std::string> tokens;
};

inline TinyChain tiny_chain(size_t n, size_t n_labels, uint64_t seed, size_t emb_dim = 4,
                            size_t hidden = 5) {
  Rng rng(seed);
  TinyChain out;
  out.emb = tiny_vocab(8, emb_dim, rng);
  out.energy = ChainEnergy(BLSTMEncoder("enc", emb_dim, hidden, rng), out.emb, n_labels, rng);
  for (size_t t = 0; t < n; ++t) out.tokens.push_back("w" + std::to_string(rng.below(8)));
  return out;
}

inline std::vector<std::vector<double>> random_unary(size_t n, size_t n_labels, Rng& rng,
                                                     double scale = 2.0) {
  std::vector<std::vector<double>> u(n, std::vector<double>(n_labels));
  for (auto& row : u) {
    for (double& v : row) v = rng.uniform(-scale, scale);
  }
  return u;
}

inline std::vector<double> random_transition(size_t n_labels, Rng& rng, double scale = 1.0) {
  std::vector<double> w(n_labels * n_labels);
  for (double& v : w) v = rng.uniform(-scale, scale);
  return w;
}

inline std::vector<double> random_simplex(size_t n, Rng& rng) {
  std::vector<double> v(n);
  double z = 0.0;
  for (double& x : v) {
    x = rng.uniform() + 1e-3;
    z += x;
  }
  for (double& x : v) x /= z;
  return v;
}

}  // namespace spen::testutil
