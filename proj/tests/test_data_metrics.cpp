#include <gtest/gtest.h>

#include <fstream>

#include "spen/data.hpp"
#include "spen/inference.hpp"
#include "spen/metrics.hpp"

using namespace spen;

namespace {

std::string write_temp(const std::string& name, const std::string& content) {
  std::string path = std::string(::testing::TempDir()) + name;
  std::ofstream out(path);
  out << content;
  return path;
}

}  // namespace

TEST(ReadMlc, ParsesLabelsAndFeatures) {
  auto path = write_temp("mlc_basic.txt", "4 8\n1,3 0:1.0 5:2.5\n");
  auto ds = read_mlc(path);
  EXPECT_EQ(ds.n_labels, 4u);
  EXPECT_EQ(ds.n_features, 8u);
  ASSERT_EQ(ds.examples.size(), 1u);
  EXPECT_EQ(ds.examples[0].gold, (LabelSet{1, 3}));
  ASSERT_EQ(ds.examples[0].features.items.size(), 2u);
  EXPECT_EQ(ds.examples[0].features.items[0].first, 0u);
  EXPECT_DOUBLE_EQ(ds.examples[0].features.items[1].second, 2.5);
}

TEST(ReadMlc, EmptyLabelFieldIsLegal) {
  auto path = write_temp("mlc_nolabel.txt", "4 8\n2:0.5 3:1.5\n");
  auto ds = read_mlc(path);
  ASSERT_EQ(ds.examples.size(), 1u);
  EXPECT_TRUE(ds.examples[0].gold.empty());
  EXPECT_EQ(ds.examples[0].features.items.size(), 2u);
}

TEST(ReadMlc, FeatureIndexOutOfRangeNamesLine) {
  auto path = write_temp("mlc_badfeat.txt", "4 8\n1 9:1.0\n");
  try {
    read_mlc(path);
    FAIL() << "expected feature range error";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos);
  }
}

TEST(ReadMlc, CommentsIgnoredAndRoundTrip) {
  auto path = write_temp("mlc_rt.txt", "# comment\n3 5\n0,2 1:0.5\n 3:2\n1 0:1 4:4\n");
  auto ds = read_mlc(path);
  EXPECT_EQ(ds.examples.size(), 3u);
  auto out_path = std::string(::testing::TempDir()) + "mlc_rt_out.txt";
  write_mlc(out_path, ds);
  auto again = read_mlc(out_path);
  ASSERT_EQ(again.examples.size(), ds.examples.size());
  for (size_t e = 0; e < ds.examples.size(); ++e) {
    EXPECT_EQ(again.examples[e].gold, ds.examples[e].gold);
    EXPECT_EQ(again.examples[e].features.items, ds.examples[e].features.items);
  }
}

TEST(ReadConll, SplitsSentencesOnBlankLines) {
  auto path = write_temp("conll_two.txt", "a\tX\nb\tY\n\nc\tX\n\n\n");
  auto ds = read_conll(path);
  ASSERT_EQ(ds.sentences.size(), 2u);
  EXPECT_EQ(ds.sentences[0].tokens, (std::vector<std::string>{"a", "b"}));
  EXPECT_EQ(ds.tag_names, (std::vector<std::string>{"X", "Y"}));
  EXPECT_EQ(ds.sentences[1].tags, (TagSeq{0}));
}

TEST(ReadConll, SingleTokenFile) {
  auto path = write_temp("conll_one.txt", "hello\tT\n");
  auto ds = read_conll(path);
  ASSERT_EQ(ds.sentences.size(), 1u);
  EXPECT_EQ(ds.sentences[0].tokens.size(), 1u);
}

TEST(ReadConll, RaggedLineNamesLineNumber) {
  auto path = write_temp("conll_bad.txt", "a\tX\nnotag\n");
  try {
    read_conll(path);
    FAIL() << "expected format error";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find(":2"), std::string::npos);
  }
}

TEST(ReadConll, UnknownTagAgainstFixedTagsetFails) {
  auto path = write_temp("conll_unk.txt", "a\tX\nb\tZ\n");
  std::vector<std::string> tagset = {"X", "Y"};
  EXPECT_THROW(read_conll(path, &tagset), ConfigError);
}

TEST(Bioes, SingletonBecomesS) {
  auto res = bio2_to_bioes({"B-PER"});
  EXPECT_EQ(res.tags, (std::vector<std::string>{"S-PER"}));
  EXPECT_EQ(res.repairs, 0u);
}

TEST(Bioes, ChunkEndBecomesE) {
  auto res = bio2_to_bioes({"B-PER", "I-PER"});
  EXPECT_EQ(res.tags, (std::vector<std::string>{"B-PER", "E-PER"}));
}

TEST(Bioes, OutsideUnchanged) {
  auto res = bio2_to_bioes({"O", "O"});
  EXPECT_EQ(res.tags, (std::vector<std::string>{"O", "O"}));
}

TEST(Bioes, InvalidOpeningRepairedAndCounted) {
  auto res = bio2_to_bioes({"O", "I-LOC", "I-LOC"});
  EXPECT_EQ(res.tags, (std::vector<std::string>{"O", "B-LOC", "E-LOC"}));
  EXPECT_EQ(res.repairs, 1u);
}

TEST(Bioes, RoundTripsBackToBio2) {
  std::vector<std::vector<std::string>> cases = {
      {"B-PER"},
      {"B-PER", "I-PER"},
      {"O", "B-LOC", "I-LOC", "I-LOC", "O", "B-PER"},
      {"B-A", "B-B", "I-B", "O"},
  };
  for (const auto& tags : cases) {
    EXPECT_EQ(bioes_to_bio2(bio2_to_bioes(tags).tags), tags);
  }
}

TEST(ExampleF1, HandValues) {
  EXPECT_DOUBLE_EQ(example_f1({LabelSet{1, 2}}, {LabelSet{0, 1}}), 0.5);
  EXPECT_DOUBLE_EQ(example_f1({LabelSet{0}, LabelSet{1, 2}}, {LabelSet{0}, LabelSet{1, 2}}),
                   1.0);
  EXPECT_DOUBLE_EQ(example_f1({LabelSet{}}, {LabelSet{0}}), 0.0);
  EXPECT_DOUBLE_EQ(example_f1({LabelSet{}}, {LabelSet{}}), 1.0);
}

TEST(ExampleF1, SymmetricUnderSwap) {
  Rng rng(5);
  for (int it = 0; it < 50; ++it) {
    std::vector<LabelSet> a(4), b(4);
    for (int e = 0; e < 4; ++e) {
      for (size_t l = 0; l < 6; ++l) {
        if (rng.bernoulli(0.4)) a[e].insert(l);
        if (rng.bernoulli(0.4)) b[e].insert(l);
      }
    }
    double ab = example_f1(a, b), ba = example_f1(b, a);
    EXPECT_NEAR(ab, ba, 1e-12);
    EXPECT_GE(ab, 0.0);
    EXPECT_LE(ab, 1.0);
  }
}

TEST(TokenAccuracy, CountsMatchingPositions) {
  EXPECT_DOUBLE_EQ(token_accuracy({TagSeq{0, 1, 2}}, {TagSeq{0, 1, 2}}), 1.0);
  EXPECT_DOUBLE_EQ(token_accuracy({TagSeq{0, 1}, TagSeq{2}}, {TagSeq{0, 2}, TagSeq{2}}),
                   2.0 / 3.0);
  EXPECT_THROW(token_accuracy({TagSeq{0}}, {TagSeq{0, 1}}), NumericError);
}

TEST(ChunkF1, ExtraPredictedChunkHandValue) {
  std::vector<std::vector<std::string>> gold = {{"B-PER", "E-PER", "O"}, {"O", "O"}};
  std::vector<std::vector<std::string>> pred = {{"B-PER", "E-PER", "O"}, {"S-LOC", "O"}};
  auto res = chunk_f1(pred, gold);
  EXPECT_DOUBLE_EQ(res.precision, 0.5);
  EXPECT_DOUBLE_EQ(res.recall, 1.0);
  EXPECT_NEAR(res.f1, 2.0 / 3.0, 1e-12);
}

TEST(ChunkF1, AllOutsidePredictionScoresZero) {
  std::vector<std::vector<std::string>> gold = {{"B-PER", "E-PER", "O"}};
  std::vector<std::vector<std::string>> pred = {{"O", "O", "O"}};
  EXPECT_DOUBLE_EQ(chunk_f1(pred, gold).f1, 0.0);
}

TEST(GenHmm, DeterministicSpecRecoverableByViterbi) {
  // Near-deterministic transitions and disjoint emissions: decoding with the
  // true model recovers the hidden states exactly.
  SyntheticHMMSpec spec;
  spec.n_states = 3;
  spec.n_symbols = 6;
  spec.seed = 9;
  spec.transition = {0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0};
  spec.emission = {1.0, 0.0, 0.0, 0.0, 0.0, 0.0,
                   0.0, 0.0, 1.0, 0.0, 0.0, 0.0,
                   0.0, 0.0, 0.0, 0.0, 1.0, 0.0};
  spec.initial = {1.0, 0.0, 0.0};
  auto ds = gen_hmm(spec, 20, 3, 8);
  ASSERT_EQ(ds.sentences.size(), 20u);
  for (const auto& ex : ds.sentences) {
    // Log-space true-model scores as unary potentials.
    std::vector<std::vector<double>> unary(ex.tokens.size(),
                                           std::vector<double>(3, -1e9));
    for (size_t t = 0; t < ex.tokens.size(); ++t) {
      size_t sym = std::stoull(ex.tokens[t].substr(1));
      for (size_t s = 0; s < 3; ++s) {
        if (spec.emission[s * 6 + sym] > 0) unary[t][s] = 0.0;
      }
    }
    std::vector<double> w(9, -1e9);
    for (size_t i = 0; i < 3; ++i) {
      for (size_t j = 0; j < 3; ++j) {
        if (spec.transition[i * 3 + j] > 0) w[i * 3 + j] = 0.0;
      }
    }
    auto res = viterbi(unary, w, 3);
    EXPECT_EQ(res.tags, ex.tags);
  }
}

TEST(GenHmm, SameSeedSameCorpus) {
  auto spec = SyntheticHMMSpec::structured(4, 10, 77);
  auto a = gen_hmm(spec, 50, 2, 9);
  auto b = gen_hmm(spec, 50, 2, 9);
  ASSERT_EQ(a.sentences.size(), b.sentences.size());
  for (size_t s = 0; s < a.sentences.size(); ++s) {
    EXPECT_EQ(a.sentences[s].tokens, b.sentences[s].tokens);
    EXPECT_EQ(a.sentences[s].tags, b.sentences[s].tags);
  }
}

TEST(GenHmm, EmpiricalTransitionsMatchSpec) {
  auto spec = SyntheticHMMSpec::structured(4, 12, 31);
  auto ds = gen_hmm(spec, 8000, 12, 14);  // ~100k tokens
  std::vector<double> counts(16, 0.0), row_totals(4, 0.0);
  for (const auto& ex : ds.sentences) {
    for (size_t t = 1; t < ex.tags.size(); ++t) {
      counts[ex.tags[t - 1] * 4 + ex.tags[t]] += 1.0;
      row_totals[ex.tags[t - 1]] += 1.0;
    }
  }
  for (size_t i = 0; i < 4; ++i) {
    for (size_t j = 0; j < 4; ++j) {
      double freq = counts[i * 4 + j] / row_totals[i];
      EXPECT_NEAR(freq, spec.transition[i * 4 + j], 0.01);
    }
  }
}

TEST(AutoTag, OracleTaggerReproducesGoldAndLengths) {
  auto spec = SyntheticHMMSpec::structured(3, 8, 13);
  auto ds = gen_hmm(spec, 10, 2, 6);
  std::vector<std::vector<std::string>> inputs;
  for (const auto& ex : ds.sentences) inputs.push_back(ex.tokens);

  size_t cursor = 0;
  TaggerFn oracle = [&](const std::vector<std::string>& tokens) {
    (void)tokens;
    return ds.sentences[cursor++].tags;
  };
  auto tagged = auto_tag(oracle, inputs);
  ASSERT_EQ(tagged.size(), inputs.size());
  for (size_t s = 0; s < tagged.size(); ++s) {
    EXPECT_EQ(tagged[s].size(), inputs[s].size());
    EXPECT_EQ(tagged[s], ds.sentences[s].tags);
  }
}

TEST(TagCorpus, WriteReadRoundTrip) {
  std::vector<std::string> names = {"A", "B", "C"};
  std::vector<TagSeq> corpus = {{0, 1, 2}, {2, 2}, {1}};
  auto path = std::string(::testing::TempDir()) + "tags_rt.txt";
  write_tag_corpus(path, corpus, names);
  auto again = read_tag_corpus(path, names);
  EXPECT_EQ(again, corpus);
}

TEST(ConllRoundTrip, WriteThenReadIsIdentity) {
  auto spec = SyntheticHMMSpec::structured(3, 5, 21);
  auto ds = gen_hmm(spec, 12, 1, 7);
  auto path = std::string(::testing::TempDir()) + "conll_rt.txt";
  write_conll(path, ds);
  auto again = read_conll(path, &ds.tag_names);
  ASSERT_EQ(again.sentences.size(), ds.sentences.size());
  for (size_t s = 0; s < ds.sentences.size(); ++s) {
    EXPECT_EQ(again.sentences[s].tokens, ds.sentences[s].tokens);
    EXPECT_EQ(again.sentences[s].tags, ds.sentences[s].tags);
  }
}
