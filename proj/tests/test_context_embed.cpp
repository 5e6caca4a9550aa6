#include "oracles.hpp"

#include <trolldet/context_embed.hpp>

#include <gtest/gtest.h>

#include <filesystem>

using namespace trolldet;

namespace {

RowVec row(std::initializer_list<double> v) {
  RowVec r(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) r(i++) = x;
  return r;
}

// Scalar LSTM with H = D = 1, written straight from the gate equations.
struct ScalarLstm {
  double wi, ui, bi, wf, uf, bf, wo, uo, bo, wg, ug, bg;
  std::pair<double, double> step(double x, double h, double c) const {
    const double i = oracle::sigmoid(wi * x + ui * h + bi);
    const double f = oracle::sigmoid(wf * x + uf * h + bf);
    const double o = oracle::sigmoid(wo * x + uo * h + bo);
    const double g = std::tanh(wg * x + ug * h + bg);
    const double c2 = f * c + i * g;
    return {o * std::tanh(c2), c2};
  }
  void load(LstmCellParams& cell) const {
    cell.w_i.value(0, 0) = wi; cell.u_i.value(0, 0) = ui; cell.b_i.value(0, 0) = bi;
    cell.w_f.value(0, 0) = wf; cell.u_f.value(0, 0) = uf; cell.b_f.value(0, 0) = bf;
    cell.w_o.value(0, 0) = wo; cell.u_o.value(0, 0) = uo; cell.b_o.value(0, 0) = bo;
    cell.w_g.value(0, 0) = wg; cell.u_g.value(0, 0) = ug; cell.b_g.value(0, 0) = bg;
  }
};

BiLmParams random_bilm(std::size_t v, std::size_t d, std::size_t h, std::uint64_t seed) {
  Rng rng(seed);
  return BiLmParams::make(v, d, h, rng);
}

Vocabulary vocab_of(std::vector<std::string> words) {
  std::vector<std::string> t{"<pad>", "<unk>"};
  t.insert(t.end(), words.begin(), words.end());
  return Vocabulary(t);
}

}  // namespace

TEST(LstmStep, ZeroWeights) {
  const LstmCellParams cell = LstmCellParams::zeros(3, 2);
  const LstmState s = lstm_step(cell, row({1, -2, 3}), RowVec::Zero(2), RowVec::Zero(2));
  EXPECT_TRUE(s.c.isZero());
  EXPECT_TRUE(s.h.isZero());
}

TEST(LstmStep, SaturatedGatesKeepCell) {
  LstmCellParams cell = LstmCellParams::zeros(1, 1);
  cell.b_i.value(0, 0) = cell.b_f.value(0, 0) = cell.b_o.value(0, 0) = 50.0;
  const LstmState s = lstm_step(cell, row({0.3}), row({0}), row({1}));
  EXPECT_NEAR(s.c(0), 1.0, 1e-12);
  EXPECT_NEAR(s.h(0), 0.7616, 1e-4);
}

TEST(LstmStep, ClosedGatesClearCell) {
  LstmCellParams cell = LstmCellParams::zeros(1, 1);
  cell.b_f.value(0, 0) = cell.b_i.value(0, 0) = -50.0;
  const LstmState s = lstm_step(cell, row({0.7}), row({0.2}), row({5}));
  EXPECT_NEAR(s.c(0), 0.0, 1e-12);
}

TEST(LstmStep, ShapeMismatch) {
  const LstmCellParams cell = LstmCellParams::zeros(2, 2);
  EXPECT_THROW(lstm_step(cell, row({1}), RowVec::Zero(2), RowVec::Zero(2)), ShapeError);
}

TEST(LstmStep, GradientMatchesFiniteDifferences) {
  Rng rng(3);
  LstmCellParams cell = LstmCellParams::make(3, 4, rng, "cell");
  const Mat x = Mat::NullaryExpr(1, 3, [&] { return rng.uniform(-1, 1); });
  const Mat h = Mat::NullaryExpr(1, 4, [&] { return rng.uniform(-1, 1); });
  const Mat c = Mat::NullaryExpr(1, 4, [&] { return rng.uniform(-1, 1); });
  const auto loss = [&] {
    Graph g;
    const LstmVars out = lstm_step(g, std::as_const(cell), g.constant(x), g.constant(h), g.constant(c));
    return ad::sum(ad::add(out.h, ad::scale(out.c, 0.3))).scalar();
  };
  for (Parameter* p : cell.parameters()) p->zero_grad();
  Graph g;
  const LstmVars out = lstm_step(g, cell, g.constant(x), g.constant(h), g.constant(c));
  g.backward(ad::sum(ad::add(out.h, ad::scale(out.c, 0.3))));
  for (Parameter* p : cell.parameters()) {
    EXPECT_LT(oracle::max_relative_error(p->grad, oracle::numeric_gradient(p->value, loss)), 1e-4) << p->name;
  }
}

TEST(RunBilm, ZeroValidLengthIsAllZero) {
  const BiLmParams p = random_bilm(6, 4, 4, 1);
  const std::vector<TokenId> ids{0, 0, 0};
  const ContextualLayers l = run_bilm(p, ids, 0);
  ASSERT_EQ(l.num_layers(), 2u);
  for (const Mat& m : l.layers) EXPECT_TRUE(m.isZero());
}

TEST(RunBilm, SingleTokenZeroCells) {
  BiLmParams p = random_bilm(6, 3, 3, 2);
  p.forward = LstmCellParams::zeros(3, 3);
  p.backward = LstmCellParams::zeros(3, 3);
  const std::vector<TokenId> ids{4, 0};
  const ContextualLayers l = run_bilm(p, ids, 1);
  EXPECT_TRUE(l.layers[1].isZero());
  EXPECT_EQ(l.layers[0].row(0).head(3), p.embedding.value.row(4));
  EXPECT_EQ(l.layers[0].row(0).tail(3), p.embedding.value.row(4));
  EXPECT_TRUE(l.layers[0].row(1).isZero());
}

TEST(RunBilm, NarrowEmbeddingIsZeroPadded) {
  const BiLmParams p = random_bilm(6, 3, 4, 2);
  const std::vector<TokenId> ids{2, 3};
  const ContextualLayers l = run_bilm(p, ids, 2);
  EXPECT_EQ(l.dim(), 8u);
  EXPECT_EQ(l.layers[0].row(1).head(3), p.embedding.value.row(3));
  EXPECT_TRUE(l.layers[0].row(1).tail(5).isZero());
}

TEST(RunBilm, MatchesHandTrace) {
  BiLmParams p = random_bilm(5, 1, 1, 3);
  p.embedding.value.col(0) << 0, 0, 0.5, -1.0, 2.0;
  const ScalarLstm fwd{0.3, -0.2, 0.1, 0.5, 0.4, 0.2, -0.6, 0.1, 0.0, 0.8, -0.5, 0.05};
  const ScalarLstm bwd{-0.4, 0.3, 0.0, 0.2, -0.1, 0.6, 0.7, 0.2, -0.3, -0.9, 0.4, 0.1};
  fwd.load(p.forward);
  bwd.load(p.backward);
  const std::vector<TokenId> ids{2, 3, 4};
  const ContextualLayers l = run_bilm(p, ids, 3);
  const double x[3] = {0.5, -1.0, 2.0};
  double h = 0, c = 0;
  for (int t = 0; t < 3; ++t) {
    std::tie(h, c) = fwd.step(x[t], h, c);
    EXPECT_NEAR(l.layers[1](t, 0), h, 1e-12);
  }
  h = c = 0;
  for (int t = 2; t >= 0; --t) {
    std::tie(h, c) = bwd.step(x[t], h, c);
    EXPECT_NEAR(l.layers[1](t, 1), h, 1e-12);
  }
}

TEST(RunBilm, IdOutOfRange) {
  const BiLmParams p = random_bilm(5, 2, 2, 1);
  const std::vector<TokenId> ids{2, 9};
  EXPECT_THROW(run_bilm(p, ids, 2), InputError);
}

TEST(RunBilm, AppendedPaddingChangesNothing) {
  const BiLmParams p = random_bilm(8, 4, 4, 5);
  const std::vector<TokenId> short_ids{2, 5, 7};
  const std::vector<TokenId> long_ids{2, 5, 7, 0, 0, 0};
  const ContextualLayers a = run_bilm(p, short_ids, 3);
  const ContextualLayers b = run_bilm(p, long_ids, 3);
  for (std::size_t l = 0; l < 2; ++l) {
    EXPECT_EQ(a.layers[l], b.layers[l].topRows(3));
    EXPECT_TRUE(b.layers[l].bottomRows(3).isZero());
  }
}

TEST(RunBilm, ReversalSwapsDirections) {
  Rng rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    BiLmParams p = random_bilm(7, 3, 3, 100 + static_cast<std::uint64_t>(trial));
    const auto fwd = p.forward.parameters();
    const auto bwd = p.backward.parameters();
    for (std::size_t i = 0; i < fwd.size(); ++i) bwd[i]->value = fwd[i]->value;
    const std::size_t n = 2 + rng.below(4);
    std::vector<TokenId> ids(n);
    for (auto& id : ids) id = static_cast<TokenId>(2 + rng.below(5));
    const std::vector<TokenId> rev(ids.rbegin(), ids.rend());
    const ContextualLayers a = run_bilm(p, ids, n);
    const ContextualLayers b = run_bilm(p, rev, n);
    for (std::size_t t = 0; t < n; ++t) {
      const auto m = static_cast<Eigen::Index>(n - 1 - t);
      const auto ti = static_cast<Eigen::Index>(t);
      EXPECT_LT((a.layers[1].row(ti).head(3) - b.layers[1].row(m).tail(3)).cwiseAbs().maxCoeff(), 1e-12);
      EXPECT_LT((a.layers[1].row(ti).tail(3) - b.layers[1].row(m).head(3)).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
}

TEST(BilmLoss, GradientMatchesFiniteDifferences) {
  BiLmParams p = random_bilm(6, 3, 4, 8);
  const std::vector<TokenId> ids{2, 4, 3, 5, 0};
  const auto loss = [&] {
    Graph g;
    return bilm_loss(g, std::as_const(p), ids, 4).scalar();
  };
  for (Parameter* q : p.parameters()) q->zero_grad();
  Graph g;
  g.backward(bilm_loss(g, p, ids, 4));
  for (Parameter* q : p.parameters()) {
    EXPECT_LT(oracle::max_relative_error(q->grad, oracle::numeric_gradient(q->value, loss)), 1e-4) << q->name;
  }
}

TEST(BilmLoss, GraphAndNumericAgree) {
  const BiLmParams p = random_bilm(6, 3, 4, 8);
  const std::vector<TokenId> ids{2, 4, 3, 5};
  const BiLmLoss parts = bilm_loss(p, ids, 4);
  Graph g;
  EXPECT_NEAR(bilm_loss(g, p, ids, 4).scalar(), parts.forward_nll + parts.backward_nll, 1e-12);
  EXPECT_EQ(parts.forward_count, 3u);
  EXPECT_EQ(parts.backward_count, 3u);
}

TEST(TrainBilm, LearnsDeterministicAlternation) {
  const Vocabulary v = vocab_of({"a", "b"});
  std::vector<Document> docs;
  for (int i = 0; i < 16; ++i) docs.push_back({{"a", "b", "a", "b", "a", "b", "a", "b"}, 0, 0});
  BiLmTrainConfig c;
  c.embed_dim = 8;
  c.hidden_dim = 8;
  c.learning_rate = 0.05;
  c.epochs = 60;
  c.batch_size = 4;
  const BiLmTrainResult r = train_bilm(docs, v, c);
  const std::vector<TokenId> ids{2, 3, 2, 3};
  const Mat logp = bilm_next_token_log_probs(r.params, ids, 4);
  // Rows 0 and 2 predict the token after "a".
  EXPECT_LT(-logp(0, 3), 0.1);
  EXPECT_LT(-logp(2, 3), 0.1);
  EXPECT_LT(r.final_perplexity, r.initial_perplexity);
}

TEST(TrainBilm, ZeroEpochsKeepsInitialisation) {
  const Vocabulary v = vocab_of({"a", "b", "c"});
  std::vector<Document> docs{{{"a", "b", "c"}, 0, 0}};
  BiLmTrainConfig c;
  c.embed_dim = 4;
  c.hidden_dim = 4;
  c.epochs = 0;
  c.seed = 21;
  const BiLmTrainResult r = train_bilm(docs, v, c);
  Rng rng(21);
  BiLmParams expected = BiLmParams::make(v.size(), 4, 4, rng);
  const auto got = r.params.parameters();
  const auto want = expected.parameters();
  for (std::size_t i = 0; i < got.size(); ++i) {
    Mat w = want[i]->value;
    round_to_float32(w);
    EXPECT_EQ(got[i]->value, w) << got[i]->name;
  }
}

TEST(TrainBilm, PerplexityDropsOnToyCorpus) {
  const std::vector<std::string> words{"the", "cat", "sat", "on", "mat", "dog", "ran"};
  const Vocabulary v = vocab_of(words);
  Rng rng(4);
  std::vector<Document> docs;
  std::size_t tokens = 0;
  while (tokens < 500) {
    std::vector<std::string> t{"the"};
    t.push_back(rng.below(2) ? "cat" : "dog");
    t.push_back(rng.below(2) ? "sat" : "ran");
    t.insert(t.end(), {"on", "the", "mat"});
    tokens += t.size();
    docs.push_back({t, 0, 0});
  }
  BiLmTrainConfig c;
  c.embed_dim = 8;
  c.hidden_dim = 8;
  c.epochs = 3;
  const BiLmTrainResult r = train_bilm(docs, v, c);
  EXPECT_LT(r.final_perplexity, r.initial_perplexity);
}

TEST(TrainBilm, EmptyCorpus) { EXPECT_THROW(train_bilm({}, vocab_of({"a"}), {}), InputError); }

TEST(MixLayers, Examples) {
  ContextualLayers one;
  one.layers = {(Mat(2, 2) << 1, 2, 3, 4).finished()};
  one.valid_length = 2;
  LayerMixWeights w1 = LayerMixWeights::make(1);
  EXPECT_EQ(mix_layers(one, w1), one.layers[0]);

  ContextualLayers two;
  two.layers = {(Mat(1, 1) << 4).finished(), (Mat(1, 1) << 0).finished()};
  two.valid_length = 1;
  LayerMixWeights w2 = LayerMixWeights::make(2);
  w2.gamma.value(0, 0) = 2.0;
  two.layers[1](0, 0) = 6.0;
  EXPECT_NEAR(mix_layers(two, w2)(0, 0), 10.0, 1e-12);

  two.layers[1](0, 0) = 0.0;
  w2.gamma.value(0, 0) = 1.0;
  w2.s_raw.value << std::log(3.0), 0.0;
  EXPECT_NEAR(mix_layers(two, w2)(0, 0), 3.0, 1e-12);
}

TEST(MixLayers, LengthMismatch) {
  ContextualLayers two;
  two.layers = {Mat::Zero(1, 1), Mat::Zero(1, 1)};
  EXPECT_THROW(mix_layers(two, LayerMixWeights::make(3)), ShapeError);
}

TEST(MixLayers, SoftmaxSumsToOneAndIsShiftInvariant) {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    LayerMixWeights w = LayerMixWeights::make(3);
    w.s_raw.value = Mat::NullaryExpr(1, 3, [&] { return rng.uniform(-4, 4); });
    w.gamma.value(0, 0) = rng.uniform(0.5, 2);
    EXPECT_NEAR(w.softmax().sum(), 1.0, 1e-9);
    ContextualLayers l;
    for (int i = 0; i < 3; ++i) l.layers.push_back(Mat::NullaryExpr(4, 5, [&] { return rng.uniform(-1, 1); }));
    l.valid_length = 4;
    const Mat before = mix_layers(l, w);
    w.s_raw.value.array() += rng.uniform(-10, 10);
    EXPECT_LT((mix_layers(l, w) - before).cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(MixLayers, PaddingStaysZero) {
  ContextualLayers l;
  l.layers = {(Mat(3, 2) << 1, 2, 3, 4, 0, 0).finished(), (Mat(3, 2) << 5, 6, 7, 8, 0, 0).finished()};
  l.valid_length = 2;
  EXPECT_TRUE(mix_layers(l, LayerMixWeights::make(2)).row(2).isZero());
}

TEST(Precomputed, DirectParse) {
  std::string bytes = "CTX1";
  const auto u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  const auto f32 = [&](float f) { u32(std::bit_cast<std::uint32_t>(f)); };
  u32(1);
  u32(1);
  u32(2);
  u32(2);
  for (float f : {1.f, 2.f, 3.f, 4.f}) f32(f);
  const auto docs = decode_precomputed(bytes);
  ASSERT_EQ(docs.size(), 1u);
  EXPECT_EQ(docs[0].layers[0], (Mat(2, 2) << 1, 2, 3, 4).finished());
  EXPECT_EQ(docs[0].valid_length, 2u);

  bytes.resize(bytes.size() - 8);
  bytes[16] = 3;
  try {
    decode_precomputed(bytes);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos) << e.what();
  }
}

TEST(Precomputed, BadMagicAndTrailingBytes) {
  EXPECT_THROW(decode_precomputed("CTX2\0\0\0\0"), FormatError);
  std::string ok = encode_precomputed({});
  ok.push_back('x');
  EXPECT_THROW(decode_precomputed(ok), FormatError);
}

TEST(Precomputed, FileRoundTripIsBitExact) {
  const BiLmParams p = random_bilm(9, 4, 4, 3);
  std::vector<ContextualLayers> docs;
  const std::vector<TokenId> a{2, 3, 4, 0}, b{8, 7, 0, 0};
  docs.push_back(run_bilm(p, a, 3));
  docs.push_back(run_bilm(p, b, 2));
  for (auto& d : docs) {
    for (Mat& m : d.layers) round_to_float32(m);
  }
  const auto path = std::filesystem::temp_directory_path() / "trolldet_ctx_rt.bin";
  save_precomputed(path, docs);
  const auto back = load_precomputed(path);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t d = 0; d < 2; ++d) {
    for (std::size_t l = 0; l < 2; ++l) EXPECT_EQ(back[d].layers[l], docs[d].layers[l]);
  }
  std::filesystem::remove(path);
}
