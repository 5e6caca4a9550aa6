#include <trolldet/context_embed.hpp>

#include "binary_io.hpp"

#include <cmath>

namespace trolldet {
namespace {

Parameter named_zeros(std::string name, std::size_t rows, std::size_t cols) {
  return Parameter(std::move(name), Mat::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)));
}

Parameter named_dense(std::string name, std::size_t rows, std::size_t cols, Rng& rng) {
  return Parameter(std::move(name), glorot(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols), rng));
}

template <typename Self, typename Out>
void collect_lstm(Self& self, std::vector<Out>& out) {
  for (auto* p : {&self.w_i, &self.u_i, &self.b_i, &self.w_f, &self.u_f, &self.b_f, &self.w_o, &self.u_o, &self.b_o,
                  &self.w_g, &self.u_g, &self.b_g}) {
    out.push_back(p);
  }
}

template <typename Self, typename Out>
void collect_bilm(Self& self, std::vector<Out>& out) {
  out.push_back(&self.embedding);
  collect_lstm(self.forward, out);
  collect_lstm(self.backward, out);
  out.push_back(&self.proj_w);
  out.push_back(&self.proj_b);
}

// Input-side projections of every valid position for one cell.
struct GateInputs {
  Var i, f, o, g;
};

template <typename P>
GateInputs project_inputs(Graph& g, P& cell, Var x) {
  return {ad::linear(x, g.param(cell.w_i), g.param(cell.b_i)), ad::linear(x, g.param(cell.w_f), g.param(cell.b_f)),
          ad::linear(x, g.param(cell.w_o), g.param(cell.b_o)), ad::linear(x, g.param(cell.w_g), g.param(cell.b_g))};
}

template <typename P>
LstmVars recurrence(Graph& g, P& cell, Var xi, Var xf, Var xo, Var xg, Var h, Var c) {
  Var i = ad::sigmoid(ad::add(xi, ad::linear(h, g.param(cell.u_i))));
  Var f = ad::sigmoid(ad::add(xf, ad::linear(h, g.param(cell.u_f))));
  Var o = ad::sigmoid(ad::add(xo, ad::linear(h, g.param(cell.u_o))));
  Var cand = ad::tanh(ad::add(xg, ad::linear(h, g.param(cell.u_g))));
  Var c_next = ad::add(ad::mul(f, c), ad::mul(i, cand));
  Var h_next = ad::mul(o, ad::tanh(c_next));
  return {h_next, c_next};
}

Var zero_rows(Graph& g, Eigen::Index rows, Eigen::Index cols) { return g.constant(Mat::Zero(rows, cols)); }

// Appends zero rows so the result has total_rows rows.
Var pad_rows(Graph& g, Var x, Eigen::Index total_rows) {
  if (x.rows() == total_rows) return x;
  const Var parts[2] = {x, zero_rows(g, total_rows - x.rows(), x.cols())};
  return ad::concat_rows(parts);
}

}  // namespace

// --- LSTM --------------------------------------------------------------------

LstmCellParams LstmCellParams::make(std::size_t input_dim, std::size_t hidden_dim, Rng& rng,
                                    const std::string& prefix) {
  if (input_dim == 0 || hidden_dim == 0) throw InputError("lstm: dims must be positive");
  LstmCellParams c;
  c.input_dim = input_dim;
  c.hidden_dim = hidden_dim;
  c.w_i = named_dense(prefix + ".w_i", hidden_dim, input_dim, rng);
  c.u_i = named_dense(prefix + ".u_i", hidden_dim, hidden_dim, rng);
  c.b_i = named_zeros(prefix + ".b_i", 1, hidden_dim);
  c.w_f = named_dense(prefix + ".w_f", hidden_dim, input_dim, rng);
  c.u_f = named_dense(prefix + ".u_f", hidden_dim, hidden_dim, rng);
  // Forget bias starts at 1 so early training keeps the cell state.
  c.b_f = Parameter(prefix + ".b_f", Mat::Ones(1, static_cast<Eigen::Index>(hidden_dim)));
  c.w_o = named_dense(prefix + ".w_o", hidden_dim, input_dim, rng);
  c.u_o = named_dense(prefix + ".u_o", hidden_dim, hidden_dim, rng);
  c.b_o = named_zeros(prefix + ".b_o", 1, hidden_dim);
  c.w_g = named_dense(prefix + ".w_g", hidden_dim, input_dim, rng);
  c.u_g = named_dense(prefix + ".u_g", hidden_dim, hidden_dim, rng);
  c.b_g = named_zeros(prefix + ".b_g", 1, hidden_dim);
  return c;
}

LstmCellParams LstmCellParams::zeros(std::size_t input_dim, std::size_t hidden_dim) {
  Rng rng(0);
  LstmCellParams c = make(input_dim, hidden_dim, rng, "lstm");
  for (Parameter* p : c.parameters()) p->value.setZero();
  return c;
}

std::vector<Parameter*> LstmCellParams::parameters() {
  std::vector<Parameter*> out;
  collect_lstm(*this, out);
  return out;
}

std::vector<const Parameter*> LstmCellParams::parameters() const {
  std::vector<const Parameter*> out;
  collect_lstm(*this, out);
  return out;
}

template <typename P>
LstmVars lstm_step(Graph& g, P& cell, Var x, Var h, Var c) {
  if (x.rows() != 1 || h.rows() != 1 || c.rows() != 1 || static_cast<std::size_t>(x.cols()) != cell.input_dim ||
      static_cast<std::size_t>(h.cols()) != cell.hidden_dim || static_cast<std::size_t>(c.cols()) != cell.hidden_dim) {
    throw ShapeError("lstm_step: x, h or c does not match the cell");
  }
  const GateInputs in = project_inputs(g, cell, x);
  return recurrence(g, cell, in.i, in.f, in.o, in.g, h, c);
}

template LstmVars lstm_step(Graph&, LstmCellParams&, Var, Var, Var);
template LstmVars lstm_step(Graph&, const LstmCellParams&, Var, Var, Var);

LstmState lstm_step(const LstmCellParams& cell, const RowVec& x, const RowVec& h, const RowVec& c) {
  Graph g;
  const LstmVars out = lstm_step(g, cell, g.constant(x), g.constant(h), g.constant(c));
  return {out.h.value().row(0), out.c.value().row(0)};
}

// --- bidirectional language model ----------------------------------------------

BiLmParams BiLmParams::make(std::size_t vocab_size, std::size_t embed_dim, std::size_t hidden_dim, Rng& rng) {
  if (vocab_size < 3 || embed_dim == 0 || hidden_dim == 0) throw InputError("bilm: invalid dimensions");
  if (embed_dim > 2 * hidden_dim) throw InputError("bilm: embed_dim must not exceed 2 * hidden_dim");
  BiLmParams p;
  p.vocab_size = vocab_size;
  p.embed_dim = embed_dim;
  p.hidden_dim = hidden_dim;
  Mat emb(static_cast<Eigen::Index>(vocab_size), static_cast<Eigen::Index>(embed_dim));
  fill_uniform(emb, rng, -0.5, 0.5);
  emb.row(Vocabulary::kPad).setZero();
  p.embedding = Parameter("bilm.embedding", std::move(emb));
  p.forward = LstmCellParams::make(embed_dim, hidden_dim, rng, "bilm.fwd");
  p.backward = LstmCellParams::make(embed_dim, hidden_dim, rng, "bilm.bwd");
  p.proj_w = named_dense("bilm.proj_w", vocab_size, hidden_dim, rng);
  p.proj_b = named_zeros("bilm.proj_b", 1, vocab_size);
  return p;
}

std::vector<Parameter*> BiLmParams::parameters() {
  std::vector<Parameter*> out;
  collect_bilm(*this, out);
  return out;
}

std::vector<const Parameter*> BiLmParams::parameters() const {
  std::vector<const Parameter*> out;
  collect_bilm(*this, out);
  return out;
}

void BiLmParams::set_trainable(bool trainable) {
  for (Parameter* p : parameters()) p->trainable = trainable;
}

template <typename P>
BiLmStates bilm_states(Graph& g, P& params, std::span<const TokenId> ids, std::size_t valid_length) {
  if (valid_length > ids.size()) throw InputError("run_bilm: valid length exceeds sequence length");
  for (std::size_t t = 0; t < valid_length; ++t) {
    if (ids[t] >= params.vocab_size) {
      throw InputError("run_bilm: id " + std::to_string(ids[t]) + " out of range for vocabulary of " +
                       std::to_string(params.vocab_size));
    }
  }
  BiLmStates states;
  if (valid_length == 0) return states;
  const auto n = static_cast<Eigen::Index>(valid_length);
  states.embeddings = ad::gather_rows(g, params.embedding, ids.first(valid_length), n);
  const auto hdim = static_cast<Eigen::Index>(params.hidden_dim);

  const GateInputs fwd = project_inputs(g, params.forward, states.embeddings);
  Var h = zero_rows(g, 1, hdim);
  Var c = zero_rows(g, 1, hdim);
  for (Eigen::Index t = 0; t < n; ++t) {
    const LstmVars s = recurrence(g, params.forward, ad::slice_rows(fwd.i, t, 1), ad::slice_rows(fwd.f, t, 1),
                                  ad::slice_rows(fwd.o, t, 1), ad::slice_rows(fwd.g, t, 1), h, c);
    h = s.h;
    c = s.c;
    states.forward.push_back(h);
  }

  const GateInputs bwd = project_inputs(g, params.backward, states.embeddings);
  states.backward.resize(valid_length);
  h = zero_rows(g, 1, hdim);
  c = zero_rows(g, 1, hdim);
  for (Eigen::Index t = n - 1; t >= 0; --t) {
    const LstmVars s = recurrence(g, params.backward, ad::slice_rows(bwd.i, t, 1), ad::slice_rows(bwd.f, t, 1),
                                  ad::slice_rows(bwd.o, t, 1), ad::slice_rows(bwd.g, t, 1), h, c);
    h = s.h;
    c = s.c;
    states.backward[static_cast<std::size_t>(t)] = h;
  }
  return states;
}

template <typename P>
std::vector<Var> run_bilm(Graph& g, P& params, std::span<const TokenId> ids, std::size_t valid_length) {
  const BiLmStates states = bilm_states(g, params, ids, valid_length);
  const auto total = static_cast<Eigen::Index>(ids.size());
  const auto width = static_cast<Eigen::Index>(params.context_dim());
  if (valid_length == 0) return {zero_rows(g, total, width), zero_rows(g, total, width)};

  const auto n = static_cast<Eigen::Index>(valid_length);
  Var layer0;
  if (params.embed_dim == params.hidden_dim) {
    const Var halves[2] = {states.embeddings, states.embeddings};
    layer0 = ad::concat_cols(halves);
  } else if (static_cast<Eigen::Index>(params.embed_dim) == width) {
    layer0 = states.embeddings;
  } else {
    const Var parts[2] = {states.embeddings, zero_rows(g, n, width - static_cast<Eigen::Index>(params.embed_dim))};
    layer0 = ad::concat_cols(parts);
  }
  std::vector<Var> rows;
  rows.reserve(valid_length);
  for (std::size_t t = 0; t < valid_length; ++t) {
    const Var pair[2] = {states.forward[t], states.backward[t]};
    rows.push_back(ad::concat_cols(pair));
  }
  Var layer1 = ad::concat_rows(rows);
  return {pad_rows(g, layer0, total), pad_rows(g, layer1, total)};
}

template BiLmStates bilm_states(Graph&, BiLmParams&, std::span<const TokenId>, std::size_t);
template BiLmStates bilm_states(Graph&, const BiLmParams&, std::span<const TokenId>, std::size_t);
template std::vector<Var> run_bilm(Graph&, BiLmParams&, std::span<const TokenId>, std::size_t);
template std::vector<Var> run_bilm(Graph&, const BiLmParams&, std::span<const TokenId>, std::size_t);

ContextualLayers run_bilm(const BiLmParams& params, std::span<const TokenId> ids, std::size_t valid_length) {
  Graph g;
  const std::vector<Var> layers = run_bilm(g, params, ids, valid_length);
  ContextualLayers out;
  out.valid_length = valid_length;
  for (const Var& v : layers) out.layers.push_back(v.value());
  return out;
}

template <typename P>
Var bilm_loss(Graph& g, P& params, std::span<const TokenId> ids, std::size_t valid_length, BiLmLoss* parts) {
  if (valid_length < 2) {
    // Validates ids even when nothing is predicted.
    bilm_states(g, params, ids, valid_length);
    if (parts) *parts = BiLmLoss{};
    return g.constant(Mat::Zero(1, 1));
  }
  const BiLmStates states = bilm_states(g, params, ids, valid_length);
  const std::size_t n = valid_length;
  std::vector<Eigen::Index> next_targets, prev_targets;
  std::vector<Var> fwd_rows(states.forward.begin(), states.forward.begin() + static_cast<std::ptrdiff_t>(n - 1));
  std::vector<Var> bwd_rows(states.backward.begin() + 1, states.backward.end());
  for (std::size_t t = 0; t + 1 < n; ++t) {
    next_targets.push_back(static_cast<Eigen::Index>(ids[t + 1]));
    prev_targets.push_back(static_cast<Eigen::Index>(ids[t]));
  }
  Var proj_w = g.param(params.proj_w);
  Var proj_b = g.param(params.proj_b);
  Var fwd_loss = ad::softmax_cross_entropy(ad::linear(ad::concat_rows(fwd_rows), proj_w, proj_b), next_targets);
  Var bwd_loss = ad::softmax_cross_entropy(ad::linear(ad::concat_rows(bwd_rows), proj_w, proj_b), prev_targets);
  if (parts) {
    *parts = BiLmLoss{fwd_loss.scalar(), bwd_loss.scalar(), n - 1, n - 1};
  }
  return ad::add(fwd_loss, bwd_loss);
}

template Var bilm_loss(Graph&, BiLmParams&, std::span<const TokenId>, std::size_t, BiLmLoss*);
template Var bilm_loss(Graph&, const BiLmParams&, std::span<const TokenId>, std::size_t, BiLmLoss*);

BiLmLoss bilm_loss(const BiLmParams& params, std::span<const TokenId> ids, std::size_t valid_length) {
  Graph g;
  BiLmLoss parts;
  bilm_loss(g, params, ids, valid_length, &parts);
  return parts;
}

Mat bilm_next_token_log_probs(const BiLmParams& params, std::span<const TokenId> ids, std::size_t valid_length) {
  Graph g;
  const BiLmStates states = bilm_states(g, params, ids, valid_length);
  const auto n = static_cast<Eigen::Index>(valid_length);
  Mat out(std::max<Eigen::Index>(0, n - 1), static_cast<Eigen::Index>(params.vocab_size));
  for (Eigen::Index t = 0; t + 1 < n; ++t) {
    const RowVec logits = states.forward[static_cast<std::size_t>(t)].value().row(0) *
                              params.proj_w.value.transpose() +
                          params.proj_b.value.row(0);
    const double m = logits.maxCoeff();
    const double lse = m + std::log((logits.array() - m).exp().sum());
    out.row(t) = logits.array() - lse;
  }
  return out;
}

double bilm_perplexity(const BiLmParams& params, const std::vector<EncodedIds>& corpus) {
  double nll = 0.0;
  std::size_t count = 0;
  for (const EncodedIds& e : corpus) {
    const BiLmLoss l = bilm_loss(params, e.ids, e.valid_length);
    nll += l.forward_nll + l.backward_nll;
    count += l.forward_count + l.backward_count;
  }
  if (count == 0) throw InputError("bilm_perplexity: corpus has no predictable tokens");
  return std::exp(nll / static_cast<double>(count));
}

BiLmTrainResult train_bilm(const std::vector<Document>& docs, const Vocabulary& vocab,
                           const BiLmTrainConfig& config) {
  if (docs.empty()) throw InputError("train_bilm: corpus is empty");
  if (config.batch_size == 0 || config.max_len == 0) throw InputError("train_bilm: batch size and max_len must be positive");
  std::vector<EncodedIds> corpus;
  corpus.reserve(docs.size());
  for (const Document& d : docs) corpus.push_back(encode(d.tokens, vocab, config.max_len));

  Rng rng(config.seed);
  BiLmTrainResult result;
  result.params = BiLmParams::make(vocab.size(), config.embed_dim, config.hidden_dim, rng);
  for (Parameter* p : result.params.parameters()) round_to_float32(p->value);
  result.initial_perplexity = bilm_perplexity(result.params, corpus);

  OptimizerConfig opt_config;
  opt_config.kind = OptimizerKind::kAdam;
  opt_config.learning_rate = config.learning_rate;
  Optimizer optimizer(opt_config);
  std::vector<Parameter*> params = result.params.parameters();

  Graph g;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const std::vector<std::size_t> order = rng.permutation(corpus.size());
    double epoch_nll = 0.0;
    std::size_t epoch_tokens = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::size_t batch_tokens = 0;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t n = corpus[order[k]].valid_length;
        if (n >= 2) batch_tokens += 2 * (n - 1);
      }
      if (batch_tokens == 0) continue;
      for (Parameter* p : params) p->zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        const EncodedIds& e = corpus[order[k]];
        if (e.valid_length < 2) continue;
        g.clear();
        Var loss = bilm_loss(g, result.params, e.ids, e.valid_length);
        if (!std::isfinite(loss.scalar())) {
          throw DivergenceError("bilm: non-finite loss in epoch " + std::to_string(epoch));
        }
        epoch_nll += loss.scalar();
        g.backward(loss, 1.0 / static_cast<double>(batch_tokens));
      }
      epoch_tokens += batch_tokens;
      optimizer.step(params);
      for (Parameter* p : params) {
        if (!p->value.allFinite()) {
          throw DivergenceError("bilm: parameter " + p->name + " became non-finite in epoch " + std::to_string(epoch));
        }
      }
    }
    result.epoch_loss.push_back(epoch_tokens ? epoch_nll / static_cast<double>(epoch_tokens) : 0.0);
  }
  for (Parameter* p : params) {
    round_to_float32(p->value);
    p->grad.resize(0, 0);
  }
  result.final_perplexity = bilm_perplexity(result.params, corpus);
  return result;
}

// --- layer mixing ----------------------------------------------------------------

LayerMixWeights LayerMixWeights::make(std::size_t num_layers) {
  if (num_layers == 0) throw InputError("layer mixer needs at least one layer");
  LayerMixWeights w;
  w.s_raw = Parameter("mixer.s_raw", Mat::Zero(1, static_cast<Eigen::Index>(num_layers)));
  w.gamma = Parameter("mixer.gamma", Mat::Ones(1, 1));
  return w;
}

RowVec LayerMixWeights::softmax() const {
  const RowVec& s = s_raw.value.row(0);
  const double m = s.maxCoeff();
  RowVec e = (s.array() - m).exp();
  return e / e.sum();
}

template <typename P>
Var mix_layers(Graph& g, P& weights, std::span<const Var> layers) {
  if (layers.size() != weights.num_layers()) {
    throw ShapeError("mix_layers: " + std::to_string(layers.size()) + " layers but " +
                     std::to_string(weights.num_layers()) + " weights");
  }
  Var probs = ad::masked_softmax_rows(g.param(weights.s_raw), static_cast<Eigen::Index>(layers.size()));
  Var total;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    Var term = ad::scalar_mul(ad::slice_cols(probs, static_cast<Eigen::Index>(l), 1), layers[l]);
    total = l == 0 ? term : ad::add(total, term);
  }
  return ad::scalar_mul(g.param(weights.gamma), total);
}

template Var mix_layers(Graph&, LayerMixWeights&, std::span<const Var>);
template Var mix_layers(Graph&, const LayerMixWeights&, std::span<const Var>);

EmbeddedSequence mix_layers(const ContextualLayers& layers, const LayerMixWeights& weights) {
  Graph g;
  std::vector<Var> vars;
  for (const Mat& m : layers.layers) vars.push_back(g.constant(m));
  return mix_layers(g, weights, vars).value();
}

// --- precomputed container ---------------------------------------------------------

namespace {
constexpr std::string_view kCtxMagic = "CTX1";
}

std::string encode_precomputed(const std::vector<ContextualLayers>& docs) {
  const std::size_t num_layers = docs.empty() ? 0 : docs.front().num_layers();
  const std::size_t dim = docs.empty() ? 0 : docs.front().dim();
  detail::ByteWriter w;
  w.bytes(kCtxMagic);
  w.u32(static_cast<std::uint32_t>(docs.size()));
  w.u32(static_cast<std::uint32_t>(num_layers));
  w.u32(static_cast<std::uint32_t>(dim));
  for (std::size_t d = 0; d < docs.size(); ++d) {
    const ContextualLayers& doc = docs[d];
    if (doc.num_layers() != num_layers || (doc.length() > 0 && doc.dim() != dim)) {
      throw ShapeError("precomputed document " + std::to_string(d) + " has a different layer count or width");
    }
    const std::size_t t_len = doc.length();
    w.u32(static_cast<std::uint32_t>(t_len));
    for (const Mat& layer : doc.layers) {
      if (static_cast<std::size_t>(layer.rows()) != t_len) {
        throw ShapeError("precomputed document " + std::to_string(d) + " has ragged layers");
      }
      for (Eigen::Index t = 0; t < layer.rows(); ++t) {
        for (Eigen::Index j = 0; j < layer.cols(); ++j) w.f32(static_cast<float>(layer(t, j)));
      }
    }
  }
  return w.data();
}

void save_precomputed(const std::filesystem::path& path, const std::vector<ContextualLayers>& docs) {
  detail::write_file(path.string(), encode_precomputed(docs));
}

std::vector<ContextualLayers> decode_precomputed(std::string_view bytes) {
  detail::ByteReader r(bytes, "contextual embedding file");
  if (r.bytes(4) != kCtxMagic) throw FormatError("not a contextual embedding file (bad magic)");
  const std::uint32_t n_docs = r.u32();
  const std::uint32_t num_layers = r.u32();
  const std::uint32_t dim = r.u32();
  if (n_docs > 0 && (num_layers == 0 || dim == 0)) throw FormatError("contextual embedding header declares zero L or D");
  std::vector<ContextualLayers> docs;
  docs.reserve(n_docs);
  for (std::uint32_t d = 0; d < n_docs; ++d) {
    const std::uint32_t t_len = r.u32();
    r.need(static_cast<std::size_t>(num_layers) * t_len * dim * 4);
    ContextualLayers doc;
    doc.valid_length = t_len;
    for (std::uint32_t l = 0; l < num_layers; ++l) {
      Mat layer(static_cast<Eigen::Index>(t_len), static_cast<Eigen::Index>(dim));
      for (Eigen::Index t = 0; t < layer.rows(); ++t) {
        for (Eigen::Index j = 0; j < layer.cols(); ++j) layer(t, j) = static_cast<double>(r.f32());
      }
      doc.layers.push_back(std::move(layer));
    }
    docs.push_back(std::move(doc));
  }
  if (!r.at_end()) {
    throw FormatError("contextual embedding file has " + std::to_string(r.remaining()) +
                      " trailing bytes beyond the declared shape");
  }
  return docs;
}

std::vector<ContextualLayers> load_precomputed(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file(path.string());
  return decode_precomputed(bytes);
}

}  // namespace trolldet
