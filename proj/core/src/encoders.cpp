#include <trolldet/encoders.hpp>

#include <cmath>
#include <string>

namespace trolldet {
namespace {

Parameter zeros(std::string name, std::size_t rows, std::size_t cols) {
  return Parameter(std::move(name), Mat::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)));
}

Parameter ones(std::string name, std::size_t cols) {
  return Parameter(std::move(name), Mat::Ones(1, static_cast<Eigen::Index>(cols)));
}

Parameter dense(std::string name, std::size_t rows, std::size_t cols, Rng& rng) {
  return Parameter(std::move(name), glorot(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols), rng));
}

template <typename Self, typename Out>
void collect_gru(Self& self, std::vector<Out>& out) {
  for (auto* p : {&self.w_z, &self.u_z, &self.b_z, &self.w_r, &self.u_r, &self.b_r, &self.w_h, &self.u_h, &self.b_h}) {
    out.push_back(p);
  }
}

template <typename Self, typename Out>
void collect_transformer(Self& self, std::vector<Out>& out) {
  if (self.has_projection) {
    out.push_back(&self.proj_w);
    out.push_back(&self.proj_b);
  }
  out.push_back(&self.positional);
  for (auto& layer : self.layers) {
    for (auto* p : {&layer.w_q, &layer.w_k, &layer.w_v, &layer.w_o, &layer.ff1_w, &layer.ff1_b, &layer.ff2_w,
                    &layer.ff2_b, &layer.ln1_gain, &layer.ln1_bias, &layer.ln2_gain, &layer.ln2_bias}) {
      out.push_back(p);
    }
  }
}

void require_valid(std::size_t valid_length, Eigen::Index rows, const char* who) {
  if (valid_length == 0) throw InputError(std::string(who) + ": valid_length must be >= 1");
  if (static_cast<Eigen::Index>(valid_length) > rows) {
    throw InputError(std::string(who) + ": valid_length exceeds sequence length");
  }
}

}  // namespace

// --- CNN ---------------------------------------------------------------------

CnnEncoderParams CnnEncoderParams::make(std::size_t input_dim, const std::vector<std::size_t>& windows,
                                        std::size_t channels, Pooling pooling, Rng& rng) {
  if (input_dim == 0 || channels == 0 || windows.empty()) throw InputError("cnn: dims and windows must be non-empty");
  CnnEncoderParams p;
  p.input_dim = input_dim;
  p.pooling = pooling;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    if (windows[i] == 0) throw InputError("cnn: window sizes must be >= 1");
    const std::string prefix = "cnn.bank" + std::to_string(i);
    CnnFilterBank bank;
    bank.window = windows[i];
    bank.kernel = dense(prefix + ".kernel", channels, windows[i] * input_dim, rng);
    bank.bias = zeros(prefix + ".bias", 1, channels);
    p.banks.push_back(std::move(bank));
  }
  return p;
}

std::size_t CnnEncoderParams::output_dim() const {
  std::size_t total = 0;
  for (const auto& b : banks) total += b.channels();
  return total;
}

std::vector<Parameter*> CnnEncoderParams::parameters() {
  std::vector<Parameter*> out;
  for (auto& b : banks) {
    out.push_back(&b.kernel);
    out.push_back(&b.bias);
  }
  return out;
}

std::vector<const Parameter*> CnnEncoderParams::parameters() const {
  std::vector<const Parameter*> out;
  for (const auto& b : banks) {
    out.push_back(&b.kernel);
    out.push_back(&b.bias);
  }
  return out;
}

template <typename P>
Var cnn_encode(Graph& g, P& params, Var seq, std::size_t valid_length) {
  require_valid(valid_length, seq.rows(), "cnn_encode");
  if (static_cast<std::size_t>(seq.cols()) != params.input_dim) throw ShapeError("cnn_encode: input width mismatch");
  std::vector<Var> pooled;
  pooled.reserve(params.banks.size());
  for (auto& bank : params.banks) {
    Var windows = ad::unfold(seq, static_cast<Eigen::Index>(bank.window), static_cast<Eigen::Index>(valid_length));
    Var act = ad::relu(ad::linear(windows, g.param(bank.kernel), g.param(bank.bias)));
    pooled.push_back(params.pooling == Pooling::kMax ? ad::max_rows(act, act.rows()) : ad::mean_rows(act, act.rows()));
  }
  return pooled.size() == 1 ? pooled.front() : ad::concat_cols(pooled);
}

// --- GRU ---------------------------------------------------------------------

GruCellParams GruCellParams::make(std::size_t input_dim, std::size_t hidden_dim, Rng& rng) {
  if (input_dim == 0 || hidden_dim == 0) throw InputError("gru: dims must be positive");
  GruCellParams c;
  c.input_dim = input_dim;
  c.hidden_dim = hidden_dim;
  c.w_z = dense("gru.w_z", hidden_dim, input_dim, rng);
  c.u_z = dense("gru.u_z", hidden_dim, hidden_dim, rng);
  c.b_z = trolldet::zeros("gru.b_z", 1, hidden_dim);
  c.w_r = dense("gru.w_r", hidden_dim, input_dim, rng);
  c.u_r = dense("gru.u_r", hidden_dim, hidden_dim, rng);
  c.b_r = trolldet::zeros("gru.b_r", 1, hidden_dim);
  c.w_h = dense("gru.w_h", hidden_dim, input_dim, rng);
  c.u_h = dense("gru.u_h", hidden_dim, hidden_dim, rng);
  c.b_h = trolldet::zeros("gru.b_h", 1, hidden_dim);
  return c;
}

GruCellParams GruCellParams::zeros(std::size_t input_dim, std::size_t hidden_dim) {
  Rng rng(0);
  GruCellParams c = make(input_dim, hidden_dim, rng);
  for (Parameter* p : c.parameters()) p->value.setZero();
  return c;
}

std::vector<Parameter*> GruCellParams::parameters() {
  std::vector<Parameter*> out;
  collect_gru(*this, out);
  return out;
}

std::vector<const Parameter*> GruCellParams::parameters() const {
  std::vector<const Parameter*> out;
  collect_gru(*this, out);
  return out;
}

namespace {

// Combines precomputed input projections with the recurrent terms.
template <typename P>
Var gru_recurrence(Graph& g, P& cell, Var xz, Var xr, Var xh, Var h) {
  Var z = ad::sigmoid(ad::add(xz, ad::linear(h, g.param(cell.u_z))));
  Var r = ad::sigmoid(ad::add(xr, ad::linear(h, g.param(cell.u_r))));
  Var candidate = ad::tanh(ad::add(xh, ad::linear(ad::mul(r, h), g.param(cell.u_h))));
  return ad::add(ad::mul(ad::one_minus(z), h), ad::mul(z, candidate));
}

}  // namespace

template <typename P>
Var gru_step(Graph& g, P& cell, Var x, Var h) {
  if (static_cast<std::size_t>(x.cols()) != cell.input_dim || static_cast<std::size_t>(h.cols()) != cell.hidden_dim ||
      x.rows() != 1 || h.rows() != 1) {
    throw ShapeError("gru_step: x or h does not match the cell");
  }
  Var xz = ad::linear(x, g.param(cell.w_z), g.param(cell.b_z));
  Var xr = ad::linear(x, g.param(cell.w_r), g.param(cell.b_r));
  Var xh = ad::linear(x, g.param(cell.w_h), g.param(cell.b_h));
  return gru_recurrence(g, cell, xz, xr, xh, h);
}

template <typename P>
Var gru_encode(Graph& g, P& cell, Var seq, std::size_t valid_length) {
  require_valid(valid_length, seq.rows(), "gru_encode");
  if (static_cast<std::size_t>(seq.cols()) != cell.input_dim) throw ShapeError("gru_encode: input width mismatch");
  const auto n = static_cast<Eigen::Index>(valid_length);
  Var valid = n == seq.rows() ? seq : ad::slice_rows(seq, 0, n);
  // Input projections for every step at once.
  Var xz = ad::linear(valid, g.param(cell.w_z), g.param(cell.b_z));
  Var xr = ad::linear(valid, g.param(cell.w_r), g.param(cell.b_r));
  Var xh = ad::linear(valid, g.param(cell.w_h), g.param(cell.b_h));
  Var h = g.constant(Mat::Zero(1, static_cast<Eigen::Index>(cell.hidden_dim)));
  for (Eigen::Index t = 0; t < n; ++t) {
    h = gru_recurrence(g, cell, ad::slice_rows(xz, t, 1), ad::slice_rows(xr, t, 1), ad::slice_rows(xh, t, 1), h);
  }
  return h;
}

// --- Transformer -------------------------------------------------------------

TransformerEncoderParams TransformerEncoderParams::make(std::size_t input_dim, std::size_t d_model,
                                                        std::size_t n_heads, std::size_t d_ff, std::size_t n_layers,
                                                        std::size_t max_len, Rng& rng) {
  if (input_dim == 0 || d_model == 0 || n_heads == 0 || d_ff == 0 || max_len == 0) {
    throw InputError("transformer: dims must be positive");
  }
  if (d_model % n_heads != 0) throw InputError("transformer: d_model must be divisible by n_heads");
  TransformerEncoderParams p;
  p.input_dim = input_dim;
  p.d_model = d_model;
  p.n_heads = n_heads;
  p.d_ff = d_ff;
  p.max_len = max_len;
  p.has_projection = input_dim != d_model;
  if (p.has_projection) {
    p.proj_w = dense("transformer.proj_w", d_model, input_dim, rng);
    p.proj_b = zeros("transformer.proj_b", 1, d_model);
  }
  Mat pos(static_cast<Eigen::Index>(max_len), static_cast<Eigen::Index>(d_model));
  fill_uniform(pos, rng, -0.1, 0.1);
  p.positional = Parameter("transformer.positional", std::move(pos));
  for (std::size_t l = 0; l < n_layers; ++l) {
    const std::string prefix = "transformer.layer" + std::to_string(l) + ".";
    TransformerLayerParams layer;
    layer.w_q = dense(prefix + "w_q", d_model, d_model, rng);
    layer.w_k = dense(prefix + "w_k", d_model, d_model, rng);
    layer.w_v = dense(prefix + "w_v", d_model, d_model, rng);
    layer.w_o = dense(prefix + "w_o", d_model, d_model, rng);
    layer.ff1_w = dense(prefix + "ff1_w", d_ff, d_model, rng);
    layer.ff1_b = zeros(prefix + "ff1_b", 1, d_ff);
    layer.ff2_w = dense(prefix + "ff2_w", d_model, d_ff, rng);
    layer.ff2_b = zeros(prefix + "ff2_b", 1, d_model);
    layer.ln1_gain = ones(prefix + "ln1_gain", d_model);
    layer.ln1_bias = zeros(prefix + "ln1_bias", 1, d_model);
    layer.ln2_gain = ones(prefix + "ln2_gain", d_model);
    layer.ln2_bias = zeros(prefix + "ln2_bias", 1, d_model);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

std::vector<Parameter*> TransformerEncoderParams::parameters() {
  std::vector<Parameter*> out;
  collect_transformer(*this, out);
  return out;
}

std::vector<const Parameter*> TransformerEncoderParams::parameters() const {
  std::vector<const Parameter*> out;
  collect_transformer(*this, out);
  return out;
}

Var attention(Var q, Var k, Var v, std::size_t valid_length) {
  if (q.cols() != k.cols() || k.rows() != v.rows()) throw ShapeError("attention: Q/K/V shapes disagree");
  if (valid_length == 0) throw InputError("attention: every position is masked");
  if (static_cast<Eigen::Index>(valid_length) > k.rows()) throw InputError("attention: valid length exceeds keys");
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  Var scores = ad::scale(ad::matmul_nt(q, k), scale);
  Var weights = ad::masked_softmax_rows(scores, static_cast<Eigen::Index>(valid_length));
  return ad::matmul(weights, v);
}

template <typename P>
Var transformer_encode(Graph& g, P& params, Var seq, std::size_t valid_length) {
  require_valid(valid_length, seq.rows(), "transformer_encode");
  if (static_cast<std::size_t>(seq.cols()) != params.input_dim) {
    throw ShapeError("transformer_encode: input width mismatch");
  }
  if (static_cast<std::size_t>(seq.rows()) > params.max_len) {
    throw InputError("transformer_encode: sequence of length " + std::to_string(seq.rows()) +
                     " exceeds the positional table (" + std::to_string(params.max_len) + ")");
  }
  const Eigen::Index t_len = seq.rows();
  const auto d_head = static_cast<Eigen::Index>(params.d_model / params.n_heads);
  Var x = params.has_projection ? ad::linear(seq, g.param(params.proj_w), g.param(params.proj_b)) : seq;
  x = ad::add(x, ad::slice_rows(g.param(params.positional), 0, t_len));
  for (auto& layer : params.layers) {
    Var q = ad::linear(x, g.param(layer.w_q));
    Var k = ad::linear(x, g.param(layer.w_k));
    Var v = ad::linear(x, g.param(layer.w_v));
    std::vector<Var> heads;
    heads.reserve(params.n_heads);
    for (std::size_t h = 0; h < params.n_heads; ++h) {
      const auto off = static_cast<Eigen::Index>(h) * d_head;
      heads.push_back(attention(ad::slice_cols(q, off, d_head), ad::slice_cols(k, off, d_head),
                                ad::slice_cols(v, off, d_head), valid_length));
    }
    Var merged = heads.size() == 1 ? heads.front() : ad::concat_cols(heads);
    Var attended = ad::linear(merged, g.param(layer.w_o));
    x = ad::layer_norm_rows(ad::add(x, attended), g.param(layer.ln1_gain), g.param(layer.ln1_bias), params.ln_eps);
    Var hidden = ad::relu(ad::linear(x, g.param(layer.ff1_w), g.param(layer.ff1_b)));
    Var ff = ad::linear(hidden, g.param(layer.ff2_w), g.param(layer.ff2_b));
    x = ad::layer_norm_rows(ad::add(x, ff), g.param(layer.ln2_gain), g.param(layer.ln2_bias), params.ln_eps);
  }
  return ad::mean_rows(x, static_cast<Eigen::Index>(valid_length));
}

template Var cnn_encode(Graph&, CnnEncoderParams&, Var, std::size_t);
template Var cnn_encode(Graph&, const CnnEncoderParams&, Var, std::size_t);
template Var gru_step(Graph&, GruCellParams&, Var, Var);
template Var gru_step(Graph&, const GruCellParams&, Var, Var);
template Var gru_encode(Graph&, GruCellParams&, Var, std::size_t);
template Var gru_encode(Graph&, const GruCellParams&, Var, std::size_t);
template Var transformer_encode(Graph&, TransformerEncoderParams&, Var, std::size_t);
template Var transformer_encode(Graph&, const TransformerEncoderParams&, Var, std::size_t);

// --- numeric forms -------------------------------------------------------------

RowVec cnn_encode(const CnnEncoderParams& params, const EmbeddedSequence& seq, std::size_t valid_length) {
  Graph g;
  return cnn_encode(g, params, g.constant(seq), valid_length).value().row(0);
}

RowVec gru_step(const GruCellParams& cell, const RowVec& x, const RowVec& h) {
  Graph g;
  return gru_step(g, cell, g.constant(x), g.constant(h)).value().row(0);
}

RowVec gru_encode(const GruCellParams& cell, const EmbeddedSequence& seq, std::size_t valid_length) {
  Graph g;
  return gru_encode(g, cell, g.constant(seq), valid_length).value().row(0);
}

Mat attention(const Mat& q, const Mat& k, const Mat& v, std::size_t valid_length) {
  Graph g;
  return attention(g.constant(q), g.constant(k), g.constant(v), valid_length).value();
}

Mat attention_weights(const Mat& q, const Mat& k, std::size_t valid_length) {
  Graph g;
  const Mat identity = Mat::Identity(k.rows(), k.rows());
  return attention(g.constant(q), g.constant(k), g.constant(identity), valid_length).value();
}

RowVec layer_norm(const RowVec& x, const RowVec& gain, const RowVec& bias, double eps) {
  Graph g;
  return ad::layer_norm_rows(g.constant(x), g.constant(gain), g.constant(bias), eps).value().row(0);
}

RowVec transformer_encode(const TransformerEncoderParams& params, const EmbeddedSequence& seq,
                          std::size_t valid_length) {
  Graph g;
  return transformer_encode(g, params, g.constant(seq), valid_length).value().row(0);
}

}  // namespace trolldet
