#pragma once

// Sequence encoders: each maps a T x D EmbeddedSequence with a valid length
// to a fixed-width row. The Graph overloads record differentiable
// operations; binding a const parameter set yields constants, so the same
// code path serves training and inference.

#include <trolldet/autodiff.hpp>

#include <vector>

namespace trolldet {

enum class Pooling { kMax, kAverage };

struct CnnFilterBank {
  std::size_t window = 1;
  Parameter kernel;  // C x (window * D); row c holds the flattened window filter
  Parameter bias;    // 1 x C

  std::size_t channels() const { return static_cast<std::size_t>(kernel.value.rows()); }
};

struct CnnEncoderParams {
  std::size_t input_dim = 0;
  Pooling pooling = Pooling::kMax;
  std::vector<CnnFilterBank> banks;

  static CnnEncoderParams make(std::size_t input_dim, const std::vector<std::size_t>& windows,
                               std::size_t channels, Pooling pooling, Rng& rng);
  std::size_t output_dim() const;
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
};

struct GruCellParams {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  // update gate z, reset gate r, candidate h~: input (H x D), hidden (H x H), bias (1 x H)
  Parameter w_z, u_z, b_z;
  Parameter w_r, u_r, b_r;
  Parameter w_h, u_h, b_h;

  static GruCellParams make(std::size_t input_dim, std::size_t hidden_dim, Rng& rng);
  /// All weights and biases zero.
  static GruCellParams zeros(std::size_t input_dim, std::size_t hidden_dim);
  std::size_t output_dim() const { return hidden_dim; }
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
};

struct TransformerLayerParams {
  Parameter w_q, w_k, w_v, w_o;  // d_model x d_model
  Parameter ff1_w, ff1_b;        // d_ff x d_model, 1 x d_ff
  Parameter ff2_w, ff2_b;        // d_model x d_ff, 1 x d_model
  Parameter ln1_gain, ln1_bias;  // 1 x d_model
  Parameter ln2_gain, ln2_bias;
};

struct TransformerEncoderParams {
  std::size_t input_dim = 0;
  std::size_t d_model = 0;
  std::size_t n_heads = 1;
  std::size_t d_ff = 0;
  std::size_t max_len = 0;
  double ln_eps = 1e-5;
  bool has_projection = false;
  Parameter proj_w, proj_b;  // d_model x input_dim, 1 x d_model (only when has_projection)
  Parameter positional;      // max_len x d_model
  std::vector<TransformerLayerParams> layers;

  /// A projection is added iff input_dim != d_model.
  static TransformerEncoderParams make(std::size_t input_dim, std::size_t d_model, std::size_t n_heads,
                                       std::size_t d_ff, std::size_t n_layers, std::size_t max_len, Rng& rng);
  std::size_t output_dim() const { return d_model; }
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
};

// Graph forms. P is either the parameter struct or its const version.

template <typename P>
Var cnn_encode(Graph& g, P& params, Var seq, std::size_t valid_length);
template <typename P>
Var gru_step(Graph& g, P& cell, Var x, Var h);
template <typename P>
Var gru_encode(Graph& g, P& cell, Var seq, std::size_t valid_length);
template <typename P>
Var transformer_encode(Graph& g, P& params, Var seq, std::size_t valid_length);

/// softmax(Q K^T / sqrt(d_k)) V with key columns >= valid_length masked out.
Var attention(Var q, Var k, Var v, std::size_t valid_length);

// Pure numeric forms.

RowVec cnn_encode(const CnnEncoderParams& params, const EmbeddedSequence& seq, std::size_t valid_length);
RowVec gru_step(const GruCellParams& cell, const RowVec& x, const RowVec& h);
RowVec gru_encode(const GruCellParams& cell, const EmbeddedSequence& seq, std::size_t valid_length);
Mat attention(const Mat& q, const Mat& k, const Mat& v, std::size_t valid_length);
/// Attention weights alone (T x T), masked columns zero.
Mat attention_weights(const Mat& q, const Mat& k, std::size_t valid_length);
RowVec layer_norm(const RowVec& x, const RowVec& gain, const RowVec& bias, double eps);
RowVec transformer_encode(const TransformerEncoderParams& params, const EmbeddedSequence& seq,
                          std::size_t valid_length);

}  // namespace trolldet
