#pragma once

// Contextual token vectors: a two-layer bidirectional LSTM language model,
// a learned softmax layer mixer, and a binary container for externally
// computed per-token vectors.

#include <trolldet/autodiff.hpp>
#include <trolldet/corpus.hpp>
#include <trolldet/optim.hpp>

#include <filesystem>
#include <span>
#include <vector>

namespace trolldet {

struct LstmCellParams {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  // input gate i, forget gate f, output gate o, candidate g:
  // input (H x D_in), hidden (H x H), bias (1 x H)
  Parameter w_i, u_i, b_i;
  Parameter w_f, u_f, b_f;
  Parameter w_o, u_o, b_o;
  Parameter w_g, u_g, b_g;

  static LstmCellParams make(std::size_t input_dim, std::size_t hidden_dim, Rng& rng, const std::string& prefix);
  static LstmCellParams zeros(std::size_t input_dim, std::size_t hidden_dim);
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
};

struct LstmState {
  RowVec h;
  RowVec c;
};

/// One LSTM step: c' = f*c + i*g, h' = o*tanh(c').
LstmState lstm_step(const LstmCellParams& cell, const RowVec& x, const RowVec& h, const RowVec& c);

struct LstmVars {
  Var h;
  Var c;
};

template <typename P>
LstmVars lstm_step(Graph& g, P& cell, Var x, Var h, Var c);

struct BiLmParams {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 0;   // D
  std::size_t hidden_dim = 0;  // H
  Parameter embedding;         // V x D, PAD row zero
  LstmCellParams forward;
  LstmCellParams backward;
  Parameter proj_w;  // V x H, shared by both directions
  Parameter proj_b;  // 1 x V

  static constexpr std::size_t kLayers = 2;

  /// Requires embed_dim <= 2 * hidden_dim (layer 0 is widened to 2H).
  static BiLmParams make(std::size_t vocab_size, std::size_t embed_dim, std::size_t hidden_dim, Rng& rng);
  std::size_t context_dim() const { return 2 * hidden_dim; }
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  void set_trainable(bool trainable);
};

/// L x T x D_ctx per-token vectors. Rows at or beyond valid_length are zero
/// in every layer.
struct ContextualLayers {
  std::vector<Mat> layers;  // each T x D_ctx
  std::size_t valid_length = 0;

  std::size_t num_layers() const { return layers.size(); }
  std::size_t length() const { return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().rows()); }
  std::size_t dim() const { return layers.empty() ? 0 : static_cast<std::size_t>(layers.front().cols()); }
};

/// Per-direction hidden states over the valid prefix.
struct BiLmStates {
  Var embeddings;             // valid x D
  std::vector<Var> forward;   // forward[t]: after reading tokens 0..t
  std::vector<Var> backward;  // backward[t]: after reading tokens valid-1..t
};

template <typename P>
BiLmStates bilm_states(Graph& g, P& params, std::span<const TokenId> ids, std::size_t valid_length);

/// Layer 0: token embeddings, duplicated into both halves when D == H,
/// otherwise zero-padded to 2H. Layer 1: [forward h_t, backward h_t].
template <typename P>
std::vector<Var> run_bilm(Graph& g, P& params, std::span<const TokenId> ids, std::size_t valid_length);

ContextualLayers run_bilm(const BiLmParams& params, std::span<const TokenId> ids, std::size_t valid_length);

/// Summed next-token (forward) and previous-token (backward) negative
/// log-likelihoods for one sequence.
struct BiLmLoss {
  double forward_nll = 0.0;
  double backward_nll = 0.0;
  std::size_t forward_count = 0;
  std::size_t backward_count = 0;
};

template <typename P>
Var bilm_loss(Graph& g, P& params, std::span<const TokenId> ids, std::size_t valid_length, BiLmLoss* parts = nullptr);

BiLmLoss bilm_loss(const BiLmParams& params, std::span<const TokenId> ids, std::size_t valid_length);

/// Row t holds log p(next token | tokens 0..t) for t in [0, valid - 1).
Mat bilm_next_token_log_probs(const BiLmParams& params, std::span<const TokenId> ids, std::size_t valid_length);

struct BiLmTrainConfig {
  std::size_t embed_dim = 16;
  std::size_t hidden_dim = 16;
  double learning_rate = 1e-2;
  std::size_t epochs = 5;
  std::size_t batch_size = 16;
  std::size_t max_len = 64;
  std::uint64_t seed = 0;
};

struct BiLmTrainResult {
  BiLmParams params;
  double initial_perplexity = 0.0;
  double final_perplexity = 0.0;
  std::vector<double> epoch_loss;  // mean per-token NLL for each epoch
};

/// Perplexity exp(total NLL / predicted tokens) over both directions.
double bilm_perplexity(const BiLmParams& params, const std::vector<EncodedIds>& corpus);

/// Seeded mini-batch Adam on the summed forward + backward language model
/// loss. Throws DivergenceError on a non-finite loss.
BiLmTrainResult train_bilm(const std::vector<Document>& docs, const Vocabulary& vocab, const BiLmTrainConfig& config);

struct LayerMixWeights {
  Parameter s_raw;  // 1 x L
  Parameter gamma;  // 1 x 1

  static LayerMixWeights make(std::size_t num_layers);
  std::size_t num_layers() const { return static_cast<std::size_t>(s_raw.value.cols()); }
  RowVec softmax() const;
  std::vector<Parameter*> parameters() { return {&s_raw, &gamma}; }
  std::vector<const Parameter*> parameters() const { return {&s_raw, &gamma}; }
};

/// gamma * sum_l softmax(s_raw)_l * layers[l]
template <typename P>
Var mix_layers(Graph& g, P& weights, std::span<const Var> layers);

EmbeddedSequence mix_layers(const ContextualLayers& layers, const LayerMixWeights& weights);

/// Container layout: "CTX1", u32 n_docs, u32 L, u32 D_ctx, then per
/// document u32 T followed by L*T*D_ctx float32 values (layer-major, then
/// position, then feature). All integers little-endian.
void save_precomputed(const std::filesystem::path& path, const std::vector<ContextualLayers>& docs);
std::string encode_precomputed(const std::vector<ContextualLayers>& docs);
std::vector<ContextualLayers> load_precomputed(const std::filesystem::path& path);
std::vector<ContextualLayers> decode_precomputed(std::string_view bytes);

}  // namespace trolldet
