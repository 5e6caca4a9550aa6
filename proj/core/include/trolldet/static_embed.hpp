#pragma once

// Static word vectors: pretrained text files and a desk-scale GloVe trainer.

#include <trolldet/common.hpp>
#include <trolldet/corpus.hpp>

#include <filesystem>
#include <limits>
#include <map>
#include <span>
#include <utility>
#include <vector>

namespace trolldet {

enum class Provenance { kLoaded, kTrained };

struct EmbeddingTable {
  Mat matrix;  // V x D, row 0 (PAD) is zero
  Provenance provenance = Provenance::kLoaded;
  std::size_t hits = 0;    // loaded: vocabulary tokens found in the file
  std::size_t misses = 0;  // loaded: vocabulary tokens left at zero
  double final_loss = std::numeric_limits<double>::quiet_NaN();  // trained only

  std::size_t dim() const { return static_cast<std::size_t>(matrix.cols()); }
  std::size_t rows() const { return static_cast<std::size_t>(matrix.rows()); }
};

/// Parses "token v_1 ... v_D" lines. Tokens absent from the file keep a zero row.
EmbeddingTable load_embedding_text(const std::filesystem::path& path, std::size_t expected_dim,
                                   const Vocabulary& vocab);
/// Writes every non-PAD row in the format load_embedding_text reads, using
/// shortest round-trip decimal representations.
void save_embedding_text(const EmbeddingTable& table, const Vocabulary& vocab, const std::filesystem::path& path);

enum class CooccurrenceWeighting { kInverseDistance, kUniform };

struct CooccurrenceMatrix {
  std::map<std::pair<TokenId, TokenId>, double> counts;  // (word, context) -> N > 0
  std::size_t vocab_size = 0;
  std::size_t window = 0;
  CooccurrenceWeighting weighting = CooccurrenceWeighting::kInverseDistance;

  double at(TokenId word, TokenId context) const {
    const auto it = counts.find({word, context});
    return it == counts.end() ? 0.0 : it->second;
  }
  bool empty() const { return counts.empty(); }
};

CooccurrenceMatrix build_cooccurrence(const std::vector<Document>& docs, const Vocabulary& vocab, std::size_t window,
                                      CooccurrenceWeighting weighting);

struct GloveTrainConfig {
  std::size_t dim = 16;
  std::size_t window = 5;
  double x_max = 100.0;
  double alpha = 0.75;
  double learning_rate = 0.05;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;

  void validate() const;
};

/// f(x) = min(1, (x / x_max)^alpha)
double glove_weight(double x, double x_max, double alpha);

/// Word and context factors with their biases.
struct GloveFactors {
  Mat word;                     // V x D
  Mat context;                  // V x D
  Eigen::VectorXd word_bias;    // V
  Eigen::VectorXd context_bias; // V
};

GloveFactors init_glove_factors(std::size_t vocab_size, const GloveTrainConfig& config);

/// sum f(N) (u_w . v_c + b_w + b~_c - log N)^2 over stored entries.
double glove_loss(const CooccurrenceMatrix& cooc, const GloveFactors& factors, const GloveTrainConfig& config);
/// Loss together with its exact gradient (same layout as the factors).
double glove_loss_and_gradient(const CooccurrenceMatrix& cooc, const GloveFactors& factors,
                               const GloveTrainConfig& config, GloveFactors& gradient);

struct GloveTrace {
  std::vector<double> losses;  // losses[0] is the initial loss, then one per epoch
};

/// Full-batch gradient descent. The returned table holds word + context
/// vectors with the PAD row zeroed. Throws DivergenceError on a
/// non-finite loss.
EmbeddingTable train_glove(const CooccurrenceMatrix& cooc, const GloveTrainConfig& config,
                           GloveTrace* trace = nullptr);

/// Row lookup; positions at or beyond valid_length are zero rows.
EmbeddedSequence embed_sequence(const EmbeddingTable& table, std::span<const TokenId> ids, std::size_t valid_length);

}  // namespace trolldet
