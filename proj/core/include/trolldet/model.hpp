#pragma once

// Two-stage classifier: an embedding pathway produces per-token vectors, an
// encoder pools them into one feature row, and a logistic head scores it.

#include <trolldet/context_embed.hpp>
#include <trolldet/corpus.hpp>
#include <trolldet/encoders.hpp>
#include <trolldet/metrics.hpp>
#include <trolldet/optim.hpp>
#include <trolldet/static_embed.hpp>

#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace trolldet {

enum class PathwayKind { kStaticTable, kBiLmMixer, kPrecomputedMixer };
enum class EncoderKind { kCnn, kGru, kTransformer };

std::string to_string(PathwayKind kind);
std::string to_string(EncoderKind kind);
PathwayKind parse_pathway(std::string_view name);
EncoderKind parse_encoder(std::string_view name);
std::string to_string(Pooling pooling);
Pooling parse_pooling(std::string_view name);

/// Encoder hyperparameters. Only the block for the selected encoder is used.
struct EncoderConfig {
  std::vector<std::size_t> cnn_windows{1, 2, 3};
  std::size_t cnn_channels = 8;
  Pooling cnn_pooling = Pooling::kMax;
  std::size_t gru_hidden = 16;
  std::size_t tf_d_model = 16;
  std::size_t tf_heads = 2;
  std::size_t tf_ff = 32;
  std::size_t tf_layers = 1;
};

struct AssemblySpec {
  PathwayKind pathway = PathwayKind::kStaticTable;
  EncoderKind encoder = EncoderKind::kCnn;
  EncoderConfig encoder_config;
  std::size_t max_len = 64;
  /// Train the static table (or the bi-LM) together with the classifier.
  bool finetune_embeddings = false;
};

struct ClassifierHead {
  Parameter weight;  // 1 x encoder output dim
  Parameter bias;    // 1 x 1
};

class ModelAssembly {
 public:
  AssemblySpec spec;

  Parameter table;                 // static pathway: V x D
  std::optional<BiLmParams> bilm;  // bi-LM pathway
  LayerMixWeights mixer;           // contextual pathways
  std::size_t context_layers = 0;  // contextual pathways: L
  std::size_t context_dim = 0;     // contextual pathways: D_ctx

  CnnEncoderParams cnn;
  GruCellParams gru;
  TransformerEncoderParams transformer;
  ClassifierHead head;

  std::size_t input_dim() const;
  std::size_t encoder_output_dim() const;

  /// Every parameter group in a fixed order, frozen ones included.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;
  std::vector<Parameter*> trainable_parameters();

  /// Throws ShapeError when adjacent stages disagree on widths.
  void validate() const;
  /// Rounds every parameter to float32 so the checkpoint format is lossless.
  void round_to_float32();
  void zero_grad();
};

ModelAssembly make_static_assembly(const AssemblySpec& spec, const EmbeddingTable& table, std::uint64_t seed);
ModelAssembly make_bilm_assembly(const AssemblySpec& spec, BiLmParams bilm, std::uint64_t seed);
ModelAssembly make_precomputed_assembly(const AssemblySpec& spec, std::size_t num_layers, std::size_t dim,
                                        std::uint64_t seed);

/// One classifier input. `context` carries precomputed layers (required for
/// the precomputed pathway; optional cache for a frozen bi-LM).
struct Example {
  EncodedIds input;
  int label = 0;
  std::shared_ptr<const ContextualLayers> context;
};

/// Fills the context cache of every example when the bi-LM is frozen, so
/// training does not rerun the language model.
void cache_contexts(const ModelAssembly& model, std::span<Example> examples);

/// Logit of one example as a 1x1 graph node.
template <typename M>
Var build_logit(Graph& g, M& model, const Example& example);

/// sigma(w . encode(x) + b)
double forward(const ModelAssembly& model, const Example& example);
std::vector<double> predict(const ModelAssembly& model, std::span<const Example> examples);

constexpr double kProbabilityClamp = 1e-7;

/// -[y ln p + (1 - y) ln(1 - p)] with p clamped to [1e-7, 1 - 1e-7].
double bce_loss(double p, int label);

struct NamedGradient {
  std::string name;
  Mat gradient;
};

/// Accumulates the gradient of the mean batch loss into Parameter::grad of
/// every trainable group and returns the mean loss. Throws
/// DivergenceError naming the group when a gradient is non-finite.
double accumulate_gradients(ModelAssembly& model, std::span<const Example> batch);
/// Mean batch loss without gradients.
double batch_loss(const ModelAssembly& model, std::span<const Example> batch);
/// Gradients of the mean batch loss for trainable groups only.
std::vector<NamedGradient> backward(ModelAssembly& model, std::span<const Example> batch);

struct TrainConfig {
  OptimizerConfig optimizer;
  std::size_t batch_size = 32;
  std::size_t max_epochs = 50;
  std::size_t patience = 5;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
  double validation_auc = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  /// Index into epochs of the restored model; empty when no epoch ran.
  std::optional<std::size_t> selected_epoch;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

struct TrainOutcome {
  ModelAssembly model;
  TrainHistory history;
};

/// Seeded mini-batch training with per-epoch validation AUC, early stopping
/// after `patience` epochs without improvement, and restoration of the
/// best-AUC parameters (ties resolve to the earliest epoch).
TrainOutcome train_model(ModelAssembly model, const DatasetSplit<Example>& split, const TrainConfig& config,
                         const EpochCallback& on_epoch = {});

/// Index of the maximal validation AUC, earliest on ties.
std::optional<std::size_t> select_best_epoch(const std::vector<EpochRecord>& epochs);

MetricsReport evaluate(const ModelAssembly& model, std::span<const Example> examples);

}  // namespace trolldet
