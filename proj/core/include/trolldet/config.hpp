#pragma once

// Experiment configuration: a plain-text `key = value` file with optional
// `[cell.<embedding>.<encoder>]` sections that override keys for one cell.
//
//   # comment
//   embeddings = glove-static, bilm-contextual
//   encoders = cnn, gru
//   seed = 13
//   data = tweets.tsv          (relative to the config file)
//   train.max_epochs = 20
//
//   [cell.bilm-contextual.gru]
//   train.learning_rate = 0.005
//
// Keys are listed in config_keys(). Unknown keys are errors.

#include <trolldet/context_embed.hpp>
#include <trolldet/corpus.hpp>
#include <trolldet/model.hpp>
#include <trolldet/static_embed.hpp>

#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace trolldet {

/// Everything needed to train and evaluate one matrix cell.
struct ExperimentConfig {
  PathwayKind embedding = PathwayKind::kStaticTable;
  EncoderKind encoder = EncoderKind::kCnn;
  std::uint64_t seed = 13;

  // Data: either a delimited file or a generated set ("marker", "polysemy").
  std::filesystem::path data;
  DatasetFormat format;
  std::string synthetic;
  std::size_t synthetic_size = 2000;
  std::size_t max_len = 32;
  std::size_t min_count = 1;
  SplitRatios split;

  GloveTrainConfig glove;
  /// Pretrained vectors in text format; GloVe is trained when empty.
  std::filesystem::path glove_vectors;
  BiLmTrainConfig bilm;
  /// CTX1 file with one entry per data row; derived from a bi-LM when empty.
  std::filesystem::path precomputed;

  EncoderConfig encoder_config;
  TrainConfig train;
  bool finetune_embeddings = false;

  AssemblySpec assembly_spec() const;
};

struct GridConfig {
  std::vector<PathwayKind> embeddings;
  std::vector<EncoderKind> encoders;
  ExperimentConfig base;
  /// (embedding, encoder) -> ordered (key, value) overrides.
  std::map<std::pair<PathwayKind, EncoderKind>, std::vector<std::pair<std::string, std::string>>> overrides;

  /// Row-major configs, one per (embedding, encoder) cell.
  std::vector<ExperimentConfig> cells() const;
};

/// Sets one key. Throws InputError for unknown keys or bad values.
void apply_config_key(ExperimentConfig& config, const std::string& key, const std::string& value);

/// Names of every accepted key, for usage text.
std::vector<std::string> config_keys();

/// `base_dir` anchors relative paths.
GridConfig parse_grid_config(const std::string& text, const std::filesystem::path& base_dir = {});
GridConfig load_grid_config(const std::filesystem::path& path);

}  // namespace trolldet
