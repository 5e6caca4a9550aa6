#pragma once

// Embedding x encoder experiment matrix: data preparation, per-cell
// training and evaluation, result tables and run logs.

#include <trolldet/checkpoint.hpp>
#include <trolldet/config.hpp>
#include <trolldet/metrics.hpp>
#include <trolldet/model.hpp>

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace trolldet {

struct RunResult {
  std::string embedding;
  std::string encoder;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  MetricsReport metrics;
  TrainHistory history;
  double seconds = 0.0;
};

/// Cells in row-major order: embeddings are rows, encoders are columns.
struct ResultsTable {
  std::vector<std::string> embeddings;
  std::vector<std::string> encoders;
  std::vector<RunResult> cells;
  std::optional<std::size_t> best;   // maximal AUC among successful cells
  std::optional<std::size_t> worst;  // minimal AUC among successful cells

  const RunResult& at(std::size_t row, std::size_t col) const { return cells.at(row * encoders.size() + col); }
};

/// Checks the grid shape and places the best and worst markers (ties go to
/// the first cell in row-major order).
ResultsTable make_results_table(std::vector<std::string> embeddings, std::vector<std::string> encoders,
                                std::vector<RunResult> cells);

enum class TableFormat { kMarkdown, kCsv };

/// Accuracy, Precision, Recall, F1 and AUC at 3 decimals. Markdown bolds the
/// best AUC and marks the worst in bold italics. Output carries no timing
/// so it is byte-stable.
std::string emit_table(const ResultsTable& table, TableFormat format);

/// Deterministic per-cell seed.
std::uint64_t cell_seed(std::uint64_t base_seed, std::string_view embedding, std::string_view encoder);
/// Seed for embedding pretraining, shared by every cell of one row.
std::uint64_t embedding_seed(std::uint64_t base_seed, std::string_view embedding);

/// Tokenized documents with the vocabulary built on the training split.
struct PreparedData {
  std::vector<Document> documents;  // every loaded document, in source order
  std::size_t source_rows = 0;      // data rows before dropping empty documents
  DatasetSplit<Document> split;
  Vocabulary vocabulary;
};

PreparedData prepare_data(const ExperimentConfig& config);

/// Embedding resources shared by the cells of one matrix row.
struct PretrainedEmbeddings {
  std::optional<EmbeddingTable> table;
  std::optional<BiLmParams> bilm;
  std::vector<std::shared_ptr<const ContextualLayers>> precomputed;  // indexed by Document::source_index
};

PretrainedEmbeddings pretrain_embeddings(const ExperimentConfig& config, const PreparedData& data);

/// Builds the classifier inputs for one pathway.
std::vector<Example> make_examples(const std::vector<Document>& docs, const Vocabulary& vocab,
                                   const ExperimentConfig& config, const PretrainedEmbeddings& embeddings);

ModelAssembly make_assembly(const ExperimentConfig& config, const PretrainedEmbeddings& embeddings,
                            std::uint64_t seed);

/// Per-epoch JSON lines sink; may be null.
struct RunLog {
  std::ostream* out = nullptr;
  void epoch(const std::string& embedding, const std::string& encoder, const EpochRecord& record) const;
};

struct CellOutput {
  RunResult result;
  std::optional<Checkpoint> checkpoint;
};

/// Trains one cell on the prepared split and evaluates the selected model on
/// the test split exactly once. Failures are reported in the result.
CellOutput run_cell(const ExperimentConfig& config, const PreparedData& data, const PretrainedEmbeddings& embeddings,
                    const RunLog& log = {});

/// Runs every cell of a rectangular grid. All configs must share the data
/// settings of the first one. When `checkpoint_dir` is set, one checkpoint
/// per successful cell is written there.
ResultsTable run_matrix(const std::vector<ExperimentConfig>& configs, const PreparedData& data,
                        const RunLog& log = {}, const std::filesystem::path& checkpoint_dir = {});

/// Writes table.md, table.csv, runs.jsonl, results.json and checkpoints/
/// under out_dir.
ResultsTable run_matrix_to_directory(const GridConfig& grid, const std::filesystem::path& out_dir);

/// JSON summary including failures and wall-clock seconds.
std::string results_json(const ResultsTable& table);

}  // namespace trolldet
