#include <trolldet/checkpoint.hpp>
#include <trolldet/config.hpp>
#include <trolldet/gradcheck.hpp>
#include <trolldet/harness.hpp>
#include <trolldet/synthetic.hpp>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace trolldet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInput = 1;
constexpr int kExitRuntime = 2;

nlohmann::json metrics_json(const MetricsReport& m) {
  return {{"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}, {"auc", m.auc},
          {"confusion", {{"tp", m.confusion.tp}, {"fp", m.confusion.fp}, {"tn", m.confusion.tn}, {"fn", m.confusion.fn}}}};
}

GridConfig load_with_seed(const std::string& path, const std::optional<std::uint64_t>& seed) {
  GridConfig grid = load_grid_config(path);
  if (seed) grid.base.seed = *seed;
  return grid;
}

// Column layout flags shared by every command that reads a labelled file.
struct DataFlags {
  std::optional<std::string> format;
  std::optional<std::size_t> text_col;
  std::optional<std::size_t> label_col;
  std::optional<std::string> pos_label;
  std::optional<std::string> neg_label;
  bool header = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("--format", format, "tsv or csv");
    cmd->add_option("--text-col", text_col, "0-based text column");
    cmd->add_option("--label-col", label_col, "0-based label column");
    cmd->add_option("--pos-label", pos_label, "Label token of troll records");
    cmd->add_option("--neg-label", neg_label, "Label token of other records");
    cmd->add_flag("--header", header, "Skip the first line");
  }

  /// Applies the given flags on top of `base`.
  DatasetFormat resolve(DatasetFormat base = {}) const {
    if (format == "tsv") {
      base.delimiter = '\t';
    } else if (format == "csv") {
      base.delimiter = ',';
    } else if (format) {
      throw InputError("unknown format '" + *format + "' (expected tsv or csv)");
    }
    if (text_col) base.text_col = *text_col;
    if (label_col) base.label_col = *label_col;
    if (pos_label) base.pos_label = *pos_label;
    if (neg_label) base.neg_label = *neg_label;
    if (header) base.has_header = true;
    if (base.text_col == base.label_col) throw InputError("--text-col and --label-col must differ");
    if (base.pos_label == base.neg_label) throw InputError("--pos-label and --neg-label must differ");
    return base;
  }
};

int cmd_matrix(const std::string& config, const std::string& out, const std::optional<std::uint64_t>& seed) {
  const ResultsTable table = run_matrix_to_directory(load_with_seed(config, seed), out);
  std::cout << emit_table(table, TableFormat::kMarkdown);
  std::size_t failed = 0;
  for (const RunResult& c : table.cells) failed += c.ok ? 0 : 1;
  if (failed) std::cerr << failed << " of " << table.cells.size() << " cells failed; see results.json\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& embedding, const std::string& encoder,
              const std::string& out, const std::optional<std::uint64_t>& seed) {
  GridConfig grid = load_with_seed(config_path, seed);
  if (!embedding.empty()) grid.embeddings = {parse_pathway(embedding)};
  if (!encoder.empty()) grid.encoders = {parse_encoder(encoder)};
  ExperimentConfig config = grid.cells().front();
  const PreparedData data = prepare_data(config);
  const PretrainedEmbeddings embeddings = pretrain_embeddings(config, data);
  fs::create_directories(out);
  std::ofstream runs(fs::path(out) / "runs.jsonl", std::ios::trunc);
  CellOutput cell = run_cell(config, data, embeddings, RunLog{&runs});
  if (!cell.result.ok) {
    std::cerr << "training failed: " << cell.result.error << "\n";
    return kExitRuntime;
  }
  const fs::path checkpoint = fs::path(out) / "model.tgck";
  save_checkpoint(*cell.checkpoint, checkpoint);
  nlohmann::json report = {{"embedding", cell.result.embedding},
                           {"encoder", cell.result.encoder},
                           {"seed", cell.result.seed},
                           {"epochs", cell.result.history.epochs.size()},
                           {"selected_epoch", cell.checkpoint->epoch},
                           {"checkpoint", checkpoint.string()},
                           {"test", metrics_json(cell.result.metrics)}};
  std::cout << report.dump(2) << "\n";
  return kExitOk;
}

void require_same(const std::string& what, std::size_t checkpoint, std::size_t config) {
  if (checkpoint != config) {
    throw ShapeError(what + " mismatch: checkpoint has " + std::to_string(checkpoint) + ", config has " +
                     std::to_string(config));
  }
}

void check_compatible(const ModelAssembly& model, const ExperimentConfig& config) {
  const AssemblySpec& s = model.spec;
  if (s.pathway != config.embedding) {
    throw ShapeError("checkpoint embedding is " + to_string(s.pathway) + ", config has " + to_string(config.embedding));
  }
  if (s.encoder != config.encoder) {
    throw ShapeError("checkpoint encoder is " + to_string(s.encoder) + ", config has " + to_string(config.encoder));
  }
  const EncoderConfig& a = s.encoder_config;
  const EncoderConfig& b = config.encoder_config;
  switch (s.encoder) {
    case EncoderKind::kCnn:
      require_same("cnn channel count", a.cnn_channels, b.cnn_channels);
      if (a.cnn_windows != b.cnn_windows) throw ShapeError("cnn window sizes differ between checkpoint and config");
      break;
    case EncoderKind::kGru: require_same("gru hidden dimension", a.gru_hidden, b.gru_hidden); break;
    case EncoderKind::kTransformer:
      require_same("transformer d_model", a.tf_d_model, b.tf_d_model);
      require_same("transformer heads", a.tf_heads, b.tf_heads);
      require_same("transformer feed-forward width", a.tf_ff, b.tf_ff);
      require_same("transformer layers", a.tf_layers, b.tf_layers);
      break;
  }
}

int cmd_evaluate(const std::string& checkpoint_path, const std::string& data_path, const std::string& config_path,
                 const std::string& embedding, const std::string& encoder, const DataFlags& flags) {
  Checkpoint checkpoint = load_checkpoint(checkpoint_path);
  ExperimentConfig config;
  if (!config_path.empty()) {
    GridConfig grid = load_grid_config(config_path);
    grid.embeddings = {embedding.empty() ? checkpoint.model.spec.pathway : parse_pathway(embedding)};
    grid.encoders = {encoder.empty() ? checkpoint.model.spec.encoder : parse_encoder(encoder)};
    config = grid.cells().front();
    check_compatible(checkpoint.model, config);
  } else {
    config.embedding = checkpoint.model.spec.pathway;
    config.encoder = checkpoint.model.spec.encoder;
  }
  config.max_len = checkpoint.model.spec.max_len;
  config.format = flags.resolve(config.format);
  if (!data_path.empty()) config.data = data_path;
  if (config.data.empty()) throw InputError("evaluate needs --data or a config with 'data'");
  if (checkpoint.vocabulary.size() < 2) throw InputError("checkpoint carries no vocabulary");

  const std::vector<RawRecord> records = load_dataset(config.data, config.format);
  const std::vector<Document> docs = to_documents(records);
  const Vocabulary vocab(checkpoint.vocabulary);
  PretrainedEmbeddings embeddings;
  if (config.embedding == PathwayKind::kPrecomputedMixer) {
    if (config.precomputed.empty()) throw InputError("precomputed checkpoint needs 'precomputed.path' in the config");
    std::vector<ContextualLayers> layers = load_precomputed(config.precomputed);
    if (layers.size() != records.size()) {
      throw ShapeError("precomputed file holds " + std::to_string(layers.size()) + " documents, data has " +
                       std::to_string(records.size()));
    }
    for (ContextualLayers& l : layers) embeddings.precomputed.push_back(std::make_shared<const ContextualLayers>(std::move(l)));
  }
  const std::vector<Example> examples = make_examples(docs, vocab, config, embeddings);
  const MetricsReport report = evaluate(checkpoint.model, examples);
  std::cout << metrics_json(report).dump(2) << "\n";
  return kExitOk;
}

int cmd_glove(const std::string& data, const DatasetFormat& format, const std::string& out, std::size_t dim,
              std::size_t window, std::size_t epochs, double lr, std::size_t min_count, std::uint64_t seed) {
  const std::vector<Document> docs = to_documents(load_dataset(data, format));
  const Vocabulary vocab = build_vocabulary(docs, min_count);
  GloveTrainConfig config;
  config.dim = dim;
  config.window = window;
  config.epochs = epochs;
  config.learning_rate = lr;
  config.seed = seed;
  GloveTrace trace;
  const EmbeddingTable table =
      train_glove(build_cooccurrence(docs, vocab, window, CooccurrenceWeighting::kInverseDistance), config, &trace);
  save_embedding_text(table, vocab, out);
  std::cout << "vocabulary " << vocab.size() << ", loss " << trace.losses.front() << " -> " << trace.losses.back()
            << ", wrote " << out << "\n";
  return kExitOk;
}

int cmd_bilm(const std::string& data, const DatasetFormat& format, const std::string& out, std::size_t embed_dim,
             std::size_t hidden_dim, std::size_t epochs, double lr, std::size_t max_len, std::size_t min_count,
             std::uint64_t seed) {
  const std::vector<Document> docs = to_documents(load_dataset(data, format));
  const Vocabulary vocab = build_vocabulary(docs, min_count);
  BiLmTrainConfig config;
  config.embed_dim = embed_dim;
  config.hidden_dim = hidden_dim;
  config.epochs = epochs;
  config.learning_rate = lr;
  config.max_len = max_len;
  config.seed = seed;
  const BiLmTrainResult result = train_bilm(docs, vocab, config);
  std::vector<ContextualLayers> exported;
  exported.reserve(docs.size());
  for (const Document& doc : docs) {
    const EncodedIds ids = encode(doc.tokens, vocab, max_len);
    exported.push_back(run_bilm(result.params, ids.ids, ids.valid_length));
  }
  save_precomputed(out, exported);
  std::cout << "perplexity " << result.initial_perplexity << " -> " << result.final_perplexity << ", wrote "
            << exported.size() << " documents to " << out << "\n";
  return kExitOk;
}

int cmd_ctx_import(const std::string& input, const std::string& data, const DatasetFormat& format) {
  const std::vector<ContextualLayers> docs = load_precomputed(input);
  std::size_t tokens = 0;
  for (const ContextualLayers& d : docs) tokens += d.length();
  if (!data.empty()) {
    const std::size_t rows = load_dataset(data, format).size();
    if (rows != docs.size()) {
      throw ShapeError(input + " holds " + std::to_string(docs.size()) + " documents, " + data + " has " +
                       std::to_string(rows) + " rows");
    }
  }
  std::cout << "documents " << docs.size() << ", layers " << (docs.empty() ? 0 : docs.front().num_layers())
            << ", width " << (docs.empty() ? 0 : docs.front().dim()) << ", tokens " << tokens << "\n";
  return kExitOk;
}

int cmd_ctx_export(const std::string& checkpoint_path, const std::string& data, const DatasetFormat& format,
                   const std::string& out) {
  const Checkpoint checkpoint = load_checkpoint(checkpoint_path);
  const ModelAssembly& model = checkpoint.model;
  if (model.spec.pathway != PathwayKind::kBiLmMixer || !model.bilm) {
    throw InputError("ctx-export needs a " + to_string(PathwayKind::kBiLmMixer) + " checkpoint, got " +
                     to_string(model.spec.pathway));
  }
  if (checkpoint.vocabulary.size() < 2) throw InputError("checkpoint carries no vocabulary");
  const Vocabulary vocab(checkpoint.vocabulary);
  const std::vector<Document> docs = to_documents(load_dataset(data, format));
  std::vector<ContextualLayers> exported;
  exported.reserve(docs.size());
  for (const Document& doc : docs) {
    const EncodedIds ids = encode(doc.tokens, vocab, model.spec.max_len);
    exported.push_back(run_bilm(*model.bilm, ids.ids, ids.valid_length));
  }
  save_precomputed(out, exported);
  std::cout << "wrote " << exported.size() << " documents to " << out << "\n";
  return kExitOk;
}

int cmd_grad_check(std::uint64_t seed, bool verbose) {
  GradCheckConfig config;
  config.seed = seed;
  const GradCheckReport report = run_gradient_suite(config);
  std::size_t failed = 0;
  for (const GroupCheck& g : report.groups) {
    if (!g.passed) ++failed;
    if (verbose || !g.passed) {
      std::printf("%-4s %-40s %-24s %6zu entries  max rel err %.3e\n", g.passed ? "ok" : "FAIL", g.assembly.c_str(),
                  g.group.c_str(), g.entries, g.max_relative_error);
    }
  }
  std::printf("%zu groups checked, %zu failed, worst relative error %.3e\n", report.groups.size(), failed,
              report.max_relative_error());
  return report.passed() ? kExitOk : kExitRuntime;
}

int cmd_synth(const std::string& kind, std::size_t size, const std::string& out, std::uint64_t seed) {
  std::vector<RawRecord> records;
  if (kind == "marker") {
    records = make_marker_dataset(size, seed);
  } else if (kind == "polysemy") {
    records = make_polysemy_dataset(size, seed);
  } else {
    throw InputError("unknown synthetic kind '" + kind + "' (expected marker or polysemy)");
  }
  std::ofstream f(out, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + out);
  for (const RawRecord& r : records) f << r.text << '\t' << r.label << '\n';
  std::cout << "wrote " << records.size() << " records to " << out << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Troll tweet classifiers: embedding pathways, encoders and the experiment matrix"};
  app.require_subcommand(1);
  std::optional<std::uint64_t> seed;
  app.add_option("--seed", seed, "Base random seed")->type_name("UINT");

  std::string config, out, data, checkpoint, embedding, encoder, input, kind = "marker";
  DataFlags data_flags;
  std::size_t dim = 16, window = 5, epochs = 100, min_count = 1, hidden = 16, max_len = 64, size = 2000;
  double lr = 0.05;
  bool verbose = false;

  auto* matrix = app.add_subcommand("matrix", "Train and evaluate every cell of a grid config");
  matrix->add_option("--config", config, "Grid config file")->required()->check(CLI::ExistingFile);
  matrix->add_option("--out", out, "Output directory")->required();
  matrix->add_option("--seed", seed, "Base random seed");

  auto* train = app.add_subcommand("train", "Train one cell and write a checkpoint");
  train->add_option("--config", config, "Config file")->required()->check(CLI::ExistingFile);
  train->add_option("--embedding", embedding, "Embedding pathway (defaults to the first in the config)");
  train->add_option("--encoder", encoder, "Encoder (defaults to the first in the config)");
  train->add_option("--out", out, "Output directory")->required();
  train->add_option("--seed", seed, "Base random seed");

  auto* eval = app.add_subcommand("evaluate", "Score a labelled file with a checkpoint");
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  eval->add_option("--data", data, "Labelled data file (overrides the config)");
  eval->add_option("--config", config, "Config with data format and model settings")->check(CLI::ExistingFile);
  eval->add_option("--embedding", embedding, "Expected embedding pathway");
  eval->add_option("--encoder", encoder, "Expected encoder");
  data_flags.attach(eval);
  eval->add_option("--seed", seed, "Accepted for uniformity; evaluation is deterministic");

  auto* glove = app.add_subcommand("glove-train", "Train GloVe vectors on a data file");
  glove->add_option("--data", data, "Data file")->required()->check(CLI::ExistingFile);
  data_flags.attach(glove);
  glove->add_option("--out", out, "Output vectors (text)")->required();
  glove->add_option("--dim", dim, "Vector dimension");
  glove->add_option("--window", window, "Context window");
  glove->add_option("--epochs", epochs, "Gradient descent epochs");
  glove->add_option("--lr", lr, "Learning rate");
  glove->add_option("--min-count", min_count, "Minimum token count");
  glove->add_option("--seed", seed, "Random seed");

  auto* bilm = app.add_subcommand("bilm-train", "Train a bi-LM and export per-token layers as CTX1");
  bilm->add_option("--data", data, "Data file")->required()->check(CLI::ExistingFile);
  data_flags.attach(bilm);
  bilm->add_option("--out", out, "Output contextual vectors (CTX1)")->required();
  bilm->add_option("--embed-dim", dim, "Token embedding dimension");
  bilm->add_option("--hidden-dim", hidden, "LSTM hidden dimension");
  bilm->add_option("--epochs", epochs, "Training epochs");
  bilm->add_option("--lr", lr, "Adam learning rate");
  bilm->add_option("--max-len", max_len, "Maximum sequence length");
  bilm->add_option("--min-count", min_count, "Minimum token count");
  bilm->add_option("--seed", seed, "Random seed");

  auto* ctx = app.add_subcommand("ctx-import", "Validate a CTX1 file of externally computed vectors");
  ctx->add_option("--input", input, "CTX1 file")->required()->check(CLI::ExistingFile);
  ctx->add_option("--data", data, "Data file whose row count must match")->check(CLI::ExistingFile);
  data_flags.attach(ctx);
  ctx->add_option("--seed", seed, "Accepted for uniformity");

  auto* ctx_out = app.add_subcommand("ctx-export", "Run a bi-LM checkpoint over a data file and write CTX1");
  ctx_out->add_option("--checkpoint", checkpoint, "Checkpoint of a bilm-contextual cell")->required()->check(CLI::ExistingFile);
  ctx_out->add_option("--data", data, "Data file")->required()->check(CLI::ExistingFile);
  ctx_out->add_option("--out", out, "Output contextual vectors (CTX1)")->required();
  data_flags.attach(ctx_out);
  ctx_out->add_option("--seed", seed, "Accepted for uniformity");

  auto* grad = app.add_subcommand("grad-check", "Finite-difference check of every assembly");
  grad->add_flag("--verbose", verbose, "Print every parameter group");
  grad->add_option("--seed", seed, "Random seed for the toy assemblies");

  auto* synth = app.add_subcommand("synth", "Write a generated dataset as TSV");
  synth->add_option("--kind", kind, "marker or polysemy");
  synth->add_option("--size", size, "Number of records");
  synth->add_option("--out", out, "Output file")->required();
  synth->add_option("--seed", seed, "Random seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return kExitInput;
  }

  try {
    if (*matrix) return cmd_matrix(config, out, seed);
    if (*train) return cmd_train(config, embedding, encoder, out, seed);
    if (*eval) return cmd_evaluate(checkpoint, data, config, embedding, encoder, data_flags);
    if (*glove) {
      if (!glove->count("--lr")) lr = 0.05;
      return cmd_glove(data, data_flags.resolve(), out, dim, window, epochs, lr, min_count, seed.value_or(0));
    }
    if (*bilm) {
      if (!bilm->count("--lr")) lr = 1e-2;
      if (!bilm->count("--epochs")) epochs = 5;
      return cmd_bilm(data, data_flags.resolve(), out, dim, hidden, epochs, lr, max_len, min_count, seed.value_or(0));
    }
    if (*ctx) return cmd_ctx_import(input, data, data_flags.resolve());
    if (*ctx_out) return cmd_ctx_export(checkpoint, data, data_flags.resolve(), out);
    if (*grad) return cmd_grad_check(seed.value_or(7), verbose);
    if (*synth) return cmd_synth(kind, size, out, seed.value_or(0));
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitInput;
}
