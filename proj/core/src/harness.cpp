#include <trolldet/harness.hpp>

#include <trolldet/synthetic.hpp>

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <map>
#include <variant>
#include <sstream>

namespace trolldet {

namespace {

using nlohmann::json;

std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out.push_back('"');
    out.push_back(c);
  }
  return out + "\"";
}

std::string mark_of(const ResultsTable& table, std::size_t i) {
  if (!table.cells[i].ok) return "failed";
  const bool best = table.best == i;
  const bool worst = table.worst == i;
  if (best && worst) return "best;worst";
  if (best) return "best";
  if (worst) return "worst";
  return "";
}

std::string pretraining_key(const ExperimentConfig& c) {
  std::ostringstream key;
  key << to_string(c.embedding) << '|' << c.seed << '|' << c.max_len << '|';
  switch (c.embedding) {
    case PathwayKind::kStaticTable:
      key << c.glove_vectors.string() << '|' << c.glove.dim << '|' << c.glove.window << '|' << c.glove.x_max << '|'
          << c.glove.alpha << '|' << c.glove.learning_rate << '|' << c.glove.epochs;
      break;
    case PathwayKind::kBiLmMixer:
    case PathwayKind::kPrecomputedMixer:
      key << c.precomputed.string() << '|' << c.bilm.embed_dim << '|' << c.bilm.hidden_dim << '|'
          << c.bilm.learning_rate << '|' << c.bilm.epochs << '|' << c.bilm.batch_size;
      break;
  }
  return key.str();
}

BiLmTrainConfig bilm_config(const ExperimentConfig& config, std::uint64_t seed) {
  BiLmTrainConfig out = config.bilm;
  out.seed = seed;
  out.max_len = config.max_len;
  return out;
}

}  // namespace

ResultsTable make_results_table(std::vector<std::string> embeddings, std::vector<std::string> encoders,
                                std::vector<RunResult> cells) {
  if (embeddings.empty() || encoders.empty()) throw InputError("results table needs at least one row and column");
  if (cells.size() != embeddings.size() * encoders.size()) {
    throw ShapeError("results table has " + std::to_string(cells.size()) + " cells for a " +
                     std::to_string(embeddings.size()) + " x " + std::to_string(encoders.size()) + " grid");
  }
  ResultsTable table{std::move(embeddings), std::move(encoders), std::move(cells), {}, {}};
  for (std::size_t i = 0; i < table.cells.size(); ++i) {
    const RunResult& c = table.cells[i];
    if (!c.ok) continue;
    if (!table.best || c.metrics.auc > table.cells[*table.best].metrics.auc) table.best = i;
    if (!table.worst || c.metrics.auc < table.cells[*table.worst].metrics.auc) table.worst = i;
  }
  return table;
}

std::string emit_table(const ResultsTable& table, TableFormat format) {
  if (table.cells.empty()) throw InputError("cannot emit an empty results table");
  std::ostringstream out;
  if (format == TableFormat::kCsv) {
    out << "embedding,encoder,accuracy,precision,recall,f1,auc,mark\n";
    for (std::size_t i = 0; i < table.cells.size(); ++i) {
      const RunResult& c = table.cells[i];
      out << csv_field(c.embedding) << ',' << csv_field(c.encoder) << ',';
      if (c.ok) {
        const MetricsReport& m = c.metrics;
        out << fixed3(m.accuracy) << ',' << fixed3(m.precision) << ',' << fixed3(m.recall) << ',' << fixed3(m.f1)
            << ',' << fixed3(m.auc);
      } else {
        out << ",,,,";
      }
      out << ',' << mark_of(table, i) << '\n';
    }
    return out.str();
  }

  out << "| Embedding | Encoder | Accuracy | Precision | Recall | F1 | AUC | Mark |\n";
  out << "|---|---|---:|---:|---:|---:|---:|---|\n";
  for (std::size_t i = 0; i < table.cells.size(); ++i) {
    const RunResult& c = table.cells[i];
    out << "| " << c.embedding << " | " << c.encoder << " | ";
    if (c.ok) {
      const MetricsReport& m = c.metrics;
      std::string auc = fixed3(m.auc);
      if (table.best == i) {
        auc = "**" + auc + "**";
      } else if (table.worst == i) {
        auc = "***" + auc + "***";
      }
      out << fixed3(m.accuracy) << " | " << fixed3(m.precision) << " | " << fixed3(m.recall) << " | "
          << fixed3(m.f1) << " | " << auc << " | " << mark_of(table, i) << " |\n";
    } else {
      out << "- | - | - | - | - | failed: " << c.error << " |\n";
    }
  }
  return out.str();
}

std::uint64_t cell_seed(std::uint64_t base_seed, std::string_view embedding, std::string_view encoder) {
  std::string key = std::to_string(base_seed);
  key.push_back('\0');
  key.append(embedding);
  key.push_back('\0');
  key.append(encoder);
  return fnv1a(key);
}

std::uint64_t embedding_seed(std::uint64_t base_seed, std::string_view embedding) {
  std::string key = std::to_string(base_seed);
  key.push_back('\0');
  key.append(embedding);
  return fnv1a(key);
}

PreparedData prepare_data(const ExperimentConfig& config) {
  std::vector<RawRecord> records;
  if (config.synthetic == "marker") {
    records = make_marker_dataset(config.synthetic_size, config.seed);
  } else if (config.synthetic == "polysemy") {
    records = make_polysemy_dataset(config.synthetic_size, config.seed);
  } else {
    if (config.data.empty()) throw InputError("config sets neither 'data' nor 'synthetic'");
    records = load_dataset(config.data, config.format);
  }
  PreparedData out;
  out.source_rows = records.size();
  out.documents = to_documents(records);
  out.split = split_dataset(out.documents, config.split, config.seed);
  if (out.split.train.empty() || out.split.validation.empty() || out.split.test.empty()) {
    throw InputError("dataset of " + std::to_string(out.documents.size()) +
                     " documents leaves an empty train, validation or test split");
  }
  out.vocabulary = build_vocabulary(out.split.train, config.min_count);
  return out;
}

PretrainedEmbeddings pretrain_embeddings(const ExperimentConfig& config, const PreparedData& data) {
  PretrainedEmbeddings out;
  const std::uint64_t seed = embedding_seed(config.seed, to_string(config.embedding));
  switch (config.embedding) {
    case PathwayKind::kStaticTable: {
      if (!config.glove_vectors.empty()) {
        out.table = load_embedding_text(config.glove_vectors, config.glove.dim, data.vocabulary);
      } else {
        GloveTrainConfig glove = config.glove;
        glove.seed = seed;
        const CooccurrenceMatrix cooc = build_cooccurrence(data.split.train, data.vocabulary, glove.window,
                                                           CooccurrenceWeighting::kInverseDistance);
        out.table = train_glove(cooc, glove);
      }
      break;
    }
    case PathwayKind::kBiLmMixer:
      out.bilm = train_bilm(data.split.train, data.vocabulary, bilm_config(config, seed)).params;
      break;
    case PathwayKind::kPrecomputedMixer: {
      std::vector<ContextualLayers> layers;
      if (!config.precomputed.empty()) {
        layers = load_precomputed(config.precomputed);
      } else {
        // Export a bi-LM through the container format, as an external tool would.
        const BiLmParams bilm = train_bilm(data.split.train, data.vocabulary, bilm_config(config, seed)).params;
        std::vector<ContextualLayers> exported;
        exported.reserve(data.documents.size());
        for (const Document& doc : data.documents) {
          const EncodedIds ids = encode(doc.tokens, data.vocabulary, config.max_len);
          exported.push_back(run_bilm(bilm, ids.ids, ids.valid_length));
        }
        layers = decode_precomputed(encode_precomputed(exported));
      }
      if (layers.size() != data.source_rows) {
        throw ShapeError("precomputed file holds " + std::to_string(layers.size()) + " documents, dataset has " +
                         std::to_string(data.source_rows));
      }
      out.precomputed.reserve(layers.size());
      for (ContextualLayers& l : layers) out.precomputed.push_back(std::make_shared<const ContextualLayers>(std::move(l)));
      break;
    }
  }
  return out;
}

std::vector<Example> make_examples(const std::vector<Document>& docs, const Vocabulary& vocab,
                                   const ExperimentConfig& config, const PretrainedEmbeddings& embeddings) {
  std::vector<Example> out;
  out.reserve(docs.size());
  for (const Document& doc : docs) {
    Example ex;
    ex.input = encode(doc.tokens, vocab, config.max_len);
    ex.label = doc.label;
    if (config.embedding == PathwayKind::kPrecomputedMixer) {
      if (doc.source_index >= embeddings.precomputed.size()) {
        throw ShapeError("no precomputed vectors for data row " + std::to_string(doc.source_index + 1));
      }
      ex.context = embeddings.precomputed[doc.source_index];
    }
    out.push_back(std::move(ex));
  }
  return out;
}

ModelAssembly make_assembly(const ExperimentConfig& config, const PretrainedEmbeddings& embeddings,
                            std::uint64_t seed) {
  const AssemblySpec spec = config.assembly_spec();
  switch (config.embedding) {
    case PathwayKind::kStaticTable:
      if (!embeddings.table) throw InputError("static pathway has no embedding table");
      return make_static_assembly(spec, *embeddings.table, seed);
    case PathwayKind::kBiLmMixer:
      if (!embeddings.bilm) throw InputError("bi-LM pathway has no trained bi-LM");
      return make_bilm_assembly(spec, *embeddings.bilm, seed);
    case PathwayKind::kPrecomputedMixer: {
      if (embeddings.precomputed.empty()) throw InputError("precomputed pathway has no vectors");
      const ContextualLayers& first = *embeddings.precomputed.front();
      return make_precomputed_assembly(spec, first.num_layers(), first.dim(), seed);
    }
  }
  throw InputError("unknown pathway");
}

void RunLog::epoch(const std::string& embedding, const std::string& encoder, const EpochRecord& record) const {
  if (!out) return;
  const json line = {{"embedding", embedding},
                     {"encoder", encoder},
                     {"epoch", record.epoch},
                     {"train_loss", record.train_loss},
                     {"validation_loss", record.validation_loss},
                     {"validation_auc", record.validation_auc}};
  *out << line.dump() << '\n';
}

CellOutput run_cell(const ExperimentConfig& config, const PreparedData& data, const PretrainedEmbeddings& embeddings,
                    const RunLog& log) {
  CellOutput out;
  RunResult& r = out.result;
  r.embedding = to_string(config.embedding);
  r.encoder = to_string(config.encoder);
  r.seed = cell_seed(config.seed, r.embedding, r.encoder);
  const auto start = std::chrono::steady_clock::now();
  try {
    ModelAssembly model = make_assembly(config, embeddings, r.seed);
    DatasetSplit<Example> split;
    split.seed = data.split.seed;
    split.train = make_examples(data.split.train, data.vocabulary, config, embeddings);
    split.validation = make_examples(data.split.validation, data.vocabulary, config, embeddings);
    split.test = make_examples(data.split.test, data.vocabulary, config, embeddings);
    TrainConfig train = config.train;
    train.seed = r.seed;
    TrainOutcome outcome = train_model(std::move(model), split, train,
                                       [&](const EpochRecord& e) { log.epoch(r.embedding, r.encoder, e); });
    r.metrics = evaluate(outcome.model, split.test);
    r.history = std::move(outcome.history);
    r.ok = true;
    out.checkpoint = Checkpoint{std::move(outcome.model), data.vocabulary.tokens(), r.seed,
                                r.history.selected_epoch.value_or(0)};
  } catch (const std::exception& e) {
    r.ok = false;
    r.error = e.what();
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return out;
}

ResultsTable run_matrix(const std::vector<ExperimentConfig>& configs, const PreparedData& data, const RunLog& log,
                        const std::filesystem::path& checkpoint_dir) {
  if (configs.empty()) throw InputError("run_matrix needs at least one cell");
  std::vector<PathwayKind> rows;
  std::vector<EncoderKind> cols;
  std::map<std::pair<PathwayKind, EncoderKind>, const ExperimentConfig*> by_cell;
  for (const ExperimentConfig& c : configs) {
    if (std::find(rows.begin(), rows.end(), c.embedding) == rows.end()) rows.push_back(c.embedding);
    if (std::find(cols.begin(), cols.end(), c.encoder) == cols.end()) cols.push_back(c.encoder);
    if (!by_cell.emplace(std::make_pair(c.embedding, c.encoder), &c).second) {
      throw InputError("cell " + to_string(c.embedding) + "/" + to_string(c.encoder) + " appears twice");
    }
  }
  if (by_cell.size() != rows.size() * cols.size()) throw InputError("matrix configs do not form a rectangular grid");

  std::map<std::string, std::variant<PretrainedEmbeddings, std::string>> pretrained;
  std::vector<RunResult> cells;
  for (PathwayKind row : rows) {
    for (EncoderKind col : cols) {
      const ExperimentConfig& config = *by_cell.at({row, col});
      const std::string key = pretraining_key(config);
      auto it = pretrained.find(key);
      if (it == pretrained.end()) {
        try {
          it = pretrained.emplace(key, pretrain_embeddings(config, data)).first;
        } catch (const std::exception& e) {
          it = pretrained.emplace(key, std::string("embedding pretraining failed: ") + e.what()).first;
        }
      }
      if (const std::string* failure = std::get_if<std::string>(&it->second)) {
        RunResult r;
        r.embedding = to_string(row);
        r.encoder = to_string(col);
        r.seed = cell_seed(config.seed, r.embedding, r.encoder);
        r.error = *failure;
        cells.push_back(std::move(r));
        continue;
      }
      CellOutput cell = run_cell(config, data, std::get<PretrainedEmbeddings>(it->second), log);
      if (cell.checkpoint && !checkpoint_dir.empty()) {
        std::filesystem::create_directories(checkpoint_dir);
        save_checkpoint(*cell.checkpoint, checkpoint_dir / (cell.result.embedding + "_" + cell.result.encoder + ".tgck"));
      }
      cells.push_back(std::move(cell.result));
    }
  }
  std::vector<std::string> row_names, col_names;
  for (PathwayKind r : rows) row_names.push_back(to_string(r));
  for (EncoderKind c : cols) col_names.push_back(to_string(c));
  return make_results_table(std::move(row_names), std::move(col_names), std::move(cells));
}

std::string results_json(const ResultsTable& table) {
  json cells = json::array();
  for (const RunResult& c : table.cells) {
    json cell = {{"embedding", c.embedding}, {"encoder", c.encoder}, {"seed", c.seed},
                 {"ok", c.ok},               {"seconds", c.seconds}};
    if (c.ok) {
      cell["metrics"] = {{"accuracy", c.metrics.accuracy}, {"precision", c.metrics.precision},
                         {"recall", c.metrics.recall},     {"f1", c.metrics.f1},
                         {"auc", c.metrics.auc}};
      cell["epochs"] = c.history.epochs.size();
      if (c.history.selected_epoch) cell["selected_epoch"] = *c.history.selected_epoch;
    } else {
      cell["error"] = c.error;
    }
    cells.push_back(std::move(cell));
  }
  json out = {{"embeddings", table.embeddings}, {"encoders", table.encoders}, {"cells", cells}};
  if (table.best) out["best"] = *table.best;
  if (table.worst) out["worst"] = *table.worst;
  return out.dump(2) + "\n";
}

ResultsTable run_matrix_to_directory(const GridConfig& grid, const std::filesystem::path& out_dir) {
  const std::vector<ExperimentConfig> configs = grid.cells();
  if (configs.empty()) throw InputError("grid config has no cells");
  const PreparedData data = prepare_data(grid.base);
  std::filesystem::create_directories(out_dir);
  std::ofstream runs(out_dir / "runs.jsonl", std::ios::trunc);
  if (!runs) throw std::runtime_error("cannot write " + (out_dir / "runs.jsonl").string());
  const ResultsTable table = run_matrix(configs, data, RunLog{&runs}, out_dir / "checkpoints");
  const auto write = [&](const char* name, const std::string& text) {
    std::ofstream f(out_dir / name, std::ios::binary | std::ios::trunc);
    f << text;
    if (!f) throw std::runtime_error("cannot write " + (out_dir / name).string());
  };
  write("table.md", emit_table(table, TableFormat::kMarkdown));
  write("table.csv", emit_table(table, TableFormat::kCsv));
  write("results.json", results_json(table));
  return table;
}

}  // namespace trolldet
