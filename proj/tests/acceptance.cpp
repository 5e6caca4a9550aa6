// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero when any criterion fails.

#include "oracles.hpp"

#include <trolldet/checkpoint.hpp>
#include <trolldet/config.hpp>
#include <trolldet/corpus.hpp>
#include <trolldet/encoders.hpp>
#include <trolldet/gradcheck.hpp>
#include <trolldet/harness.hpp>
#include <trolldet/metrics.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>

using namespace trolldet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Outcome a1_metric_oracle() {
  const auto start = Clock::now();
  Rng rng(101);
  std::size_t mismatches = 0;
  for (int i = 0; i < 1000; ++i) {
    // Every tenth matrix leaves one or two cells at zero to reach the degenerate branches.
    const auto draw = [&] { return (i % 10 == 0 && rng.below(2) == 0) ? 0 : rng.below(5000); };
    ConfusionMatrix cm{draw(), draw(), draw(), draw()};
    if (cm.total() == 0) cm.tn = 1;
    const ClassificationMetrics got = classification_metrics(cm);
    const oracle::ExactMetrics want = oracle::exact_metrics(static_cast<long long>(cm.tp), static_cast<long long>(cm.fp),
                                                            static_cast<long long>(cm.tn), static_cast<long long>(cm.fn));
    if (oracle::round12(got.accuracy) != oracle::round12(want.accuracy) ||
        oracle::round12(got.precision) != oracle::round12(want.precision) ||
        oracle::round12(got.recall) != oracle::round12(want.recall) ||
        oracle::round12(got.f1) != oracle::round12(want.f1)) {
      ++mismatches;
    }
  }
  const double s = seconds_since(start);
  return {mismatches == 0 && s < 5.0,
          std::to_string(mismatches) + " of 1000 matrices differ, " + fmt("%.3f s", s)};
}

Outcome a2_auc_dual() {
  const auto start = Clock::now();
  Rng rng(202);
  double worst_dual = 0.0, worst_brute = 0.0;
  int sets = 0;
  while (sets < 500) {
    const std::size_t n = 2 + rng.below(49);
    std::vector<ScoredExample> s(n);
    for (auto& e : s) {
      e.score = static_cast<double>(rng.below(8)) / 8.0;  // coarse grid forces ties
      e.label = static_cast<int>(rng.below(2));
    }
    const bool both = std::any_of(s.begin(), s.end(), [](auto& e) { return e.label == 1; }) &&
                      std::any_of(s.begin(), s.end(), [](auto& e) { return e.label == 0; });
    if (!both) continue;
    const double pairwise = auc_pairwise(s);
    worst_dual = std::max(worst_dual, std::abs(pairwise - auc_trapezoid(roc_curve(s))));
    worst_brute = std::max(worst_brute, std::abs(pairwise - oracle::brute_force_auc(s)));
    ++sets;
  }
  const double secs = seconds_since(start);
  return {worst_dual <= 1e-9 && worst_brute <= 1e-12 && secs < 10.0,
          "max |pairwise - trapezoid| " + fmt("%.2e", worst_dual) + ", max |pairwise - brute force| " +
              fmt("%.2e", worst_brute) + ", " + fmt("%.3f s", secs)};
}

Outcome a3_gradients() {
  const auto start = Clock::now();
  GradCheckConfig config;
  const GradCheckReport report = run_gradient_suite(config);
  const double secs = seconds_since(start);
  std::size_t failed = 0;
  for (const GroupCheck& g : report.groups) failed += g.passed ? 0 : 1;
  const bool small = config.embed_dim <= 8 && config.hidden_dim <= 8 && config.d_model <= 8 && config.max_len <= 5;
  return {report.passed() && small && secs < 60.0,
          std::to_string(report.groups.size()) + " groups, " + std::to_string(failed) + " failed, worst " +
              fmt("%.2e", report.max_relative_error()) + ", " + fmt("%.2f s", secs)};
}

const char* kMarkerGrid =
    "synthetic = marker\n"
    "synthetic_size = 2000\n"
    "seed = 13\n"
    "max_len = 16\n"
    "glove.dim = 16\n"
    "glove.epochs = 100\n"
    "glove.learning_rate = 0.01\n"
    "bilm.embed_dim = 16\n"
    "bilm.hidden_dim = 16\n"
    "bilm.epochs = 2\n"
    "train.max_epochs = 50\n"
    "train.patience = 5\n";

Outcome a4_separability() {
  const GridConfig grid = parse_grid_config(kMarkerGrid);
  const auto configs = grid.cells();
  const PreparedData data = prepare_data(configs.front());
  const ResultsTable table = run_matrix(configs, data);
  bool pass = table.cells.size() == 9;
  double min_auc = 1.0, max_seconds = 0.0;
  std::size_t max_epochs = 0;
  std::ostringstream detail;
  for (const RunResult& c : table.cells) {
    if (!c.ok) {
      pass = false;
      detail << c.embedding << "/" << c.encoder << " failed: " << c.error << "; ";
      continue;
    }
    min_auc = std::min(min_auc, c.metrics.auc);
    max_seconds = std::max(max_seconds, c.seconds);
    max_epochs = std::max(max_epochs, c.history.epochs.size());
    if (c.metrics.auc < 0.95 || c.history.epochs.size() > 50 || c.seconds > 300.0) pass = false;
  }
  detail << table.cells.size() << " cells, min test AUC " << fmt("%.4f", min_auc) << ", most epochs " << max_epochs
         << ", slowest cell " << fmt("%.2f s", max_seconds);
  return {pass, detail.str()};
}

Outcome a5_polysemy() {
  const auto start = Clock::now();
  const GridConfig grid = parse_grid_config(
      "synthetic = polysemy\n"
      "synthetic_size = 2000\n"
      "seed = 13\n"
      "max_len = 16\n"
      "embeddings = glove-static, bilm-contextual\n"
      "encoders = cnn\n"
      "cnn.windows = 1\n"
      "cnn.pooling = average\n"
      "glove.learning_rate = 0.01\n"
      "bilm.epochs = 3\n"
      "train.max_epochs = 30\n"
      "train.patience = 5\n");
  const auto configs = grid.cells();
  const PreparedData data = prepare_data(configs.front());
  const ResultsTable table = run_matrix(configs, data);
  const RunResult& fixed = table.at(0, 0);
  const RunResult& contextual = table.at(1, 0);
  const double secs = seconds_since(start);
  const bool pass = fixed.ok && contextual.ok && fixed.metrics.auc <= 0.55 && contextual.metrics.auc >= 0.90 &&
                    secs < 600.0;
  return {pass, "static AUC " + fmt("%.4f", fixed.metrics.auc) + " (limit 0.55), bi-LM AUC " +
                    fmt("%.4f", contextual.metrics.auc) + " (limit 0.90), " + fmt("%.1f s", secs)};
}

RunResult reported(const char* emb, const char* enc, double acc, double p, double r, double f1, double auc) {
  RunResult c;
  c.embedding = emb;
  c.encoder = enc;
  c.ok = true;
  c.metrics.accuracy = acc;
  c.metrics.precision = p;
  c.metrics.recall = r;
  c.metrics.f1 = f1;
  c.metrics.auc = auc;
  return c;
}

Outcome a6_table() {
  const std::vector<RunResult> cells{
      reported("BERT", "CNN", 0.838, 0.849, 0.822, 0.835, 0.915),
      reported("BERT", "GRU", 0.845, 0.865, 0.817, 0.840, 0.924),
      reported("BERT", "Transformer", 0.856, 0.825, 0.904, 0.863, 0.909),
      reported("ELMo", "CNN", 0.842, 0.833, 0.854, 0.844, 0.916),
      reported("ELMo", "GRU", 0.855, 0.839, 0.878, 0.859, 0.929),
      reported("ELMo", "Transformer", 0.843, 0.827, 0.867, 0.847, 0.917),
      reported("GloVe", "CNN", 0.743, 0.743, 0.741, 0.742, 0.818),
      reported("GloVe", "GRU", 0.767, 0.760, 0.779, 0.769, 0.831),
      reported("GloVe", "Transformer", 0.732, 0.749, 0.698, 0.723, 0.806),
  };
  const ResultsTable table = make_results_table({"BERT", "ELMo", "GloVe"}, {"CNN", "GRU", "Transformer"}, cells);
  const std::string md = emit_table(table, TableFormat::kMarkdown);
  const std::string csv = emit_table(table, TableFormat::kCsv);
  std::size_t rows = 0;
  for (char ch : md) rows += ch == '\n';
  rows -= 2;
  const bool best = table.best == 4u &&
                    md.find("| ELMo | GRU | 0.855 | 0.839 | 0.878 | 0.859 | **0.929** | best |") != std::string::npos;
  const bool worst =
      table.worst == 8u &&
      md.find("| GloVe | Transformer | 0.732 | 0.749 | 0.698 | 0.723 | ***0.806*** | worst |") != std::string::npos;
  const bool three_decimals = csv.find("BERT,Transformer,0.856,0.825,0.904,0.863,0.909,\n") != std::string::npos;
  bool stable = true;
  for (int i = 0; i < 5; ++i) {
    const ResultsTable again = make_results_table({"BERT", "ELMo", "GloVe"}, {"CNN", "GRU", "Transformer"}, cells);
    stable = stable && emit_table(again, TableFormat::kMarkdown) == md && emit_table(again, TableFormat::kCsv) == csv;
  }
  return {rows == 9 && best && worst && three_decimals && stable,
          std::to_string(rows) + " rows, best ELMo/GRU " + (best ? "ok" : "wrong") + ", worst GloVe/Transformer " +
              (worst ? "ok" : "wrong") + ", byte-stable " + (stable ? "yes" : "no")};
}

Outcome a7_split() {
  const std::size_t n = 18514;
  const SplitSizes sizes = split_sizes(n, SplitRatios{});
  std::vector<std::size_t> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = i;
  const DatasetSplit<std::size_t> split = split_dataset(ids, SplitRatios{}, 13);
  const bool pass = sizes.train == 12959 && sizes.validation == 1851 && sizes.test == 3704 &&
                    split.train.size() == 12959 && split.validation.size() == 1851 && split.test.size() == 3704;
  return {pass, "N=18514 -> " + std::to_string(split.train.size()) + "/" + std::to_string(split.validation.size()) +
                    "/" + std::to_string(split.test.size()) +
                    "; the reported test count 3702 is 2 lower because 12959 + 1851 + 3702 = 18512"};
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

Outcome a8_determinism() {
  const GridConfig grid = parse_grid_config(
      "synthetic = marker\n"
      "synthetic_size = 300\n"
      "seed = 21\n"
      "max_len = 12\n"
      "glove.dim = 8\n"
      "glove.epochs = 30\n"
      "glove.learning_rate = 0.01\n"
      "bilm.embed_dim = 8\n"
      "bilm.hidden_dim = 6\n"
      "bilm.epochs = 1\n"
      "cnn.channels = 4\n"
      "gru.hidden = 8\n"
      "transformer.d_model = 8\n"
      "transformer.ff = 16\n"
      "train.max_epochs = 4\n"
      "train.patience = 2\n");
  const fs::path root = fs::temp_directory_path() / "trolldet_acceptance_a8";
  fs::remove_all(root);
  run_matrix_to_directory(grid, root / "first");
  run_matrix_to_directory(grid, root / "second");
  const std::string a = slurp(root / "first" / "table.csv");
  const std::string b = slurp(root / "second" / "table.csv");
  const std::string ma = slurp(root / "first" / "table.md");
  const std::string mb = slurp(root / "second" / "table.md");
  fs::remove_all(root);
  return {!a.empty() && a == b && ma == mb,
          "table.csv " + std::to_string(a.size()) + " bytes, identical " + (a == b ? "yes" : "no")};
}

// A9 pieces.

EmbeddedSequence random_seq(std::size_t rows, std::size_t cols, Rng& rng) {
  return Mat::NullaryExpr(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols),
                          [&] { return rng.uniform(-1, 1); });
}

bool padding_invariance(Rng& rng) {
  const std::size_t d = 5, valid = 4;
  const auto cnn = CnnEncoderParams::make(d, {1, 2, 3}, 4, Pooling::kMax, rng);
  const auto cnn_avg = CnnEncoderParams::make(d, {2}, 4, Pooling::kAverage, rng);
  const auto gru = GruCellParams::make(d, 6, rng);
  const auto tf = TransformerEncoderParams::make(d, 8, 2, 16, 2, 10, rng);
  for (int trial = 0; trial < 20; ++trial) {
    EmbeddedSequence a = random_seq(10, d, rng);
    EmbeddedSequence b = a;
    b.bottomRows(10 - valid) = random_seq(10 - valid, d, rng);
    EmbeddedSequence shorter = a.topRows(valid + 1);
    shorter.bottomRows(1).setZero();
    const bool ok = cnn_encode(cnn, a, valid) == cnn_encode(cnn, b, valid) &&
                    cnn_encode(cnn_avg, a, valid) == cnn_encode(cnn_avg, shorter, valid) &&
                    gru_encode(gru, a, valid) == gru_encode(gru, b, valid) &&
                    gru_encode(gru, a, valid) == gru_encode(gru, shorter, valid) &&
                    (transformer_encode(tf, a, valid) - transformer_encode(tf, b, valid)).cwiseAbs().maxCoeff() <= 1e-12 &&
                    (transformer_encode(tf, a, valid) - transformer_encode(tf, shorter, valid)).cwiseAbs().maxCoeff() <=
                        1e-12;
    if (!ok) return false;
  }
  return true;
}

bool attention_rows_normalised(Rng& rng) {
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t t = 2 + rng.below(8);
    const std::size_t valid = 1 + rng.below(t);
    const Mat w = attention_weights(random_seq(t, 4, rng) * 5.0, random_seq(t, 4, rng) * 5.0, valid);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      if (std::abs(w.row(r).sum() - 1.0) > 1e-12) return false;
      if ((w.row(r).tail(static_cast<Eigen::Index>(t - valid)).array() != 0.0).any()) return false;
    }
  }
  return true;
}

bool gru_bounded(Rng& rng) {
  const auto cell = GruCellParams::make(3, 5, rng);
  for (int trial = 0; trial < 50; ++trial) {
    const RowVec h = gru_encode(cell, random_seq(12, 3, rng) * 50.0, 12);
    if (h.cwiseAbs().maxCoeff() > 1.0) return false;
  }
  return true;
}

bool mixer_shift_invariant(Rng& rng) {
  ContextualLayers layers;
  for (int l = 0; l < 3; ++l) layers.layers.push_back(random_seq(6, 4, rng));
  layers.valid_length = 5;
  for (int trial = 0; trial < 20; ++trial) {
    LayerMixWeights w = LayerMixWeights::make(3);
    w.s_raw.value = random_seq(1, 3, rng);
    w.gamma.value(0, 0) = rng.uniform(0.5, 2.0);
    LayerMixWeights shifted = w;
    shifted.s_raw.value.array() += rng.uniform(-10, 10);
    if ((mix_layers(layers, w) - mix_layers(layers, shifted)).cwiseAbs().maxCoeff() > 1e-12) return false;
  }
  return true;
}

bool auc_monotone_invariant(Rng& rng) {
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<ScoredExample> s(30);
    for (auto& e : s) {
      e.score = rng.uniform(-2, 2);
      e.label = static_cast<int>(rng.below(2));
    }
    s[0].label = 1;
    s[1].label = 0;
    std::vector<ScoredExample> t = s;
    for (auto& e : t) e.score = oracle::sigmoid(3.0 * e.score) + 7.0;
    if (auc(s) != auc(t)) return false;
  }
  return true;
}

bool checkpoint_bit_exact() {
  for (PathwayKind p : {PathwayKind::kStaticTable, PathwayKind::kBiLmMixer, PathwayKind::kPrecomputedMixer}) {
    for (EncoderKind e : {EncoderKind::kCnn, EncoderKind::kGru, EncoderKind::kTransformer}) {
      std::vector<Example> batch;
      Checkpoint ck;
      ck.model = make_toy_assembly(p, e, GradCheckConfig{}, batch);
      ck.model.round_to_float32();
      const std::string bytes = encode_checkpoint(ck);
      const Checkpoint back = decode_checkpoint(bytes);
      if (encode_checkpoint(back) != bytes) return false;
      const auto a = ck.model.parameters();
      const auto b = back.model.parameters();
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i]->value != b[i]->value) return false;
      }
      for (const Example& ex : batch) {
        if (forward(ck.model, ex) != forward(back.model, ex)) return false;
      }
    }
  }
  return true;
}

Outcome a9_invariants() {
  const auto start = Clock::now();
  Rng rng(909);
  const std::pair<const char*, std::function<bool()>> checks[] = {
      {"padding", [&] { return padding_invariance(rng); }},
      {"attention", [&] { return attention_rows_normalised(rng); }},
      {"gru-bound", [&] { return gru_bounded(rng); }},
      {"mixer-shift", [&] { return mixer_shift_invariant(rng); }},
      {"auc-monotone", [&] { return auc_monotone_invariant(rng); }},
      {"checkpoint", [] { return checkpoint_bit_exact(); }},
  };
  bool pass = true;
  std::string detail;
  for (const auto& [name, check] : checks) {
    const bool ok = check();
    pass = pass && ok;
    detail += std::string(name) + (ok ? " ok, " : " FAILED, ");
  }
  const double secs = seconds_since(start);
  return {pass && secs < 60.0, detail + fmt("%.2f s", secs)};
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"A1 metric oracle equivalence", a1_metric_oracle},
      {"A2 AUC dual computation", a2_auc_dual},
      {"A3 gradient suite", a3_gradients},
      {"A4 synthetic separability", a4_separability},
      {"A5 context sensitivity", a5_polysemy},
      {"A6 table fidelity", a6_table},
      {"A7 split arithmetic", a7_split},
      {"A8 determinism", a8_determinism},
      {"A9 invariant suites", a9_invariants},
  };
  int failures = 0;
  for (const auto& [name, run] : criteria) {
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}
