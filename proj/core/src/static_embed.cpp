#include <trolldet/static_embed.hpp>

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace trolldet {

EmbeddingTable load_embedding_text(const std::filesystem::path& path, std::size_t expected_dim,
                                   const Vocabulary& vocab) {
  if (expected_dim == 0) throw InputError("embedding dimension must be positive");
  std::ifstream in(path);
  if (!in) throw InputError("cannot open embedding file " + path.string());

  EmbeddingTable table;
  table.provenance = Provenance::kLoaded;
  table.matrix = Mat::Zero(static_cast<Eigen::Index>(vocab.size()), static_cast<Eigen::Index>(expected_dim));
  std::vector<bool> filled(vocab.size(), false);

  std::string line;
  std::size_t line_no = 0;
  std::vector<double> values;
  values.reserve(expected_dim);
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream fields(line);
    std::string token;
    if (!(fields >> token)) continue;
    values.clear();
    std::string field;
    while (fields >> field) {
      double v = 0.0;
      const char* first = field.data();
      const char* last = field.data() + field.size();
      const auto [ptr, ec] = std::from_chars(first, last, v);
      if (ec != std::errc() || ptr != last || !std::isfinite(v)) {
        throw InputError("line " + std::to_string(line_no) + ": cannot parse number '" + field + "'");
      }
      values.push_back(v);
    }
    if (values.size() != expected_dim) {
      throw InputError("line " + std::to_string(line_no) + ": expected " + std::to_string(expected_dim) +
                       " values, found " + std::to_string(values.size()));
    }
    if (!vocab.contains(token)) continue;
    const TokenId id = vocab.id(token);
    if (id == Vocabulary::kPad || filled[id]) continue;
    filled[id] = true;
    for (std::size_t j = 0; j < expected_dim; ++j) {
      table.matrix(id, static_cast<Eigen::Index>(j)) = values[j];
    }
  }
  for (std::size_t id = 1; id < vocab.size(); ++id) {
    if (filled[id]) {
      ++table.hits;
    } else {
      ++table.misses;
    }
  }
  return table;
}

void save_embedding_text(const EmbeddingTable& table, const Vocabulary& vocab, const std::filesystem::path& path) {
  if (table.rows() != vocab.size()) throw ShapeError("embedding table rows do not match vocabulary size");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write embedding file " + path.string());
  char buf[64];
  for (std::size_t id = 1; id < table.rows(); ++id) {
    out << vocab.token(static_cast<TokenId>(id));
    for (Eigen::Index j = 0; j < table.matrix.cols(); ++j) {
      const auto res = std::to_chars(buf, buf + sizeof(buf), table.matrix(static_cast<Eigen::Index>(id), j));
      out << ' ' << std::string_view(buf, static_cast<std::size_t>(res.ptr - buf));
    }
    out << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

CooccurrenceMatrix build_cooccurrence(const std::vector<Document>& docs, const Vocabulary& vocab, std::size_t window,
                                      CooccurrenceWeighting weighting) {
  if (window < 1) throw InputError("co-occurrence window must be >= 1");
  CooccurrenceMatrix m;
  m.vocab_size = vocab.size();
  m.window = window;
  m.weighting = weighting;
  std::vector<TokenId> ids;
  for (const Document& doc : docs) {
    ids.clear();
    for (const std::string& t : doc.tokens) ids.push_back(vocab.id(t));
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] <= Vocabulary::kUnk) continue;
      const std::size_t lo = i >= window ? i - window : 0;
      const std::size_t hi = std::min(ids.size() - 1, i + window);
      for (std::size_t j = lo; j <= hi; ++j) {
        if (j == i || ids[j] <= Vocabulary::kUnk) continue;
        const std::size_t distance = j > i ? j - i : i - j;
        const double w = weighting == CooccurrenceWeighting::kInverseDistance ? 1.0 / static_cast<double>(distance) : 1.0;
        m.counts[{ids[i], ids[j]}] += w;
      }
    }
  }
  return m;
}

void GloveTrainConfig::validate() const {
  if (dim == 0 || window == 0 || epochs == 0) throw InputError("glove: dim, window and epochs must be positive");
  if (!(x_max > 0.0)) throw InputError("glove: x_max must be positive");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw InputError("glove: alpha must lie in (0, 1]");
  if (!(learning_rate > 0.0)) throw InputError("glove: learning rate must be positive");
}

double glove_weight(double x, double x_max, double alpha) {
  if (x >= x_max) return 1.0;
  return std::pow(x / x_max, alpha);
}

GloveFactors init_glove_factors(std::size_t vocab_size, const GloveTrainConfig& config) {
  Rng rng(config.seed);
  const auto v = static_cast<Eigen::Index>(vocab_size);
  const auto d = static_cast<Eigen::Index>(config.dim);
  const double limit = 0.5 / static_cast<double>(config.dim);
  GloveFactors f{Mat(v, d), Mat(v, d), Eigen::VectorXd(v), Eigen::VectorXd(v)};
  fill_uniform(f.word, rng, -limit, limit);
  fill_uniform(f.context, rng, -limit, limit);
  for (Eigen::Index i = 0; i < v; ++i) f.word_bias(i) = rng.uniform(-limit, limit);
  for (Eigen::Index i = 0; i < v; ++i) f.context_bias(i) = rng.uniform(-limit, limit);
  return f;
}

double glove_loss(const CooccurrenceMatrix& cooc, const GloveFactors& f, const GloveTrainConfig& config) {
  double loss = 0.0;
  for (const auto& [key, n] : cooc.counts) {
    const auto [w, c] = key;
    const double diff =
        f.word.row(w).dot(f.context.row(c)) + f.word_bias(w) + f.context_bias(c) - std::log(n);
    loss += glove_weight(n, config.x_max, config.alpha) * diff * diff;
  }
  return loss;
}

double glove_loss_and_gradient(const CooccurrenceMatrix& cooc, const GloveFactors& f, const GloveTrainConfig& config,
                               GloveFactors& grad) {
  grad.word.setZero(f.word.rows(), f.word.cols());
  grad.context.setZero(f.context.rows(), f.context.cols());
  grad.word_bias.setZero(f.word_bias.size());
  grad.context_bias.setZero(f.context_bias.size());
  double loss = 0.0;
  for (const auto& [key, n] : cooc.counts) {
    const auto [w, c] = key;
    const double diff =
        f.word.row(w).dot(f.context.row(c)) + f.word_bias(w) + f.context_bias(c) - std::log(n);
    const double weight = glove_weight(n, config.x_max, config.alpha);
    loss += weight * diff * diff;
    const double g = 2.0 * weight * diff;
    grad.word.row(w) += g * f.context.row(c);
    grad.context.row(c) += g * f.word.row(w);
    grad.word_bias(w) += g;
    grad.context_bias(c) += g;
  }
  return loss;
}

EmbeddingTable train_glove(const CooccurrenceMatrix& cooc, const GloveTrainConfig& config, GloveTrace* trace) {
  config.validate();
  if (cooc.empty()) throw InputError("train_glove: co-occurrence matrix is empty");
  GloveFactors f = init_glove_factors(cooc.vocab_size, config);
  GloveFactors grad;
  double loss = 0.0;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    loss = glove_loss_and_gradient(cooc, f, config, grad);
    if (!std::isfinite(loss)) {
      throw DivergenceError("glove: non-finite loss at epoch " + std::to_string(epoch));
    }
    if (trace) trace->losses.push_back(loss);
    f.word -= config.learning_rate * grad.word;
    f.context -= config.learning_rate * grad.context;
    f.word_bias -= config.learning_rate * grad.word_bias;
    f.context_bias -= config.learning_rate * grad.context_bias;
  }
  loss = glove_loss(cooc, f, config);
  if (!std::isfinite(loss)) throw DivergenceError("glove: non-finite loss after the final epoch");
  if (trace) trace->losses.push_back(loss);

  EmbeddingTable table;
  table.provenance = Provenance::kTrained;
  table.matrix = f.word + f.context;
  table.matrix.row(Vocabulary::kPad).setZero();
  table.final_loss = loss;
  return table;
}

EmbeddedSequence embed_sequence(const EmbeddingTable& table, std::span<const TokenId> ids, std::size_t valid_length) {
  if (valid_length > ids.size()) throw InputError("embed_sequence: valid length exceeds sequence length");
  EmbeddedSequence out = Mat::Zero(static_cast<Eigen::Index>(ids.size()), table.matrix.cols());
  for (std::size_t t = 0; t < ids.size(); ++t) {
    if (ids[t] >= table.rows()) {
      throw InputError("embed_sequence: id " + std::to_string(ids[t]) + " out of range for " +
                       std::to_string(table.rows()) + " rows");
    }
    if (t < valid_length) out.row(static_cast<Eigen::Index>(t)) = table.matrix.row(ids[t]);
  }
  return out;
}

}  // namespace trolldet
