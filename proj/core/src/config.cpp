#include <trolldet/config.hpp>

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace trolldet {

namespace {

std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return std::string(s.substr(first, last - first + 1));
}

std::string unquote(std::string s) {
  if (s.size() >= 2 && (s.front() == '"' || s.front() == '\'') && s.back() == s.front()) {
    return s.substr(1, s.size() - 2);
  }
  return s;
}

std::vector<std::string> split_list(std::string value) {
  value = trim(value);
  if (value.size() >= 2 && value.front() == '[' && value.back() == ']') value = value.substr(1, value.size() - 2);
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = unquote(trim(item));
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw InputError("config key '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw InputError("config key '" + key + "' expects a non-negative integer, got '" + v + "'");
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
    throw InputError("config key '" + key + "' expects a number, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw InputError("config key '" + key + "' expects true or false, got '" + v + "'");
}

char to_delimiter(const std::string& key, const std::string& v) {
  if (v == "tab" || v == "\\t") return '\t';
  if (v == "comma") return ',';
  if (v.size() == 1) return v[0];
  throw InputError("config key '" + key + "' expects a single character, tab or comma");
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    t["seed"] = [](auto& c, auto& k, auto& v) { c.seed = to_u64(k, v); };
    t["data"] = [](auto& c, auto&, auto& v) { c.data = v; };
    t["format"] = [](auto& c, auto& k, auto& v) {
      if (v == "tsv") {
        c.format.delimiter = '\t';
      } else if (v == "csv") {
        c.format.delimiter = ',';
      } else {
        throw InputError("config key '" + k + "' expects tsv or csv");
      }
    };
    t["delimiter"] = [](auto& c, auto& k, auto& v) { c.format.delimiter = to_delimiter(k, v); };
    t["text_column"] = [](auto& c, auto& k, auto& v) { c.format.text_col = to_size(k, v); };
    t["label_column"] = [](auto& c, auto& k, auto& v) { c.format.label_col = to_size(k, v); };
    t["positive_label"] = [](auto& c, auto&, auto& v) { c.format.pos_label = v; };
    t["negative_label"] = [](auto& c, auto&, auto& v) { c.format.neg_label = v; };
    t["has_header"] = [](auto& c, auto& k, auto& v) { c.format.has_header = to_bool(k, v); };
    t["synthetic"] = [](auto& c, auto& k, auto& v) {
      if (v != "marker" && v != "polysemy" && !v.empty()) {
        throw InputError("config key '" + k + "' expects marker or polysemy");
      }
      c.synthetic = v;
    };
    t["synthetic_size"] = [](auto& c, auto& k, auto& v) { c.synthetic_size = to_size(k, v); };
    t["max_len"] = [](auto& c, auto& k, auto& v) { c.max_len = to_size(k, v); };
    t["min_count"] = [](auto& c, auto& k, auto& v) { c.min_count = to_size(k, v); };
    t["split.train"] = [](auto& c, auto& k, auto& v) { c.split.train = to_double(k, v); };
    t["split.validation"] = [](auto& c, auto& k, auto& v) { c.split.validation = to_double(k, v); };
    t["split.test"] = [](auto& c, auto& k, auto& v) { c.split.test = to_double(k, v); };

    t["glove.dim"] = [](auto& c, auto& k, auto& v) { c.glove.dim = to_size(k, v); };
    t["glove.window"] = [](auto& c, auto& k, auto& v) { c.glove.window = to_size(k, v); };
    t["glove.x_max"] = [](auto& c, auto& k, auto& v) { c.glove.x_max = to_double(k, v); };
    t["glove.alpha"] = [](auto& c, auto& k, auto& v) { c.glove.alpha = to_double(k, v); };
    t["glove.learning_rate"] = [](auto& c, auto& k, auto& v) { c.glove.learning_rate = to_double(k, v); };
    t["glove.epochs"] = [](auto& c, auto& k, auto& v) { c.glove.epochs = to_size(k, v); };
    t["glove.vectors"] = [](auto& c, auto&, auto& v) { c.glove_vectors = v; };

    t["bilm.embed_dim"] = [](auto& c, auto& k, auto& v) { c.bilm.embed_dim = to_size(k, v); };
    t["bilm.hidden_dim"] = [](auto& c, auto& k, auto& v) { c.bilm.hidden_dim = to_size(k, v); };
    t["bilm.learning_rate"] = [](auto& c, auto& k, auto& v) { c.bilm.learning_rate = to_double(k, v); };
    t["bilm.epochs"] = [](auto& c, auto& k, auto& v) { c.bilm.epochs = to_size(k, v); };
    t["bilm.batch_size"] = [](auto& c, auto& k, auto& v) { c.bilm.batch_size = to_size(k, v); };
    t["precomputed.path"] = [](auto& c, auto&, auto& v) { c.precomputed = v; };

    t["cnn.windows"] = [](auto& c, auto& k, auto& v) {
      c.encoder_config.cnn_windows.clear();
      for (const std::string& w : split_list(v)) c.encoder_config.cnn_windows.push_back(to_size(k, w));
    };
    t["cnn.channels"] = [](auto& c, auto& k, auto& v) { c.encoder_config.cnn_channels = to_size(k, v); };
    t["cnn.pooling"] = [](auto& c, auto&, auto& v) { c.encoder_config.cnn_pooling = parse_pooling(v); };
    t["gru.hidden"] = [](auto& c, auto& k, auto& v) { c.encoder_config.gru_hidden = to_size(k, v); };
    t["transformer.d_model"] = [](auto& c, auto& k, auto& v) { c.encoder_config.tf_d_model = to_size(k, v); };
    t["transformer.heads"] = [](auto& c, auto& k, auto& v) { c.encoder_config.tf_heads = to_size(k, v); };
    t["transformer.ff"] = [](auto& c, auto& k, auto& v) { c.encoder_config.tf_ff = to_size(k, v); };
    t["transformer.layers"] = [](auto& c, auto& k, auto& v) { c.encoder_config.tf_layers = to_size(k, v); };

    t["train.optimizer"] = [](auto& c, auto& k, auto& v) {
      if (v == "sgd") {
        c.train.optimizer.kind = OptimizerKind::kSgd;
      } else if (v == "adam") {
        c.train.optimizer.kind = OptimizerKind::kAdam;
      } else {
        throw InputError("config key '" + k + "' expects sgd or adam");
      }
    };
    t["train.learning_rate"] = [](auto& c, auto& k, auto& v) { c.train.optimizer.learning_rate = to_double(k, v); };
    t["train.beta1"] = [](auto& c, auto& k, auto& v) { c.train.optimizer.beta1 = to_double(k, v); };
    t["train.beta2"] = [](auto& c, auto& k, auto& v) { c.train.optimizer.beta2 = to_double(k, v); };
    t["train.epsilon"] = [](auto& c, auto& k, auto& v) { c.train.optimizer.epsilon = to_double(k, v); };
    t["train.batch_size"] = [](auto& c, auto& k, auto& v) { c.train.batch_size = to_size(k, v); };
    t["train.max_epochs"] = [](auto& c, auto& k, auto& v) { c.train.max_epochs = to_size(k, v); };
    t["train.patience"] = [](auto& c, auto& k, auto& v) { c.train.patience = to_size(k, v); };
    t["train.finetune_embeddings"] = [](auto& c, auto& k, auto& v) { c.finetune_embeddings = to_bool(k, v); };
    return t;
  }();
  return table;
}

bool is_path_key(const std::string& key) {
  return key == "data" || key == "glove.vectors" || key == "precomputed.path";
}

}  // namespace

AssemblySpec ExperimentConfig::assembly_spec() const {
  AssemblySpec spec;
  spec.pathway = embedding;
  spec.encoder = encoder;
  spec.encoder_config = encoder_config;
  spec.max_len = max_len;
  spec.finetune_embeddings = finetune_embeddings;
  return spec;
}

void apply_config_key(ExperimentConfig& config, const std::string& key, const std::string& value) {
  const auto it = setters().find(key);
  if (it == setters().end()) throw InputError("unknown config key '" + key + "'");
  it->second(config, key, value);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys{"embeddings", "encoders"};
  for (const auto& [k, _] : setters()) keys.push_back(k);
  return keys;
}

std::vector<ExperimentConfig> GridConfig::cells() const {
  std::vector<ExperimentConfig> out;
  for (PathwayKind e : embeddings) {
    for (EncoderKind n : encoders) {
      ExperimentConfig c = base;
      c.embedding = e;
      c.encoder = n;
      const auto it = overrides.find({e, n});
      if (it != overrides.end()) {
        for (const auto& [k, v] : it->second) apply_config_key(c, k, v);
      }
      out.push_back(std::move(c));
    }
  }
  return out;
}

GridConfig parse_grid_config(const std::string& text, const std::filesystem::path& base_dir) {
  GridConfig grid;
  grid.embeddings = {PathwayKind::kStaticTable, PathwayKind::kBiLmMixer, PathwayKind::kPrecomputedMixer};
  grid.encoders = {EncoderKind::kCnn, EncoderKind::kGru, EncoderKind::kTransformer};
  std::vector<std::pair<std::string, std::string>>* section = nullptr;

  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto where = [&] { return "config line " + std::to_string(line_no) + ": "; };
    std::string line = raw;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;

    try {
      if (line.front() == '[') {
        if (line.back() != ']') throw InputError("unterminated section header");
        const std::string name = trim(line.substr(1, line.size() - 2));
        if (name.rfind("cell.", 0) != 0) throw InputError("unknown section '" + name + "'");
        const std::string rest = name.substr(5);
        const auto dot = rest.rfind('.');
        if (dot == std::string::npos) throw InputError("section must be [cell.<embedding>.<encoder>]");
        section = &grid.overrides[{parse_pathway(rest.substr(0, dot)), parse_encoder(rest.substr(dot + 1))}];
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw InputError("expected 'key = value'");
      const std::string key = trim(line.substr(0, eq));
      std::string value = unquote(trim(line.substr(eq + 1)));
      if (is_path_key(key) && !value.empty() && std::filesystem::path(value).is_relative() && !base_dir.empty()) {
        value = (base_dir / value).lexically_normal().string();
      }

      if (key == "embeddings" || key == "encoders") {
        if (section) throw InputError("'" + key + "' cannot be overridden per cell");
        const std::vector<std::string> names = split_list(value);
        if (names.empty()) throw InputError("'" + key + "' must list at least one name");
        if (key == "embeddings") {
          grid.embeddings.clear();
          for (const auto& n : names) grid.embeddings.push_back(parse_pathway(n));
        } else {
          grid.encoders.clear();
          for (const auto& n : names) grid.encoders.push_back(parse_encoder(n));
        }
        continue;
      }
      if (section) {
        ExperimentConfig probe;
        apply_config_key(probe, key, value);
        section->emplace_back(key, value);
      } else {
        apply_config_key(grid.base, key, value);
      }
    } catch (const InputError& e) {
      throw InputError(where() + e.what());
    }
  }
  return grid;
}

GridConfig load_grid_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_grid_config(buffer.str(), path.parent_path());
}

}  // namespace trolldet
