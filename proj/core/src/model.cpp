#include <trolldet/model.hpp>

#include <cmath>

namespace trolldet {

std::string to_string(PathwayKind kind) {
  switch (kind) {
    case PathwayKind::kStaticTable: return "glove-static";
    case PathwayKind::kBiLmMixer: return "bilm-contextual";
    case PathwayKind::kPrecomputedMixer: return "precomputed-contextual";
  }
  return "unknown";
}

std::string to_string(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::kCnn: return "cnn";
    case EncoderKind::kGru: return "gru";
    case EncoderKind::kTransformer: return "transformer";
  }
  return "unknown";
}

PathwayKind parse_pathway(std::string_view name) {
  if (name == "glove-static") return PathwayKind::kStaticTable;
  if (name == "bilm-contextual") return PathwayKind::kBiLmMixer;
  if (name == "precomputed-contextual") return PathwayKind::kPrecomputedMixer;
  throw InputError("unknown embedding '" + std::string(name) +
                   "' (expected glove-static, bilm-contextual or precomputed-contextual)");
}

EncoderKind parse_encoder(std::string_view name) {
  if (name == "cnn") return EncoderKind::kCnn;
  if (name == "gru") return EncoderKind::kGru;
  if (name == "transformer") return EncoderKind::kTransformer;
  throw InputError("unknown encoder '" + std::string(name) + "' (expected cnn, gru or transformer)");
}

std::string to_string(Pooling pooling) { return pooling == Pooling::kMax ? "max" : "average"; }

Pooling parse_pooling(std::string_view name) {
  if (name == "max") return Pooling::kMax;
  if (name == "average" || name == "avg" || name == "mean") return Pooling::kAverage;
  throw InputError("unknown pooling '" + std::string(name) + "' (expected max or average)");
}

// --- assembly ----------------------------------------------------------------

std::size_t ModelAssembly::input_dim() const {
  switch (spec.pathway) {
    case PathwayKind::kStaticTable: return static_cast<std::size_t>(table.value.cols());
    case PathwayKind::kBiLmMixer:
    case PathwayKind::kPrecomputedMixer: return context_dim;
  }
  return 0;
}

std::size_t ModelAssembly::encoder_output_dim() const {
  switch (spec.encoder) {
    case EncoderKind::kCnn: return cnn.output_dim();
    case EncoderKind::kGru: return gru.output_dim();
    case EncoderKind::kTransformer: return transformer.output_dim();
  }
  return 0;
}

namespace {

template <typename Self, typename Out>
void collect_model(Self& self, std::vector<Out>& out) {
  switch (self.spec.pathway) {
    case PathwayKind::kStaticTable: out.push_back(&self.table); break;
    case PathwayKind::kBiLmMixer:
      if (self.bilm) {
        for (auto* p : self.bilm->parameters()) out.push_back(p);
      }
      [[fallthrough]];
    case PathwayKind::kPrecomputedMixer:
      for (auto* p : self.mixer.parameters()) out.push_back(p);
      break;
  }
  switch (self.spec.encoder) {
    case EncoderKind::kCnn:
      for (auto* p : self.cnn.parameters()) out.push_back(p);
      break;
    case EncoderKind::kGru:
      for (auto* p : self.gru.parameters()) out.push_back(p);
      break;
    case EncoderKind::kTransformer:
      for (auto* p : self.transformer.parameters()) out.push_back(p);
      break;
  }
  out.push_back(&self.head.weight);
  out.push_back(&self.head.bias);
}

void make_encoder(ModelAssembly& m, std::size_t input_dim, Rng& rng) {
  const EncoderConfig& c = m.spec.encoder_config;
  switch (m.spec.encoder) {
    case EncoderKind::kCnn: m.cnn = CnnEncoderParams::make(input_dim, c.cnn_windows, c.cnn_channels, c.cnn_pooling, rng); break;
    case EncoderKind::kGru: m.gru = GruCellParams::make(input_dim, c.gru_hidden, rng); break;
    case EncoderKind::kTransformer:
      m.transformer = TransformerEncoderParams::make(input_dim, c.tf_d_model, c.tf_heads, c.tf_ff, c.tf_layers,
                                                     m.spec.max_len, rng);
      break;
  }
  const auto out_dim = static_cast<Eigen::Index>(m.encoder_output_dim());
  m.head.weight = Parameter("head.weight", glorot(1, out_dim, rng));
  m.head.bias = Parameter("head.bias", Mat::Zero(1, 1));
}

void check_spec(const AssemblySpec& spec) {
  if (spec.max_len == 0) throw InputError("max_len must be positive");
}

}  // namespace

std::vector<Parameter*> ModelAssembly::parameters() {
  std::vector<Parameter*> out;
  collect_model(*this, out);
  return out;
}

std::vector<const Parameter*> ModelAssembly::parameters() const {
  std::vector<const Parameter*> out;
  collect_model(*this, out);
  return out;
}

std::vector<Parameter*> ModelAssembly::trainable_parameters() {
  std::vector<Parameter*> out;
  for (Parameter* p : parameters()) {
    if (p->trainable) out.push_back(p);
  }
  return out;
}

void ModelAssembly::validate() const {
  const std::size_t in = input_dim();
  if (in == 0) throw ShapeError("embedding pathway has zero width");
  switch (spec.pathway) {
    case PathwayKind::kStaticTable:
      if (table.value.rows() < 2) throw ShapeError("static table needs PAD and UNK rows");
      break;
    case PathwayKind::kBiLmMixer:
      if (!bilm) throw ShapeError("bi-LM pathway without bi-LM parameters");
      if (bilm->context_dim() != context_dim) throw ShapeError("bi-LM width does not match the mixer output");
      [[fallthrough]];
    case PathwayKind::kPrecomputedMixer:
      if (mixer.num_layers() != context_layers) throw ShapeError("mixer weight count does not match layer count");
      break;
  }
  std::size_t encoder_in = 0;
  switch (spec.encoder) {
    case EncoderKind::kCnn: encoder_in = cnn.input_dim; break;
    case EncoderKind::kGru: encoder_in = gru.input_dim; break;
    case EncoderKind::kTransformer: encoder_in = transformer.input_dim; break;
  }
  if (encoder_in != in) {
    throw ShapeError("pathway output width " + std::to_string(in) + " does not match encoder input width " +
                     std::to_string(encoder_in));
  }
  if (static_cast<std::size_t>(head.weight.value.cols()) != encoder_output_dim() || head.weight.value.rows() != 1) {
    throw ShapeError("classifier head width " + std::to_string(head.weight.value.cols()) +
                     " does not match encoder output width " + std::to_string(encoder_output_dim()));
  }
}

void ModelAssembly::round_to_float32() {
  for (Parameter* p : parameters()) trolldet::round_to_float32(p->value);
}

void ModelAssembly::zero_grad() {
  for (Parameter* p : parameters()) {
    if (p->trainable) p->zero_grad();
  }
}

ModelAssembly make_static_assembly(const AssemblySpec& spec, const EmbeddingTable& table, std::uint64_t seed) {
  check_spec(spec);
  if (spec.pathway != PathwayKind::kStaticTable) throw InputError("make_static_assembly: wrong pathway");
  ModelAssembly m;
  m.spec = spec;
  m.table = Parameter("embedding.table", table.matrix);
  m.table.value.row(Vocabulary::kPad).setZero();
  m.table.trainable = spec.finetune_embeddings;
  Rng rng(seed);
  make_encoder(m, table.dim(), rng);
  m.round_to_float32();
  m.validate();
  return m;
}

ModelAssembly make_bilm_assembly(const AssemblySpec& spec, BiLmParams bilm, std::uint64_t seed) {
  check_spec(spec);
  if (spec.pathway != PathwayKind::kBiLmMixer) throw InputError("make_bilm_assembly: wrong pathway");
  ModelAssembly m;
  m.spec = spec;
  bilm.set_trainable(spec.finetune_embeddings);
  m.context_layers = BiLmParams::kLayers;
  m.context_dim = bilm.context_dim();
  m.bilm = std::move(bilm);
  m.mixer = LayerMixWeights::make(m.context_layers);
  Rng rng(seed);
  make_encoder(m, m.context_dim, rng);
  m.round_to_float32();
  m.validate();
  return m;
}

ModelAssembly make_precomputed_assembly(const AssemblySpec& spec, std::size_t num_layers, std::size_t dim,
                                        std::uint64_t seed) {
  check_spec(spec);
  if (spec.pathway != PathwayKind::kPrecomputedMixer) throw InputError("make_precomputed_assembly: wrong pathway");
  if (num_layers == 0 || dim == 0) throw InputError("precomputed pathway needs L >= 1 and D_ctx >= 1");
  ModelAssembly m;
  m.spec = spec;
  m.context_layers = num_layers;
  m.context_dim = dim;
  m.mixer = LayerMixWeights::make(num_layers);
  Rng rng(seed);
  make_encoder(m, dim, rng);
  m.round_to_float32();
  m.validate();
  return m;
}

// --- forward -----------------------------------------------------------------

namespace {

bool bilm_frozen(const ModelAssembly& m) { return m.bilm && !m.bilm->embedding.trainable; }

template <typename M>
Var pathway_sequence(Graph& g, M& model, const Example& ex, std::size_t& valid) {
  const auto& ids = ex.input.ids;
  switch (model.spec.pathway) {
    case PathwayKind::kStaticTable:
      valid = ex.input.valid_length;
      return ad::gather_rows(g, model.table, ids, static_cast<Eigen::Index>(valid));
    case PathwayKind::kBiLmMixer: {
      valid = ex.input.valid_length;
      std::vector<Var> layers;
      if (ex.context && bilm_frozen(model)) {
        for (const Mat& layer : ex.context->layers) layers.push_back(g.constant(layer));
      } else {
        layers = run_bilm(g, *model.bilm, ids, valid);
      }
      return mix_layers(g, model.mixer, layers);
    }
    case PathwayKind::kPrecomputedMixer: {
      if (!ex.context) throw InputError("precomputed pathway: example has no contextual layers");
      const ContextualLayers& ctx = *ex.context;
      if (ctx.num_layers() != model.context_layers || ctx.dim() != model.context_dim) {
        throw ShapeError("precomputed layers are " + std::to_string(ctx.num_layers()) + " x " +
                         std::to_string(ctx.dim()) + ", model expects " + std::to_string(model.context_layers) +
                         " x " + std::to_string(model.context_dim));
      }
      const auto rows = static_cast<Eigen::Index>(std::min(ctx.length(), model.spec.max_len));
      valid = std::min<std::size_t>(ctx.valid_length, static_cast<std::size_t>(rows));
      std::vector<Var> layers;
      for (const Mat& layer : ctx.layers) layers.push_back(g.constant(layer.topRows(rows)));
      return mix_layers(g, model.mixer, layers);
    }
  }
  throw InputError("unknown pathway");
}

}  // namespace

void cache_contexts(const ModelAssembly& model, std::span<Example> examples) {
  if (model.spec.pathway != PathwayKind::kBiLmMixer || !bilm_frozen(model)) return;
  for (Example& ex : examples) {
    ex.context = std::make_shared<const ContextualLayers>(run_bilm(*model.bilm, ex.input.ids, ex.input.valid_length));
  }
}

template <typename M>
Var build_logit(Graph& g, M& model, const Example& example) {
  std::size_t valid = 0;
  Var seq = pathway_sequence(g, model, example, valid);
  Var features;
  switch (model.spec.encoder) {
    case EncoderKind::kCnn: features = cnn_encode(g, model.cnn, seq, valid); break;
    case EncoderKind::kGru: features = gru_encode(g, model.gru, seq, valid); break;
    case EncoderKind::kTransformer: features = transformer_encode(g, model.transformer, seq, valid); break;
  }
  return ad::linear(features, g.param(model.head.weight), g.param(model.head.bias));
}

template Var build_logit(Graph&, ModelAssembly&, const Example&);
template Var build_logit(Graph&, const ModelAssembly&, const Example&);

double forward(const ModelAssembly& model, const Example& example) {
  Graph g;
  return ad::sigmoid(build_logit(g, model, example)).scalar();
}

std::vector<double> predict(const ModelAssembly& model, std::span<const Example> examples) {
  std::vector<double> out;
  out.reserve(examples.size());
  Graph g;
  for (const Example& ex : examples) {
    g.clear();
    out.push_back(ad::sigmoid(build_logit(g, model, ex)).scalar());
  }
  return out;
}

double bce_loss(double p, int label) {
  const double pc = std::clamp(p, kProbabilityClamp, 1.0 - kProbabilityClamp);
  return label ? -std::log(pc) : -std::log(1.0 - pc);
}

// --- gradients -----------------------------------------------------------------

double accumulate_gradients(ModelAssembly& model, std::span<const Example> batch) {
  if (batch.empty()) throw InputError("gradient computation needs a non-empty batch");
  model.zero_grad();
  const double scale = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  Graph g;
  for (const Example& ex : batch) {
    g.clear();
    Var loss = ad::bce(ad::sigmoid(build_logit(g, model, ex)), ex.label, kProbabilityClamp);
    total += loss.scalar();
    g.backward(loss, scale);
  }
  for (const Parameter* p : model.parameters()) {
    if (p->trainable && !p->grad.allFinite()) throw DivergenceError("non-finite gradient in parameter group " + p->name);
  }
  return total * scale;
}

double batch_loss(const ModelAssembly& model, std::span<const Example> batch) {
  if (batch.empty()) throw InputError("loss needs a non-empty batch");
  double total = 0.0;
  const std::vector<double> probs = predict(model, batch);
  for (std::size_t i = 0; i < batch.size(); ++i) total += bce_loss(probs[i], batch[i].label);
  return total / static_cast<double>(batch.size());
}

std::vector<NamedGradient> backward(ModelAssembly& model, std::span<const Example> batch) {
  accumulate_gradients(model, batch);
  std::vector<NamedGradient> out;
  for (Parameter* p : model.trainable_parameters()) out.push_back({p->name, p->grad});
  return out;
}

// --- training ------------------------------------------------------------------

void TrainConfig::validate() const {
  if (!(optimizer.learning_rate > 0.0)) throw InputError("learning rate must be positive");
  if (batch_size == 0) throw InputError("batch size must be positive");
  if (patience == 0) throw InputError("patience must be positive");
  if (max_epochs > 0 && patience > max_epochs) throw InputError("patience must not exceed max_epochs");
  if (optimizer.kind == OptimizerKind::kAdam &&
      !(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0 &&
        optimizer.epsilon > 0.0)) {
    throw InputError("adam betas must lie in [0, 1) and epsilon must be positive");
  }
}

std::optional<std::size_t> select_best_epoch(const std::vector<EpochRecord>& epochs) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    if (!best || epochs[i].validation_auc > epochs[*best].validation_auc) best = i;
  }
  return best;
}

namespace {

std::vector<ScoredExample> score(const std::vector<double>& probs, std::span<const Example> examples) {
  std::vector<ScoredExample> out(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) out[i] = {probs[i], examples[i].label};
  return out;
}

bool both_classes(std::span<const Example> examples) {
  bool pos = false, neg = false;
  for (const Example& e : examples) (e.label ? pos : neg) = true;
  return pos && neg;
}

}  // namespace

TrainOutcome train_model(ModelAssembly model, const DatasetSplit<Example>& split, const TrainConfig& config,
                         const EpochCallback& on_epoch) {
  config.validate();
  model.validate();
  if (split.train.empty() || split.validation.empty() || split.test.empty()) {
    throw InputError("training needs non-empty train, validation and test splits");
  }
  TrainOutcome outcome{model, {}};
  if (config.max_epochs == 0) return outcome;

  std::vector<Example> train = split.train;
  std::vector<Example> validation = split.validation;
  cache_contexts(model, train);
  cache_contexts(model, validation);
  const bool validation_rankable = both_classes(validation);

  Rng rng(config.seed);
  Optimizer optimizer(config.optimizer);
  std::vector<Parameter*> trainable = model.trainable_parameters();
  std::size_t since_best = 0;
  std::vector<Example> batch;
  batch.reserve(config.batch_size);

  for (std::size_t epoch = 0; epoch < config.max_epochs; ++epoch) {
    const std::vector<std::size_t> order = rng.permutation(train.size());
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      batch.clear();
      for (std::size_t k = start; k < end; ++k) batch.push_back(train[order[k]]);
      const double loss = accumulate_gradients(model, batch);
      if (!std::isfinite(loss)) throw DivergenceError("non-finite training loss in epoch " + std::to_string(epoch));
      loss_sum += loss * static_cast<double>(batch.size());
      optimizer.step(trainable);
      for (const Parameter* p : trainable) {
        if (!p->value.allFinite()) {
          throw DivergenceError("parameter group " + p->name + " diverged in epoch " + std::to_string(epoch));
        }
      }
    }

    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(train.size());
    const std::vector<double> probs = predict(model, validation);
    double val_loss = 0.0;
    for (std::size_t i = 0; i < validation.size(); ++i) val_loss += bce_loss(probs[i], validation[i].label);
    record.validation_loss = val_loss / static_cast<double>(validation.size());
    record.validation_auc = validation_rankable ? auc(score(probs, validation)) : 0.5;
    if (!std::isfinite(record.validation_loss)) {
      throw DivergenceError("non-finite validation loss in epoch " + std::to_string(epoch));
    }
    outcome.history.epochs.push_back(record);
    if (on_epoch) on_epoch(record);

    const bool improved = !outcome.history.selected_epoch ||
                          record.validation_auc > outcome.history.epochs[*outcome.history.selected_epoch].validation_auc;
    if (improved) {
      outcome.history.selected_epoch = outcome.history.epochs.size() - 1;
      outcome.model = model;
      since_best = 0;
    } else if (++since_best >= config.patience) {
      break;
    }
  }
  for (Parameter* p : outcome.model.parameters()) p->grad.resize(0, 0);
  outcome.model.round_to_float32();
  return outcome;
}

MetricsReport evaluate(const ModelAssembly& model, std::span<const Example> examples) {
  std::vector<Example> prepared(examples.begin(), examples.end());
  cache_contexts(model, prepared);
  return evaluate_scores(score(predict(model, prepared), prepared));
}

}  // namespace trolldet
