#include <trolldet/gradcheck.hpp>

#include <algorithm>
#include <cmath>

namespace trolldet {

bool GradCheckReport::passed() const {
  return !groups.empty() && std::all_of(groups.begin(), groups.end(), [](const GroupCheck& g) { return g.passed; });
}

double GradCheckReport::max_relative_error() const {
  double worst = 0.0;
  for (const GroupCheck& g : groups) worst = std::max(worst, g.max_relative_error);
  return worst;
}

double gradient_relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({1e-6, std::abs(analytic), std::abs(numeric)});
}

GradCheckReport check_gradients(ModelAssembly& model, std::span<const Example> batch, const GradCheckConfig& config) {
  GradCheckReport report;
  const std::vector<NamedGradient> analytic = backward(model, batch);
  const std::string label = to_string(model.spec.pathway) + "/" + to_string(model.spec.encoder);
  std::vector<Parameter*> trainable = model.trainable_parameters();
  for (std::size_t gi = 0; gi < trainable.size(); ++gi) {
    Parameter& p = *trainable[gi];
    GroupCheck check{label, p.name, static_cast<std::size_t>(p.value.size()), 0.0, true};
    for (Eigen::Index i = 0; i < p.value.size(); ++i) {
      double& theta = p.value.data()[i];
      const double saved = theta;
      theta = saved + config.epsilon;
      const double up = batch_loss(model, batch);
      theta = saved - config.epsilon;
      const double down = batch_loss(model, batch);
      theta = saved;
      const double numeric = (up - down) / (2.0 * config.epsilon);
      const double err = gradient_relative_error(analytic[gi].gradient.data()[i], numeric);
      check.max_relative_error = std::max(check.max_relative_error, err);
    }
    check.passed = check.max_relative_error < config.tolerance;
    report.groups.push_back(std::move(check));
  }
  return report;
}

ModelAssembly make_toy_assembly(PathwayKind pathway, EncoderKind encoder, const GradCheckConfig& config,
                                std::vector<Example>& batch) {
  Rng rng(config.seed ^ (static_cast<std::uint64_t>(pathway) << 8) ^ static_cast<std::uint64_t>(encoder));
  AssemblySpec spec;
  spec.pathway = pathway;
  spec.encoder = encoder;
  spec.max_len = config.max_len;
  spec.finetune_embeddings = config.finetune_embeddings;
  spec.encoder_config.cnn_windows = {1, 2};
  spec.encoder_config.cnn_channels = 3;
  spec.encoder_config.cnn_pooling = encoder == EncoderKind::kCnn && pathway == PathwayKind::kBiLmMixer
                                        ? Pooling::kAverage
                                        : Pooling::kMax;
  spec.encoder_config.gru_hidden = 4;
  spec.encoder_config.tf_d_model = config.d_model;
  spec.encoder_config.tf_heads = 2;
  spec.encoder_config.tf_ff = 6;
  spec.encoder_config.tf_layers = 1;

  batch.clear();
  const std::size_t layers = 3;
  const std::size_t ctx_dim = 2 * config.hidden_dim;
  for (std::size_t b = 0; b < config.batch_size; ++b) {
    Example ex;
    const std::size_t valid = 2 + rng.below(config.max_len - 1);
    ex.input.ids.assign(config.max_len, Vocabulary::kPad);
    for (std::size_t t = 0; t < valid; ++t) {
      ex.input.ids[t] = static_cast<TokenId>(1 + rng.below(config.vocab_size - 1));
    }
    ex.input.valid_length = valid;
    ex.label = static_cast<int>(b % 2);
    if (pathway == PathwayKind::kPrecomputedMixer) {
      auto ctx = std::make_shared<ContextualLayers>();
      ctx->valid_length = valid;
      for (std::size_t l = 0; l < layers; ++l) {
        Mat layer = Mat::Zero(static_cast<Eigen::Index>(config.max_len), static_cast<Eigen::Index>(ctx_dim));
        Mat values(static_cast<Eigen::Index>(valid), static_cast<Eigen::Index>(ctx_dim));
        fill_uniform(values, rng, -1.0, 1.0);
        layer.topRows(static_cast<Eigen::Index>(valid)) = values;
        ctx->layers.push_back(std::move(layer));
      }
      ex.context = std::move(ctx);
    }
    batch.push_back(std::move(ex));
  }

  ModelAssembly model;
  switch (pathway) {
    case PathwayKind::kStaticTable: {
      EmbeddingTable table;
      table.matrix = Mat(static_cast<Eigen::Index>(config.vocab_size), static_cast<Eigen::Index>(config.embed_dim));
      fill_uniform(table.matrix, rng, -1.0, 1.0);
      model = make_static_assembly(spec, table, rng.below(1u << 30));
      break;
    }
    case PathwayKind::kBiLmMixer:
      model = make_bilm_assembly(spec, BiLmParams::make(config.vocab_size, config.embed_dim, config.hidden_dim, rng),
                                 rng.below(1u << 30));
      break;
    case PathwayKind::kPrecomputedMixer:
      model = make_precomputed_assembly(spec, layers, ctx_dim, rng.below(1u << 30));
      break;
  }
  // Non-default mixer and head values so their gradients are not symmetric.
  for (Parameter* p : model.parameters()) {
    if (p->name == "mixer.s_raw" || p->name == "head.bias") fill_uniform(p->value, rng, -0.5, 0.5);
    if (p->name == "head.weight") p->value *= 2.0;
  }
  return model;
}

GradCheckReport run_gradient_suite(const GradCheckConfig& config) {
  GradCheckReport report;
  for (PathwayKind pathway : {PathwayKind::kStaticTable, PathwayKind::kBiLmMixer, PathwayKind::kPrecomputedMixer}) {
    for (EncoderKind encoder : {EncoderKind::kCnn, EncoderKind::kGru, EncoderKind::kTransformer}) {
      std::vector<Example> batch;
      ModelAssembly model = make_toy_assembly(pathway, encoder, config, batch);
      GradCheckReport part = check_gradients(model, batch, config);
      report.groups.insert(report.groups.end(), part.groups.begin(), part.groups.end());
    }
  }
  return report;
}

}  // namespace trolldet
