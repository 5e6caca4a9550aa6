#pragma once

// Central finite-difference verification of the analytic gradients.

#include <trolldet/model.hpp>

#include <string>
#include <vector>

namespace trolldet {

struct GradCheckConfig {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  std::uint64_t seed = 7;
  std::size_t vocab_size = 10;
  std::size_t embed_dim = 6;
  std::size_t hidden_dim = 4;  // bi-LM hidden size; context width is twice this
  std::size_t d_model = 8;
  std::size_t max_len = 5;
  std::size_t batch_size = 3;
  /// Also differentiate through the static table and the bi-LM.
  bool finetune_embeddings = true;
};

struct GroupCheck {
  std::string assembly;  // "<embedding>/<encoder>"
  std::string group;
  std::size_t entries = 0;
  double max_relative_error = 0.0;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GroupCheck> groups;

  bool passed() const;
  double max_relative_error() const;
};

/// |a - n| / max(1e-6, |a|, |n|)
double gradient_relative_error(double analytic, double numeric);

/// Compares backward() with central differences of batch_loss() for every
/// entry of every trainable group.
GradCheckReport check_gradients(ModelAssembly& model, std::span<const Example> batch, const GradCheckConfig& config);

/// A small assembly with random inputs. Sequences have varying valid
/// lengths so masking is exercised.
ModelAssembly make_toy_assembly(PathwayKind pathway, EncoderKind encoder, const GradCheckConfig& config,
                                std::vector<Example>& batch);

/// All nine pathway x encoder combinations.
GradCheckReport run_gradient_suite(const GradCheckConfig& config = {});

}  // namespace trolldet
