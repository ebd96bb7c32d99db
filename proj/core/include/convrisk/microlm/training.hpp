#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "convrisk/microlm/types.hpp"
#include "convrisk/serialization.hpp"
#include "convrisk/tokenizer.hpp"

namespace convrisk::microlm {

// A prompt whose gold continuation is "yes" (label 1) or "no" (label 0).
struct TrainingExample {
  std::vector<TokenId> tokens;
  std::uint8_t label = 0;
};

TrainingExample make_example(const SerializedPrompt& prompt, std::uint8_t label);

struct TrainingHyper {
  double learning_rate = 1e-3;
  std::size_t steps = 500;
  // 0 means full batch.
  std::size_t batch_size = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  // Global gradient-norm clip; 0 disables.
  double grad_clip = 1.0;
  // Cosine decay of the learning rate down to 10% over `steps`.
  bool cosine_decay = false;
  // Validation loss is evaluated every `eval_interval` steps (and at step 0
  // and the final step) during LoRA fine-tuning.
  std::size_t eval_interval = 10;
  std::uint64_t seed = 0;
  // Called after every optimisation step with (step, mean batch loss).
  std::function<void(std::size_t, double)> on_step;
};

// Cross-entropy of the gold answer token over the full vocabulary at the
// final position.
double example_loss(const MicroLMWeights& weights, const LoraAdapter* adapter, const TrainingExample& example);

// Summed loss over the batch.
double batch_loss(const MicroLMWeights& weights, const LoraAdapter* adapter, std::span<const TrainingExample> batch);
double mean_loss(const MicroLMWeights& weights, const LoraAdapter* adapter, std::span<const TrainingExample> batch);

// Adds d(summed loss)/d(params) into the given buffers (either may be null)
// and returns the summed loss.
double accumulate_gradients(const MicroLMWeights& weights, const LoraAdapter* adapter,
                            std::span<const TrainingExample> batch, MicroLMWeights* base_grad,
                            LoraAdapter* adapter_grad);

struct PretrainResult {
  MicroLMWeights weights;
  std::vector<double> loss_trace;  // mean batch loss per step
};

// Full-parameter training from a seeded initialisation. Throws
// ArgumentError on an empty corpus and TrainingError on a non-finite loss.
PretrainResult pretrain(const MicroLMConfig& config, std::span<const TrainingExample> corpus,
                        const TrainingHyper& hyper);

struct FinetuneResult {
  LoraAdapter adapter;        // snapshot with the lowest validation loss
  LoraAdapter final_adapter;  // state after the last step
  std::size_t best_step = 0;
  double best_validation_loss = 0.0;
  double final_validation_loss = 0.0;
  std::vector<double> train_loss_trace;
  std::vector<std::pair<std::size_t, double>> validation_trace;
};

// Trains only the adapter matrices; `base` is read-only. The step-0 adapter
// (B = 0, i.e. the base model) is a candidate snapshot. With an empty
// validation set the final adapter is returned. Throws ArgumentError on
// empty or class-imbalanced shots and TrainingError on a non-finite loss.
FinetuneResult finetune_lora(const MicroLMWeights& base, std::span<const TrainingExample> shots,
                             std::span<const TrainingExample> validation, const LoraSpec& spec,
                             const TrainingHyper& hyper);

struct GradientCheckOptions {
  double step = 1e-5;
  bool include_base = false;
  // Base parameters are sampled (seeded) rather than swept; 0 skips them.
  std::size_t base_samples = 200;
  std::uint64_t seed = 0;
  // Relative error is |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
};

struct GradientCheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  // Analytic and numeric values at the worst entry.
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Central finite differences of the summed batch loss against the analytic
// gradient for every adapter parameter (and optionally sampled base ones).
GradientCheckReport gradient_check(const MicroLMWeights& weights, const LoraAdapter& adapter,
                                   std::span<const TrainingExample> batch, const GradientCheckOptions& options = {});

}  // namespace convrisk::microlm
