#pragma once

#include <optional>
#include <span>
#include <string_view>
#include <vector>

#include "convrisk/microlm/types.hpp"
#include "convrisk/serialization.hpp"
#include "convrisk/tokenizer.hpp"

namespace convrisk::microlm {

struct ForwardResult {
  Vector logits;  // next-token logits at the final position
  // Only filled when requested: row t holds the logits emitted at position t.
  Matrix all_logits;
  // attention[layer][head] is a T x T row-stochastic, lower-triangular matrix.
  std::vector<std::vector<Matrix>> attention;
};

// Causal forward pass. `adapter` may be null. Throws ContextLengthError when
// the sequence is empty or longer than the configured context.
ForwardResult forward(const MicroLMWeights& weights, const LoraAdapter* adapter, std::span<const TokenId> token_ids,
                      bool all_position_logits = false);

struct ScoreOutput {
  double logit_yes = 0.0;
  double logit_no = 0.0;
  double p_yes = 0.5;
  double p_no = 0.5;
  int predicted_label = 0;
  std::optional<std::vector<double>> importance;
};

// Two-way softmax over the yes/no logits, evaluated as a logistic of their
// difference so large logits do not overflow.
double yes_probability(double logit_yes, double logit_no);
// 1 iff p_yes > 0.5; exactly 0.5 maps to 0.
int label_from_probability(double p_yes);
ScoreOutput score_from_logits(double logit_yes, double logit_no);

ScoreOutput score(const MicroLMWeights& weights, const LoraAdapter* adapter, const SerializedPrompt& prompt);

struct ImportanceOptions {
  // Layer whose attention is read; unset means the last one.
  std::optional<std::size_t> layer;
};

// Attention the final position pays to each feature in the chosen layer,
// averaged over heads, averaged over the tokens of each feature span and
// renormalised to sum to one. Throws ArgumentError when the prompt has no
// spans or the layer does not exist.
std::vector<double> feature_importance(const MicroLMWeights& weights, const LoraAdapter* adapter,
                                       const SerializedPrompt& prompt, const ImportanceOptions& options = {});
std::vector<double> importance_from_attention(const ForwardResult& result, const SerializedPrompt& prompt,
                                              const ImportanceOptions& options = {});

// Score and importance from a single forward pass.
ScoreOutput explain(const MicroLMWeights& weights, const LoraAdapter* adapter, const SerializedPrompt& prompt,
                    const ImportanceOptions& options = {});

// W + (alpha / r) * B * A for every adapted projection.
MicroLMWeights merge_adapter(const MicroLMWeights& base, const LoraAdapter& adapter);

inline constexpr double kAmbiguityMargin = 0.05;

struct Interpretation {
  int binary_answer = 0;
  double p_yes = 0.5;
  bool ambiguous = false;
};

// |p_yes - 0.5| < margin.
bool is_ambiguous(double p_yes, double margin = kAmbiguityMargin);
Interpretation interpretation_from_probability(double p_yes, double margin = kAmbiguityMargin);

// "Question: {q} Answer: {a}. Is the answer yes or no?" with trailing
// punctuation stripped from the answer.
std::string interpretation_prompt(std::string_view question, std::string_view free_text);

// Tokens for the interpretation prompt; unknown words become <unk>. The
// answer is truncated from the end when the prompt would exceed `max_tokens`.
std::vector<TokenId> interpretation_tokens(const Tokenizer& tokenizer, std::string_view question,
                                           std::string_view free_text, std::size_t max_tokens);

// Throws ArgumentError when question or response is blank.
Interpretation interpret_answer(const MicroLMWeights& weights, const LoraAdapter* adapter,
                                const Tokenizer& tokenizer, std::string_view question, std::string_view free_text);

}  // namespace convrisk::microlm
