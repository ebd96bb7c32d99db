#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "convrisk/dataset.hpp"
#include "convrisk/microlm/training.hpp"
#include "convrisk/serialization.hpp"
#include "convrisk/tokenizer.hpp"

namespace convrisk {

// Planted signal of the default synthetic task. For the default schema the
// weight sits on items 15, 13, 12, 9 and 14; narrower schemas fall back to
// the first three features.
std::vector<double> default_signal_weights(const QuestionnaireSchema& schema);

// A related task for pretraining: it shares most of the signal features
// with default_signal_weights() but reweights them, drops one and adds one.
std::vector<double> related_signal_weights(const QuestionnaireSchema& schema);

// Free-text replies with an unambiguous reading, used to teach the model the
// interpretation prompt.
std::span<const std::string_view> affirmative_replies();
std::span<const std::string_view> negative_replies();

// Every question paired with every affirmative (label 1) and negative
// (label 0) reply, as interpretation prompts.
std::vector<microlm::TrainingExample> echo_examples(const QuestionnaireSchema& schema, const Tokenizer& tokenizer,
                                                    std::size_t context_length);

struct PretrainCorpusOptions {
  std::size_t records = 512;
  double prevalence = 0.28;
  // Empty means related_signal_weights(schema).
  std::vector<double> signal_weights;
  std::vector<TemplateKind> templates{TemplateKind::List, TemplateKind::Text};
  bool include_echo = true;
  std::uint64_t seed = 7;
};

// Serialized records of a synthetic task (each record once per template)
// followed by the echo examples. Deterministic in the arguments.
std::vector<microlm::TrainingExample> build_pretraining_corpus(const QuestionnaireSchema& schema,
                                                               const Tokenizer& tokenizer,
                                                               const PretrainCorpusOptions& options,
                                                               std::size_t context_length = 256);

}  // namespace convrisk
