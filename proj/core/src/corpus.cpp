#include "convrisk/corpus.hpp"

#include <array>

#include "convrisk/microlm/model.hpp"
#include "convrisk/rng.hpp"

namespace convrisk {

namespace {

constexpr std::array<std::string_view, 13> kAffirmative = {
    "yes",        "yeah",           "yep",          "sure",          "definitely",
    "absolutely", "correct",        "yes, for two days", "yes since yesterday", "yeah a little bit",
    "i think so", "yes it does",    "yes, some",
};

constexpr std::array<std::string_view, 11> kNegative = {
    "no",        "nope",      "nah",          "never",           "not really", "not at all",
    "no, never", "i don't think so", "no it does not", "no it did not", "no, not at all",
};

std::vector<double> weights_from(const QuestionnaireSchema& schema, std::span<const std::pair<int, double>> by_id,
                                 std::span<const double> fallback) {
  std::vector<double> w(schema.d(), 0.0);
  bool any = false;
  for (const auto& [id, value] : by_id)
    if (auto i = schema.index_of_id(id)) {
      w[*i] = value;
      any = true;
    }
  if (!any)
    for (std::size_t j = 0; j < std::min(w.size(), fallback.size()); ++j) w[j] = fallback[j];
  return w;
}

}  // namespace

std::vector<double> default_signal_weights(const QuestionnaireSchema& schema) {
  constexpr std::array<std::pair<int, double>, 5> ids{{{15, 2.5}, {13, 2.0}, {12, 1.5}, {9, 1.5}, {14, 1.0}}};
  constexpr std::array<double, 3> fallback{2.0, 1.5, 1.0};
  return weights_from(schema, ids, fallback);
}

std::vector<double> related_signal_weights(const QuestionnaireSchema& schema) {
  constexpr std::array<std::pair<int, double>, 5> ids{{{15, 2.0}, {13, 1.5}, {9, 2.0}, {12, 0.5}, {2, 1.0}}};
  constexpr std::array<double, 3> fallback{1.5, 1.5, 0.5};
  return weights_from(schema, ids, fallback);
}

std::span<const std::string_view> affirmative_replies() { return kAffirmative; }
std::span<const std::string_view> negative_replies() { return kNegative; }

std::vector<microlm::TrainingExample> echo_examples(const QuestionnaireSchema& schema, const Tokenizer& tokenizer,
                                                    std::size_t context_length) {
  std::vector<microlm::TrainingExample> out;
  for (const auto& f : schema.features()) {
    for (auto reply : kAffirmative)
      out.push_back({microlm::interpretation_tokens(tokenizer, f.question_text, reply, context_length), 1});
    for (auto reply : kNegative)
      out.push_back({microlm::interpretation_tokens(tokenizer, f.question_text, reply, context_length), 0});
  }
  return out;
}

std::vector<microlm::TrainingExample> build_pretraining_corpus(const QuestionnaireSchema& schema,
                                                               const Tokenizer& tokenizer,
                                                               const PretrainCorpusOptions& options,
                                                               std::size_t context_length) {
  const auto weights = options.signal_weights.empty() ? related_signal_weights(schema) : options.signal_weights;
  std::vector<microlm::TrainingExample> out;
  if (options.records > 0) {
    const auto records = generate_synthetic_dataset(options.records, schema, Rng::derive(options.seed, "pretrain-corpus"),
                                                    options.prevalence, weights);
    for (const auto& r : records)
      for (auto kind : options.templates) out.push_back(microlm::make_example(serialize(r, schema, kind, tokenizer), *r.label));
  }
  if (options.include_echo) {
    auto echo = echo_examples(schema, tokenizer, context_length);
    out.insert(out.end(), echo.begin(), echo.end());
  }
  return out;
}

}  // namespace convrisk
