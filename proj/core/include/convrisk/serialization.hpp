#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "convrisk/dataset.hpp"
#include "convrisk/tokenizer.hpp"

namespace convrisk {

enum class TemplateKind { List, Text };

std::string_view to_string(TemplateKind kind);
// Accepts "list"/"text" (any case) and the short forms "L"/"T".
TemplateKind parse_template_kind(std::string_view text);
// "L" or "T", used as a row suffix in reports.
std::string_view template_suffix(TemplateKind kind);

inline constexpr std::string_view kQuestionSuffix = "Does this patient have severe COVID-19, yes or no?";
inline constexpr std::string_view kTextPreamble = "A patient with";

// Token range [start, end) of one "name = value" / "name is value" pair.
struct FeatureSpan {
  int feature_id = 0;
  std::size_t start = 0;
  std::size_t end = 0;

  bool operator==(const FeatureSpan&) const = default;
};

struct SerializedPrompt {
  std::string text;
  TemplateKind template_kind = TemplateKind::List;
  std::vector<TokenId> token_ids;
  std::vector<FeatureSpan> spans;
  std::size_t suffix_start = 0;

  bool operator==(const SerializedPrompt&) const = default;
};

// List:  "{name} = {value}, {name} = {value}, ... Does this patient ..."
// Text:  "A patient with {name} is {value}, ..., {name} is {value}. Does ..."
// Spans cover the name words, the connector and the value word; the comma
// and the preamble are glue that belongs to no feature.
SerializedPrompt serialize(const PatientRecord& record, const QuestionnaireSchema& schema, TemplateKind kind,
                           const Tokenizer& tokenizer);

SerializedPrompt serialize_answers(std::span<const std::uint8_t> binary_answers, const QuestionnaireSchema& schema,
                                   TemplateKind kind, const Tokenizer& tokenizer);

// Inverse of serialize. Throws ParseError when the text does not follow the
// grammar of `kind`, names an unknown feature or uses an unknown value word.
PatientRecord parse_prompt(std::string_view text, const QuestionnaireSchema& schema, TemplateKind kind);

}  // namespace convrisk
