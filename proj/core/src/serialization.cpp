#include "convrisk/serialization.hpp"

#include <algorithm>
#include <cctype>

#include "convrisk/error.hpp"

namespace convrisk {

std::string_view to_string(TemplateKind kind) { return kind == TemplateKind::List ? "list" : "text"; }

std::string_view template_suffix(TemplateKind kind) { return kind == TemplateKind::List ? "L" : "T"; }

TemplateKind parse_template_kind(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "list" || lower == "l") return TemplateKind::List;
  if (lower == "text" || lower == "t") return TemplateKind::Text;
  throw ArgumentError("unknown template '" + std::string(text) + "' (expected list or text)");
}

SerializedPrompt serialize(const PatientRecord& record, const QuestionnaireSchema& schema, TemplateKind kind,
                           const Tokenizer& tokenizer) {
  validate_record(record, schema);

  std::vector<std::string> words;
  SerializedPrompt out;
  out.template_kind = kind;
  auto append = [&](std::string_view text) {
    for (auto& w : Tokenizer::split_words(text)) words.push_back(std::move(w));
  };

  if (kind == TemplateKind::Text) append(kTextPreamble);
  const std::string_view connector = kind == TemplateKind::List ? "=" : "is";
  for (std::size_t j = 0; j < schema.d(); ++j) {
    const auto& f = schema.feature(j);
    const std::size_t start = words.size();
    append(f.name);
    words.emplace_back(connector);
    words.push_back(record.values[j] ? f.value_words.second : f.value_words.first);
    out.spans.push_back({f.id, start, words.size()});
    if (j + 1 < schema.d()) words.emplace_back(",");
  }
  if (kind == TemplateKind::Text) words.emplace_back(".");
  out.suffix_start = words.size();
  append(kQuestionSuffix);

  out.token_ids.reserve(words.size());
  for (const auto& w : words) {
    const TokenId id = tokenizer.lookup(w);
    if (id == Tokenizer::kUnknown || tokenizer.word(id) != w)
      throw ArgumentError("tokenizer vocabulary does not cover prompt word '" + w + "'");
    out.token_ids.push_back(id);
  }
  out.text = Tokenizer::join_words(words);
  return out;
}

SerializedPrompt serialize_answers(std::span<const std::uint8_t> binary_answers, const QuestionnaireSchema& schema,
                                   TemplateKind kind, const Tokenizer& tokenizer) {
  if (binary_answers.size() != schema.d())
    throw ArgumentError("expected " + std::to_string(schema.d()) + " answers, got " +
                        std::to_string(binary_answers.size()));
  PatientRecord r;
  r.values.assign(binary_answers.begin(), binary_answers.end());
  return serialize(r, schema, kind, tokenizer);
}

namespace {

std::vector<std::string_view> split_items(std::string_view body) {
  std::vector<std::string_view> items;
  std::size_t start = 0;
  while (true) {
    const auto pos = body.find(", ", start);
    if (pos == std::string_view::npos) {
      items.push_back(body.substr(start));
      return items;
    }
    items.push_back(body.substr(start, pos - start));
    start = pos + 2;
  }
}

}  // namespace

PatientRecord parse_prompt(std::string_view text, const QuestionnaireSchema& schema, TemplateKind kind) {
  const std::string suffix = " " + std::string(kQuestionSuffix);
  if (text.size() < suffix.size() || text.substr(text.size() - suffix.size()) != suffix)
    throw ParseError("prompt does not end with the question suffix");
  std::string_view body = text.substr(0, text.size() - suffix.size());

  std::string_view connector = " = ";
  if (kind == TemplateKind::Text) {
    const std::string preamble = std::string(kTextPreamble) + " ";
    if (!body.starts_with(preamble)) throw ParseError("text-template prompt must start with '" + preamble + "'");
    if (!body.ends_with(".")) throw ParseError("text-template feature list must end with '.'");
    body = body.substr(preamble.size(), body.size() - preamble.size() - 1);
    connector = " is ";
  }

  const auto items = split_items(body);
  if (items.size() != schema.d())
    throw ParseError("prompt lists " + std::to_string(items.size()) + " features, schema has " +
                     std::to_string(schema.d()));

  PatientRecord record;
  record.values.assign(schema.d(), 0);
  std::vector<bool> seen(schema.d(), false);
  for (auto item : items) {
    const auto pos = item.rfind(connector);
    if (pos == std::string_view::npos)
      throw ParseError("item '" + std::string(item) + "' lacks the '" + std::string(connector.substr(1, connector.size() - 2)) +
                       "' connector");
    const auto name = item.substr(0, pos);
    const auto value = item.substr(pos + connector.size());
    const auto idx = schema.index_of_name(name);
    if (!idx) throw ParseError("unknown feature name '" + std::string(name) + "'");
    if (seen[*idx]) throw ParseError("feature '" + std::string(name) + "' appears twice");
    seen[*idx] = true;
    const auto& f = schema.feature(*idx);
    if (value == f.value_words.second)
      record.values[*idx] = 1;
    else if (value == f.value_words.first)
      record.values[*idx] = 0;
    else
      throw ParseError("unknown value word '" + std::string(value) + "' for feature '" + std::string(name) + "'");
  }
  return record;
}

}  // namespace convrisk
