#include "convrisk/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <cctype>

#include "convrisk/error.hpp"
#include "convrisk/serialization.hpp"

namespace convrisk {

namespace {

constexpr std::array<std::string_view, 34> kLexicon = {
    "yeah", "yep",  "sure",  "definitely", "absolutely", "correct", "right", "nope", "nah",  "never",  "not",   "really",
    "at",   "all",  "i",     "think",      "so",         "he",      "she",   "it",   "does", "did",    "a",     "little",
    "bit",  "for",  "two",   "days",       "since",      "yesterday", "some", "maybe", "don't", "know",
};

std::string lowercase(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

}  // namespace

std::span<const std::string_view> answer_lexicon() { return kLexicon; }

bool Tokenizer::is_punctuation(std::string_view word) {
  return word.size() == 1 && std::string_view(",.?!:;").find(word[0]) != std::string_view::npos;
}

std::vector<std::string> Tokenizer::split_words(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j == i) break;
    std::string_view chunk = text.substr(i, j - i);
    std::vector<std::string> trailing;
    while (chunk.size() > 1 && is_punctuation(chunk.substr(chunk.size() - 1))) {
      trailing.emplace_back(chunk.substr(chunk.size() - 1));
      chunk.remove_suffix(1);
    }
    out.emplace_back(chunk);
    out.insert(out.end(), trailing.rbegin(), trailing.rend());
    i = j;
  }
  return out;
}

std::string Tokenizer::join_words(std::span<const std::string> words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty() && !is_punctuation(w)) out += ' ';
    out += w;
  }
  return out;
}

Tokenizer::Tokenizer(std::vector<std::string> vocabulary) : vocabulary_(std::move(vocabulary)) {
  if (vocabulary_.size() < 3 || vocabulary_[0] != "<unk>" || vocabulary_[1] != "yes" || vocabulary_[2] != "no")
    throw ArgumentError("vocabulary must start with <unk>, yes, no");
  for (std::size_t i = 0; i < vocabulary_.size(); ++i) {
    if (vocabulary_[i].empty()) throw ArgumentError("empty vocabulary entry");
    if (!index_.emplace(vocabulary_[i], static_cast<TokenId>(i)).second)
      throw ArgumentError("duplicate vocabulary entry '" + vocabulary_[i] + "'");
  }
}

Tokenizer Tokenizer::for_schema(const QuestionnaireSchema& schema) {
  std::vector<std::string> vocab = {"<unk>", "yes", "no"};
  auto add_text = [&](std::string_view text) {
    for (auto& w : split_words(text))
      if (std::find(vocab.begin(), vocab.end(), w) == vocab.end()) vocab.push_back(std::move(w));
  };
  add_text("=");
  add_text(kTextPreamble);
  add_text("is ,.");
  add_text(kQuestionSuffix);
  add_text("Question: Answer: Is the answer ?");
  for (const auto& f : schema.features()) {
    add_text(f.name);
    add_text(f.value_words.first);
    add_text(f.value_words.second);
  }
  for (const auto& f : schema.features()) add_text(f.question_text);
  for (auto w : kLexicon) add_text(w);
  for (char c = '0'; c <= '9'; ++c) add_text(std::string(1, c));
  return Tokenizer(std::move(vocab));
}

TokenId Tokenizer::lookup(std::string_view word) const {
  if (auto it = index_.find(std::string(word)); it != index_.end()) return it->second;
  if (auto it = index_.find(lowercase(word)); it != index_.end()) return it->second;
  return kUnknown;
}

std::vector<TokenId> Tokenizer::encode(std::string_view text) const {
  std::vector<TokenId> ids;
  for (const auto& w : split_words(text)) ids.push_back(lookup(w));
  return ids;
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
  std::vector<std::string> words;
  words.reserve(ids.size());
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= vocabulary_.size())
      throw ArgumentError("token id " + std::to_string(id) + " outside vocabulary");
    words.push_back(vocabulary_[static_cast<std::size_t>(id)]);
  }
  return join_words(words);
}

}  // namespace convrisk
