#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "convrisk/dataset.hpp"

namespace convrisk {

using TokenId = std::int32_t;

// Closed-vocabulary word-level tokenizer.
//
// Text is split on single spaces; the punctuation marks , . ? ! : ; are
// peeled off the end of a word into their own tokens. Decoding joins tokens
// with one space and attaches punctuation to the preceding token, so any
// text built from vocabulary words in that canonical spacing round-trips
// exactly. Lookup tries the exact spelling, then lowercase, then <unk>.
class Tokenizer {
 public:
  static constexpr TokenId kUnknown = 0;
  static constexpr TokenId kYes = 1;
  static constexpr TokenId kNo = 2;

  Tokenizer() = default;
  // Takes a vocabulary verbatim. The first three entries must be
  // "<unk>", "yes", "no"; duplicates are rejected.
  explicit Tokenizer(std::vector<std::string> vocabulary);

  // Vocabulary covering template glue, the interpretation prompt, the
  // schema's names, value words and questions, and a small free-text answer
  // lexicon. Deterministic in the schema.
  static Tokenizer for_schema(const QuestionnaireSchema& schema);

  static std::vector<std::string> split_words(std::string_view text);
  static std::string join_words(std::span<const std::string> words);
  static bool is_punctuation(std::string_view word);

  TokenId lookup(std::string_view word) const;
  std::vector<TokenId> encode(std::string_view text) const;
  std::string decode(std::span<const TokenId> ids) const;

  std::size_t size() const noexcept { return vocabulary_.size(); }
  const std::vector<std::string>& vocabulary() const noexcept { return vocabulary_; }
  const std::string& word(TokenId id) const { return vocabulary_.at(static_cast<std::size_t>(id)); }

  bool operator==(const Tokenizer& other) const { return vocabulary_ == other.vocabulary_; }

 private:
  std::vector<std::string> vocabulary_;
  std::unordered_map<std::string, TokenId> index_;
};

// Words people commonly use when answering yes/no questions in free text.
std::span<const std::string_view> answer_lexicon();

}  // namespace convrisk
