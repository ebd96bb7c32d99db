#include "convrisk/microlm/model.hpp"

#include <cctype>
#include <cmath>

#include "convrisk/error.hpp"
#include "transformer.hpp"

namespace convrisk::microlm {

ForwardResult forward(const MicroLMWeights& weights, const LoraAdapter* adapter, std::span<const TokenId> token_ids,
                      bool all_position_logits) {
  detail::ForwardCache cache;
  ForwardResult out;
  out.logits = detail::run_forward(weights, adapter, token_ids, cache, all_position_logits ? &out.all_logits : nullptr);
  out.attention.reserve(cache.layers.size());
  for (auto& layer : cache.layers) out.attention.push_back(std::move(layer.probs));
  return out;
}

double yes_probability(double logit_yes, double logit_no) {
  const double d = logit_yes - logit_no;
  if (d >= 0) return 1.0 / (1.0 + std::exp(-d));
  const double e = std::exp(d);
  return e / (1.0 + e);
}

int label_from_probability(double p_yes) { return p_yes > 0.5 ? 1 : 0; }

ScoreOutput score_from_logits(double logit_yes, double logit_no) {
  ScoreOutput s;
  s.logit_yes = logit_yes;
  s.logit_no = logit_no;
  s.p_yes = yes_probability(logit_yes, logit_no);
  s.p_no = yes_probability(logit_no, logit_yes);
  s.predicted_label = label_from_probability(s.p_yes);
  return s;
}

ScoreOutput score(const MicroLMWeights& weights, const LoraAdapter* adapter, const SerializedPrompt& prompt) {
  detail::ForwardCache cache;
  const Vector logits = detail::run_forward(weights, adapter, prompt.token_ids, cache);
  return score_from_logits(logits(Tokenizer::kYes), logits(Tokenizer::kNo));
}

std::vector<double> importance_from_attention(const ForwardResult& result, const SerializedPrompt& prompt,
                                              const ImportanceOptions& options) {
  if (prompt.spans.empty()) throw ArgumentError("prompt carries no feature spans");
  if (result.attention.empty()) throw ArgumentError("forward result has no attention maps");
  const std::size_t layer = options.layer.value_or(result.attention.size() - 1);
  if (layer >= result.attention.size())
    throw ArgumentError("importance layer " + std::to_string(layer) + " does not exist");
  const auto& maps = result.attention[layer];
  const auto T = static_cast<Eigen::Index>(prompt.token_ids.size());
  Vector row = Vector::Zero(T);
  for (const auto& head : maps) {
    if (head.rows() != T) throw ArgumentError("attention maps do not match prompt length");
    row += head.row(T - 1).transpose();
  }
  row /= static_cast<double>(maps.size());

  std::vector<double> importance;
  importance.reserve(prompt.spans.size());
  double total = 0.0;
  for (const auto& span : prompt.spans) {
    if (span.end <= span.start || static_cast<Eigen::Index>(span.end) > T)
      throw ArgumentError("invalid feature span for f" + std::to_string(span.feature_id));
    const auto len = static_cast<Eigen::Index>(span.end - span.start);
    const double mean = row.segment(static_cast<Eigen::Index>(span.start), len).mean();
    importance.push_back(mean);
    total += mean;
  }
  if (!(total > 0.0)) {
    // Every span received zero attention; fall back to uniform.
    for (auto& v : importance) v = 1.0 / static_cast<double>(importance.size());
    return importance;
  }
  for (auto& v : importance) v /= total;
  return importance;
}

std::vector<double> feature_importance(const MicroLMWeights& weights, const LoraAdapter* adapter,
                                       const SerializedPrompt& prompt, const ImportanceOptions& options) {
  if (prompt.spans.empty()) throw ArgumentError("prompt carries no feature spans");
  return importance_from_attention(forward(weights, adapter, prompt.token_ids), prompt, options);
}

ScoreOutput explain(const MicroLMWeights& weights, const LoraAdapter* adapter, const SerializedPrompt& prompt,
                    const ImportanceOptions& options) {
  if (prompt.spans.empty()) throw ArgumentError("prompt carries no feature spans");
  const auto result = forward(weights, adapter, prompt.token_ids);
  auto s = score_from_logits(result.logits(Tokenizer::kYes), result.logits(Tokenizer::kNo));
  s.importance = importance_from_attention(result, prompt, options);
  return s;
}

MicroLMWeights merge_adapter(const MicroLMWeights& base, const LoraAdapter& adapter) {
  MicroLMWeights merged = base;
  const auto D = static_cast<Eigen::Index>(base.config.d_model);
  const auto r = static_cast<Eigen::Index>(adapter.rank);
  for (const auto& p : adapter.pairs) {
    if (p.layer >= base.layers.size())
      throw ArgumentError("adapter layer " + std::to_string(p.layer) + " does not exist in the base model");
    if (p.a.rows() != r || p.a.cols() != D || p.b.rows() != D || p.b.cols() != r)
      throw ArgumentError("adapter matrices for layer " + std::to_string(p.layer) + "." + std::string(to_string(p.target)) +
                          " do not match d_model " + std::to_string(D) + " and rank " + std::to_string(r));
    auto& L = merged.layers[p.layer];
    Matrix* target = nullptr;
    switch (p.target) {
      case Projection::Query: target = &L.wq; break;
      case Projection::Key: target = &L.wk; break;
      case Projection::Value: target = &L.wv; break;
      case Projection::Output: target = &L.wo; break;
    }
    target->noalias() += adapter.scale() * (p.b * p.a);
  }
  return merged;
}

bool is_ambiguous(double p_yes, double margin) { return std::abs(p_yes - 0.5) < margin; }

Interpretation interpretation_from_probability(double p_yes, double margin) {
  return {label_from_probability(p_yes), p_yes, is_ambiguous(p_yes, margin)};
}

namespace {

std::string clean_answer(std::string_view free_text) {
  std::string a(free_text);
  auto strip = [](char c) { return std::isspace(static_cast<unsigned char>(c)) || Tokenizer::is_punctuation(std::string(1, c)); };
  while (!a.empty() && strip(a.back())) a.pop_back();
  std::size_t start = 0;
  while (start < a.size() && std::isspace(static_cast<unsigned char>(a[start]))) ++start;
  return a.substr(start);
}

constexpr std::string_view kInterpretationTail = "Is the answer yes or no?";

}  // namespace

std::string interpretation_prompt(std::string_view question, std::string_view free_text) {
  return "Question: " + std::string(question) + " Answer: " + clean_answer(free_text) + ". " +
         std::string(kInterpretationTail);
}

std::vector<TokenId> interpretation_tokens(const Tokenizer& tokenizer, std::string_view question,
                                           std::string_view free_text, std::size_t max_tokens) {
  auto head = Tokenizer::split_words("Question: " + std::string(question) + " Answer:");
  auto answer = Tokenizer::split_words(clean_answer(free_text));
  auto tail = Tokenizer::split_words(". " + std::string(kInterpretationTail));
  if (head.size() + tail.size() + 1 > max_tokens)
    throw ContextLengthError("question is too long for the model context");
  const std::size_t room = max_tokens - head.size() - tail.size();
  if (answer.size() > room) answer.resize(room);

  std::vector<TokenId> ids;
  ids.reserve(head.size() + answer.size() + tail.size());
  for (const auto* part : {&head, &answer, &tail})
    for (const auto& w : *part) ids.push_back(tokenizer.lookup(w));
  return ids;
}

Interpretation interpret_answer(const MicroLMWeights& weights, const LoraAdapter* adapter,
                                const Tokenizer& tokenizer, std::string_view question, std::string_view free_text) {
  if (clean_answer(question).empty()) throw ArgumentError("question text is empty");
  if (clean_answer(free_text).empty()) throw ArgumentError("response text is empty");
  const auto ids = interpretation_tokens(tokenizer, question, free_text, weights.config.context_length);
  detail::ForwardCache cache;
  const Vector logits = detail::run_forward(weights, adapter, ids, cache);
  return interpretation_from_probability(yes_probability(logits(Tokenizer::kYes), logits(Tokenizer::kNo)));
}

}  // namespace convrisk::microlm
