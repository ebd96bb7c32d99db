#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "convrisk/error.hpp"
#include "convrisk/microlm/model.hpp"
#include "test_support.hpp"

using namespace convrisk;
using namespace convrisk::microlm;

namespace {

struct Fixture {
  QuestionnaireSchema schema = default_schema();
  Tokenizer tok = Tokenizer::for_schema(schema);
  MicroLMConfig config = testkit::tiny_config(tok.size());
  MicroLMWeights weights = MicroLMWeights::initialize(config, 1);

  SerializedPrompt prompt(std::uint64_t seed, TemplateKind kind = TemplateKind::List) const {
    Rng rng(seed);
    return serialize(testkit::random_record(rng, schema.d()), schema, kind, tok);
  }
};

const Fixture& fx() {
  static const Fixture f;
  return f;
}

double max_rel(const Vector& a, const Vector& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1e-12, b.cwiseAbs().maxCoeff());
}

}  // namespace

TEST(Config, Validation) {
  auto c = fx().config;
  EXPECT_NO_THROW(c.validate());
  c.n_heads = 3;
  EXPECT_THROW(c.validate(), ArgumentError);
  c = fx().config;
  c.precision_bits = 32;
  EXPECT_THROW(c.validate(), ArgumentError);
}

TEST(Forward, ShapesAndAttentionRowsAreDistributions) {
  const auto p = fx().prompt(1);
  const auto r = forward(fx().weights, nullptr, p.token_ids);
  EXPECT_EQ(r.logits.size(), static_cast<Eigen::Index>(fx().tok.size()));
  ASSERT_EQ(r.attention.size(), fx().config.n_layers);
  const auto T = static_cast<Eigen::Index>(p.token_ids.size());
  for (const auto& layer : r.attention) {
    ASSERT_EQ(layer.size(), fx().config.n_heads);
    for (const auto& head : layer) {
      ASSERT_EQ(head.rows(), T);
      for (Eigen::Index i = 0; i < T; ++i) {
        EXPECT_NEAR(head.row(i).sum(), 1.0, 1e-9);
        EXPECT_GE(head.row(i).minCoeff(), 0.0);
        for (Eigen::Index j = i + 1; j < T; ++j) EXPECT_EQ(head(i, j), 0.0);
      }
    }
  }
}

TEST(Forward, CausalPrefixesReproduceEarlierLogits) {
  const auto p = fx().prompt(2);
  const auto full = forward(fx().weights, nullptr, p.token_ids, true);
  for (std::size_t t : {1u, 5u, 20u, 40u}) {
    const std::vector<TokenId> prefix(p.token_ids.begin(), p.token_ids.begin() + static_cast<std::ptrdiff_t>(t));
    const auto r = forward(fx().weights, nullptr, prefix);
    const Vector row = full.all_logits.row(static_cast<Eigen::Index>(t - 1)).transpose();
    EXPECT_LT((r.logits - row).cwiseAbs().maxCoeff(), 1e-12) << "prefix " << t;
  }
}

TEST(Forward, ContextLengthAndTokenChecks) {
  std::vector<TokenId> too_long(fx().config.context_length + 1, 3);
  EXPECT_THROW(forward(fx().weights, nullptr, too_long), ContextLengthError);
  EXPECT_THROW(forward(fx().weights, nullptr, std::vector<TokenId>{}), ContextLengthError);
  EXPECT_THROW(forward(fx().weights, nullptr, std::vector<TokenId>{static_cast<TokenId>(fx().tok.size())}),
               ArgumentError);
}

TEST(Score, TwoWaySoftmaxExamples) {
  const auto even = score_from_logits(1.3, 1.3);
  EXPECT_EQ(even.p_yes, 0.5);
  EXPECT_EQ(even.predicted_label, 0);
  EXPECT_NEAR(score_from_logits(std::log(3.0), 0.0).p_yes, 0.75, 1e-15);
  for (double c : {-50.0, 0.0, 7.5, 300.0})
    EXPECT_NEAR(yes_probability(0.4 + c, -1.1 + c), yes_probability(0.4, -1.1), 1e-15);
  EXPECT_EQ(yes_probability(1000.0, 0.0), 1.0);
  EXPECT_EQ(yes_probability(0.0, 1000.0), 0.0);
}

TEST(Score, LabelBoundary) {
  EXPECT_EQ(label_from_probability(0.5), 0);
  EXPECT_EQ(label_from_probability(std::nextafter(0.5, 1.0)), 1);
  EXPECT_EQ(label_from_probability(std::nextafter(0.5, 0.0)), 0);
}

TEST(Score, UsesYesNoLogitsOfTheFinalPosition) {
  const auto p = fx().prompt(3);
  const auto s = score(fx().weights, nullptr, p);
  const auto r = forward(fx().weights, nullptr, p.token_ids);
  EXPECT_EQ(s.logit_yes, r.logits(Tokenizer::kYes));
  EXPECT_EQ(s.logit_no, r.logits(Tokenizer::kNo));
  EXPECT_NEAR(s.p_yes + s.p_no, 1.0, 1e-12);
}

TEST(Lora, ZeroInitIsBitwiseIdentity) {
  const auto adapter = LoraAdapter::initialize(fx().config, {}, 5);
  for (const auto& pair : adapter.pairs) EXPECT_TRUE(pair.b.isZero(0.0));
  for (std::uint64_t i = 0; i < 5; ++i) {
    const auto p = fx().prompt(10 + i);
    const auto a = forward(fx().weights, nullptr, p.token_ids);
    const auto b = forward(fx().weights, &adapter, p.token_ids);
    EXPECT_TRUE(bitwise_equal(a.logits, b.logits));
  }
}

TEST(Lora, ParameterCountFormula) {
  const auto& c = fx().config;
  for (std::size_t r : {1u, 4u, 8u}) {
    LoraSpec spec;
    spec.rank = r;
    const auto a = LoraAdapter::initialize(c, spec, 0);
    EXPECT_EQ(a.trainable_parameter_count(), c.n_layers * 2 * r * (c.d_model + c.d_model));
  }
  LoraSpec all;
  all.targets = {Projection::Query, Projection::Key, Projection::Value, Projection::Output};
  EXPECT_EQ(LoraAdapter::initialize(c, all, 0).trainable_parameter_count(), c.n_layers * 4 * 4 * 2 * c.d_model);
}

TEST(Merge, ZeroAdapterMergesToBase) {
  const auto adapter = LoraAdapter::initialize(fx().config, {}, 1);
  EXPECT_TRUE(merge_adapter(fx().weights, adapter) == fx().weights);
}

TEST(Merge, MatchesDynamicAdapter) {
  const auto adapter = testkit::random_adapter(fx().config, 3);
  const auto merged = merge_adapter(fx().weights, adapter);
  for (std::uint64_t i = 0; i < 20; ++i) {
    const auto p = fx().prompt(100 + i, i % 2 ? TemplateKind::Text : TemplateKind::List);
    EXPECT_LT(max_rel(forward(merged, nullptr, p.token_ids).logits, forward(fx().weights, &adapter, p.token_ids).logits),
              1e-6);
  }
}

TEST(Merge, NotIdempotent) {
  const auto adapter = testkit::random_adapter(fx().config, 4);
  const auto once = merge_adapter(fx().weights, adapter);
  const auto twice = merge_adapter(once, adapter);
  EXPECT_FALSE(once == twice);
  const auto& l = adapter.pairs[0];
  const Matrix delta = adapter.scale() * (l.b * l.a);
  EXPECT_LT((twice.layers[0].wq - fx().weights.layers[0].wq - 2.0 * delta).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Merge, ShapeMismatch) {
  auto adapter = testkit::random_adapter(fx().config, 4);
  adapter.pairs[0].a = Matrix::Zero(4, 3);
  EXPECT_THROW(merge_adapter(fx().weights, adapter), ArgumentError);
}

TEST(Importance, IsADistributionOverFeatures) {
  for (std::uint64_t i = 0; i < 10; ++i) {
    const auto p = fx().prompt(200 + i, i % 2 ? TemplateKind::Text : TemplateKind::List);
    const auto imp = feature_importance(fx().weights, nullptr, p);
    ASSERT_EQ(imp.size(), 15u);
    double sum = 0;
    for (double v : imp) {
      EXPECT_GE(v, 0.0);
      sum += v;
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(Importance, FollowsTheDocumentedAggregation) {
  const auto p = fx().prompt(7);
  const auto r = forward(fx().weights, nullptr, p.token_ids);
  const auto& last = r.attention.back();
  const auto T = static_cast<Eigen::Index>(p.token_ids.size());
  std::vector<double> expect;
  double total = 0;
  for (const auto& sp : p.spans) {
    double s = 0;
    for (auto t = sp.start; t < sp.end; ++t)
      for (const auto& h : last) s += h(T - 1, static_cast<Eigen::Index>(t));
    s /= static_cast<double>(last.size() * (sp.end - sp.start));
    expect.push_back(s);
    total += s;
  }
  const auto got = importance_from_attention(r, p);
  for (std::size_t j = 0; j < got.size(); ++j) EXPECT_NEAR(got[j], expect[j] / total, 1e-12);
}

TEST(Importance, LayerOption) {
  const auto p = fx().prompt(10);
  const auto r = forward(fx().weights, nullptr, p.token_ids);
  EXPECT_EQ(importance_from_attention(r, p, {1}), importance_from_attention(r, p));
  auto first_only = r;
  first_only.attention.resize(1);
  EXPECT_EQ(importance_from_attention(r, p, {0}), importance_from_attention(first_only, p));
  EXPECT_NE(importance_from_attention(r, p, {0}), importance_from_attention(r, p));
  EXPECT_THROW(importance_from_attention(r, p, {2}), ArgumentError);
}

TEST(Importance, MissingSpans) {
  auto p = fx().prompt(8);
  p.spans.clear();
  EXPECT_THROW(feature_importance(fx().weights, nullptr, p), ArgumentError);
}

TEST(Explain, AgreesWithScoreAndImportance) {
  const auto p = fx().prompt(9);
  const auto e = explain(fx().weights, nullptr, p);
  EXPECT_EQ(e.p_yes, score(fx().weights, nullptr, p).p_yes);
  EXPECT_EQ(*e.importance, feature_importance(fx().weights, nullptr, p));
}

TEST(Interpretation, PromptShape) {
  EXPECT_EQ(interpretation_prompt("Has your child had a cough?", "yes, for two days."),
            "Question: Has your child had a cough? Answer: yes, for two days. Is the answer yes or no?");
}

TEST(Interpretation, AmbiguityThreshold) {
  EXPECT_TRUE(interpretation_from_probability(0.52).ambiguous);
  EXPECT_TRUE(interpretation_from_probability(0.51).ambiguous);
  EXPECT_TRUE(interpretation_from_probability(0.46).ambiguous);
  EXPECT_FALSE(interpretation_from_probability(0.56).ambiguous);
  EXPECT_FALSE(interpretation_from_probability(0.44).ambiguous);
  EXPECT_EQ(interpretation_from_probability(0.52).binary_answer, 1);
}

TEST(Interpretation, UnknownWordsDoNotThrowAndLongAnswersTruncate) {
  const auto& t = fx().tok;
  const auto ids = interpretation_tokens(t, "Has your child had a cough?", "zebra quux", 128);
  EXPECT_EQ(std::count(ids.begin(), ids.end(), Tokenizer::kUnknown), 2);
  std::string long_answer;
  for (int i = 0; i < 300; ++i) long_answer += "yes ";
  EXPECT_EQ(interpretation_tokens(t, "Cough?", long_answer, 64).size(), 64u);
  EXPECT_NO_THROW(interpret_answer(fx().weights, nullptr, t, "Cough?", long_answer));
  EXPECT_THROW(interpret_answer(fx().weights, nullptr, t, "Cough?", "  "), ArgumentError);
}
