#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "convrisk/dataset.hpp"
#include "convrisk/error.hpp"
#include "test_support.hpp"

using namespace convrisk;

namespace {

std::vector<double> three_signals() {
  std::vector<double> w(15, 0.0);
  w[8] = 2.0;
  w[12] = 1.5;
  w[14] = 1.0;
  return w;
}

std::size_t positives(const std::vector<PatientRecord>& rs) {
  std::size_t n = 0;
  for (const auto& r : rs) n += *r.label;
  return n;
}

}  // namespace

TEST(Schema, DefaultHasFifteenItemsWithPublishedNames) {
  const auto s = default_schema();
  ASSERT_EQ(s.d(), 15u);
  EXPECT_EQ(s.feature(8).name, "cough");
  EXPECT_EQ(s.feature(11).name, "nausea or vomiting");
  EXPECT_EQ(s.feature(12).name, "lungs check");
  EXPECT_EQ(s.feature(13).name, "eye redness");
  EXPECT_EQ(s.feature(14).name, "COVID-19 antibody test");
  for (std::size_t j = 0; j < s.d(); ++j) EXPECT_EQ(s.feature(j).id, static_cast<int>(j + 1));
}

TEST(Schema, RejectsDuplicatesAndBlankFields) {
  EXPECT_THROW(QuestionnaireSchema({{1, "a", "q?"}, {1, "b", "q?"}}), SchemaError);
  EXPECT_THROW(QuestionnaireSchema({{1, "a", "q?"}, {2, "a", "q?"}}), SchemaError);
  EXPECT_THROW(QuestionnaireSchema({{1, "", "q?"}}), SchemaError);
  EXPECT_THROW(QuestionnaireSchema({{1, "a", ""}}), SchemaError);
  EXPECT_THROW(QuestionnaireSchema({{1, "a", "q?", {"yes", "yes"}}}), SchemaError);
}

TEST(Schema, FileRoundTrip) {
  const auto s = default_schema();
  EXPECT_EQ(parse_schema(format_schema(s)), s);
  const auto custom = parse_schema("# comment\n1\tpain\tDoes it hurt?\tnone\tsome\n\n2\tcough\tCough?\n");
  ASSERT_EQ(custom.d(), 2u);
  EXPECT_EQ(custom.feature(0).value_words.second, "some");
  EXPECT_EQ(custom.feature(1).value_words.first, "no");
}

TEST(Synthetic, PositiveCountLandsInBandFor393Records) {
  const auto rs = generate_synthetic_dataset(393, default_schema(), 0, 0.28, three_signals());
  ASSERT_EQ(rs.size(), 393u);
  const auto p = positives(rs);
  EXPECT_GE(p, 90u);
  EXPECT_LE(p, 130u);
}

TEST(Synthetic, SingleRecordShape) {
  for (std::uint64_t seed : {0u, 5u, 99u}) {
    const auto rs = generate_synthetic_dataset(1, default_schema(), seed, 0.5, std::vector<double>(15, 0.0));
    ASSERT_EQ(rs.size(), 1u);
    ASSERT_EQ(rs[0].values.size(), 15u);
    for (auto v : rs[0].values) EXPECT_LE(v, 1);
    ASSERT_TRUE(rs[0].label.has_value());
  }
}

TEST(Synthetic, ZeroWeightsGiveTargetRate) {
  const auto rs = generate_synthetic_dataset(10000, default_schema(), 3, 0.5, std::vector<double>(15, 0.0));
  EXPECT_NEAR(static_cast<double>(positives(rs)) / 10000.0, 0.5, 0.02);
}

TEST(Synthetic, PureFunctionOfArguments) {
  const auto s = default_schema();
  const auto a = generate_synthetic_dataset(200, s, 9, 0.3, three_signals());
  const auto b = generate_synthetic_dataset(200, s, 9, 0.3, three_signals());
  EXPECT_EQ(format_dataset_csv(s, a), format_dataset_csv(s, b));
  const auto c = generate_synthetic_dataset(200, s, 10, 0.3, three_signals());
  EXPECT_NE(format_dataset_csv(s, a), format_dataset_csv(s, c));
}

TEST(Synthetic, PlantedSignalRaisesPositiveRate) {
  std::vector<double> w(15, 0.0);
  w[0] = 4.0;
  const auto rs = generate_synthetic_dataset(4000, default_schema(), 1, 0.3, w);
  double with = 0, with_n = 0, without = 0, without_n = 0;
  for (const auto& r : rs) (r.values[0] ? with : without) += *r.label, (r.values[0] ? with_n : without_n) += 1;
  EXPECT_GT(with / with_n, without / without_n + 0.3);
}

TEST(Synthetic, RejectsBadArguments) {
  const auto s = default_schema();
  EXPECT_THROW(generate_synthetic_dataset(10, s, 0, 0.0, std::vector<double>(15, 0.0)), ArgumentError);
  EXPECT_THROW(generate_synthetic_dataset(10, s, 0, 1.0, std::vector<double>(15, 0.0)), ArgumentError);
  EXPECT_THROW(generate_synthetic_dataset(10, s, 0, 0.3, std::vector<double>(14, 0.0)), ArgumentError);
  EXPECT_THROW(generate_synthetic_dataset(0, s, 0, 0.3, std::vector<double>(15, 0.0)), ArgumentError);
}

TEST(SignalWeights, ParsesSparseSpec) {
  const auto w = parse_signal_weights("9:2.0, f13:1.5", 15);
  ASSERT_EQ(w.size(), 15u);
  EXPECT_EQ(w[8], 2.0);
  EXPECT_EQ(w[12], 1.5);
  EXPECT_EQ(std::count(w.begin(), w.end(), 0.0), 13);
  EXPECT_THROW(parse_signal_weights("16:1", 15), ArgumentError);
  EXPECT_THROW(parse_signal_weights("nine", 15), ArgumentError);
}

TEST(Split, GoldenSizes) {
  // floor(0.65n + 0.5) / floor(0.15n + 0.5) / remainder.
  const auto a = split_dataset(393, 0);
  EXPECT_EQ(a.train.size(), 255u);
  EXPECT_EQ(a.validation.size(), 59u);
  EXPECT_EQ(a.test.size(), 79u);
  const auto b = split_dataset(20, 0);
  EXPECT_EQ(b.train.size(), 13u);
  EXPECT_EQ(b.validation.size(), 3u);
  EXPECT_EQ(b.test.size(), 4u);
}

TEST(Split, IsADeterministicPartition) {
  for (std::size_t n : {5u, 17u, 100u, 393u})
    for (std::uint64_t seed : {0u, 1u, 32u, 42u, 1024u}) {
      const auto s = split_dataset(n, seed);
      EXPECT_EQ(s, split_dataset(n, seed));
      std::set<std::size_t> all;
      for (const auto* part : {&s.train, &s.validation, &s.test})
        for (auto i : *part) EXPECT_TRUE(all.insert(i).second) << "index " << i << " appears twice";
      EXPECT_EQ(all.size(), n);
      EXPECT_EQ(*all.rbegin(), n - 1);
    }
}

TEST(Split, TooSmall) { EXPECT_THROW(split_dataset(4, 0), DatasetTooSmallError); }

TEST(FewShot, BalancedDeterministicSubset) {
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 60 + rng.below(100);
    std::vector<std::uint8_t> labels(n);
    for (auto& l : labels) l = static_cast<std::uint8_t>(rng.bernoulli(0.3));
    const auto split = split_dataset(n, trial);
    std::size_t pos = 0, neg = 0;
    for (auto i : split.train) (labels[i] ? pos : neg)++;
    for (std::size_t k : {2u, 4u, 8u, 16u, 32u}) {
      if (pos < k / 2 || neg < k / 2) {
        EXPECT_THROW(sample_few_shot(split.train, labels, k, 1), SamplingError);
        continue;
      }
      const auto s = sample_few_shot(split.train, labels, k, static_cast<std::uint64_t>(trial));
      ASSERT_EQ(s.size(), k);
      std::size_t p = 0;
      for (auto i : s) {
        p += labels[i];
        EXPECT_TRUE(std::binary_search(split.train.begin(), split.train.end(), i));
      }
      EXPECT_EQ(p, k / 2);
      EXPECT_EQ(std::set<std::size_t>(s.begin(), s.end()).size(), k);
      EXPECT_EQ(s, sample_few_shot(split.train, labels, k, static_cast<std::uint64_t>(trial)));
    }
  }
}

TEST(FewShot, Errors) {
  const std::vector<std::size_t> train{0, 1, 2, 3};
  const std::vector<std::uint8_t> labels{1, 0, 0, 0};
  EXPECT_THROW(sample_few_shot(train, labels, 3, 0), SamplingError);
  EXPECT_THROW(sample_few_shot(train, labels, 4, 0), SamplingError);
  const auto two = sample_few_shot(train, labels, 2, 0);
  EXPECT_EQ(two[0], 0u);
  EXPECT_EQ(labels[two[1]], 0);
}

TEST(Csv, LoadsValidFile) {
  const auto d = parse_dataset_csv("f1,f2,label\n1,0,1\n0,0,0\n1,1,\n");
  EXPECT_EQ(d.schema.d(), 2u);
  ASSERT_EQ(d.records.size(), 3u);
  EXPECT_EQ(d.records[0].values, (std::vector<std::uint8_t>{1, 0}));
  EXPECT_EQ(d.records[0].label, std::optional<std::uint8_t>(1));
  EXPECT_FALSE(d.records[2].label.has_value());
}

TEST(Csv, NonBinaryValueNamesRow) {
  try {
    parse_dataset_csv("f1,f2,label\n1,0,1\n0,2,0\n");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.row(), std::optional<std::size_t>(3));
    EXPECT_NE(std::string(e.what()).find("row 3"), std::string::npos);
  }
}

TEST(Csv, StructuralErrors) {
  EXPECT_THROW(parse_dataset_csv("f1,f2\n1,0\n"), ParseError);
  EXPECT_THROW(parse_dataset_csv("f1,f1,label\n1,0,1\n"), SchemaError);
  EXPECT_THROW(parse_dataset_csv("f1,f2,label\n1,0\n"), ParseError);
  EXPECT_THROW(parse_dataset_csv(""), ParseError);
}

TEST(Csv, RoundTripThroughFile) {
  testkit::TempDir dir("csv");
  const auto s = default_schema();
  const auto rs = generate_synthetic_dataset(30, s, 2, 0.3, three_signals());
  save_dataset(dir / "d.csv", s, rs);
  const auto back = load_dataset(dir / "d.csv");
  EXPECT_EQ(back.schema, s);
  EXPECT_EQ(back.records, rs);
}
