#include <gtest/gtest.h>

#include <cmath>

#include "convrisk/error.hpp"
#include "convrisk/evaluation.hpp"
#include "convrisk/microlm/model.hpp"
#include "test_support.hpp"

using namespace convrisk;
using namespace convrisk::evaluation;

TEST(Auc, SmallExamples) {
  const std::vector<double> s{0.9, 0.4, 0.6, 0.2};
  EXPECT_EQ(auc(s, std::vector<std::uint8_t>{1, 0, 1, 0}), 1.0);
  EXPECT_EQ(auc(s, std::vector<std::uint8_t>{0, 1, 0, 1}), 0.0);
  EXPECT_EQ(auc(std::vector<double>{0.5, 0.5}, std::vector<std::uint8_t>{1, 0}), 0.5);
  // One inverted pair out of four.
  EXPECT_EQ(auc(std::vector<double>{0.9, 0.3, 0.4, 0.1}, std::vector<std::uint8_t>{1, 1, 0, 0}), 0.75);
}

TEST(Auc, Errors) {
  const std::vector<double> s{0.1, 0.2};
  EXPECT_THROW(auc(s, std::vector<std::uint8_t>{1, 1}), UndefinedAucError);
  EXPECT_THROW(auc(s, std::vector<std::uint8_t>{1}), ArgumentError);
  EXPECT_THROW(auc(s, std::vector<std::uint8_t>{1, 3}), ArgumentError);
}

TEST(Auc, MatchesPairCountingWithTies) {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto n = 2 + rng.below(80);
    std::vector<double> s;
    std::vector<std::uint8_t> y;
    for (std::uint64_t i = 0; i < n; ++i) {
      s.push_back(static_cast<double>(rng.below(7)) / 7.0);  // many ties
      y.push_back(static_cast<std::uint8_t>(i < 2 ? i : rng.below(2)));
    }
    EXPECT_NEAR(auc(s, y), auc_pair_count(s, y), 1e-12);
  }
}

TEST(Auc, SymmetryAndMonotoneInvariance) {
  Rng rng(6);
  std::vector<double> s, neg, squashed;
  std::vector<std::uint8_t> y, flipped;
  for (int i = 0; i < 200; ++i) {
    s.push_back(rng.normal());
    y.push_back(static_cast<std::uint8_t>(i % 3 == 0));
  }
  for (std::size_t i = 0; i < s.size(); ++i) {
    neg.push_back(-s[i]);
    squashed.push_back(std::exp(3 * s[i]) + 1);
    flipped.push_back(1 - y[i]);
  }
  const double a = auc(s, y);
  EXPECT_NEAR(auc(neg, y), 1 - a, 1e-12);
  EXPECT_NEAR(auc(s, flipped), 1 - a, 1e-12);
  EXPECT_EQ(auc(squashed, y), a);
}

TEST(Format, Cells) {
  EXPECT_EQ(format_cell(0.695, 0.064), "0.70_{.06}");
  EXPECT_EQ(format_cell(0.5, 0.0), "0.50_{.00}");
  EXPECT_EQ(format_cell(0.745, 0.005), "0.75_{.01}");
  EXPECT_EQ(format_cell(1.0, 0.0), "1.00_{.00}");
}

TEST(Format, ParseNames) {
  EXPECT_EQ(parse_report_format("csv"), ReportFormat::Csv);
  EXPECT_EQ(parse_report_format("table-text"), ReportFormat::Table);
  EXPECT_THROW(parse_report_format("xml"), ArgumentError);
}

TEST(Aggregate, PopulationStd) {
  EvalCell c;
  c.seed_aucs = {0.5, 0.7};
  aggregate(c);
  EXPECT_NEAR(c.mean, 0.6, 1e-15);
  EXPECT_NEAR(c.std, 0.1, 1e-15);
}

TEST(Config, Validation) {
  BenchmarkConfig c;
  EXPECT_NO_THROW(c.validate());
  c.shots = {3};
  EXPECT_THROW(c.validate(), ArgumentError);
  c = {};
  c.models = {"svm"};
  EXPECT_THROW(c.validate(), ArgumentError);
  c = {};
  c.seeds.clear();
  EXPECT_THROW(c.validate(), ArgumentError);
  BenchmarkConfig a, b;
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.finetune.steps = 7;
  EXPECT_NE(config_hash(a), config_hash(b));
}

namespace {

struct Grid {
  QuestionnaireSchema schema = default_schema();
  Tokenizer tok = Tokenizer::for_schema(schema);
  microlm::MicroLMWeights weights = microlm::MicroLMWeights::initialize(testkit::tiny_config(tok.size()), 3);
  std::vector<PatientRecord> records;
  BenchmarkConfig config;

  Grid() {
    const std::vector<double> w{0, 0, 0, 0, 0, 0, 0, 0, 1.5, 0, 0, 1.5, 2, 1, 2.5};
    records = generate_synthetic_dataset(60, schema, 4, 0.3, w);
    config.shots = {0, 2, 4};
    config.seeds = {0, 1};
    config.finetune.steps = 6;
    config.finetune.eval_interval = 3;
  }

  BenchmarkReport run() const { return run_benchmark(schema, records, {&weights, &tok}, config); }
};

const Grid& grid() {
  static const Grid g;
  return g;
}

const BenchmarkReport& report() {
  static const BenchmarkReport r = grid().run();
  return r;
}

}  // namespace

TEST(Benchmark, GridShape) {
  const auto& r = report();
  ASSERT_EQ(r.rows.size(), 5u);
  EXPECT_EQ(row_label(r.rows[0], "MicroLM"), "MicroLM-L");
  EXPECT_EQ(row_label(r.rows[1], "MicroLM"), "MicroLM-T");
  EXPECT_EQ(row_label(r.rows[2], "MicroLM"), "Logistic Regression");
  for (const auto& row : r.rows) {
    ASSERT_EQ(row.cells.size(), 3u);
    for (const auto& c : row.cells) {
      if (row.model != kMicroLM && c.shots == 0) {
        EXPECT_EQ(c.status, CellStatus::NotApplicable);
        continue;
      }
      EXPECT_EQ(c.status, CellStatus::Ok) << c.error;
      for (double a : c.seed_aucs) EXPECT_TRUE(a >= 0 && a <= 1);
    }
  }
  EXPECT_EQ(r.metadata.n_records, 60u);
  EXPECT_EQ(r.metadata.d, 15u);
  EXPECT_FALSE(r.metadata.model_fingerprint.empty());
}

TEST(Benchmark, ZeroShotIsDirectBaseModelScoring) {
  const auto& g = grid();
  for (std::size_t si = 0; si < g.config.seeds.size(); ++si) {
    const auto split = split_dataset(g.records.size(), g.config.seeds[si]);
    std::vector<double> s;
    std::vector<std::uint8_t> y;
    for (auto i : split.test) {
      s.push_back(microlm::score(g.weights, nullptr, serialize(g.records[i], g.schema, TemplateKind::Text, g.tok)).p_yes);
      y.push_back(*g.records[i].label);
    }
    EXPECT_EQ(report().rows[1].cells[0].seed_aucs[si], auc(s, y));
  }
}

TEST(Benchmark, DeterministicRendering) {
  const auto again = grid().run();
  for (auto f : {ReportFormat::Table, ReportFormat::Csv, ReportFormat::Json})
    EXPECT_EQ(render_report(again, f), render_report(report(), f));
}

TEST(Benchmark, TableLayout) {
  const auto table = render_report(report(), ReportFormat::Table);
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < table.size()) {
    const auto nl = table.find('\n', pos);
    lines.push_back(table.substr(pos, nl - pos));
    pos = nl + 1;
  }
  ASSERT_EQ(lines.size(), 7u);
  EXPECT_EQ(lines[0].rfind("Model", 0), 0u);
  EXPECT_NE(lines[0].find("Number of Shots"), std::string::npos);
  EXPECT_NE(lines[1].find('0'), std::string::npos);
  EXPECT_NE(lines[1].find('4'), std::string::npos);
  EXPECT_EQ(lines[4].rfind("Logistic Regression", 0), 0u);
  EXPECT_NE(lines[4].find("−"), std::string::npos);
  EXPECT_EQ(lines[2].find("−"), std::string::npos);
  EXPECT_NE(lines[2].find("_{."), std::string::npos);
}

TEST(Benchmark, CsvIsLongForm) {
  const auto csv = render_report(report(), ReportFormat::Csv);
  EXPECT_EQ(csv.rfind("model,template,shots,seed,auc\n", 0), 0u);
  std::size_t lines = 0;
  for (char ch : csv) lines += ch == '\n';
  EXPECT_EQ(lines, 1u + 5 * 3 * 2);
  EXPECT_NE(csv.find("logistic_regression,,0,0,NA\n"), std::string::npos);
  EXPECT_NE(csv.find("microlm,text,0,1,"), std::string::npos);
}

TEST(Benchmark, JsonRoundTrip) {
  const auto json = render_report(report(), ReportFormat::Json);
  const auto back = parse_report_json(json);
  EXPECT_EQ(render_report(back, ReportFormat::Json), json);
  EXPECT_EQ(render_report(back, ReportFormat::Table), render_report(report(), ReportFormat::Table));
  EXPECT_THROW(parse_report_json("{"), ParseError);
}

TEST(Benchmark, FailedCellsAreReportedNotDropped) {
  auto g = grid();
  g.config.models = {"logistic_regression"};
  g.config.shots = {32};
  // 20 records cannot supply 16 training examples per class.
  g.records.resize(20);
  const auto r = g.run();
  ASSERT_EQ(r.rows.size(), 1u);
  EXPECT_EQ(r.rows[0].cells[0].status, CellStatus::Error);
  EXPECT_FALSE(r.rows[0].cells[0].error.empty());
  EXPECT_NE(render_report(r, ReportFormat::Table).find("error"), std::string::npos);
}

TEST(Benchmark, RejectsUnlabelledRecords) {
  auto g = grid();
  g.records[0].label.reset();
  EXPECT_THROW(g.run(), ArgumentError);
}
