#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "convrisk/baselines.hpp"
#include "convrisk/dataset.hpp"
#include "convrisk/microlm/training.hpp"
#include "convrisk/serialization.hpp"
#include "convrisk/tokenizer.hpp"

namespace convrisk::evaluation {

// Mann-Whitney AUC via the rank sum with average ranks for ties; O(n log n).
// Throws ArgumentError on length mismatch or non-binary labels and
// UndefinedAucError when only one class is present.
double auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

// The same quantity by counting every (positive, negative) pair. O(P*N);
// kept as a reference for tests.
double auc_pair_count(std::span<const double> scores, std::span<const std::uint8_t> labels);

inline constexpr std::string_view kMicroLM = "microlm";

// LoRA settings used by the grid: the training defaults with 100 steps.
microlm::TrainingHyper default_finetune_hyper();

struct BenchmarkConfig {
  // "microlm" and/or baseline names accepted by parse_baseline_kind().
  std::vector<std::string> models{"microlm", "logistic_regression", "random_forest", "gbt"};
  std::vector<TemplateKind> templates{TemplateKind::List, TemplateKind::Text};
  std::vector<std::size_t> shots{0, 2, 4, 8, 16, 32};
  std::vector<std::uint64_t> seeds{0, 1, 32, 42, 1024};
  microlm::TrainingHyper finetune = default_finetune_hyper();
  microlm::LoraSpec lora{};
  baselines::BaselineHyper baseline{};
  // Row label prefix for the language model.
  std::string microlm_label = "MicroLM";

  // Throws ArgumentError for unknown models, shots outside
  // {0,2,4,8,16,32}, or empty seed/shot/template lists.
  void validate() const;
};

// Stable FNV-1a hash of every field that affects results.
std::string config_hash(const BenchmarkConfig& config);
// FNV-1a over the canonical CSV rendering of the dataset.
std::string dataset_fingerprint(const QuestionnaireSchema& schema, std::span<const PatientRecord> records);

enum class CellStatus { Ok, NotApplicable, Error };
std::string_view to_string(CellStatus status);

struct EvalCell {
  std::string model;  // "microlm" or a baseline name
  std::optional<TemplateKind> template_kind;
  std::size_t shots = 0;
  CellStatus status = CellStatus::Ok;
  // One entry per seed, in BenchmarkConfig::seeds order; NaN where a seed failed.
  std::vector<double> seed_aucs;
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
  std::string error;
};

struct BenchmarkMetadata {
  std::vector<std::uint64_t> seeds;
  std::vector<std::size_t> shots;
  std::string dataset_fingerprint;
  std::string config_hash;
  std::string model_fingerprint;  // empty when the grid has no language model rows
  std::size_t n_records = 0;
  std::size_t d = 0;
  std::string microlm_label = "MicroLM";
};

// One row of the grid, e.g. MicroLM with the List template, or a baseline.
struct ReportRow {
  std::string model;
  std::optional<TemplateKind> template_kind;
  std::vector<EvalCell> cells;  // one per shot setting, metadata.shots order
};

struct BenchmarkReport {
  BenchmarkMetadata metadata;
  std::vector<ReportRow> rows;
};

struct BenchmarkModel {
  const microlm::MicroLMWeights* weights = nullptr;
  const Tokenizer* tokenizer = nullptr;
};

// For each seed: split 65/15/20, draw balanced k-shot sets from the training
// part, fine-tune (language model, validation part used for checkpoint
// selection) or fit (baselines) and compute the test AUC. Baselines at 0
// shots are not applicable. Cells whose computation throws are marked with
// the error instead of being dropped. `model` may be empty when the grid
// holds baselines only.
BenchmarkReport run_benchmark(const QuestionnaireSchema& schema, std::span<const PatientRecord> records,
                              const BenchmarkModel& model, const BenchmarkConfig& config,
                              const std::function<void(const std::string&)>& progress = {});

// Recomputes mean and population std from seed_aucs (Ok cells only).
void aggregate(EvalCell& cell);

enum class ReportFormat { Table, Csv, Json };
ReportFormat parse_report_format(std::string_view text);

// Table: models x templates by shots with "mean_{std}" cells rounded to two
// decimals and "−" for not-applicable cells. CSV: long form
// `model,template,shots,seed,auc`. JSON: nested grid with metadata.
std::string render_report(const BenchmarkReport& report, ReportFormat format);
// "0.70_{.06}" for mean 0.695, std 0.064.
std::string format_cell(double mean, double std);
std::string row_label(const ReportRow& row, std::string_view microlm_label);

// Inverse of the JSON rendering. Throws ParseError.
BenchmarkReport parse_report_json(std::string_view text);

}  // namespace convrisk::evaluation
