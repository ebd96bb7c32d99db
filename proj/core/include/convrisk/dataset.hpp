#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace convrisk {

// One binary questionnaire item. `id` is 1-based and matches the `f{id}`
// column of the dataset CSV.
struct FeatureSpec {
  int id = 0;
  std::string name;
  std::string question_text;
  // value_words.first renders 0, value_words.second renders 1.
  std::pair<std::string, std::string> value_words{"no", "yes"};

  bool operator==(const FeatureSpec&) const = default;
};

// Ordered list of features. The order is significant: it is the order the
// questions are asked in and the order features appear in prompts.
class QuestionnaireSchema {
 public:
  QuestionnaireSchema() = default;
  // Throws SchemaError on duplicate ids/names, empty text, or equal value words.
  explicit QuestionnaireSchema(std::vector<FeatureSpec> features);

  std::size_t d() const noexcept { return features_.size(); }
  const std::vector<FeatureSpec>& features() const noexcept { return features_; }
  const FeatureSpec& feature(std::size_t index) const { return features_.at(index); }

  // Position of the feature with the given id/name, if any.
  std::optional<std::size_t> index_of_id(int id) const;
  std::optional<std::size_t> index_of_name(std::string_view name) const;

  bool operator==(const QuestionnaireSchema&) const = default;

 private:
  std::vector<FeatureSpec> features_;
};

// The 15-item pediatric COVID-19 questionnaire. Items 9 and 12-15 are the
// clinically established risk factors; the remaining ten are illustrative.
QuestionnaireSchema default_schema();

// Fallback schema for datasets whose width differs from the default: feature
// j is named "f{j}".
QuestionnaireSchema generic_schema(std::size_t d);

struct PatientRecord {
  std::vector<std::uint8_t> values;
  std::optional<std::uint8_t> label;

  bool operator==(const PatientRecord&) const = default;
};

// Throws ArgumentError when the record does not conform to `schema`.
void validate_record(const PatientRecord& record, const QuestionnaireSchema& schema);

struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> validation;
  std::vector<std::size_t> test;
  std::uint64_t seed = 0;

  bool operator==(const DatasetSplit&) const = default;
};

// Labels are Bernoulli draws from sigmoid(w.x + b), realised as
// 1[w.x + b + logistic noise > 0]. The intercept b is bisected so the
// empirical positive count lands on round(prevalence * n). Feature bits are
// fair coin flips. Output is a pure function of the arguments.
std::vector<PatientRecord> generate_synthetic_dataset(std::size_t n, const QuestionnaireSchema& schema,
                                                      std::uint64_t seed, double prevalence,
                                                      std::span<const double> signal_weights);

// Parses "9:2.0,13:1.5" (1-based feature ids) into a dense weight vector.
std::vector<double> parse_signal_weights(std::string_view spec, std::size_t d);

// Seeded permutation split. train = floor(0.65n + 0.5),
// validation = floor(0.15n + 0.5), test = remainder. Each part is sorted.
DatasetSplit split_dataset(std::size_t n, std::uint64_t seed);

// Balanced k-shot draw from `train_indices`. `labels` is indexed by record
// index (not by position in train_indices). Returns k/2 positives followed
// by k/2 negatives.
std::vector<std::size_t> sample_few_shot(std::span<const std::size_t> train_indices,
                                         std::span<const std::uint8_t> labels, std::size_t k,
                                         std::uint64_t seed);

struct LoadedDataset {
  QuestionnaireSchema schema;
  std::vector<PatientRecord> records;
};

// CSV: header `f1,...,fd,label`, body rows of 0/1 integers. An empty label
// cell means "unlabelled". When `schema` is given the header must match it;
// otherwise the default schema is used for d = 15 and a generic one else.
LoadedDataset load_dataset(const std::filesystem::path& path,
                           const std::optional<QuestionnaireSchema>& schema = std::nullopt);
LoadedDataset parse_dataset_csv(std::string_view text,
                                const std::optional<QuestionnaireSchema>& schema = std::nullopt);
std::string format_dataset_csv(const QuestionnaireSchema& schema, std::span<const PatientRecord> records);
void save_dataset(const std::filesystem::path& path, const QuestionnaireSchema& schema,
                  std::span<const PatientRecord> records);

// Schema file: one feature per line, tab separated:
//   id <TAB> name <TAB> question_text [<TAB> word_for_0 <TAB> word_for_1]
// Blank lines and lines starting with '#' are ignored.
QuestionnaireSchema parse_schema(std::string_view text);
std::string format_schema(const QuestionnaireSchema& schema);
QuestionnaireSchema load_schema(const std::filesystem::path& path);
void save_schema(const std::filesystem::path& path, const QuestionnaireSchema& schema);

std::vector<std::uint8_t> labels_of(std::span<const PatientRecord> records);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace convrisk
