#include "convrisk/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "convrisk/error.hpp"
#include "convrisk/rng.hpp"

namespace convrisk {

namespace {

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(text.substr(start));
      return out;
    }
    out.push_back(text.substr(start, pos - start));
    start = pos + 1;
  }
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace

QuestionnaireSchema::QuestionnaireSchema(std::vector<FeatureSpec> features) : features_(std::move(features)) {
  if (features_.empty()) throw SchemaError("schema must contain at least one feature");
  std::set<int> ids;
  std::set<std::string> names;
  for (const auto& f : features_) {
    if (f.id < 1) throw SchemaError("feature id must be >= 1, got " + std::to_string(f.id));
    if (f.name.empty()) throw SchemaError("feature f" + std::to_string(f.id) + " has an empty name");
    if (f.question_text.empty())
      throw SchemaError("feature f" + std::to_string(f.id) + " has an empty question");
    if (f.value_words.first == f.value_words.second || f.value_words.first.empty() ||
        f.value_words.second.empty())
      throw SchemaError("feature f" + std::to_string(f.id) + " needs two distinct value words");
    if (!ids.insert(f.id).second) throw SchemaError("duplicate feature id f" + std::to_string(f.id));
    if (!names.insert(f.name).second) throw SchemaError("duplicate feature name '" + f.name + "'");
  }
}

std::optional<std::size_t> QuestionnaireSchema::index_of_id(int id) const {
  for (std::size_t i = 0; i < features_.size(); ++i)
    if (features_[i].id == id) return i;
  return std::nullopt;
}

std::optional<std::size_t> QuestionnaireSchema::index_of_name(std::string_view name) const {
  for (std::size_t i = 0; i < features_.size(); ++i)
    if (features_[i].name == name) return i;
  return std::nullopt;
}

QuestionnaireSchema default_schema() {
  std::vector<FeatureSpec> f = {
      {1, "fever", "Has your child had a fever in the last three days?"},
      {2, "shortness of breath", "Is your child short of breath or breathing fast?"},
      {3, "chronic lung disease", "Does your child have asthma or another chronic lung disease?"},
      {4, "obesity", "Has a doctor told you that your child is overweight?"},
      {5, "diabetes", "Does your child have diabetes?"},
      {6, "weak immune system", "Does your child take medicine that weakens the immune system?"},
      {7, "age under two", "Is your child younger than two years old?"},
      {8, "fatigue", "Has your child been unusually tired or weak?"},
      {9, "cough", "Has your child had a cough?"},
      {10, "diarrhea", "Has your child had diarrhea?"},
      {11, "headache", "Has your child complained of a headache?"},
      {12, "nausea or vomiting", "Has your child had nausea or vomiting?"},
      {13, "lungs check", "Did the lungs check find abnormal breath sounds?"},
      {14, "eye redness", "Has your child had red or pink eyes?"},
      {15, "COVID-19 antibody test", "Did your child have a positive COVID-19 antibody test?"},
  };
  return QuestionnaireSchema(std::move(f));
}

QuestionnaireSchema generic_schema(std::size_t d) {
  std::vector<FeatureSpec> f;
  f.reserve(d);
  for (std::size_t j = 1; j <= d; ++j) {
    const auto name = "f" + std::to_string(j);
    f.push_back({static_cast<int>(j), name, "Is " + name + " present?"});
  }
  return QuestionnaireSchema(std::move(f));
}

void validate_record(const PatientRecord& record, const QuestionnaireSchema& schema) {
  if (record.values.size() != schema.d())
    throw ArgumentError("record has " + std::to_string(record.values.size()) + " values, schema expects " +
                        std::to_string(schema.d()));
  for (auto v : record.values)
    if (v > 1) throw ArgumentError("record value " + std::to_string(v) + " is not binary");
  if (record.label && *record.label > 1) throw ArgumentError("record label is not binary");
}

std::vector<PatientRecord> generate_synthetic_dataset(std::size_t n, const QuestionnaireSchema& schema,
                                                      std::uint64_t seed, double prevalence,
                                                      std::span<const double> signal_weights) {
  if (n < 1) throw ArgumentError("n must be >= 1");
  if (!(prevalence > 0.0 && prevalence < 1.0)) throw ArgumentError("prevalence must lie in (0, 1)");
  if (signal_weights.size() != schema.d())
    throw ArgumentError("signal weights have length " + std::to_string(signal_weights.size()) +
                        ", schema has d = " + std::to_string(schema.d()));

  const std::size_t d = schema.d();
  Rng rng(Rng::derive(seed, "synthetic-dataset"));
  std::vector<PatientRecord> records(n);
  std::vector<double> latent(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& r = records[i];
    r.values.resize(d);
    double z = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      r.values[j] = rng.bernoulli(0.5) ? 1 : 0;
      z += signal_weights[j] * r.values[j];
    }
    // Logistic noise: logit(u) for u uniform on (0, 1).
    const double u = (static_cast<double>(rng.next() >> 11) + 0.5) * 0x1.0p-53;
    latent[i] = z + std::log(u / (1.0 - u));
  }

  const auto target = static_cast<std::size_t>(std::floor(prevalence * static_cast<double>(n) + 0.5));
  auto positives = [&](double b) {
    return static_cast<std::size_t>(std::count_if(latent.begin(), latent.end(), [b](double v) { return v + b > 0; }));
  };
  // positives(b) is non-decreasing in b; find the smallest b reaching target.
  double lo = -100.0, hi = 100.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (positives(mid) >= target)
      hi = mid;
    else
      lo = mid;
  }
  for (std::size_t i = 0; i < n; ++i) records[i].label = latent[i] + hi > 0 ? 1 : 0;
  return records;
}

std::vector<double> parse_signal_weights(std::string_view spec, std::size_t d) {
  std::vector<double> w(d, 0.0);
  spec = trim(spec);
  if (spec.empty()) return w;
  for (auto item : split(spec, ',')) {
    item = trim(item);
    const auto colon = item.find(':');
    if (colon == std::string_view::npos) throw ArgumentError("signal item '" + std::string(item) + "' lacks ':'");
    const std::string id_text(trim(item.substr(0, colon)));
    const std::string w_text(trim(item.substr(colon + 1)));
    std::size_t used = 0;
    int id = 0;
    double value = 0.0;
    try {
      id = std::stoi(id_text.starts_with('f') ? id_text.substr(1) : id_text, &used);
      value = std::stod(w_text);
    } catch (const std::exception&) {
      throw ArgumentError("cannot parse signal item '" + std::string(item) + "'");
    }
    if (id < 1 || static_cast<std::size_t>(id) > d)
      throw ArgumentError("signal feature id " + std::to_string(id) + " out of range");
    w[static_cast<std::size_t>(id - 1)] = value;
  }
  return w;
}

DatasetSplit split_dataset(std::size_t n, std::uint64_t seed) {
  if (n < 5) throw DatasetTooSmallError("dataset of " + std::to_string(n) + " records is too small to split (need 5)");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(Rng::derive(seed, "split"));
  rng.shuffle(std::span<std::size_t>(order));

  const double nd = static_cast<double>(n);
  const auto n_train = static_cast<std::size_t>(std::floor(0.65 * nd + 0.5));
  const auto n_val = static_cast<std::size_t>(std::floor(0.15 * nd + 0.5));

  DatasetSplit s;
  s.seed = seed;
  s.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.validation.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
                      order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  s.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  std::sort(s.train.begin(), s.train.end());
  std::sort(s.validation.begin(), s.validation.end());
  std::sort(s.test.begin(), s.test.end());
  return s;
}

std::vector<std::size_t> sample_few_shot(std::span<const std::size_t> train_indices,
                                         std::span<const std::uint8_t> labels, std::size_t k,
                                         std::uint64_t seed) {
  if (k % 2 != 0) throw SamplingError("shot count " + std::to_string(k) + " is odd; balanced sampling needs even k");
  std::vector<std::size_t> pos, neg;
  for (auto idx : train_indices) {
    if (idx >= labels.size()) throw SamplingError("train index " + std::to_string(idx) + " has no label");
    (labels[idx] ? pos : neg).push_back(idx);
  }
  const std::size_t half = k / 2;
  if (pos.size() < half || neg.size() < half)
    throw SamplingError("need " + std::to_string(half) + " examples per class, train split has " +
                        std::to_string(pos.size()) + " positive and " + std::to_string(neg.size()) + " negative");
  Rng rng(Rng::derive(seed, "few-shot:" + std::to_string(k)));
  rng.shuffle(std::span<std::size_t>(pos));
  rng.shuffle(std::span<std::size_t>(neg));
  std::vector<std::size_t> out(pos.begin(), pos.begin() + static_cast<std::ptrdiff_t>(half));
  out.insert(out.end(), neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(half));
  return out;
}

LoadedDataset parse_dataset_csv(std::string_view text, const std::optional<QuestionnaireSchema>& schema) {
  auto lines = split(text, '\n');
  while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw ParseError("dataset is empty", 1);

  const auto header = split(trim(lines[0]), ',');
  if (header.empty() || trim(header.back()) != "label") throw ParseError("missing 'label' column in header", 1);
  const std::size_t d = header.size() - 1;
  if (d == 0) throw ParseError("header has no feature columns", 1);

  std::set<std::string> seen;
  std::vector<int> ids;
  for (std::size_t j = 0; j < d; ++j) {
    const std::string col(trim(header[j]));
    if (!seen.insert(col).second) throw SchemaError("duplicate feature column '" + col + "' in header");
    if (col.size() < 2 || col[0] != 'f' || !std::all_of(col.begin() + 1, col.end(), ::isdigit))
      throw ParseError("feature column '" + col + "' is not of the form f<id>", 1);
    ids.push_back(std::stoi(col.substr(1)));
  }

  QuestionnaireSchema resolved;
  if (schema) {
    if (schema->d() != d)
      throw SchemaError("header has " + std::to_string(d) + " features, schema has " + std::to_string(schema->d()));
    for (std::size_t j = 0; j < d; ++j)
      if (schema->feature(j).id != ids[j])
        throw SchemaError("header column " + std::to_string(j + 1) + " is f" + std::to_string(ids[j]) +
                          ", schema expects f" + std::to_string(schema->feature(j).id));
    resolved = *schema;
  } else {
    resolved = d == 15 ? default_schema() : generic_schema(d);
    for (std::size_t j = 0; j < d; ++j)
      if (resolved.feature(j).id != ids[j])
        throw SchemaError("header column " + std::to_string(j + 1) + " is f" + std::to_string(ids[j]) +
                          ", expected f" + std::to_string(j + 1));
  }

  LoadedDataset out{resolved, {}};
  for (std::size_t row = 1; row < lines.size(); ++row) {
    const auto line = trim(lines[row]);
    const std::size_t row_no = row + 1;
    if (line.empty()) throw ParseError("empty row", row_no);
    const auto cells = split(line, ',');
    if (cells.size() != d + 1)
      throw ParseError("expected " + std::to_string(d + 1) + " cells, found " + std::to_string(cells.size()), row_no);
    PatientRecord r;
    r.values.reserve(d);
    for (std::size_t j = 0; j < d; ++j) {
      const auto c = trim(cells[j]);
      if (c != "0" && c != "1")
        throw ParseError("value '" + std::string(c) + "' in column f" + std::to_string(ids[j]) + " is not 0 or 1",
                         row_no);
      r.values.push_back(c == "1" ? 1 : 0);
    }
    const auto lab = trim(cells[d]);
    if (!lab.empty()) {
      if (lab != "0" && lab != "1") throw ParseError("label '" + std::string(lab) + "' is not 0 or 1", row_no);
      r.label = lab == "1" ? 1 : 0;
    }
    out.records.push_back(std::move(r));
  }
  return out;
}

LoadedDataset load_dataset(const std::filesystem::path& path, const std::optional<QuestionnaireSchema>& schema) {
  return parse_dataset_csv(read_text_file(path), schema);
}

std::string format_dataset_csv(const QuestionnaireSchema& schema, std::span<const PatientRecord> records) {
  std::string out;
  for (const auto& f : schema.features()) out += "f" + std::to_string(f.id) + ",";
  out += "label\n";
  for (const auto& r : records) {
    validate_record(r, schema);
    for (auto v : r.values) {
      out += static_cast<char>('0' + v);
      out += ',';
    }
    if (r.label) out += static_cast<char>('0' + *r.label);
    out += '\n';
  }
  return out;
}

void save_dataset(const std::filesystem::path& path, const QuestionnaireSchema& schema,
                  std::span<const PatientRecord> records) {
  write_text_file(path, format_dataset_csv(schema, records));
}

QuestionnaireSchema parse_schema(std::string_view text) {
  std::vector<FeatureSpec> features;
  const auto lines = split(text, '\n');
  for (std::size_t i = 0; i < lines.size(); ++i) {
    auto line = lines[i];
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (trim(line).empty() || trim(line).front() == '#') continue;
    const auto cols = split(line, '\t');
    if (cols.size() != 3 && cols.size() != 5)
      throw ParseError("schema line needs 3 or 5 tab-separated fields, found " + std::to_string(cols.size()), i + 1);
    FeatureSpec f;
    const std::string id_text(trim(cols[0]));
    const auto [ptr, ec] = std::from_chars(id_text.data(), id_text.data() + id_text.size(), f.id);
    if (ec != std::errc{} || ptr != id_text.data() + id_text.size())
      throw ParseError("bad feature id '" + id_text + "'", i + 1);
    f.name = std::string(trim(cols[1]));
    f.question_text = std::string(trim(cols[2]));
    if (cols.size() == 5) f.value_words = {std::string(trim(cols[3])), std::string(trim(cols[4]))};
    features.push_back(std::move(f));
  }
  return QuestionnaireSchema(std::move(features));
}

std::string format_schema(const QuestionnaireSchema& schema) {
  std::string out = "# id\tname\tquestion_text\tword_for_0\tword_for_1\n";
  for (const auto& f : schema.features()) {
    out += std::to_string(f.id) + "\t" + f.name + "\t" + f.question_text + "\t" + f.value_words.first + "\t" +
           f.value_words.second + "\n";
  }
  return out;
}

QuestionnaireSchema load_schema(const std::filesystem::path& path) { return parse_schema(read_text_file(path)); }

void save_schema(const std::filesystem::path& path, const QuestionnaireSchema& schema) {
  write_text_file(path, format_schema(schema));
}

std::vector<std::uint8_t> labels_of(std::span<const PatientRecord> records) {
  std::vector<std::uint8_t> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (!r.label) throw ArgumentError("record without a label where labels are required");
    out.push_back(*r.label);
  }
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error("short write to " + path.string());
}

}  // namespace convrisk
