#include "convrisk/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <nlohmann/json.hpp>
#include <numeric>

#include "convrisk/error.hpp"
#include "convrisk/microlm/model.hpp"
#include "convrisk/rng.hpp"

namespace convrisk::evaluation {

namespace {

using nlohmann::json;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::string_view kNotApplicable = "−";

void check_inputs(std::span<const double> scores, std::span<const std::uint8_t> labels, std::size_t& P,
                  std::size_t& N) {
  if (scores.size() != labels.size())
    throw ArgumentError("scores and labels differ in length (" + std::to_string(scores.size()) + " vs " +
                        std::to_string(labels.size()) + ")");
  P = N = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] > 1) throw ArgumentError("labels must be 0 or 1");
    if (std::isnan(scores[i])) throw ArgumentError("score " + std::to_string(i) + " is NaN");
    (labels[i] ? P : N)++;
  }
  if (P == 0 || N == 0) throw UndefinedAucError("AUC is undefined unless both classes are present");
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string full_precision(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::size_t display_width(std::string_view s) {
  return static_cast<std::size_t>(std::count_if(s.begin(), s.end(), [](char c) { return (static_cast<unsigned char>(c) & 0xC0) != 0x80; }));
}

json hyper_to_json(const microlm::TrainingHyper& h) {
  return json{{"learning_rate", h.learning_rate}, {"steps", h.steps},       {"batch_size", h.batch_size},
              {"beta1", h.beta1},                 {"beta2", h.beta2},       {"epsilon", h.epsilon},
              {"weight_decay", h.weight_decay},   {"grad_clip", h.grad_clip}, {"cosine_decay", h.cosine_decay},
              {"eval_interval", h.eval_interval}};
}

json baseline_to_json(const baselines::BaselineHyper& b) {
  return json{{"lr_step", b.lr_step},
              {"lr_iterations", b.lr_iterations},
              {"lr_l2", b.lr_l2},
              {"rf_trees", b.rf_trees},
              {"rf_bootstrap", b.rf_bootstrap},
              {"rf_max_features", b.rf_max_features},
              {"rf_max_depth", b.rf_max_depth},
              {"rf_min_samples_leaf", b.rf_min_samples_leaf},
              {"gbt_rounds", b.gbt_rounds},
              {"gbt_max_depth", b.gbt_max_depth},
              {"gbt_learning_rate", b.gbt_learning_rate},
              {"gbt_min_samples_leaf", b.gbt_min_samples_leaf},
              {"gbt_min_samples_split", b.gbt_min_samples_split},
              {"gbt_lambda", b.gbt_lambda}};
}

std::uint64_t weights_fingerprint(const microlm::MicroLMWeights& w) {
  std::uint64_t h = fnv1a64("");
  w.for_each([&](const std::string& name, const microlm::Matrix& m) {
    h = fnv1a64(name, h);
    h = fnv1a64(std::string_view(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(double)), h);
  });
  return h;
}

bool is_baseline(std::string_view model) { return model != kMicroLM; }

std::vector<std::uint8_t> pick(std::span<const std::uint8_t> labels, std::span<const std::size_t> rows) {
  std::vector<std::uint8_t> out;
  out.reserve(rows.size());
  for (auto r : rows) out.push_back(labels[r]);
  return out;
}

}  // namespace

double auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  std::size_t P = 0, N = 0;
  check_inputs(scores, labels, P, N);
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of (1-based, tie-averaged) ranks of the positives.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) rank_sum += avg_rank;
    i = j;
  }
  const double p = static_cast<double>(P), n = static_cast<double>(N);
  return (rank_sum - p * (p + 1) / 2) / (p * n);
}

double auc_pair_count(std::span<const double> scores, std::span<const std::uint8_t> labels) {
  std::size_t P = 0, N = 0;
  check_inputs(scores, labels, P, N);
  double wins = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!labels[i]) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j]) continue;
      if (scores[i] > scores[j])
        wins += 1.0;
      else if (scores[i] == scores[j])
        wins += 0.5;
    }
  }
  return wins / (static_cast<double>(P) * static_cast<double>(N));
}

microlm::TrainingHyper default_finetune_hyper() {
  microlm::TrainingHyper h;
  h.steps = 100;
  return h;
}

void BenchmarkConfig::validate() const {
  if (models.empty()) throw ArgumentError("no models selected");
  for (const auto& m : models)
    if (m != kMicroLM) baselines::parse_baseline_kind(m);
  if (seeds.empty()) throw ArgumentError("no seeds selected");
  if (shots.empty()) throw ArgumentError("no shot settings selected");
  for (auto k : shots)
    if (k != 0 && k != 2 && k != 4 && k != 8 && k != 16 && k != 32)
      throw ArgumentError("shot setting " + std::to_string(k) + " is not one of 0,2,4,8,16,32");
  if (std::find(models.begin(), models.end(), kMicroLM) != models.end() && templates.empty())
    throw ArgumentError("the language model needs at least one template");
}

std::string config_hash(const BenchmarkConfig& config) {
  json templates = json::array();
  for (auto t : config.templates) templates.push_back(std::string(to_string(t)));
  const json j{{"models", config.models},
               {"templates", templates},
               {"shots", config.shots},
               {"seeds", config.seeds},
               {"finetune", hyper_to_json(config.finetune)},
               {"lora",
                {{"rank", config.lora.rank},
                 {"alpha", config.lora.alpha},
                 {"targets",
                  [&] {
                    json t = json::array();
                    for (auto p : config.lora.targets) t.push_back(std::string(microlm::to_string(p)));
                    return t;
                  }()},
                 {"layers", config.lora.layers}}},
               {"baseline", baseline_to_json(config.baseline)},
               {"microlm_label", config.microlm_label}};
  return hex64(fnv1a64(j.dump()));
}

std::string dataset_fingerprint(const QuestionnaireSchema& schema, std::span<const PatientRecord> records) {
  return hex64(fnv1a64(format_schema(schema) + format_dataset_csv(schema, records)));
}

std::string_view to_string(CellStatus status) {
  switch (status) {
    case CellStatus::Ok: return "ok";
    case CellStatus::NotApplicable: return "not_applicable";
    case CellStatus::Error: return "error";
  }
  return "error";
}

void aggregate(EvalCell& cell) {
  if (cell.status != CellStatus::Ok || cell.seed_aucs.empty()) {
    cell.mean = cell.std = 0.0;
    return;
  }
  const double n = static_cast<double>(cell.seed_aucs.size());
  double mean = 0.0;
  for (double v : cell.seed_aucs) mean += v;
  mean /= n;
  double var = 0.0;
  for (double v : cell.seed_aucs) var += (v - mean) * (v - mean);
  cell.mean = mean;
  cell.std = std::sqrt(var / n);
}

BenchmarkReport run_benchmark(const QuestionnaireSchema& schema, std::span<const PatientRecord> records,
                              const BenchmarkModel& model, const BenchmarkConfig& config,
                              const std::function<void(const std::string&)>& progress) {
  config.validate();
  for (const auto& r : records) {
    validate_record(r, schema);
    if (!r.label) throw ArgumentError("benchmarking needs every record labelled");
  }
  const bool with_lm = std::find(config.models.begin(), config.models.end(), kMicroLM) != config.models.end();
  if (with_lm && (!model.weights || !model.tokenizer))
    throw ArgumentError("the microlm rows need base weights and a tokenizer");
  const auto labels = labels_of(records);

  std::vector<std::size_t> shot_list = config.shots;
  std::sort(shot_list.begin(), shot_list.end());
  shot_list.erase(std::unique(shot_list.begin(), shot_list.end()), shot_list.end());

  BenchmarkReport report;
  auto& meta = report.metadata;
  meta.seeds = config.seeds;
  meta.shots = shot_list;
  meta.dataset_fingerprint = dataset_fingerprint(schema, records);
  meta.config_hash = config_hash(config);
  meta.n_records = records.size();
  meta.d = schema.d();
  meta.microlm_label = config.microlm_label;
  if (with_lm) meta.model_fingerprint = hex64(weights_fingerprint(*model.weights));

  for (const auto& m : config.models) {
    if (m == kMicroLM) {
      for (auto t : config.templates) report.rows.push_back({m, t, {}});
    } else {
      report.rows.push_back({std::string(baselines::to_string(baselines::parse_baseline_kind(m))), std::nullopt, {}});
    }
  }
  for (auto& row : report.rows)
    for (auto k : shot_list) {
      EvalCell c;
      c.model = row.model;
      c.template_kind = row.template_kind;
      c.shots = k;
      c.status = (is_baseline(row.model) && k == 0) ? CellStatus::NotApplicable : CellStatus::Ok;
      if (c.status == CellStatus::Ok) c.seed_aucs.assign(config.seeds.size(), kNaN);
      row.cells.push_back(std::move(c));
    }

  auto fail = [](EvalCell& cell, const std::string& what) {
    if (cell.status != CellStatus::Error) cell.error = what;
    cell.status = CellStatus::Error;
  };

  // Prompts and zero-shot scores are shared by every seed.
  std::vector<std::vector<SerializedPrompt>> prompts;
  std::vector<std::vector<double>> base_scores;
  if (with_lm) {
    for (auto t : config.templates) {
      auto& p = prompts.emplace_back();
      auto& s = base_scores.emplace_back();
      for (const auto& r : records) {
        p.push_back(serialize(r, schema, t, *model.tokenizer));
        s.push_back(microlm::score(*model.weights, nullptr, p.back()).p_yes);
      }
    }
  }
  const auto template_index = [&](TemplateKind t) {
    return static_cast<std::size_t>(std::find(config.templates.begin(), config.templates.end(), t) - config.templates.begin());
  };

  for (std::size_t si = 0; si < config.seeds.size(); ++si) {
    const auto seed = config.seeds[si];
    DatasetSplit split;
    try {
      split = split_dataset(records.size(), seed);
    } catch (const Error& e) {
      for (auto& row : report.rows)
        for (auto& c : row.cells)
          if (c.status != CellStatus::NotApplicable) fail(c, e.what());
      continue;
    }
    const auto test_labels = pick(labels, split.test);
    const auto X_test = baselines::feature_matrix(records, split.test);

    for (std::size_t ki = 0; ki < shot_list.size(); ++ki) {
      const auto k = shot_list[ki];
      if (progress) progress("seed " + std::to_string(seed) + ", " + std::to_string(k) + " shots");
      std::vector<std::size_t> shots;
      if (k > 0) {
        try {
          shots = sample_few_shot(split.train, labels, k, seed);
        } catch (const Error& e) {
          for (auto& row : report.rows)
            if (row.cells[ki].status != CellStatus::NotApplicable) fail(row.cells[ki], e.what());
          continue;
        }
      }
      for (auto& row : report.rows) {
        auto& cell = row.cells[ki];
        if (cell.status == CellStatus::NotApplicable) continue;
        try {
          std::vector<double> scores;
          if (row.model == kMicroLM) {
            const auto ti = template_index(*row.template_kind);
            const auto& p = prompts[ti];
            if (k == 0) {
              for (auto i : split.test) scores.push_back(base_scores[ti][i]);
            } else {
              std::vector<microlm::TrainingExample> train, val;
              for (auto i : shots) train.push_back(microlm::make_example(p[i], labels[i]));
              for (auto i : split.validation) val.push_back(microlm::make_example(p[i], labels[i]));
              auto hyper = config.finetune;
              hyper.on_step = nullptr;
              hyper.seed = Rng::derive(seed, "finetune:" + std::string(to_string(*row.template_kind)) + ":" + std::to_string(k));
              const auto tuned = microlm::finetune_lora(*model.weights, train, val, config.lora, hyper);
              for (auto i : split.test) scores.push_back(microlm::score(*model.weights, &tuned.adapter, p[i]).p_yes);
            }
          } else {
            const auto kind = baselines::parse_baseline_kind(row.model);
            const auto X = baselines::feature_matrix(records, shots);
            const auto y = pick(labels, shots);
            const auto fitted = baselines::fit(kind, X, y, config.baseline, Rng::derive(seed, "baseline:" + row.model + ":" + std::to_string(k)));
            scores = fitted.predict_proba(X_test);
          }
          cell.seed_aucs[si] = auc(scores, test_labels);
        } catch (const Error& e) {
          fail(cell, e.what());
        }
      }
    }
  }
  for (auto& row : report.rows)
    for (auto& c : row.cells) aggregate(c);
  return report;
}

ReportFormat parse_report_format(std::string_view text) {
  if (text == "table" || text == "table-text" || text == "text") return ReportFormat::Table;
  if (text == "csv") return ReportFormat::Csv;
  if (text == "json") return ReportFormat::Json;
  throw ArgumentError("unknown report format '" + std::string(text) + "' (expected table, csv or json)");
}

std::string format_cell(double mean, double std) {
  const auto round2 = [](double x) { return std::floor(x * 100.0 + 0.5 + 1e-9) / 100.0; };
  char m[16], s[16];
  std::snprintf(m, sizeof m, "%.2f", round2(mean));
  std::snprintf(s, sizeof s, "%.2f", round2(std));
  std::string sd = s;
  if (sd.rfind("0.", 0) == 0) sd.erase(0, 1);
  return std::string(m) + "_{" + sd + "}";
}

std::string row_label(const ReportRow& row, std::string_view microlm_label) {
  if (row.model == kMicroLM) {
    std::string label(microlm_label);
    if (row.template_kind) label += "-" + std::string(template_suffix(*row.template_kind));
    return label;
  }
  return std::string(baselines::display_name(baselines::parse_baseline_kind(row.model)));
}

namespace {

std::string render_table(const BenchmarkReport& report) {
  std::vector<std::vector<std::string>> grid;
  std::vector<std::string> header{""};
  for (auto k : report.metadata.shots) header.push_back(std::to_string(k));
  grid.push_back(header);
  for (const auto& row : report.rows) {
    std::vector<std::string> line{row_label(row, report.metadata.microlm_label)};
    for (const auto& c : row.cells) {
      switch (c.status) {
        case CellStatus::Ok: line.push_back(format_cell(c.mean, c.std)); break;
        case CellStatus::NotApplicable: line.emplace_back(kNotApplicable); break;
        case CellStatus::Error: line.emplace_back("error"); break;
      }
    }
    grid.push_back(std::move(line));
  }
  std::vector<std::size_t> width(header.size(), 0);
  width[0] = display_width("Model");
  for (const auto& line : grid)
    for (std::size_t j = 0; j < line.size(); ++j) width[j] = std::max(width[j], display_width(line[j]));
  // Two header lines, as in the published layout: the model column title
  // next to a spanning "Number of Shots" caption, then the shot counts.
  std::string out = "Model" + std::string(width[0] - display_width("Model") + 2, ' ') + "Number of Shots\n";
  for (const auto& line : grid) {
    std::string text;
    for (std::size_t j = 0; j < line.size(); ++j) {
      text += line[j];
      if (j + 1 < line.size()) text += std::string(width[j] - display_width(line[j]) + 2, ' ');
    }
    out += text + "\n";
  }
  return out;
}

std::string render_csv(const BenchmarkReport& report) {
  std::string out = "model,template,shots,seed,auc\n";
  for (const auto& row : report.rows) {
    const std::string tmpl = row.template_kind ? std::string(to_string(*row.template_kind)) : "";
    for (const auto& c : row.cells)
      for (std::size_t si = 0; si < report.metadata.seeds.size(); ++si) {
        std::string value;
        if (c.status == CellStatus::NotApplicable)
          value = "NA";
        else if (si >= c.seed_aucs.size() || std::isnan(c.seed_aucs[si]))
          value = "error";
        else
          value = full_precision(c.seed_aucs[si]);
        out += row.model + "," + tmpl + "," + std::to_string(c.shots) + "," + std::to_string(report.metadata.seeds[si]) +
               "," + value + "\n";
      }
  }
  return out;
}

json report_to_json(const BenchmarkReport& report) {
  const auto& m = report.metadata;
  json rows = json::array();
  for (const auto& row : report.rows) {
    json cells = json::array();
    for (const auto& c : row.cells) {
      json aucs = json::array();
      for (double v : c.seed_aucs) aucs.push_back(std::isnan(v) ? json(nullptr) : json(v));
      json cell{{"shots", c.shots}, {"status", std::string(to_string(c.status))}, {"seed_aucs", aucs}};
      if (c.status == CellStatus::Ok) {
        cell["mean"] = c.mean;
        cell["std"] = c.std;
      }
      if (!c.error.empty()) cell["error"] = c.error;
      cells.push_back(std::move(cell));
    }
    rows.push_back({{"model", row.model},
                    {"template", row.template_kind ? json(std::string(to_string(*row.template_kind))) : json(nullptr)},
                    {"label", row_label(row, m.microlm_label)},
                    {"cells", cells}});
  }
  return json{{"metadata",
               {{"seeds", m.seeds},
                {"shots", m.shots},
                {"dataset_fingerprint", m.dataset_fingerprint},
                {"config_hash", m.config_hash},
                {"model_fingerprint", m.model_fingerprint},
                {"n_records", m.n_records},
                {"d", m.d},
                {"microlm_label", m.microlm_label}}},
              {"rows", rows}};
}

CellStatus parse_status(const std::string& s) {
  if (s == "ok") return CellStatus::Ok;
  if (s == "not_applicable") return CellStatus::NotApplicable;
  if (s == "error") return CellStatus::Error;
  throw ParseError("unknown cell status '" + s + "'");
}

}  // namespace

std::string render_report(const BenchmarkReport& report, ReportFormat format) {
  switch (format) {
    case ReportFormat::Table: return render_table(report);
    case ReportFormat::Csv: return render_csv(report);
    case ReportFormat::Json: return report_to_json(report).dump(2) + "\n";
  }
  return {};
}

BenchmarkReport parse_report_json(std::string_view text) {
  BenchmarkReport report;
  try {
    const json j = json::parse(text);
    const auto& m = j.at("metadata");
    auto& meta = report.metadata;
    meta.seeds = m.at("seeds").get<std::vector<std::uint64_t>>();
    meta.shots = m.at("shots").get<std::vector<std::size_t>>();
    meta.dataset_fingerprint = m.at("dataset_fingerprint").get<std::string>();
    meta.config_hash = m.at("config_hash").get<std::string>();
    meta.model_fingerprint = m.at("model_fingerprint").get<std::string>();
    meta.n_records = m.at("n_records").get<std::size_t>();
    meta.d = m.at("d").get<std::size_t>();
    meta.microlm_label = m.at("microlm_label").get<std::string>();
    for (const auto& r : j.at("rows")) {
      ReportRow row;
      row.model = r.at("model").get<std::string>();
      if (!r.at("template").is_null()) row.template_kind = parse_template_kind(r.at("template").get<std::string>());
      for (const auto& c : r.at("cells")) {
        EvalCell cell;
        cell.model = row.model;
        cell.template_kind = row.template_kind;
        cell.shots = c.at("shots").get<std::size_t>();
        cell.status = parse_status(c.at("status").get<std::string>());
        for (const auto& v : c.at("seed_aucs")) cell.seed_aucs.push_back(v.is_null() ? kNaN : v.get<double>());
        if (c.contains("mean")) cell.mean = c.at("mean").get<double>();
        if (c.contains("std")) cell.std = c.at("std").get<double>();
        if (c.contains("error")) cell.error = c.at("error").get<std::string>();
        row.cells.push_back(std::move(cell));
      }
      if (row.cells.size() != meta.shots.size()) throw ParseError("row " + row.model + " does not have one cell per shot setting");
      report.rows.push_back(std::move(row));
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed report: ") + e.what());
  } catch (const ArgumentError& e) {
    throw ParseError(std::string("malformed report: ") + e.what());
  }
  return report;
}

}  // namespace convrisk::evaluation
