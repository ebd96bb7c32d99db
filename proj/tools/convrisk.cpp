// convrisk: command-line front end for data generation, training,
// scoring, benchmarking and the session service.
//
// Exit codes: 0 success, 1 runtime failure, 2 bad command line.

#include <CLI11.hpp>

#include <atomic>
#include <csignal>
#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>

#include "convrisk/corpus.hpp"
#include "convrisk/dataset.hpp"
#include "convrisk/error.hpp"
#include "convrisk/evaluation.hpp"
#include "convrisk/microlm/io.hpp"
#include "convrisk/microlm/model.hpp"
#include "convrisk/microlm/training.hpp"
#include "convrisk/service/http_server.hpp"

namespace {

using namespace convrisk;

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename T>
std::vector<T> parse_list(const std::string& text, const char* what) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      const auto v = std::stoull(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(static_cast<T>(v));
    } catch (const std::exception&) {
      throw ArgumentError(std::string("bad ") + what + " entry '" + item + "'");
    }
  }
  if (out.empty()) throw ArgumentError(std::string("empty ") + what + " list");
  return out;
}

std::vector<std::string> split_names(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

// Options shared by every command that needs a trained model.
struct ModelOptions {
  std::string bundle;
  std::string weights;
  std::string adapter;
  std::string schema;
  std::string template_name = "list";

  void add(CLI::App* cmd, bool with_template = true) {
    cmd->add_option("--bundle", bundle, "Model bundle manifest (bundle.json)");
    cmd->add_option("--weights", weights, "Base weights file");
    cmd->add_option("--adapter", adapter, "LoRA adapter file");
    cmd->add_option("--schema", schema, "Schema file (defaults to the one matching the weights)");
    if (with_template) cmd->add_option("--template", template_name, "Prompt template: list or text");
  }

  service::ModelBundle load(bool template_given) const {
    service::ModelBundle b;
    if (!bundle.empty()) {
      b = service::load_model_bundle(bundle);
    } else {
      if (weights.empty()) throw ArgumentError("pass --bundle or --weights");
      auto wf = microlm::load_weights(weights);
      b.weights = std::move(wf.weights);
      b.schema = !schema.empty() ? load_schema(schema) : wf.schema_d == 15 ? default_schema() : generic_schema(wf.schema_d);
      if (b.schema.d() != wf.schema_d)
        throw LoadError("schema has d=" + std::to_string(b.schema.d()) + " but the weights expect d=" +
                        std::to_string(wf.schema_d));
      b.tokenizer = Tokenizer::for_schema(b.schema);
      if (b.tokenizer.vocabulary() != wf.vocabulary) throw LoadError("schema vocabulary does not match the weights");
    }
    if (!adapter.empty()) {
      b.adapter = microlm::load_adapter(adapter);
      microlm::check_adapter_compatible(*b.adapter, b.weights.config);
    }
    if (template_given || bundle.empty()) b.template_kind = parse_template_kind(template_name);
    return b;
  }
};

PatientRecord parse_record(const std::string& text, const QuestionnaireSchema& schema) {
  PatientRecord r;
  for (auto v : parse_list<unsigned>(text, "record")) {
    if (v > 1) throw ArgumentError("record values must be 0 or 1");
    r.values.push_back(static_cast<std::uint8_t>(v));
  }
  if (r.values.size() != schema.d())
    throw ArgumentError("record has " + std::to_string(r.values.size()) + " values, the schema has " +
                        std::to_string(schema.d()));
  return r;
}

void write_output(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-")
    std::cout << text;
  else
    write_text_file(path, text);
}

std::atomic<service::HttpServer*> g_server{nullptr};

extern "C" void on_signal(int) {
  if (auto* s = g_server.load()) s->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Conversational COVID-19 severity risk toolkit"};
  app.set_config("--config", "", "TOML/INI file supplying option defaults");
  app.require_subcommand(1);
  app.allow_windows_style_options(false);

  std::uint64_t seed = 0;

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic labelled questionnaire dataset");
  std::string gen_out, gen_schema, gen_schema_out, gen_signal;
  std::size_t gen_n = 393;
  double gen_prev = 0.28;
  gen->add_option("--out", gen_out, "Output CSV")->required();
  gen->add_option("--n", gen_n, "Number of records")->check(CLI::PositiveNumber);
  gen->add_option("--prevalence", gen_prev, "Target positive rate")->check(CLI::Range(0.0, 1.0));
  gen->add_option("--signal", gen_signal, "Signal weights as id:weight,... (default: built-in planted signal)");
  gen->add_option("--schema", gen_schema, "Schema file (default: built-in 15-item questionnaire)");
  gen->add_option("--schema-out", gen_schema_out, "Also write the schema used");
  gen->add_option("--seed", seed, "Random seed");

  // pretrain
  auto* pre = app.add_subcommand("pretrain", "Pretrain the micro language model on a related synthetic task");
  std::string pre_out, pre_bundle, pre_schema, pre_trace, pre_signal, pre_template = "list";
  std::size_t pre_records = 512, pre_steps = 300, pre_batch = 32, pre_corpus_seed = 7;
  double pre_lr = 3e-3;
  bool pre_no_echo = false, pre_no_cosine = false;
  microlm::MicroLMConfig pre_cfg;
  pre->add_option("--out", pre_out, "Output weights file");
  pre->add_option("--bundle-out", pre_bundle, "Also write a servable bundle into this directory");
  pre->add_option("--schema", pre_schema, "Schema file");
  pre->add_option("--records", pre_records, "Synthetic records in the corpus");
  pre->add_option("--signal", pre_signal, "Signal weights of the pretraining task (default: related task)");
  pre->add_option("--corpus-seed", pre_corpus_seed, "Seed of the corpus records");
  pre->add_flag("--no-echo", pre_no_echo, "Leave answer-interpretation examples out of the corpus");
  pre->add_option("--steps", pre_steps, "Optimisation steps");
  pre->add_option("--batch-size", pre_batch, "Minibatch size (0 = full batch)");
  pre->add_option("--lr", pre_lr, "Learning rate");
  pre->add_flag("--no-cosine", pre_no_cosine, "Constant learning rate");
  pre->add_option("--layers", pre_cfg.n_layers, "Decoder layers");
  pre->add_option("--heads", pre_cfg.n_heads, "Attention heads");
  pre->add_option("--d-model", pre_cfg.d_model, "Model width");
  pre->add_option("--d-ff", pre_cfg.d_ff, "Feed-forward width");
  pre->add_option("--context", pre_cfg.context_length, "Context length");
  pre->add_option("--template", pre_template, "Template recorded in the bundle");
  pre->add_option("--loss-trace", pre_trace, "Write the per-step loss to this file");
  pre->add_option("--seed", seed, "Random seed");

  // finetune
  auto* ft = app.add_subcommand("finetune", "Fit a LoRA adapter on k balanced shots");
  ModelOptions ft_model;
  ft_model.add(ft);
  std::string ft_data, ft_out, ft_bundle, ft_targets = "q,v", ft_layers;
  std::size_t ft_shots = 2, ft_steps = 100, ft_rank = 4, ft_eval = 10;
  double ft_lr = 1e-3, ft_alpha = 8.0;
  ft->add_option("--data", ft_data, "Labelled dataset CSV")->required();
  ft->add_option("--shots", ft_shots, "Number of balanced training shots")->check(CLI::IsMember({2, 4, 8, 16, 32}));
  ft->add_option("--steps", ft_steps, "Optimisation steps");
  ft->add_option("--lr", ft_lr, "Learning rate");
  ft->add_option("--rank", ft_rank, "LoRA rank");
  ft->add_option("--alpha", ft_alpha, "LoRA alpha");
  ft->add_option("--targets", ft_targets, "Adapted projections, e.g. q,v");
  ft->add_option("--lora-layers", ft_layers, "Adapted decoder layers, e.g. 1 (default: all)");
  ft->add_option("--eval-interval", ft_eval, "Validation interval in steps");
  ft->add_option("--out", ft_out, "Output adapter file")->required();
  ft->add_option("--bundle-out", ft_bundle, "Also write a servable bundle into this directory");
  ft->add_option("--seed", seed, "Seed for the split, the shot draw and the adapter initialisation");

  // score / explain
  auto* sc = app.add_subcommand("score", "Risk score for one record or every row of a CSV");
  auto* ex = app.add_subcommand("explain", "Risk score plus per-feature attention importance");
  ModelOptions sc_model, ex_model;
  sc_model.add(sc);
  ex_model.add(ex);
  std::string sc_record, sc_data, ex_record;
  sc->add_option("--record", sc_record, "Comma-separated 0/1 answers");
  sc->add_option("--data", sc_data, "Score every row of this CSV instead");
  ex->add_option("--record", ex_record, "Comma-separated 0/1 answers")->required();
  std::optional<std::size_t> ex_layer;
  ex->add_option("--importance-layer", ex_layer, "Read attention from this layer (default: the last)");
  sc->add_option("--seed", seed, "Unused; accepted for uniformity");
  ex->add_option("--seed", seed, "Unused; accepted for uniformity");

  // benchmark
  auto* bm = app.add_subcommand("benchmark", "Few-shot grid over shots x seeds x templates x models");
  ModelOptions bm_model;
  bm_model.add(bm, false);
  std::string bm_data, bm_out, bm_json, bm_format, bm_models = "microlm,logistic_regression,random_forest,gbt";
  std::string bm_templates = "list,text", bm_shots = "0,2,4,8,16,32", bm_seeds = "0,1,32,42,1024";
  std::size_t bm_steps = 100;
  double bm_lr = 1e-3;
  bool bm_quiet = false;
  bm->add_option("--data", bm_data, "Labelled dataset CSV")->required();
  bm->add_option("--models", bm_models, "Comma-separated models");
  bm->add_option("--templates", bm_templates, "Comma-separated templates");
  bm->add_option("--shots", bm_shots, "Comma-separated shot settings");
  bm->add_option("--seeds", bm_seeds, "Comma-separated seeds");
  bm->add_option("--steps", bm_steps, "LoRA steps per cell");
  bm->add_option("--lr", bm_lr, "LoRA learning rate");
  bm->add_option("--out", bm_out, "Report file (stdout when omitted)");
  bm->add_option("--format", bm_format, "table, csv or json (default: from --out extension, else table)");
  bm->add_option("--json-out", bm_json, "Also write the JSON report here");
  bm->add_flag("--quiet", bm_quiet, "No progress on stderr");

  // render
  auto* rd = app.add_subcommand("render", "Re-render a JSON benchmark report");
  std::string rd_in, rd_out, rd_format = "table";
  rd->add_option("--report", rd_in, "JSON report")->required();
  rd->add_option("--format", rd_format, "table, csv or json");
  rd->add_option("--out", rd_out, "Output file (stdout when omitted)");

  // serve
  auto* sv = app.add_subcommand("serve", "Run the HTTP session service");
  std::string sv_addr = "127.0.0.1:8080", sv_store, sv_model, sv_users;
  sv->add_option("--addr", sv_addr, "host:port to listen on");
  sv->add_option("--store", sv_store, "Session store file")->required();
  sv->add_option("--model", sv_model, "Model bundle manifest")->required();
  sv->add_option("--users", sv_users, "Users JSON file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "convrisk: " << e.what() << "\nRun with --help for usage.\n";
    return 2;
  }

  try {
    if (*gen) {
      const auto schema = gen_schema.empty() ? default_schema() : load_schema(gen_schema);
      const auto weights = gen_signal.empty() ? default_signal_weights(schema) : parse_signal_weights(gen_signal, schema.d());
      const auto records = generate_synthetic_dataset(gen_n, schema, seed, gen_prev, weights);
      save_dataset(gen_out, schema, records);
      if (!gen_schema_out.empty()) save_schema(gen_schema_out, schema);
      std::size_t pos = 0;
      for (const auto& r : records) pos += *r.label;
      std::cout << "wrote " << records.size() << " records (" << pos << " positive) to " << gen_out << "\n";
    } else if (*pre) {
      if (pre_out.empty() && pre_bundle.empty()) throw ArgumentError("pass --out and/or --bundle-out");
      const auto schema = pre_schema.empty() ? default_schema() : load_schema(pre_schema);
      const auto tokenizer = Tokenizer::for_schema(schema);
      PretrainCorpusOptions co;
      co.records = pre_records;
      co.seed = pre_corpus_seed;
      co.include_echo = !pre_no_echo;
      if (!pre_signal.empty()) co.signal_weights = parse_signal_weights(pre_signal, schema.d());
      pre_cfg.vocab_size = tokenizer.size();
      const auto corpus = build_pretraining_corpus(schema, tokenizer, co, pre_cfg.context_length);
      microlm::TrainingHyper h;
      h.steps = pre_steps;
      h.batch_size = pre_batch;
      h.learning_rate = pre_lr;
      h.cosine_decay = !pre_no_cosine;
      h.seed = seed;
      h.on_step = [&](std::size_t step, double loss) {
        if (step % 50 == 0 || step + 1 == pre_steps) std::cerr << "step " << step << " loss " << loss << "\n";
      };
      const auto result = microlm::pretrain(pre_cfg, corpus, h);
      if (!pre_out.empty()) microlm::save_weights(pre_out, result.weights, tokenizer, schema.d());
      if (!pre_bundle.empty())
        service::save_model_bundle(pre_bundle, {result.weights, std::nullopt, tokenizer, schema,
                                                parse_template_kind(pre_template), ""});
      if (!pre_trace.empty()) {
        std::string t = "step,loss\n";
        for (std::size_t i = 0; i < result.loss_trace.size(); ++i) t += std::to_string(i) + "," + num(result.loss_trace[i]) + "\n";
        write_text_file(pre_trace, t);
      }
      std::cout << "pretrained on " << corpus.size() << " examples; final loss " << num(result.loss_trace.back()) << "\n";
    } else if (*ft) {
      auto bundle = ft_model.load(ft->count("--template") > 0);
      const auto data = load_dataset(ft_data, bundle.schema);
      const auto labels = labels_of(data.records);
      const auto split = split_dataset(data.records.size(), seed);
      const auto shots = sample_few_shot(split.train, labels, ft_shots, seed);
      std::vector<microlm::TrainingExample> train, val;
      for (auto i : shots)
        train.push_back(microlm::make_example(serialize(data.records[i], bundle.schema, bundle.template_kind, bundle.tokenizer), labels[i]));
      for (auto i : split.validation)
        val.push_back(microlm::make_example(serialize(data.records[i], bundle.schema, bundle.template_kind, bundle.tokenizer), labels[i]));
      microlm::LoraSpec spec;
      spec.rank = ft_rank;
      spec.alpha = ft_alpha;
      spec.targets.clear();
      for (const auto& t : split_names(ft_targets)) spec.targets.push_back(microlm::parse_projection(t));
      if (!ft_layers.empty()) spec.layers = parse_list<std::size_t>(ft_layers, "layer");
      microlm::TrainingHyper h;
      h.steps = ft_steps;
      h.learning_rate = ft_lr;
      h.eval_interval = ft_eval;
      h.seed = seed;
      const auto result = microlm::finetune_lora(bundle.weights, train, val, spec, h);
      microlm::save_adapter(ft_out, result.adapter);
      if (!ft_bundle.empty()) {
        bundle.adapter = result.adapter;
        service::save_model_bundle(ft_bundle, bundle);
      }
      std::cout << "best step " << result.best_step << ", validation loss " << num(result.best_validation_loss)
                << " (final " << num(result.final_validation_loss) << ")\n";
    } else if (*sc) {
      const auto bundle = sc_model.load(sc->count("--template") > 0);
      if (sc_record.empty() == sc_data.empty()) throw ArgumentError("pass exactly one of --record and --data");
      if (!sc_record.empty()) {
        const auto s = microlm::score(bundle.weights, bundle.adapter_ptr(),
                                      serialize(parse_record(sc_record, bundle.schema), bundle.schema, bundle.template_kind, bundle.tokenizer));
        std::cout << "p_yes " << num(s.p_yes) << "\nlabel " << s.predicted_label << "\n";
      } else {
        const auto data = load_dataset(sc_data, bundle.schema);
        std::cout << "row,p_yes,label\n";
        for (std::size_t i = 0; i < data.records.size(); ++i) {
          const auto s = microlm::score(bundle.weights, bundle.adapter_ptr(),
                                        serialize(data.records[i], bundle.schema, bundle.template_kind, bundle.tokenizer));
          std::cout << i << "," << num(s.p_yes) << "," << s.predicted_label << "\n";
        }
      }
    } else if (*ex) {
      const auto bundle = ex_model.load(ex->count("--template") > 0);
      const auto s = microlm::explain(bundle.weights, bundle.adapter_ptr(),
                                      serialize(parse_record(ex_record, bundle.schema), bundle.schema, bundle.template_kind, bundle.tokenizer),
                                      {ex_layer});
      std::cout << "p_yes " << num(s.p_yes) << "\nlabel " << s.predicted_label << "\nfeature,name,importance\n";
      for (std::size_t j = 0; j < bundle.schema.d(); ++j)
        std::cout << "f" << bundle.schema.feature(j).id << "," << bundle.schema.feature(j).name << "," << num((*s.importance)[j]) << "\n";
    } else if (*bm) {
      evaluation::BenchmarkConfig cfg;
      cfg.models = split_names(bm_models);
      cfg.templates.clear();
      for (const auto& t : split_names(bm_templates)) cfg.templates.push_back(parse_template_kind(t));
      cfg.shots = parse_list<std::size_t>(bm_shots, "shots");
      cfg.seeds = parse_list<std::uint64_t>(bm_seeds, "seeds");
      cfg.finetune.steps = bm_steps;
      cfg.finetune.learning_rate = bm_lr;
      cfg.validate();
      const bool with_lm = std::find(cfg.models.begin(), cfg.models.end(), evaluation::kMicroLM) != cfg.models.end();
      std::optional<service::ModelBundle> bundle;
      if (with_lm) bundle = bm_model.load(false);
      const auto data = load_dataset(bm_data, bundle ? std::optional(bundle->schema) : std::nullopt);
      evaluation::BenchmarkModel model;
      if (bundle) model = {&bundle->weights, &bundle->tokenizer};
      auto progress = [&](const std::string& msg) {
        if (!bm_quiet) std::cerr << msg << "\n";
      };
      const auto report = evaluation::run_benchmark(data.schema, data.records, model, cfg, progress);
      auto format = evaluation::ReportFormat::Table;
      if (!bm_format.empty())
        format = evaluation::parse_report_format(bm_format);
      else if (bm_out.ends_with(".json"))
        format = evaluation::ReportFormat::Json;
      else if (bm_out.ends_with(".csv"))
        format = evaluation::ReportFormat::Csv;
      write_output(bm_out, evaluation::render_report(report, format));
      if (!bm_json.empty()) write_text_file(bm_json, evaluation::render_report(report, evaluation::ReportFormat::Json));
    } else if (*rd) {
      const auto report = evaluation::parse_report_json(read_text_file(rd_in));
      write_output(rd_out, evaluation::render_report(report, evaluation::parse_report_format(rd_format)));
    } else if (*sv) {
      const auto [host, port] = service::parse_address(sv_addr);
      service::ModelRegistry registry;
      registry.load(sv_model);
      service::SessionStore store(sv_store);
      service::SessionService svc(registry, store, service::UserDirectory::load(sv_users));
      service::HttpServer server(svc);
      const int bound = server.bind(host, port);
      g_server = &server;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cerr << "listening on " << host << ":" << bound << "\n";
      server.serve();
      g_server = nullptr;
    }
  } catch (const ArgumentError& e) {
    std::cerr << "convrisk: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "convrisk: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
