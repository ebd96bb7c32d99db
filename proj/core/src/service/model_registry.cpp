#include "convrisk/service/model_registry.hpp"

#include <nlohmann/json.hpp>

#include "convrisk/error.hpp"
#include "convrisk/microlm/io.hpp"

namespace convrisk::service {

using nlohmann::json;

ModelBundle load_model_bundle(const std::filesystem::path& manifest) {
  json j;
  try {
    j = json::parse(read_text_file(manifest));
  } catch (const json::exception& e) {
    throw LoadError(manifest.string() + ": malformed manifest: " + e.what());
  } catch (const Error& e) {
    throw LoadError(e.what());
  }
  const auto dir = manifest.parent_path();
  const auto field = [&](const char* key) -> std::optional<std::filesystem::path> {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    if (!j.at(key).is_string()) throw LoadError(manifest.string() + ": \"" + key + "\" must be a string");
    return dir / j.at(key).get<std::string>();
  };

  ModelBundle b;
  b.source = manifest.string();
  const auto weights_path = field("weights");
  if (!weights_path) throw LoadError(manifest.string() + ": manifest has no \"weights\" entry");
  auto wf = microlm::load_weights(*weights_path);
  b.weights = std::move(wf.weights);

  try {
    if (const auto schema_path = field("schema"))
      b.schema = load_schema(*schema_path);
    else
      b.schema = wf.schema_d == 15 ? default_schema() : generic_schema(wf.schema_d);
  } catch (const LoadError&) {
    throw;
  } catch (const Error& e) {
    throw LoadError(std::string("bundle schema: ") + e.what());
  }
  if (b.schema.d() != wf.schema_d)
    throw LoadError("schema mismatch: bundle schema has d=" + std::to_string(b.schema.d()) +
                    " but the weights were trained for d=" + std::to_string(wf.schema_d));
  b.tokenizer = Tokenizer::for_schema(b.schema);
  if (b.tokenizer.vocabulary() != wf.vocabulary)
    throw LoadError("schema mismatch: the bundle schema's vocabulary differs from the one stored with the weights");

  if (const auto adapter_path = field("adapter")) {
    b.adapter = microlm::load_adapter(*adapter_path);
    microlm::check_adapter_compatible(*b.adapter, b.weights.config);
  }
  try {
    b.template_kind = parse_template_kind(j.value("template", std::string("list")));
  } catch (const Error& e) {
    throw LoadError(std::string("bundle template: ") + e.what());
  }
  return b;
}

void save_model_bundle(const std::filesystem::path& dir, const ModelBundle& bundle) {
  std::filesystem::create_directories(dir);
  microlm::save_weights(dir / "weights.bin", bundle.weights, bundle.tokenizer, bundle.schema.d());
  save_schema(dir / "schema.tsv", bundle.schema);
  json j{{"weights", "weights.bin"}, {"schema", "schema.tsv"}, {"template", std::string(to_string(bundle.template_kind))}};
  if (bundle.adapter) {
    microlm::save_adapter(dir / "adapter.bin", *bundle.adapter);
    j["adapter"] = "adapter.bin";
  }
  write_text_file(dir / "bundle.json", j.dump(2) + "\n");
}

std::shared_ptr<const ModelBundle> ModelRegistry::current() const {
  std::lock_guard lock(mu_);
  return current_;
}

void ModelRegistry::publish(std::shared_ptr<const ModelBundle> bundle) {
  std::lock_guard lock(mu_);
  current_ = std::move(bundle);
}

void ModelRegistry::load(const std::filesystem::path& manifest) {
  auto bundle = std::make_shared<const ModelBundle>(load_model_bundle(manifest));
  publish(std::move(bundle));
}

}  // namespace convrisk::service
