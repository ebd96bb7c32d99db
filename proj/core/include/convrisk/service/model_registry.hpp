#pragma once

#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>

#include "convrisk/dataset.hpp"
#include "convrisk/microlm/types.hpp"
#include "convrisk/serialization.hpp"
#include "convrisk/tokenizer.hpp"

namespace convrisk::service {

// Everything needed to score a questionnaire.
struct ModelBundle {
  microlm::MicroLMWeights weights;
  std::optional<microlm::LoraAdapter> adapter;
  Tokenizer tokenizer;
  QuestionnaireSchema schema;
  TemplateKind template_kind = TemplateKind::List;
  std::string source;  // manifest path, for diagnostics

  const microlm::LoraAdapter* adapter_ptr() const { return adapter ? &*adapter : nullptr; }
};

// Bundle manifest (JSON), paths relative to the manifest's directory:
//   {"weights": "base.bin", "adapter": "adapter.bin", "schema": "schema.tsv", "template": "list"}
// "adapter" and "schema" are optional; without a schema the default one is
// used when the model was trained for 15 features and a generic one
// otherwise. Throws LoadError when anything fails to validate, including a
// schema whose width or vocabulary does not match the weights.
ModelBundle load_model_bundle(const std::filesystem::path& manifest);

// Writes the manifest and its files into `dir`.
void save_model_bundle(const std::filesystem::path& dir, const ModelBundle& bundle);

// Holder of the serving model. Readers take a snapshot and keep using it
// for the whole request, so a swap never mixes old and new parts.
class ModelRegistry {
 public:
  std::shared_ptr<const ModelBundle> current() const;
  void publish(std::shared_ptr<const ModelBundle> bundle);
  // Loads and publishes; on failure the current model keeps serving and the
  // LoadError propagates.
  void load(const std::filesystem::path& manifest);

 private:
  mutable std::mutex mu_;
  std::shared_ptr<const ModelBundle> current_;
};

}  // namespace convrisk::service
