#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "convrisk/microlm/types.hpp"
#include "convrisk/tokenizer.hpp"

namespace convrisk::microlm {

// Binary container shared by weight and adapter files. All integers and
// floats are little-endian.
//
//   magic        8 bytes   "CVRSKW01" (weights) or "CVRSKA01" (adapter)
//   header_len   u32
//   header       header_len bytes of UTF-8 JSON
//   n_tensors    u32
//   table        n_tensors x { name_len u16, name bytes, rows u32, cols u32 }
//   payload      float64 values of each tensor, row-major, in table order
//
// Weight header: {"config": {...}, "vocabulary": [...], "schema_d": n}.
// Adapter header: {"rank": r, "alpha": a, "pairs": [{"layer": l, "target": "q"}, ...]}.
// Tensor names are those produced by for_each() on the container.

struct WeightsFile {
  MicroLMWeights weights;
  std::vector<std::string> vocabulary;
  std::size_t schema_d = 0;
};

void save_weights(const std::filesystem::path& path, const MicroLMWeights& weights, const Tokenizer& tokenizer,
                  std::size_t schema_d);
std::string encode_weights(const MicroLMWeights& weights, const Tokenizer& tokenizer, std::size_t schema_d);
// Throws LoadError on any structural problem.
WeightsFile load_weights(const std::filesystem::path& path);
WeightsFile decode_weights(std::string_view bytes);

void save_adapter(const std::filesystem::path& path, const LoraAdapter& adapter);
std::string encode_adapter(const LoraAdapter& adapter);
LoraAdapter load_adapter(const std::filesystem::path& path);
LoraAdapter decode_adapter(std::string_view bytes);

// Throws LoadError when the adapter cannot be applied to `config`.
void check_adapter_compatible(const LoraAdapter& adapter, const MicroLMConfig& config);

}  // namespace convrisk::microlm
