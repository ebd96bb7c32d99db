#pragma once

#include <Eigen/Core>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace convrisk::microlm {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

struct MicroLMConfig {
  std::size_t vocab_size = 0;
  std::size_t context_length = 256;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  std::size_t d_model = 64;
  std::size_t d_ff = 256;
  // Storage and arithmetic width in bits. Only 64 is implemented.
  int precision_bits = 64;

  std::size_t head_dim() const { return d_model / n_heads; }
  // Throws ArgumentError on inconsistent sizes.
  void validate() const;

  bool operator==(const MicroLMConfig&) const = default;
};

// Projections are stored (out x in) and applied as y = x * W^T on row
// vectors. Gains and biases are 1 x n matrices so every parameter is a
// Matrix and can be visited uniformly.
struct LayerWeights {
  Matrix ln1_gain, ln1_bias;
  Matrix wq, wk, wv, wo;
  Matrix ln2_gain, ln2_bias;
  Matrix w1, b1;  // d_ff x d_model, 1 x d_ff
  Matrix w2, b2;  // d_model x d_ff, 1 x d_model
};

// Pre-norm decoder-only transformer with learned absolute positions and an
// untied output head.
struct MicroLMWeights {
  MicroLMConfig config;
  Matrix token_embedding;     // vocab x d_model
  Matrix position_embedding;  // context x d_model
  std::vector<LayerWeights> layers;
  Matrix lnf_gain, lnf_bias;
  Matrix head;       // vocab x d_model
  Matrix head_bias;  // 1 x vocab

  // All parameters zero (gains included); used as gradient buffers.
  static MicroLMWeights zeros(const MicroLMConfig& config);
  // Embeddings and projections ~ N(0, 0.02^2), gains 1, biases 0.
  static MicroLMWeights initialize(const MicroLMConfig& config, std::uint64_t seed);

  template <typename F>
  void for_each(F&& fn) {
    visit(*this, fn);
  }
  template <typename F>
  void for_each(F&& fn) const {
    visit(*this, fn);
  }

  std::size_t parameter_count() const;
  void set_zero();
  bool all_finite() const;

  // Bitwise equality of every parameter.
  bool operator==(const MicroLMWeights& other) const;

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F& fn) {
    fn(std::string("token_embedding"), self.token_embedding);
    fn(std::string("position_embedding"), self.position_embedding);
    for (std::size_t l = 0; l < self.layers.size(); ++l) {
      auto& L = self.layers[l];
      const std::string p = "layers." + std::to_string(l) + ".";
      fn(p + "ln1_gain", L.ln1_gain);
      fn(p + "ln1_bias", L.ln1_bias);
      fn(p + "wq", L.wq);
      fn(p + "wk", L.wk);
      fn(p + "wv", L.wv);
      fn(p + "wo", L.wo);
      fn(p + "ln2_gain", L.ln2_gain);
      fn(p + "ln2_bias", L.ln2_bias);
      fn(p + "w1", L.w1);
      fn(p + "b1", L.b1);
      fn(p + "w2", L.w2);
      fn(p + "b2", L.b2);
    }
    fn(std::string("lnf_gain"), self.lnf_gain);
    fn(std::string("lnf_bias"), self.lnf_bias);
    fn(std::string("head"), self.head);
    fn(std::string("head_bias"), self.head_bias);
  }
};

enum class Projection : std::uint8_t { Query = 0, Key = 1, Value = 2, Output = 3 };

std::string_view to_string(Projection p);
Projection parse_projection(std::string_view text);

struct LoraSpec {
  std::size_t rank = 4;
  double alpha = 8.0;
  std::vector<Projection> targets{Projection::Query, Projection::Value};
  // Decoder layers to adapt; empty means every layer.
  std::vector<std::size_t> layers;
};

// One adapted matrix: delta W = (alpha / rank) * B * A.
struct LoraPair {
  std::size_t layer = 0;
  Projection target = Projection::Query;
  Matrix a;  // rank x d_in
  Matrix b;  // d_out x rank
};

struct LoraAdapter {
  std::size_t rank = 4;
  double alpha = 8.0;
  std::vector<LoraPair> pairs;  // ordered by (layer, target)

  double scale() const { return alpha / static_cast<double>(rank); }

  // A ~ N(0, 1/d_in), B = 0, for every (layer, target) in the spec.
  static LoraAdapter initialize(const MicroLMConfig& config, const LoraSpec& spec, std::uint64_t seed);
  // Same layout as `like`, all entries zero.
  static LoraAdapter zeros_like(const LoraAdapter& like);

  const LoraPair* find(std::size_t layer, Projection target) const;

  // Sum over pairs of rank * (d_in + d_out).
  std::size_t trainable_parameter_count() const;

  template <typename F>
  void for_each(F&& fn) {
    for (auto& p : pairs) {
      const std::string name = "lora." + std::to_string(p.layer) + "." + std::string(to_string(p.target));
      fn(name + ".a", p.a);
      fn(name + ".b", p.b);
    }
  }
  template <typename F>
  void for_each(F&& fn) const {
    for (const auto& p : pairs) {
      const std::string name = "lora." + std::to_string(p.layer) + "." + std::string(to_string(p.target));
      fn(name + ".a", p.a);
      fn(name + ".b", p.b);
    }
  }

  void set_zero();
  bool all_finite() const;
  bool operator==(const LoraAdapter& other) const;
};

// Bitwise equality helper shared by the weight containers.
bool bitwise_equal(const Matrix& a, const Matrix& b);

}  // namespace convrisk::microlm
