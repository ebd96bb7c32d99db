#include "convrisk/microlm/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "convrisk/error.hpp"
#include "convrisk/rng.hpp"

namespace convrisk::microlm {

void MicroLMConfig::validate() const {
  if (vocab_size < 3) throw ArgumentError("vocab_size must be at least 3 (<unk>, yes, no)");
  if (context_length < 2) throw ArgumentError("context_length must be at least 2");
  if (n_layers < 1) throw ArgumentError("n_layers must be at least 1");
  if (n_heads < 1 || d_model % n_heads != 0)
    throw ArgumentError("d_model " + std::to_string(d_model) + " is not divisible by n_heads " + std::to_string(n_heads));
  if (d_model < 1 || d_ff < 1) throw ArgumentError("d_model and d_ff must be positive");
  if (precision_bits != 64) throw ArgumentError("only 64-bit precision is implemented");
}

namespace {

Matrix gaussian(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng.normal();
  return m;
}

Matrix zeros(std::size_t rows, std::size_t cols) { return Matrix::Zero(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols)); }

}  // namespace

MicroLMWeights MicroLMWeights::zeros(const MicroLMConfig& c) {
  c.validate();
  MicroLMWeights w;
  w.config = c;
  const auto V = c.vocab_size, D = c.d_model, F = c.d_ff;
  w.token_embedding = microlm::zeros(V, D);
  w.position_embedding = microlm::zeros(c.context_length, D);
  w.layers.resize(c.n_layers);
  for (auto& L : w.layers) {
    L.ln1_gain = microlm::zeros(1, D);
    L.ln1_bias = microlm::zeros(1, D);
    L.wq = microlm::zeros(D, D);
    L.wk = microlm::zeros(D, D);
    L.wv = microlm::zeros(D, D);
    L.wo = microlm::zeros(D, D);
    L.ln2_gain = microlm::zeros(1, D);
    L.ln2_bias = microlm::zeros(1, D);
    L.w1 = microlm::zeros(F, D);
    L.b1 = microlm::zeros(1, F);
    L.w2 = microlm::zeros(D, F);
    L.b2 = microlm::zeros(1, D);
  }
  w.lnf_gain = microlm::zeros(1, D);
  w.lnf_bias = microlm::zeros(1, D);
  w.head = microlm::zeros(V, D);
  w.head_bias = microlm::zeros(1, V);
  return w;
}

MicroLMWeights MicroLMWeights::initialize(const MicroLMConfig& c, std::uint64_t seed) {
  MicroLMWeights w = zeros(c);
  Rng rng(Rng::derive(seed, "microlm-init"));
  constexpr double kStd = 0.02;
  const auto V = c.vocab_size, D = c.d_model, F = c.d_ff;
  w.token_embedding = gaussian(V, D, kStd, rng);
  w.position_embedding = gaussian(c.context_length, D, kStd, rng);
  for (auto& L : w.layers) {
    L.ln1_gain.setOnes();
    L.ln2_gain.setOnes();
    L.wq = gaussian(D, D, kStd, rng);
    L.wk = gaussian(D, D, kStd, rng);
    L.wv = gaussian(D, D, kStd, rng);
    L.wo = gaussian(D, D, kStd, rng);
    L.w1 = gaussian(F, D, kStd, rng);
    L.w2 = gaussian(D, F, kStd, rng);
  }
  w.lnf_gain.setOnes();
  w.head = gaussian(V, D, kStd, rng);
  return w;
}

std::size_t MicroLMWeights::parameter_count() const {
  std::size_t n = 0;
  for_each([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

void MicroLMWeights::set_zero() {
  for_each([](const std::string&, Matrix& m) { m.setZero(); });
}

bool MicroLMWeights::all_finite() const {
  bool ok = true;
  for_each([&](const std::string&, const Matrix& m) { ok = ok && m.allFinite(); });
  return ok;
}

bool bitwise_equal(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
  return std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

bool MicroLMWeights::operator==(const MicroLMWeights& other) const {
  if (!(config == other.config) || layers.size() != other.layers.size()) return false;
  std::vector<const Matrix*> mine, theirs;
  for_each([&](const std::string&, const Matrix& m) { mine.push_back(&m); });
  other.for_each([&](const std::string&, const Matrix& m) { theirs.push_back(&m); });
  for (std::size_t i = 0; i < mine.size(); ++i)
    if (!bitwise_equal(*mine[i], *theirs[i])) return false;
  return true;
}

std::string_view to_string(Projection p) {
  switch (p) {
    case Projection::Query: return "q";
    case Projection::Key: return "k";
    case Projection::Value: return "v";
    case Projection::Output: return "o";
  }
  return "?";
}

Projection parse_projection(std::string_view text) {
  if (text == "q" || text == "query") return Projection::Query;
  if (text == "k" || text == "key") return Projection::Key;
  if (text == "v" || text == "value") return Projection::Value;
  if (text == "o" || text == "output") return Projection::Output;
  throw ArgumentError("unknown projection '" + std::string(text) + "'");
}

LoraAdapter LoraAdapter::initialize(const MicroLMConfig& c, const LoraSpec& spec, std::uint64_t seed) {
  c.validate();
  if (spec.rank < 1) throw ArgumentError("LoRA rank must be at least 1");
  if (spec.targets.empty()) throw ArgumentError("LoRA needs at least one target projection");
  auto targets = spec.targets;
  std::sort(targets.begin(), targets.end());
  if (std::adjacent_find(targets.begin(), targets.end()) != targets.end())
    throw ArgumentError("duplicate LoRA target");
  for (auto l : spec.layers)
    if (l >= c.n_layers)
      throw ArgumentError("LoRA layer " + std::to_string(l) + " does not exist in a " + std::to_string(c.n_layers) +
                          "-layer model");

  LoraAdapter a;
  a.rank = spec.rank;
  a.alpha = spec.alpha;
  Rng rng(Rng::derive(seed, "lora-init"));
  const double stddev = 1.0 / std::sqrt(static_cast<double>(c.d_model));
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    if (!spec.layers.empty() && std::find(spec.layers.begin(), spec.layers.end(), l) == spec.layers.end()) continue;
    for (auto t : targets) {
      LoraPair p;
      p.layer = l;
      p.target = t;
      p.a = gaussian(spec.rank, c.d_model, stddev, rng);
      p.b = microlm::zeros(c.d_model, spec.rank);
      a.pairs.push_back(std::move(p));
    }
  }
  return a;
}

LoraAdapter LoraAdapter::zeros_like(const LoraAdapter& like) {
  LoraAdapter a = like;
  a.set_zero();
  return a;
}

const LoraPair* LoraAdapter::find(std::size_t layer, Projection target) const {
  for (const auto& p : pairs)
    if (p.layer == layer && p.target == target) return &p;
  return nullptr;
}

std::size_t LoraAdapter::trainable_parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : pairs) n += rank * static_cast<std::size_t>(p.a.cols() + p.b.rows());
  return n;
}

void LoraAdapter::set_zero() {
  for_each([](const std::string&, Matrix& m) { m.setZero(); });
}

bool LoraAdapter::all_finite() const {
  bool ok = true;
  for_each([&](const std::string&, const Matrix& m) { ok = ok && m.allFinite(); });
  return ok;
}

bool LoraAdapter::operator==(const LoraAdapter& other) const {
  if (rank != other.rank || alpha != other.alpha || pairs.size() != other.pairs.size()) return false;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& x = pairs[i];
    const auto& y = other.pairs[i];
    if (x.layer != y.layer || x.target != y.target || !bitwise_equal(x.a, y.a) || !bitwise_equal(x.b, y.b))
      return false;
  }
  return true;
}

}  // namespace convrisk::microlm
