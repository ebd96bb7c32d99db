#include "convrisk/microlm/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "convrisk/dataset.hpp"
#include "convrisk/error.hpp"

namespace convrisk::microlm {

namespace {

using nlohmann::json;

constexpr std::string_view kWeightsMagic = "CVRSKW01";
constexpr std::string_view kAdapterMagic = "CVRSKA01";

class Writer {
 public:
  void bytes(std::string_view s) { out_.append(s); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
  std::string take() { return std::move(out_); }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view data) : data_(data) {}
  std::string_view bytes(std::size_t n) {
    if (pos_ + n > data_.size()) throw LoadError("file truncated at byte " + std::to_string(pos_));
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  double f64() { return std::bit_cast<double>(le(8)); }
  bool done() const { return pos_ == data_.size(); }

 private:
  std::uint64_t le(int n) {
    const auto b = bytes(static_cast<std::size_t>(n));
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[static_cast<std::size_t>(i)])) << (8 * i);
    return v;
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

struct TensorEntry {
  std::string name;
  std::uint32_t rows = 0, cols = 0;
};

template <typename Params>
std::string encode_container(std::string_view magic, const json& header, const Params& params) {
  Writer w;
  w.bytes(magic);
  const std::string h = header.dump();
  w.u32(static_cast<std::uint32_t>(h.size()));
  w.bytes(h);
  std::vector<std::pair<std::string, const Matrix*>> tensors;
  params.for_each([&](const std::string& name, const Matrix& m) { tensors.emplace_back(name, &m); });
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, m] : tensors) {
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.bytes(name);
    w.u32(static_cast<std::uint32_t>(m->rows()));
    w.u32(static_cast<std::uint32_t>(m->cols()));
  }
  for (const auto& [name, m] : tensors)
    for (Eigen::Index i = 0; i < m->size(); ++i) w.f64(m->data()[i]);
  return w.take();
}

json read_header(Reader& r, std::string_view magic) {
  if (r.bytes(magic.size()) != magic) throw LoadError("bad magic; expected " + std::string(magic));
  const auto len = r.u32();
  try {
    return json::parse(r.bytes(len));
  } catch (const json::exception& e) {
    throw LoadError(std::string("malformed header: ") + e.what());
  }
}

// Reads the tensor table and payload into `params`, checking names/shapes.
template <typename Params>
void read_tensors(Reader& r, Params& params) {
  const auto n = r.u32();
  std::vector<TensorEntry> table(n);
  for (auto& t : table) {
    t.name = std::string(r.bytes(r.u16()));
    t.rows = r.u32();
    t.cols = r.u32();
  }
  std::size_t i = 0;
  params.for_each([&](const std::string& name, Matrix& m) {
    if (i >= table.size()) throw LoadError("missing tensor " + name);
    const auto& t = table[i++];
    if (t.name != name) throw LoadError("expected tensor " + name + ", found " + t.name);
    if (t.rows != m.rows() || t.cols != m.cols())
      throw LoadError("tensor " + name + " has shape " + std::to_string(t.rows) + "x" + std::to_string(t.cols) +
                      ", expected " + std::to_string(m.rows()) + "x" + std::to_string(m.cols()));
  });
  if (i != table.size()) throw LoadError("unexpected extra tensors");
  params.for_each([&](const std::string&, Matrix& m) {
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = r.f64();
  });
  if (!r.done()) throw LoadError("trailing bytes after payload");
}

json config_to_json(const MicroLMConfig& c) {
  return json{{"vocab_size", c.vocab_size}, {"context_length", c.context_length}, {"n_layers", c.n_layers},
              {"n_heads", c.n_heads},       {"d_model", c.d_model},               {"d_ff", c.d_ff},
              {"precision_bits", c.precision_bits}};
}

MicroLMConfig config_from_json(const json& j) {
  MicroLMConfig c;
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.context_length = j.at("context_length").get<std::size_t>();
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.precision_bits = j.at("precision_bits").get<int>();
  return c;
}

}  // namespace

std::string encode_weights(const MicroLMWeights& weights, const Tokenizer& tokenizer, std::size_t schema_d) {
  if (tokenizer.size() != weights.config.vocab_size)
    throw ArgumentError("tokenizer has " + std::to_string(tokenizer.size()) + " words, model vocab_size is " +
                        std::to_string(weights.config.vocab_size));
  const json header{{"config", config_to_json(weights.config)}, {"vocabulary", tokenizer.vocabulary()}, {"schema_d", schema_d}};
  return encode_container(kWeightsMagic, header, weights);
}

void save_weights(const std::filesystem::path& path, const MicroLMWeights& weights, const Tokenizer& tokenizer,
                  std::size_t schema_d) {
  write_text_file(path, encode_weights(weights, tokenizer, schema_d));
}

WeightsFile decode_weights(std::string_view bytes) {
  Reader r(bytes);
  const json header = read_header(r, kWeightsMagic);
  WeightsFile out;
  try {
    const auto config = config_from_json(header.at("config"));
    config.validate();
    out.weights = MicroLMWeights::zeros(config);
    out.vocabulary = header.at("vocabulary").get<std::vector<std::string>>();
    out.schema_d = header.at("schema_d").get<std::size_t>();
  } catch (const json::exception& e) {
    throw LoadError(std::string("bad weights header: ") + e.what());
  } catch (const ArgumentError& e) {
    throw LoadError(std::string("bad model config: ") + e.what());
  }
  if (out.vocabulary.size() != out.weights.config.vocab_size)
    throw LoadError("vocabulary length does not match vocab_size");
  read_tensors(r, out.weights);
  if (!out.weights.all_finite()) throw LoadError("weights contain non-finite values");
  return out;
}

WeightsFile load_weights(const std::filesystem::path& path) {
  try {
    return decode_weights(read_text_file(path));
  } catch (const LoadError& e) {
    throw LoadError(path.string() + ": " + e.what());
  } catch (const Error& e) {
    throw LoadError(e.what());
  }
}

std::string encode_adapter(const LoraAdapter& adapter) {
  json pairs = json::array();
  for (const auto& p : adapter.pairs) pairs.push_back({{"layer", p.layer}, {"target", std::string(to_string(p.target))}});
  const json header{{"rank", adapter.rank}, {"alpha", adapter.alpha}, {"pairs", pairs}};
  return encode_container(kAdapterMagic, header, adapter);
}

void save_adapter(const std::filesystem::path& path, const LoraAdapter& adapter) {
  write_text_file(path, encode_adapter(adapter));
}

LoraAdapter decode_adapter(std::string_view bytes) {
  Reader r(bytes);
  const json header = read_header(r, kAdapterMagic);
  LoraAdapter a;
  try {
    a.rank = header.at("rank").get<std::size_t>();
    a.alpha = header.at("alpha").get<double>();
    if (a.rank < 1) throw LoadError("adapter rank must be >= 1");
    for (const auto& p : header.at("pairs")) {
      LoraPair pair;
      pair.layer = p.at("layer").get<std::size_t>();
      pair.target = parse_projection(p.at("target").get<std::string>());
      a.pairs.push_back(std::move(pair));
    }
  } catch (const json::exception& e) {
    throw LoadError(std::string("bad adapter header: ") + e.what());
  } catch (const ArgumentError& e) {
    throw LoadError(std::string("bad adapter header: ") + e.what());
  }
  // Shapes come from the tensor table; size the matrices from it first.
  Reader peek(bytes);
  read_header(peek, kAdapterMagic);
  const auto n = peek.u32();
  if (n != 2 * a.pairs.size()) throw LoadError("adapter tensor count does not match its pair list");
  for (std::uint32_t i = 0; i < n; ++i) {
    peek.bytes(peek.u16());
    const auto rows = peek.u32();
    const auto cols = peek.u32();
    auto& pair = a.pairs[i / 2];
    (i % 2 == 0 ? pair.a : pair.b).resize(rows, cols);
  }
  read_tensors(r, a);
  for (const auto& p : a.pairs)
    if (p.a.rows() != static_cast<Eigen::Index>(a.rank) || p.b.cols() != static_cast<Eigen::Index>(a.rank))
      throw LoadError("adapter matrices disagree with rank " + std::to_string(a.rank));
  if (!a.all_finite()) throw LoadError("adapter contains non-finite values");
  return a;
}

LoraAdapter load_adapter(const std::filesystem::path& path) {
  try {
    return decode_adapter(read_text_file(path));
  } catch (const LoadError& e) {
    throw LoadError(path.string() + ": " + e.what());
  } catch (const Error& e) {
    throw LoadError(e.what());
  }
}

void check_adapter_compatible(const LoraAdapter& adapter, const MicroLMConfig& config) {
  const auto D = static_cast<Eigen::Index>(config.d_model);
  for (const auto& p : adapter.pairs) {
    if (p.layer >= config.n_layers)
      throw LoadError("adapter targets layer " + std::to_string(p.layer) + " but the model has " +
                      std::to_string(config.n_layers));
    if (p.a.cols() != D || p.b.rows() != D)
      throw LoadError("adapter width does not match d_model " + std::to_string(config.d_model));
  }
}

}  // namespace convrisk::microlm
