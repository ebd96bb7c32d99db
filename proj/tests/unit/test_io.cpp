#include <gtest/gtest.h>

#include <filesystem>

#include "convrisk/error.hpp"
#include "convrisk/microlm/io.hpp"
#include "convrisk/microlm/model.hpp"
#include "test_support.hpp"

using namespace convrisk;
using namespace convrisk::microlm;

namespace {

struct Setup {
  QuestionnaireSchema schema = default_schema();
  Tokenizer tok = Tokenizer::for_schema(schema);
  MicroLMConfig config = testkit::tiny_config(tok.size());
  MicroLMWeights weights = MicroLMWeights::initialize(config, 21);
  LoraAdapter adapter = testkit::random_adapter(config, 22);
};

const Setup& su() {
  static const Setup s;
  return s;
}

}  // namespace

TEST(WeightsIo, RoundTripIsBitwise) {
  testkit::TempDir dir("io");
  save_weights(dir / "w.bin", su().weights, su().tok, su().schema.d());
  const auto f = load_weights(dir / "w.bin");
  EXPECT_TRUE(f.weights == su().weights);
  EXPECT_EQ(f.weights.config, su().config);
  EXPECT_EQ(f.vocabulary, su().tok.vocabulary());
  EXPECT_EQ(f.schema_d, 15u);
  EXPECT_EQ(encode_weights(f.weights, Tokenizer(f.vocabulary), f.schema_d), read_text_file(dir / "w.bin"));
}

TEST(WeightsIo, SameScoresAfterReload) {
  const auto f = decode_weights(encode_weights(su().weights, su().tok, 15));
  Rng rng(1);
  const auto p = serialize(testkit::random_record(rng, 15), su().schema, TemplateKind::Text, su().tok);
  EXPECT_EQ(score(f.weights, nullptr, p).p_yes, score(su().weights, nullptr, p).p_yes);
}

TEST(WeightsIo, VocabularyMismatchOnSave) {
  Tokenizer other({"<unk>", "yes", "no"});
  EXPECT_THROW(encode_weights(su().weights, other, 15), ArgumentError);
}

TEST(WeightsIo, CorruptInputsAreLoadErrors) {
  const auto good = encode_weights(su().weights, su().tok, 15);
  EXPECT_THROW(decode_weights(""), LoadError);
  EXPECT_THROW(decode_weights("NOTMAGIC" + good.substr(8)), LoadError);
  EXPECT_THROW(decode_weights(good.substr(0, good.size() - 3)), LoadError);
  EXPECT_THROW(decode_weights(good + "x"), LoadError);
  EXPECT_THROW(decode_weights(encode_adapter(su().adapter)), LoadError);

  auto bad_header = good;
  bad_header[12] = '#';
  EXPECT_THROW(decode_weights(bad_header), LoadError);

  // Overwrite the final payload double with NaN.
  auto nan = good;
  const std::uint64_t bits = 0x7ff8000000000000ULL;
  for (int i = 0; i < 8; ++i) nan[nan.size() - 8 + i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  EXPECT_THROW(decode_weights(nan), LoadError);
}

TEST(WeightsIo, MissingFileNamesThePath) {
  try {
    load_weights("/nonexistent/w.bin");
    FAIL();
  } catch (const LoadError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/w.bin"), std::string::npos);
  }
}

TEST(AdapterIo, RoundTripIsBitwise) {
  testkit::TempDir dir("io");
  save_adapter(dir / "a.bin", su().adapter);
  const auto a = load_adapter(dir / "a.bin");
  EXPECT_TRUE(a == su().adapter);
  EXPECT_EQ(a.rank, 4u);
  EXPECT_EQ(a.alpha, 8.0);
  EXPECT_NO_THROW(check_adapter_compatible(a, su().config));
}

TEST(AdapterIo, CorruptInputs) {
  const auto good = encode_adapter(su().adapter);
  EXPECT_THROW(decode_adapter(good.substr(0, good.size() - 1)), LoadError);
  EXPECT_THROW(decode_adapter(encode_weights(su().weights, su().tok, 15)), LoadError);
}

TEST(AdapterIo, IncompatibleWithOtherModel) {
  auto wide = su().config;
  wide.d_model = 32;
  EXPECT_THROW(check_adapter_compatible(su().adapter, wide), LoadError);
  auto shallow = su().config;
  shallow.n_layers = 1;
  EXPECT_THROW(check_adapter_compatible(su().adapter, shallow), LoadError);
}
