#include <sstream>

#include <gtest/gtest.h>

#include "mag/config.hpp"

using namespace mag;

namespace {
RunConfig parse(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is);
}
}  // namespace

TEST(RunConfig, EmptyFileGivesReferenceHyperparameters) {
  const RunConfig c = parse("");
  EXPECT_EQ(c.tokenizer.encoder_layers, 4u);
  EXPECT_EQ(c.tokenizer.decoder_layers, 4u);
  EXPECT_EQ(c.tokenizer.hidden, 32u);
  EXPECT_EQ(c.tokenizer.latent, 16u);
  EXPECT_EQ(c.tokenizer.codebook_size, 1024u);
  EXPECT_EQ(c.tokenizer.commitment, 0.25);
  EXPECT_EQ(c.tokenizer.gamma, 0.1);
  EXPECT_EQ(c.transformer.blocks, 8u);
  EXPECT_EQ(c.transformer.hidden, 256u);
  EXPECT_EQ(c.transformer.heads, 8u);
  EXPECT_EQ(c.transformer.level_dim, 256u);
  EXPECT_EQ(c.transformer.layer_dropout, 0.1);
  EXPECT_EQ(c.transformer.cond_dropout, 0.1);
  EXPECT_EQ(c.transformer.token_dropout, 0.05);
  EXPECT_EQ(c.tokenizer_lr, 3e-5);
  EXPECT_EQ(c.transformer_lr, 3e-5);
  EXPECT_EQ(c.weight_decay, 1e-2);
  EXPECT_EQ(c.beta1, 0.9);
  EXPECT_EQ(c.beta2, 0.99);
  EXPECT_EQ(c.batch_size, 12u);
  EXPECT_EQ(c.tokenizer_epochs, 100u);
  EXPECT_EQ(c.transformer_epochs, 100u);
  EXPECT_EQ(c.sampling.top_k, 50u);
  EXPECT_EQ(c.sampling.top_p, 0.95);
  EXPECT_EQ(c.sampling.temperature, 1.0);
  EXPECT_EQ(c.tokenizer.scale_base, (std::vector<std::size_t>{1, 2, 4, 6, 9}));
  EXPECT_EQ(c.dataset_count, 100u);
}

TEST(RunConfig, SerializeParseRoundTrip) {
  const RunConfig c = parse(
      "# desk run\n[tokenizer]\nlr = 0.003\nepochs = 300 ; more\nscale_base = 1, 3, 7\nindependent_scales = true\n"
      "[transformer]\nhidden = 64\nheads = 4\n[sampling]\ntop_p = 0.9\n[run]\nseed = 17\n[data]\npath = /tmp/x y.jsonl\n");
  EXPECT_EQ(c.tokenizer_lr, 0.003);
  EXPECT_EQ(c.tokenizer.scale_base, (std::vector<std::size_t>{1, 3, 7}));
  EXPECT_TRUE(c.tokenizer.independent_scales);
  EXPECT_EQ(c.dataset_path, "/tmp/x y.jsonl");
  const std::string text = serialize_config(c);
  const RunConfig back = parse(text);
  EXPECT_EQ(serialize_config(back), text);
  EXPECT_EQ(back.seed, 17u);
  EXPECT_EQ(back.sampling.top_p, 0.9);
  EXPECT_EQ(serialize_config(parse(serialize_config(RunConfig{}))), serialize_config(RunConfig{}));
}

TEST(RunConfig, DoublesSurviveExactly) {
  RunConfig c;
  c.transformer_lr = 0.1 + 0.2;
  EXPECT_EQ(parse(serialize_config(c)).transformer_lr, 0.1 + 0.2);
}

TEST(RunConfig, RejectsUnknownAndMalformedEntries) {
  EXPECT_THROW(parse("[tokenizer]\nbogus = 1\n"), ValidationError);
  EXPECT_THROW(parse("[nope]\n"), ValidationError);
  EXPECT_THROW(parse("seed = 1\n"), ValidationError);
  EXPECT_THROW(parse("[run]\nseed\n"), ValidationError);
  EXPECT_THROW(parse("[run]\nseed = -4\n"), ValidationError);
  EXPECT_THROW(parse("[run]\nseed = 4x\n"), ValidationError);
  EXPECT_THROW(parse("[tokenizer]\nindependent_scales = yes\n"), ValidationError);
  EXPECT_THROW(parse("[tokenizer\n"), ValidationError);
}

TEST(RunConfig, RejectsInconsistentValues) {
  EXPECT_THROW(parse("[transformer]\nheads = 3\n"), ValidationError);
  EXPECT_THROW(parse("[sampling]\ntop_p = 0\n"), ValidationError);
  EXPECT_THROW(parse("[data]\ndataset = qm9\n"), ValidationError);
  EXPECT_THROW(parse("[optim]\nbatch_size = 0\n"), ValidationError);
}

TEST(RunConfig, ErrorNamesLine) {
  try {
    parse("[run]\n\nseed = 1\nwhat = 2\n");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find(":4:"), std::string::npos) << e.what();
  }
}
