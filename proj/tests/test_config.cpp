// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <set>

#include "nebla/config.hpp"
#include "nebla/error.hpp"

using namespace nebla;

TEST(Config, PresetsValidate) {
  for (const char* p : {"desk", "micro", "full"}) {
    const auto c = preset_config(p);
    EXPECT_NO_THROW(c.validate()) << p;
    EXPECT_EQ(c.vit.image_h, c.trajectory.rows);
    EXPECT_EQ(c.vit.feature_dim, c.field.width);
  }
  const auto full = preset_config("full");
  EXPECT_EQ(full.vit.dim, 256u);
  EXPECT_EQ(full.vit.layers, 12u);
  EXPECT_EQ(full.vit.heads, 8u);
  EXPECT_EQ(full.vit.tokens(), 128u);
  EXPECT_EQ(full.unet.channels, (std::vector<std::size_t>{64, 128, 256, 512}));
  EXPECT_EQ(full.hash.log2_table, 19u);
  const auto desk = preset_config("desk");
  EXPECT_EQ(desk.trajectory.samples, 96u);
  EXPECT_DOUBLE_EQ(desk.loss.proj, 1 / 1.2);
  EXPECT_THROW(preset_config("huge"), ConfigError);
}

TEST(Config, EchoRoundTripsExactly) {
  for (const char* p : {"desk", "micro", "full"}) {
    auto c = preset_config(p);
    c.adam.lr = 0.1 + 0.2;  // a value with a long decimal expansion
    const auto text = echo_config(c);
    EXPECT_EQ(echo_config(parse_config(text)), text) << p;
  }
}

TEST(Config, KeysAreUniqueAndDocumented) {
  std::set<std::string> seen;
  for (const auto& k : config_keys()) {
    EXPECT_TRUE(seen.insert(k.key).second) << k.key;
    EXPECT_FALSE(k.doc.empty()) << k.key;
  }
  EXPECT_GT(seen.size(), 60u);
}

TEST(Config, PresetAppliesBeforeOverridesWherever) {
  const auto c = parse_config("# comment\nfield.depth = 6\npreset = micro\n\nunet.channels = 2\n");
  EXPECT_EQ(c.preset, "micro");
  EXPECT_EQ(c.field.depth, 6u);
  EXPECT_EQ(c.unet.channels, std::vector<std::size_t>{2});
  EXPECT_EQ(c.height, 8u);
}

TEST(Config, RejectsUnknownDuplicateAndMalformed) {
  EXPECT_THROW(parse_config("hash.level = 3\n"), ConfigError);
  EXPECT_THROW(parse_config("seed = 1\nseed = 2\n"), ConfigError);
  EXPECT_THROW(parse_config("seed 1\n"), ConfigError);
  EXPECT_THROW(parse_config("seed = -1\n"), ConfigError);
  EXPECT_THROW(parse_config("adam.lr = fast\n"), ConfigError);
  EXPECT_THROW(parse_config("vit.decoder_additive = maybe\n"), ConfigError);
  try {
    parse_config("seed = 1\nvit.heads = x\n");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
  }
}

TEST(Config, CrossSectionConstraints) {
  // Volume not divisible for the U-Net.
  EXPECT_THROW(parse_config("volume.height = 36\ntrajectory.z_max = 30\n"), ConfigError);
  // Horseshoe leaves the volume.
  EXPECT_THROW(parse_config("trajectory.a_o = 40\n"), ConfigError);
  // Image not divisible by the patch size.
  EXPECT_THROW(parse_config("vit.patch = 12\n"), ConfigError);
  RunConfig c = preset_config("desk");
  EXPECT_THROW(apply_overrides(c, {"preset=micro"}), ConfigError);
  apply_overrides(c, {"train.epochs=3", "field.width = 16"});
  EXPECT_EQ(c.train.epochs, 3u);
  EXPECT_EQ(c.vit.feature_dim, 16u);
}
