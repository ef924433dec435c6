#include <gtest/gtest.h>

#include "m3dm/config.hpp"
#include "m3dm/errors.hpp"
#include "test_util.hpp"

using namespace m3dm;

TEST(Config, DefaultsMatchLibraryDefaults) {
  const RunConfig cfg;
  const TrainConfig t = cfg.train();
  EXPECT_EQ(t.epochs, 50);
  EXPECT_EQ(t.batch_size, 64);
  EXPECT_DOUBLE_EQ(t.learning_rate, 1e-3);
  EXPECT_DOUBLE_EQ(t.weight_decay, 1e-6);
  EXPECT_EQ(t.hidden, 256);
  EXPECT_EQ(t.hidden_layers, 2);
  EXPECT_EQ(t.loss, LossKind::norm);
  const WorldConfig w = cfg.world(40);
  EXPECT_EQ(w.latent_dim, 32);
  EXPECT_EQ(w.attribute_names.size(), 8u);
  EXPECT_EQ(cfg.basis().n_vertices, 642);
  EXPECT_EQ(cfg.integer("eval.folds"), 5);
  EXPECT_DOUBLE_EQ(cfg.fit().lambda_reg, 1e-3);
}

TEST(Config, ParseCommentsAndOverrides) {
  const RunConfig cfg = RunConfig::parse(
      "# comment line\n"
      "\n"
      "train.epochs = 7   # trailing\n"
      "world.attributes = smile, age\n"
      "train.loss=squared\n");
  EXPECT_EQ(cfg.train().epochs, 7);
  EXPECT_EQ(cfg.train().loss, LossKind::squared);
  EXPECT_EQ(cfg.list("world.attributes"), (std::vector<std::string>{"smile", "age"}));
  EXPECT_EQ(cfg.world(40).attribute_names, (std::vector<std::string>{"smile", "age"}));
  EXPECT_TRUE(cfg.is_explicit("train.epochs"));
  EXPECT_FALSE(cfg.is_explicit("train.hidden"));
}

TEST(Config, RejectsUnknownDuplicateAndMalformed) {
  EXPECT_THROW(RunConfig::parse("train.epoch = 3\n"), ContractError);
  EXPECT_THROW(RunConfig::parse("train.epochs = 3\ntrain.epochs = 4\n"), ContractError);
  EXPECT_THROW(RunConfig::parse("train.epochs\n"), ContractError);
  RunConfig cfg;
  cfg.set("train.epochs", "three");
  EXPECT_THROW(cfg.integer("train.epochs"), ContractError);
  cfg.set("train.loss", "huber");
  EXPECT_THROW(cfg.train(), ContractError);
  try {
    RunConfig::parse("jobs = 1\nbogus = 2\n", "run.cfg");
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("run.cfg:2"), std::string::npos) << e.what();
  }
}

TEST(Config, ResolvedListsEveryKeyAndFingerprintTracksValues) {
  RunConfig a, b;
  const std::string r = a.resolved();
  for (const auto& k : RunConfig::keys()) EXPECT_NE(r.find(k + " = "), std::string::npos) << k;
  EXPECT_EQ(a.fingerprint(), b.fingerprint());
  b.set("train.seed", "99");
  EXPECT_NE(a.fingerprint(), b.fingerprint());
  EXPECT_THROW(a.get("nope"), ContractError);
}

TEST(Config, LoadMissingFile) {
  EXPECT_THROW(RunConfig::load(testutil::scratch_dir() / "none.cfg"), DataError);
}
