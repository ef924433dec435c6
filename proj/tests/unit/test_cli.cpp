#include <gtest/gtest.h>

#include <cstdlib>
#include <sstream>
#include <sys/wait.h>

#include "m3dm/dataio.hpp"
#include "test_util.hpp"

using namespace m3dm;

namespace {

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run cli(const fs::path& dir, const std::string& args) {
  const fs::path out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd =
      std::string("\"") + M3DM_CLI_PATH + "\" " + args + " > \"" + out.string() + "\" 2> \"" + err.string() + "\"";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = read_text(out);
  r.err = read_text(err);
  return r;
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string l;
  while (std::getline(in, l)) out.push_back(l);
  return out;
}

const char* kSmall = "--set world.n_attributes=2 --set train.epochs=2 --set train.hidden=16";

}  // namespace

TEST(Cli, EndToEndPipeline) {
  const auto dir = testutil::scratch_dir();
  const std::string d = dir.string();
  auto r = cli(dir, "world init " + std::string(kSmall) + " --out " + d + "/world");
  ASSERT_EQ(r.code, 0) << r.err;
  const WorldBundle w = load_world(dir / "world");
  ASSERT_EQ(w.world.attributes.size(), 2u);
  const std::string a0 = w.world.attributes[0].name, a1 = w.world.attributes[1].name;

  r = cli(dir, "hyperplane fit --world " + d + "/world --attr " + a0 + " --n 500 --out " + d + "/h.m3dm");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("angle to ground truth"), std::string::npos);

  r = cli(dir, "dataset generate " + std::string(kSmall) + " --world " + d + "/world --all-attrs --n 200 --out " + d +
                   "/ds");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(load_dataset(dir / "ds" / a0).data.samples.size(), 200u);
  EXPECT_EQ(load_dataset(dir / "ds" / a1).data.attribute, a1);

  r = cli(dir, "baseline fit --dataset " + d + "/ds/" + a0 + " --out " + d + "/dir.m3dm");
  ASSERT_EQ(r.code, 0) << r.err;
  r = cli(dir, "controller train " + std::string(kSmall) + " --dataset " + d + "/ds/" + a0 + " --out " + d +
                   "/ctrl.m3dm");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(controller_from(load_container(dir / "ctrl.m3dm")).layer_dims(), (std::vector<int>{41, 16, 16, 40}));

  write_vector(dir / "p.txt", VectorXd::Zero(40));
  r = cli(dir, "transform --weights " + d + "/ctrl.m3dm --in " + d + "/p.txt --score 1.5 --out " + d + "/q.txt");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_vector(dir / "q.txt").size(), 40);
  r = cli(dir, "transform --weights " + d + "/dir.m3dm --in " + d + "/p.txt --score 1 --source-score -1 --out " + d +
                   "/q2.txt");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_GT(read_vector(dir / "q2.txt").norm(), 0.0);

  r = cli(dir, "export sweep --world " + d + "/world --weights " + d + "/ctrl.m3dm --params " + d + "/p.txt --out " +
                   d + "/sweep");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(lines(r.out).size(), 9u);
  r = cli(dir, "export mesh --world " + d + "/world --params " + d + "/p.txt --out " + d + "/m.obj");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(dir / "m.obj"));

  const std::string l2 = "eval l2cv " + std::string(kSmall) + " --dataset " + d + "/ds/" + a0 + "," + d + "/ds/" + a1 +
                         " --folds 5 --seed 11 --out ";
  r = cli(dir, l2 + d + "/rep1");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto table = lines(r.out);
  ASSERT_EQ(table.size(), 5u);
  EXPECT_EQ(table[0].rfind("# config ", 0), 0u);
  EXPECT_EQ(table[1], "method\t" + a0 + "\t" + a1);
  EXPECT_EQ(table[2].rfind("Baseline\t", 0), 0u);
  EXPECT_EQ(table[3].rfind("Ours w.o.res\t", 0), 0u);
  EXPECT_EQ(table[4].rfind("Ours\t", 0), 0u);
  const json rep = json::parse(read_text(dir / "rep1.json"));
  EXPECT_EQ(rep["config_fingerprint"], table[0].substr(9));
  const auto& m0 = rep["attributes"][0]["methods"][0];
  EXPECT_EQ(m0["fold_l2"].size(), 5u);
  for (const auto& n : m0["train_sizes"]) EXPECT_EQ(n, 160);
  for (const auto& n : m0["test_sizes"]) EXPECT_EQ(n, 40);

  r = cli(dir, l2 + d + "/rep2");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(read_text(dir / "rep1.json"), read_text(dir / "rep2.json"));
  EXPECT_EQ(read_text(dir / "rep1.tsv"), read_text(dir / "rep2.tsv"));

  r = cli(dir, "dataset reference --world " + d + "/world --n 400 --out " + d + "/ref");
  ASSERT_EQ(r.code, 0) << r.err;
  r = cli(dir, "eval mahalanobis " + std::string(kSmall) + " --dataset " + d + "/ds/" + a0 + " --reference " + d +
                   "/ref --methods baseline,ours --out " + d + "/mh");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto mh = lines(r.out);
  ASSERT_EQ(mh.size(), 4u);
  EXPECT_EQ(mh[1], "method\t" + a0);
  const json mj = json::parse(read_text(dir / "mh.json"));
  const double fwd = mj["attributes"][0]["methods"][0]["forward"], bwd = mj["attributes"][0]["methods"][0]["backward"];
  EXPECT_NEAR(double(mj["attributes"][0]["methods"][0]["average"]), 0.5 * (fwd + bwd), 1e-12);
}

TEST(Cli, ErrorsAreOneLineWithNonzeroExit) {
  const auto dir = testutil::scratch_dir();
  const std::string d = dir.string();
  auto r = cli(dir, "controller train --dataset " + d + "/missing --out " + d + "/c.m3dm");
  EXPECT_EQ(r.code, 1);
  ASSERT_EQ(lines(r.err).size(), 1u) << r.err;
  EXPECT_EQ(r.err.rfind("error: data: ", 0), 0u) << r.err;

  r = cli(dir, "frobnicate");
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(lines(r.err).size(), 1u) << r.err;
  EXPECT_EQ(r.err.rfind("error: usage: ", 0), 0u) << r.err;

  r = cli(dir, "world init --set no.such.key=1 --out " + d + "/w");
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("error: contract: ", 0), 0u) << r.err;
  EXPECT_FALSE(fs::exists(dir / "w"));
}

TEST(Cli, IndivisibleFoldCountIsRejected) {
  const auto dir = testutil::scratch_dir();
  const std::string d = dir.string();
  ASSERT_EQ(cli(dir, "world init --set world.n_attributes=1 --out " + d + "/world").code, 0);
  ASSERT_EQ(cli(dir, "dataset generate --set world.n_attributes=1 --world " + d + "/world --all-attrs --n 203 --out " +
                         d + "/ds")
                .code,
            0);
  const auto name = load_world(dir / "world").world.attributes[0].name;
  const auto r = cli(dir, "eval l2cv --dataset " + d + "/ds/" + name + " --methods identity --folds 5");
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.err.rfind("error: contract: ", 0), 0u) << r.err;
}
