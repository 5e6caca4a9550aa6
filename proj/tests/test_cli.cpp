#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code = -1;
  std::string output;
};

CliRun cli(const std::string& args) {
  const std::string command = std::string("\"") + TROLLDET_CLI_PATH + "\" " + args + " 2>&1";
  CliRun run;
  FILE* pipe = popen(command.c_str(), "r");
  if (!pipe) return run;
  char buffer[4096];
  while (std::fgets(buffer, sizeof buffer, pipe)) run.output += buffer;
  const int status = pclose(pipe);
  run.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return run;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("trolldet_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write(const std::string& name, const std::string& text) {
    std::ofstream(dir_ / name) << text;
    return dir_ / name;
  }

  fs::path config(const std::string& extra = "") {
    return write("grid.toml",
                 "embeddings = glove-static\n"
                 "encoders = cnn, gru\n"
                 "synthetic = marker\n"
                 "synthetic_size = 120\n"
                 "max_len = 12\n"
                 "glove.dim = 8\n"
                 "glove.epochs = 10\n"
                 "glove.learning_rate = 0.01\n"
                 "cnn.channels = 4\n"
                 "gru.hidden = 6\n"
                 "train.max_epochs = 3\n"
                 "train.patience = 2\n" +
                     extra);
  }

  fs::path dir_;
};

}  // namespace

TEST_F(CliTest, MissingOrUnknownSubcommandIsAValidationError) {
  EXPECT_EQ(cli("").code, 1);
  EXPECT_EQ(cli("frobnicate").code, 1);
  EXPECT_EQ(cli("grad-check --no-such-flag").code, 1);
}

TEST_F(CliTest, GradCheckPasses) {
  const CliRun r = cli("grad-check --seed 7");
  EXPECT_EQ(r.code, 0) << r.output;
  EXPECT_NE(r.output.find("0 failed"), std::string::npos) << r.output;
}

TEST_F(CliTest, MatrixWritesTablesAndCheckpoints) {
  const CliRun r = cli("matrix --config " + config().string() + " --out " + (dir_ / "out").string());
  ASSERT_EQ(r.code, 0) << r.output;
  for (const char* name : {"table.md", "table.csv", "runs.jsonl", "results.json"}) {
    EXPECT_TRUE(fs::exists(dir_ / "out" / name)) << name;
  }
  EXPECT_TRUE(fs::exists(dir_ / "out" / "checkpoints" / "glove-static_cnn.tgck"));
  EXPECT_EQ(slurp(dir_ / "out" / "table.csv").rfind("embedding,encoder,accuracy,precision,recall,f1,auc,mark\n", 0), 0u);
}

TEST_F(CliTest, SeedFlagChangesNothingWhenItMatchesTheConfig) {
  const fs::path cfg = config("seed = 5\n");
  ASSERT_EQ(cli("matrix --config " + cfg.string() + " --out " + (dir_ / "a").string()).code, 0);
  ASSERT_EQ(cli("matrix --seed 5 --config " + cfg.string() + " --out " + (dir_ / "b").string()).code, 0);
  EXPECT_EQ(slurp(dir_ / "a" / "table.csv"), slurp(dir_ / "b" / "table.csv"));
}

TEST_F(CliTest, TrainThenEvaluate) {
  const fs::path cfg = config();
  const fs::path data = dir_ / "data.tsv";
  ASSERT_EQ(cli("synth --kind marker --size 60 --seed 3 --out " + data.string()).code, 0);
  const CliRun t = cli("train --config " + cfg.string() + " --encoder gru --out " + (dir_ / "model").string());
  ASSERT_EQ(t.code, 0) << t.output;
  const fs::path ck = dir_ / "model" / "model.tgck";
  ASSERT_TRUE(fs::exists(ck));

  const CliRun e = cli("evaluate --checkpoint " + ck.string() + " --data " + data.string());
  EXPECT_EQ(e.code, 0) << e.output;
  EXPECT_NE(e.output.find("\"auc\""), std::string::npos) << e.output;

  const CliRun mismatch = cli("evaluate --checkpoint " + ck.string() + " --data " + data.string() + " --config " +
                           cfg.string() + " --encoder cnn");
  EXPECT_EQ(mismatch.code, 1) << mismatch.output;
  EXPECT_NE(mismatch.output.find("encoder"), std::string::npos) << mismatch.output;

  const fs::path wider = write("wider.toml", "gru.hidden = 9\n");
  const CliRun dims = cli("evaluate --checkpoint " + ck.string() + " --data " + data.string() + " --config " +
                       wider.string() + " --embedding glove-static --encoder gru");
  EXPECT_EQ(dims.code, 1) << dims.output;
  EXPECT_NE(dims.output.find("gru hidden dimension mismatch"), std::string::npos) << dims.output;
}

TEST_F(CliTest, CorpusColumnFlags) {
  const fs::path data = write("swapped.csv", "label,text\nyes,hello world\nno,good day\nyes,bad day\n");
  const CliRun ok = cli("glove-train --data " + data.string() +
                     " --format csv --header --text-col 1 --label-col 0 --pos-label yes --neg-label no --dim 4"
                     " --epochs 3 --out " + (dir_ / "v.txt").string());
  EXPECT_EQ(ok.code, 0) << ok.output;
  EXPECT_TRUE(fs::exists(dir_ / "v.txt"));

  const CliRun bad = cli("glove-train --data " + data.string() + " --format csv --header --out " +
                      (dir_ / "w.txt").string());
  EXPECT_EQ(bad.code, 1) << bad.output;
  EXPECT_NE(bad.output.find("row"), std::string::npos) << bad.output;
}

TEST_F(CliTest, ContextualExportAndImport) {
  const fs::path data = dir_ / "data.tsv";
  ASSERT_EQ(cli("synth --kind polysemy --size 20 --out " + data.string()).code, 0);
  const fs::path ctx = dir_ / "ctx.bin";
  const CliRun b = cli("bilm-train --data " + data.string() + " --embed-dim 4 --hidden-dim 3 --epochs 1 --max-len 10 --out " +
                    ctx.string());
  ASSERT_EQ(b.code, 0) << b.output;
  const CliRun i = cli("ctx-import --input " + ctx.string() + " --data " + data.string());
  EXPECT_EQ(i.code, 0) << i.output;
  EXPECT_NE(i.output.find("documents 20"), std::string::npos) << i.output;

  const fs::path other = dir_ / "other.tsv";
  ASSERT_EQ(cli("synth --kind polysemy --size 22 --out " + other.string()).code, 0);
  EXPECT_EQ(cli("ctx-import --input " + ctx.string() + " --data " + other.string()).code, 1);

  const fs::path cfg = write("bilm.toml",
                             "embeddings = bilm-contextual\nencoders = cnn\ndata = data.tsv\nmax_len = 10\n"
                             "bilm.embed_dim = 4\nbilm.hidden_dim = 3\nbilm.epochs = 1\ncnn.channels = 3\n"
                             "train.max_epochs = 1\ntrain.patience = 1\n");
  const CliRun t = cli("train --config " + cfg.string() + " --out " + (dir_ / "m").string());
  ASSERT_EQ(t.code, 0) << t.output;
  const fs::path exported = dir_ / "exported.bin";
  const CliRun x = cli("ctx-export --checkpoint " + (dir_ / "m" / "model.tgck").string() + " --data " + data.string() +
                    " --out " + exported.string());
  EXPECT_EQ(x.code, 0) << x.output;
  const CliRun back = cli("ctx-import --input " + exported.string() + " --data " + data.string());
  EXPECT_EQ(back.code, 0) << back.output;
}

TEST_F(CliTest, CorruptCheckpointIsAValidationError) {
  const fs::path bogus = write("bogus.tgck", "not a checkpoint");
  const fs::path data = write("d.tsv", "hello\t1\n");
  const CliRun r = cli("evaluate --checkpoint " + bogus.string() + " --data " + data.string());
  EXPECT_EQ(r.code, 1) << r.output;
  EXPECT_NE(r.output.find("magic"), std::string::npos) << r.output;
}

TEST_F(CliTest, DivergenceIsARuntimeFailure) {
  const fs::path cfg = config("train.optimizer = sgd\ntrain.learning_rate = 1e300\n");
  const CliRun r = cli("train --config " + cfg.string() + " --encoder gru --out " + (dir_ / "m").string());
  EXPECT_EQ(r.code, 2) << r.output;
}
