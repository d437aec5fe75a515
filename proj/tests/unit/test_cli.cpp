#include <algorithm>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

#include "doctest.h"
#include "support/temp_dir.hpp"
#include "transrank/cli/cli.hpp"
#include "transrank/eval/report.hpp"
#include "transrank/train/config.hpp"

using namespace transrank;
using transrank::testing::TempDir;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

Result invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "transrank");
  std::ostringstream out, err;
  Result r;
  r.code = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

// Relative path -> contents for every file under `dir`.
std::map<std::string, std::string> tree(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).generic_string()] = slurp(e.path());
  return files;
}

fs::path write_config(const fs::path& dir, const std::string& extra = "") {
  const fs::path path = dir / "run.cfg";
  std::ofstream(path) << "[data]\ntrain = 12\ntest = 8\nframes = 130\n"
                         "[pretrain]\nepochs = 2\nbatch_videos = 4\n"
                         "[transfer]\nepochs = 2\nlr_grid = 0.05\n"
                         "[eval]\nclips = 2\nprobe_epochs = 3\nspeediness_clips = 1\n"
                      << extra;
  return path;
}

}  // namespace

TEST_CASE("gen-data twice with the same seed gives byte-identical directories") {
  TempDir tmp("cli_gen");
  const auto cfg = write_config(tmp.path).string();
  const auto a = (tmp.path / "a").string(), b = (tmp.path / "b").string();
  REQUIRE(invoke({"gen-data", "--config", cfg, "--out", a, "--seed", "7"}).code == 0);
  REQUIRE(invoke({"gen-data", "--config", cfg, "--out", b, "--seed", "7"}).code == 0);
  const auto ta = tree(a), tb = tree(b);
  CHECK(ta.size() > 20);
  CHECK(ta == tb);
  CHECK(ta.count("config.resolved") == 1);
  CHECK(ta.count("train/manifest.tsv") == 1);

  const auto c = (tmp.path / "c").string();
  REQUIRE(invoke({"gen-data", "--config", cfg, "--out", c, "--seed", "8"}).code == 0);
  CHECK(tree(c).at("train/manifest.tsv") != ta.at("train/manifest.tsv"));
}

TEST_CASE("pretrain records the requested transform set and reruns bit-exactly from its manifest") {
  TempDir tmp("cli_pretrain");
  const auto cfg = write_config(tmp.path).string();
  const auto a = tmp.path / "a";
  const auto r = invoke({"pretrain", "--config", cfg, "--out", a.string(), "--seed", "5", "--transforms",
                         "1x,2x,rev", "--framework", "rank"});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("epoch 2/2") != std::string::npos);

  const Checkpoint ckpt = load_checkpoint(a / "checkpoint.trkc");
  CHECK(format_transform_list(train::checkpoint_transforms(ckpt)) == "1x,2x,rev");
  CHECK(train::checkpoint_framework(ckpt) == train::Framework::Rank);

  const auto resolved = train::load_config(a / "config.resolved");
  CHECK(resolved.seed == 5);
  CHECK(format_transform_list(resolved.pretrain.transforms) == "1x,2x,rev");

  // The manifest alone, no other flags.
  const auto b = tmp.path / "b";
  REQUIRE(invoke({"pretrain", "--config", (a / "config.resolved").string(), "--out", b.string()}).code == 0);
  CHECK(slurp(a / "checkpoint.trkc") == slurp(b / "checkpoint.trkc"));
  CHECK(slurp(a / "metrics.csv") == slurp(b / "metrics.csv"));
  CHECK(slurp(a / "config.resolved") == slurp(b / "config.resolved"));
  CHECK(slurp(a / "metrics.csv").rfind("epoch,loss,pretext_acc,lr,acc_1x,acc_2x,acc_rev\n", 0) == 0);
}

TEST_CASE("evaluation commands write their CSVs and repeat byte-identically") {
  TempDir tmp("cli_eval");
  const auto cfg = write_config(tmp.path).string();
  const auto p = tmp.path / "p";
  REQUIRE(invoke({"pretrain", "--config", cfg, "--out", p.string(), "--seed", "2", "--transforms", "1x,2x"}).code ==
          0);
  const auto ckpt = (p / "checkpoint.trkc").string();

  for (const auto& dir : {"e1", "e2"}) {
    const auto out = (tmp.path / dir).string();
    for (const std::string cmd : {"eval-retrieval", "eval-temporal", "linear-eval", "finetune"}) {
      const auto r = invoke({cmd, "--config", cfg, "--out", out, "--seed", "2", "--ckpt", ckpt});
      REQUIRE_MESSAGE(r.code == 0, cmd << ": " << r.err);
    }
    const auto r = invoke({"speediness", "--config", cfg, "--out", out, "--seed", "2", "--ckpt", ckpt, "--svg"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
  }
  const auto e1 = tree(tmp.path / "e1");
  CHECK(e1 == tree(tmp.path / "e2"));
  for (const auto* name : {"retrieval.csv", "temporal.csv", "metrics.csv", "speediness.csv", "speediness.svg"})
    CHECK_MESSAGE(e1.count(name) == 1, name);
  CHECK(e1.at("speediness.csv").rfind("rate,q05,q25,q50,q75,q95\n0.5x,", 0) == 0);
  CHECK(e1.at("retrieval.csv").rfind("metric,value\nR@1,", 0) == 0);
}

TEST_CASE("linear-eval without a checkpoint runs on a random encoder") {
  TempDir tmp("cli_random");
  const auto cfg = write_config(tmp.path).string();
  const auto r = invoke({"linear-eval", "--config", cfg, "--out", tmp.path.string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const auto rows = eval::read_metric_csv(tmp.path / "metrics.csv");
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].first == "accuracy@lr=0.05");
}

TEST_CASE("report collects CSVs without touching them") {
  TempDir tmp("cli_report");
  std::ofstream(tmp.path / "retrieval.csv") << "metric,value\nR@1,0.5\n";
  fs::create_directories(tmp.path / "run");
  std::ofstream(tmp.path / "run" / "metrics.csv") << "epoch,loss,pretext_acc\n0,1.5,0.25\n1,1.25,0.75\n";
  std::ofstream(tmp.path / "run" / "speediness.csv") << "rate,q05,q50\n1x,-1,0\n";
  const auto before = tree(tmp.path);

  const auto r = invoke({"report", "--out", tmp.path.string()});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  auto after = tree(tmp.path);
  const std::string report = after.at("report.csv");
  after.erase("report.csv");
  CHECK(after == before);
  CHECK(report ==
        "source,metric,value\n"
        "retrieval.csv,R@1,0.5\n"
        "run/metrics.csv,final.epoch,1\n"
        "run/metrics.csv,final.loss,1.25\n"
        "run/metrics.csv,final.pretext_acc,0.75\n"
        "run/speediness.csv,1x.q05,-1\n"
        "run/speediness.csv,1x.q50,0\n");

  // A second report ignores the first one and gives the same text.
  REQUIRE(invoke({"report", "--out", tmp.path.string()}).code == 0);
  CHECK(slurp(tmp.path / "report.csv") == report);
}

TEST_CASE("exit codes") {
  TempDir tmp("cli_exit");
  const auto cfg = write_config(tmp.path).string();
  const auto out = (tmp.path / "o").string();

  SUBCASE("unknown flag prints usage and exits 2") {
    const auto r = invoke({"pretrain", "--out", out, "--bogus"});
    CHECK(r.code == cli::kExitUsage);
    CHECK(r.err.find("--bogus") != std::string::npos);
    CHECK(r.err.find("Usage:") != std::string::npos);
  }
  SUBCASE("unknown subcommand exits 2") { CHECK(invoke({"frobnicate"}).code == cli::kExitUsage); }
  SUBCASE("help exits 0") {
    const auto r = invoke({"--help"});
    CHECK(r.code == 0);
    CHECK(r.out.find("eval-temporal") != std::string::npos);
  }
  SUBCASE("config errors exit 2 with the line") {
    std::ofstream(tmp.path / "bad.cfg") << "[pretrain]\nepochz = 3\n";
    const auto r = invoke({"pretrain", "--config", (tmp.path / "bad.cfg").string(), "--out", out});
    CHECK(r.code == cli::kExitUsage);
    CHECK(r.err == "error: " + (tmp.path / "bad.cfg").string() + ":2: unknown key 'pretrain.epochz'\n");
  }
  SUBCASE("bad flag values exit 2") {
    CHECK(invoke({"pretrain", "--config", cfg, "--out", out, "--transforms", "1x,3y"}).code == cli::kExitUsage);
    CHECK(invoke({"pretrain", "--config", cfg, "--out", out, "--transforms", "1x"}).code == cli::kExitUsage);
    CHECK(invoke({"pretrain", "--config", cfg, "--out", out, "--head", "conv"}).code == cli::kExitUsage);
  }
  SUBCASE("corrupt or missing checkpoints exit 3") {
    std::ofstream(tmp.path / "bad.trkc") << "TRKC garbage";
    const auto r = invoke({"eval-retrieval", "--config", cfg, "--out", out, "--ckpt", (tmp.path / "bad.trkc").string()});
    CHECK(r.code == cli::kExitFormat);
    CHECK(r.err.rfind("error: ", 0) == 0);
    CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
    CHECK(invoke({"speediness", "--config", cfg, "--out", out, "--ckpt", (tmp.path / "none.trkc").string()}).code ==
          cli::kExitFormat);
  }
  SUBCASE("a missing dataset exits 3") {
    CHECK(invoke({"pretrain", "--config", cfg, "--out", out, "--data", (tmp.path / "nowhere").string()}).code ==
          cli::kExitFormat);
  }
  SUBCASE("divergence exits 1 with one line") {
    std::ofstream(tmp.path / "div.cfg") << "[data]\ntrain = 8\ntest = 4\nframes = 90\n[pretrain]\nlr = 1e30\n";
    const auto r = invoke({"pretrain", "--config", (tmp.path / "div.cfg").string(), "--out", out});
    CHECK(r.code == cli::kExitRuntime);
    CHECK(r.err.find("diverged") != std::string::npos);
    CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
  }
}

TEST_CASE("the ablation preset covers both frameworks over the four transform sets") {
  CHECK(cli::ablation_transform_sets() == std::vector<std::string>{"1x,2x", "1x,2x,rev", "1x,2x,rev,4x", "1x,2x,rev,rev2x"});
  for (const auto& set : cli::ablation_transform_sets()) CHECK(format_transform_list(parse_transform_list(set)) == set);
}

TEST_CASE("speediness box plot has one box, one median and two whisker caps per rate") {
  const std::vector<eval::QuantileRow> rows{{"0.5x", -2, -1, -0.5, 0, 0.5}, {"1x", -1, -0.5, 0, 0.5, 1},
                                            {"2x", 0, 0.5, 1, 1.5, 2}};
  const std::string svg = cli::speediness_svg(rows);
  std::size_t rects = 0, lines = 0;
  for (std::size_t p = svg.find("<rect"); p != std::string::npos; p = svg.find("<rect", p + 1)) ++rects;
  for (std::size_t p = svg.find("<line"); p != std::string::npos; p = svg.find("<line", p + 1)) ++lines;
  CHECK(rects == 1 + rows.size());           // background plus boxes
  CHECK(lines == 1 + 2 + 4 * rows.size());   // axis, two reference lines, whisker, two caps, median
  CHECK(svg.find(">2x</text>") != std::string::npos);
  CHECK(svg == cli::speediness_svg(rows));
}
