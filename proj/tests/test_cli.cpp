// End-to-end tests of the command-line surface: spawns the real binaries,
// checks exit codes, wiring between stages, and byte-level determinism.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#ifndef PUDDING_BIN
#error "PUDDING_BIN must point at the pudding executable"
#endif
#ifndef MAKE_FIXTURE_BIN
#error "MAKE_FIXTURE_BIN must point at the make_fixture executable"
#endif

namespace {

namespace fs = std::filesystem;

int run(const std::string& command) {
  const int status = std::system((command + " >/dev/null 2>&1").c_str());
  REQUIRE(status != -1);
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

int count_lines(const std::string& text) {
  int n = 0;
  for (char c : text) n += (c == '\n');
  return n;
}

// One shared workspace: fixture generation is cheap but search/train are the
// expensive part, so the happy-path stages build on each other in order.
struct Workspace {
  fs::path dir;

  Workspace() {
    dir = fs::temp_directory_path() / "pudding_cli_ws";
    fs::remove_all(dir);
    fs::create_directories(dir);
    REQUIRE(run(std::string(MAKE_FIXTURE_BIN) + " --out " + (dir / "fixture").string() +
                " --seed 1234") == 0);
  }

  std::string fixture(const std::string& name) const { return (dir / "fixture" / name).string(); }

  std::string base_flags() const {
    return " --model " + fixture("model.pudw") + " --dataset task0=" + fixture("task0.jsonl") +
           " --dataset task1=" + fixture("task1.jsonl") +
           " --dataset task2=" + fixture("task2.jsonl") + " --tokenizer ids --criterion tl";
  }
};

const Workspace& workspace() {
  static Workspace ws;
  return ws;
}

const std::string kBin = PUDDING_BIN;

}  // namespace

TEST_CASE("help and argument validation exit codes") {
  CHECK(run(kBin + " --help") == 0);
  CHECK(run(kBin + " search --help") == 0);
  CHECK(run(kBin + " --no-such-flag") == 2);
  CHECK(run(kBin) == 2);  // a subcommand is required
}

TEST_CASE("search validates k against the model depth") {
  const auto& ws = workspace();
  const std::string out = (ws.dir / "k_check").string();
  CHECK(run(kBin + " search" + ws.base_flags() + " --k 99 --out " + out) == 2);
  CHECK(run(kBin + " search" + ws.base_flags() + " --k 0 --out " + out) == 2);
  CHECK_FALSE(fs::exists(fs::path(out) / "pool.json"));
}

TEST_CASE("missing and corrupt inputs map to config vs I/O exit codes") {
  const auto& ws = workspace();
  CHECK(run(kBin + " search --dataset t=" + ws.fixture("task0.jsonl") +
            " --model /nonexistent.pudw --k 2") == 2);
  CHECK(run(kBin + " search" + ws.base_flags() + " --criterion noise --k 2") == 2);

  const fs::path corrupt = ws.dir / "corrupt.json";
  std::ofstream(corrupt) << "{ not json";
  CHECK(run(kBin + " build-dataset" + ws.base_flags() + " --pool " + corrupt.string() +
            " --out " + (ws.dir / "bd").string()) == 4);
}

TEST_CASE("dry runs print the plan without touching outputs") {
  const auto& ws = workspace();
  const fs::path out = ws.dir / "dry";
  CHECK(run(kBin + " search" + ws.base_flags() + " --k 2 --dry-run --out " + out.string()) == 0);
  CHECK_FALSE(fs::exists(out / "pool.json"));
}

TEST_CASE("full pipeline: search, build, train, infer, bench") {
  const auto& ws = workspace();
  const std::string out = (ws.dir / "run").string();
  const std::string common = ws.base_flags() + " --out " + out + " --seed 7";

  // search, twice -> byte-identical pool
  REQUIRE(run(kBin + " search" + common + " --k 2") == 0);
  const std::string pool_bytes = slurp(fs::path(out) / "pool.json");
  REQUIRE(run(kBin + " search" + common + " --k 2") == 0);
  CHECK(slurp(fs::path(out) / "pool.json") == pool_bytes);

  const std::string pool_flag = " --pool " + out + "/pool.json";

  // build-dataset
  REQUIRE(run(kBin + " build-dataset" + common + pool_flag) == 0);
  const std::string samples = slurp(fs::path(out) / "router_dataset.jsonl");
  CHECK(count_lines(samples) == 48);  // 3 tasks x 16 calibration pairs

  // train (short: wiring, not quality; acceptance covers convergence)
  REQUIRE(run(kBin + " train" + common + pool_flag + " --data " + out +
              "/router_dataset.jsonl --epochs 3 --lr 1e-3 --batch-size 8 --embed-dim 16") == 0);
  CHECK(fs::exists(fs::path(out) / "router.pudr"));

  const std::string router_flag = " --router " + out + "/router.pudr";

  // infer, twice with timings omitted -> byte-identical reports
  REQUIRE(run(kBin + " infer" + common + pool_flag + router_flag + " --prompts " +
              ws.fixture("prompts.txt") + " --max-new 4 --omit-timings") == 0);
  const std::string reports = slurp(fs::path(out) / "reports.jsonl");
  CHECK(count_lines(reports) == 24);  // 3 tasks x 8 held-out prompts
  CHECK(reports.find("\"output_tokens\"") != std::string::npos);
  REQUIRE(run(kBin + " infer" + common + pool_flag + router_flag + " --prompts " +
              ws.fixture("prompts.txt") + " --max-new 4 --omit-timings") == 0);
  CHECK(slurp(fs::path(out) / "reports.jsonl") == reports);

  // empty prompt file -> success with zero report lines
  const fs::path empty = ws.dir / "empty.txt";
  std::ofstream(empty) << "";
  REQUIRE(run(kBin + " infer" + common + pool_flag + router_flag + " --prompts " +
              empty.string() + " --max-new 4") == 0);
  CHECK(slurp(fs::path(out) / "reports.jsonl").empty());

  // bench (default: comparison + heatmap)
  REQUIRE(run(kBin + " bench" + common + pool_flag + router_flag) == 0);
  CHECK(fs::exists(fs::path(out) / "comparison.csv"));
  CHECK(fs::exists(fs::path(out) / "heatmap.csv"));
  CHECK(fs::exists(fs::path(out) / "bench.json"));

  // train with epochs=0 still writes a checkpoint
  REQUIRE(run(kBin + " train" + common + pool_flag + " --data " + out +
              "/router_dataset.jsonl --epochs 0 --router " + out + "/router0.pudr") == 0);
  CHECK(fs::exists(fs::path(out) / "router0.pudr"));
}

TEST_CASE("config file supplies defaults; flags still win") {
  const auto& ws = workspace();
  const std::string fixture_dir = (ws.dir / "fixture").string();
  const std::string out = (ws.dir / "cfg_run").string();
  // config.toml names model/datasets with fixture-relative paths.
  CHECK(run("cd " + fixture_dir + " && " + kBin + " search -c config.toml --out " + out) == 0);
  CHECK(fs::exists(fs::path(out) / "pool.json"));
  // --k 99 overrides the config's k and must fail validation.
  CHECK(run("cd " + fixture_dir + " && " + kBin + " search -c config.toml --k 99 --out " + out +
            "_b") == 2);
}
