#include "commands.hpp"

#include "bforge/io.hpp"

#include <doctest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

using namespace bforge;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("bforge_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "backdoor-forge");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  return cli::run(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Tiny end-to-end configuration: a handful of images and single-epoch runs.
fs::path tiny_config(const fs::path& dir, double min_rma_asr = 0.0) {
  nlohmann::json j{{"schema_version", 1},
                   {"scene", {{"train_images", 24}, {"test_images", 8}, {"seed", 3}}},
                   {"poison", {{"ratio", 0.1}}},
                   {"train", {{"epochs", 10}, {"batch_size", 8}}},
                   {"defense", {{"epochs", 1}, {"steps", 1}, {"batch_size", 4}, {"clean_fraction", 0.2}}},
                   {"eval", {{"tau", 0.05}, {"min_rma_asr", min_rma_asr}, {"min_oda_asr", 0.0}, {"min_map_ratio", 0.0}}}};
  const auto p = dir / ("tiny_" + std::to_string(min_rma_asr) + ".json");
  io::write_text(p, j.dump());
  return p;
}

struct RunDirGuard {
  explicit RunDirGuard(const fs::path& p) { setenv("BF_RUN_DIR", p.c_str(), 1); }
  ~RunDirGuard() { unsetenv("BF_RUN_DIR"); }
};

}  // namespace

TEST_CASE("usage errors exit 2") {
  CHECK(invoke({}) == cli::kUsage);
  CHECK(invoke({"frobnicate"}) == cli::kUsage);
  CHECK(invoke({"gen-data"}) == cli::kUsage);
  CHECK(invoke({"train", "--config", "x.json", "--poison", "both"}) == cli::kUsage);
  CHECK(invoke({"mitigate", "--config", "x.json", "--method", "pgd"}) == cli::kUsage);
  CHECK(invoke({"gen-data", "--config", "/nonexistent/config.json"}) == cli::kUsage);

  const auto dir = scratch("usage");
  io::write_text(dir / "bad.json", R"({"schema_version": 1, "train": {"epochs": "many"}})");
  CHECK(invoke({"gen-data", "--config", (dir / "bad.json").string()}) == cli::kUsage);
  CHECK(invoke({"mitigate", "--config", (dir / "bad.json").string(), "--seeds", "a,b"}) == cli::kUsage);
  CHECK(invoke({"--help"}) == cli::kOk);
}

TEST_CASE("props exit codes") {
  CHECK(invoke({"props"}) == cli::kOk);
  CHECK(invoke({"props", "--inject-fault", "gate-sign"}) == cli::kPropertyViolation);
  std::ostringstream out;
  CHECK_FALSE(cli::props(out, true));
  bool saw_a5 = false;
  std::istringstream lines(out.str());
  for (std::string line; std::getline(lines, line);) {
    const auto j = nlohmann::json::parse(line);
    if (j["prop"] == "A5") {
      saw_a5 = true;
      CHECK(j["pass"] == false);
      CHECK(j["witness"].is_string());
    }
  }
  CHECK(saw_a5);
}

TEST_CASE("plot") {
  const auto dir = scratch("plot");
  CHECK(invoke({"plot", (dir / "none" / "*.json").string(), "--out", (dir / "fig").string()}) == cli::kUsage);
  CHECK(invoke({"plot"}) == cli::kUsage);

  for (const char* method : {"sbm", "ft"})
    for (int seed = 0; seed < 5; ++seed) {
      const nlohmann::json m{{"variant", std::string("rma_") + method}, {"asr", 0.1 * seed}, {"tdr", 0.5},
                             {"rmap", 0.9}};
      io::write_text(dir / "runs" / method / ("seed_" + std::to_string(seed)) / "metrics.json", m.dump());
    }
  CHECK(invoke({"plot", (dir / "runs" / "*" / "seed_*" / "metrics.json").string(), "--out", (dir / "fig").string()}) ==
        cli::kOk);
  for (const char* name : {"asr.svg", "tdr.svg", "rmap.svg"}) {
    const auto svg = slurp(dir / "fig" / name);
    CHECK(svg.rfind("<svg", 0) == 0);
    CHECK(svg.find("rma_sbm") != std::string::npos);
    CHECK(svg.find("rma_ft") != std::string::npos);
  }

  const auto single = cli::plot((dir / "runs" / "sbm" / "seed_3" / "metrics.json").string(), dir / "single");
  CHECK(single.size() == 3);
  CHECK(slurp(dir / "single" / "asr.svg").find("n=1") != std::string::npos);
}

TEST_CASE("end-to-end on a tiny configuration") {
  const auto dir = scratch("e2e");
  const auto cfg_path = tiny_config(dir);
  const auto cfg = load_config(cfg_path);
  RunDirGuard guard(dir / "runs");
  const auto run = cli::run_dir(cfg);
  CHECK(run == dir / "runs" / config_digest(cfg).substr(0, 16));

  CHECK(invoke({"train", "--config", cfg_path.string()}) == cli::kUsage);  // no dataset yet

  REQUIRE(invoke({"gen-data", "--config", cfg_path.string()}) == cli::kOk);
  CHECK(std::distance(fs::directory_iterator(run / "data" / "train" / "images"), fs::directory_iterator{}) == 24);
  const auto manifest = slurp(run / "data" / "train" / "manifest.json");
  {
    RunDirGuard other(dir / "again");
    REQUIRE(invoke({"gen-data", "--config", cfg_path.string()}) == cli::kOk);
    CHECK(slurp(dir / "again" / run.filename() / "data" / "train" / "manifest.json") == manifest);
  }
  setenv("BF_RUN_DIR", (dir / "runs").c_str(), 1);

  CHECK(invoke({"train", "--config", cfg_path.string(), "--poison", "rma"}) == cli::kUsage);  // no clean model
  REQUIRE(invoke({"train", "--config", cfg_path.string(), "--poison", "none"}) == cli::kOk);
  CHECK(fs::exists(run / "models" / "clean.ckpt"));
  CHECK(slurp(run / "models" / "train_clean.csv").rfind("epoch,loss\n", 0) == 0);
  REQUIRE(invoke({"train", "--config", cfg_path.string(), "--poison", "rma"}) == cli::kOk);
  CHECK(fs::exists(run / "models" / "rma.ckpt"));

  // mitigate --method ft: baseline path, adversarial columns stay empty.
  REQUIRE(invoke({"mitigate", "--config", cfg_path.string(), "--method", "ft", "--seeds", "0,1"}) == cli::kOk);
  const auto ft_csv = slurp(run / "mitigation" / "rma_ft" / "seed_1" / "epochs.csv");
  CHECK(ft_csv.rfind("epoch,L_OD_clean,L_OD_adv,L_DEF,gate_mean_g_rma\n", 0) == 0);
  CHECK(ft_csv.find(",0,0,\n") != std::string::npos);

  REQUIRE(invoke({"mitigate", "--config", cfg_path.string(), "--def-loss", "off", "--seeds", "0"}) == cli::kOk);
  std::istringstream rows(slurp(run / "mitigation" / "rma_sbm_fws_nodef" / "seed_0" / "epochs.csv"));
  std::string row;
  std::getline(rows, row);
  int data_rows = 0;
  while (std::getline(rows, row)) {
    ++data_rows;
    std::vector<std::string> cells;
    std::stringstream ss(row);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    REQUIRE(cells.size() >= 4);
    CHECK(cells[3] == "0");
  }
  CHECK(data_rows == 1);

  REQUIRE(invoke({"mitigate", "--config", cfg_path.string(), "--seeds", "2"}) == cli::kOk);
  const auto metrics_path = run / "mitigation" / "rma_sbm_fws_def" / "seed_2" / "metrics.json";
  const auto first = slurp(metrics_path);
  const auto m = nlohmann::json::parse(first);
  CHECK(m["method"] == "sbm");
  CHECK(m["def_loss"] == true);
  CHECK(m["subset_images"] == 5);
  for (const char* key : {"asr", "tdr", "rmap", "map50_clean"}) CHECK(m[key].is_number());
  REQUIRE(invoke({"mitigate", "--config", cfg_path.string(), "--seeds", "2"}) == cli::kOk);
  CHECK(slurp(metrics_path) == first);

  CHECK(invoke({"plot", "--config", cfg_path.string()}) == cli::kOk);
  CHECK(fs::exists(run / "figures" / "asr.svg"));

  // An unreachable implant gate exits 3 and leaves no checkpoint behind.
  const auto strict = tiny_config(dir, 1.0);
  const auto strict_run = cli::run_dir(load_config(strict));
  REQUIRE(invoke({"gen-data", "--config", strict.string()}) == cli::kOk);
  REQUIRE(invoke({"train", "--config", strict.string()}) == cli::kOk);
  CHECK(invoke({"train", "--config", strict.string(), "--poison", "rma"}) == cli::kImplantGate);
  CHECK_FALSE(fs::exists(strict_run / "models" / "rma.ckpt"));
  CHECK(fs::exists(strict_run / "models" / "rma_implant.json"));
}
