#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <filesystem>
#include <sstream>

#include "json.hpp"
#include "slmfuse/binio.hpp"
#include "slmfuse/cli.hpp"

using namespace slmfuse;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("slmfuse_test_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string tree_bytes(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  std::string blob;
  for (const auto& f : files) blob += fs::relative(f, dir).string() + "\n" + read_file(f);
  return blob;
}

}  // namespace

TEST_CASE("gen is byte-identical across runs and output directories") {
  const fs::path d = scratch("gen");
  REQUIRE(run({"gen", "--out", (d / "a").string(), "--profile", "table1", "--scale", "0.01", "--seed", "1"}).code == 0);
  REQUIRE(run({"gen", "--out", (d / "b").string(), "--profile", "table1", "--scale", "0.01", "--seed", "1"}).code == 0);
  CHECK(tree_bytes(d / "a") == tree_bytes(d / "b"));
  REQUIRE(run({"gen", "--out", (d / "c").string(), "--profile", "table1", "--scale", "0.01", "--seed", "2"}).code == 0);
  CHECK(tree_bytes(d / "a") != tree_bytes(d / "c"));
  fs::remove_all(d);
}

TEST_CASE("gradcheck exit codes") {
  CHECK(run({"gradcheck", "--seed", "7", "--tol", "1e-4"}).code == 0);
  const Result bad = run({"gradcheck", "--seed", "7", "--tol", "1e-14"});
  CHECK(bad.code == 2);
  CHECK(bad.err.find("gradient check failed") != std::string::npos);
  CHECK(run({"gradcheck", "--tol", "-1"}).code == 1);
}

TEST_CASE("validation errors exit 1 and name the culprit") {
  const fs::path d = scratch("errors");
  const std::string data = (d / "data").string();
  REQUIRE(run({"gen", "--out", data, "--records", "120"}).code == 0);
  fs::remove(d / "data" / "src_lab.bin");
  Result r = run({"train", "--data", data, "--out", (d / "ck").string(), "--epochs", "1"});
  CHECK(r.code == 1);
  CHECK(r.err.find("src_lab.bin") != std::string::npos);

  write_file(d / "cfg.json", "{\"epochs\": 1, \"learning_rate\": 0.1}");
  r = run({"train", "--data", data, "--out", (d / "ck").string(), "--config", (d / "cfg.json").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("learning_rate") != std::string::npos);

  write_file(d / "cfg.json", "{\"epochs\": \"many\"}");
  r = run({"train", "--data", data, "--out", (d / "ck").string(), "--config", (d / "cfg.json").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("epochs") != std::string::npos);

  CHECK(run({"train", "--data", data, "--out", (d / "ck").string(), "--mode", "sideways"}).code == 1);
  CHECK(run({"train", "--out", (d / "ck").string()}).code == 1);
  CHECK(run({"frobnicate"}).code == 1);
  CHECK(run({}).code == 1);
  CHECK(run({"--help"}).code == 0);
  fs::remove_all(d);
}

TEST_CASE("config files, flags and run.lock") {
  const fs::path d = scratch("config");
  const std::string data = (d / "data").string();
  REQUIRE(run({"gen", "--out", data, "--records", "150", "--seed", "3"}).code == 0);
  CHECK(fs::is_regular_file(d / "data" / "run.lock"));

  write_file(d / "cfg.json", "{\"epochs\": 3, \"batch\": 16, \"lr\": 0.002}");
  REQUIRE(run({"train", "--data", data, "--out", (d / "ck").string(), "--config", (d / "cfg.json").string(), "--epochs",
               "1"})
              .code == 0);
  const auto lock = nlohmann::json::parse(read_file(d / "ck" / "run.lock"));
  CHECK(lock["command"] == "train");
  CHECK(lock["config"]["epochs"] == 1);
  CHECK(lock["config"]["batch"] == 16);
  CHECK(lock["config"]["lr"] == 0.002);
  CHECK(lock["config"]["beta"] == 10.0);
  CHECK(lock["config"]["data"] == data);

  // The lock alone reproduces the checkpoint.
  REQUIRE(run({"train", "--config", (d / "ck" / "run.lock").string(), "--out", (d / "ck2").string()}).code == 0);
  CHECK(read_file(d / "ck" / "proj_xr_enc_w.mmf") == read_file(d / "ck2" / "proj_xr_enc_w.mmf"));
  CHECK(read_file(d / "ck" / "manifest") == read_file(d / "ck2" / "manifest"));
  // A train lock is not a gen config.
  CHECK(run({"gen", "--out", (d / "x").string(), "--config", (d / "ck" / "run.lock").string()}).code == 1);

  const std::string metrics = (d / "m" / "joint.csv").string();
  REQUIRE(run({"eval", "--data", data, "--ckpt", (d / "ck").string(), "--out", metrics}).code == 0);
  CHECK(fs::is_regular_file(metrics + ".run.lock"));
  CHECK(read_file(metrics).rfind("task,run,precision,recall,tp,fp,fn,tn,n_labeled,degenerate\n", 0) == 0);
  CHECK(run({"eval", "--data", data, "--ckpt", (d / "ck").string(), "--out", metrics, "--mode", "iso-joint"}).code == 1);
  CHECK(run({"eval", "--data", data, "--ckpt", (d / "ck").string(), "--out", metrics, "--mode", "bss"}).code == 1);
  REQUIRE(run({"eval", "--data", data, "--ckpt", (d / "ck").string(), "--out", (d / "m" / "xr.csv").string(), "--mode",
               "single:xr"})
              .code == 0);

  REQUIRE(run({"report", "--out", (d / "table.csv").string(), metrics, (d / "m" / "xr.csv").string()}).code == 0);
  CHECK(fs::is_regular_file(d / "table.txt"));
  CHECK(read_file(d / "table.csv").rfind("task,joint precision,joint recall,single:xr precision,single:xr recall\n", 0) == 0);
  CHECK(run({"report", "--out", (d / "t2").string(), metrics, metrics}).code == 1);
  fs::remove_all(d);
}
