// SPDX-License-Identifier: Apache-2.0
//
// Config parsing/validation/hashing, plus black-box CLI runs through the
// installed binary: artifact layout, run.json provenance, and the exit-code
// contract (0 success, 1 validation, 2 runtime).
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "config.hpp"
#include "json.hpp"

using namespace saggan;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("saggan-cli-" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  REQUIRE(out.good());
  out << text;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(SAGGAN_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  REQUIRE(status != -1);
  return WEXITSTATUS(status);
}

}  // namespace

TEST_CASE("empty config document resolves to defaults with a stable hash") {
  RunConfig cfg = parse_config_json(nlohmann::json::object());
  CHECK(cfg.seed == 1234);
  CHECK(cfg.data.n_samples == 400);
  CHECK(cfg.data.image_size == 64);
  CHECK(cfg.gan.epochs == 30);
  CHECK(cfg.gan.batch_size == 4);
  CHECK(cfg.gan.learning_rate == 2e-4);
  CHECK(cfg.gan.lambda_cyc == 10.0);
  CHECK(cfg.classifier.epochs == 20);
  CHECK(cfg.experiment.tumor_keep_fraction == 0.25);
  CHECK(cfg.experiment.n_seeds == 3);
  CHECK(cfg.experiment.arms.size() == 5);

  const std::string h1 = config_hash(cfg);
  const std::string h2 = config_hash(parse_config_json(nlohmann::json::object()));
  CHECK(h1 == h2);
  CHECK(h1.size() == 16);  // hex64

  RunConfig other = cfg;
  other.gan.epochs = 31;
  CHECK(config_hash(other) != h1);
}

TEST_CASE("unknown keys are rejected with their full path") {
  nlohmann::json doc = {{"gan", {{"batchsize", 4}}}};
  CHECK_THROWS_WITH_AS(static_cast<void>(parse_config_json(doc)),
                       doctest::Contains("gan.batchsize"), ValidationError);
  nlohmann::json top = {{"gans", nlohmann::json::object()}};
  CHECK_THROWS_WITH_AS(static_cast<void>(parse_config_json(top)), doctest::Contains("gans"),
                       ValidationError);
}

TEST_CASE("constraint violations name the key path") {
  nlohmann::json doc = {{"gan", {{"batch_size", 0}}}};
  CHECK_THROWS_WITH_AS(static_cast<void>(parse_config_json(doc)),
                       doctest::Contains("gan.batch_size"), ValidationError);
  doc = {{"data", {{"tumor_fraction", 1.5}}}};
  CHECK_THROWS_WITH_AS(static_cast<void>(parse_config_json(doc)),
                       doctest::Contains("data.tumor_fraction"), ValidationError);
  doc = {{"gan", {{"image_size", 20}}}};
  CHECK_THROWS_AS(static_cast<void>(parse_config_json(doc)), ValidationError);
  doc = {{"experiment", {{"arms", {"no_da", "bogus"}}}}};
  CHECK_THROWS_WITH_AS(static_cast<void>(parse_config_json(doc)),
                       doctest::Contains("experiment.arms"), ValidationError);
  doc = {{"gan", {{"epochs", "thirty"}}}};
  CHECK_THROWS_WITH_AS(static_cast<void>(parse_config_json(doc)),
                       doctest::Contains("gan.epochs"), ValidationError);
}

TEST_CASE("hash is whitespace- and key-order-invariant across files") {
  auto dir = fresh_dir("hash");
  write_file(dir / "a.json", "{\"gan\":{\"epochs\":5,\"batch_size\":2}}");
  write_file(dir / "b.json",
             "{\n  \"gan\" : {\n    \"batch_size\" : 2,\n    \"epochs\" : 5\n  }\n}\n");
  RunConfig a = parse_config((dir / "a.json").string());
  RunConfig b = parse_config((dir / "b.json").string());
  CHECK(config_hash(a) == config_hash(b));
  CHECK(a.gan.epochs == 5);
  CHECK(b.gan.batch_size == 2);
}

TEST_CASE("config file errors are validation errors") {
  auto dir = fresh_dir("badfile");
  CHECK_THROWS_AS(static_cast<void>(parse_config((dir / "absent.json").string())),
                  ValidationError);
  write_file(dir / "broken.json", "{ not json");
  CHECK_THROWS_AS(static_cast<void>(parse_config((dir / "broken.json").string())),
                  ValidationError);
}

TEST_CASE("round trip through the resolved document is lossless") {
  nlohmann::json doc = {{"seed", 7},
                        {"gan", {{"epochs", 3}, {"lambda_cyc", 2.5}}},
                        {"experiment", {{"arms", {"no_da", "oversample"}}}}};
  RunConfig cfg = parse_config_json(doc);
  RunConfig again = parse_config_json(config_to_json(cfg));
  CHECK(config_hash(cfg) == config_hash(again));
  CHECK(again.seed == 7);
  CHECK(again.gan.lambda_cyc == 2.5);
  CHECK(again.experiment.arms == std::vector<std::string>{"no_da", "oversample"});
}

TEST_CASE("cli: gen-data writes the dataset layout and provenance") {
  auto dir = fresh_dir("gen");
  write_file(dir / "cfg.json",
             "{\"data\":{\"n_samples\":24,\"image_size\":32},\"seed\":5}");
  const int code = run_cli("gen-data --config " + (dir / "cfg.json").string() + " --out " +
                           (dir / "data").string());
  CHECK(code == 0);
  CHECK(fs::exists(dir / "data" / "manifest.csv"));
  CHECK(fs::exists(dir / "data" / "images"));
  CHECK(fs::exists(dir / "data" / "masks"));
  REQUIRE(fs::exists(dir / "data" / "run.json"));

  std::ifstream in(dir / "data" / "run.json");
  nlohmann::json run = nlohmann::json::parse(in);
  CHECK(run.at("subcommand") == "gen-data");
  CHECK(run.at("seed") == 5);
  CHECK(run.at("config_hash").get<std::string>().size() == 16);
  CHECK(run.contains("started_at"));
  CHECK(run.contains("artifact_paths"));
  CHECK(run.at("version").get<std::string>().find("saggan") == 0);

  int images = 0;
  for (const auto& entry : fs::directory_iterator(dir / "data" / "images"))
    images += entry.path().extension() == ".png";
  CHECK(images == 24);
}

TEST_CASE("cli: exit code 1 for validation problems") {
  auto dir = fresh_dir("exit1");
  write_file(dir / "bad.json", "{\"gan\":{\"batch_size\":0}}");
  CHECK(run_cli("gen-data --config " + (dir / "bad.json").string() + " --out " +
                (dir / "out").string()) == 1);
  CHECK(run_cli("no-such-command") == 1);
  CHECK(run_cli("gen-data --out " + (dir / "out2").string() + " --bogus-flag") == 1);
  CHECK(run_cli("") == 1);  // a subcommand is required
}

TEST_CASE("cli: exit code 2 for missing runtime inputs") {
  auto dir = fresh_dir("exit2");
  fs::create_directories(dir / "empty");
  CHECK(run_cli("train-gan --data " + (dir / "empty").string() + " --out " +
                (dir / "out").string()) == 2);
}

TEST_CASE("cli: seed override changes the provenance and the artifacts") {
  auto dir = fresh_dir("seed-override");
  write_file(dir / "cfg.json", "{\"data\":{\"n_samples\":24,\"image_size\":32}}");
  REQUIRE(run_cli("gen-data --config " + (dir / "cfg.json").string() + " --seed 9 --out " +
                  (dir / "d9").string()) == 0);
  REQUIRE(run_cli("gen-data --config " + (dir / "cfg.json").string() + " --seed 10 --out " +
                  (dir / "d10").string()) == 0);
  std::ifstream in9(dir / "d9" / "run.json"), in10(dir / "d10" / "run.json");
  nlohmann::json r9 = nlohmann::json::parse(in9), r10 = nlohmann::json::parse(in10);
  CHECK(r9.at("seed") == 9);
  CHECK(r10.at("seed") == 10);
  CHECK(r9.at("config_hash") != r10.at("config_hash"));  // seed is part of the config
}
