// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>
#include <json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "labelcon/data.hpp"
#include "manifest.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace labelcon;

namespace {

struct Run {
  int code = 0;
  std::string out;
  std::string err;
};

Run invoke(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "labelcon_test_cli" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE_MESSAGE(in.good(), path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::size_t line_count(const std::string& text) { return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')); }

// Drops the trailing wall-clock column of an epoch log.
std::string without_seconds(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + '\n';
  return out;
}

// Column `col` of the eval CSV row whose first field is `lang`.
double metric(const std::string& csv, const std::string& lang, std::size_t col) {
  std::istringstream in(csv);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind(lang + ",", 0) != 0) continue;
    std::istringstream fields(line);
    std::string f;
    for (std::size_t k = 0; k <= col; ++k) std::getline(fields, f, ',');
    return std::stod(f);
  }
  FAIL("no row for " << lang);
  return 0.0;
}

std::string s(const fs::path& p) { return p.string(); }

std::vector<std::string> short_train(const fs::path& data, const fs::path& out) {
  return {"train", "--data", s(data), "--out", s(out), "--epochs-head", "3", "--epochs-contrastive", "2",
          "--epochs-zs-post", "2", "--head-hidden", "32"};
}

}  // namespace

TEST_CASE("synth writes a deterministic dataset and a manifest") {
  const auto dir = fresh_dir("synth");
  const auto a = dir / "a.jsonl", b = dir / "b.jsonl";
  REQUIRE(invoke({"synth", "--out", s(a)}).code == 0);
  REQUIRE(invoke({"synth", "--out", s(b)}).code == 0);
  const auto text = slurp(a);
  CHECK(line_count(text) == 281);
  CHECK(text == slurp(b));
  CHECK(load_dataset(a).size() == 280);

  const auto manifest = nlohmann::json::parse(slurp(cli::manifest_path(a)));
  CHECK(manifest["command"] == "synth");
  CHECK(manifest["outputs"][s(a)] == cli::sha256_file(a));
  CHECK(manifest["config"]["samples"] == "280");

  CHECK(invoke({"synth", "--out", s(dir / "c.jsonl"), "--seed", "1"}).code == 0);
  CHECK(slurp(dir / "c.jsonl") != text);

  CHECK(invoke({"synth", "--samples", "0", "--out", s(dir / "z.jsonl")}).code == cli::kUsage);
  CHECK(invoke({"synth"}).code == cli::kUsage);
}

TEST_CASE("train writes a checkpoint, a log and stage events") {
  const auto dir = fresh_dir("train");
  const auto data = dir / "d.jsonl";
  REQUIRE(invoke({"synth", "--out", s(data), "--samples", "120"}).code == 0);

  auto args = short_train(data, dir / "m.ckpt");
  const auto r = invoke(args);
  REQUIRE_MESSAGE(r.code == 0, r.err);
  CHECK(r.out.find("head_pretrain > contrastive_finetune > head_posttrain") != std::string::npos);
  const auto log = slurp(dir / "m.ckpt.log.csv");
  CHECK(line_count(log) == 1 + 3 + 2 + 2);
  CHECK(fs::exists(dir / "m.ckpt.manifest.json"));

  SUBCASE("alpha 0 leaves only the BCE term") {
    args = short_train(data, dir / "a0.ckpt");
    args.insert(args.end(), {"--alpha", "0"});
    REQUIRE(invoke(args).code == 0);
    std::istringstream in(slurp(dir / "a0.ckpt.log.csv"));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      std::istringstream fields(line);
      std::string stage, epoch, total, bce;
      std::getline(fields, stage, ',');
      std::getline(fields, epoch, ',');
      std::getline(fields, total, ',');
      std::getline(fields, bce, ',');
      CHECK(total == bce);
    }
  }
  SUBCASE("usage errors exit 2") {
    CHECK(invoke({"train", "--data", s(data), "--setting", "few-shot", "--out", s(dir / "x.ckpt")}).code == cli::kUsage);
    CHECK(invoke({"train", "--data", s(data), "--setting", "some-shot"}).code == cli::kUsage);
    CHECK(invoke({"train", "--data", s(data), "--kernel", "dot"}).code == cli::kUsage);
    CHECK(invoke({"train", "--data", s(dir / "missing.jsonl")}).code == cli::kUsage);
    CHECK(invoke({"train", "--data", s(data), "--batch-size", "1"}).code == cli::kUsage);
  }
  SUBCASE("a diverging run exits 3") {
    args = short_train(data, dir / "nan.ckpt");
    args.insert(args.end(), {"--lr-head", "1e300"});
    const auto bad = invoke(args);
    CHECK(bad.code == cli::kNumerical);
    CHECK(bad.err.find("head_pretrain") != std::string::npos);
  }
  SUBCASE("thread count does not change the result") {
    args = short_train(data, dir / "t4.ckpt");
    args.insert(args.begin(), {"--threads", "4"});
    REQUIRE(invoke(args).code == 0);
    CHECK(slurp(dir / "t4.ckpt") == slurp(dir / "m.ckpt"));
    CHECK(invoke({"--threads", "1", "gradcheck", "--seeds", "1"}).code == 0);
  }
}

TEST_CASE("eval reports per-language F1") {
  const auto dir = fresh_dir("eval");
  const auto data = dir / "d.jsonl";
  REQUIRE(invoke({"synth", "--out", s(data), "--languages", "en,de", "--correlation", "0.6"}).code == 0);
  REQUIRE(invoke({"train", "--data", s(data), "--out", s(dir / "m.ckpt"), "--initial-out", s(dir / "init.ckpt"),
               "--epochs-head", "40", "--epochs-contrastive", "5", "--epochs-zs-post", "20", "--lr-head", "0.005"})
              .code == 0);

  const auto trained = invoke({"eval", "--data", s(data), "--checkpoint", s(dir / "m.ckpt"), "--split", "train"});
  const auto untrained = invoke({"eval", "--data", s(data), "--checkpoint", s(dir / "init.ckpt"), "--split", "train"});
  REQUIRE(trained.code == 0);
  REQUIRE(untrained.code == 0);
  CHECK(trained.out.rfind("lang,n,micro_f1,macro_f1\nde,", 0) == 0);
  MESSAGE("train micro F1: trained " << metric(trained.out, "all", 2) << ", untrained " << metric(untrained.out, "all", 2));
  CHECK(metric(trained.out, "all", 2) > metric(untrained.out, "all", 2));

  // Threshold 0 predicts every class for every sample.
  const auto ds = load_dataset(data);
  const auto rows = ds.select(Split::dev);
  const auto gold = ds.labels(rows);
  const auto want = oracle::f1(Matrix(gold.rows(), gold.cols(), 1.0), gold, false);
  const auto all_on = invoke({"eval", "--data", s(data), "--checkpoint", s(dir / "m.ckpt"), "--threshold", "0",
                           "--out", s(dir / "metrics.csv")});
  REQUIRE(all_on.code == 0);
  CHECK(metric(all_on.out, "all", 1) == static_cast<double>(rows.size()));
  CHECK(metric(all_on.out, "all", 2) == doctest::Approx(want.micro).epsilon(1e-6));
  CHECK(metric(all_on.out, "all", 3) == doctest::Approx(want.macro).epsilon(1e-6));
  CHECK(slurp(dir / "metrics.csv") == all_on.out);

  CHECK(invoke({"eval", "--data", s(data), "--checkpoint", s(dir / "nope.ckpt")}).code == cli::kUsage);
  REQUIRE(invoke({"synth", "--out", s(dir / "narrow.jsonl"), "--dim", "8"}).code == 0);
  CHECK(invoke({"eval", "--data", s(dir / "narrow.jsonl"), "--checkpoint", s(dir / "m.ckpt")}).code == cli::kUsage);
  CHECK(invoke({"eval", "--data", s(data), "--checkpoint", s(dir / "m.ckpt"), "--languages", "fr"}).code == cli::kUsage);
}

TEST_CASE("analyze exports every dev pair") {
  const auto dir = fresh_dir("analyze");
  const auto data = dir / "d.jsonl";
  REQUIRE(invoke({"synth", "--out", s(data), "--samples", "100"}).code == 0);
  REQUIRE(invoke(short_train(data, dir / "m.ckpt")).code == 0);
  const auto r = invoke({"analyze", "--data", s(data), "--checkpoint", s(dir / "m.ckpt"), "--out", s(dir / "sim.csv")});
  REQUIRE_MESSAGE(r.code == 0, r.err);
  const std::size_t n = load_dataset(data).select(Split::dev).size();
  REQUIRE(n >= 2);
  CHECK(line_count(slurp(dir / "sim.csv")) == n * (n - 1) / 2 + 2);
  CHECK(r.out.find("pairs " + std::to_string(n * (n - 1) / 2)) == 0);
  CHECK(fs::exists(dir / "sim.csv.manifest.json"));

  REQUIRE(invoke({"synth", "--out", s(dir / "nodev.jsonl"), "--samples", "100", "--dev-fraction", "0"}).code == 0);
  CHECK(invoke({"analyze", "--data", s(dir / "nodev.jsonl"), "--checkpoint", s(dir / "m.ckpt"), "--out",
             s(dir / "x.csv")})
            .code == cli::kUsage);
}

TEST_CASE("toy is deterministic") {
  const auto dir = fresh_dir("toy");
  REQUIRE(invoke({"toy", "--steps", "50", "--out", s(dir / "a.csv")}).code == 0);
  REQUIRE(invoke({"toy", "--steps", "50", "--out", s(dir / "b.csv")}).code == 0);
  CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
  CHECK(line_count(slurp(dir / "a.csv")) == 13);
  CHECK(invoke({"toy", "--label-dim", "5", "--out", s(dir / "c.csv")}).code == cli::kUsage);
}

TEST_CASE("gradcheck passes and catches injected bugs") {
  for (const char* step : {"1e-5", "1e-6"}) {
    const auto r = invoke({"gradcheck", "--seeds", "10", "--step", step});
    CHECK_MESSAGE(r.code == 0, r.out);
    CHECK(r.out.substr(r.out.size() - 5) == "PASS\n");
  }
  for (const char* bug : {"contrastive_sign", "head_bias"}) {
    const auto r = invoke({"gradcheck", "--seeds", "2", "--inject-bug", bug});
    CHECK(r.code == cli::kFailure);
    CHECK(r.out.substr(r.out.size() - 5) == "FAIL\n");
  }
  CHECK(invoke({"gradcheck", "--inject-bug", "typo"}).code == cli::kUsage);
}

TEST_CASE("a manifest replays its run") {
  const auto dir = fresh_dir("replay");
  const auto data = dir / "d.jsonl";
  REQUIRE(invoke({"synth", "--out", s(data), "--samples", "90", "--seed", "4"}).code == 0);
  const auto data_bytes = slurp(data);
  REQUIRE(invoke({"synth", "--config", s(cli::manifest_path(data))}).code == 0);
  CHECK(slurp(data) == data_bytes);

  auto args = short_train(data, dir / "m.ckpt");
  args.insert(args.end(), {"--seed", "7", "--normalize-gamma"});
  REQUIRE(invoke(args).code == 0);
  const auto ckpt = slurp(dir / "m.ckpt");
  const auto log = without_seconds(slurp(dir / "m.ckpt.log.csv"));

  REQUIRE(invoke({"train", "--config", s(cli::manifest_path(dir / "m.ckpt")), "--out", s(dir / "r.ckpt")}).code == 0);
  CHECK(slurp(dir / "r.ckpt") == ckpt);
  CHECK(without_seconds(slurp(dir / "r.ckpt.log.csv")) == log);

  // Explicit flags override the file.
  REQUIRE(invoke({"train", "--config", s(cli::manifest_path(dir / "m.ckpt")), "--out", s(dir / "s.ckpt"), "--seed", "8"})
              .code == 0);
  CHECK(slurp(dir / "s.ckpt") != ckpt);

  // A plain JSON object works as well.
  std::ofstream(dir / "cfg.json") << R"({"samples": 30, "languages": ["en", "fr"], "out": ")" << s(dir / "c.jsonl")
                                  << "\"}";
  REQUIRE(invoke({"synth", "--config", s(dir / "cfg.json")}).code == 0);
  const auto small = load_dataset(dir / "c.jsonl");
  CHECK(small.size() == 30);

  CHECK(invoke({"synth", "--config", s(dir / "none.json")}).code == cli::kUsage);
  std::ofstream(dir / "broken.json") << "{";
  CHECK(invoke({"synth", "--config", s(dir / "broken.json")}).code == cli::kUsage);
}

TEST_CASE("installed binary exit codes") {
  const char* bin = std::getenv("LABELCON_BIN");
  if (bin == nullptr) {
    MESSAGE("LABELCON_BIN not set; skipping");
    return;
  }
  const auto dir = fresh_dir("binary");
  auto shell = [&](const std::string& args) {
    const std::string cmd = std::string(bin) + " " + args + " > " + s(dir / "out.txt") + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  };
  CHECK(shell("--help") == 0);
  CHECK(slurp(dir / "out.txt").find("synth") != std::string::npos);
  CHECK(shell("") == 2);
  CHECK(shell("bogus") == 2);
  CHECK(shell("synth --out " + s(dir / "d.jsonl") + " --samples 60") == 0);
  CHECK(line_count(slurp(dir / "d.jsonl")) == 61);
  CHECK(shell("train --data " + s(dir / "d.jsonl") + " --out " + s(dir / "m.ckpt") +
              " --epochs-head 2 --epochs-contrastive 1 --epochs-zs-post 1 --lr-head 1e300") == 3);
  CHECK(shell("gradcheck --seeds 1 --inject-bug head_bias") == 1);
}
