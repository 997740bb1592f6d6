// SPDX-License-Identifier: Apache-2.0
//
// End-to-end smoke of the command-line tool: the full miniature pipeline
// (synth -> tok -> lm train -> build-gen -> detect train/eval -> analyze)
// plus exit-code and determinism contracts.
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#ifndef TABLOID_BIN
#error "TABLOID_BIN must point at the CLI binary"
#endif

namespace {

namespace fs = std::filesystem;

const fs::path kWork = fs::temp_directory_path() / "tabloid-cli-test";

int run(const std::string& args) {
  std::string cmd = std::string(TABLOID_BIN) + " " + args + " >> " +
                    (kWork / "log.txt").string() + " 2>&1";
  int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

std::string path(const std::string& name) { return (kWork / name).string(); }

}  // namespace

TEST_CASE("cli pipeline smoke") {
  fs::remove_all(kWork);
  fs::create_directories(kWork);

  SUBCASE("usage errors exit with 2") {
    CHECK(run("--definitely-not-a-flag") == 2);
    CHECK(run("corpus synth --n 10") == 2);  // missing required --out
    CHECK(run("nosuchcommand") == 2);
  }

  SUBCASE("help exits 0") {
    CHECK(run("--help") == 0);
    CHECK(run("corpus --help") == 0);
  }

  SUBCASE("full pipeline") {
    // synth determinism: identical bytes for identical seeds
    REQUIRE(run("corpus synth --n 120 --seed 7 --out " + path("a.jsonl")) == 0);
    REQUIRE(run("corpus synth --n 120 --seed 7 --out " + path("b.jsonl")) == 0);
    CHECK(slurp(path("a.jsonl")) == slurp(path("b.jsonl")));
    REQUIRE(run("corpus synth --n 120 --seed 8 --out " + path("c.jsonl")) == 0);
    CHECK(slurp(path("a.jsonl")) != slurp(path("c.jsonl")));
    CHECK(fs::exists(path("a.jsonl.manifest.json")));

    REQUIRE(run("corpus split --in " + path("a.jsonl") + " --cutoff 2019-04-01 --train-out " +
                path("train.jsonl") + " --eval-out " + path("eval.jsonl")) == 0);
    CHECK(run("corpus stats --in " + path("train.jsonl")) == 0);

    REQUIRE(run("tok train --in " + path("train.jsonl") + " --vocab-size 350 --out " +
                path("vocab.json")) == 0);

    REQUIRE(run("lm train --corpus " + path("train.jsonl") + " --vocab " + path("vocab.json") +
                " --out " + path("ckpt") + " --steps 16 --batch 4 --seed 1") == 0);
    CHECK(fs::exists(path("ckpt/ckpt-14.tbl")));  // 7/8 checkpoint
    CHECK(fs::exists(path("ckpt/ckpt-16.tbl")));
    CHECK(fs::exists(path("ckpt/manifest.json")));

    REQUIRE(run("lm eval --ckpt " + path("ckpt/ckpt-16.tbl") + " --vocab " + path("vocab.json") +
                " --corpus " + path("eval.jsonl")) == 0);

    REQUIRE(run("generate --ckpt " + path("ckpt/ckpt-16.tbl") + " --vocab " + path("vocab.json") +
                " --fields domain=globe-ledger.com,date=2019-04-05,headline=storm\\ watch" +
                " --p 0.96 --max-new 24 --seed 3 --n 2 --out " + path("gen.jsonl")) == 0);

    REQUIRE(run("detect build-gen --ckpt " + path("ckpt/ckpt-16.tbl") + " --vocab " +
                path("vocab.json") + " --sources " + path("eval.jsonl") + " --n 12 --p 1.0" +
                " --max-new 40 --seed 5 --out " + path("mach.jsonl") + " --ids-out " +
                path("mach_ids.jsonl")) == 0);

    // assemble a balanced train file: 12 humans + 12 machine
    {
      std::ofstream out(path("dtrain.jsonl"), std::ios::binary);
      std::ifstream h(path("train.jsonl"));
      std::string line;
      for (int i = 0; i < 12 && std::getline(h, line); ++i) out << line << '\n';
      std::ifstream mfile(path("mach.jsonl"));
      while (std::getline(mfile, line)) out << line << '\n';
    }
    REQUIRE(run("detect train --init-ckpt " + path("ckpt/ckpt-14.tbl") + " --vocab " +
                path("vocab.json") + " --train " + path("dtrain.jsonl") +
                " --generator-preset toy-base --generator-step 16 --epochs 1 --batch 8" +
                " --out " + path("disc.tbl") + " --seed 6") == 0);

    REQUIRE(run("detect eval --ckpt " + path("disc.tbl") + " --vocab " + path("vocab.json") +
                " --test " + path("dtrain.jsonl") + " --mode both --pair-sources " +
                path("eval.jsonl") + " --report " + path("report.json")) == 0);
    CHECK(slurp(path("report.json")).find("unpaired_accuracy") != std::string::npos);

    REQUIRE(run("analyze ppl --ckpt " + path("ckpt/ckpt-16.tbl") + " --vocab " +
                path("vocab.json") + " --corpus " + path("eval.jsonl") + " --out " +
                path("ppl")) == 0);
    CHECK(slurp(path("ppl/ppl.csv")).find("mode,ppl,n_tokens") == 0);

    REQUIRE(run("analyze ppl-by-pos --ckpt " + path("ckpt/ckpt-16.tbl") + " --vocab " +
                path("vocab.json") + " --human " + path("eval.jsonl") + " --machine " +
                path("mach.jsonl") + " --machine-ids " + path("mach_ids.jsonl") +
                " --machine-label generated@p=1.00 --out " + path("pos")) == 0);
    CHECK(slurp(path("pos/ppl_by_pos.csv")).find("source,position,mean_nll,count") == 0);

    REQUIRE(run("analyze tail --ckpt " + path("ckpt/ckpt-16.tbl") + " --vocab " +
                path("vocab.json") + " --corpus " + path("mach.jsonl") + " --ids " +
                path("mach_ids.jsonl") + " --p 1.0 --out " + path("tail")) == 0);
    std::string tail_csv = slurp(path("tail/tail.csv"));
    CHECK(tail_csv.find("1.00,0.000000") != std::string::npos);

    // runtime failures exit with 1
    CHECK(run("lm eval --ckpt " + path("nonexistent.tbl") + " --vocab " + path("vocab.json") +
              " --corpus " + path("eval.jsonl")) == 1);
  }
}
