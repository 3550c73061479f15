#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

namespace fs = std::filesystem;

namespace {

const std::string kCli = MSP_CLI_PATH;

// Runs the CLI with the given arguments, captures combined stdout/stderr,
// returns the exit code.
int run(const std::string& args, std::string* output = nullptr) {
  const std::string cmd = kCli + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::string out;
  char buf[512];
  while (std::fgets(buf, sizeof buf, pipe) != nullptr) out += buf;
  const int status = pclose(pipe);
  if (output) *output = out;
  REQUIRE(WIFEXITED(status));
  return WEXITSTATUS(status);
}

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / "msp_cli_test" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

fs::path write_tiny_config(const fs::path& dir) {
  const fs::path p = dir / "tiny.cfg";
  std::ofstream os(p);
  os << "[model]\n"
        "backbone_widths = 4, 8, 12, 16, 20\n"
        "backbone_blocks = 1, 1, 1, 1, 1\n"
        "anchor_scales = 1, 2, 4\n"
        "anchor_ratios = 1\n"
        "classes = 2\n"
        "k = 3\n"
        "rpn_mid_channels = 8\n"
        "[train]\n"
        "iterations = 2\n"
        "seed = 7\n"
        "log_every = 1\n"
        "[synth]\n"
        "count = 3\n"
        "image_w = 64\n"
        "image_h = 64\n"
        "classes = 2\n"
        "seed = 5\n";
  return p;
}

}  // namespace

TEST_CASE("usage errors exit with code 1") {
  std::string out;
  CHECK(run("", &out) == 1);
  CHECK(run("--no-such-flag", &out) == 1);
  CHECK(run("synth --out /tmp/x --bogus 3", &out) == 1);
  CHECK(out.find("--help") != std::string::npos);
  CHECK(run("--help") == 0);
}

TEST_CASE("synth writes the promised files") {
  const fs::path dir = fresh_dir("synth");
  CHECK(run("synth --out " + (dir / "ds").string() + " --count 4 --seed 5") == 0);
  CHECK(fs::exists(dir / "ds" / "gt.csv"));
  CHECK(fs::exists(dir / "ds" / "manifest.txt"));
  int pgms = 0;
  for (const auto& e : fs::directory_iterator(dir / "ds" / "images"))
    if (e.path().extension() == ".pgm") ++pgms;
  CHECK(pgms == 4);
}

TEST_CASE("train + detect + eval round trip through the CLI") {
  const fs::path dir = fresh_dir("pipeline");
  const fs::path cfg = write_tiny_config(dir);
  const std::string ds = (dir / "ds").string();
  REQUIRE(run("synth --config " + cfg.string() + " --out " + ds) == 0);

  // Two identically-seeded runs produce byte-identical artifacts.
  REQUIRE(run("train --config " + cfg.string() + " --data " + ds + " --out " +
              (dir / "run_a").string()) == 0);
  REQUIRE(run("train --config " + cfg.string() + " --data " + ds + " --out " +
              (dir / "run_b").string()) == 0);
  CHECK(slurp(dir / "run_a" / "model.ckpt") == slurp(dir / "run_b" / "model.ckpt"));
  CHECK(slurp(dir / "run_a" / "loss_log.csv") == slurp(dir / "run_b" / "loss_log.csv"));

  const std::string ckpt = (dir / "run_a" / "model.ckpt").string();
  const std::string dets = (dir / "dets.csv").string();
  CHECK(run("detect --checkpoint " + ckpt + " --input " + ds + "/images --out " +
            dets + " --score-thresh 0.05") == 0);
  std::string first_line = slurp(dets).substr(0, 48);
  CHECK(first_line.rfind("image_id,class_id,score,", 0) == 0);

  std::string out;
  CHECK(run("eval --dets " + dets + " --gt " + ds + "/gt.csv --level all", &out) == 0);
  CHECK(out.find("task=detection level=all AP=") != std::string::npos);
}

TEST_CASE("detect on an empty directory writes a header-only csv") {
  const fs::path dir = fresh_dir("empty_detect");
  const fs::path cfg = write_tiny_config(dir);
  const std::string ds = (dir / "ds").string();
  REQUIRE(run("synth --config " + cfg.string() + " --out " + ds + " --count 2") == 0);
  REQUIRE(run("train --config " + cfg.string() + " --data " + ds + " --out " +
              (dir / "run").string()) == 0);
  fs::create_directories(dir / "no_images");
  const std::string out_csv = (dir / "empty.csv").string();
  CHECK(run("detect --checkpoint " + (dir / "run" / "model.ckpt").string() +
            " --input " + (dir / "no_images").string() + " --out " + out_csv) == 0);
  CHECK(slurp(out_csv) == "image_id,class_id,score,x_min,y_min,x_max,y_max\n");

  // Missing inputs are data errors.
  CHECK(run("detect --checkpoint " + (dir / "run" / "model.ckpt").string() +
            " --input " + (dir / "nope.pgm").string() + " --out " + out_csv) == 2);
  CHECK(run("detect --checkpoint " + (dir / "nope.ckpt").string() + " --input " +
            ds + "/images --out " + out_csv) == 2);
}

TEST_CASE("eval prints AP=0.5 for the FP-then-TP fixture") {
  const fs::path dir = fresh_dir("eval_fixture");
  {
    std::ofstream os(dir / "gt.csv");
    os << "image_id,class_id,x_min,y_min,x_max,y_max\n";
    os << "a,1,0,0,20,20\n";
  }
  {
    std::ofstream os(dir / "dets.csv");
    os << "image_id,class_id,score,x_min,y_min,x_max,y_max\n";
    os << "a,1,0.900000,50.000000,50.000000,70.000000,70.000000\n";
    os << "a,1,0.800000,0.000000,0.000000,20.000000,20.000000\n";
  }
  std::string out;
  CHECK(run("eval --dets " + (dir / "dets.csv").string() + " --gt " +
            (dir / "gt.csv").string() + " --level all --images 1 --out-prefix " +
            (dir / "m").string(), &out) == 0);
  CHECK(out.find("task=detection level=all AP=0.500000") != std::string::npos);
  CHECK(out.find("class=1 AP=0.500000") != std::string::npos);
  CHECK(fs::exists(dir / "m_metrics.csv"));
  CHECK(fs::exists(dir / "m_pr.csv"));

  CHECK(run("eval --dets " + (dir / "dets.csv").string() + " --gt " +
            (dir / "gt.csv").string() + " --level bogus-level") == 1);
  CHECK(run("eval --dets " + (dir / "missing.csv").string() + " --gt " +
            (dir / "gt.csv").string()) == 2);
}

TEST_CASE("unknown config keys are data errors") {
  const fs::path dir = fresh_dir("badcfg");
  const fs::path cfg = dir / "bad.cfg";
  {
    std::ofstream os(cfg);
    os << "[train]\niterations = 1\nmisspelled_key = 3\n";
  }
  std::string out;
  CHECK(run("train --config " + cfg.string() + " --data " + dir.string() +
            " --out " + (dir / "o").string(), &out) == 2);
  CHECK(out.find("misspelled_key") != std::string::npos);
}
