#include <doctest.h>

#include <sys/wait.h>

#include <sstream>

#include "sdn/weight_io.hpp"
#include "support.hpp"

using sdn::test::read_file;
using sdn::test::TempDir;
using sdn::test::write_file;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(const TempDir& dir, const std::string& args) {
  const auto out = dir / "stdout.txt", err = dir / "stderr.txt";
  const std::string cmd = std::string("\"") + SDN_CLI_PATH + "\" " + args + " >\"" + out.string() + "\" 2>\"" +
                          err.string() + "\"";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, read_file(out), read_file(err)};
}

int count_lines(const std::string& text) {
  return static_cast<int>(std::count(text.begin(), text.end(), '\n'));
}

std::string config(const TempDir& dir, const std::string& lr, const std::string& loss = "norm") {
  write_file(dir / "c.ini", "[network]\ninput_side = 16\nn_landmarks = 2\ngroups = 3:2:2,3:3:3,3:4:4\nfc_hidden = 8\n"
                            "[pipeline]\nout_dir = run\n"
                            "[s1]\ndata_manifest = data.manifest\nbatch_size = 2\nbase_lr = " +
                                lr + "\nloss = " + loss + "\n");
  return (dir / "c.ini").string();
}

}  // namespace

TEST_CASE("usage errors exit with 2") {
  TempDir dir("cli");
  CHECK(run(dir, "").code == 2);
  CHECK(run(dir, "frobnicate").code == 2);
  CHECK(run(dir, "eval --weights nowhere.sdnw --manifest x --out y").code == 2);

  const Run help = run(dir, "--help");
  CHECK(help.code == 0);
  CHECK(help.out.find("augment") != std::string::npos);
  CHECK(help.out.find("#n_landmarks") != std::string::npos);
  CHECK(help.out.find("[pipeline]") != std::string::npos);
}

TEST_CASE("augment writes a manifest and provenance") {
  TempDir dir("cli");
  const auto manifest = sdn::test::write_synthetic_dataset(dir.path(), 1, 2, 2, 24, 0.0);
  const Run r = run(dir, "augment --manifest " + manifest.string() + " --stage s1 --out " + (dir / "s1.manifest").string());
  CHECK(r.code == 0);
  const auto m = sdn::read_manifest(dir / "s1.manifest");
  CHECK(m.entries.size() == 2 * 68);
  CHECK(count_lines(read_file(dir / "s1.manifest.prov")) == 1 + 2 * 68);

  const Run s3 = run(dir, "augment --manifest " + manifest.string() + " --stage s3 --out " + (dir / "s3").string());
  CHECK(s3.code == 2);
  CHECK(s3.err.find("--model") != std::string::npos);
}

TEST_CASE("train, eval, detect and curve") {
  TempDir dir("cli");
  sdn::test::write_synthetic_dataset(dir.path(), 2, 4, 2, 16);
  const std::string cfg = config(dir, "0.01");

  const Run train = run(dir, "--quiet train --config " + cfg + " --stage s1 --iterations 3");
  REQUIRE(train.code == 0);
  const auto weights = dir / "run" / "s1_final.sdnw";
  CHECK(train.out == weights.string() + "\n");
  CHECK(sdn::load_checkpoint(weights).iteration == 3);
  CHECK(count_lines(read_file(dir / "run" / "s1_log.csv")) == 4);

  const Run resume = run(dir, "--quiet train --config " + cfg + " --stage s1 --iterations 5 --resume " +
                                  weights.string() + " --out " + (dir / "more").string());
  CHECK(resume.code == 0);
  CHECK(sdn::load_checkpoint(dir / "more" / "s1_final.sdnw").iteration == 5);

  const Run eval = run(dir, "eval --weights " + weights.string() + " --manifest " + (dir / "data.manifest").string() +
                                " --out " + (dir / "report").string() + " --timing-runs 1");
  CHECK(eval.code == 0);
  CHECK(eval.out.find("mean NRMSE") != std::string::npos);
  CHECK(eval.out.find("failure rate") != std::string::npos);
  CHECK(count_lines(read_file(dir / "report" / "errors.csv")) == 5);

  const Run detect =
      run(dir, "detect --weights " + weights.string() + " --image " + (dir / "f0.pgm").string() + " --bbox 0,0,16,16");
  CHECK(detect.code == 0);
  CHECK(count_lines(detect.out) == 2);
  std::istringstream lines(detect.out);
  double x = 0, y = 0;
  CHECK(static_cast<bool>(lines >> x >> y));

  CHECK(run(dir, "detect --weights " + weights.string() + " --image " + (dir / "f0.pgm").string() + " --bbox 0,0,16")
            .code == 2);
  CHECK(run(dir, "detect --weights " + weights.string() + " --image " + (dir / "f0.pgm").string() + " --bbox 0,0,-1,4")
            .code == 2);

  const Run curve = run(dir, "curve --errors " + (dir / "report" / "errors.csv").string() + " --out " +
                                 (dir / "ced.csv").string() + " --grid-max 0.1 --grid-step 0.01");
  CHECK(curve.code == 0);
  CHECK(count_lines(read_file(dir / "ced.csv")) == 12);
}

TEST_CASE("mismatched weights exit with 2") {
  TempDir dir("cli");
  const auto manifest = sdn::test::write_synthetic_dataset(dir.path(), 2, 2, 2, 16);
  sdn::save_weights(sdn::build_network(sdn::test::tiny_spec(16, 3)), dir / "w3.sdnw");
  const Run r = run(dir, "eval --weights " + (dir / "w3.sdnw").string() + " --manifest " + manifest.string() +
                             " --out " + (dir / "r").string());
  CHECK(r.code == 2);
  CHECK(r.err.find("error:") != std::string::npos);
}

TEST_CASE("diverging training exits with 3") {
  TempDir dir("cli");
  sdn::test::write_synthetic_dataset(dir.path(), 2, 4, 2, 16);
  const Run r = run(dir, "train --config " + config(dir, "1e10", "squared_norm") + " --stage s1 --iterations 50");
  CHECK(r.code == 3);
  CHECK(r.err.find("non-finite") != std::string::npos);
  CHECK(r.err.find("at iter ") != std::string::npos);
}
